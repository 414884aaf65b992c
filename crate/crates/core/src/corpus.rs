//! Tokenization, vocabulary construction, id encoding and window enumeration.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid window: width {width}, stride {stride}")]
    InvalidWindow { width: usize, stride: usize },
    #[error("min_count must be at least 1")]
    InvalidMinCount,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

/// Splits on runs of whitespace, optionally lowercasing.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// Reads a corpus file, one document per line.
pub fn read_documents(path: &Path, lowercase: bool) -> Result<Vec<Vec<String>>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .map(|line| line.map(|l| tokenize(&l, lowercase)).map_err(io_err(path)))
        .collect()
}

/// Token frequencies of a document shard. Shard maps merge with [`merge_counts`].
pub fn count_tokens<'a, I, D>(docs: I) -> HashMap<String, u64>
where
    I: IntoIterator<Item = D>,
    D: IntoIterator<Item = &'a String>,
{
    let mut counts = HashMap::new();
    for doc in docs {
        for tok in doc {
            *counts.entry(tok.clone()).or_insert(0) += 1;
        }
    }
    counts
}

pub fn merge_counts(into: &mut HashMap<String, u64>, other: HashMap<String, u64>) {
    for (word, c) in other {
        *into.entry(word).or_insert(0) += c;
    }
}

/// Word/id table ordered by descending frequency, ties by word.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, u32>,
    counts: Vec<u64>,
    min_count: u64,
}

impl Vocabulary {
    pub fn from_counts(counts: HashMap<String, u64>, min_count: u64) -> Result<Self, CorpusError> {
        if min_count < 1 {
            return Err(CorpusError::InvalidMinCount);
        }
        let mut kept: Vec<(String, u64)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (words, counts): (Vec<_>, Vec<_>) = kept.into_iter().unzip();
        Ok(Self::from_parts(words, counts, min_count))
    }

    fn from_parts(words: Vec<String>, counts: Vec<u64>, min_count: u64) -> Self {
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Vocabulary { words, ids, counts, min_count }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Hex SHA-256 over the ordered word list.
    pub fn digest(&self) -> String {
        words_digest(&self.words)
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        for (i, (w, c)) in self.words.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{w}\t{i}\t{c}").map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))
    }

    /// Loads a `word<TAB>id<TAB>count` file. The min_count of a loaded table is
    /// its smallest count (1 when empty).
    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut words = Vec::new();
        let mut counts = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(CorpusError::Parse {
                    line: lineno,
                    msg: format!("expected 3 fields, found {}", fields.len()),
                });
            }
            let id: usize = fields[1].parse().map_err(|_| CorpusError::Parse {
                line: lineno,
                msg: format!("bad id {:?}", fields[1]),
            })?;
            if id != words.len() {
                return Err(CorpusError::Parse {
                    line: lineno,
                    msg: format!("id {id} out of order, expected {}", words.len()),
                });
            }
            let count: u64 = fields[2].parse().map_err(|_| CorpusError::Parse {
                line: lineno,
                msg: format!("bad count {:?}", fields[2]),
            })?;
            words.push(fields[0].to_string());
            counts.push(count);
        }
        let min_count = counts.iter().copied().min().unwrap_or(1).max(1);
        let vocab = Self::from_parts(words, counts, min_count);
        if vocab.ids.len() != vocab.words.len() {
            return Err(CorpusError::Parse { line: 0, msg: "duplicate word".into() });
        }
        Ok(vocab)
    }
}

/// Hex SHA-256 over an ordered word list.
pub fn words_digest(words: &[String]) -> String {
    let mut h = Sha256::new();
    for w in words {
        h.update(w.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn build_vocabulary(docs: &[Vec<String>], min_count: u64) -> Result<Vocabulary, CorpusError> {
    Vocabulary::from_counts(count_tokens(docs), min_count)
}

/// Documents as in-vocabulary id sequences.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodedCorpus {
    pub documents: Vec<Vec<u32>>,
    pub token_count: usize,
    pub vocab_size: usize,
}

impl EncodedCorpus {
    pub fn new(documents: Vec<Vec<u32>>, vocab_size: usize) -> Self {
        debug_assert!(documents.iter().flatten().all(|&id| (id as usize) < vocab_size));
        let token_count = documents.iter().map(Vec::len).sum();
        EncodedCorpus { documents, token_count, vocab_size }
    }

    pub fn decode(&self, vocab: &Vocabulary) -> Vec<Vec<String>> {
        self.documents
            .iter()
            .map(|d| d.iter().map(|&id| vocab.word(id).to_string()).collect())
            .collect()
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for doc in &self.documents {
            for id in doc {
                h.update(id.to_le_bytes());
            }
            h.update(u32::MAX.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub fn encode(docs: &[Vec<String>], vocab: &Vocabulary) -> EncodedCorpus {
    let documents = docs
        .iter()
        .map(|d| d.iter().filter_map(|t| vocab.id(t)).collect())
        .collect();
    EncodedCorpus::new(documents, vocab.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub width: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { width: 10, stride: 1 }
    }
}

impl WindowSpec {
    pub fn new(width: usize, stride: usize) -> Result<Self, CorpusError> {
        if width < 2 || stride < 1 {
            return Err(CorpusError::InvalidWindow { width, stride });
        }
        Ok(WindowSpec { width, stride })
    }
}

/// Contiguous spans of `spec.width` tokens. A non-empty document shorter than
/// the width yields itself as a single span.
pub fn windows(doc: &[u32], spec: WindowSpec) -> impl Iterator<Item = &[u32]> + '_ {
    let n = doc.len();
    let (count, short) = if n == 0 {
        (0, false)
    } else if n < spec.width {
        (1, true)
    } else {
        ((n - spec.width) / spec.stride + 1, false)
    };
    (0..count).map(move |i| {
        if short {
            doc
        } else {
            let start = i * spec.stride;
            &doc[start..start + spec.width]
        }
    })
}
