//! Synthetic corpora from a slowly drifting discourse random walk.
//!
//! Word `i` is emitted with probability proportional to `exp(w_i . c)` where
//! `c` is a unit discourse vector. Between emissions `c` moves by at most
//! `eps2 / sqrt(d)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::trainer::{write_model, EmbeddingModel, TrainError};

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("invalid walk configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub eps2: f64,
    pub kappa: f64,
    pub tokens: usize,
    pub doc_len: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig { vocab_size: 1000, dim: 50, eps2: 0.5, kappa: 1.0, tokens: 2_000_000, doc_len: 1000, seed: 1 }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<(), WalkError> {
        let bad = |m: &str| Err(WalkError::Config(m.to_string()));
        if self.dim < 1 || self.vocab_size < self.dim {
            return bad("need vocab_size >= dim >= 1");
        }
        if !(self.eps2 >= 0.0 && self.eps2.is_finite()) {
            return bad("eps2 must be finite and non-negative");
        }
        if self.eps2 > (self.dim as f64).sqrt() {
            return bad("eps2 must not exceed sqrt(dim)");
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be positive");
        }
        if self.doc_len < 1 {
            return bad("doc_len must be at least 1");
        }
        Ok(())
    }
}

/// Generator-side word vectors: row `i` is `scales[i] * v_i` with
/// `|v_i| = sqrt(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthModel {
    pub vectors: EmbeddingModel,
    pub scales: Vec<f64>,
}

impl GroundTruthModel {
    pub fn words(&self) -> Vec<String> {
        (0..self.scales.len()).map(word_name).collect()
    }
}

pub fn word_name(id: usize) -> String {
    format!("w{id}")
}

fn unit_gaussian(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Uniform point on the unit sphere in `d` dimensions.
pub fn random_unit(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    unit_gaussian(d, rng)
}

pub fn sample_ground_truth(cfg: &WalkConfig, rng: &mut impl Rng) -> GroundTruthModel {
    let d = cfg.dim;
    let root_d = (d as f64).sqrt();
    let mut rows = Vec::with_capacity(cfg.vocab_size);
    let mut scales = Vec::with_capacity(cfg.vocab_size);
    for _ in 0..cfg.vocab_size {
        let dir = unit_gaussian(d, rng);
        // 1 - U[0,1) lies in (0, 1]
        let s = cfg.kappa * (1.0 - rng.random::<f64>());
        rows.push(dir.into_iter().map(|x| x * root_d * s).collect());
        scales.push(s);
    }
    GroundTruthModel { vectors: EmbeddingModel::from_rows(rows, d), scales }
}

/// Moves `c` by a perturbation drawn uniformly from the ball of radius
/// `eps2 / (2 sqrt d)` and renormalizes. The displacement after
/// renormalization is at most twice the perturbation radius.
pub fn step_discourse(c: &[f64], eps2: f64, rng: &mut impl Rng) -> Vec<f64> {
    let d = c.len();
    if eps2 == 0.0 {
        return c.to_vec();
    }
    let bound = eps2 / (d as f64).sqrt();
    let radius = 0.5 * bound * rng.random::<f64>().powf(1.0 / d as f64);
    let dir = unit_gaussian(d, rng);
    let mut next: Vec<f64> = c.iter().zip(&dir).map(|(a, b)| a + radius * b).collect();
    let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
    next.iter_mut().for_each(|x| *x /= norm);
    let moved = next.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    assert!(moved <= bound * (1.0 + 1e-12), "discourse step {moved} exceeds bound {bound}");
    next
}

/// Softmax sampler over `exp(w_i . c)` with reusable scratch space.
pub struct Emitter {
    weights: Vec<f64>,
}

impl Emitter {
    pub fn new(n: usize) -> Self {
        Emitter { weights: vec![0.0; n] }
    }

    /// Emission probabilities for context `c`.
    pub fn probabilities(&mut self, c: &[f64], truth: &EmbeddingModel) -> Vec<f64> {
        let total = self.fill(c, truth);
        self.weights.iter().map(|w| w / total).collect()
    }

    fn fill(&mut self, c: &[f64], truth: &EmbeddingModel) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (w, row) in self.weights.iter_mut().zip(truth.rows()) {
            *w = row.iter().zip(c).map(|(a, b)| a * b).sum();
            max = max.max(*w);
        }
        let mut total = 0.0;
        for w in self.weights.iter_mut() {
            *w = (*w - max).exp();
            total += *w;
        }
        total
    }

    pub fn emit(&mut self, c: &[f64], truth: &EmbeddingModel, rng: &mut impl Rng) -> u32 {
        let total = self.fill(c, truth);
        let mut target = rng.random::<f64>() * total;
        for (i, w) in self.weights.iter().enumerate() {
            if target < *w {
                return i as u32;
            }
            target -= w;
        }
        // rounding left a sliver past the last positive weight
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0) as u32
    }
}

pub fn emit_word(c: &[f64], truth: &GroundTruthModel, rng: &mut impl Rng) -> u32 {
    Emitter::new(truth.scales.len()).emit(c, &truth.vectors, rng)
}

/// Runs the walk for `cfg.tokens` steps and splits the ids into documents of
/// `cfg.doc_len` tokens.
pub fn generate_ids(cfg: &WalkConfig, truth: &GroundTruthModel, rng: &mut impl Rng) -> Vec<Vec<u32>> {
    let mut docs = Vec::with_capacity(cfg.tokens.div_ceil(cfg.doc_len));
    if cfg.tokens == 0 {
        return docs;
    }
    let mut emitter = Emitter::new(cfg.vocab_size);
    let mut c = random_unit(cfg.dim, rng);
    let mut doc = Vec::with_capacity(cfg.doc_len);
    for _ in 0..cfg.tokens {
        doc.push(emitter.emit(&c, &truth.vectors, rng));
        if doc.len() == cfg.doc_len {
            docs.push(std::mem::replace(&mut doc, Vec::with_capacity(cfg.doc_len)));
        }
        c = step_discourse(&c, cfg.eps2, rng);
    }
    if !doc.is_empty() {
        docs.push(doc);
    }
    docs
}

pub struct SyntheticCorpus {
    pub truth: GroundTruthModel,
    pub documents: Vec<Vec<u32>>,
}

/// Samples ground truth and a corpus from `cfg.seed`.
pub fn generate_corpus(cfg: &WalkConfig) -> Result<SyntheticCorpus, WalkError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth = sample_ground_truth(cfg, &mut rng);
    let documents = generate_ids(cfg, &truth, &mut rng);
    Ok(SyntheticCorpus { truth, documents })
}

impl SyntheticCorpus {
    /// Corpus text: one document per line, words as `w<id>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            for (i, id) in doc.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "w{id}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, corpus_path: &Path, truth_path: &Path) -> Result<(), WalkError> {
        fs::write(corpus_path, self.to_text()).map_err(|source| WalkError::Io {
            path: corpus_path.display().to_string(),
            source,
        })?;
        write_model(&self.truth.vectors, &self.truth.words(), truth_path)?;
        Ok(())
    }
}
