//! Level-wise Apriori mining of k-way co-occurrence sets.
//!
//! The support of a set is the number of windows whose distinct ids contain
//! every member of the set. A window is counted once for a set no matter how
//! often its members repeat inside it, so support is monotone under subset
//! and candidate pruning by (k-1)-subsets is exact.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::corpus::{windows, EncodedCorpus, WindowSpec};

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("set file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("set file format: {0}")]
    Format(String),
    #[error("invalid miner configuration: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MinerError + '_ {
    move |source| MinerError::Io { path: path.display().to_string(), source }
}

/// A set of distinct word ids (strictly increasing) with its support.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KWaySet {
    pub ids: Vec<u32>,
    pub count: u64,
}

impl KWaySet {
    pub fn new(ids: Vec<u32>, count: u64) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        KWaySet { ids, count }
    }

    pub fn order(&self) -> usize {
        self.ids.len()
    }
}

/// All frequent sets of one order, sorted lexicographically by id tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequentSetTable {
    pub order: usize,
    pub sets: Vec<KWaySet>,
    pub support: u64,
    pub window: WindowSpec,
    /// Empty when the table was loaded from a file.
    pub corpus_digest: String,
}

impl FrequentSetTable {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn contains(&self, ids: &[u32]) -> bool {
        self.get(ids).is_some()
    }

    pub fn get(&self, ids: &[u32]) -> Option<&KWaySet> {
        self.sets
            .binary_search_by(|s| s.ids.as_slice().cmp(ids))
            .ok()
            .map(|i| &self.sets[i])
    }

    /// Canonical set-file text.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(16 + self.sets.len() * (self.order * 6 + 6));
        writeln!(
            out,
            "#kway\tk={}\tsupport={}\twindow={}\tstride={}",
            self.order, self.support, self.window.width, self.window.stride
        )
        .unwrap();
        for set in &self.sets {
            for id in &set.ids {
                write!(out, "{id}\t").unwrap();
            }
            writeln!(out, "{}", set.count).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinerConfig {
    pub support: u64,
    pub k_max: usize,
    pub window: WindowSpec,
    /// Worker threads for support counting; results do not depend on it.
    pub threads: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig { support: 1000, k_max: 5, window: WindowSpec::default(), threads: 1 }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<(), MinerError> {
        if self.support < 1 {
            return Err(MinerError::Config("support must be at least 1".into()));
        }
        if self.k_max < 1 {
            return Err(MinerError::Config("k_max must be at least 1".into()));
        }
        if self.window.width < 2 || self.window.stride < 1 {
            return Err(MinerError::Config(format!(
                "window {} / stride {} invalid",
                self.window.width, self.window.stride
            )));
        }
        Ok(())
    }
}

fn empty_table(order: usize, corpus: &EncodedCorpus, cfg: &MinerConfig) -> FrequentSetTable {
    FrequentSetTable {
        order,
        sets: Vec::new(),
        support: cfg.support,
        window: cfg.window,
        corpus_digest: corpus.digest(),
    }
}

/// Per-candidate support counter. `u32` halves the memory of the count
/// vectors whenever the corpus has fewer windows than `u32::MAX`.
trait Counter: Copy + Default + Send + Sync + std::ops::AddAssign + Into<u64> {
    const ONE: Self;
}

impl Counter for u32 {
    const ONE: Self = 1;
}

impl Counter for u64 {
    const ONE: Self = 1;
}

fn window_total(corpus: &EncodedCorpus, spec: WindowSpec) -> u64 {
    corpus.documents.iter().map(|d| windows(d, spec).count() as u64).sum()
}

/// Runs `f` over document shards and sums the per-shard count vectors.
fn sharded_counts<C, F>(docs: &[Vec<u32>], len: usize, threads: usize, f: F) -> Vec<C>
where
    C: Counter,
    F: Fn(&[Vec<u32>]) -> Vec<C> + Sync,
{
    if threads <= 1 || docs.len() < 2 {
        return f(docs);
    }
    let chunk = docs.len().div_ceil(threads * 4).max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build();
    let run = || {
        docs.par_chunks(chunk).map(&f).reduce(
            || vec![C::default(); len],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
    };
    match pool {
        Ok(pool) => pool.install(run),
        Err(_) => f(docs),
    }
}

pub fn mine_level1(corpus: &EncodedCorpus, cfg: &MinerConfig) -> FrequentSetTable {
    let n = corpus.vocab_size;
    let counts = sharded_counts(&corpus.documents, n, cfg.threads, |docs| {
        let mut counts = vec![0u64; n];
        // stamp[id] == window serial when id was already seen in this window
        let mut stamp = vec![0u64; n];
        let mut serial = 0u64;
        for doc in docs {
            for span in windows(doc, cfg.window) {
                serial += 1;
                for &id in span {
                    let slot = &mut stamp[id as usize];
                    if *slot != serial {
                        *slot = serial;
                        counts[id as usize] += 1;
                    }
                }
            }
        }
        counts
    });
    let sets = counts
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c >= cfg.support)
        .map(|(id, c)| KWaySet::new(vec![id as u32], c))
        .collect();
    FrequentSetTable { sets, ..empty_table(1, corpus, cfg) }
}

/// Candidate k-sets grouped by their first k-1 ids. Each group stores its
/// prefix once and the strictly increasing last ids of its members, which
/// keeps large candidate levels compact. Iteration order is lexicographic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidates {
    order: usize,
    prefixes: Vec<u32>,
    offsets: Vec<usize>,
    last: Vec<u32>,
}

impl Candidates {
    fn empty(order: usize) -> Self {
        Candidates { order, prefixes: Vec::new(), offsets: vec![0], last: Vec::new() }
    }

    /// Builds candidates from lexicographically sorted, duplicate-free id
    /// tuples of equal length. Returns `None` if the input is not canonical.
    pub fn from_sorted(order: usize, sets: &[Vec<u32>]) -> Option<Self> {
        if order == 0 {
            return None;
        }
        let mut out = Candidates::empty(order);
        let mut current: Option<&[u32]> = None;
        for (i, ids) in sets.iter().enumerate() {
            if ids.len() != order || !ids.windows(2).all(|w| w[0] < w[1]) {
                return None;
            }
            if i > 0 && sets[i - 1] >= *ids {
                return None;
            }
            let prefix = &ids[..order - 1];
            if current != Some(prefix) {
                out.open_group(prefix);
                current = Some(prefix);
            }
            out.last.push(ids[order - 1]);
        }
        out.close_group();
        Some(out)
    }

    fn open_group(&mut self, prefix: &[u32]) {
        self.close_group();
        self.prefixes.extend_from_slice(prefix);
    }

    fn close_group(&mut self) {
        let groups = self.prefixes.len() / (self.order - 1).max(1);
        let groups = if self.order == 1 { usize::from(!self.last.is_empty()) } else { groups };
        while self.offsets.len() <= groups {
            self.offsets.push(self.last.len());
        }
        *self.offsets.last_mut().unwrap() = self.last.len();
    }

    fn groups(&self) -> usize {
        self.offsets.len() - 1
    }

    fn prefix(&self, g: usize) -> &[u32] {
        let w = self.order - 1;
        &self.prefixes[g * w..(g + 1) * w]
    }

    fn group_lasts(&self, g: usize) -> &[u32] {
        &self.last[self.offsets[g]..self.offsets[g + 1]]
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.last.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last.is_empty()
    }

    /// Id tuples in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = Vec<u32>> + '_ {
        (0..self.groups()).flat_map(move |g| {
            self.group_lasts(g).iter().map(move |&l| {
                let mut ids = self.prefix(g).to_vec();
                ids.push(l);
                ids
            })
        })
    }

    pub fn to_vecs(&self) -> Vec<Vec<u32>> {
        self.iter().collect()
    }
}

/// Joins frequent (k-1)-sets sharing their first k-2 ids and keeps the
/// candidates whose every (k-1)-subset is frequent.
pub fn generate_candidates(prev: &FrequentSetTable) -> Candidates {
    let order = prev.order + 1;
    let mut out = Candidates::empty(order);
    let sets = &prev.sets;
    let mut sub = Vec::with_capacity(order);
    let mut lasts = Vec::new();
    let mut group_start = 0;
    while group_start < sets.len() {
        let shared = &sets[group_start].ids[..prev.order - 1];
        let mut group_end = group_start + 1;
        while group_end < sets.len() && &sets[group_end].ids[..prev.order - 1] == shared {
            group_end += 1;
        }
        for i in group_start..group_end {
            let prefix = &sets[i].ids;
            lasts.clear();
            for other in &sets[i + 1..group_end] {
                let last = *other.ids.last().unwrap();
                // the subsets dropping one of the last two ids are the join parents
                let pruned = (0..order.saturating_sub(2)).any(|skip| {
                    sub.clear();
                    sub.extend(prefix.iter().enumerate().filter(|&(p, _)| p != skip).map(|(_, &id)| id));
                    sub.push(last);
                    !prev.contains(&sub)
                });
                if !pruned {
                    lasts.push(last);
                }
            }
            if !lasts.is_empty() {
                out.open_group(prefix);
                out.last.extend_from_slice(&lasts);
            }
        }
        group_start = group_end;
    }
    out.close_group();
    out
}

/// Maps a group prefix to its index: a dense table for single ids, a hash of
/// the mixed-radix packed tuple otherwise (tuples as keys when that overflows).
enum PrefixIndex {
    Dense(Vec<u32>),
    Packed(FxHashMap<u128, u32>, u128),
    Tuple(FxHashMap<Vec<u32>, u32>),
}

impl PrefixIndex {
    fn build(cands: &Candidates, n: usize) -> Self {
        let width = cands.order - 1;
        let base = n.max(1) as u128;
        if width == 1 {
            let mut dense = vec![u32::MAX; n];
            for g in 0..cands.groups() {
                dense[cands.prefix(g)[0] as usize] = g as u32;
            }
            PrefixIndex::Dense(dense)
        } else if base.checked_pow(width as u32).is_some() {
            let mut map = FxHashMap::default();
            map.reserve(cands.groups());
            for g in 0..cands.groups() {
                map.insert(pack(cands.prefix(g), base), g as u32);
            }
            PrefixIndex::Packed(map, base)
        } else {
            let map = (0..cands.groups()).map(|g| (cands.prefix(g).to_vec(), g as u32)).collect();
            PrefixIndex::Tuple(map)
        }
    }

    #[inline]
    fn get(&self, prefix: &[u32]) -> Option<usize> {
        match self {
            PrefixIndex::Dense(d) => match d[prefix[0] as usize] {
                u32::MAX => None,
                g => Some(g as usize),
            },
            PrefixIndex::Packed(map, base) => map.get(&pack(prefix, *base)).map(|&g| g as usize),
            PrefixIndex::Tuple(map) => map.get(prefix).map(|&g| g as usize),
        }
    }
}

#[inline]
fn pack(ids: &[u32], base: u128) -> u128 {
    ids.iter().fold(0u128, |acc, &id| acc * base + id as u128)
}

pub fn count_supports(corpus: &EncodedCorpus, candidates: &Candidates, cfg: &MinerConfig) -> FrequentSetTable {
    let order = candidates.order;
    if candidates.is_empty() {
        return empty_table(order, corpus, cfg);
    }
    let sets = if window_total(corpus, cfg.window) < u32::MAX as u64 {
        frequent(candidates, count_with::<u32>(corpus, candidates, cfg), cfg.support)
    } else {
        frequent(candidates, count_with::<u64>(corpus, candidates, cfg), cfg.support)
    };
    FrequentSetTable { sets, ..empty_table(order, corpus, cfg) }
}

fn frequent<C: Counter>(candidates: &Candidates, counts: Vec<C>, support: u64) -> Vec<KWaySet> {
    candidates
        .iter()
        .zip(counts)
        .filter_map(|(ids, c)| (c.into() >= support).then(|| KWaySet::new(ids, c.into())))
        .collect()
}

fn count_with<C: Counter>(corpus: &EncodedCorpus, cands: &Candidates, cfg: &MinerConfig) -> Vec<C> {
    let n = corpus.vocab_size;
    let order = cands.order;
    let mut active = vec![false; n];
    cands.prefixes.iter().chain(&cands.last).for_each(|&id| active[id as usize] = true);
    let lone = order == 1;
    let index = (!lone).then(|| PrefixIndex::build(cands, n));
    let len = cands.len();
    sharded_counts(&corpus.documents, len, cfg.threads, |docs| {
        let mut counts = vec![C::default(); len];
        let mut stamp = vec![0u64; n];
        let mut serial = 0u64;
        let mut items: Vec<u32> = Vec::with_capacity(cfg.window.width);
        let mut combo: Vec<u32> = vec![0; order.saturating_sub(1)];
        let mut pos: Vec<usize> = vec![0; order.saturating_sub(1)];
        let bump = |g: usize, rest: &[u32], counts: &mut [C]| {
            let lasts = cands.group_lasts(g);
            let base = cands.offsets[g];
            let mut lo = 0;
            for &id in rest {
                lo += lasts[lo..].partition_point(|&l| l < id);
                if lo == lasts.len() {
                    break;
                }
                if lasts[lo] == id {
                    counts[base + lo] += C::ONE;
                }
            }
        };
        for doc in docs {
            for span in windows(doc, cfg.window) {
                serial += 1;
                items.clear();
                for &id in span {
                    let slot = &mut stamp[id as usize];
                    if active[id as usize] && *slot != serial {
                        *slot = serial;
                        items.push(id);
                    }
                }
                if items.len() < order {
                    continue;
                }
                items.sort_unstable();
                match &index {
                    None => bump(0, &items, &mut counts),
                    Some(index) => {
                        let heads = &items[..items.len() - 1];
                        for_each_combination(heads, &mut pos, &mut combo, |prefix, pos| {
                            if let Some(g) = index.get(prefix) {
                                bump(g, &items[pos[pos.len() - 1] + 1..], &mut counts);
                            }
                        });
                    }
                }
            }
        }
        counts
    })
}

/// Visits every size-`pos.len()` combination of `items` in lexicographic
/// order, passing the chosen ids and their positions.
fn for_each_combination<F: FnMut(&[u32], &[usize])>(items: &[u32], pos: &mut [usize], combo: &mut [u32], mut f: F) {
    let k = pos.len();
    let m = items.len();
    if k > m {
        return;
    }
    for (i, p) in pos.iter_mut().enumerate() {
        *p = i;
    }
    loop {
        for (c, &p) in combo.iter_mut().zip(pos.iter()) {
            *c = items[p];
        }
        f(combo, pos);
        // advance the rightmost position that can still move
        let Some(i) = (0..k).rev().find(|&i| pos[i] < m - k + i) else {
            return;
        };
        pos[i] += 1;
        for j in i + 1..k {
            pos[j] = pos[j - 1] + 1;
        }
    }
}

/// Tables for k = 1..=k_max. Levels above the first empty one are returned
/// empty without scanning the corpus.
pub fn mine_all(corpus: &EncodedCorpus, cfg: &MinerConfig) -> Result<Vec<FrequentSetTable>, MinerError> {
    cfg.validate()?;
    let mut tables = vec![mine_level1(corpus, cfg)];
    for order in 2..=cfg.k_max {
        let prev = tables.last().unwrap();
        let table = if prev.is_empty() {
            empty_table(order, corpus, cfg)
        } else {
            let candidates = generate_candidates(prev);
            if candidates.is_empty() {
                empty_table(order, corpus, cfg)
            } else {
                count_supports(corpus, &candidates, cfg)
            }
        };
        tables.push(table);
    }
    Ok(tables)
}

pub fn write_sets(table: &FrequentSetTable, path: &Path) -> Result<(), MinerError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(table.to_tsv().as_bytes()).map_err(io_err(path))
}

fn parse_header(line: &str) -> Result<(usize, u64, WindowSpec), MinerError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 || fields[0] != "#kway" {
        return Err(MinerError::Format(format!("bad header {line:?}")));
    }
    let value = |field: &str, key: &str| -> Result<u64, MinerError> {
        field
            .strip_prefix(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| MinerError::Format(format!("bad header field {field:?}")))
    };
    let order = value(fields[1], "k=")? as usize;
    let support = value(fields[2], "support=")?;
    let width = value(fields[3], "window=")? as usize;
    let stride = value(fields[4], "stride=")? as usize;
    if order == 0 {
        return Err(MinerError::Format("order must be at least 1".into()));
    }
    Ok((order, support, WindowSpec { width, stride }))
}

pub fn read_sets(path: &Path) -> Result<FrequentSetTable, MinerError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| MinerError::Format("missing header".into()))?
        .map_err(io_err(path))?;
    let (order, support, window) = parse_header(&header)?;
    let mut sets: Vec<KWaySet> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = idx + 2;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != order + 1 {
            return Err(MinerError::Format(format!(
                "line {lineno}: {} fields for order {order}",
                fields.len()
            )));
        }
        let parse_err = |msg: String| MinerError::Parse { line: lineno, msg };
        let ids = fields[..order]
            .iter()
            .map(|f| f.parse::<u32>().map_err(|_| parse_err(format!("bad id {f:?}"))))
            .collect::<Result<Vec<u32>, _>>()?;
        let count: u64 = fields[order]
            .parse()
            .map_err(|_| parse_err(format!("bad count {:?}", fields[order])))?;
        if !ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(parse_err("ids not strictly increasing".into()));
        }
        if count < support {
            return Err(parse_err(format!("count {count} below support {support}")));
        }
        if let Some(last) = sets.last() {
            if last.ids >= ids {
                return Err(parse_err("lines not in lexicographic order".into()));
            }
        }
        sets.push(KWaySet::new(ids, count));
    }
    Ok(FrequentSetTable { order, sets, support, window, corpus_digest: String::new() })
}
