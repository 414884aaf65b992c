//! Embedding training over mined k-way sets.
//!
//! Each set `S` with support `h` contributes
//! `min(h, theta) * (ln h - |sum_{i in S} w_i|^2 + C_|S|)^2` to the objective,
//! with one bias `C_k` per set order. The truncation only affects the weight;
//! the log term always sees the raw count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{words_digest, Vocabulary};
use crate::miner::{FrequentSetTable, KWaySet};

const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model format: {0}")]
    Format(String),
    #[error("warm start has shape {got_n}x{got_d}, expected {n}x{d}")]
    DimensionMismatch { n: usize, d: usize, got_n: usize, got_d: usize },
    #[error("word id {id} out of range for {n} words")]
    UnknownId { id: u32, n: usize },
    #[error("no bias for order {0}")]
    MissingBias(usize),
    #[error("non-finite gradient on set {ids:?} (count {count})")]
    NonFinite { ids: Vec<u32>, count: u64 },
    #[error("no table for order {0}")]
    MissingLevel(usize),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.display().to_string(), source }
}

/// Word vectors (row-major, one row per word id) plus a bias per set order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    vectors: Vec<f64>,
    n: usize,
    dim: usize,
    pub biases: BTreeMap<usize, f64>,
    pub vocab_digest: String,
}

impl EmbeddingModel {
    pub fn from_rows(rows: Vec<Vec<f64>>, dim: usize) -> Self {
        assert!(rows.iter().all(|r| r.len() == dim), "ragged rows");
        let n = rows.len();
        EmbeddingModel {
            vectors: rows.into_iter().flatten().collect(),
            n,
            dim,
            biases: BTreeMap::new(),
            vocab_digest: String::new(),
        }
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        EmbeddingModel {
            vectors: vec![0.0; n * dim],
            n,
            dim,
            biases: BTreeMap::new(),
            vocab_digest: String::new(),
        }
    }

    pub fn n_words(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.vectors[i..i + self.dim]
    }

    pub fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let i = id as usize * self.dim;
        &mut self.vectors[i..i + self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.vectors
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.chunks_exact(self.dim.max(1)).take(self.n)
    }

    pub fn bias(&self, order: usize) -> Option<f64> {
        self.biases.get(&order).copied()
    }

    pub fn ensure_bias(&mut self, order: usize) {
        self.biases.entry(order).or_insert(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.is_finite()) && self.biases.values().all(|v| v.is_finite())
    }

    /// Sum of the rows of `ids`.
    pub fn sum_rows(&self, ids: &[u32]) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        self.sum_rows_into(ids, &mut s);
        s
    }

    fn sum_rows_into(&self, ids: &[u32], out: &mut [f64]) {
        out.fill(0.0);
        for &id in ids {
            for (o, v) in out.iter_mut().zip(self.row(id)) {
                *o += v;
            }
        }
    }

    /// Multiplies every vector coordinate by `factor`.
    pub fn scale(&mut self, factor: f64) {
        self.vectors.iter_mut().for_each(|v| *v *= factor);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Stochastic,
    FullBatch,
}

impl std::str::FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stochastic" => Ok(TrainMode::Stochastic),
            "full_batch" | "full-batch" => Ok(TrainMode::FullBatch),
            other => Err(format!("unknown mode {other:?} (stochastic|full_batch)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub initial_lr: f64,
    pub theta: f64,
    pub epochs: usize,
    pub k_max: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 300,
            initial_lr: 0.01,
            theta: 100.0,
            epochs: 25,
            k_max: 5,
            seed: 1,
            mode: TrainMode::Stochastic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.dim < 1 {
            return Err(TrainError::Config("dim must be at least 1".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if !(self.theta >= 1.0 && self.theta.is_finite()) {
            return Err(TrainError::Config("theta must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.k_max < 2 {
            return Err(TrainError::Config("k_max must be at least 2".into()));
        }
        Ok(())
    }
}

/// Per-parameter sums of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    pub vectors: Vec<f64>,
    pub biases: BTreeMap<usize, f64>,
}

impl AdaGradState {
    pub fn new(model: &EmbeddingModel) -> Self {
        AdaGradState {
            vectors: vec![0.0; model.vectors.len()],
            biases: model.biases.keys().map(|&k| (k, 0.0)).collect(),
        }
    }
}

/// Random vectors uniform in `[-0.5/d, 0.5/d]`, or a copy of `warm_start`.
pub fn init_model(
    n: usize,
    cfg: &TrainConfig,
    warm_start: Option<&EmbeddingModel>,
    rng: &mut impl Rng,
) -> Result<EmbeddingModel, TrainError> {
    if let Some(prev) = warm_start {
        if prev.n != n || prev.dim != cfg.dim {
            return Err(TrainError::DimensionMismatch {
                n,
                d: cfg.dim,
                got_n: prev.n,
                got_d: prev.dim,
            });
        }
        return Ok(prev.clone());
    }
    let half = 0.5 / cfg.dim as f64;
    let vectors = (0..n * cfg.dim).map(|_| rng.random_range(-half..=half)).collect();
    Ok(EmbeddingModel { vectors, n, dim: cfg.dim, biases: BTreeMap::new(), vocab_digest: String::new() })
}

/// Residual pieces of one set term.
#[derive(Debug, Clone, PartialEq)]
pub struct SetTerm {
    /// `min(h, theta)`
    pub weight: f64,
    /// `ln h - |s|^2 + C_k`
    pub residual: f64,
    /// `s`, the sum of the member vectors
    pub sum: Vec<f64>,
}

impl SetTerm {
    pub fn value(&self) -> f64 {
        self.weight * self.residual * self.residual
    }
}

fn check_ids(model: &EmbeddingModel, ids: &[u32]) -> Result<(), TrainError> {
    match ids.iter().find(|&&id| id as usize >= model.n) {
        Some(&id) => Err(TrainError::UnknownId { id, n: model.n }),
        None => Ok(()),
    }
}

/// Evaluates one set term for a real-valued count `h`.
pub fn set_term(model: &EmbeddingModel, ids: &[u32], h: f64, theta: f64) -> Result<SetTerm, TrainError> {
    check_ids(model, ids)?;
    let bias = model.bias(ids.len()).ok_or(TrainError::MissingBias(ids.len()))?;
    let sum = model.sum_rows(ids);
    let sq: f64 = sum.iter().map(|x| x * x).sum();
    Ok(SetTerm { weight: h.min(theta), residual: h.ln() - sq + bias, sum })
}

/// Gradient of one set term. Every member word receives the same vector
/// `-4 m r s`; the bias of the set's order receives `2 m r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetGradient {
    pub words: Vec<(u32, Vec<f64>)>,
    pub bias: f64,
}

pub fn set_gradient_raw(
    model: &EmbeddingModel,
    ids: &[u32],
    h: f64,
    theta: f64,
) -> Result<SetGradient, TrainError> {
    let term = set_term(model, ids, h, theta)?;
    let coef = -4.0 * term.weight * term.residual;
    let g: Vec<f64> = term.sum.iter().map(|x| coef * x).collect();
    Ok(SetGradient {
        words: ids.iter().map(|&id| (id, g.clone())).collect(),
        bias: 2.0 * term.weight * term.residual,
    })
}

pub fn set_gradient(model: &EmbeddingModel, set: &KWaySet, theta: f64) -> Result<SetGradient, TrainError> {
    set_gradient_raw(model, &set.ids, set.count as f64, theta)
}

/// All sets of the given tables in canonical (order, ids) sequence.
fn canonical_sets(tables: &[FrequentSetTable]) -> Vec<&KWaySet> {
    let mut sets: Vec<&KWaySet> = tables.iter().flat_map(|t| t.sets.iter()).collect();
    let sorted = sets
        .windows(2)
        .all(|w| (w[0].ids.len(), &w[0].ids) <= (w[1].ids.len(), &w[1].ids));
    if !sorted {
        sets.sort_by(|a, b| (a.ids.len(), &a.ids).cmp(&(b.ids.len(), &b.ids)));
    }
    sets
}

fn validate_sets(model: &EmbeddingModel, sets: &[&KWaySet]) -> Result<(), TrainError> {
    for set in sets {
        check_ids(model, &set.ids)?;
        if model.bias(set.ids.len()).is_none() {
            return Err(TrainError::MissingBias(set.ids.len()));
        }
    }
    Ok(())
}

/// Summed weighted squared residual over every set of every table.
pub fn objective(model: &EmbeddingModel, tables: &[FrequentSetTable], theta: f64) -> Result<f64, TrainError> {
    let sets = canonical_sets(tables);
    validate_sets(model, &sets)?;
    Ok(objective_unchecked(model, &sets, theta))
}

fn objective_unchecked(model: &EmbeddingModel, sets: &[&KWaySet], theta: f64) -> f64 {
    let mut s = vec![0.0; model.dim];
    sets.iter()
        .map(|set| {
            model.sum_rows_into(&set.ids, &mut s);
            let sq: f64 = s.iter().map(|x| x * x).sum();
            let h = set.count as f64;
            let r = h.ln() - sq + model.biases[&set.ids.len()];
            h.min(theta) * r * r
        })
        .sum()
}

/// One pass over all sets. Returns the objective measured before the pass.
pub fn epoch(
    model: &mut EmbeddingModel,
    tables: &[FrequentSetTable],
    cfg: &TrainConfig,
    ada: &mut AdaGradState,
    rng: &mut impl Rng,
) -> Result<f64, TrainError> {
    let sets = canonical_sets(tables);
    validate_sets(model, &sets)?;
    match cfg.mode {
        TrainMode::Stochastic => stochastic_pass(model, sets, cfg, ada, rng),
        TrainMode::FullBatch => full_batch_step(model, &sets, cfg),
    }
}

fn non_finite(set: &KWaySet) -> TrainError {
    TrainError::NonFinite { ids: set.ids.clone(), count: set.count }
}

fn stochastic_pass(
    model: &mut EmbeddingModel,
    mut sets: Vec<&KWaySet>,
    cfg: &TrainConfig,
    ada: &mut AdaGradState,
    rng: &mut impl Rng,
) -> Result<f64, TrainError> {
    let before = objective_unchecked(model, &sets, cfg.theta);
    if ada.vectors.len() != model.vectors.len() {
        return Err(TrainError::Config("AdaGrad state does not match model shape".into()));
    }
    sets.shuffle(rng);
    let d = model.dim;
    let lr = cfg.initial_lr;
    let mut s = vec![0.0; d];
    let mut g = vec![0.0; d];
    for set in sets {
        let order = set.ids.len();
        model.sum_rows_into(&set.ids, &mut s);
        let sq: f64 = s.iter().map(|x| x * x).sum();
        let h = set.count as f64;
        let m = h.min(cfg.theta);
        let r = h.ln() - sq + model.biases[&order];
        let coef = -4.0 * m * r;
        for (gi, si) in g.iter_mut().zip(&s) {
            *gi = coef * si;
        }
        let gb = 2.0 * m * r;
        if !gb.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(non_finite(set));
        }
        for &id in &set.ids {
            let base = id as usize * d;
            let acc = &mut ada.vectors[base..base + d];
            let row = &mut model.vectors[base..base + d];
            for ((w, a), gi) in row.iter_mut().zip(acc.iter_mut()).zip(&g) {
                *a += gi * gi;
                *w -= lr * gi / (*a + ADAGRAD_EPS).sqrt();
            }
        }
        let acc = ada.biases.entry(order).or_insert(0.0);
        *acc += gb * gb;
        *model.biases.get_mut(&order).unwrap() -= lr * gb / (*acc + ADAGRAD_EPS).sqrt();
    }
    Ok(before)
}

fn full_batch_step(model: &mut EmbeddingModel, sets: &[&KWaySet], cfg: &TrainConfig) -> Result<f64, TrainError> {
    let d = model.dim;
    let mut grad = vec![0.0; model.vectors.len()];
    let mut bias_grad: BTreeMap<usize, f64> = model.biases.keys().map(|&k| (k, 0.0)).collect();
    let mut s = vec![0.0; d];
    let mut before = 0.0;
    for set in sets {
        let order = set.ids.len();
        model.sum_rows_into(&set.ids, &mut s);
        let sq: f64 = s.iter().map(|x| x * x).sum();
        let h = set.count as f64;
        let m = h.min(cfg.theta);
        let r = h.ln() - sq + model.biases[&order];
        before += m * r * r;
        let coef = -4.0 * m * r;
        if !(coef.is_finite() && s.iter().all(|x| x.is_finite())) {
            return Err(non_finite(set));
        }
        for &id in &set.ids {
            let base = id as usize * d;
            for (gi, si) in grad[base..base + d].iter_mut().zip(&s) {
                *gi += coef * si;
            }
        }
        *bias_grad.get_mut(&order).unwrap() += 2.0 * m * r;
    }
    for (w, g) in model.vectors.iter_mut().zip(&grad) {
        *w -= cfg.initial_lr * g;
    }
    for (k, g) in bias_grad {
        *model.biases.get_mut(&k).unwrap() -= cfg.initial_lr * g;
    }
    Ok(before)
}

/// Runs `cfg.epochs` epochs on `tables`, adding zero biases for any order the
/// model lacks. Returns the per-epoch objective (before each epoch) followed
/// by the final objective.
pub fn train(
    model: &mut EmbeddingModel,
    tables: &[FrequentSetTable],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, TrainError> {
    for t in tables {
        for set in &t.sets {
            model.ensure_bias(set.ids.len());
        }
        if t.order >= 1 {
            model.ensure_bias(t.order);
        }
    }
    let mut ada = AdaGradState::new(model);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        history.push(epoch(model, tables, cfg, &mut ada, rng)?);
    }
    history.push(objective(model, tables, cfg.theta)?);
    Ok(history)
}

/// One model per level k = 2..=k_max. Level 2 starts from random vectors;
/// level k starts from the level k-1 model and trains on every order 2..=k.
pub fn train_curriculum(
    n: usize,
    tables: &[FrequentSetTable],
    cfg: &TrainConfig,
) -> Result<Vec<EmbeddingModel>, TrainError> {
    train_curriculum_with(n, tables, cfg, |_, _, _| {})
}

/// Like [`train_curriculum`], calling `on_level(k, initial, history)` with
/// each level's starting model and objective history.
pub fn train_curriculum_with<F>(
    n: usize,
    tables: &[FrequentSetTable],
    cfg: &TrainConfig,
    mut on_level: F,
) -> Result<Vec<EmbeddingModel>, TrainError>
where
    F: FnMut(usize, &EmbeddingModel, &[f64]),
{
    cfg.validate()?;
    let mut by_order: BTreeMap<usize, &FrequentSetTable> = BTreeMap::new();
    for t in tables {
        by_order.insert(t.order, t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut models: Vec<EmbeddingModel> = Vec::new();
    let mut level_tables: Vec<FrequentSetTable> = Vec::new();
    for k in 2..=cfg.k_max {
        let table = by_order.get(&k).ok_or(TrainError::MissingLevel(k))?;
        level_tables.push((*table).clone());
        let mut model = init_model(n, cfg, models.last(), &mut rng)?;
        let initial = model.clone();
        let history = train(&mut model, &level_tables, cfg, &mut rng)?;
        on_level(k, &initial, &history);
        models.push(model);
    }
    Ok(models)
}

/// Path of the bias sidecar for a model file.
pub fn bias_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".bias");
    PathBuf::from(os)
}

pub fn model_to_text(model: &EmbeddingModel, words: &[String]) -> Result<String, TrainError> {
    if words.len() != model.n {
        return Err(TrainError::Format(format!("{} words for {} vectors", words.len(), model.n)));
    }
    let mut out = String::new();
    writeln!(out, "{} {}", model.n, model.dim).unwrap();
    for (word, row) in words.iter().zip(model.rows()) {
        out.push_str(word);
        for v in row {
            write!(out, " {v:e}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes the vector file and, when the model has biases, the `.bias` sidecar.
pub fn write_model(model: &EmbeddingModel, words: &[String], path: &Path) -> Result<(), TrainError> {
    let text = model_to_text(model, words)?;
    fs::write(path, text).map_err(io_err(path))?;
    let sidecar = bias_path(path);
    if !model.biases.is_empty() {
        let mut f = fs::File::create(&sidecar).map_err(io_err(&sidecar))?;
        for (k, c) in &model.biases {
            writeln!(f, "{k}\t{c:e}").map_err(io_err(&sidecar))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub words: Vec<String>,
    pub model: EmbeddingModel,
    /// Set when no bias sidecar was found.
    pub bias_missing: bool,
}

impl LoadedModel {
    /// Reorders rows to vocabulary ids. Every vocabulary word must be present.
    pub fn aligned_to(&self, vocab: &Vocabulary) -> Result<EmbeddingModel, TrainError> {
        let index: std::collections::HashMap<&str, usize> =
            self.words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let d = self.model.dim;
        let mut vectors = Vec::with_capacity(vocab.len() * d);
        for w in vocab.words() {
            let i = *index
                .get(w.as_str())
                .ok_or_else(|| TrainError::Format(format!("vocabulary word {w:?} missing from model")))?;
            vectors.extend_from_slice(self.model.row(i as u32));
        }
        Ok(EmbeddingModel {
            vectors,
            n: vocab.len(),
            dim: d,
            biases: self.model.biases.clone(),
            vocab_digest: vocab.digest(),
        })
    }

    pub fn lookup(&self) -> std::collections::HashMap<&str, u32> {
        self.words.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect()
    }
}

pub fn read_model(path: &Path) -> Result<LoadedModel, TrainError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| TrainError::Format("empty model file".into()))?
        .map_err(io_err(path))?;
    let dims: Vec<usize> = header
        .split(' ')
        .map(|f| f.parse().map_err(|_| TrainError::Format(format!("bad header {header:?}"))))
        .collect::<Result<_, _>>()?;
    let [n, d] = dims[..] else {
        return Err(TrainError::Format(format!("bad header {header:?}")));
    };
    let mut words = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * d);
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = idx + 2;
        let mut fields = line.split(' ');
        let word = fields.next().unwrap_or_default();
        let before = vectors.len();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| TrainError::Format(format!("line {lineno}: bad value {f:?}")))?;
            vectors.push(v);
        }
        if vectors.len() - before != d || word.is_empty() {
            return Err(TrainError::Format(format!(
                "line {lineno}: expected a word and {d} values"
            )));
        }
        words.push(word.to_string());
    }
    if words.len() != n {
        return Err(TrainError::Format(format!("header declares {n} words, found {}", words.len())));
    }
    let sidecar = bias_path(path);
    let (biases, bias_missing) = match fs::read_to_string(&sidecar) {
        Ok(text) => (parse_biases(&text)?, false),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => (BTreeMap::new(), true),
        Err(e) => return Err(io_err(&sidecar)(e)),
    };
    let vocab_digest = words_digest(&words);
    Ok(LoadedModel {
        words,
        model: EmbeddingModel { vectors, n, dim: d, biases, vocab_digest },
        bias_missing,
    })
}

fn parse_biases(text: &str) -> Result<BTreeMap<usize, f64>, TrainError> {
    let mut biases = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let bad = || TrainError::Format(format!("bias line {}: {line:?}", idx + 1));
        let (k, c) = line.split_once('\t').ok_or_else(bad)?;
        biases.insert(k.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?);
    }
    Ok(biases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::WindowSpec;
    use std::f64::consts::E;

    fn table(order: usize, sets: Vec<(Vec<u32>, u64)>) -> FrequentSetTable {
        FrequentSetTable {
            order,
            sets: sets.into_iter().map(|(ids, c)| KWaySet::new(ids, c)).collect(),
            support: 1,
            window: WindowSpec::default(),
            corpus_digest: String::new(),
        }
    }

    fn unit_pair() -> EmbeddingModel {
        let mut m = EmbeddingModel::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 2);
        m.biases.insert(2, 0.0);
        m
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = TrainConfig { dim: 4, ..TrainConfig::default() };
        let a = init_model(2, &cfg, None, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = init_model(2, &cfg, None, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_flat().len(), 8);
        assert!(a.as_flat().iter().all(|v| v.abs() <= 0.125));
        assert!(a.biases.is_empty());

        let warm = init_model(2, &cfg, Some(&a), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(warm.as_flat(), a.as_flat());

        let other = TrainConfig { dim: 5, ..cfg };
        assert!(matches!(
            init_model(2, &other, Some(&a), &mut ChaCha8Rng::seed_from_u64(8)),
            Err(TrainError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn objective_hand_example() {
        let m = unit_pair();
        assert_eq!(objective(&m, &[], 100.0).unwrap(), 0.0);
        let term = set_term(&m, &[0, 1], E, 100.0).unwrap();
        assert!((term.residual + 1.0).abs() < 1e-15);
        assert!((term.value() - std::f64::consts::E).abs() < 1e-6);

        let g = set_gradient_raw(&m, &[0, 1], E, 100.0).unwrap();
        for (_, gw) in &g.words {
            assert!((gw[0] - 10.87313).abs() < 1e-5 && (gw[1] - 10.87313).abs() < 1e-5);
        }
        assert!((g.bias + 5.43656).abs() < 1e-5);
    }

    #[test]
    fn zero_residual_gives_zero_term_and_gradient() {
        let mut m = unit_pair();
        // |s|^2 = 2, ln h = ln 20
        m.biases.insert(2, 2.0 - 20f64.ln());
        let t = table(2, vec![(vec![0, 1], 20)]);
        assert!(objective(&m, std::slice::from_ref(&t), 100.0).unwrap().abs() < 1e-24);
        let g = set_gradient(&m, &t.sets[0], 100.0).unwrap();
        assert!(g.bias.abs() < 1e-12);
        assert!(g.words.iter().all(|(_, v)| v.iter().all(|x| x.abs() < 1e-12)));

        let cfg = TrainConfig { dim: 2, mode: TrainMode::FullBatch, epochs: 3, ..TrainConfig::default() };
        let before = m.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        train(&mut m, &[t], &cfg, &mut rng).unwrap();
        for (a, b) in m.as_flat().iter().zip(before.as_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_only_weights() {
        let mut m = unit_pair();
        m.biases.insert(2, 0.0);
        let t = set_term(&m, &[0, 1], 1000.0, 100.0).unwrap();
        assert_eq!(t.weight, 100.0);
        assert!((t.residual - (1000f64.ln() - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn objective_errors() {
        let m = unit_pair();
        let t = table(2, vec![(vec![0, 5], 3)]);
        assert!(matches!(objective(&m, &[t], 100.0), Err(TrainError::UnknownId { id: 5, .. })));
        let t = table(3, vec![(vec![0, 1, 2], 3)]);
        let m3 = EmbeddingModel::zeros(3, 2);
        assert!(matches!(objective(&m3, &[t], 100.0), Err(TrainError::MissingBias(3))));
    }

    #[test]
    fn non_finite_gradient_names_the_set() {
        let mut m = EmbeddingModel::from_rows(vec![vec![1e200, 0.0], vec![1e200, 0.0]], 2);
        m.biases.insert(2, 0.0);
        let t = table(2, vec![(vec![0, 1], 5)]);
        let cfg = TrainConfig { dim: 2, epochs: 1, ..TrainConfig::default() };
        let err = train(&mut m, &[t], &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { ref ids, count: 5 } if ids == &[0, 1]));
    }

    fn small_instance() -> (EmbeddingModel, Vec<FrequentSetTable>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sets = Vec::new();
        for a in 0..5u32 {
            for b in a + 1..6 {
                if sets.len() < 10 {
                    sets.push((vec![a, b], rng.random_range(2..30)));
                }
            }
        }
        let cfg = TrainConfig { dim: 4, ..TrainConfig::default() };
        let mut model = init_model(6, &cfg, None, &mut rng).unwrap();
        model.scale(20.0);
        model.ensure_bias(2);
        (model, vec![table(2, sets)])
    }

    #[test]
    fn full_batch_descends() {
        let (mut model, tables) = small_instance();
        let cfg = TrainConfig { dim: 4, initial_lr: 1e-4, epochs: 100, mode: TrainMode::FullBatch, ..TrainConfig::default() };
        let hist = train(&mut model, &tables, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(hist.windows(2).all(|w| w[1] <= w[0]), "{hist:?}");
        assert!(hist.last().unwrap() < &hist[0]);
    }

    #[test]
    fn stochastic_is_deterministic_and_accumulators_grow() {
        let (model, tables) = small_instance();
        let cfg = TrainConfig { dim: 4, epochs: 1, ..TrainConfig::default() };
        let run = || {
            let mut m = model.clone();
            let mut ada = AdaGradState::new(&m);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut snapshots = Vec::new();
            for _ in 0..5 {
                epoch(&mut m, &tables, &cfg, &mut ada, &mut rng).unwrap();
                snapshots.push(ada.clone());
            }
            (m, snapshots)
        };
        let (a, snaps) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        for w in snaps.windows(2) {
            assert!(w[0].vectors.iter().zip(&w[1].vectors).all(|(x, y)| *x >= 0.0 && y >= x));
            assert!(w[0].biases.iter().all(|(k, v)| w[1].biases[k] >= *v));
        }
    }

    #[test]
    fn curriculum_warm_starts() {
        let t2 = table(2, vec![(vec![0, 1], 5), (vec![0, 2], 7), (vec![1, 2], 3)]);
        let t3 = table(3, vec![(vec![0, 1, 2], 4)]);
        let cfg = TrainConfig { dim: 3, epochs: 4, k_max: 3, ..TrainConfig::default() };
        let mut initials = Vec::new();
        let models = train_curriculum_with(3, &[t2.clone(), t3.clone()], &cfg, |k, init, _| {
            initials.push((k, init.clone()))
        })
        .unwrap();
        assert_eq!(models.len(), 2);
        assert_eq!(initials[1].1.as_flat(), models[0].as_flat());
        assert!(models[1].bias(3).is_some() && models[1].bias(2).is_some());

        let single = train_curriculum(3, std::slice::from_ref(&t2), &TrainConfig { k_max: 2, ..cfg }).unwrap();
        assert_eq!(single[0], models[0]);

        assert!(matches!(train_curriculum(3, &[t2], &cfg), Err(TrainError::MissingLevel(3))));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let mut m = EmbeddingModel::from_rows(
            vec![vec![0.1, -2.5e-7, 1.0 / 3.0], vec![std::f64::consts::PI, 0.0, -1e10]],
            3,
        );
        m.biases.insert(2, -0.123456789);
        let words = vec!["alpha".to_string(), "beta".to_string()];
        write_model(&m, &words, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 3);
        assert_eq!(fs::read_to_string(bias_path(&path)).unwrap().lines().count(), 1);

        let back = read_model(&path).unwrap();
        assert!(!back.bias_missing);
        assert_eq!(back.words, words);
        let max_diff = back
            .model
            .as_flat()
            .iter()
            .zip(m.as_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1e-8);
        assert_eq!(back.model.biases, m.biases);

        fs::remove_file(bias_path(&path)).unwrap();
        let no_bias = read_model(&path).unwrap();
        assert!(no_bias.bias_missing && no_bias.model.biases.is_empty());

        fs::write(&path, "3 3\nalpha 1 2 3\n").unwrap();
        assert!(matches!(read_model(&path), Err(TrainError::Format(_))));
    }

    #[test]
    fn aligned_to_vocabulary() {
        let loaded = LoadedModel {
            words: vec!["b".into(), "a".into()],
            model: EmbeddingModel::from_rows(vec![vec![2.0], vec![1.0]], 1),
            bias_missing: true,
        };
        let vocab = Vocabulary::from_counts([("a".to_string(), 5), ("b".to_string(), 3)].into(), 1).unwrap();
        let m = loaded.aligned_to(&vocab).unwrap();
        assert_eq!(m.as_flat(), &[1.0, 2.0]);
        let vocab2 = Vocabulary::from_counts([("c".to_string(), 5)].into(), 1).unwrap();
        assert!(loaded.aligned_to(&vocab2).is_err());
    }
}
