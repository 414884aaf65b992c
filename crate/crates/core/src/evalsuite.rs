//! Benchmark evaluation: word similarity, CosAdd analogies, offset-based
//! relation classification, centroid text classification, and the
//! significance statistics reported alongside them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

use crate::trainer::{EmbeddingModel, LoadedModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("dataset {0}: no usable rows")]
    NoUsableRows(String),
    #[error("dataset {0}: training data has a single class")]
    SingleClass(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Word vectors addressed by word string.
#[derive(Debug, Clone)]
pub struct Embeddings {
    words: Vec<String>,
    index: HashMap<String, u32>,
    model: EmbeddingModel,
}

impl Embeddings {
    pub fn new(words: Vec<String>, model: EmbeddingModel) -> Self {
        assert_eq!(words.len(), model.n_words(), "one word per vector");
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Embeddings { words, index, model }
    }

    pub fn from_loaded(loaded: LoadedModel) -> Self {
        Self::new(loaded.words, loaded.model)
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.id(word).map(|i| self.model.row(i))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn model(&self) -> &EmbeddingModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EvalError> {
    if u.len() != v.len() {
        return Err(EvalError::DimensionMismatch(u.len(), v.len()));
    }
    Ok(cosine_unchecked(u, v))
}

fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let denom = norm(u) * norm(v);
    if denom == 0.0 {
        0.0
    } else {
        dot(u, v) / denom
    }
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation. `Ok(None)` when either side has constant ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::InvalidArgument("spearman needs at least 2 samples".into()));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherTest {
    pub z: f64,
    pub p_value: f64,
}

/// Fisher z-test on correlation coefficients: one-sample against zero, or
/// two-sample for the difference of `(rho1, n1)` and `second`.
pub fn fisher_rho_test(rho1: f64, n1: usize, second: Option<(f64, usize)>) -> Result<FisherTest, EvalError> {
    let check = |rho: f64, n: usize| {
        if rho.is_nan() || rho.abs() >= 1.0 {
            return Err(EvalError::InvalidArgument(format!("|rho| must be < 1, got {rho}")));
        }
        if n < 4 {
            return Err(EvalError::InvalidArgument(format!("sample size {n} < 4")));
        }
        Ok(())
    };
    check(rho1, n1)?;
    let z = match second {
        None => rho1.atanh() * ((n1 - 3) as f64).sqrt(),
        Some((rho2, n2)) => {
            check(rho2, n2)?;
            let se = (1.0 / (n1 - 3) as f64 + 1.0 / (n2 - 3) as f64).sqrt();
            (rho1.atanh() - rho2.atanh()) / se
        }
    };
    Ok(FisherTest { z, p_value: erfc(z.abs() / std::f64::consts::SQRT_2) })
}

fn binomial_ln_pmf(i: u64, n: u64, p: f64) -> f64 {
    let mut v = ln_binomial(n, i);
    if i > 0 {
        v += i as f64 * p.ln();
    }
    if n > i {
        v += (n - i) as f64 * (-p).ln_1p();
    }
    v
}

/// `P(X >= s)` for `X ~ Binomial(n, p)`.
pub fn binomial_upper_tail(s: u64, n: u64, p: f64) -> f64 {
    (s..=n).map(|i| binomial_ln_pmf(i, n, p).exp()).sum::<f64>().min(1.0)
}

/// `P(X <= s)` for `X ~ Binomial(n, p)`.
pub fn binomial_lower_tail(s: u64, n: u64, p: f64) -> f64 {
    (0..=s.min(n)).map(|i| binomial_ln_pmf(i, n, p).exp()).sum::<f64>().min(1.0)
}

const BISECTION_TOL: f64 = 1e-10;

/// Finds `p` in [0, 1] where the monotone `f` crosses `target`.
fn bisect(f: impl Fn(f64) -> f64, target: f64, increasing: bool) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < target) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact two-sided binomial interval for `s` successes in `n` trials. With
/// no trials both endpoint rules apply and the interval is all of [0, 1].
pub fn clopper_pearson_interval(s: u64, n: u64, alpha: f64) -> Result<(f64, f64), EvalError> {
    if s > n {
        return Err(EvalError::InvalidArgument(format!("need 0 <= s <= n (s={s}, n={n})")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EvalError::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let half = alpha / 2.0;
    let lower = if s == 0 { 0.0 } else { bisect(|p| binomial_upper_tail(s, n, p), half, true) };
    let upper = if s == n { 1.0 } else { bisect(|p| binomial_lower_tail(s, n, p), half, false) };
    Ok((lower, upper))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDataset {
    pub name: String,
    pub rows: Vec<(String, String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalogyDataset {
    pub name: String,
    pub rows: Vec<[String; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationDataset {
    pub name: String,
    pub rows: Vec<(String, String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextDataset {
    pub name: String,
    pub train: Vec<(bool, Vec<String>)>,
    pub test: Vec<(bool, Vec<String>)>,
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_tsv(path: &Path, fields: usize) -> Result<Vec<(usize, Vec<String>)>, EvalError> {
    let text = fs::read_to_string(path)
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(str::to_string).collect();
        if cols.len() != fields {
            return Err(EvalError::Parse {
                file: path.display().to_string(),
                line: idx + 1,
                msg: format!("expected {fields} tab-separated fields, found {}", cols.len()),
            });
        }
        rows.push((idx + 1, cols));
    }
    if rows.is_empty() {
        return Err(EvalError::Parse { file: path.display().to_string(), line: 0, msg: "empty dataset".into() });
    }
    Ok(rows)
}

impl SimilarityDataset {
    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let rows = read_tsv(path, 3)?
            .into_iter()
            .map(|(line, mut c)| {
                let rating: f64 = c[2].trim().parse().ok().filter(|r: &f64| r.is_finite()).ok_or_else(|| {
                    EvalError::Parse { file: path.display().to_string(), line, msg: format!("bad rating {:?}", c[2]) }
                })?;
                let w2 = c.swap_remove(1);
                let w1 = c.swap_remove(0);
                Ok((w1, w2, rating))
            })
            .collect::<Result<_, EvalError>>()?;
        Ok(SimilarityDataset { name: dataset_name(path), rows })
    }
}

impl AnalogyDataset {
    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let rows = read_tsv(path, 4)?
            .into_iter()
            .map(|(_, c)| [c[0].clone(), c[1].clone(), c[2].clone(), c[3].clone()])
            .collect();
        Ok(AnalogyDataset { name: dataset_name(path), rows })
    }
}

impl RelationDataset {
    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let rows = read_tsv(path, 3)?
            .into_iter()
            .map(|(_, mut c)| {
                let w2 = c.swap_remove(2);
                let w1 = c.swap_remove(1);
                (c.swap_remove(0), w1, w2)
            })
            .collect();
        Ok(RelationDataset { name: dataset_name(path), rows })
    }
}

fn read_text_rows(path: &Path) -> Result<Vec<(bool, Vec<String>)>, EvalError> {
    read_tsv(path, 2)?
        .into_iter()
        .map(|(line, c)| {
            let label = match c[0].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(EvalError::Parse {
                        file: path.display().to_string(),
                        line,
                        msg: format!("label must be 0 or 1, got {other:?}"),
                    })
                }
            };
            Ok((label, c[1].split_whitespace().map(str::to_string).collect()))
        })
        .collect()
}

impl TextDataset {
    pub fn read(train: &Path, test: &Path) -> Result<Self, EvalError> {
        Ok(TextDataset { name: dataset_name(train), train: read_text_rows(train)?, test: read_text_rows(test)? })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub metric: String,
    /// `None` when the metric is undefined (e.g. constant ranks).
    pub value: Option<f64>,
    pub coverage: f64,
    pub annotations: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn annotation(&self, key: &str) -> Option<f64> {
        self.annotations.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    /// `dataset<TAB>metric<TAB>value<TAB>coverage` lines, annotations after
    /// the headline metric.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let value = self.value.map_or_else(|| "nan".to_string(), |v| v.to_string());
        writeln!(out, "{}\t{}\t{}\t{}", self.dataset, self.metric, value, self.coverage).unwrap();
        for (k, v) in &self.annotations {
            writeln!(out, "{}\t{}\t{}\t{}", self.dataset, k, v, self.coverage).unwrap();
        }
        out
    }
}

fn accuracy_annotations(correct: usize, total: usize) -> Vec<(String, f64)> {
    let mut ann = vec![("correct".to_string(), correct as f64), ("evaluated".to_string(), total as f64)];
    if let Ok((lo, hi)) = clopper_pearson_interval(correct as u64, total as u64, 0.05) {
        ann.push(("cp_lower_95".into(), lo));
        ann.push(("cp_upper_95".into(), hi));
    }
    ann
}

/// Cosines of the in-vocabulary pairs of `ds`, with their ratings and row indices.
fn similarity_scores(emb: &Embeddings, ds: &SimilarityDataset) -> (Vec<f64>, Vec<f64>, Vec<usize>, usize) {
    let mut cos = Vec::new();
    let mut ratings = Vec::new();
    let mut rows = Vec::new();
    let mut zero = 0;
    for (i, (w1, w2, r)) in ds.rows.iter().enumerate() {
        if let (Some(a), Some(b)) = (emb.get(w1), emb.get(w2)) {
            if norm(a) == 0.0 || norm(b) == 0.0 {
                zero += 1;
            }
            cos.push(cosine_unchecked(a, b));
            ratings.push(*r);
            rows.push(i);
        }
    }
    (cos, ratings, rows, zero)
}

pub fn eval_similarity(emb: &Embeddings, ds: &SimilarityDataset) -> Result<EvalReport, EvalError> {
    let (cos, ratings, _, zero) = similarity_scores(emb, ds);
    if cos.is_empty() {
        return Err(EvalError::NoUsableRows(ds.name.clone()));
    }
    let coverage = cos.len() as f64 / ds.rows.len() as f64;
    let rho = if cos.len() >= 2 { spearman(&cos, &ratings)? } else { None };
    let mut annotations = vec![("pairs".to_string(), cos.len() as f64)];
    if let Some(rho) = rho {
        if let Ok(t) = fisher_rho_test(rho, cos.len(), None) {
            annotations.push(("fisher_z".into(), t.z));
            annotations.push(("fisher_p".into(), t.p_value));
        }
    }
    if zero > 0 {
        annotations.push(("zero_vector_pairs".into(), zero as f64));
    }
    Ok(EvalReport { dataset: ds.name.clone(), metric: "spearman".into(), value: rho, coverage, annotations })
}

/// Index of the best candidate by cosine with `query`, skipping `exclude`.
/// Ties go to the lowest id.
pub fn cosadd_answer(emb: &Embeddings, query: &[f64], exclude: &[u32]) -> Option<u32> {
    let qn = norm(query);
    let mut best: Option<(u32, f64)> = None;
    for (id, row) in emb.model.rows().enumerate() {
        let id = id as u32;
        if exclude.contains(&id) {
            continue;
        }
        let denom = qn * norm(row);
        let score = if denom == 0.0 { 0.0 } else { dot(query, row) / denom };
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((id, score));
        }
    }
    best.map(|(id, _)| id)
}

pub fn eval_analogy_cosadd(emb: &Embeddings, ds: &AnalogyDataset) -> Result<EvalReport, EvalError> {
    let mut covered = 0;
    let mut answered = 0;
    let mut correct = 0;
    for row in &ds.rows {
        let ids: Option<Vec<u32>> = row.iter().map(|w| emb.id(w)).collect();
        let Some(ids) = ids else { continue };
        covered += 1;
        let (a, b, c, gold) = (ids[0], ids[1], ids[2], ids[3]);
        if [a, b, c].contains(&gold) {
            continue;
        }
        answered += 1;
        let query: Vec<f64> = emb
            .model
            .row(b)
            .iter()
            .zip(emb.model.row(a))
            .zip(emb.model.row(c))
            .map(|((vb, va), vc)| vb - va + vc)
            .collect();
        if cosadd_answer(emb, &query, &[a, b, c]) == Some(gold) {
            correct += 1;
        }
    }
    if answered == 0 {
        return Err(EvalError::NoUsableRows(ds.name.clone()));
    }
    Ok(EvalReport {
        dataset: ds.name.clone(),
        metric: "accuracy".into(),
        value: Some(correct as f64 / answered as f64),
        coverage: covered as f64 / ds.rows.len() as f64,
        annotations: accuracy_annotations(correct, answered),
    })
}

pub fn eval_relation_diffvec(emb: &Embeddings, ds: &RelationDataset) -> Result<EvalReport, EvalError> {
    let usable: Vec<(&str, Vec<f64>)> = ds
        .rows
        .iter()
        .filter_map(|(rel, w1, w2)| {
            let (a, b) = (emb.get(w1)?, emb.get(w2)?);
            Some((rel.as_str(), b.iter().zip(a).map(|(x, y)| x - y).collect()))
        })
        .collect();
    if usable.len() < 2 {
        return Err(EvalError::NoUsableRows(ds.name.clone()));
    }
    let norms: Vec<f64> = usable.iter().map(|(_, v)| norm(v)).collect();
    let mut correct = 0;
    for (i, (rel, off)) in usable.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, (_, other)) in usable.iter().enumerate() {
            if i == j {
                continue;
            }
            let denom = norms[i] * norms[j];
            let score = if denom == 0.0 { 0.0 } else { dot(off, other) / denom };
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        if let Some((j, _)) = best {
            if usable[j].0 == *rel {
                correct += 1;
            }
        }
    }
    Ok(EvalReport {
        dataset: ds.name.clone(),
        metric: "accuracy".into(),
        value: Some(correct as f64 / usable.len() as f64),
        coverage: usable.len() as f64 / ds.rows.len() as f64,
        annotations: accuracy_annotations(correct, usable.len()),
    })
}

/// Mean of the in-vocabulary token vectors, repeats counted. `None` when no
/// token is in the vocabulary.
pub fn centroid(emb: &Embeddings, tokens: &[String]) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; emb.dim()];
    let mut count = 0usize;
    for v in tokens.iter().filter_map(|t| emb.get(t)) {
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        count += 1;
    }
    (count > 0).then(|| sum.into_iter().map(|s| s / count as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }

    /// Label 1 when the probability is at least 0.5.
    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) >= 0.0
    }

    /// Mean log-loss over a labeled sample.
    pub fn loss(&self, features: &[Vec<f64>], labels: &[bool]) -> f64 {
        let total: f64 = features
            .iter()
            .zip(labels)
            .map(|(x, &y)| {
                let z = self.decision(x);
                if y {
                    softplus(-z)
                } else {
                    softplus(z)
                }
            })
            .sum();
        total / features.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub model: LogisticModel,
    /// Loss before each epoch, then after the last one.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent on mean log-loss from zero weights.
pub fn train_logreg(features: &[Vec<f64>], labels: &[bool], epochs: usize, lr: f64) -> Result<LogisticFit, EvalError> {
    if features.len() != labels.len() {
        return Err(EvalError::LengthMismatch(features.len(), labels.len()));
    }
    if !(labels.contains(&true) && labels.contains(&false)) {
        return Err(EvalError::SingleClass("logistic regression".into()));
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|x| x.len() != d) {
        return Err(EvalError::DimensionMismatch(d, bad.len()));
    }
    let n = features.len() as f64;
    let mut model = LogisticModel { weights: vec![0.0; d], intercept: 0.0 };
    let mut losses = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        losses.push(model.loss(features, labels));
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let err = model.probability(x) - if y { 1.0 } else { 0.0 };
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += err * xi);
            gb += err;
        }
        model.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= lr * g / n);
        model.intercept -= lr * gb / n;
    }
    losses.push(model.loss(features, labels));
    Ok(LogisticFit { model, losses })
}

pub const LOGREG_EPOCHS: usize = 500;
pub const LOGREG_LR: f64 = 0.1;

pub fn eval_textclass(emb: &Embeddings, ds: &TextDataset, epochs: usize, lr: f64) -> Result<EvalReport, EvalError> {
    let featurize = |rows: &[(bool, Vec<String>)]| -> (Vec<Vec<f64>>, Vec<bool>) {
        rows.iter().filter_map(|(y, toks)| centroid(emb, toks).map(|x| (x, *y))).unzip()
    };
    let (train_x, train_y) = featurize(&ds.train);
    let (test_x, test_y) = featurize(&ds.test);
    if train_x.is_empty() || test_x.is_empty() {
        return Err(EvalError::NoUsableRows(ds.name.clone()));
    }
    let fit = train_logreg(&train_x, &train_y, epochs, lr).map_err(|e| match e {
        EvalError::SingleClass(_) => EvalError::SingleClass(ds.name.clone()),
        other => other,
    })?;
    let correct = test_x.iter().zip(&test_y).filter(|(x, &y)| fit.model.predict(x) == y).count();
    let total_rows = ds.train.len() + ds.test.len();
    Ok(EvalReport {
        dataset: ds.name.clone(),
        metric: "accuracy".into(),
        value: Some(correct as f64 / test_x.len() as f64),
        coverage: (train_x.len() + test_x.len()) as f64 / total_rows as f64,
        annotations: accuracy_annotations(correct, test_x.len()),
    })
}

/// Min-max scales ratings to [0, 1]; a constant dataset maps to 0.5.
pub fn normalize_ratings(ds: &SimilarityDataset) -> SimilarityDataset {
    let (lo, hi) = ds
        .rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.2), hi.max(r.2)));
    let rows = ds
        .rows
        .iter()
        .map(|(a, b, r)| {
            let v = if hi > lo { (r - lo) / (hi - lo) } else { 0.5 };
            (a.clone(), b.clone(), v)
        })
        .collect();
    SimilarityDataset { name: ds.name.clone(), rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergentPair {
    pub word1: String,
    pub word2: String,
    pub score_a: f64,
    pub score_b: f64,
    pub rating: f64,
}

impl DivergentPair {
    pub fn difference(&self) -> f64 {
        self.score_a - self.score_b
    }
}

fn standardize_half(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    x.iter().map(|v| if sd > 0.0 { (v - mean) / sd + 0.5 } else { 0.5 }).collect()
}

/// Pairs whose standardized scores under the two models differ by more than
/// one standard deviation of the score differences, largest gap first.
pub fn divergence_report(
    a: &Embeddings,
    b: &Embeddings,
    pooled: &SimilarityDataset,
) -> Result<Vec<DivergentPair>, EvalError> {
    let mut rows = Vec::new();
    let mut score_a = Vec::new();
    let mut score_b = Vec::new();
    for row in &pooled.rows {
        let (w1, w2, _) = row;
        if let (Some(a1), Some(a2), Some(b1), Some(b2)) = (a.get(w1), a.get(w2), b.get(w1), b.get(w2)) {
            rows.push(row);
            score_a.push(cosine_unchecked(a1, a2));
            score_b.push(cosine_unchecked(b1, b2));
        }
    }
    if rows.len() < 2 {
        return Err(EvalError::NoUsableRows(format!("{} (shared coverage {})", pooled.name, rows.len())));
    }
    let sa = standardize_half(&score_a);
    let sb = standardize_half(&score_b);
    let diffs: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut picked: Vec<usize> = (0..diffs.len()).filter(|&i| diffs[i].abs() > sd).collect();
    picked.sort_by(|&i, &j| diffs[j].abs().total_cmp(&diffs[i].abs()).then(i.cmp(&j)));
    Ok(picked
        .into_iter()
        .map(|i| DivergentPair {
            word1: rows[i].0.clone(),
            word2: rows[i].1.clone(),
            score_a: sa[i],
            score_b: sb[i],
            rating: rows[i].2,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(words: &[&str], rows: Vec<Vec<f64>>) -> Embeddings {
        let d = rows[0].len();
        Embeddings::new(words.iter().map(|w| w.to_string()).collect(), EmbeddingModel::from_rows(rows, d))
    }

    fn s(x: &str) -> String {
        x.to_string()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[0.3, 0.4], &[0.3, 0.4]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(cosine(&[1.0], &[1.0, 2.0]), Err(EvalError::DimensionMismatch(1, 2))));
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[2.0, 4.0, 8.0, 9.0]).unwrap(), Some(1.0));
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
        let r = spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert_eq!(spearman(&x, &[5.0; 4]).unwrap(), None);
        assert!(spearman(&x, &[1.0]).is_err());
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn fisher_examples() {
        let t = fisher_rho_test(0.5, 28, None).unwrap();
        assert!((t.z - 2.7465).abs() < 1e-4);
        let t = fisher_rho_test(0.3, 50, Some((0.3, 50))).unwrap();
        assert_eq!(t.z, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-15);
        assert_eq!(fisher_rho_test(0.0, 10, None).unwrap().z, 0.0);
        assert!(fisher_rho_test(1.0, 10, None).is_err());
        assert!(fisher_rho_test(0.2, 3, None).is_err());
        // z = 1.959964 -> p = 0.05
        let rho = (1.959963984540054f64 / 5.0).tanh();
        assert!((fisher_rho_test(rho, 28, None).unwrap().p_value - 0.05).abs() < 1e-9);
    }

    #[test]
    fn clopper_pearson_examples() {
        let (lo, hi) = clopper_pearson_interval(10, 10, 0.05).unwrap();
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-10 && hi == 1.0);
        assert!((lo - 0.69150).abs() < 1e-5);
        let (lo, hi) = clopper_pearson_interval(0, 10, 0.05).unwrap();
        assert!(lo == 0.0 && (hi - 0.30850).abs() < 1e-5);
        let (lo, hi) = clopper_pearson_interval(5, 10, 0.05).unwrap();
        assert!((lo - 0.18709).abs() < 1e-5 && (hi - 0.81291).abs() < 1e-5);
        assert!(clopper_pearson_interval(3, 2, 0.05).is_err());
        assert!(clopper_pearson_interval(1, 2, 1.0).is_err());
    }

    #[test]
    fn clopper_pearson_brackets_and_is_monotone() {
        for n in 1..=25u64 {
            let mut prev = (0.0, 0.0);
            for s in 0..=n {
                let (lo, hi) = clopper_pearson_interval(s, n, 0.05).unwrap();
                let p = s as f64 / n as f64;
                assert!(lo <= p && p <= hi);
                assert!(lo >= prev.0 && hi >= prev.1);
                prev = (lo, hi);
            }
        }
    }

    #[test]
    fn similarity_with_hand_vectors() {
        let e = emb(&["a", "b", "c", "d"], vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.1]]);
        let ds = SimilarityDataset {
            name: "toy".into(),
            rows: vec![
                (s("a"), s("b"), 5.0),
                (s("a"), s("c"), 1.0),
                (s("a"), s("d"), 3.0),
                (s("a"), s("zzz"), 2.0),
            ],
        };
        let r = eval_similarity(&e, &ds).unwrap();
        // cosines: 0.7071, 0, 0.995 -> ranks 2,1,3 vs ratings ranks 3,1,2
        let oracle = spearman(&[std::f64::consts::FRAC_1_SQRT_2, 0.0, 0.99503719], &[5.0, 1.0, 3.0]).unwrap();
        assert_eq!(r.value, oracle);
        assert!((r.value.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(r.coverage, 0.75);

        let none = SimilarityDataset { name: "oov".into(), rows: vec![(s("x"), s("y"), 1.0)] };
        assert!(matches!(eval_similarity(&e, &none), Err(EvalError::NoUsableRows(n)) if n == "oov"));
    }

    #[test]
    fn cosadd_examples() {
        let r3 = 1.0 / 3f64.sqrt();
        let e = emb(
            &["a", "b", "c", "t", "u"],
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![-r3, r3, r3], vec![1.0, 1.0, 0.0]],
        );
        let ds = AnalogyDataset {
            name: "toy".into(),
            rows: vec![
                [s("a"), s("b"), s("c"), s("t")],
                [s("a"), s("b"), s("c"), s("a")],
                [s("a"), s("b"), s("q"), s("t")],
            ],
        };
        let r = eval_analogy_cosadd(&e, &ds).unwrap();
        assert_eq!(r.value, Some(1.0));
        assert_eq!(r.annotation("evaluated"), Some(1.0));
        assert!((r.coverage - 2.0 / 3.0).abs() < 1e-15);

        let two = emb(&["a", "b", "c", "d"], vec![vec![1.0], vec![2.0], vec![3.0], vec![-1.0]]);
        assert_eq!(cosadd_answer(&two, &[4.0], &[0, 1, 2]), Some(3));
    }

    #[test]
    fn diffvec_examples() {
        let e = emb(
            &["king", "queen", "man", "woman", "paris", "france"],
            vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![2.0, 1.0], vec![2.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
        );
        let ds = RelationDataset {
            name: "toy".into(),
            rows: vec![
                (s("r1"), s("king"), s("queen")),
                (s("r1"), s("man"), s("woman")),
                (s("r2"), s("paris"), s("france")),
            ],
        };
        let r = eval_relation_diffvec(&e, &ds).unwrap();
        assert!((r.value.unwrap() - 2.0 / 3.0).abs() < 1e-12);

        let same = RelationDataset {
            name: "same".into(),
            rows: vec![(s("r"), s("king"), s("queen")), (s("r"), s("king"), s("queen"))],
        };
        assert_eq!(eval_relation_diffvec(&e, &same).unwrap().value, Some(1.0));

        let one = RelationDataset { name: "one".into(), rows: vec![(s("r"), s("king"), s("queen"))] };
        assert!(eval_relation_diffvec(&e, &one).is_err());
    }

    #[test]
    fn centroid_examples() {
        let e = emb(&["u", "v"], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(centroid(&e, &[s("u")]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(centroid(&e, &[s("u"), s("v")]).unwrap(), vec![0.5, 0.5]);
        let c = centroid(&e, &[s("u"), s("u"), s("v"), s("oov")]).unwrap();
        assert!((c[0] - 2.0 / 3.0).abs() < 1e-15 && (c[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(centroid(&e, &[s("oov")]).is_none());
    }

    #[test]
    fn logreg_examples() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![false, true];
        let fit = train_logreg(&x, &y, LOGREG_EPOCHS, LOGREG_LR).unwrap();
        assert!(x.iter().zip(&y).all(|(xi, &yi)| fit.model.predict(xi) == yi));

        let zero = LogisticModel { weights: vec![0.0, 0.0], intercept: 0.0 };
        assert_eq!(zero.probability(&[3.0, -7.0]), 0.5);

        let x4 = vec![vec![0.0, 1.0], vec![1.0, 0.5], vec![2.0, 2.0], vec![3.0, 1.0]];
        let y4 = vec![false, false, true, true];
        let fit = train_logreg(&x4, &y4, LOGREG_EPOCHS, LOGREG_LR).unwrap();
        assert!(fit.losses.windows(2).all(|w| w[1] < w[0]));

        assert!(matches!(train_logreg(&x, &[true, true], 10, 0.1), Err(EvalError::SingleClass(_))));
    }

    #[test]
    fn normalize_examples() {
        let ds = |r: &[f64]| SimilarityDataset {
            name: "n".into(),
            rows: r.iter().map(|&v| (s("a"), s("b"), v)).collect(),
        };
        let vals = |d: SimilarityDataset| d.rows.into_iter().map(|r| r.2).collect::<Vec<_>>();
        assert_eq!(vals(normalize_ratings(&ds(&[2.0, 4.0, 6.0]))), vec![0.0, 0.5, 1.0]);
        assert_eq!(vals(normalize_ratings(&ds(&[3.0, 3.0]))), vec![0.5, 0.5]);
        let v = vals(normalize_ratings(&ds(&[1.0, 2.0, 4.0])));
        assert!(v[0] == 0.0 && (v[1] - 1.0 / 3.0).abs() < 1e-15 && v[2] == 1.0);
    }

    fn pooled(n: usize) -> SimilarityDataset {
        SimilarityDataset {
            name: "pool".into(),
            rows: (0..n).map(|i| (format!("x{i}"), format!("y{i}"), i as f64 / n as f64)).collect(),
        }
    }

    fn pair_model(angles: &[f64]) -> Embeddings {
        let mut words = Vec::new();
        let mut rows = Vec::new();
        for (i, a) in angles.iter().enumerate() {
            words.push(format!("x{i}"));
            rows.push(vec![1.0, 0.0]);
            words.push(format!("y{i}"));
            rows.push(vec![a.cos(), a.sin()]);
        }
        Embeddings::new(words, EmbeddingModel::from_rows(rows, 2))
    }

    #[test]
    fn divergence_examples() {
        let angles: Vec<f64> = (0..20).map(|i| 0.05 * i as f64).collect();
        let a = pair_model(&angles);
        assert!(divergence_report(&a, &a, &pooled(20)).unwrap().is_empty());

        let mut shifted = angles.clone();
        shifted[7] = 3.0;
        shifted[3] += 0.02;
        let b = pair_model(&shifted);
        let ab = divergence_report(&a, &b, &pooled(20)).unwrap();
        assert_eq!(ab[0].word1, "x7");
        let ba = divergence_report(&b, &a, &pooled(20)).unwrap();
        let names = |v: &[DivergentPair]| v.iter().map(|p| p.word1.clone()).collect::<Vec<_>>();
        assert_eq!(names(&ab), names(&ba));

        assert!(divergence_report(&a, &b, &pooled(1)).is_err());
    }
}
