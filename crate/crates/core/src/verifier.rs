//! Empirical checks of the random-walk model: concentration of the partition
//! function over random contexts, and rank agreement between log set counts
//! and squared norms of summed word vectors.

use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::evalsuite::{fisher_rho_test, spearman, EvalError, FisherTest};
use crate::genwalk::random_unit;
use crate::miner::FrequentSetTable;
use crate::trainer::EmbeddingModel;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite partition value for context {0}")]
    NonFinite(usize),
    #[error("empty set table")]
    EmptyTable,
    #[error("word id {id} out of range for {n} vectors")]
    UnknownId { id: u32, n: usize },
    #[error(transparent)]
    Stats(#[from] EvalError),
}

/// `ln sum_i exp(x_i)` with max subtraction.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln Z_c` where `Z_c = sum_w exp(w . c)`.
pub fn log_partition(vectors: &EmbeddingModel, c: &[f64]) -> f64 {
    let logits: Vec<f64> = vectors.rows().map(|r| r.iter().zip(c).map(|(a, b)| a * b).sum()).collect();
    log_sum_exp(&logits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub order: usize,
    /// Order-k partition value `Z_c^k` per sampled context.
    pub values: Vec<f64>,
    pub log_values: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    /// Standard deviation over mean.
    pub cv: f64,
    pub excess_kurtosis: f64,
    /// Zero mean, unit (population) variance; all zeros when the values are constant.
    pub standardized: Vec<f64>,
}

impl ConcentrationReport {
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("standardized_value\n");
        for v in &self.standardized {
            writeln!(out, "{v}").unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "order = {}\ncontexts = {}\nmean = {}\nstd_dev = {}\ncv = {}\nexcess_kurtosis = {}\n",
            self.order,
            self.values.len(),
            self.mean,
            self.std_dev,
            self.cv,
            self.excess_kurtosis
        )
    }
}

/// Samples `contexts` uniform unit vectors and reports the spread of the
/// order-`k` partition values. The sum over k-tuples of
/// `exp(sum_i w_i . c)` equals `Z_c^k`, so only `Z_c` is evaluated.
pub fn partition_values(
    vectors: &EmbeddingModel,
    contexts: usize,
    order: usize,
    rng: &mut impl Rng,
) -> Result<ConcentrationReport, VerifyError> {
    if contexts < 2 {
        return Err(VerifyError::InvalidArgument("need at least 2 contexts".into()));
    }
    if order < 1 {
        return Err(VerifyError::InvalidArgument("order must be at least 1".into()));
    }
    let cs: Vec<Vec<f64>> = (0..contexts).map(|_| random_unit(vectors.dim(), rng)).collect();
    let log_values: Vec<f64> = cs.par_iter().map(|c| order as f64 * log_partition(vectors, c)).collect();
    let values: Vec<f64> = log_values.iter().map(|v| v.exp()).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite() || *v <= 0.0) {
        return Err(VerifyError::NonFinite(i));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let std_dev = m2.sqrt();
    let standardized = if std_dev > 0.0 {
        values.iter().map(|v| (v - mean) / std_dev).collect()
    } else {
        vec![0.0; values.len()]
    };
    let excess_kurtosis = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };
    Ok(ConcentrationReport {
        order,
        values,
        log_values,
        mean,
        std_dev,
        cv: std_dev / mean,
        excess_kurtosis,
        standardized,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub order: usize,
    pub sample_size: usize,
    /// `None` when either side has constant ranks.
    pub rho: Option<f64>,
    /// Present when `rho` is defined, `|rho| < 1`, and the sample has at least 4 pairs.
    pub significance: Option<FisherTest>,
    /// `(ln count, |sum of member vectors|^2)` per sampled set.
    pub pairs: Vec<(f64, f64)>,
}

impl CorrelationReport {
    pub fn is_degenerate(&self) -> bool {
        self.rho.is_none()
    }

    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("ln_count,sq_norm\n");
        for (a, b) in &self.pairs {
            writeln!(out, "{a},{b}").unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("order = {}\nsample_size = {}\n", self.order, self.sample_size);
        match self.rho {
            Some(r) => writeln!(out, "spearman_rho = {r}").unwrap(),
            None => out.push_str("spearman_rho = degenerate\n"),
        }
        if let Some(t) = self.significance {
            writeln!(out, "fisher_z = {}\nfisher_p = {}", t.z, t.p_value).unwrap();
        }
        out
    }
}

/// Spearman correlation between `ln h(S)` and `|sum_{i in S} w_i|^2` over up
/// to `sample` sets drawn uniformly without replacement.
pub fn norm_frequency_correlation(
    vectors: &EmbeddingModel,
    table: &FrequentSetTable,
    sample: usize,
    rng: &mut impl Rng,
) -> Result<CorrelationReport, VerifyError> {
    if table.is_empty() {
        return Err(VerifyError::EmptyTable);
    }
    let n = vectors.n_words();
    for set in &table.sets {
        if let Some(&id) = set.ids.iter().find(|&&id| id as usize >= n) {
            return Err(VerifyError::UnknownId { id, n });
        }
    }
    let chosen: Vec<usize> = if sample >= table.len() {
        (0..table.len()).collect()
    } else {
        let mut idx = index::sample(rng, table.len(), sample).into_vec();
        idx.sort_unstable();
        idx
    };
    let pairs: Vec<(f64, f64)> = chosen
        .iter()
        .map(|&i| {
            let set = &table.sets[i];
            let s = vectors.sum_rows(&set.ids);
            ((set.count as f64).ln(), s.iter().map(|x| x * x).sum())
        })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let rho = if pairs.len() >= 2 { spearman(&x, &y)? } else { None };
    let significance = rho.and_then(|r| fisher_rho_test(r, pairs.len(), None).ok());
    Ok(CorrelationReport { order: table.order, sample_size: pairs.len(), rho, significance, pairs })
}
