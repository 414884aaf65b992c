//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use statrs::function::beta::beta_reg;

/// Every window's distinct ids, computed straight from positions.
pub fn brute_windows(doc: &[u32], width: usize) -> Vec<Vec<u32>> {
    let spans: Vec<&[u32]> = if doc.is_empty() {
        vec![]
    } else if doc.len() < width {
        vec![doc]
    } else {
        (0..=doc.len() - width).map(|s| &doc[s..s + width]).collect()
    };
    spans
        .into_iter()
        .map(|s| {
            let mut ids = s.to_vec();
            ids.sort_unstable();
            ids.dedup();
            ids
        })
        .collect()
}

/// Support of every set of size 1..=k_max by enumerating each window's subsets.
pub fn brute_supports(docs: &[Vec<u32>], width: usize, k_max: usize) -> BTreeMap<Vec<u32>, u64> {
    let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
    for doc in docs {
        for ids in brute_windows(doc, width) {
            let m = ids.len();
            for mask in 1u32..(1 << m) {
                if mask.count_ones() as usize > k_max {
                    continue;
                }
                let subset: Vec<u32> = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| ids[i]).collect();
                *counts.entry(subset).or_default() += 1;
            }
        }
    }
    counts.into_iter().collect()
}

/// Set-file text per order, as the brute-force enumeration predicts it.
pub fn brute_tables(docs: &[Vec<u32>], width: usize, support: u64, k_max: usize) -> Vec<String> {
    let counts = brute_supports(docs, width, k_max);
    (1..=k_max)
        .map(|k| {
            let mut text = format!("#kway\tk={k}\tsupport={support}\twindow={width}\tstride=1\n");
            for (ids, &c) in counts.iter().filter(|(ids, &c)| ids.len() == k && c >= support) {
                for id in ids {
                    text.push_str(&format!("{id}\t"));
                }
                text.push_str(&format!("{c}\n"));
            }
            text
        })
        .collect()
}

pub fn random_corpus(rng: &mut impl Rng, max_docs: usize, max_len: usize, vocab: u32) -> Vec<Vec<u32>> {
    let docs = rng.random_range(1..=max_docs);
    (0..docs)
        .map(|_| {
            let len = rng.random_range(0..=max_len);
            (0..len).map(|_| rng.random_range(0..vocab)).collect()
        })
        .collect()
}

/// 1 - 6 sum d^2 / (n (n^2 - 1)); valid only without ties.
pub fn rank_formula_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64 + 1.0;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Average ranks by counting, O(n^2): rank = #less + (#equal + 1) / 2.
pub fn counting_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Clopper-Pearson endpoints from the regularized incomplete beta function:
/// P(X >= s; p) = I_p(s, n - s + 1) and P(X <= s; p) = 1 - I_p(s + 1, n - s).
pub fn beta_clopper_pearson(s: u64, n: u64, alpha: f64) -> (f64, f64) {
    let solve = |f: &dyn Fn(f64) -> f64| {
        // f is increasing in p; find f(p) = 0
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let (s_f, n_f) = (s as f64, n as f64);
    let lower = if s == 0 { 0.0 } else { solve(&|p| beta_reg(s_f, n_f - s_f + 1.0, p) - alpha / 2.0) };
    let upper = if s == n { 1.0 } else { solve(&|p| alpha / 2.0 - (1.0 - beta_reg(s_f + 1.0, n_f - s_f, p))) };
    (lower, upper)
}

/// Sum of exp(sum_i w_i . c) over all ordered k-tuples of rows.
pub fn brute_partition(rows: &[Vec<f64>], c: &[f64], k: usize) -> f64 {
    let dots: Vec<f64> = rows.iter().map(|w| w.iter().zip(c).map(|(a, b)| a * b).sum()).collect();
    let n = rows.len();
    let mut idx = vec![0usize; k];
    let mut total = 0.0;
    loop {
        total += idx.iter().map(|&i| dots[i]).sum::<f64>().exp();
        let Some(pos) = (0..k).rev().find(|&p| idx[p] + 1 < n) else {
            return total;
        };
        idx[pos] += 1;
        idx[pos + 1..].iter_mut().for_each(|i| *i = 0);
    }
}

/// One set's objective term m (ln h - |sum w|^2 + C)^2, written out directly.
pub fn term_value(rows: &[Vec<f64>], bias: f64, h: f64, theta: f64) -> f64 {
    let d = rows[0].len();
    let sq: f64 = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>().powi(2)).sum();
    let r = h.ln() - sq + bias;
    h.min(theta) * r * r
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
