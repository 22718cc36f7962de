use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest non-zero sample size handled by exact enumeration.
pub const EXACT_LIMIT: usize = 25;
/// Fewest non-zero differences a test is run on.
pub const MIN_NONZERO: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub metabolite: String,
    /// One-tailed, alternative: the first model has lower error.
    pub p_value: f64,
    /// Experiments where the first model had strictly lower error.
    pub wins: usize,
    pub n_experiments: usize,
    /// Non-zero differences entering the test.
    pub n_used: usize,
    /// Mean of (first - second) errors.
    pub mean_diff: f64,
    /// `wins / n_experiments`.
    pub proportion: f64,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub method: Method,
}

/// Average ranks of `|d|` (1-based), ties sharing the mean rank.
pub fn signed_ranks(d: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && d[idx[j + 1]].abs() == d[idx[i]].abs() {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// `P(W+ <= w)` under the sign-symmetric null, by counting sign
/// assignments. Ranks may be half-integers.
pub fn exact_lower_tail(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[s] = number of sign assignments whose doubled W+ equals s
    let mut counts = vec![0u128; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    if w < 0.0 {
        return 0.0;
    }
    let limit = (2.0 * w + 1e-9).floor() as usize;
    let hit: u128 = counts.iter().take(limit.min(total) + 1).sum();
    hit as f64 / 2f64.powi(ranks.len() as i32)
}

/// Normal approximation of `P(W+ <= w)` with tie correction and a
/// continuity correction of one half.
pub fn normal_lower_tail(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    let z = (w - mean + 0.5) / var.sqrt();
    Normal::new(0.0, 1.0).expect("unit normal").cdf(z)
}

/// Paired one-tailed signed-rank test of `diffs = err_1 - err_2`, with the
/// alternative that the first model's errors are lower. Zero differences
/// are dropped before ranking.
pub fn wilcoxon_one_tailed(metabolite: &str, diffs: &[f64]) -> Result<PairedTestResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Domain("paired differences must be finite".into()));
    }
    let nonzero: Vec<f64> = diffs.iter().cloned().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::UndefinedTest("all paired differences are zero".into()));
    }
    if nonzero.len() < MIN_NONZERO {
        return Err(Error::UndefinedTest(format!(
            "{} non-zero differences, at least {MIN_NONZERO} needed",
            nonzero.len()
        )));
    }
    let ranks = signed_ranks(&nonzero);
    let w_plus: f64 = nonzero.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let (p, method) = if nonzero.len() <= EXACT_LIMIT {
        (exact_lower_tail(&ranks, w_plus), Method::Exact)
    } else {
        (normal_lower_tail(&ranks, w_plus), Method::Normal)
    };
    let wins = diffs.iter().filter(|d| **d < 0.0).count();
    Ok(PairedTestResult {
        metabolite: metabolite.to_string(),
        p_value: p.clamp(f64::MIN_POSITIVE, 1.0),
        wins,
        n_experiments: diffs.len(),
        n_used: nonzero.len(),
        mean_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
        proportion: wins as f64 / diffs.len() as f64,
        w_plus,
        method,
    })
}
