//! Scoring, statistics and the least-squares baseline.

pub mod lls;
pub mod report;
pub mod wilcoxon;


use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub use lls::{lls_quantify, nnls};
pub use report::{build_report, EvalReport};
pub use wilcoxon::{wilcoxon_one_tailed, PairedTestResult};

use crate::error::{dim, domain, Error, Result};
use crate::preprocess::{ModelInput, TargetNorm, TargetVector};

/// Mean absolute deviation over every channel and point.
pub fn spectral_mae(clean: &ModelInput, reconstructed: &ModelInput) -> Result<f64> {
    if clean.channel_labels != reconstructed.channel_labels || clean.channels.len() != reconstructed.channels.len() {
        return Err(dim("reconstruction shape differs from the reference"));
    }
    Ok(mean_abs_diff(&clean.channels, &reconstructed.channels))
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean absolute error between two max-normalised target vectors.
pub fn concentration_mae(pred: &TargetVector, truth: &TargetVector) -> Result<f64> {
    if pred.norm_mode != TargetNorm::Max || truth.norm_mode != TargetNorm::Max {
        return Err(Error::Contract(format!(
            "scoring needs max-normalised vectors, got {:?} and {:?}",
            pred.norm_mode, truth.norm_mode
        )));
    }
    if pred.values.len() != truth.values.len() || pred.values.is_empty() {
        return Err(dim(format!(
            "{} predicted against {} true concentrations",
            pred.values.len(),
            truth.values.len()
        )));
    }
    Ok(mean_abs_diff(&pred.values, &truth.values))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub se_slope: f64,
    /// Two-sided, null hypothesis slope = 0.
    pub p_value: f64,
    pub n: usize,
}

/// Ordinary least squares of predicted (y) on truth (x).
pub fn fit_regression(pairs: &[(f64, f64)]) -> Result<RegressionFit> {
    let n = pairs.len();
    if n < 3 {
        return Err(domain(format!("regression needs at least 3 pairs, got {n}")));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(domain("regression pairs must be finite"));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(domain("degenerate regression: truth values have zero variance"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pairs.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>().max(0.0);
    let r_squared = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    let se_slope = (sse / (nf - 2.0) / sxx).sqrt();
    let p_value = if se_slope > 0.0 {
        let t = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| domain(e.to_string()))?;
        2.0 * (1.0 - t.cdf((slope / se_slope).abs()))
    } else if slope != 0.0 {
        0.0
    } else {
        1.0
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
        se_slope,
        p_value,
        n,
    })
}

/// One prediction on one spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub spectrum_id: String,
    /// Series the spectrum belongs to; the statistical unit.
    pub experiment: String,
    pub model: String,
    pub predicted: TargetVector,
    pub truth: TargetVector,
}

impl PredictionRecord {
    /// Per-metabolite absolute errors.
    pub fn abs_errors(&self) -> Result<Vec<f64>> {
        concentration_mae(&self.predicted, &self.truth)?;
        Ok(self
            .predicted
            .values
            .iter()
            .zip(&self.truth.values)
            .map(|(p, t)| (p - t).abs())
            .collect())
    }
}

/// Mean absolute error per metabolite over the spectra of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentErrors {
    pub model: String,
    pub experiment: String,
    pub n_spectra: usize,
    pub errors: Vec<f64>,
}

/// Average per-spectrum absolute errors within each (model, experiment).
/// Records without an experiment id are skipped with a warning.
pub fn aggregate_experiment(records: &[PredictionRecord]) -> Result<Vec<ExperimentErrors>> {
    let mut groups: BTreeMap<(String, String), Vec<Vec<f64>>> = BTreeMap::new();
    let mut skipped = 0;
    for r in records {
        if r.experiment.is_empty() {
            skipped += 1;
            continue;
        }
        let e = r.abs_errors()?;
        let slot = groups.entry((r.model.clone(), r.experiment.clone())).or_default();
        if slot.first().is_some_and(|f| f.len() != e.len()) {
            return Err(Error::Contract(format!("experiment '{}' mixes vector lengths", r.experiment)));
        }
        slot.push(e);
    }
    if skipped > 0 {
        log::warn!("{skipped} records without an experiment id were left out of aggregation");
    }
    Ok(groups
        .into_iter()
        .map(|((model, experiment), rows)| {
            let k = rows.len();
            let errors = (0..rows[0].len())
                .map(|m| {
                    // sorted summation keeps the mean independent of record order
                    let mut col: Vec<f64> = rows.iter().map(|r| r[m]).collect();
                    col.sort_by(f64::total_cmp);
                    col.iter().sum::<f64>() / k as f64
                })
                .collect();
            ExperimentErrors {
                model,
                experiment,
                n_spectra: k,
                errors,
            }
        })
        .collect())
}
