use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::wilcoxon::{wilcoxon_one_tailed, PairedTestResult};
use super::{aggregate_experiment, fit_regression, ExperimentErrors, PredictionRecord, RegressionFit};
use crate::error::{Error, Result};

/// Predictions of one model over an evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPredictions {
    pub model: String,
    pub metabolites: Vec<String>,
    pub records: Vec<PredictionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub metabolite: String,
    pub n: usize,
    pub mae: f64,
    /// Sample standard deviation over sqrt(n).
    pub sem: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Lowest MAE for this metabolite across models.
    pub is_min: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub model: String,
    pub metabolite: String,
    pub fit: Option<RegressionFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub first: String,
    pub second: String,
    pub result: PairedTestResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metabolites: Vec<String>,
    pub models: Vec<String>,
    pub summary: Vec<SummaryRow>,
    pub experiments: Vec<ExperimentErrors>,
    pub regressions: Vec<RegressionRow>,
    pub pairwise: Vec<PairRow>,
    pub notes: Vec<String>,
}

/// Mean, standard error and two-sided 95% normal-approximation interval.
pub fn mean_sem_ci(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sem = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    let z = Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(0.975);
    (mean, sem, mean - z * sem, mean + z * sem)
}

/// Summaries, experiment-level errors, regressions and pairwise tests for
/// every model in `records` and `baselines`.
pub fn build_report(records: &[ModelPredictions], baselines: &[ModelPredictions]) -> Result<EvalReport> {
    let all: Vec<&ModelPredictions> = records.iter().chain(baselines).collect();
    let Some(first) = all.first() else {
        return Err(Error::Contract("report needs at least one model".into()));
    };
    let metabolites = first.metabolites.clone();
    let mut models = Vec::new();
    for mp in &all {
        if mp.metabolites != metabolites {
            return Err(Error::Contract(format!(
                "model '{}' uses metabolite order {:?}, expected {:?}",
                mp.model, mp.metabolites, metabolites
            )));
        }
        if mp.records.is_empty() {
            return Err(Error::Contract(format!("model '{}' has no records", mp.model)));
        }
        if let Some(r) = mp.records.iter().find(|r| r.model != mp.model) {
            return Err(Error::Contract(format!("record tagged '{}' filed under '{}'", r.model, mp.model)));
        }
        if models.contains(&mp.model) {
            return Err(Error::Contract(format!("model '{}' listed twice", mp.model)));
        }
        models.push(mp.model.clone());
    }

    let mut summary = Vec::new();
    let mut regressions = Vec::new();
    let mut experiments = Vec::new();
    for mp in &all {
        let errors: Vec<Vec<f64>> = mp.records.iter().map(|r| r.abs_errors()).collect::<Result<_>>()?;
        if errors.iter().any(|e| e.len() != metabolites.len()) {
            return Err(Error::Contract(format!("model '{}' has vectors of the wrong length", mp.model)));
        }
        for (m, name) in metabolites.iter().enumerate() {
            let col: Vec<f64> = errors.iter().map(|e| e[m]).collect();
            let (mae, sem, ci_low, ci_high) = mean_sem_ci(&col);
            summary.push(SummaryRow {
                model: mp.model.clone(),
                metabolite: name.clone(),
                n: col.len(),
                mae,
                sem,
                ci_low,
                ci_high,
                is_min: false,
            });
            let pairs: Vec<(f64, f64)> = mp
                .records
                .iter()
                .map(|r| (r.truth.values[m], r.predicted.values[m]))
                .collect();
            regressions.push(RegressionRow {
                model: mp.model.clone(),
                metabolite: name.clone(),
                fit: fit_regression(&pairs).ok(),
            });
        }
        experiments.extend(aggregate_experiment(&mp.records)?);
    }
    for name in &metabolites {
        let best = summary
            .iter()
            .filter(|r| &r.metabolite == name)
            .map(|r| r.mae)
            .fold(f64::INFINITY, f64::min);
        for r in summary.iter_mut().filter(|r| &r.metabolite == name) {
            r.is_min = r.mae == best;
        }
    }

    let by_model: BTreeMap<&str, BTreeMap<&str, &ExperimentErrors>> =
        experiments.iter().fold(BTreeMap::new(), |mut acc, e| {
            acc.entry(e.model.as_str()).or_default().insert(e.experiment.as_str(), e);
            acc
        });
    let mut pairwise = Vec::new();
    let mut notes = vec!["regression p-values test slope = 0 (two-sided)".to_string()];
    for a in &models {
        for b in &models {
            if a == b {
                continue;
            }
            let (ea, eb) = (&by_model[a.as_str()], &by_model[b.as_str()]);
            let shared: Vec<&str> = ea.keys().filter(|k| eb.contains_key(*k)).copied().collect();
            for (m, name) in metabolites.iter().enumerate() {
                let diffs: Vec<f64> = shared.iter().map(|k| ea[k].errors[m] - eb[k].errors[m]).collect();
                match wilcoxon_one_tailed(name, &diffs) {
                    Ok(result) => pairwise.push(PairRow {
                        first: a.clone(),
                        second: b.clone(),
                        result,
                    }),
                    Err(e) => notes.push(format!("{a} < {b}, {name}: {e}")),
                }
            }
        }
    }
    Ok(EvalReport {
        metabolites,
        models,
        summary,
        experiments,
        regressions,
        pairwise,
        notes,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn num(v: f64) -> String {
    v.to_string()
}

impl EvalReport {
    pub fn summary_row(&self, model: &str, metabolite: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.model == model && r.metabolite == metabolite)
    }

    /// Write `summary.csv`, `experiments.csv`, `regression.csv`,
    /// `wilcoxon.csv` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path, stamp: &[(String, String)]) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| csv::Writer::from_path(dir.join(name)).map_err(csv_err);

        let mut w = open("summary.csv")?;
        w.write_record(["model", "metabolite", "n", "mae", "sem", "ci_low", "ci_high", "min"]).map_err(csv_err)?;
        for r in &self.summary {
            w.write_record([
                r.model.clone(),
                r.metabolite.clone(),
                r.n.to_string(),
                num(r.mae),
                num(r.sem),
                num(r.ci_low),
                num(r.ci_high),
                (r.is_min as u8).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = open("experiments.csv")?;
        w.write_record(["model", "metabolite", "experiment", "n_spectra", "mean_abs_error"]).map_err(csv_err)?;
        for e in &self.experiments {
            for (m, name) in self.metabolites.iter().enumerate() {
                w.write_record([
                    e.model.clone(),
                    name.clone(),
                    e.experiment.clone(),
                    e.n_spectra.to_string(),
                    num(e.errors[m]),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;

        let mut w = open("regression.csv")?;
        w.write_record(["model", "metabolite", "n", "slope", "intercept", "r_squared", "se_slope", "p_value_slope_zero"])
            .map_err(csv_err)?;
        for r in &self.regressions {
            let cells = match &r.fit {
                Some(f) => vec![f.n.to_string(), num(f.slope), num(f.intercept), num(f.r_squared), num(f.se_slope), num(f.p_value)],
                None => vec![String::new(); 6],
            };
            let mut row = vec![r.model.clone(), r.metabolite.clone()];
            row.extend(cells);
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = open("wilcoxon.csv")?;
        w.write_record([
            "first", "second", "metabolite", "p_value", "wins", "n_experiments", "n_used", "mean_diff", "proportion", "w_plus", "method",
        ])
        .map_err(csv_err)?;
        for p in &self.pairwise {
            let r = &p.result;
            w.write_record([
                p.first.clone(),
                p.second.clone(),
                r.metabolite.clone(),
                num(r.p_value),
                r.wins.to_string(),
                r.n_experiments.to_string(),
                r.n_used.to_string(),
                num(r.mean_diff),
                num(r.proportion),
                num(r.w_plus),
                format!("{:?}", r.method).to_lowercase(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;

        let mut text = String::new();
        for (k, v) in stamp {
            let _ = writeln!(text, "# {k}: {v}");
        }
        text.push_str(&self.to_text());
        std::fs::write(dir.join("report.txt"), text)?;
        Ok(())
    }

    /// Metabolite-by-model MAE table; `*` marks the lowest error per row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.models.iter().map(|m| m.len()).max().unwrap_or(0).max(22);
        let _ = write!(out, "{:<10}", "metabolite");
        for m in &self.models {
            let _ = write!(out, " {m:>width$}");
        }
        out.push('\n');
        for name in &self.metabolites {
            let _ = write!(out, "{name:<10}");
            for m in &self.models {
                let cell = match self.summary_row(m, name) {
                    Some(r) => format!("{:.4} ± {:.4}{}", r.mae, r.sem, if r.is_min { "*" } else { " " }),
                    None => "-".into(),
                };
                let _ = write!(out, " {cell:>width$}");
            }
            out.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

/// Predicted-versus-truth pairs for external plotting.
pub fn write_scatter(path: &Path, predictions: &[ModelPredictions]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["model", "metabolite", "spectrum_id", "experiment", "truth", "predicted"]).map_err(csv_err)?;
    for mp in predictions {
        for r in &mp.records {
            for (m, name) in mp.metabolites.iter().enumerate() {
                w.write_record([
                    mp.model.clone(),
                    name.clone(),
                    r.spectrum_id.clone(),
                    r.experiment.clone(),
                    num(r.truth.values[m]),
                    num(r.predicted.values[m]),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
