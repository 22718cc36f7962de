use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bayesopt::{BoBudget, ConfigSpace};
use crate::error::{config, Result};
use crate::io::archive::{Archive, BasisSource};
use crate::models::ModelConfig;
use crate::preprocess::ExportConfig;
use crate::spectra::{PpmAxis, DEFAULT_CENTER_PPM, DEFAULT_SPECTROMETER_MHZ};
use crate::synthesis::{default_peak_table, generate_lorentzian_basis, BasisSet, MetabolitePeaks, SynthesisConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    #[serde(default = "default_axis_points")]
    pub n_points: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_sf")]
    pub spectrometer_freq: f64,
    #[serde(default = "default_center")]
    pub center_ppm: f64,
}

fn default_axis_points() -> usize {
    2048
}
fn default_bandwidth() -> f64 {
    2000.0
}
fn default_sf() -> f64 {
    DEFAULT_SPECTROMETER_MHZ
}
fn default_center() -> f64 {
    DEFAULT_CENTER_PPM
}

impl Default for AxisSection {
    fn default() -> Self {
        Self {
            n_points: default_axis_points(),
            bandwidth: default_bandwidth(),
            spectrometer_freq: default_sf(),
            center_ppm: default_center(),
        }
    }
}

impl AxisSection {
    pub fn axis(&self) -> Result<PpmAxis> {
        PpmAxis::new(self.spectrometer_freq, self.center_ppm, self.n_points, self.bandwidth)
    }
}

/// Either a basis archive on disk or a synthetic peak table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Defaults to the built-in five-metabolite table.
    #[serde(default)]
    pub peaks: Option<Vec<MetabolitePeaks>>,
    #[serde(default = "default_fwhm")]
    pub fwhm: f64,
    #[serde(default)]
    pub axis: AxisSection,
}

fn default_fwhm() -> f64 {
    1.0
}

impl BasisSection {
    pub fn validate(&self) -> Result<()> {
        if self.path.is_some() && self.peaks.is_some() {
            return Err(config("basis: give either a path or a peak table, not both"));
        }
        if self.path.is_none() {
            self.axis.axis()?;
            if !(self.fwhm > 0.0) {
                return Err(config("basis: fwhm must be positive"));
            }
        }
        Ok(())
    }

    /// Synthetic basis description, `None` for archive-backed bases.
    pub fn source(&self) -> Result<Option<BasisSource>> {
        if self.path.is_some() {
            return Ok(None);
        }
        Ok(Some(BasisSource {
            peaks: self.peaks.clone().unwrap_or_else(default_peak_table),
            fwhm: self.fwhm,
            axis: self.axis.axis()?,
        }))
    }

    pub fn load(&self) -> Result<BasisSet> {
        match (&self.path, self.source()?) {
            (Some(p), _) => Archive::read(p)?.to_basis(),
            (None, Some(src)) => generate_lorentzian_basis(&src.peaks, src.fwhm, &src.axis),
            (None, None) => unreachable!("a basis without a path always has a source"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the model's batch size.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Share of samples held out for per-epoch validation.
    #[serde(default = "default_val_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub precision: Precision,
}

fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    #[serde(default)]
    pub space: Option<PathBuf>,
    pub budget: BoBudget,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Defaults to the architecture's selection epochs.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Consecutive samples forming one experiment (statistical unit).
    #[serde(default = "default_experiment_size")]
    pub experiment_size: usize,
    /// Prediction files of further models to compare against.
    #[serde(default)]
    pub baselines: Vec<PathBuf>,
}

fn default_experiment_size() -> usize {
    10
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            experiment_size: default_experiment_size(),
            baselines: Vec::new(),
        }
    }
}

/// One document configuring every subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub basis: Option<BasisSection>,
    #[serde(default)]
    pub synthesis: Option<SynthesisConfig>,
    /// Falls back to the model's export settings when absent.
    #[serde(default)]
    pub export: Option<ExportConfig>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub training: Option<TrainingSection>,
    #[serde(default)]
    pub selection: Option<SelectionSection>,
    #[serde(default)]
    pub evaluation: Option<EvaluationSection>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Every present section is checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = &self.basis {
            b.validate()?;
        }
        if let Some(s) = &self.synthesis {
            s.validate()?;
            if let Some(b) = &self.basis {
                if b.path.is_none() {
                    let lowest = s.linewidth_mode.grid()?[0];
                    if lowest < b.fwhm - 1e-12 {
                        return Err(config(format!(
                            "synthesis linewidth {lowest} Hz is below the basis linewidth {} Hz",
                            b.fwhm
                        )));
                    }
                }
            }
        }
        if let Some(e) = &self.export {
            e.validate()?;
        }
        if let Some(m) = &self.model {
            m.validate()?;
            if let Some(e) = &self.export {
                if e != m.export() {
                    return Err(config("export section and model export settings differ"));
                }
            }
        }
        if let Some(t) = &self.training {
            if t.epochs == 0 {
                return Err(config("training: epochs must be positive"));
            }
            if t.batch_size == Some(0) {
                return Err(config("training: batch_size must be positive"));
            }
            if !(0.0..1.0).contains(&t.validation_fraction) {
                return Err(config("training: validation_fraction must lie in [0, 1)"));
            }
        }
        if let Some(s) = &self.selection {
            s.budget.validate()?;
            if s.folds < 2 {
                return Err(config("selection: at least 2 folds"));
            }
            if s.epochs == Some(0) {
                return Err(config("selection: epochs must be positive"));
            }
        }
        if let Some(e) = &self.evaluation {
            if e.experiment_size == 0 {
                return Err(config("evaluation: experiment_size must be positive"));
            }
        }
        Ok(())
    }

    pub fn export(&self) -> Option<&ExportConfig> {
        self.export.as_ref().or_else(|| self.model.as_ref().map(|m| m.export()))
    }

    /// Model configuration with the training batch-size override applied.
    pub fn effective_model(&self) -> Option<ModelConfig> {
        let m = self.model.clone()?;
        Some(match self.training.as_ref().and_then(|t| t.batch_size) {
            Some(b) => m.with_batch_size(b),
            None => m,
        })
    }
}

/// Read and validate a search-space file.
pub fn read_space(path: &std::path::Path) -> Result<ConfigSpace> {
    let s: ConfigSpace = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    s.validate()?;
    Ok(s)
}
