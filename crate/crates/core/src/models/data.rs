use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::preprocess::{
    extract_channels, normalise_target, preprocess_pair, to_max_normalised, DataType, ExportConfig, TargetNorm,
};
use crate::spectra::Acquisition;
use crate::synthesis::{generate_map, BasisSet, LabelledDataset, LabelledSample, SampleMeta, SynthesisConfig};

/// Exported, network-ready samples: noisy inputs, clean reconstruction
/// targets and raw concentrations, all row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub metabolites: Vec<String>,
    pub export: ExportConfig,
    pub channel_labels: Vec<(Acquisition, DataType)>,
    /// `[sample][channel][point]`
    pub noisy: Vec<f64>,
    /// `[sample][channel][point]`
    pub clean: Vec<f64>,
    /// Raw concentrations, `[sample][metabolite]`.
    pub targets: Vec<f64>,
    pub meta: Vec<SampleMeta>,
    /// Samples dropped because their concentration vector was all zero.
    pub dropped: usize,
    /// Samples exported without B0 alignment because no reference peak was
    /// prominent enough.
    pub align_fallbacks: usize,
}

pub(crate) struct ExportedSample {
    noisy: Vec<f64>,
    clean: Vec<f64>,
    target: Vec<f64>,
    meta: SampleMeta,
    fallback: bool,
}

fn is_alignment_failure(e: &Error) -> bool {
    matches!(e, Error::Alignment { .. } | Error::PeakOnEdge { .. })
}

/// Export one labelled sample. `Ok(None)` for an all-zero target. When
/// alignment cannot find a reference peak the sample is exported unaligned.
pub(crate) fn export_sample(sample: &LabelledSample, cfg: &ExportConfig) -> Result<Option<ExportedSample>> {
    if sample.target.values().iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let (noisy, clean, fallback) = match preprocess_pair(&sample.acquisitions, &sample.clean_acquisitions, cfg) {
        Ok((n, c, _)) => (n, c, false),
        Err(e) if cfg.align.enabled && is_alignment_failure(&e) => {
            let mut unaligned = cfg.clone();
            unaligned.align.enabled = false;
            let (n, c, _) = preprocess_pair(&sample.acquisitions, &sample.clean_acquisitions, &unaligned)?;
            (n, c, true)
        }
        Err(e) => return Err(e),
    };
    Ok(Some(ExportedSample {
        noisy: extract_channels(&noisy, cfg)?.channels,
        clean: extract_channels(&clean, cfg)?.channels,
        target: sample.target.values().to_vec(),
        meta: sample.meta,
        fallback,
    }))
}

impl PreparedDataset {
    pub fn empty(metabolites: Vec<String>, export: ExportConfig) -> Self {
        Self {
            metabolites,
            channel_labels: export.channel_labels(),
            export,
            noisy: Vec::new(),
            clean: Vec::new(),
            targets: Vec::new(),
            meta: Vec::new(),
            dropped: 0,
            align_fallbacks: 0,
        }
    }

    fn from_exported(metabolites: Vec<String>, export: ExportConfig, rows: Vec<Option<ExportedSample>>) -> Self {
        let mut out = Self::empty(metabolites, export);
        for row in rows {
            match row {
                None => out.dropped += 1,
                Some(s) => {
                    out.noisy.extend(s.noisy);
                    out.clean.extend(s.clean);
                    out.targets.extend(s.target);
                    out.meta.push(s.meta);
                    out.align_fallbacks += s.fallback as usize;
                }
            }
        }
        out
    }

    /// Synthesize and export in one pass without keeping full spectra.
    pub fn synthesize(basis: &BasisSet, synth: &SynthesisConfig, export: &ExportConfig) -> Result<Self> {
        export.validate()?;
        let rows = generate_map(basis, synth, |s| export_sample(&s, export))?;
        Ok(Self::from_exported(basis.metabolites().to_vec(), export.clone(), rows))
    }

    pub fn from_labelled(data: &LabelledDataset, export: &ExportConfig) -> Result<Self> {
        export.validate()?;
        use rayon::prelude::*;
        let rows = data
            .samples
            .par_iter()
            .map(|s| export_sample(s, export))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_exported(data.metabolites.clone(), export.clone(), rows))
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn n_points(&self) -> usize {
        self.export.n_points
    }

    pub fn n_metabolites(&self) -> usize {
        self.metabolites.len()
    }

    pub fn sample_len(&self) -> usize {
        self.n_channels() * self.n_points()
    }

    pub fn noisy_row(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.noisy[i * n..(i + 1) * n]
    }

    pub fn clean_row(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.clean[i * n..(i + 1) * n]
    }

    pub fn raw_target(&self, i: usize) -> &[f64] {
        let m = self.n_metabolites();
        &self.targets[i * m..(i + 1) * m]
    }

    /// Training target in the export's normalisation mode.
    pub fn train_target(&self, i: usize) -> Vec<f64> {
        normalise_target(self.raw_target(i), self.export.target_norm)
            .expect("all-zero targets are dropped on export")
            .values
    }

    /// Ground truth in evaluation (max-normalised) space.
    pub fn truth(&self, i: usize) -> Vec<f64> {
        to_max_normalised(self.raw_target(i))
    }

    pub fn target_norm(&self) -> TargetNorm {
        self.export.target_norm
    }

    /// Subset in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(dim(format!("sample {bad} out of range for {} samples", self.len())));
        }
        let mut out = Self::empty(self.metabolites.clone(), self.export.clone());
        for &i in idx {
            out.noisy.extend_from_slice(self.noisy_row(i));
            out.clean.extend_from_slice(self.clean_row(i));
            out.targets.extend_from_slice(self.raw_target(i));
            out.meta.push(self.meta[i]);
        }
        Ok(out)
    }

    /// Check internal lengths agree.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.noisy.len() != n * self.sample_len()
            || self.clean.len() != n * self.sample_len()
            || self.targets.len() != n * self.n_metabolites()
        {
            return Err(dim("prepared dataset buffers disagree with sample count"));
        }
        if self.channel_labels != self.export.channel_labels() {
            return Err(dim("channel labels disagree with export configuration"));
        }
        Ok(())
    }
}
