//! `.mqd` dataset archives: an 8-byte magic, the manifest length as a
//! little-endian u64, a JSON manifest, then the float64 LE payload
//! (clean block, noisy block, targets block).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim, Error, Result};
use crate::models::PreparedDataset;
use crate::preprocess::ExportConfig;
use crate::spectra::{Acquisition, AcquisitionSet, Fid, PpmAxis, Spectrum, C64};
use crate::synthesis::{
    BasisSet, ConcentrationVector, LabelledDataset, LabelledSample, MetabolitePeaks, SampleMeta, SynthesisConfig,
    METABOLITES,
};

pub const MAGIC: &[u8; 8] = b"MQDARCH\0";
pub const VERSION: u32 = 1;
pub const FORMAT: &str = "megaquant-dataset";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchiveKind {
    /// One sample per metabolite; channels are the OFF/ON FIDs.
    Basis,
    /// Full-band OFF/ON spectra before preprocessing.
    Raw,
    /// Exported network inputs.
    Prepared,
}

/// How a synthetic basis was produced, enough to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSource {
    pub peaks: Vec<MetabolitePeaks>,
    pub fwhm: f64,
    pub axis: PpmAxis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: ArchiveKind,
    pub axis: Option<PpmAxis>,
    pub metabolites: Vec<String>,
    pub channels: Vec<String>,
    pub n_samples: usize,
    pub n_points: usize,
    pub intrinsic_fwhm: Option<f64>,
    pub basis: Option<BasisSource>,
    pub synthesis: Option<SynthesisConfig>,
    pub export: Option<ExportConfig>,
    pub meta: Vec<SampleMeta>,
    pub dropped: usize,
    pub align_fallbacks: usize,
    pub stamp: BTreeMap<String, String>,
    pub payload_bytes: u64,
    /// Hex SHA-256 of the payload.
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub manifest: Manifest,
    /// `[sample][channel][point]`
    pub clean: Vec<f64>,
    /// `[sample][channel][point]`
    pub noisy: Vec<f64>,
    /// `[sample][metabolite]`
    pub targets: Vec<f64>,
}

const SPECTRUM_CHANNELS: [&str; 4] = ["off_re", "off_im", "on_re", "on_im"];

fn check_metabolite_order(names: &[String]) -> Result<()> {
    let pos: Vec<Option<usize>> = names.iter().map(|n| METABOLITES.iter().position(|m| m == n)).collect();
    if pos.iter().all(Option::is_some) && pos.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract(format!(
            "metabolites {names:?} are not in canonical order {METABOLITES:?}"
        )));
    }
    Ok(())
}

fn manifest(kind: ArchiveKind, metabolites: Vec<String>, channels: Vec<String>, n_samples: usize, n_points: usize) -> Manifest {
    Manifest {
        format: FORMAT.into(),
        version: VERSION,
        kind,
        axis: None,
        metabolites,
        channels,
        n_samples,
        n_points,
        intrinsic_fwhm: None,
        basis: None,
        synthesis: None,
        export: None,
        meta: Vec::new(),
        dropped: 0,
        align_fallbacks: 0,
        stamp: BTreeMap::new(),
        payload_bytes: 0,
        checksum: String::new(),
    }
}

fn push_complex(out: &mut Vec<f64>, values: &[C64]) {
    out.extend(values.iter().map(|c| c.re));
    out.extend(values.iter().map(|c| c.im));
}

fn complex_row(row: &[f64], n: usize, channel: usize) -> Vec<C64> {
    let re = &row[2 * channel * n..(2 * channel + 1) * n];
    let im = &row[(2 * channel + 1) * n..(2 * channel + 2) * n];
    re.iter().zip(im).map(|(&r, &i)| C64::new(r, i)).collect()
}

fn spectrum_row(set: &AcquisitionSet) -> Result<Vec<f64>> {
    let (Some(off), Some(on)) = (set.off(), set.on()) else {
        return Err(dim("raw archives need OFF and ON spectra"));
    };
    let mut row = Vec::with_capacity(4 * off.values().len());
    push_complex(&mut row, off.values());
    push_complex(&mut row, on.values());
    Ok(row)
}

impl Archive {
    fn sample_len(&self) -> usize {
        self.manifest.channels.len() * self.manifest.n_points
    }

    fn check_shape(&self) -> Result<()> {
        let m = &self.manifest;
        let n = m.n_samples;
        if self.clean.len() != n * self.sample_len()
            || self.noisy.len() != n * self.sample_len()
            || self.targets.len() != n * m.metabolites.len()
        {
            return Err(dim("archive blocks disagree with the manifest shape"));
        }
        if !m.meta.is_empty() && m.meta.len() != n {
            return Err(dim("sample metadata count differs from sample count"));
        }
        check_metabolite_order(&m.metabolites)
    }

    pub fn from_basis(basis: &BasisSet, source: Option<BasisSource>) -> Result<Self> {
        let n = basis.axis().n_points();
        let k = basis.len();
        let mut m = manifest(ArchiveKind::Basis, basis.metabolites().to_vec(), SPECTRUM_CHANNELS.map(String::from).to_vec(), k, n);
        m.axis = Some(*basis.axis());
        m.intrinsic_fwhm = Some(basis.intrinsic_fwhm());
        m.basis = source;
        let mut rows = Vec::with_capacity(k * 4 * n);
        for i in 0..k {
            push_complex(&mut rows, basis.fid(i, Acquisition::Off)?.samples());
            push_complex(&mut rows, basis.fid(i, Acquisition::On)?.samples());
        }
        let mut targets = vec![0.0; k * k];
        for i in 0..k {
            targets[i * k + i] = 1.0;
        }
        let a = Self {
            manifest: m,
            clean: rows.clone(),
            noisy: rows,
            targets,
        };
        a.check_shape()?;
        Ok(a)
    }

    pub fn to_basis(&self) -> Result<BasisSet> {
        let m = self.expect_kind(ArchiveKind::Basis)?;
        let axis = m.axis.ok_or_else(|| Error::Corruption("basis archive without an axis".into()))?;
        let fwhm = m
            .intrinsic_fwhm
            .ok_or_else(|| Error::Corruption("basis archive without a linewidth".into()))?;
        let n = m.n_points;
        let (mut off, mut on) = (Vec::new(), Vec::new());
        for row in self.clean.chunks(self.sample_len()) {
            off.push(Fid::new(complex_row(row, n, 0), axis.dwell_time())?);
            on.push(Fid::new(complex_row(row, n, 1), axis.dwell_time())?);
        }
        BasisSet::new(m.metabolites.clone(), off, on, fwhm, axis)
    }

    pub fn from_labelled(data: &LabelledDataset, axis: PpmAxis) -> Result<Self> {
        let n = axis.n_points();
        let k = data.len();
        let mut m = manifest(ArchiveKind::Raw, data.metabolites.clone(), SPECTRUM_CHANNELS.map(String::from).to_vec(), k, n);
        m.axis = Some(axis);
        m.synthesis = Some(data.config.clone());
        m.meta = data.samples.iter().map(|s| s.meta).collect();
        let (mut clean, mut noisy, mut targets) = (Vec::new(), Vec::new(), Vec::new());
        for s in &data.samples {
            clean.extend(spectrum_row(&s.clean_acquisitions)?);
            noisy.extend(spectrum_row(&s.acquisitions)?);
            targets.extend_from_slice(s.target.values());
        }
        let a = Self {
            manifest: m,
            clean,
            noisy,
            targets,
        };
        a.check_shape()?;
        Ok(a)
    }

    pub fn to_labelled(&self) -> Result<LabelledDataset> {
        let m = self.expect_kind(ArchiveKind::Raw)?;
        let axis = m.axis.ok_or_else(|| Error::Corruption("raw archive without an axis".into()))?;
        let synthesis = m
            .synthesis
            .clone()
            .ok_or_else(|| Error::Corruption("raw archive without a synthesis configuration".into()))?;
        let n = m.n_points;
        let set = |row: &[f64]| -> Result<AcquisitionSet> {
            AcquisitionSet::from_off_on(
                Spectrum::new(complex_row(row, n, 0), axis, Acquisition::Off)?,
                Spectrum::new(complex_row(row, n, 1), axis, Acquisition::On)?,
            )
        };
        let k = m.metabolites.len();
        let samples = (0..m.n_samples)
            .map(|i| {
                let r = i * self.sample_len()..(i + 1) * self.sample_len();
                Ok(LabelledSample {
                    acquisitions: set(&self.noisy[r.clone()])?,
                    clean_acquisitions: set(&self.clean[r])?,
                    target: ConcentrationVector::new(self.targets[i * k..(i + 1) * k].to_vec())?,
                    meta: m.meta.get(i).copied().ok_or_else(|| Error::Corruption("missing sample metadata".into()))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelledDataset {
            metabolites: m.metabolites.clone(),
            samples,
            config: synthesis,
        })
    }

    pub fn from_prepared(data: &PreparedDataset) -> Result<Self> {
        data.validate()?;
        let channels = data.channel_labels.iter().map(|(a, d)| format!("{a}_{d}")).collect();
        let mut m = manifest(ArchiveKind::Prepared, data.metabolites.clone(), channels, data.len(), data.n_points());
        m.export = Some(data.export.clone());
        m.meta = data.meta.clone();
        m.dropped = data.dropped;
        m.align_fallbacks = data.align_fallbacks;
        let a = Self {
            manifest: m,
            clean: data.clean.clone(),
            noisy: data.noisy.clone(),
            targets: data.targets.clone(),
        };
        a.check_shape()?;
        Ok(a)
    }

    pub fn to_prepared(&self) -> Result<PreparedDataset> {
        let m = self.expect_kind(ArchiveKind::Prepared)?;
        let export = m
            .export
            .clone()
            .ok_or_else(|| Error::Corruption("prepared archive without an export configuration".into()))?;
        let mut d = PreparedDataset::empty(m.metabolites.clone(), export);
        d.noisy = self.noisy.clone();
        d.clean = self.clean.clone();
        d.targets = self.targets.clone();
        d.meta = m.meta.clone();
        d.dropped = m.dropped;
        d.align_fallbacks = m.align_fallbacks;
        d.validate()?;
        Ok(d)
    }

    fn expect_kind(&self, kind: ArchiveKind) -> Result<&Manifest> {
        if self.manifest.kind != kind {
            return Err(Error::Contract(format!(
                "expected a {kind:?} archive, found {:?}",
                self.manifest.kind
            )));
        }
        Ok(&self.manifest)
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (self.clean.len() + self.noisy.len() + self.targets.len()));
        for v in self.clean.iter().chain(&self.noisy).chain(&self.targets) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Serialised archive bytes. Fills in the payload length and checksum.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_shape()?;
        let payload = self.payload();
        let mut m = self.manifest.clone();
        m.payload_bytes = payload.len() as u64;
        m.checksum = hex::encode(Sha256::digest(&payload));
        let json = serde_json::to_vec_pretty(&m)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Corruption("not a dataset archive (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16usize.saturating_add(len))
            .ok_or_else(|| Error::Corruption("manifest truncated".into()))?;
        let raw: serde_json::Value =
            serde_json::from_slice(json).map_err(|e| Error::Corruption(format!("manifest is not JSON: {e}")))?;
        let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != VERSION {
            return Err(Error::Migration {
                found: version,
                expected: VERSION,
            });
        }
        let m: Manifest = serde_json::from_value(raw).map_err(|e| Error::Corruption(format!("manifest: {e}")))?;
        if m.format != FORMAT {
            return Err(Error::Corruption(format!("unknown format '{}'", m.format)));
        }
        let payload = &bytes[16 + len..];
        if payload.len() as u64 != m.payload_bytes {
            return Err(Error::Corruption(format!(
                "payload is {} bytes, manifest says {}",
                payload.len(),
                m.payload_bytes
            )));
        }
        if hex::encode(Sha256::digest(payload)) != m.checksum {
            return Err(Error::Corruption("payload checksum mismatch".into()));
        }
        let block = m.n_samples * m.channels.len() * m.n_points;
        let targets = m.n_samples * m.metabolites.len();
        if payload.len() != 8 * (2 * block + targets) {
            return Err(Error::Corruption("payload size disagrees with the manifest shape".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let a = Self {
            clean: values[..block].to_vec(),
            noisy: values[block..2 * block].to_vec(),
            targets: values[2 * block..].to_vec(),
            manifest: m,
        };
        a.check_shape()?;
        Ok(a)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
