//! Harmonised export pipeline: zero filling, water attenuation, B0
//! alignment, cropping/resampling, amplitude normalisation, channel export
//! and target normalisation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::spectra::{
    compute_diff, fft_fid, zero_fill_or_truncate, Acquisition, AcquisitionSet, PpmAxis, Spectrum, C64,
};

/// Channel datatype.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Real,
    Imaginary,
    Magnitude,
}

impl DataType {
    pub const ALL: [DataType; 3] = [DataType::Real, DataType::Imaginary, DataType::Magnitude];

    pub fn as_str(self) -> &'static str {
        match self {
            DataType::Real => "real",
            DataType::Imaginary => "imaginary",
            DataType::Magnitude => "magnitude",
        }
    }

    fn apply(self, v: C64) -> f64 {
        match self {
            DataType::Real => v.re,
            DataType::Imaginary => v.im,
            DataType::Magnitude => v.norm(),
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" | "re" => Ok(DataType::Real),
            "imaginary" | "imag" | "im" => Ok(DataType::Imaginary),
            "magnitude" | "mag" | "abs" => Ok(DataType::Magnitude),
            other => Err(domain(format!("unknown datatype '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetNorm {
    Sum,
    Max,
}

impl FromStr for TargetNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Ok(TargetNorm::Sum),
            "max" => Ok(TargetNorm::Max),
            other => Err(domain(format!("unknown target normalisation '{other}'"))),
        }
    }
}

/// Outlier clamping around the residual water line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterConfig {
    pub enabled: bool,
    pub center: f64,
    pub half_width: f64,
    pub clamp_factor: f64,
}

impl Default for WaterConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            center: 4.75,
            half_width: 0.75,
            clamp_factor: 3.0,
        }
    }
}

/// Reference peaks for frequency alignment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    pub enabled: bool,
    pub naa_ppm: f64,
    pub cr_ppm: f64,
    pub half_width: f64,
    /// A reference peak counts as prominent when its magnitude exceeds this
    /// multiple of its window median.
    pub min_peak_to_median: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            naa_ppm: 2.01,
            cr_ppm: 3.015,
            half_width: 0.25,
            min_peak_to_median: 4.0,
        }
    }
}

fn default_band() -> [f64; 2] {
    [4.5, 1.0]
}

fn default_points() -> usize {
    2048
}

fn default_resolution() -> f64 {
    0.125
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    #[serde(default = "default_band")]
    pub ppm_band: [f64; 2],
    #[serde(default = "default_points")]
    pub n_points: usize,
    pub acquisitions: BTreeSet<Acquisition>,
    pub datatypes: BTreeSet<DataType>,
    pub target_norm: TargetNorm,
    /// Spectral bin spacing (Hz) the FIDs are zero-filled or truncated to
    /// before transforming. A fixed spacing puts data acquired at different
    /// bandwidths on one frequency lattice before peak finding and cropping.
    #[serde(default = "default_resolution")]
    pub resolution_hz: f64,
    #[serde(default)]
    pub water: WaterConfig,
    #[serde(default)]
    pub align: AlignConfig,
}

impl ExportConfig {
    pub fn new(
        acquisitions: impl IntoIterator<Item = Acquisition>,
        datatypes: impl IntoIterator<Item = DataType>,
        target_norm: TargetNorm,
    ) -> Self {
        Self {
            ppm_band: default_band(),
            n_points: default_points(),
            acquisitions: acquisitions.into_iter().collect(),
            datatypes: datatypes.into_iter().collect(),
            target_norm,
            resolution_hz: default_resolution(),
            water: WaterConfig::default(),
            align: AlignConfig::default(),
        }
    }

    pub fn with_points(mut self, n_points: usize) -> Self {
        self.n_points = n_points;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [high, low] = self.ppm_band;
        if !(high > low) {
            return Err(config(format!("ppm band must satisfy high > low, got [{high}, {low}]")));
        }
        if self.n_points < 2 {
            return Err(config("export needs at least 2 points"));
        }
        if !(self.resolution_hz > 0.0 && self.resolution_hz.is_finite()) {
            return Err(config(format!("resolution must be positive, got {}", self.resolution_hz)));
        }
        if self.acquisitions.is_empty() || self.datatypes.is_empty() {
            return Err(config("export needs at least one acquisition and one datatype"));
        }
        if !(self.water.clamp_factor > 0.0 && self.water.half_width > 0.0) {
            return Err(config("water window needs positive half-width and clamp factor"));
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.acquisitions.len() * self.datatypes.len()
    }

    /// Acquisition-major, datatype-minor channel labels.
    pub fn channel_labels(&self) -> Vec<(Acquisition, DataType)> {
        self.acquisitions
            .iter()
            .flat_map(|&a| self.datatypes.iter().map(move |&d| (a, d)))
            .collect()
    }

    /// Zero-filled length for data sampled at `bandwidth` Hz.
    pub fn fid_points(&self, bandwidth: f64) -> usize {
        ((bandwidth / self.resolution_hz).round() as usize).max(2)
    }

    pub fn target_axis(&self, spectrometer_freq: f64) -> Result<PpmAxis> {
        PpmAxis::from_ppm_range(spectrometer_freq, self.ppm_band[0], self.ppm_band[1], self.n_points)
    }
}

/// Real-valued network input.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// Row-major `[n_channels x n_points]`.
    pub channels: Vec<f64>,
    pub channel_labels: Vec<(Acquisition, DataType)>,
    pub axis: PpmAxis,
}

impl ModelInput {
    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn n_points(&self) -> usize {
        self.axis.n_points()
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        let n = self.n_points();
        &self.channels[i * n..(i + 1) * n]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetVector {
    pub values: Vec<f64>,
    pub norm_mode: TargetNorm,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Bin indices whose ppm lies in `[low, high]`.
fn window_bins(axis: &PpmAxis, high: f64, low: f64) -> std::ops::Range<usize> {
    let n = axis.n_points();
    let start = axis.bin_of_ppm(high).ceil().max(0.0) as usize;
    let end = (axis.bin_of_ppm(low).floor() + 1.0).clamp(0.0, n as f64) as usize;
    start.min(end)..end
}

/// Clamp large outliers inside the water window to the window median
/// magnitude, keeping their phase. The flag is false when the window holds
/// no bins (nothing done).
pub fn attenuate_water(spec: &Spectrum, center: f64, half_width: f64, clamp_factor: f64) -> (Spectrum, bool) {
    let bins = window_bins(spec.axis(), center + half_width, center - half_width);
    if bins.is_empty() {
        log::warn!("water window {center}±{half_width} ppm does not intersect the axis");
        return (spec.clone(), false);
    }
    let med = median(spec.values()[bins.clone()].iter().map(|v| v.norm()).collect());
    let mut out = spec.clone();
    let threshold = clamp_factor * med;
    for v in &mut out.values_mut()[bins] {
        let m = v.norm();
        if m > threshold {
            *v *= med / m;
        }
    }
    (out, true)
}

/// Interpolated peak position (fractional bin) inside a ppm window, using
/// the neighbour-ratio rule for rectangular windows.
pub fn jain_peak_location(spec: &Spectrum, high: f64, low: f64) -> Result<f64> {
    let bins = window_bins(spec.axis(), high, low);
    if bins.len() < 3 {
        return Err(domain(format!("window [{high}, {low}] ppm holds fewer than 3 bins")));
    }
    let v = spec.values();
    let k = bins
        .clone()
        .max_by(|&a, &b| v[a].norm().total_cmp(&v[b].norm()))
        .expect("non-empty window");
    if k == bins.start || k + 1 == bins.end {
        return Err(Error::PeakOnEdge {
            bin: k,
            lo: bins.start,
            hi: bins.end - 1,
        });
    }
    let (left, mid, right) = (v[k - 1].norm(), v[k].norm(), v[k + 1].norm());
    let offset = if right > left {
        let a = right / mid;
        a / (1.0 + a)
    } else {
        let a = left / mid;
        -a / (1.0 + a)
    };
    Ok(k as f64 + offset)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferencePeak {
    Naa,
    Cr,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct B0Estimate {
    /// Correction added to every ppm label.
    pub shift_ppm: f64,
    pub reference: ReferencePeak,
    pub naa_prominence: f64,
    pub cr_prominence: f64,
}

fn prominence(spec: &Spectrum, center: f64, half_width: f64) -> (f64, f64) {
    let bins = window_bins(spec.axis(), center + half_width, center - half_width);
    if bins.is_empty() {
        return (0.0, 0.0);
    }
    let mags: Vec<f64> = spec.values()[bins].iter().map(|v| v.norm()).collect();
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    let med = median(mags);
    (peak - med, if med > 0.0 { peak / med } else { f64::INFINITY })
}

/// Shift estimate from the more prominent of the NAA / Cr reference lines
/// of an OFF spectrum.
pub fn estimate_b0_shift(off: &Spectrum, cfg: &AlignConfig) -> Result<B0Estimate> {
    let (naa, naa_ratio) = prominence(off, cfg.naa_ppm, cfg.half_width);
    let (cr, cr_ratio) = prominence(off, cfg.cr_ppm, cfg.half_width);
    let naa_ok = naa > 0.0 && naa_ratio >= cfg.min_peak_to_median;
    let cr_ok = cr > 0.0 && cr_ratio >= cfg.min_peak_to_median;
    let (reference, nominal) = match (naa_ok, cr_ok) {
        (false, false) => return Err(Error::Alignment { naa, cr }),
        (true, false) => (ReferencePeak::Naa, cfg.naa_ppm),
        (false, true) => (ReferencePeak::Cr, cfg.cr_ppm),
        (true, true) if naa >= cr => (ReferencePeak::Naa, cfg.naa_ppm),
        _ => (ReferencePeak::Cr, cfg.cr_ppm),
    };
    let bin = jain_peak_location(off, nominal + cfg.half_width, nominal - cfg.half_width)?;
    let measured = off.axis().ppm(bin);
    Ok(B0Estimate {
        shift_ppm: nominal - measured,
        reference,
        naa_prominence: naa,
        cr_prominence: cr,
    })
}

/// Relabel every member by `shift_ppm` and recompute DIFF.
pub fn apply_b0_shift(acqs: &AcquisitionSet, shift_ppm: f64) -> Result<AcquisitionSet> {
    let axis = acqs.axis().shifted(shift_ppm);
    let shifted = acqs.try_map(|s| {
        let mut out = s.clone().with_axis(axis)?;
        out.set_provenance("b0_shift_ppm", format!("{shift_ppm:.6}"));
        Ok(out)
    })?;
    shifted.with_recomputed_diff()
}

pub fn align_b0(acqs: &AcquisitionSet) -> Result<AcquisitionSet> {
    align_b0_with(acqs, &AlignConfig::default()).map(|(set, _)| set)
}

pub fn align_b0_with(acqs: &AcquisitionSet, cfg: &AlignConfig) -> Result<(AcquisitionSet, B0Estimate)> {
    let off = acqs.off().ok_or_else(|| domain("alignment needs the OFF acquisition"))?;
    let est = estimate_b0_shift(off, cfg)?;
    Ok((apply_b0_shift(acqs, est.shift_ppm)?, est))
}

/// Linear interpolation onto a uniform descending grid over `[high, low]`.
pub fn crop_resample(spec: &Spectrum, high: f64, low: f64, n_points: usize) -> Result<Spectrum> {
    let src = spec.axis();
    let tol = crate::spectra::TOLERANCES.band_edge_ppm;
    if high > src.ppm_max() + tol || low < src.ppm_min() - tol {
        return Err(domain(format!(
            "band [{high}, {low}] exceeds axis [{:.4}, {:.4}]",
            src.ppm_max(),
            src.ppm_min()
        )));
    }
    let target = PpmAxis::from_ppm_range(src.spectrometer_freq(), high, low, n_points)?;
    let v = spec.values();
    let last = v.len() - 1;
    let values = (0..n_points)
        .map(|j| {
            let mut x = src.bin_of_ppm(target.ppm(j as f64)).clamp(0.0, last as f64);
            // grid-aligned positions must not pick up rounding from the axis maths
            if (x - x.round()).abs() < 1e-9 {
                x = x.round();
            }
            let i = (x.floor() as usize).min(last.saturating_sub(1));
            let t = x - i as f64;
            if t == 0.0 {
                v[i]
            } else {
                v[i] * (1.0 - t) + v[i + 1] * t
            }
        })
        .collect();
    let mut out = Spectrum::new(values, target, spec.acquisition())?;
    for (k, val) in spec.provenance() {
        out.set_provenance(k.clone(), val.clone());
    }
    Ok(out)
}

/// Scale factor that [`normalise_amplitude`] divides by.
pub fn amplitude_scale(acqs: &AcquisitionSet) -> Result<f64> {
    let m = match acqs.off() {
        Some(off) => off.max_magnitude(),
        None => acqs.iter().map(|s| s.max_magnitude()).fold(0.0, f64::max),
    };
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::Normalisation(format!("reference maximum magnitude is {m}")));
    }
    Ok(m)
}

/// Divide by max |OFF| (or the global maximum when OFF is absent).
pub fn normalise_amplitude(acqs: &AcquisitionSet) -> Result<AcquisitionSet> {
    let m = amplitude_scale(acqs)?;
    acqs.try_map(|s| Ok(s.divided(m)))
}

/// Channel matrix of an already prepared set.
pub fn extract_channels(acqs: &AcquisitionSet, cfg: &ExportConfig) -> Result<ModelInput> {
    let labels = cfg.channel_labels();
    let axis = *acqs.axis();
    let mut channels = Vec::with_capacity(labels.len() * axis.n_points());
    for &(a, d) in &labels {
        let s = acqs
            .get(a)
            .ok_or_else(|| Error::Export(format!("acquisition {a} requested but not present")))?;
        channels.extend(s.values().iter().map(|&v| d.apply(v)));
    }
    if let Some(bad) = channels.iter().find(|v| !v.is_finite()) {
        return Err(Error::Export(format!("non-finite channel value {bad}")));
    }
    Ok(ModelInput {
        channels,
        channel_labels: labels,
        axis,
    })
}

/// Cropping and amplitude normalisation: the part of the pipeline that is
/// idempotent.
pub fn export_stage(acqs: &AcquisitionSet, cfg: &ExportConfig) -> Result<AcquisitionSet> {
    cfg.validate()?;
    let [high, low] = cfg.ppm_band;
    let cropped = acqs.try_map(|s| crop_resample(s, high, low, cfg.n_points))?;
    normalise_amplitude(&cropped)?.with_recomputed_diff()
}

pub fn export_input(acqs: &AcquisitionSet, cfg: &ExportConfig) -> Result<ModelInput> {
    for &a in &cfg.acquisitions {
        if acqs.get(a).is_none() {
            return Err(Error::Export(format!("acquisition {a} requested but not present")));
        }
    }
    extract_channels(&export_stage(acqs, cfg)?, cfg)
}

/// Zero fill / truncate every member in time to `n` samples.
pub fn resample_time(acqs: &AcquisitionSet, n: usize) -> Result<AcquisitionSet> {
    let axis = acqs.axis().with_points(n)?;
    acqs.try_map(|s| {
        let fid = zero_fill_or_truncate(&s.to_fid(), n)?;
        let mut out = fft_fid(&fid, &axis, s.acquisition())?;
        for (k, v) in s.provenance() {
            out.set_provenance(k.clone(), v.clone());
        }
        Ok(out)
    })
}

/// What the pipeline did to one set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub b0: Option<B0Estimate>,
    pub water_applied: bool,
    pub scale: f64,
}

fn water_and_diff(acqs: &AcquisitionSet, w: &WaterConfig) -> Result<(AcquisitionSet, bool)> {
    let mut applied = false;
    let out = acqs.try_map(|s| {
        if s.acquisition() == Acquisition::Diff {
            return Ok(s.clone());
        }
        let (o, ok) = attenuate_water(s, w.center, w.half_width, w.clamp_factor);
        applied |= ok;
        Ok(o)
    })?;
    Ok((out.with_recomputed_diff()?, applied))
}

/// Full pipeline up to (not including) channel extraction. DIFF is always
/// recomputed from the processed OFF/ON pair when both are present.
pub fn preprocess(acqs: &AcquisitionSet, cfg: &ExportConfig) -> Result<(AcquisitionSet, PipelineReport)> {
    cfg.validate()?;
    let n = cfg.fid_points(acqs.axis().bandwidth());
    let mut set = resample_time(acqs, n)?.with_recomputed_diff()?;
    let mut water_applied = false;
    if cfg.water.enabled {
        let (s, ok) = water_and_diff(&set, &cfg.water)?;
        set = s;
        water_applied = ok;
    }
    let mut b0 = None;
    if cfg.align.enabled {
        let (s, est) = align_b0_with(&set, &cfg.align)?;
        set = s;
        b0 = Some(est);
    }
    let scale = {
        let [high, low] = cfg.ppm_band;
        let cropped = set.try_map(|s| crop_resample(s, high, low, cfg.n_points))?;
        let scale = amplitude_scale(&cropped)?;
        set = cropped.try_map(|s| Ok(s.divided(scale)))?.with_recomputed_diff()?;
        scale
    };
    Ok((set, PipelineReport { b0, water_applied, scale }))
}

/// Preprocess a noisy set and its clean reference identically: the shift
/// and amplitude scale come from the noisy set, so both land on one grid
/// at one scale.
pub fn preprocess_pair(
    noisy: &AcquisitionSet,
    clean: &AcquisitionSet,
    cfg: &ExportConfig,
) -> Result<(AcquisitionSet, AcquisitionSet, PipelineReport)> {
    let (n, report) = preprocess(noisy, cfg)?;
    let points = cfg.fid_points(clean.axis().bandwidth());
    let mut c = resample_time(clean, points)?.with_recomputed_diff()?;
    if cfg.water.enabled {
        c = water_and_diff(&c, &cfg.water)?.0;
    }
    if let Some(b0) = report.b0 {
        c = apply_b0_shift(&c, b0.shift_ppm)?;
    }
    let [high, low] = cfg.ppm_band;
    let c = c
        .try_map(|s| Ok(crop_resample(s, high, low, cfg.n_points)?.divided(report.scale)))?
        .with_recomputed_diff()?;
    Ok((n, c, report))
}

pub fn normalise_target(raw: &[f64], mode: TargetNorm) -> Result<TargetVector> {
    if raw.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(domain("target values must be finite and >= 0"));
    }
    let denom = match mode {
        TargetNorm::Sum => raw.iter().sum::<f64>(),
        TargetNorm::Max => raw.iter().cloned().fold(0.0, f64::max),
    };
    if denom <= 0.0 {
        return Err(domain("cannot normalise an all-zero target"));
    }
    Ok(TargetVector {
        values: raw.iter().map(|v| v / denom).collect(),
        norm_mode: mode,
    })
}

/// Rescale any non-negative vector so its maximum is 1 (evaluation space).
/// All-zero inputs are returned unchanged.
pub fn to_max_normalised(values: &[f64]) -> Vec<f64> {
    let m = values.iter().cloned().fold(0.0, f64::max);
    if m > 0.0 {
        values.iter().map(|v| v / m).collect()
    } else {
        values.to_vec()
    }
}

/// `ON - OFF` of a set, recomputed from its members.
pub fn recompute_diff(acqs: &AcquisitionSet) -> Result<Spectrum> {
    match (acqs.off(), acqs.on()) {
        (Some(off), Some(on)) => compute_diff(off, on),
        _ => Err(domain("DIFF needs OFF and ON")),
    }
}
