//! Signal types and transforms: FIDs, ppm axes, spectra and acquisition sets.
//!
//! Conventions used across the crate:
//!
//! * Transforms are unitary (`1/sqrt(N)` both ways), so white time-domain
//!   noise of standard deviation `s` has the same per-bin standard deviation
//!   in the spectrum.
//! * Bin `j` of an `N`-point spectrum sits at `f_j = (j - N/2) * bw / N` Hz
//!   (integer division), i.e. the zero-frequency bin is at `N/2`.
//! * `ppm(j) = center_ppm - f_j / spectrometer_freq`, so stored values run
//!   in descending ppm order. A line at chemical shift `p` therefore
//!   oscillates at `(center_ppm - p) * spectrometer_freq` Hz in the FID.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{dim, domain, Error, Result};

pub type C64 = Complex64;

/// 3 T proton frequency.
pub const DEFAULT_SPECTROMETER_MHZ: f64 = 123.25;
pub const DEFAULT_CENTER_PPM: f64 = 4.7;

/// Numerical tolerances shared by the signal code.
#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    /// Relative tolerance when comparing axis parameters.
    pub axis_rel: f64,
    /// Slack (ppm) allowed when a requested band touches the axis ends.
    pub band_edge_ppm: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    axis_rel: 1e-9,
    band_edge_ppm: 1e-9,
};

fn rel_eq(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

/// Complex time-domain signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fid {
    samples: Vec<C64>,
    dwell_time: f64,
}

impl Fid {
    pub fn new(samples: Vec<C64>, dwell_time: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(dim(format!("FID needs at least 2 samples, got {}", samples.len())));
        }
        if !(dwell_time > 0.0 && dwell_time.is_finite()) {
            return Err(domain(format!("dwell time must be positive, got {dwell_time}")));
        }
        Ok(Self { samples, dwell_time })
    }

    pub fn zeros(n: usize, dwell_time: f64) -> Result<Self> {
        Self::new(vec![C64::new(0.0, 0.0); n], dwell_time)
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<C64> {
        self.samples
    }

    pub fn dwell_time(&self) -> f64 {
        self.dwell_time
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn bandwidth(&self) -> f64 {
        1.0 / self.dwell_time
    }

    /// Sample-wise `self + scale * other`.
    pub fn add_scaled(&mut self, other: &Fid, scale: f64) -> Result<()> {
        if other.len() != self.len() || !rel_eq(other.dwell_time, self.dwell_time, TOLERANCES.axis_rel) {
            return Err(dim("FIDs differ in length or dwell time"));
        }
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += b * scale;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Fid {
        Fid {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            dwell_time: self.dwell_time,
        }
    }
}

/// Chemical-shift axis of an `n_points` spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpmAxis {
    spectrometer_freq: f64,
    center_ppm: f64,
    n_points: usize,
    bandwidth: f64,
}

impl PpmAxis {
    pub fn new(spectrometer_freq: f64, center_ppm: f64, n_points: usize, bandwidth: f64) -> Result<Self> {
        if !(spectrometer_freq > 0.0 && spectrometer_freq.is_finite()) {
            return Err(domain(format!("spectrometer frequency must be positive, got {spectrometer_freq}")));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if n_points < 2 {
            return Err(dim(format!("axis needs at least 2 points, got {n_points}")));
        }
        if !center_ppm.is_finite() {
            return Err(domain("center ppm must be finite"));
        }
        Ok(Self {
            spectrometer_freq,
            center_ppm,
            n_points,
            bandwidth,
        })
    }

    /// Axis at the default 3 T frequency and 4.7 ppm carrier.
    pub fn with_defaults(n_points: usize, bandwidth: f64) -> Result<Self> {
        Self::new(DEFAULT_SPECTROMETER_MHZ, DEFAULT_CENTER_PPM, n_points, bandwidth)
    }

    /// Uniform grid running from `high` ppm (first bin) down to `low` ppm
    /// (last bin) inclusive.
    pub fn from_ppm_range(spectrometer_freq: f64, high: f64, low: f64, n_points: usize) -> Result<Self> {
        if !(high > low) {
            return Err(domain(format!("ppm band must satisfy high > low, got [{high}, {low}]")));
        }
        if n_points < 2 {
            return Err(dim(format!("axis needs at least 2 points, got {n_points}")));
        }
        let step_ppm = (high - low) / (n_points - 1) as f64;
        let bandwidth = step_ppm * spectrometer_freq * n_points as f64;
        let center = high - (n_points / 2) as f64 * step_ppm;
        Self::new(spectrometer_freq, center, n_points, bandwidth)
    }

    pub fn spectrometer_freq(&self) -> f64 {
        self.spectrometer_freq
    }

    pub fn center_ppm(&self) -> f64 {
        self.center_ppm
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dwell_time(&self) -> f64 {
        1.0 / self.bandwidth
    }

    /// Bin spacing in Hz.
    pub fn delta_hz(&self) -> f64 {
        self.bandwidth / self.n_points as f64
    }

    /// Bin spacing in ppm.
    pub fn delta_ppm(&self) -> f64 {
        self.delta_hz() / self.spectrometer_freq
    }

    pub fn hz(&self, bin: f64) -> f64 {
        (bin - (self.n_points / 2) as f64) * self.delta_hz()
    }

    pub fn ppm(&self, bin: f64) -> f64 {
        self.center_ppm - self.hz(bin) / self.spectrometer_freq
    }

    /// Fractional bin index of a chemical shift.
    pub fn bin_of_ppm(&self, ppm: f64) -> f64 {
        (self.n_points / 2) as f64 + (self.center_ppm - ppm) * self.spectrometer_freq / self.delta_hz()
    }

    /// FID oscillation frequency (Hz) of a line at `ppm`.
    pub fn hz_of_ppm(&self, ppm: f64) -> f64 {
        (self.center_ppm - ppm) * self.spectrometer_freq
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.ppm(i as f64)).collect()
    }

    /// Highest ppm (first bin).
    pub fn ppm_max(&self) -> f64 {
        self.ppm(0.0)
    }

    /// Lowest ppm (last bin).
    pub fn ppm_min(&self) -> f64 {
        self.ppm((self.n_points - 1) as f64)
    }

    pub fn contains_ppm(&self, ppm: f64) -> bool {
        ppm <= self.ppm_max() + TOLERANCES.band_edge_ppm && ppm >= self.ppm_min() - TOLERANCES.band_edge_ppm
    }

    /// Same grid relabelled so every bin moves by `delta_ppm`.
    pub fn shifted(&self, delta_ppm: f64) -> PpmAxis {
        PpmAxis {
            center_ppm: self.center_ppm + delta_ppm,
            ..*self
        }
    }

    pub fn approx_eq(&self, other: &PpmAxis) -> bool {
        self.n_points == other.n_points
            && rel_eq(self.spectrometer_freq, other.spectrometer_freq, TOLERANCES.axis_rel)
            && rel_eq(self.bandwidth, other.bandwidth, TOLERANCES.axis_rel)
            && (self.center_ppm - other.center_ppm).abs() <= TOLERANCES.axis_rel * self.delta_ppm().max(1e-12) * 1e3
    }

    /// Same band, different number of points (used after zero filling).
    pub fn with_points(&self, n_points: usize) -> Result<PpmAxis> {
        PpmAxis::new(self.spectrometer_freq, self.center_ppm, n_points, self.bandwidth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acquisition {
    Off,
    On,
    Diff,
}

impl Acquisition {
    pub const ALL: [Acquisition; 3] = [Acquisition::Off, Acquisition::On, Acquisition::Diff];

    pub fn as_str(self) -> &'static str {
        match self {
            Acquisition::Off => "off",
            Acquisition::On => "on",
            Acquisition::Diff => "diff",
        }
    }
}

impl fmt::Display for Acquisition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Acquisition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "off" | "edit_off" => Ok(Acquisition::Off),
            "on" | "edit_on" => Ok(Acquisition::On),
            "diff" => Ok(Acquisition::Diff),
            other => Err(domain(format!("unknown acquisition '{other}'"))),
        }
    }
}

/// Frequency-domain signal with its axis and provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    values: Vec<C64>,
    axis: PpmAxis,
    acquisition: Acquisition,
    provenance: BTreeMap<String, String>,
}

impl Spectrum {
    pub fn new(values: Vec<C64>, axis: PpmAxis, acquisition: Acquisition) -> Result<Self> {
        if values.len() != axis.n_points() {
            return Err(dim(format!(
                "spectrum has {} values but axis has {} points",
                values.len(),
                axis.n_points()
            )));
        }
        Ok(Self {
            values,
            axis,
            acquisition,
            provenance: BTreeMap::new(),
        })
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn axis(&self) -> &PpmAxis {
        &self.axis
    }

    pub fn acquisition(&self) -> Acquisition {
        self.acquisition
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn with_provenance(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.provenance.insert(key.into(), value.into());
        self
    }

    pub fn set_provenance(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.provenance.insert(key.into(), value.into());
    }

    pub fn real(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn imag(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.im).collect()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Spectrum {
        Spectrum {
            values: self.values.iter().map(|v| v * factor).collect(),
            axis: self.axis,
            acquisition: self.acquisition,
            provenance: self.provenance.clone(),
        }
    }

    pub fn divided(&self, divisor: f64) -> Spectrum {
        Spectrum {
            values: self.values.iter().map(|v| v / divisor).collect(),
            axis: self.axis,
            acquisition: self.acquisition,
            provenance: self.provenance.clone(),
        }
    }

    /// Relabel the axis; values untouched.
    pub fn with_axis(mut self, axis: PpmAxis) -> Result<Spectrum> {
        if axis.n_points() != self.values.len() {
            return Err(dim("new axis length differs from spectrum length"));
        }
        self.axis = axis;
        Ok(self)
    }

    pub fn with_acquisition(mut self, acquisition: Acquisition) -> Spectrum {
        self.acquisition = acquisition;
        self
    }

    /// Inverse transform back to the time domain.
    pub fn to_fid(&self) -> Fid {
        ifft_spectrum(self)
    }
}

/// OFF/ON/DIFF spectra sharing one axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSet {
    off: Option<Spectrum>,
    on: Option<Spectrum>,
    diff: Option<Spectrum>,
}

impl AcquisitionSet {
    pub fn new(off: Option<Spectrum>, on: Option<Spectrum>, diff: Option<Spectrum>) -> Result<Self> {
        let members: Vec<&Spectrum> = [&off, &on, &diff].into_iter().flatten().collect();
        let Some(first) = members.first() else {
            return Err(domain("acquisition set needs at least one spectrum"));
        };
        for (slot, expected) in [(&off, Acquisition::Off), (&on, Acquisition::On), (&diff, Acquisition::Diff)] {
            if let Some(s) = slot {
                if s.acquisition() != expected {
                    return Err(domain(format!(
                        "spectrum tagged {} placed in the {} slot",
                        s.acquisition(),
                        expected
                    )));
                }
            }
        }
        for s in &members[1..] {
            if !s.axis().approx_eq(first.axis()) {
                return Err(dim("acquisitions do not share one ppm axis"));
            }
        }
        Ok(Self { off, on, diff })
    }

    /// OFF and ON with DIFF computed from them.
    pub fn from_off_on(off: Spectrum, on: Spectrum) -> Result<Self> {
        let diff = compute_diff(&off, &on)?;
        Self::new(Some(off), Some(on), Some(diff))
    }

    pub fn get(&self, acq: Acquisition) -> Option<&Spectrum> {
        match acq {
            Acquisition::Off => self.off.as_ref(),
            Acquisition::On => self.on.as_ref(),
            Acquisition::Diff => self.diff.as_ref(),
        }
    }

    pub fn off(&self) -> Option<&Spectrum> {
        self.off.as_ref()
    }

    pub fn on(&self) -> Option<&Spectrum> {
        self.on.as_ref()
    }

    pub fn diff(&self) -> Option<&Spectrum> {
        self.diff.as_ref()
    }

    pub fn axis(&self) -> &PpmAxis {
        self.iter().next().expect("non-empty by construction").axis()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Spectrum> {
        [&self.off, &self.on, &self.diff].into_iter().flatten()
    }

    /// Apply `f` to every present member.
    pub fn try_map(&self, mut f: impl FnMut(&Spectrum) -> Result<Spectrum>) -> Result<AcquisitionSet> {
        let off = self.off.as_ref().map(&mut f).transpose()?;
        let on = self.on.as_ref().map(&mut f).transpose()?;
        let diff = self.diff.as_ref().map(&mut f).transpose()?;
        AcquisitionSet::new(off, on, diff)
    }

    /// Recompute DIFF from OFF and ON when both are present.
    pub fn with_recomputed_diff(self) -> Result<AcquisitionSet> {
        match (&self.off, &self.on) {
            (Some(off), Some(on)) => {
                let diff = compute_diff(off, on)?;
                AcquisitionSet::new(self.off, self.on, Some(diff))
            }
            _ => Ok(self),
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [C64], inverse: bool) {
    let n = buf.len();
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    plan.process(buf);
    let scale = 1.0 / (n as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Unitary forward transform, oriented to descending ppm.
pub fn fft_fid(fid: &Fid, axis: &PpmAxis, acquisition: Acquisition) -> Result<Spectrum> {
    if fid.len() != axis.n_points() {
        return Err(dim(format!(
            "FID has {} samples but axis has {} points",
            fid.len(),
            axis.n_points()
        )));
    }
    if !rel_eq(fid.bandwidth(), axis.bandwidth(), TOLERANCES.axis_rel) {
        return Err(dim(format!(
            "FID bandwidth {} Hz differs from axis bandwidth {} Hz",
            fid.bandwidth(),
            axis.bandwidth()
        )));
    }
    let n = fid.len();
    let mut buf = fid.samples().to_vec();
    fft_in_place(&mut buf, false);
    // rotate so that bin j holds frequency (j - n/2)
    buf.rotate_right(n / 2);
    Spectrum::new(buf, *axis, acquisition)
}

/// Inverse of [`fft_fid`].
pub fn ifft_spectrum(spectrum: &Spectrum) -> Fid {
    let n = spectrum.values().len();
    let mut buf = spectrum.values().to_vec();
    buf.rotate_left(n / 2);
    fft_in_place(&mut buf, true);
    Fid {
        samples: buf,
        dwell_time: spectrum.axis().dwell_time(),
    }
}

/// Exponential line broadening: sample `k` is multiplied by
/// `exp(-pi * extra_fwhm * k * dwell)`.
pub fn apodize(fid: &Fid, extra_fwhm: f64) -> Result<Fid> {
    if !(extra_fwhm >= 0.0) || !extra_fwhm.is_finite() {
        return Err(domain(format!("extra linewidth must be >= 0 Hz, got {extra_fwhm}")));
    }
    if extra_fwhm == 0.0 {
        return Ok(fid.clone());
    }
    let rate = -std::f64::consts::PI * extra_fwhm * fid.dwell_time();
    let samples = fid
        .samples()
        .iter()
        .enumerate()
        .map(|(k, s)| s * (rate * k as f64).exp())
        .collect();
    Ok(Fid {
        samples,
        dwell_time: fid.dwell_time(),
    })
}

/// Move every line by `hz` (multiplies by `exp(i 2 pi hz t)`).
pub fn frequency_shift(fid: &Fid, hz: f64) -> Fid {
    let w = 2.0 * std::f64::consts::PI * hz * fid.dwell_time();
    let samples = fid
        .samples()
        .iter()
        .enumerate()
        .map(|(k, s)| s * C64::from_polar(1.0, w * k as f64))
        .collect();
    Fid {
        samples,
        dwell_time: fid.dwell_time(),
    }
}

/// `ON - OFF`, tagged DIFF, carrying both parents' provenance.
pub fn compute_diff(off: &Spectrum, on: &Spectrum) -> Result<Spectrum> {
    if !off.axis().approx_eq(on.axis()) || off.values().len() != on.values().len() {
        return Err(dim("OFF and ON spectra have different axes"));
    }
    let values = on.values().iter().zip(off.values()).map(|(a, b)| a - b).collect();
    let mut diff = Spectrum::new(values, *on.axis(), Acquisition::Diff)?;
    for (k, v) in off.provenance() {
        diff.set_provenance(format!("off.{k}"), v.clone());
    }
    for (k, v) in on.provenance() {
        diff.set_provenance(format!("on.{k}"), v.clone());
    }
    diff.set_provenance("derived", "on-off");
    Ok(diff)
}

/// Pad with trailing zeros or keep the leading `target_len` samples.
pub fn zero_fill_or_truncate(fid: &Fid, target_len: usize) -> Result<Fid> {
    if target_len < 2 {
        return Err(dim(format!("target length must be >= 2, got {target_len}")));
    }
    let mut samples = fid.samples().to_vec();
    samples.resize(target_len, C64::new(0.0, 0.0));
    Ok(Fid {
        samples,
        dwell_time: fid.dwell_time(),
    })
}

/// Full width at half maximum (Hz) of the tallest line in the real part,
/// located by linear interpolation of the half-maximum crossings.
pub fn measure_fwhm(spectrum: &Spectrum) -> Option<f64> {
    let re = spectrum.real();
    let (peak, &height) = re
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if height <= 0.0 {
        return None;
    }
    let half = height / 2.0;
    let mut left = None;
    for i in (0..peak).rev() {
        if re[i] <= half {
            let t = (half - re[i]) / (re[i + 1] - re[i]);
            left = Some(i as f64 + t);
            break;
        }
    }
    let mut right = None;
    for i in peak + 1..re.len() {
        if re[i] <= half {
            let t = (re[i - 1] - half) / (re[i - 1] - re[i]);
            right = Some((i - 1) as f64 + t);
            break;
        }
    }
    Some((right? - left?) * spectrum.axis().delta_hz())
}
