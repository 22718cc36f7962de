//! Labelled mixture generation: basis sets, Sobol concentrations, mixing,
//! noise injection and linewidth augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, dim, domain, Result};
use crate::sobol::Sobol;
use crate::spectra::{
    apodize, compute_diff, fft_fid, frequency_shift, Acquisition, AcquisitionSet, Fid, PpmAxis, Spectrum, C64,
};

/// Canonical metabolite order.
pub const METABOLITES: [&str; 5] = ["NAA", "Cr", "GABA", "Glu", "Gln"];

/// One Lorentzian line of a synthetic basis entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peak {
    pub ppm: f64,
    pub amplitude: f64,
    /// Amplitude factor applied in the ON acquisition (1 = unedited).
    #[serde(default = "unit")]
    pub on_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Peak {
    pub const fn new(ppm: f64, amplitude: f64) -> Self {
        Self {
            ppm,
            amplitude,
            on_scale: 1.0,
        }
    }

    pub const fn edited(ppm: f64, amplitude: f64, on_scale: f64) -> Self {
        Self { ppm, amplitude, on_scale }
    }
}

/// Peaks of one metabolite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetabolitePeaks {
    pub name: String,
    pub peaks: Vec<Peak>,
}

/// Simplified singlet model of the five target metabolites. ON-spectrum
/// scaling mimics the editing pulse: GABA's 3.0 ppm line is refocused
/// (doubled) while its 1.9 ppm partner is inverted away; Glu/Gln lose most
/// of their 2.1 ppm multiplets and gain at 3.75 ppm.
pub fn default_peak_table() -> Vec<MetabolitePeaks> {
    let table: [(&str, Vec<Peak>); 5] = [
        (
            "NAA",
            vec![Peak::edited(2.01, 3.0, 0.6), Peak::new(2.60, 0.6), Peak::new(4.38, 0.5)],
        ),
        ("Cr", vec![Peak::new(3.015, 3.0), Peak::new(3.913, 2.0)]),
        (
            "GABA",
            vec![Peak::edited(3.01, 2.0, 2.0), Peak::edited(1.89, 2.0, 0.0), Peak::new(2.28, 2.0)],
        ),
        (
            "Glu",
            vec![
                Peak::edited(2.04, 1.0, 0.2),
                Peak::edited(2.12, 1.0, 0.2),
                Peak::new(2.34, 2.0),
                Peak::edited(3.75, 1.0, 1.6),
            ],
        ),
        (
            "Gln",
            vec![
                Peak::edited(2.11, 1.0, 0.2),
                Peak::edited(2.13, 1.0, 0.2),
                Peak::new(2.44, 2.0),
                Peak::edited(3.76, 1.0, 1.6),
            ],
        ),
    ];
    table
        .into_iter()
        .map(|(name, peaks)| MetabolitePeaks {
            name: name.to_string(),
            peaks,
        })
        .collect()
}

/// Per-metabolite OFF/ON reference FIDs at a known linewidth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    metabolites: Vec<String>,
    off: Vec<Fid>,
    on: Vec<Fid>,
    intrinsic_fwhm: f64,
    axis: PpmAxis,
}

impl BasisSet {
    pub fn new(metabolites: Vec<String>, off: Vec<Fid>, on: Vec<Fid>, intrinsic_fwhm: f64, axis: PpmAxis) -> Result<Self> {
        if metabolites.is_empty() {
            return Err(domain("basis set needs at least one metabolite"));
        }
        if off.len() != metabolites.len() || on.len() != metabolites.len() {
            return Err(dim("every metabolite needs both OFF and ON entries"));
        }
        if !(intrinsic_fwhm > 0.0 && intrinsic_fwhm.is_finite()) {
            return Err(domain(format!("intrinsic FWHM must be positive, got {intrinsic_fwhm}")));
        }
        for f in off.iter().chain(&on) {
            if f.len() != axis.n_points() || (f.bandwidth() - axis.bandwidth()).abs() > 1e-9 * axis.bandwidth() {
                return Err(dim("basis entries must share the basis axis"));
            }
        }
        Ok(Self {
            metabolites,
            off,
            on,
            intrinsic_fwhm,
            axis,
        })
    }

    pub fn metabolites(&self) -> &[String] {
        &self.metabolites
    }

    pub fn len(&self) -> usize {
        self.metabolites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metabolites.is_empty()
    }

    pub fn intrinsic_fwhm(&self) -> f64 {
        self.intrinsic_fwhm
    }

    pub fn axis(&self) -> &PpmAxis {
        &self.axis
    }

    pub fn fid(&self, metabolite: usize, acq: Acquisition) -> Result<&Fid> {
        match acq {
            Acquisition::Off => Ok(&self.off[metabolite]),
            Acquisition::On => Ok(&self.on[metabolite]),
            Acquisition::Diff => Err(domain("basis sets hold OFF and ON only")),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.metabolites.iter().position(|m| m.eq_ignore_ascii_case(name))
    }

    /// Basis spectrum of one metabolite.
    pub fn spectrum(&self, metabolite: usize, acq: Acquisition) -> Result<Spectrum> {
        match acq {
            Acquisition::Diff => compute_diff(
                &self.spectrum(metabolite, Acquisition::Off)?,
                &self.spectrum(metabolite, Acquisition::On)?,
            ),
            _ => fft_fid(self.fid(metabolite, acq)?, &self.axis, acq),
        }
    }

    /// Basis broadened by `extra_fwhm` Hz.
    pub fn with_linewidth_extra(&self, extra_fwhm: f64) -> Result<BasisSet> {
        let off = self.off.iter().map(|f| apodize(f, extra_fwhm)).collect::<Result<_>>()?;
        let on = self.on.iter().map(|f| apodize(f, extra_fwhm)).collect::<Result<_>>()?;
        BasisSet::new(self.metabolites.clone(), off, on, self.intrinsic_fwhm + extra_fwhm, self.axis)
    }
}

/// Sum of complex exponentials apodized to `fwhm`, one entry per metabolite.
pub fn generate_lorentzian_basis(table: &[MetabolitePeaks], fwhm: f64, axis: &PpmAxis) -> Result<BasisSet> {
    if !(fwhm > 0.0 && fwhm.is_finite()) {
        return Err(domain(format!("basis FWHM must be positive, got {fwhm}")));
    }
    let n = axis.n_points();
    let dwell = axis.dwell_time();
    let mut names = Vec::new();
    let mut off = Vec::new();
    let mut on = Vec::new();
    for m in table {
        let mut f_off = Fid::zeros(n, dwell)?;
        let mut f_on = Fid::zeros(n, dwell)?;
        for p in &m.peaks {
            if !axis.contains_ppm(p.ppm) {
                return Err(domain(format!(
                    "{} peak at {} ppm lies outside the axis [{:.3}, {:.3}]",
                    m.name,
                    p.ppm,
                    axis.ppm_min(),
                    axis.ppm_max()
                )));
            }
            // half-weight first point removes the constant baseline offset
            let mut ones = vec![C64::new(1.0, 0.0); n];
            ones[0] = C64::new(0.5, 0.0);
            let ones = Fid::new(ones, dwell)?;
            let line = frequency_shift(&ones, axis.hz_of_ppm(p.ppm));
            f_off.add_scaled(&line, p.amplitude)?;
            f_on.add_scaled(&line, p.amplitude * p.on_scale)?;
        }
        names.push(m.name.clone());
        off.push(apodize(&f_off, fwhm)?);
        on.push(apodize(&f_on, fwhm)?);
    }
    BasisSet::new(names, off, on, fwhm, *axis)
}

/// Relative concentrations, one value in `[0,1]` per metabolite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConcentrationVector(Vec<f64>);

impl ConcentrationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(domain(format!("concentration {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Linewidth of each generated sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LinewidthMode {
    Fixed(f64),
    UniformGrid { low: f64, high: f64, step: f64 },
}

impl LinewidthMode {
    /// All attainable linewidths in ascending order.
    pub fn grid(&self) -> Result<Vec<f64>> {
        match *self {
            LinewidthMode::Fixed(w) => Ok(vec![w]),
            LinewidthMode::UniformGrid { low, high, step } => {
                if !(step > 0.0) || !(high >= low) || !low.is_finite() || !high.is_finite() {
                    return Err(config(format!("invalid linewidth grid ({low}, {high}, {step})")));
                }
                let n = ((high - low) / step + 1e-9).floor() as usize + 1;
                // rounding keeps values such as 1.2 exact in decimal
                Ok((0..n).map(|k| ((low + k as f64 * step) * 1e9).round() / 1e9).collect())
            }
        }
    }

    fn lowest(&self) -> f64 {
        match *self {
            LinewidthMode::Fixed(w) => w,
            LinewidthMode::UniformGrid { low, .. } => low,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub n_samples: usize,
    pub noise_sigma_range: [f64; 2],
    pub linewidth_mode: LinewidthMode,
    pub master_seed: u64,
    #[serde(default)]
    pub sobol_skip: u64,
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.noise_sigma_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(config(format!("noise range must satisfy 0 <= low <= high, got [{lo}, {hi}]")));
        }
        self.linewidth_mode.grid()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub noise_sigma: f64,
    pub linewidth: f64,
    pub seed: u64,
    pub sobol_index: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelledSample {
    pub acquisitions: AcquisitionSet,
    pub clean_acquisitions: AcquisitionSet,
    pub target: ConcentrationVector,
    pub meta: SampleMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelledDataset {
    pub metabolites: Vec<String>,
    pub samples: Vec<LabelledSample>,
    pub config: SynthesisConfig,
}

impl LabelledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn mix_fids(basis: &BasisSet, c: &ConcentrationVector, linewidth: f64) -> Result<(Fid, Fid)> {
    if c.len() != basis.len() {
        return Err(dim(format!(
            "{} concentrations for {} metabolites",
            c.len(),
            basis.len()
        )));
    }
    let extra = linewidth - basis.intrinsic_fwhm();
    if extra < -1e-12 {
        return Err(domain(format!(
            "cannot narrow by apodization: linewidth {linewidth} Hz below basis {} Hz",
            basis.intrinsic_fwhm()
        )));
    }
    let n = basis.axis().n_points();
    let dwell = basis.axis().dwell_time();
    let mut off = Fid::zeros(n, dwell)?;
    let mut on = Fid::zeros(n, dwell)?;
    for (m, &w) in c.values().iter().enumerate() {
        if w != 0.0 {
            off.add_scaled(&basis.off[m], w)?;
            on.add_scaled(&basis.on[m], w)?;
        }
    }
    let extra = extra.max(0.0);
    Ok((apodize(&off, extra)?, apodize(&on, extra)?))
}

fn set_from_fids(off: &Fid, on: &Fid, axis: &PpmAxis) -> Result<AcquisitionSet> {
    AcquisitionSet::from_off_on(fft_fid(off, axis, Acquisition::Off)?, fft_fid(on, axis, Acquisition::On)?)
}

/// Noise-free mixture with DIFF computed after mixing.
pub fn mix_spectrum(basis: &BasisSet, c: &ConcentrationVector, linewidth: f64) -> Result<AcquisitionSet> {
    let (off, on) = mix_fids(basis, c, linewidth)?;
    set_from_fids(&off, &on, basis.axis())
}

fn noisy_fid(fid: &Fid, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Fid> {
    let normal = Normal::new(0.0, sigma).map_err(|e| domain(e.to_string()))?;
    let samples = fid
        .samples()
        .iter()
        .map(|s| s + C64::new(normal.sample(rng), normal.sample(rng)))
        .collect();
    Fid::new(samples, fid.dwell_time())
}

/// Independent complex Gaussian noise (std `sigma` per component) added to
/// the OFF and ON FIDs; DIFF recomputed from the noisy pair.
pub fn add_noise(sample: &AcquisitionSet, sigma: f64, seed: u64) -> Result<AcquisitionSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(domain(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(sample.clone());
    }
    let (Some(off), Some(on)) = (sample.off(), sample.on()) else {
        return Err(domain("noise injection needs OFF and ON"));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let off_n = noisy_fid(&off.to_fid(), sigma, &mut rng)?;
    let on_n = noisy_fid(&on.to_fid(), sigma, &mut rng)?;
    let axis = sample.axis();
    AcquisitionSet::from_off_on(
        fft_fid(&off_n, axis, Acquisition::Off)?,
        fft_fid(&on_n, axis, Acquisition::On)?,
    )
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sample `index`; independent of generation order.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index))
}

/// Sample `index` of the dataset described by `cfg`.
pub fn generate_sample(basis: &BasisSet, cfg: &SynthesisConfig, sobol: &Sobol, index: u64) -> Result<LabelledSample> {
    let sobol_index = cfg.sobol_skip + index;
    let target = ConcentrationVector::new(sobol.point(sobol_index))?;
    let seed = derive_seed(cfg.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.noise_sigma_range;
    let sigma = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let grid = cfg.linewidth_mode.grid()?;
    let linewidth = grid[rng.random_range(0..grid.len())];

    let (mut off, mut on) = mix_fids(basis, &target, linewidth)?;
    let axis = basis.axis();
    let clean_off = fft_fid(&off, axis, Acquisition::Off)?;
    let peak = clean_off.max_magnitude();
    let clean = if peak > 0.0 {
        off = off.scaled(1.0 / peak);
        on = on.scaled(1.0 / peak);
        set_from_fids(&off, &on, axis)?
    } else {
        set_from_fids(&off, &on, axis)?
    };
    let noisy = if sigma > 0.0 {
        let off_n = noisy_fid(&off, sigma, &mut rng)?;
        let on_n = noisy_fid(&on, sigma, &mut rng)?;
        set_from_fids(&off_n, &on_n, axis)?
    } else {
        clean.clone()
    };
    Ok(LabelledSample {
        acquisitions: noisy,
        clean_acquisitions: clean,
        target,
        meta: SampleMeta {
            noise_sigma: sigma,
            linewidth,
            seed,
            sobol_index,
        },
    })
}

fn check_generation(basis: &BasisSet, cfg: &SynthesisConfig) -> Result<Sobol> {
    cfg.validate()?;
    if cfg.linewidth_mode.lowest() < basis.intrinsic_fwhm() - 1e-12 {
        return Err(domain(format!(
            "cannot narrow by apodization: lowest linewidth {} Hz below basis {} Hz",
            cfg.linewidth_mode.lowest(),
            basis.intrinsic_fwhm()
        )));
    }
    Sobol::new(basis.len())
}

/// Generate every sample and map it through `f` in parallel; output order
/// and content do not depend on the thread schedule.
pub fn generate_map<T: Send>(
    basis: &BasisSet,
    cfg: &SynthesisConfig,
    f: impl Fn(LabelledSample) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let sobol = check_generation(basis, cfg)?;
    (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| generate_sample(basis, cfg, &sobol, i).and_then(&f))
        .collect()
}

pub fn generate_dataset(basis: &BasisSet, cfg: &SynthesisConfig) -> Result<LabelledDataset> {
    let samples = generate_map(basis, cfg, Ok)?;
    Ok(LabelledDataset {
        metabolites: basis.metabolites().to_vec(),
        samples,
        config: cfg.clone(),
    })
}
