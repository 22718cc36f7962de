use serde::{Deserialize, Serialize};

use crate::error::{config, dim, Result};
use crate::nn::{Activation, LayerSpec, Param, Sequential, SequentialState, Tensor};
use crate::preprocess::ExportConfig;
use crate::scalar::Real;
use crate::synthesis::derive_seed;

/// Quantifier-loss warm-up: `w_start` at epoch 0 rising linearly to `w_end`
/// at `ramp_epochs`, then held.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ramp {
    pub w_start: f64,
    pub w_end: f64,
    /// `None` means 10% of the training epochs.
    #[serde(default)]
    pub ramp_epochs: Option<usize>,
}

impl Default for Ramp {
    fn default() -> Self {
        Self {
            w_start: 0.1,
            w_end: 1.0,
            ramp_epochs: None,
        }
    }
}

impl Ramp {
    pub fn resolved_epochs(&self, total_epochs: usize) -> usize {
        self.ramp_epochs.unwrap_or_else(|| (total_epochs as f64 * 0.1).round() as usize)
    }

    pub fn weight(&self, epoch: usize, total_epochs: usize) -> f64 {
        let r = self.resolved_epochs(total_epochs);
        if r == 0 || epoch >= r {
            return self.w_end;
        }
        self.w_start + (self.w_end - self.w_start) * epoch as f64 / r as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YaeConfig {
    pub l_e: usize,
    pub l_d: usize,
    pub l_q: usize,
    pub n_q: usize,
    pub a_e: Activation,
    pub a_d: Activation,
    pub a_q: Activation,
    pub a_m: Activation,
    pub d_e: f64,
    pub export: ExportConfig,
    pub batch_size: usize,
    #[serde(default)]
    pub ramp: Ramp,
    #[serde(default = "one")]
    pub w_ae: f64,
}

fn one() -> f64 {
    1.0
}

impl YaeConfig {
    /// The selected configuration with quantifier width scaled to the
    /// export length (`n_q = 384` at 2048 points).
    pub fn selected(export: ExportConfig) -> Self {
        let n_q = (384 * export.n_points / 2048).max(1);
        Self {
            l_e: 5,
            l_d: 6,
            l_q: 2,
            n_q,
            a_e: Activation::Tanh,
            a_d: Activation::Tanh,
            a_q: Activation::Sigmoid,
            a_m: Activation::Sigmoid,
            d_e: 0.2,
            export,
            batch_size: 16,
            ramp: Ramp::default(),
            w_ae: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.export.validate()?;
        let nf = self.export.n_points;
        if self.l_e < 2 || self.l_d < 2 || self.l_q < 2 {
            return Err(config("YAE layer counts must be >= 2"));
        }
        if self.l_e > 30 || nf % (1usize << (self.l_e - 1)) != 0 {
            return Err(config(format!("N_f = {nf} not divisible by 2^(L_e-1) with L_e = {}", self.l_e)));
        }
        if self.l_d > 30 || nf % (1usize << (self.l_d - 1)) != 0 {
            return Err(config(format!("N_f = {nf} not divisible by 2^(L_d-1) with L_d = {}", self.l_d)));
        }
        if self.l_q > 30 || self.n_q >> (self.l_q - 2) == 0 {
            return Err(config(format!("N_q = {} too small for L_q = {}", self.n_q, self.l_q)));
        }
        if !(0.0..1.0).contains(&self.d_e) {
            return Err(config("encoder dropout must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(config("batch size must be >= 1"));
        }
        if !(self.w_ae >= 0.0) || !(self.ramp.w_start >= 0.0) || !(self.ramp.w_end >= 0.0) {
            return Err(config("loss weights must be >= 0"));
        }
        Ok(())
    }

    pub fn latent_width(&self) -> usize {
        self.export.n_points >> (self.l_e - 1)
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let nf = self.export.n_points;
        let mut s = Vec::new();
        for l in 1..self.l_e {
            s.push(LayerSpec::Dense { units: nf >> (l - 1) });
            s.push(LayerSpec::Activation { activation: self.a_e });
            if self.d_e > 0.0 {
                s.push(LayerSpec::Dropout { rate: self.d_e });
            }
        }
        s.push(LayerSpec::Dense {
            units: self.latent_width(),
        });
        s.push(LayerSpec::Activation { activation: self.a_e });
        s
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let nf = self.export.n_points;
        let mut s = Vec::new();
        for l in (2..=self.l_d).rev() {
            s.push(LayerSpec::Dense { units: nf >> (l - 1) });
            s.push(LayerSpec::Activation { activation: self.a_d });
        }
        s.push(LayerSpec::Dense { units: nf });
        s.push(LayerSpec::Activation { activation: self.a_d });
        s
    }

    pub fn quantifier_specs(&self, n_metabolites: usize) -> Vec<LayerSpec> {
        let mut s = Vec::new();
        for l in 1..self.l_q {
            s.push(LayerSpec::Dense { units: self.n_q >> (l - 1) });
            s.push(LayerSpec::Activation { activation: self.a_q });
        }
        s.push(LayerSpec::Dense { units: n_metabolites });
        s.push(LayerSpec::Activation { activation: self.a_m });
        s
    }
}

/// Y-shaped autoencoder: one encoder and one decoder per input channel
/// (unshared weights) and a quantifier on the concatenated latents.
#[derive(Clone, Debug)]
pub struct Yae<T: Real> {
    pub encoders: Vec<Sequential<T>>,
    pub decoders: Vec<Sequential<T>>,
    pub quantifier: Sequential<T>,
    channels: usize,
    n_points: usize,
    latent: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct YaeState<T: Real> {
    pub encoders: Vec<SequentialState<T>>,
    pub decoders: Vec<SequentialState<T>>,
    pub quantifier: SequentialState<T>,
}

/// Output of a YAE forward pass.
pub struct YaeOutput<T: Real> {
    /// `[batch, channels, n_points]`
    pub reconstruction: Tensor<T>,
    /// `[batch, n_metabolites]`
    pub concentrations: Tensor<T>,
}

fn channel_slice<T: Real>(x: &Tensor<T>, c: usize, width: usize) -> Result<Tensor<T>> {
    let b = x.batch();
    let mut out = Vec::with_capacity(b * width);
    for s in 0..b {
        let row = x.sample(s);
        out.extend_from_slice(&row[c * width..(c + 1) * width]);
    }
    Tensor::new(vec![b, width], out)
}

fn interleave<T: Real>(parts: &[Tensor<T>], batch: usize, width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * parts.len() * width);
    for s in 0..batch {
        for p in parts {
            out.extend_from_slice(p.sample(s));
        }
    }
    out
}

pub fn build_yae<T: Real>(cfg: &YaeConfig, n_metabolites: usize, seed: u64) -> Result<Yae<T>> {
    cfg.validate()?;
    if n_metabolites == 0 {
        return Err(config("YAE needs at least one output"));
    }
    let channels = cfg.export.n_channels();
    let nf = cfg.export.n_points;
    let latent = cfg.latent_width();
    let enc = cfg.encoder_specs();
    let dec = cfg.decoder_specs();
    let mut k = 0u64;
    let mut next = || {
        k += 1;
        derive_seed(seed, k)
    };
    let encoders = (0..channels)
        .map(|_| Sequential::build(&enc, &[nf], next()))
        .collect::<Result<Vec<_>>>()?;
    let decoders = (0..channels)
        .map(|_| Sequential::build(&dec, &[latent], next()))
        .collect::<Result<Vec<_>>>()?;
    let quantifier = Sequential::build(&cfg.quantifier_specs(n_metabolites), &[channels * latent], next())?;
    Ok(Yae {
        encoders,
        decoders,
        quantifier,
        channels,
        n_points: nf,
        latent,
    })
}

impl<T: Real> Yae<T> {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn latent_width(&self) -> usize {
        self.latent
    }

    /// `x` is `[batch, channels, n_points]`.
    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<YaeOutput<T>> {
        if x.shape()[1..] != [self.channels, self.n_points] {
            return Err(dim(format!(
                "YAE expects samples of shape [{}, {}], got {:?}",
                self.channels,
                self.n_points,
                &x.shape()[1..]
            )));
        }
        let b = x.batch();
        let mut latents = Vec::with_capacity(self.channels);
        let mut recons = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let xc = channel_slice(x, c, self.n_points)?;
            let z = self.encoders[c].forward(xc, training)?;
            recons.push(self.decoders[c].forward(z.clone(), training)?);
            latents.push(z);
        }
        let q_in = Tensor::new(vec![b, self.channels * self.latent], interleave(&latents, b, self.latent))?;
        let concentrations = self.quantifier.forward(q_in, training)?;
        let reconstruction = Tensor::new(
            vec![b, self.channels, self.n_points],
            interleave(&recons, b, self.n_points),
        )?;
        Ok(YaeOutput {
            reconstruction,
            concentrations,
        })
    }

    /// Backpropagate output gradients (already weighted by the loss
    /// weights) through both branches into the encoders.
    pub fn backward(&mut self, g_recon: &Tensor<T>, g_conc: &Tensor<T>) -> Result<()> {
        let gq = self.quantifier.backward(g_conc)?;
        for c in 0..self.channels {
            let gr = channel_slice(g_recon, c, self.n_points)?;
            let mut gz = self.decoders[c].backward(&gr)?;
            let from_q = channel_slice(&gq, c, self.latent)?;
            for (a, &v) in gz.data_mut().iter_mut().zip(from_q.data()) {
                *a += v;
            }
            self.encoders[c].backward(&gz)?;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for n in self.encoders.iter_mut().chain(self.decoders.iter_mut()) {
            out.extend(n.params_mut());
        }
        out.extend(self.quantifier.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for n in self.encoders.iter().chain(self.decoders.iter()) {
            out.extend(n.params());
        }
        out.extend(self.quantifier.params());
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn state(&self) -> YaeState<T> {
        YaeState {
            encoders: self.encoders.iter().map(|n| n.state()).collect(),
            decoders: self.decoders.iter().map(|n| n.state()).collect(),
            quantifier: self.quantifier.state(),
        }
    }

    pub fn load_state(&mut self, s: &YaeState<T>) -> Result<()> {
        if s.encoders.len() != self.channels || s.decoders.len() != self.channels {
            return Err(dim("checkpoint channel count differs from network"));
        }
        for (n, st) in self.encoders.iter_mut().zip(&s.encoders) {
            n.load_state(st)?;
        }
        for (n, st) in self.decoders.iter_mut().zip(&s.decoders) {
            n.load_state(st)?;
        }
        self.quantifier.load_state(&s.quantifier)
    }
}
