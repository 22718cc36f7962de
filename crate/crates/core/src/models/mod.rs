//! The two regressors (convolutional and Y-shaped autoencoder), their
//! training loops and k-fold cross-validation.

mod cnn;
mod data;
mod yae;

pub use cnn::{build_cnn, cnn_specs, CnnConfig};
pub use data::PreparedDataset;
pub use yae::{build_yae, Ramp, Yae, YaeConfig, YaeOutput, YaeState};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::nn::{huber_loss, mse_loss, Adam, AdamConfig, Sequential, SequentialState, Tensor};
use crate::preprocess::{to_max_normalised, ExportConfig};
use crate::scalar::Real;
use crate::synthesis::derive_seed;

/// Huber threshold for both YAE branches.
pub const HUBER_DELTA: f64 = 1.0;
/// Epochs used for CNN selection.
pub const CNN_SELECTION_EPOCHS: usize = 100;
/// Epochs used for YAE selection.
pub const YAE_SELECTION_EPOCHS: usize = 200;
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "lowercase")]
pub enum ModelConfig {
    Cnn(CnnConfig),
    Yae(YaeConfig),
}

impl ModelConfig {
    pub fn export(&self) -> &ExportConfig {
        match self {
            ModelConfig::Cnn(c) => &c.export,
            ModelConfig::Yae(c) => &c.export,
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            ModelConfig::Cnn(c) => c.batch_size,
            ModelConfig::Yae(c) => c.batch_size,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        match &mut self {
            ModelConfig::Cnn(c) => c.batch_size = batch_size,
            ModelConfig::Yae(c) => c.batch_size = batch_size,
        }
        self
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ModelConfig::Cnn(_) => "cnn",
            ModelConfig::Yae(_) => "yae",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Cnn(c) => c.validate(),
            ModelConfig::Yae(c) => c.validate(),
        }
    }
}

/// A built network of either architecture.
#[derive(Clone, Debug)]
pub enum Network<T: Real> {
    Cnn(Sequential<T>),
    Yae(Yae<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", rename_all = "lowercase")]
pub enum ModelState<T: Real> {
    Cnn(SequentialState<T>),
    Yae(YaeState<T>),
}

impl<T: Real> Network<T> {
    pub fn build(cfg: &ModelConfig, n_metabolites: usize, seed: u64) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::Cnn(c) => Network::Cnn(build_cnn(c, n_metabolites, seed)?),
            ModelConfig::Yae(c) => Network::Yae(build_yae(c, n_metabolites, seed)?),
        })
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn params(&self) -> Vec<&crate::nn::Param<T>> {
        match self {
            Network::Cnn(n) => n.params(),
            Network::Yae(n) => n.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut crate::nn::Param<T>> {
        match self {
            Network::Cnn(n) => n.params_mut(),
            Network::Yae(n) => n.params_mut(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn state(&self) -> ModelState<T> {
        match self {
            Network::Cnn(n) => ModelState::Cnn(n.state()),
            Network::Yae(n) => ModelState::Yae(n.state()),
        }
    }

    pub fn load_state(&mut self, s: &ModelState<T>) -> Result<()> {
        match (self, s) {
            (Network::Cnn(n), ModelState::Cnn(s)) => n.load_state(s),
            (Network::Yae(n), ModelState::Yae(s)) => n.load_state(s),
            _ => Err(Error::State("checkpoint architecture differs from network".into())),
        }
    }

    fn input_tensor(&self, data: &PreparedDataset, idx: &[usize]) -> Result<Tensor<T>> {
        let (c, p) = (data.n_channels(), data.n_points());
        let mut buf = Vec::with_capacity(idx.len() * c * p);
        for &i in idx {
            buf.extend(data.noisy_row(i).iter().map(|&v| T::lit(v)));
        }
        let shape = match self {
            Network::Cnn(_) => vec![idx.len(), 1, c, p],
            Network::Yae(_) => vec![idx.len(), c, p],
        };
        Tensor::new(shape, buf)
    }

    /// Concentrations (in the training normalisation) for `idx`, row-major.
    pub fn predict(&mut self, data: &PreparedDataset, idx: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(idx.len() * data.n_metabolites());
        for chunk in idx.chunks(EVAL_BATCH) {
            let x = self.input_tensor(data, chunk)?;
            let y = match self {
                Network::Cnn(n) => n.forward(x, false)?,
                Network::Yae(n) => n.forward(&x, false)?.concentrations,
            };
            out.extend(y.data().iter().map(|v| v.as_f64()));
        }
        Ok(out)
    }

    /// Reconstructed channels for `idx` (YAE only), row-major
    /// `[sample][channel][point]`.
    pub fn reconstruct(&mut self, data: &PreparedDataset, idx: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(idx.len() * data.sample_len());
        for chunk in idx.chunks(EVAL_BATCH) {
            let x = self.input_tensor(data, chunk)?;
            match self {
                Network::Yae(n) => out.extend(n.forward(&x, false)?.reconstruction.data().iter().map(|v| v.as_f64())),
                Network::Cnn(_) => return Err(Error::Capability("the CNN has no reconstruction branch".into())),
            }
        }
        Ok(out)
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Mean concentration MAE on the validation set (max-normalised).
    pub val_mae: Option<f64>,
    /// Quantifier loss weight used this epoch (YAE only).
    pub w_q: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrainedModel<T: Real> {
    pub config: ModelConfig,
    pub metabolites: Vec<String>,
    pub seed: u64,
    pub epochs: usize,
    pub scalar: String,
    pub log: Vec<EpochLog>,
    pub state: ModelState<T>,
}

impl<T: Real> TrainedModel<T> {
    pub fn network(&self) -> Result<Network<T>> {
        let mut net = Network::build(&self.config, self.metabolites.len(), self.seed)?;
        net.load_state(&self.state)?;
        Ok(net)
    }

    /// Max-normalised predicted concentrations, one vector per sample.
    pub fn predict(&self, data: &PreparedDataset) -> Result<Vec<Vec<f64>>> {
        check_compatible(&self.config, data)?;
        let idx: Vec<usize> = (0..data.len()).collect();
        let flat = self.network()?.predict(data, &idx)?;
        Ok(flat.chunks(data.n_metabolites().max(1)).map(to_max_normalised).collect())
    }
}

fn check_compatible(cfg: &ModelConfig, data: &PreparedDataset) -> Result<()> {
    let e = cfg.export();
    if e.n_points != data.n_points() || e.channel_labels() != data.channel_labels || e.target_norm != data.target_norm() {
        return Err(Error::Contract(
            "dataset was exported with a different configuration than the model expects".into(),
        ));
    }
    data.validate()
}

/// Mean absolute error per metabolite between max-normalised predictions
/// (given in training normalisation) and truth.
pub fn metabolite_mae(data: &PreparedDataset, idx: &[usize], pred: &[f64]) -> Vec<f64> {
    let m = data.n_metabolites();
    let mut acc = vec![0.0; m];
    for (k, &i) in idx.iter().enumerate() {
        let p = to_max_normalised(&pred[k * m..(k + 1) * m]);
        for ((a, pv), tv) in acc.iter_mut().zip(&p).zip(data.truth(i)) {
            *a += (pv - tv).abs();
        }
    }
    let n = idx.len().max(1) as f64;
    acc.iter().map(|a| a / n).collect()
}

fn targets<T: Real>(data: &PreparedDataset, idx: &[usize]) -> Result<Tensor<T>> {
    let m = data.n_metabolites();
    let mut buf = Vec::with_capacity(idx.len() * m);
    for &i in idx {
        buf.extend(data.train_target(i).into_iter().map(T::lit));
    }
    Tensor::new(vec![idx.len(), m], buf)
}

fn clean_targets<T: Real>(data: &PreparedDataset, idx: &[usize]) -> Result<Tensor<T>> {
    let mut buf = Vec::with_capacity(idx.len() * data.sample_len());
    for &i in idx {
        buf.extend(data.clean_row(i).iter().map(|&v| T::lit(v)));
    }
    Tensor::new(vec![idx.len(), data.n_channels(), data.n_points()], buf)
}

/// Forward, loss and (when `learn`) backward for one batch. Returns the
/// total loss.
fn batch_step<T: Real>(
    net: &mut Network<T>,
    cfg: &ModelConfig,
    data: &PreparedDataset,
    idx: &[usize],
    w_q: f64,
    learn: bool,
) -> Result<f64> {
    let x = net.input_tensor(data, idx)?;
    let y = targets::<T>(data, idx)?;
    match (net, cfg) {
        (Network::Cnn(n), _) => {
            let pred = n.forward(x, learn)?;
            let (loss, g) = mse_loss(&pred, &y)?;
            if learn {
                n.backward(&g)?;
            }
            Ok(loss.as_f64())
        }
        (Network::Yae(n), ModelConfig::Yae(c)) => {
            let out = n.forward(&x, learn)?;
            let clean = clean_targets::<T>(data, idx)?;
            let (l_ae, mut g_ae) = huber_loss(&out.reconstruction, &clean, HUBER_DELTA)?;
            let (l_q, mut g_q) = huber_loss(&out.concentrations, &y, HUBER_DELTA)?;
            if learn {
                let (wa, wq) = (T::lit(c.w_ae), T::lit(w_q));
                g_ae.data_mut().iter_mut().for_each(|v| *v *= wa);
                g_q.data_mut().iter_mut().for_each(|v| *v *= wq);
                n.backward(&g_ae, &g_q)?;
            }
            Ok(c.w_ae * l_ae.as_f64() + w_q * l_q.as_f64())
        }
        _ => Err(Error::State("network and configuration architectures differ".into())),
    }
}

/// Train on `train_idx`, logging validation loss and MAE on `val_idx`
/// after every epoch.
pub fn train_split<T: Real>(
    cfg: &ModelConfig,
    data: &PreparedDataset,
    train_idx: &[usize],
    val_idx: Option<&[usize]>,
    epochs: usize,
    seed: u64,
) -> Result<TrainedModel<T>> {
    cfg.validate()?;
    check_compatible(cfg, data)?;
    if train_idx.is_empty() {
        return Err(config("training set is empty"));
    }
    if let Some(&bad) = train_idx.iter().chain(val_idx.unwrap_or(&[])).find(|&&i| i >= data.len()) {
        return Err(config(format!("sample index {bad} out of range")));
    }
    let mut net = Network::<T>::build(cfg, data.n_metabolites(), seed)?;
    let mut adam = Adam::new(AdamConfig::for_batch(cfg.batch_size()));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut order = train_idx.to_vec();
    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let w_q = match cfg {
            ModelConfig::Yae(c) => c.ramp.weight(epoch, epochs),
            ModelConfig::Cnn(_) => 1.0,
        };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size()).enumerate() {
            net.zero_grad();
            let loss = batch_step(&mut net, cfg, data, batch, w_q, true)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    reason: format!("loss is {loss}"),
                });
            }
            adam.step(&mut net.params_mut(), epoch, b)?;
            total += loss * batch.len() as f64;
        }
        let (val_loss, val_mae) = match val_idx {
            Some(v) if !v.is_empty() => {
                let mut vl = 0.0;
                for chunk in v.chunks(EVAL_BATCH) {
                    vl += batch_step(&mut net, cfg, data, chunk, w_q, false)? * chunk.len() as f64;
                }
                let pred = net.predict(data, v)?;
                let mae = metabolite_mae(data, v, &pred);
                (Some(vl / v.len() as f64), Some(mae.iter().sum::<f64>() / mae.len() as f64))
            }
            _ => (None, None),
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss,
            val_mae,
            w_q: matches!(cfg, ModelConfig::Yae(_)).then_some(w_q),
        };
        log::debug!("epoch {epoch}: {entry:?}");
        log.push(entry);
    }
    Ok(TrainedModel {
        config: cfg.clone(),
        metabolites: data.metabolites.clone(),
        seed,
        epochs,
        scalar: T::NAME.to_string(),
        log,
        state: net.state(),
    })
}

/// Train on the whole dataset.
pub fn train<T: Real>(cfg: &ModelConfig, data: &PreparedDataset, epochs: usize, seed: u64) -> Result<TrainedModel<T>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    train_split(cfg, data, &idx, None, epochs, seed)
}

/// Seeded partition of `0..n` into `k` folds whose sizes differ by at most 1.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(config(format!("cannot split {n} samples into {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k).map(|f| perm[f * n / k..(f + 1) * n / k].to_vec()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Mean-over-metabolites validation MAE per fold.
    pub fold_mae: Vec<f64>,
    /// Per fold, per metabolite validation MAE.
    pub fold_metabolite_mae: Vec<Vec<f64>>,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
}

impl CvResult {
    pub fn from_folds(fold_metabolite_mae: Vec<Vec<f64>>) -> Self {
        let fold_mae: Vec<f64> = fold_metabolite_mae
            .iter()
            .map(|m| m.iter().sum::<f64>() / m.len().max(1) as f64)
            .collect();
        let k = fold_mae.len() as f64;
        let mean = fold_mae.iter().sum::<f64>() / k;
        let std = if fold_mae.len() > 1 {
            (fold_mae.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            fold_mae,
            fold_metabolite_mae,
            mean,
            std,
        }
    }
}

/// k-fold cross-validation; folds train concurrently.
pub fn cross_validate<T: Real>(
    cfg: &ModelConfig,
    data: &PreparedDataset,
    folds: usize,
    epochs: usize,
    seed: u64,
) -> Result<CvResult> {
    let parts = fold_partition(data.len(), folds, seed)?;
    let per_fold = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train_idx: Vec<usize> = parts
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, p)| p.iter().copied())
                .collect();
            let model = train_split::<T>(cfg, data, &train_idx, None, epochs, derive_seed(seed, f as u64))?;
            let pred = model.network()?.predict(data, &parts[f])?;
            Ok(metabolite_mae(data, &parts[f], &pred))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvResult::from_folds(per_fold))
}
