use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::nn::{Activation, LayerSpec, Sequential};
use crate::preprocess::ExportConfig;
use crate::scalar::Real;

/// Parameterised convolutional regressor. Stride/pool codes: positive is a
/// stride, negative a max-pool of that width, `1` neither.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnConfig {
    pub f1: usize,
    pub f2: usize,
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
    pub k4: usize,
    pub s1: i32,
    pub s2: i32,
    /// `0` selects batch normalisation in every block, `> 0` dropout.
    pub d1: f64,
    pub d2: f64,
    pub e: usize,
    pub output_activation: Activation,
    pub export: ExportConfig,
    pub batch_size: usize,
}

impl CnnConfig {
    /// Fixed parameters of the grid search with the given kernel set and
    /// output head.
    pub fn grid_default(export: ExportConfig) -> Self {
        Self {
            f1: 256,
            f2: 512,
            k1: 9,
            k2: 7,
            k3: 5,
            k4: 3,
            s1: -2,
            s2: -3,
            d1: 0.0,
            d2: 0.3,
            e: 1024,
            output_activation: Activation::Sigmoid,
            export,
            batch_size: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.export.validate()?;
        if self.f1 == 0 || self.f2 == 0 || self.e == 0 || self.batch_size == 0 {
            return Err(config("filter counts, dense units and batch size must be >= 1"));
        }
        for (name, k) in [("k1", self.k1), ("k2", self.k2), ("k3", self.k3), ("k4", self.k4)] {
            if k < 3 || k % 2 == 0 {
                return Err(config(format!("{name} must be odd and >= 3, got {k}")));
            }
        }
        if self.s1 == 0 || self.s2 == 0 {
            return Err(config("stride/pool codes must be non-zero"));
        }
        if !(0.0..1.0).contains(&self.d1) || !(0.0..1.0).contains(&self.d2) {
            return Err(config("dropout rates must lie in [0, 1)"));
        }
        if !matches!(self.output_activation, Activation::Sigmoid | Activation::Softmax) {
            return Err(config("CNN output activation must be sigmoid or softmax"));
        }
        Ok(())
    }
}

fn fconv(out: &mut Vec<LayerSpec>, filters: usize, kernel: (usize, usize), s: i32, d: f64) {
    out.push(LayerSpec::Conv2d {
        filters,
        kernel,
        stride: if s > 0 { s as usize } else { 1 },
    });
    if d == 0.0 {
        out.push(LayerSpec::BatchNorm);
    }
    out.push(LayerSpec::Activation {
        activation: Activation::Relu,
    });
    if d > 0.0 {
        out.push(LayerSpec::Dropout { rate: d });
    }
    if s < 0 {
        out.push(LayerSpec::MaxPool2d {
            pool: s.unsigned_abs() as usize,
        });
    }
}

/// Layer sequence for `channels` input rows; per-sample input shape is
/// `[1, channels, n_points]`.
pub fn cnn_specs(cfg: &CnnConfig, channels: usize, n_metabolites: usize) -> Result<Vec<LayerSpec>> {
    cfg.validate()?;
    if channels == 0 || n_metabolites == 0 {
        return Err(config("CNN needs at least one channel and one output"));
    }
    let mut s = Vec::new();
    fconv(&mut s, cfg.f1, (1, cfg.k1), cfg.s1, cfg.d1);
    fconv(&mut s, cfg.f1, (1, cfg.k2), cfg.s1, cfg.d1);
    let mut height = channels;
    while height > 1 {
        let kh = height.min(3);
        fconv(&mut s, cfg.f1, (kh, cfg.k3), 1, cfg.d1);
        height -= kh - 1;
    }
    fconv(&mut s, cfg.f1, (1, cfg.k4), 1, cfg.d1);
    fconv(&mut s, cfg.f1, (1, cfg.k4), cfg.s2, cfg.d1);
    fconv(&mut s, cfg.f2, (1, cfg.k4), 1, cfg.d1);
    fconv(&mut s, cfg.f2, (1, cfg.k4), cfg.s2, cfg.d1);
    s.push(LayerSpec::Flatten);
    s.push(LayerSpec::Dense { units: cfg.e });
    s.push(LayerSpec::Activation {
        activation: Activation::Sigmoid,
    });
    if cfg.d2 > 0.0 {
        s.push(LayerSpec::Dropout { rate: cfg.d2 });
    }
    s.push(LayerSpec::Dense { units: n_metabolites });
    s.push(LayerSpec::Activation {
        activation: cfg.output_activation,
    });
    Ok(s)
}

pub fn build_cnn<T: Real>(cfg: &CnnConfig, n_metabolites: usize, seed: u64) -> Result<Sequential<T>> {
    let channels = cfg.export.n_channels();
    let specs = cnn_specs(cfg, channels, n_metabolites)?;
    Sequential::build(&specs, &[1, channels, cfg.export.n_points], seed).map_err(|e| match e {
        crate::error::Error::Dimension(m) => config(format!("CNN configuration does not fit the input: {m}")),
        other => other,
    })
}
