//! Minimal reverse-mode neural toolkit: layers, sequential networks,
//! losses and Adam. Generic over the scalar type.

mod layers;
mod loss;
mod optim;
mod tensor;

pub use layers::{Activation, Layer, LayerSpec, Param, BN_EPS, BN_MOMENTUM};
pub use loss::{huber_loss, mse_loss, Loss};
pub use optim::{scaled_learning_rate, Adam, AdamConfig};
pub use tensor::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::scalar::Real;

/// A chain of layers over per-sample input shape `input_shape`.
#[derive(Clone, Debug)]
pub struct Sequential<T: Real> {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    shapes: Vec<Vec<usize>>,
}

/// Serialisable parameters and buffers of a [`Sequential`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SequentialState<T: Real> {
    pub params: Vec<Vec<T>>,
    pub buffers: Vec<Vec<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn build(specs: &[LayerSpec], input_shape: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shapes = vec![input_shape.to_vec()];
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let (layer, out) = Layer::build(spec, shapes.last().expect("shape"), &mut rng).map_err(|e| match e {
                Error::Dimension(m) => dim(format!("layer {i} ({spec:?}): {m}")),
                other => other,
            })?;
            layers.push(layer);
            shapes.push(out);
        }
        Ok(Self {
            specs: specs.to_vec(),
            layers,
            shapes,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("shape")
    }

    /// Per-sample shape after each layer (index 0 is the input).
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn forward(&mut self, x: Tensor<T>, training: bool) -> Result<Tensor<T>> {
        if x.shape()[1..] != self.shapes[0][..] {
            return Err(dim(format!(
                "layer 0: expected samples of shape {:?}, got {:?}",
                self.shapes[0],
                &x.shape()[1..]
            )));
        }
        let mut h = x;
        for layer in &mut self.layers {
            h = layer.forward(h, training)?;
        }
        Ok(h)
    }

    /// Backpropagate `grad` (w.r.t. the output); accumulates parameter
    /// gradients and returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g).map_err(|e| match e {
                Error::Dimension(m) => dim(format!("layer {i} backward: {m}")),
                other => other,
            })?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Reseed every dropout stream from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.layers {
            l.reseed(rng.random());
        }
    }

    pub fn state(&self) -> SequentialState<T> {
        SequentialState {
            params: self.params().iter().map(|p| p.value.clone()).collect(),
            buffers: self.layers.iter().flat_map(|l| l.buffers()).cloned().collect(),
        }
    }

    pub fn load_state(&mut self, state: &SequentialState<T>) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != state.params.len() {
            return Err(dim("checkpoint parameter count differs from network"));
        }
        for (p, v) in params.iter_mut().zip(&state.params) {
            if p.value.len() != v.len() {
                return Err(dim("checkpoint parameter shape differs from network"));
            }
            p.value.clone_from(v);
            p.zero_grad();
        }
        let mut bufs: Vec<&mut Vec<T>> = self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect();
        if bufs.len() != state.buffers.len() {
            return Err(dim("checkpoint buffer count differs from network"));
        }
        for (b, v) in bufs.iter_mut().zip(&state.buffers) {
            if b.len() != v.len() {
                return Err(dim("checkpoint buffer shape differs from network"));
            }
            b.clone_from(v);
        }
        Ok(())
    }
}
