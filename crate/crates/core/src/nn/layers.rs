//! Layer implementations. Every layer caches what its backward pass needs
//! during `forward` and accumulates parameter gradients in `backward`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{dim, Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Linear,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "softmax" => Ok(Activation::Softmax),
            "linear" | "identity" => Ok(Activation::Linear),
            other => Err(Error::Domain(format!("unknown activation '{other}'"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
            Activation::Linear => "linear",
        };
        f.write_str(s)
    }
}

/// Declarative layer description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerSpec {
    Dense { units: usize },
    /// Valid padding along height, same padding along width, stride along
    /// width only.
    Conv2d { filters: usize, kernel: (usize, usize), stride: usize },
    BatchNorm,
    Dropout { rate: f64 },
    /// Pooling window `(1, pool)`, valid padding.
    MaxPool2d { pool: usize },
    Activation { activation: Activation },
    Flatten,
}

/// Trainable parameter with its accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Param<T: Real> {
    pub value: Vec<T>,
    #[serde(skip)]
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        if self.grad.len() != self.value.len() {
            self.grad = vec![T::zero(); self.value.len()];
        } else {
            self.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

fn lift<T: Real>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::lit).collect()
}

#[derive(Clone, Debug)]
pub struct Dense<T: Real> {
    pub(crate) in_features: usize,
    pub(crate) units: usize,
    /// `[in_features x units]`
    pub(crate) weight: Param<T>,
    pub(crate) bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    fn new(in_features: usize, units: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            in_features,
            units,
            weight: Param::new(lift(glorot(rng, in_features * units, in_features, units))),
            bias: Param::new(vec![T::zero(); units]),
            input: None,
        }
    }

    fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let b = x.batch();
        let mut out = Vec::with_capacity(b * self.units);
        for _ in 0..b {
            out.extend_from_slice(&self.bias.value);
        }
        T::gemm(false, false, b, self.in_features, self.units, T::one(), x.data(), &self.weight.value, T::one(), &mut out);
        self.input = Some(x);
        Tensor::new(vec![b, self.units], out)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(missing_cache)?;
        let b = x.batch();
        T::gemm(true, false, self.in_features, b, self.units, T::one(), x.data(), g.data(), T::one(), &mut self.weight.grad);
        for row in g.data().chunks(self.units) {
            for (gb, &v) in self.bias.grad.iter_mut().zip(row) {
                *gb += v;
            }
        }
        let mut dx = vec![T::zero(); b * self.in_features];
        T::gemm(false, true, b, self.units, self.in_features, T::one(), g.data(), &self.weight.value, T::zero(), &mut dx);
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// Geometry of a (valid-height, same-width) convolution.
#[derive(Clone, Copy, Debug, PartialEq)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_left: usize,
}

impl ConvGeom {
    fn new(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize) -> Result<Self> {
        if kh > h {
            return Err(dim(format!("kernel height {kh} exceeds input height {h}")));
        }
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(dim("kernel and stride must be positive"));
        }
        let oh = h - kh + 1;
        let ow = w.div_ceil(stride);
        let pad_total = ((ow - 1) * stride + kw).saturating_sub(w);
        Ok(Self {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            oh,
            ow,
            pad_left: pad_total / 2,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source column for output column `o` and kernel tap `j`.
    #[inline]
    fn src_col(&self, o: usize, j: usize) -> Option<usize> {
        let p = (o * self.stride + j) as isize - self.pad_left as isize;
        (p >= 0 && (p as usize) < self.w).then_some(p as usize)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let n = self.cols();
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * n;
                    for oy in 0..self.oh {
                        let src = &x[(c * self.h + oy + i) * self.w..][..self.w];
                        let dst = &mut cols[row + oy * self.ow..][..self.ow];
                        for (o, d) in dst.iter_mut().enumerate() {
                            *d = match self.src_col(o, j) {
                                Some(p) => src[p],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let n = self.cols();
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * n;
                    for oy in 0..self.oh {
                        let dst = &mut dx[(c * self.h + oy + i) * self.w..][..self.w];
                        let src = &cols[row + oy * self.ow..][..self.ow];
                        for (o, &v) in src.iter().enumerate() {
                            if let Some(p) = self.src_col(o, j) {
                                dst[p] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d<T: Real> {
    geom: ConvGeom,
    pub(crate) filters: usize,
    /// `[filters x (channels * kh * kw)]`
    pub(crate) weight: Param<T>,
    pub(crate) bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    fn new(in_shape: &[usize], filters: usize, kernel: (usize, usize), stride: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let [c, h, w] = in_shape else {
            return Err(dim(format!("conv2d expects [C, H, W] samples, got {in_shape:?}")));
        };
        let geom = ConvGeom::new(*c, *h, *w, kernel.0, kernel.1, stride)?;
        let fan_in = geom.rows();
        let fan_out = filters * kernel.0 * kernel.1;
        Ok(Self {
            geom,
            filters,
            weight: Param::new(lift(glorot(rng, filters * fan_in, fan_in, fan_out))),
            bias: Param::new(vec![T::zero(); filters]),
            input: None,
        })
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.filters, self.geom.oh, self.geom.ow]
    }

    fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geom;
        let b = x.batch();
        let (rows, ncols) = (g.rows(), g.cols());
        let mut cols = vec![T::zero(); rows * ncols];
        let mut out = vec![T::zero(); b * self.filters * ncols];
        for (s, o) in out.chunks_mut(self.filters * ncols).enumerate() {
            g.im2col(x.sample(s), &mut cols);
            for (f, of) in o.chunks_mut(ncols).enumerate() {
                of.iter_mut().for_each(|v| *v = self.bias.value[f]);
            }
            T::gemm(false, false, self.filters, rows, ncols, T::one(), &self.weight.value, &cols, T::one(), o);
        }
        self.input = Some(x);
        let mut shape = vec![b];
        shape.extend(self.out_shape());
        Tensor::new(shape, out)
    }

    fn backward(&mut self, gout: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(missing_cache)?;
        let g = self.geom;
        let b = x.batch();
        let (rows, ncols) = (g.rows(), g.cols());
        let mut cols = vec![T::zero(); rows * ncols];
        let mut dcols = vec![T::zero(); rows * ncols];
        let mut dx = vec![T::zero(); x.len()];
        let per_in = x.sample_len();
        for s in 0..b {
            let go = gout.sample(s);
            g.im2col(x.sample(s), &mut cols);
            T::gemm(false, true, self.filters, ncols, rows, T::one(), go, &cols, T::one(), &mut self.weight.grad);
            for (f, gf) in go.chunks(ncols).enumerate() {
                self.bias.grad[f] += gf.iter().copied().sum::<T>();
            }
            T::gemm(true, false, rows, self.filters, ncols, T::one(), &self.weight.value, go, T::zero(), &mut dcols);
            g.col2im(&dcols, &mut dx[s * per_in..(s + 1) * per_in]);
        }
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// Per-channel (`[C, H, W]` samples) or per-feature (`[F]` samples)
/// normalisation with running statistics for inference.
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Real> {
    in_shape: Vec<usize>,
    channels: usize,
    /// Elements per channel per sample (H*W, or 1 for dense inputs).
    inner: usize,
    pub(crate) gamma: Param<T>,
    pub(crate) beta: Param<T>,
    pub(crate) running_mean: Vec<T>,
    pub(crate) running_var: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch: usize,
    training: bool,
}

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

impl<T: Real> BatchNorm<T> {
    fn new(in_shape: &[usize]) -> Self {
        let channels = in_shape[0];
        let inner = in_shape[1..].iter().product();
        Self {
            in_shape: in_shape.to_vec(),
            channels,
            inner,
            gamma: Param::new(vec![T::one(); channels]),
            beta: Param::new(vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    fn segments(&self, b: usize) -> impl Iterator<Item = (usize, std::ops::Range<usize>)> + '_ {
        let (c, inner) = (self.channels, self.inner);
        (0..b * c).map(move |sc| (sc % c, sc * inner..(sc + 1) * inner))
    }

    fn forward(&mut self, x: Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let b = x.batch();
        let c = self.channels;
        let count = T::from_usize(b * self.inner).expect("count");
        let (mean, var) = if training {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for (ch, r) in self.segments(b) {
                mean[ch] += x.data()[r].iter().copied().sum::<T>();
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for (ch, r) in self.segments(b) {
                var[ch] += x.data()[r].iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<T>();
            }
            var.iter_mut().for_each(|v| *v /= count);
            let mom = T::lit(BN_MOMENTUM);
            for ch in 0..c {
                self.running_mean[ch] = mom * self.running_mean[ch] + (T::one() - mom) * mean[ch];
                self.running_var[ch] = mom * self.running_var[ch] + (T::one() - mom) * var[ch];
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let eps = T::lit(BN_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.into_data();
        let mut out = vec![T::zero(); xhat.len()];
        for (ch, r) in self.segments(b) {
            for k in r {
                xhat[k] = (xhat[k] - mean[ch]) * inv_std[ch];
                out[k] = self.gamma.value[ch] * xhat[k] + self.beta.value[ch];
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            batch: b,
            training,
        });
        let mut shape = vec![b];
        shape.extend_from_slice(&self.in_shape);
        Tensor::new(shape, out)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(missing_cache)?;
        let b = cache.batch;
        let c = self.channels;
        let m = T::from_usize(b * self.inner).expect("count");
        let gd = g.data();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (ch, r) in self.segments(b) {
            for k in r {
                sum_g[ch] += gd[k];
                sum_gx[ch] += gd[k] * cache.xhat[k];
            }
        }
        for ch in 0..c {
            self.gamma.grad[ch] += sum_gx[ch];
            self.beta.grad[ch] += sum_g[ch];
        }
        let mut dx = vec![T::zero(); gd.len()];
        for (ch, r) in self.segments(b) {
            let scale = self.gamma.value[ch] * cache.inv_std[ch];
            for k in r {
                dx[k] = if cache.training {
                    scale / m * (m * gd[k] - sum_g[ch] - cache.xhat[k] * sum_gx[ch])
                } else {
                    scale * gd[k]
                };
            }
        }
        self.cache = Some(cache);
        Tensor::new(g.shape().to_vec(), dx)
    }
}

/// Inverted dropout with its own seeded stream.
#[derive(Clone, Debug)]
pub struct Dropout<T: Real> {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    fn forward(&mut self, x: Tensor<T>, training: bool) -> Result<Tensor<T>> {
        if !training || self.rate == 0.0 {
            self.mask = None;
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let scale = T::lit(1.0 / keep);
        let mask: Vec<T> = (0..x.len())
            .map(|_| if self.rng.random::<f64>() < keep { scale } else { T::zero() })
            .collect();
        let shape = x.shape().to_vec();
        let data = x.into_data().into_iter().zip(&mask).map(|(v, &m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::new(shape, data)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.mask {
            None => Ok(g.clone()),
            Some(mask) => Tensor::new(
                g.shape().to_vec(),
                g.data().iter().zip(mask).map(|(&v, &m)| v * m).collect(),
            ),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MaxPool<T: Real> {
    pool: usize,
    in_shape: Vec<usize>,
    argmax: Option<(usize, Vec<usize>)>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Real> MaxPool<T> {
    fn out_shape(&self) -> Vec<usize> {
        let mut s = self.in_shape.clone();
        let w = s.len() - 1;
        s[w] /= self.pool;
        s
    }

    fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let b = x.batch();
        let w = *self.in_shape.last().expect("shape");
        let ow = w / self.pool;
        let rows = x.len() / w;
        let mut out = Vec::with_capacity(rows * ow);
        let mut idx = Vec::with_capacity(rows * ow);
        for r in 0..rows {
            let row = &x.data()[r * w..(r + 1) * w];
            for o in 0..ow {
                let base = o * self.pool;
                let mut best = base;
                for k in base + 1..base + self.pool {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                out.push(row[best]);
                idx.push(r * w + best);
            }
        }
        self.argmax = Some((x.len(), idx));
        let mut shape = vec![b];
        shape.extend(self.out_shape());
        Tensor::new(shape, out)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, idx) = self.argmax.as_ref().ok_or_else(missing_cache)?;
        let mut dx = vec![T::zero(); *n];
        for (&i, &v) in idx.iter().zip(g.data()) {
            dx[i] += v;
        }
        let mut shape = vec![g.batch()];
        shape.extend_from_slice(&self.in_shape);
        Tensor::new(shape, dx)
    }
}

#[derive(Clone, Debug)]
pub struct ActivationLayer<T: Real> {
    pub(crate) activation: Activation,
    /// Input for relu, output otherwise.
    cache: Option<Tensor<T>>,
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> ActivationLayer<T> {
    fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let shape = x.shape().to_vec();
        let out = match self.activation {
            Activation::Linear => x.clone(),
            Activation::Relu => {
                let d = x.data().iter().map(|&v| v.max(T::zero())).collect();
                Tensor::new(shape, d)?
            }
            Activation::Sigmoid => Tensor::new(shape, x.data().iter().map(|&v| sigmoid(v)).collect())?,
            Activation::Tanh => Tensor::new(shape, x.data().iter().map(|&v| v.tanh()).collect())?,
            Activation::Softmax => {
                let last = *shape.last().expect("shape");
                let mut d = x.data().to_vec();
                for row in d.chunks_mut(last) {
                    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                    row.iter_mut().for_each(|v| *v = (*v - m).exp());
                    let s: T = row.iter().copied().sum();
                    row.iter_mut().for_each(|v| *v /= s);
                }
                Tensor::new(shape, d)?
            }
        };
        self.cache = Some(if self.activation == Activation::Relu { x } else { out.clone() });
        Ok(out)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.cache.as_ref().ok_or_else(missing_cache)?;
        let gd = g.data();
        let cd = c.data();
        let dx: Vec<T> = match self.activation {
            Activation::Linear => gd.to_vec(),
            Activation::Relu => gd
                .iter()
                .zip(cd)
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect(),
            Activation::Sigmoid => gd.iter().zip(cd).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
            Activation::Tanh => gd.iter().zip(cd).map(|(&g, &y)| g * (T::one() - y * y)).collect(),
            Activation::Softmax => {
                let last = *g.shape().last().expect("shape");
                let mut dx = Vec::with_capacity(gd.len());
                for (gr, yr) in gd.chunks(last).zip(cd.chunks(last)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(&a, &y)| y * (a - dot)));
                }
                dx
            }
        };
        Tensor::new(g.shape().to_vec(), dx)
    }
}

fn missing_cache() -> Error {
    Error::State("backward called without a cached forward pass".into())
}

/// Built layer.
#[derive(Clone, Debug)]
pub enum Layer<T: Real> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout<T>),
    MaxPool2d(MaxPool<T>),
    Activation(ActivationLayer<T>),
    Flatten { in_shape: Vec<usize> },
}

impl<T: Real> Layer<T> {
    /// Build `spec` for per-sample input shape `in_shape`; returns the layer
    /// and its per-sample output shape.
    pub fn build(spec: &LayerSpec, in_shape: &[usize], rng: &mut ChaCha8Rng) -> Result<(Layer<T>, Vec<usize>)> {
        Ok(match *spec {
            LayerSpec::Dense { units } => {
                let [n] = in_shape else {
                    return Err(dim(format!("dense expects flat samples, got {in_shape:?}")));
                };
                if units == 0 {
                    return Err(dim("dense needs at least one unit"));
                }
                (Layer::Dense(Dense::new(*n, units, rng)), vec![units])
            }
            LayerSpec::Conv2d { filters, kernel, stride } => {
                let c = Conv2d::new(in_shape, filters, kernel, stride, rng)?;
                let out = c.out_shape();
                (Layer::Conv2d(c), out)
            }
            LayerSpec::BatchNorm => (Layer::BatchNorm(BatchNorm::new(in_shape)), in_shape.to_vec()),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
                }
                let seed = rng.random();
                (
                    Layer::Dropout(Dropout {
                        rate,
                        rng: ChaCha8Rng::seed_from_u64(seed),
                        mask: None,
                    }),
                    in_shape.to_vec(),
                )
            }
            LayerSpec::MaxPool2d { pool } => {
                let w = *in_shape.last().unwrap_or(&0);
                if in_shape.len() != 3 || pool == 0 || w < pool {
                    return Err(dim(format!("cannot pool {in_shape:?} by {pool}")));
                }
                let m = MaxPool {
                    pool,
                    in_shape: in_shape.to_vec(),
                    argmax: None,
                    _t: std::marker::PhantomData,
                };
                let out = m.out_shape();
                (Layer::MaxPool2d(m), out)
            }
            LayerSpec::Activation { activation } => (
                Layer::Activation(ActivationLayer { activation, cache: None }),
                in_shape.to_vec(),
            ),
            LayerSpec::Flatten => (
                Layer::Flatten {
                    in_shape: in_shape.to_vec(),
                },
                vec![in_shape.iter().product()],
            ),
        })
    }

    pub fn forward(&mut self, x: Tensor<T>, training: bool) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, training),
            Layer::Dropout(l) => l.forward(x, training),
            Layer::MaxPool2d(l) => l.forward(x),
            Layer::Activation(l) => l.forward(x),
            Layer::Flatten { .. } => {
                let b = x.batch();
                let n = x.sample_len();
                x.reshaped(vec![b, n])
            }
        }
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.backward(g),
            Layer::Conv2d(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::Dropout(l) => l.backward(g),
            Layer::MaxPool2d(l) => l.backward(g),
            Layer::Activation(l) => l.backward(g),
            Layer::Flatten { in_shape } => {
                let mut shape = vec![g.batch()];
                shape.extend_from_slice(in_shape);
                g.clone().reshaped(shape)
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<&Vec<T>> {
        match self {
            Layer::BatchNorm(l) => vec![&l.running_mean, &l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::BatchNorm(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn reseed(&mut self, seed: u64) {
        if let Layer::Dropout(d) = self {
            d.rng = ChaCha8Rng::seed_from_u64(seed);
        }
    }
}
