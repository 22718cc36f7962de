use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::optim::minimize;
use crate::error::{domain, Error, Result};

/// Added to the kernel diagonal before factorising.
pub const JITTER: f64 = 1e-8;
/// Lower bound on the fitted observation-noise variance.
pub const NOISE_FLOOR: f64 = 1e-6;

const LOG_LENGTH_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 4.605_170_185_988_091); // ln 0.01, ln 100

/// Squared-exponential (ARD) kernel hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
}

impl KernelParams {
    pub fn isotropic(dim: usize, signal_var: f64, length_scale: f64, noise_var: f64) -> Self {
        Self {
            signal_var,
            length_scales: vec![length_scale; dim],
            noise_var,
        }
    }

    /// Noise-free covariance of two points.
    pub fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_var * (-0.5 * r2).exp()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.length_scales.len() != dim {
            return Err(crate::error::dim(format!(
                "{} length scales for {dim}-dimensional inputs",
                self.length_scales.len()
            )));
        }
        let ok = self.signal_var > 0.0
            && self.noise_var >= 0.0
            && self.length_scales.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.signal_var.is_finite()
            && self.noise_var.is_finite();
        if !ok {
            return Err(domain("kernel parameters must be positive and finite"));
        }
        Ok(())
    }
}

/// Exact GP regression posterior with a constant mean equal to the sample
/// mean of the observations.
#[derive(Clone, Debug)]
pub struct GpState {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub params: KernelParams,
    pub mean: f64,
    dim: usize,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

fn kernel_matrix(params: &KernelParams, x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| params.k(&x[i], &x[j]))
}

fn condition_estimate(chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = chol.l_dirty().diagonal();
    let max = d.iter().cloned().fold(0.0, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    (max / min).powi(2)
}

impl GpState {
    /// Posterior with no observations.
    pub fn prior(dim: usize, params: KernelParams) -> Result<Self> {
        params.validate(dim)?;
        Ok(Self {
            x: Vec::new(),
            y: Vec::new(),
            params,
            mean: 0.0,
            dim,
            chol: None,
            alpha: DVector::zeros(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Posterior mean and latent-function variance at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v, _, _) = self.predict_inner(x, false);
        (m, v)
    }

    /// Mean, variance and their gradients with respect to `x`.
    pub fn predict_with_grad(&self, x: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        self.predict_inner(x, true)
    }

    fn predict_inner(&self, x: &[f64], grad: bool) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let sf2 = self.params.signal_var;
        let Some(chol) = &self.chol else {
            return (self.mean, sf2, vec![0.0; self.dim], vec![0.0; self.dim]);
        };
        let kx = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.params.k(x, xi)));
        let mu = self.mean + kx.dot(&self.alpha);
        let w = chol.solve(&kx);
        let var = (sf2 - kx.dot(&w)).max(0.0);
        if !grad {
            return (mu, var, Vec::new(), Vec::new());
        }
        let mut dmu = vec![0.0; self.dim];
        let mut dvar = vec![0.0; self.dim];
        for (i, xi) in self.x.iter().enumerate() {
            for d in 0..self.dim {
                let l2 = self.params.length_scales[d].powi(2);
                let dk = -kx[i] * (x[d] - xi[d]) / l2;
                dmu[d] += self.alpha[i] * dk;
                dvar[d] -= 2.0 * w[i] * dk;
            }
        }
        (mu, var, dmu, dvar)
    }

    /// Joint posterior mean and covariance over `points`.
    pub fn joint(&self, points: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let m = points.len();
        let kss = kernel_matrix(&self.params, points);
        let Some(chol) = &self.chol else {
            return (DVector::from_element(m, self.mean), kss);
        };
        let ks = DMatrix::from_fn(self.x.len(), m, |i, j| self.params.k(&self.x[i], &points[j]));
        let mean = DVector::from_element(m, self.mean) + ks.transpose() * &self.alpha;
        let v = chol.solve(&ks);
        let cov = kss - ks.transpose() * v;
        (mean, cov)
    }

    /// Log marginal likelihood of the observations.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let Some(chol) = &self.chol else { return 0.0 };
        let r = DVector::from_iterator(self.y.len(), self.y.iter().map(|v| v - self.mean));
        let n = self.y.len() as f64;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * r.dot(&self.alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

fn check_points(points: &[Vec<f64>], values: &[f64]) -> Result<usize> {
    if points.len() != values.len() {
        return Err(crate::error::dim("points and values differ in length"));
    }
    if points.len() < 2 {
        return Err(domain("a GP fit needs at least 2 observations"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(crate::error::dim("points differ in dimension"));
    }
    if values.iter().any(|v| !v.is_finite()) || points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(domain("GP observations must be finite"));
    }
    Ok(dim)
}

/// Exact GP posterior for fixed kernel parameters.
pub fn gp_fit_with(points: &[Vec<f64>], values: &[f64], params: KernelParams) -> Result<GpState> {
    let dim = check_points(points, values)?;
    params.validate(dim)?;
    if params.noise_var == 0.0 {
        let scale = values.iter().map(|v| v.abs()).fold(1e-300, f64::max);
        for i in 0..points.len() {
            for j in 0..i {
                let same = points[i].iter().zip(&points[j]).all(|(a, b)| (a - b).abs() < 1e-12);
                if same && (values[i] - values[j]).abs() > 1e-12 * scale {
                    return Err(Error::Conditioning {
                        what: format!("duplicate inputs {j} and {i} with different values and no noise"),
                        condition: f64::INFINITY,
                    });
                }
            }
        }
    }
    let n = points.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut k = kernel_matrix(&params, points);
    for i in 0..n {
        k[(i, i)] += params.noise_var + JITTER;
    }
    let chol = Cholesky::new(k).ok_or_else(|| Error::Conditioning {
        what: "kernel matrix not positive definite".into(),
        condition: f64::INFINITY,
    })?;
    let condition = condition_estimate(&chol);
    if !(condition < 1e15) {
        return Err(Error::Conditioning {
            what: "kernel matrix".into(),
            condition,
        });
    }
    let r = DVector::from_iterator(n, values.iter().map(|v| v - mean));
    let alpha = chol.solve(&r);
    Ok(GpState {
        x: points.to_vec(),
        y: values.to_vec(),
        params,
        mean,
        dim,
        chol: Some(chol),
        alpha,
    })
}

/// Negative log marginal likelihood and its gradient in the packed log
/// parameters `[ln sf2, ln l_1 .. ln l_D, ln(noise - floor)]`.
fn neg_lml(points: &[Vec<f64>], values: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let dim = points[0].len();
    let params = unpack(theta, dim);
    let n = points.len();
    let bad = (1e10, vec![0.0; theta.len()]);
    let kf = kernel_matrix(&params, points);
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += params.noise_var + JITTER;
    }
    let Some(chol) = Cholesky::new(k) else { return bad };
    let mean = values.iter().sum::<f64>() / n as f64;
    let r = DVector::from_iterator(n, values.iter().map(|v| v - mean));
    let alpha = chol.solve(&r);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let lml = -0.5 * r.dot(&alpha) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !lml.is_finite() {
        return bad;
    }
    // W = alpha alpha^T - K^{-1}; dL/dtheta = 0.5 tr(W dK/dtheta)
    let w = &alpha * alpha.transpose() - chol.inverse();
    let mut g = vec![0.0; theta.len()];
    g[0] = 0.5 * w.component_mul(&kf).sum();
    for d in 0..dim {
        let l2 = params.length_scales[d].powi(2);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let diff = points[i][d] - points[j][d];
                acc += w[(i, j)] * kf[(i, j)] * diff * diff / l2;
            }
        }
        g[1 + d] = 0.5 * acc;
    }
    g[dim + 1] = 0.5 * w.trace() * theta[dim + 1].exp();
    (-lml, g.into_iter().map(|v| -v).collect())
}

fn unpack(theta: &[f64], dim: usize) -> KernelParams {
    KernelParams {
        signal_var: theta[0].exp(),
        length_scales: theta[1..=dim].iter().map(|t| t.exp()).collect(),
        noise_var: NOISE_FLOOR + theta[dim + 1].exp(),
    }
}

/// GP fit with kernel parameters chosen by maximising the log marginal
/// likelihood from several deterministic starting points.
pub fn gp_fit(points: &[Vec<f64>], values: &[f64]) -> Result<GpState> {
    let dim = check_points(points, values)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-12);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &(l0, noise_frac) in &[(0.5, 1e-3), (0.2, 1e-2), (1.0, 1e-4), (2.0, 1e-2)] {
        let mut theta = vec![var.ln()];
        theta.extend(std::iter::repeat_n(f64::ln(l0), dim));
        theta.push((var * noise_frac).ln());
        let (t, v) = minimize(|t| neg_lml(points, values, t), theta, 100);
        if v.is_finite() && best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, t));
        }
    }
    let (_, mut theta) = best.expect("at least one start");
    theta[0] = theta[0].clamp((var * 1e-4).ln(), (var * 1e4).ln());
    for t in &mut theta[1..=dim] {
        *t = t.clamp(LOG_LENGTH_BOUNDS.0, LOG_LENGTH_BOUNDS.1);
    }
    theta[dim + 1] = theta[dim + 1].clamp(-40.0, (var * 10.0).ln());
    gp_fit_with(points, values, unpack(&theta, dim))
}

#[cfg(test)]
pub(crate) fn neg_lml_for_tests(points: &[Vec<f64>], values: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    neg_lml(points, values, theta)
}
