use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{dim, domain, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    Huber { delta: f64 },
}

impl Loss {
    /// Loss value and its gradient w.r.t. `pred`.
    pub fn eval<T: Real>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        match self {
            Loss::Mse => mse_loss(pred, target),
            Loss::Huber { delta } => huber_loss(pred, target, delta),
        }
    }
}

fn check<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim(format!("loss operands {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    check(pred, target)?;
    let n = T::from_usize(pred.len()).expect("len");
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let e = p - t;
            loss += e * e;
            two * e / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Mean Huber loss: `0.5 e^2` for `|e| <= delta`, else `delta (|e| - delta/2)`.
pub fn huber_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, delta: f64) -> Result<(T, Tensor<T>)> {
    check(pred, target)?;
    if !(delta > 0.0) {
        return Err(domain(format!("huber delta must be positive, got {delta}")));
    }
    let d = T::lit(delta);
    let half = T::lit(0.5);
    let n = T::from_usize(pred.len()).expect("len");
    let mut loss = T::zero();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let e = p - t;
            if e.abs() <= d {
                loss += half * e * e;
                e / n
            } else {
                loss += d * (e.abs() - half * d);
                d * e.signum() / n
            }
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}
