use nalgebra::{DMatrix, DVector};

use crate::error::{dim, Error, Result};
use crate::preprocess::{extract_channels, preprocess_pair, to_max_normalised, ExportConfig};
use crate::spectra::{AcquisitionSet, Fid, fft_fid, Acquisition};
use crate::synthesis::{BasisSet, ConcentrationVector};

/// Largest design-matrix condition number accepted by [`lls_quantify`].
pub const MAX_CONDITION: f64 = 1e12;

/// Condition number (ratio of extreme singular values) of `a`.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, cols: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(cols);
    let svd = sub.svd(true, true);
    svd.solve(b, 1e-14).expect("SVD computed with U and V")
}

/// Lawson–Hanson active-set solution of `min |a x - b|` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(dim(format!("{} rows against {} observations", a.nrows(), b.len())));
    }
    let n = a.ncols();
    let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;

    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let next = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = next else { break };
        passive[j] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let z_p = least_squares(a, b, &cols);
            let mut z = DVector::zeros(n);
            for (i, &c) in cols.iter().enumerate() {
                z[c] = z_p[i];
            }
            if cols.iter().all(|&c| z[c] > 0.0) {
                x = z;
                break;
            }
            // step back towards x until the first passive variable hits zero
            let alpha = cols
                .iter()
                .filter(|&&c| z[c] <= 0.0)
                .map(|&c| x[c] / (x[c] - z[c]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            let floor = 1e-14 * x.amax();
            for &c in &cols {
                if x[c] <= floor {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(x)
}

/// Basis member `m` as an OFF/ON set at the basis axis.
fn member_set(basis: &BasisSet, m: usize) -> Result<AcquisitionSet> {
    let spec = |acq| -> Result<_> {
        let fid: &Fid = basis.fid(m, acq)?;
        fft_fid(fid, basis.axis(), acq)
    };
    AcquisitionSet::from_off_on(spec(Acquisition::Off)?, spec(Acquisition::On)?)
}

/// Non-negative least-squares fit of the exported channels of `acqs`
/// against the basis members exported with the same shift and scale,
/// returned max-normalised.
pub fn lls_quantify(basis: &BasisSet, acqs: &AcquisitionSet, cfg: &ExportConfig) -> Result<ConcentrationVector> {
    let mut columns = Vec::with_capacity(basis.len());
    let mut target = None;
    for m in 0..basis.len() {
        let (noisy, member, _) = preprocess_pair(acqs, &member_set(basis, m)?, cfg)?;
        if target.is_none() {
            target = Some(extract_channels(&noisy, cfg)?.channels);
        }
        columns.push(extract_channels(&member, cfg)?.channels);
    }
    let b = DVector::from_vec(target.expect("basis is never empty"));
    let a = DMatrix::from_fn(b.len(), columns.len(), |i, j| columns[j][i]);
    let condition = condition_number(&a);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Conditioning {
            what: "exported basis is rank deficient".into(),
            condition,
        });
    }
    let x = nnls(&a, &b)?;
    if !(x.amax() > 0.0) {
        return Err(Error::Normalisation("fit returned all-zero concentrations".into()));
    }
    let out = to_max_normalised(x.as_slice());
    ConcentrationVector::new(out.into_iter().map(|v| v.min(1.0)).collect())
}
