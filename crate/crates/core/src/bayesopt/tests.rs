use std::collections::HashSet;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::acquisition::*;
use super::gp::*;
use super::*;
use crate::error::Error;

// ---- independent oracles -------------------------------------------------

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn se(p: &KernelParams, a: &[f64], b: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for d in 0..a.len() {
        r2 += ((a[d] - b[d]) / p.length_scales[d]).powi(2);
    }
    p.signal_var * (-r2 / 2.0).exp()
}

/// Posterior mean and variance by direct solves.
fn oracle_posterior(p: &KernelParams, xs: &[Vec<f64>], ys: &[f64], x: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = ys.iter().sum::<f64>() / n as f64;
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| se(p, &xs[i], &xs[j]) + if i == j { p.noise_var + JITTER } else { 0.0 })
                .collect()
        })
        .collect();
    let ks: Vec<f64> = xs.iter().map(|xi| se(p, xi, x)).collect();
    let alpha = solve(k.clone(), ys.iter().map(|y| y - m).collect());
    let v = solve(k, ks.clone());
    let mean = m + ks.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
    let var = se(p, x, x) - ks.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    (mean, var.max(0.0))
}

/// EI as the integral of max(inc - y, 0) against the normal density,
/// evaluated by composite Simpson quadrature.
fn oracle_ei(mu: f64, sigma: f64, inc: f64) -> f64 {
    if sigma <= 0.0 {
        return (inc - mu).max(0.0);
    }
    let lo = mu - 12.0 * sigma;
    if inc <= lo {
        return 0.0;
    }
    let n = 20_000;
    let h = (inc - lo) / n as f64;
    let f = |y: f64| (inc - y) * (-(y - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut s = f(lo) + f(inc);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn sine_data() -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 / 8.0]).collect();
    let ys = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
    (xs, ys)
}

fn ordinal_space(n: usize) -> ConfigSpace {
    ConfigSpace::new(vec![Dimension::ordinal("x", (0..n).map(|i| json!(i)).collect())]).unwrap()
}

fn mixed_space() -> ConfigSpace {
    ConfigSpace::new(vec![
        Dimension::categorical("norm", vec![json!("bn"), json!("dropout")]),
        Dimension::ordinal("kernel", vec![json!(3), json!(5), json!(7)]),
        Dimension::categorical("act", vec![json!("relu"), json!("tanh"), json!("elu")]),
        Dimension::ordinal("batch", vec![json!(16), json!(32), json!(64), json!(128)]),
    ])
    .unwrap()
}

// ---- space ----------------------------------------------------------------

#[test]
fn encode_decode_round_trip() {
    let s = mixed_space();
    assert_eq!(s.size(), 72);
    assert_eq!(s.encoded_len(), 2 + 1 + 3 + 1);
    let all = s.all_configs();
    assert_eq!(all.len(), 72);
    for c in &all {
        assert_eq!(&s.decode(&s.encode(c).unwrap()).unwrap(), c);
    }
    let uniq: HashSet<_> = all.iter().collect();
    assert_eq!(uniq.len(), 72);
}

#[test]
fn apply_writes_targets() {
    let s = ConfigSpace::new(vec![
        Dimension::ordinal("batch_size", vec![json!(16), json!(32)]),
        Dimension::categorical("reg", vec![json!({"d1": 0.0, "d2": 0.3}), json!({"d1": 0.1, "d2": 0.0})])
            .with_target(""),
    ])
    .unwrap();
    let t = json!({"batch_size": 8, "d1": 0.5, "d2": 0.5, "other": 1});
    let out = s.apply(&t, &[1, 1]).unwrap();
    assert_eq!(out, json!({"batch_size": 32, "d1": 0.1, "d2": 0.0, "other": 1}));
    let bad = ConfigSpace::new(vec![Dimension::ordinal("missing", vec![json!(1)])]).unwrap();
    assert!(matches!(bad.apply(&t, &[0]), Err(Error::Config(_))));
}

#[test]
fn space_validation() {
    assert!(ConfigSpace::new(vec![]).is_err());
    assert!(ConfigSpace::new(vec![Dimension::ordinal("a", vec![])]).is_err());
    assert!(ConfigSpace::new(vec![Dimension::ordinal("a", vec![json!(1)]), Dimension::ordinal("a", vec![json!(2)])]).is_err());
    let s = mixed_space();
    assert!(s.encode(&[0, 3, 0, 0]).is_err());
    assert_eq!(s.lookup(&[json!("dropout"), json!(7), json!("elu"), json!(16)]).unwrap(), vec![1, 2, 2, 0]);
}

proptest! {
    #[test]
    fn decode_any_point_is_valid(x in proptest::collection::vec(-2.0f64..3.0, 7)) {
        let s = mixed_space();
        let c = s.decode(&x).unwrap();
        prop_assert!(s.contains(&c));
    }
}

// ---- GP ---------------------------------------------------------------

#[test]
fn prior_without_observations() {
    let gp = GpState::prior(2, KernelParams::isotropic(2, 1.7, 0.4, 0.0)).unwrap();
    let (m, v) = gp.predict(&[0.3, 0.9]);
    assert_eq!(m, 0.0);
    assert_eq!(v, 1.7);
}

#[test]
fn interpolates_without_noise() {
    let (xs, ys) = sine_data();
    let gp = gp_fit_with(&xs, &ys, KernelParams::isotropic(1, 1.0, 0.1, 0.0)).unwrap();
    for (x, y) in xs.iter().zip(&ys) {
        let (m, v) = gp.predict(x);
        assert!((m - y).abs() < 1e-8, "{m} vs {y}");
        assert!(v <= 1e-7, "{v}");
    }
}

#[test]
fn posterior_matches_direct_solve_oracle() {
    let (xs, ys) = sine_data();
    for params in [
        KernelParams::isotropic(1, 1.0, 0.2, 0.0),
        KernelParams::isotropic(1, 0.5, 0.1, 1e-3),
        KernelParams::isotropic(1, 2.0, 0.35, 1e-6),
    ] {
        let gp = gp_fit_with(&xs, &ys, params.clone()).unwrap();
        let inc = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        for i in 0..1024 {
            let x = [i as f64 / 1023.0 * 1.2 - 0.1];
            let (m, v) = gp.predict(&x);
            let (om, ov) = oracle_posterior(&params, &xs, &ys, &x);
            assert!((m - om).abs() < 1e-8, "mean {m} vs {om} at {x:?}");
            assert!((v - ov).abs() < 1e-8, "var {v} vs {ov} at {x:?}");
            let ei = expected_improvement(&gp, &x, inc);
            let oei = oracle_ei(om, ov.sqrt(), inc);
            assert!((ei - oei).abs() < 1e-8, "EI {ei} vs {oei} at {x:?}");
        }
    }
}

#[test]
fn multi_dim_oracle_on_config_grid() {
    let s = mixed_space();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let all = s.all_configs();
    let obs: Vec<_> = (0..12).map(|i| all[(i * 7 + 3) % all.len()].clone()).collect();
    let xs: Vec<Vec<f64>> = obs.iter().map(|c| s.encode(c).unwrap()).collect();
    let ys: Vec<f64> = (0..xs.len()).map(|_| rng.random::<f64>()).collect();
    let params = KernelParams {
        signal_var: 0.8,
        length_scales: vec![0.7, 0.9, 0.5, 1.1, 0.6, 0.8, 0.4],
        noise_var: 1e-4,
    };
    let gp = gp_fit_with(&xs, &ys, params.clone()).unwrap();
    let inc = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    for c in &all {
        let x = s.encode(c).unwrap();
        let (m, v) = gp.predict(&x);
        let (om, ov) = oracle_posterior(&params, &xs, &ys, &x);
        assert!((m - om).abs() < 1e-8 && (v - ov).abs() < 1e-8);
        assert!((expected_improvement(&gp, &x, inc) - oracle_ei(om, ov.sqrt(), inc)).abs() < 1e-8);
    }
}

#[test]
fn joint_matches_marginals() {
    let (xs, ys) = sine_data();
    let gp = gp_fit_with(&xs, &ys, KernelParams::isotropic(1, 1.0, 0.2, 1e-4)).unwrap();
    let pts = vec![vec![0.05], vec![0.5], vec![0.93]];
    let (mean, cov) = gp.joint(&pts);
    for (i, p) in pts.iter().enumerate() {
        let (m, v) = gp.predict(p);
        assert_relative_eq!(mean[i], m, epsilon = 1e-10);
        assert_relative_eq!(cov[(i, i)], v, epsilon = 1e-10);
    }
}

#[test]
fn predictive_gradients_match_finite_differences() {
    let s = mixed_space();
    let xs: Vec<Vec<f64>> = s.all_configs().iter().step_by(5).map(|c| s.encode(c).unwrap()).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v).sum::<f64>().sin()).collect();
    let gp = gp_fit_with(&xs, &ys, KernelParams::isotropic(7, 1.0, 0.8, 1e-4)).unwrap();
    let x = vec![0.3, 0.6, 0.45, 0.2, 0.7, 0.1, 0.55];
    let (_, _, dm, dv) = gp.predict_with_grad(&x);
    let h = 1e-6;
    for d in 0..x.len() {
        let mut a = x.clone();
        let mut b = x.clone();
        a[d] += h;
        b[d] -= h;
        let (ma, va) = gp.predict(&a);
        let (mb, vb) = gp.predict(&b);
        assert!((dm[d] - (ma - mb) / (2.0 * h)).abs() < 1e-6);
        assert!((dv[d] - (va - vb) / (2.0 * h)).abs() < 1e-6);
    }
}

#[test]
fn lml_gradient_matches_finite_differences() {
    let (xs, ys) = sine_data();
    let theta = [0.1, -1.3, -5.0];
    let (_, g) = neg_lml_for_tests(&xs, &ys, &theta);
    let h = 1e-5;
    for k in 0..theta.len() {
        let mut a = theta;
        let mut b = theta;
        a[k] += h;
        b[k] -= h;
        let fd = (neg_lml_for_tests(&xs, &ys, &a).0 - neg_lml_for_tests(&xs, &ys, &b).0) / (2.0 * h);
        assert!((g[k] - fd).abs() < 1e-4 * (1.0 + fd.abs()), "{k}: {} vs {fd}", g[k]);
    }
}

#[test]
fn fitted_hyperparameters_beat_fixed_ones() {
    let (xs, ys) = sine_data();
    let fitted = gp_fit(&xs, &ys).unwrap();
    for p in [
        KernelParams::isotropic(1, 1.0, 1.0, 1e-2),
        KernelParams::isotropic(1, 0.1, 0.05, 1e-3),
    ] {
        let fixed = gp_fit_with(&xs, &ys, p).unwrap();
        assert!(fitted.log_marginal_likelihood() >= fixed.log_marginal_likelihood());
    }
    assert!(fitted.params.noise_var >= NOISE_FLOOR);
}

#[test]
fn conflicting_duplicates_without_noise_are_rejected() {
    let xs = vec![vec![0.2], vec![0.2], vec![0.8]];
    let ys = vec![1.0, 2.0, 0.0];
    let r = gp_fit_with(&xs, &ys, KernelParams::isotropic(1, 1.0, 0.3, 0.0));
    assert!(matches!(r, Err(Error::Conditioning { .. })));
    assert!(gp_fit_with(&xs, &ys, KernelParams::isotropic(1, 1.0, 0.3, 1e-2)).is_ok());
    assert!(gp_fit_with(&xs[..1], &ys[..1], KernelParams::isotropic(1, 1.0, 0.3, 0.0)).is_err());
    assert!(gp_fit_with(&xs, &[1.0, f64::NAN, 0.0], KernelParams::isotropic(1, 1.0, 0.3, 0.0)).is_err());
}

// ---- acquisition --------------------------------------------------------

#[test]
fn ei_closed_forms() {
    assert_relative_eq!(expected_improvement_from(0.5, 1.0, 0.5), 0.398_942_280_401_432_7, epsilon = 1e-15);
    assert_eq!(expected_improvement_from(0.2, 0.0, 0.2), 0.0);
    let (xs, ys) = sine_data();
    let gp = gp_fit_with(&xs, &ys, KernelParams::isotropic(1, 1.0, 0.1, 0.0)).unwrap();
    let inc = incumbent(&gp);
    let at = xs[ys.iter().position(|y| *y == inc).unwrap()].clone();
    // only the jitter keeps sigma above zero here
    let (_, v) = gp.predict(&at);
    assert!(v < 1e-7);
    assert!(expected_improvement(&gp, &at, inc) <= 0.4 * v.sqrt() + 1e-8);
}

#[test]
fn ei_nonnegative_on_random_points() {
    let s = mixed_space();
    let xs: Vec<Vec<f64>> = s.all_configs().iter().step_by(4).map(|c| s.encode(c).unwrap()).collect();
    let ys: Vec<f64> = (0..xs.len()).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
    let gp = gp_fit(&xs, &ys).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..7).map(|_| rng.random::<f64>() * 1.4 - 0.2).collect();
        assert!(expected_improvement(&gp, &x, incumbent(&gp)) >= 0.0);
    }
}

fn grid_ei_argmax(gp: &GpState, s: &ConfigSpace, exclude: &HashSet<Config>) -> (Config, f64) {
    let inc = incumbent(gp);
    s.all_configs()
        .into_iter()
        .filter(|c| !exclude.contains(c))
        .map(|c| {
            let x = s.encode(&c).unwrap();
            let (m, v) = oracle_posterior(&gp.params, &gp.x, &gp.y, &x);
            let e = oracle_ei(m, v.sqrt(), inc);
            (c, e)
        })
        .fold((vec![], -1.0), |a, b| if b.1 > a.1 { b } else { a })
}

#[test]
fn ei_picks_the_untried_value() {
    let s = ordinal_space(11);
    let untried = 7;
    let configs: Vec<Config> = (0..11).filter(|&i| i != untried).map(|i| vec![i]).collect();
    let xs: Vec<Vec<f64>> = configs.iter().map(|c| s.encode(c).unwrap()).collect();
    let ys: Vec<f64> = configs.iter().map(|c| (c[0] as f64 - 7.5).powi(2) / 10.0).collect();
    let gp = gp_fit(&xs, &ys).unwrap();
    let exclude: HashSet<Config> = configs.into_iter().collect();
    let p = propose_ei(&gp, &s, 20, 1, &exclude).unwrap().unwrap();
    let (oracle, _) = grid_ei_argmax(&gp, &s, &exclude);
    assert_eq!(p.config, oracle);
    assert_eq!(p.config, vec![untried]);
    assert!(!p.fallback);
}

#[test]
fn ei_proposal_reaches_grid_maximum() {
    // 5 dimensions, 4*3*5*4*3 = 720 configurations
    let s = ConfigSpace::new(vec![
        Dimension::ordinal("a", (0..4).map(|i| json!(i)).collect()),
        Dimension::categorical("b", (0..3).map(|i| json!(i)).collect()),
        Dimension::ordinal("c", (0..5).map(|i| json!(i)).collect()),
        Dimension::categorical("d", (0..4).map(|i| json!(i)).collect()),
        Dimension::ordinal("e", (0..3).map(|i| json!(i)).collect()),
    ])
    .unwrap();
    let all = s.all_configs();
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let w: Vec<f64> = (0..s.encoded_len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let obs: Vec<Config> = (0..15).map(|_| all[rng.random_range(0..all.len())].clone()).collect::<HashSet<_>>().into_iter().collect();
        let mut obs = obs;
        obs.sort();
        let xs: Vec<Vec<f64>> = obs.iter().map(|c| s.encode(c).unwrap()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().sin()).collect();
        let gp = gp_fit(&xs, &ys).unwrap();
        let exclude: HashSet<Config> = obs.into_iter().collect();
        let p = propose_ei(&gp, &s, 20, seed, &exclude).unwrap().unwrap();
        assert!(s.contains(&p.config) && !exclude.contains(&p.config));
        let (_, best) = grid_ei_argmax(&gp, &s, &exclude);
        assert!(p.ei >= 0.99 * best, "seed {seed}: {} < 0.99 * {best}", p.ei);
    }
}

#[test]
fn ei_exhausted_space_gives_none() {
    let s = ordinal_space(3);
    let xs = vec![vec![0.0], vec![0.5], vec![1.0]];
    let gp = gp_fit(&xs, &[1.0, 0.0, 2.0]).unwrap();
    let all: HashSet<Config> = s.all_configs().into_iter().collect();
    assert!(propose_ei(&gp, &s, 5, 0, &all).unwrap().is_none());
    assert!(propose_thompson(&gp, &s, 10, 0, &all).unwrap().is_none());
}

#[test]
fn thompson_is_deterministic() {
    let s = mixed_space();
    let xs: Vec<Vec<f64>> = s.all_configs().iter().step_by(6).map(|c| s.encode(c).unwrap()).collect();
    let ys: Vec<f64> = (0..xs.len()).map(|i| ((i * 13) % 7) as f64).collect();
    let gp = gp_fit(&xs, &ys).unwrap();
    let none = HashSet::new();
    let a = propose_thompson(&gp, &s, 100, 42, &none).unwrap();
    let b = propose_thompson(&gp, &s, 100, 42, &none).unwrap();
    assert_eq!(a, b);
}

#[test]
fn thompson_collapsed_posterior_takes_mean_argmin() {
    let s = ordinal_space(5);
    let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
    let ys = vec![3.0, 1.0, 0.0, 2.0, 4.0];
    let gp = gp_fit_with(&xs, &ys, KernelParams::isotropic(1, 1.0, 0.3, 0.0)).unwrap();
    for seed in 0..20 {
        assert_eq!(propose_thompson(&gp, &s, 10, seed, &HashSet::new()).unwrap(), Some(vec![2]));
    }
}

#[test]
fn thompson_prefers_the_clearly_better_point() {
    let s = ordinal_space(2);
    let xs = vec![vec![0.05], vec![0.95]];
    let ys = vec![0.0, 1.0];
    let gp = gp_fit_with(&xs, &ys, KernelParams::isotropic(1, 0.5, 0.3, 0.05)).unwrap();
    let (m0, v0) = oracle_posterior(&gp.params, &xs, &ys, &[0.0]);
    let (m1, v1) = oracle_posterior(&gp.params, &xs, &ys, &[1.0]);
    let (_, cov) = gp.joint(&[vec![0.0], vec![1.0]]);
    let sd = (v0 + v1 - 2.0 * cov[(0, 1)]).sqrt();
    // P(f0 < f1) under the bivariate normal posterior, by quadrature
    let z = (m1 - m0) / sd;
    let n = 20_000;
    let lo = -12.0;
    let h = (z - lo) / n as f64;
    let pdf = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = pdf(lo) + pdf(z);
    for i in 1..n {
        acc += pdf(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let p_better = acc * h / 3.0;
    assert!(p_better > 0.95, "analytic probability {p_better}");
    let wins = (0..200u64)
        .filter(|&seed| propose_thompson(&gp, &s, 10, seed, &HashSet::new()).unwrap() == Some(vec![0]))
        .count();
    assert!(wins > 190, "{wins}/200");
    // binomial 4-sigma band around the analytic rate
    let band = 4.0 * (p_better * (1.0 - p_better) / 200.0).sqrt();
    assert!((wins as f64 / 200.0 - p_better).abs() <= band.max(0.02), "{wins} vs {p_better}");
}

// ---- loop -------------------------------------------------------------

fn quadratic(c: &Config) -> f64 {
    let target = [1usize, 2, 0, 3];
    c.iter().zip(target).map(|(&a, b)| (a as f64 - b as f64).powi(2)).sum::<f64>() + 0.1
}

#[test]
fn single_config_space() {
    let s = ConfigSpace::new(vec![Dimension::ordinal("only", vec![json!(1)])]).unwrap();
    let mut calls = 0;
    let sel = select_model(
        &s,
        |_c| {
            calls += 1;
            Ok(Evaluation::scalar(0.5))
        },
        &BoBudget::new(10, 2).unwrap(),
        0,
    )
    .unwrap();
    assert_eq!(calls, 1);
    assert_eq!(sel.best, Some(vec![0]));
    assert_eq!(sel.trace.len(), 1);
}

#[test]
fn budget_validation() {
    assert!(BoBudget::new(10, 1).is_err());
    assert!(BoBudget::new(3, 3).is_err());
    assert!(BoBudget::new(4, 3).is_ok());
}

#[test]
fn trace_has_no_duplicates_and_monotone_best() {
    let s = mixed_space();
    for seed in 0..4 {
        let sel = select_model(&s, |c| Ok(Evaluation::scalar(quadratic(c))), &BoBudget::new(30, 5).unwrap(), seed).unwrap();
        assert_eq!(sel.trace.len(), 30);
        let uniq: HashSet<_> = sel.trace.iter().map(|e| e.config.clone()).collect();
        assert_eq!(uniq.len(), 30);
        let best = sel.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(sel.best_mean, *best.last().unwrap());
        for (i, e) in sel.trace.iter().enumerate() {
            let expect = if i < 5 {
                Acquisition::Init
            } else if i % 2 == 0 {
                Acquisition::Ei
            } else {
                Acquisition::Thompson
            };
            assert_eq!(e.acquisition, expect, "iteration {i}");
        }
    }
}

#[test]
fn exhausts_small_space_without_repeats() {
    let s = ordinal_space(6);
    let sel = select_model(&s, |c| Ok(Evaluation::scalar(c[0] as f64)), &BoBudget::new(50, 2).unwrap(), 3).unwrap();
    assert_eq!(sel.trace.len(), 6);
    assert_eq!(sel.best, Some(vec![0]));
}

#[test]
fn failures_are_recorded_and_skipped() {
    let s = mixed_space();
    let sel = select_model(
        &s,
        |c| {
            if c[0] == 1 {
                Err(Error::Training {
                    epoch: 0,
                    batch: 0,
                    reason: "diverged".into(),
                })
            } else {
                Ok(Evaluation::scalar(quadratic(c)))
            }
        },
        &BoBudget::new(20, 4).unwrap(),
        5,
    )
    .unwrap();
    assert_eq!(sel.trace.len(), 20);
    let failed = sel.trace.iter().filter(|e| !e.succeeded()).count();
    assert!(failed > 0);
    assert!(sel.trace.iter().filter(|e| !e.succeeded()).all(|e| e.config[0] == 1 && e.mean.is_nan()));
    assert_eq!(sel.best.as_ref().unwrap()[0], 0);
}

#[test]
fn deterministic_given_seed() {
    let s = mixed_space();
    let run = || select_model(&s, |c| Ok(Evaluation::scalar(quadratic(c))), &BoBudget::new(15, 4).unwrap(), 11).unwrap();
    let (a, b) = (run(), run());
    let strip = |t: &[TraceEntry]| t.iter().map(|e| (e.config.clone(), e.mean, e.acquisition)).collect::<Vec<_>>();
    assert_eq!(strip(&a.trace), strip(&b.trace));
}

#[test]
fn resume_from_ledger_matches_uninterrupted_run() {
    let s = mixed_space();
    let budget = BoBudget::new(16, 4).unwrap();
    let f = |c: &Config| Ok(Evaluation::from_folds(vec![quadratic(c), quadratic(c) + 0.2]));
    let full = select_model(&s, f, &budget, 21).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.csv");
    let short = BoBudget::new(9, 4).unwrap();
    let mut w = ledger::LedgerWriter::open(&path, &s).unwrap();
    select_model_resume(&s, f, &short, 21, vec![], |e| w.append(e)).unwrap();
    drop(w);
    let prior = ledger::read_ledger(&path, &s).unwrap();
    assert_eq!(prior.len(), 9);
    let mut w = ledger::LedgerWriter::open(&path, &s).unwrap();
    let resumed = select_model_resume(&s, f, &budget, 21, prior, |e| w.append(e)).unwrap();

    let strip = |t: &[TraceEntry]| {
        t.iter()
            .map(|e| (e.config.clone(), e.mean, e.fold_maes.clone(), e.encoded.clone(), e.acquisition))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&full.trace), strip(&resumed.trace));
    let back = ledger::read_ledger(&path, &s).unwrap();
    assert_eq!(strip(&back), strip(&full.trace));
}

#[test]
fn ledger_rejects_other_space() {
    let s = mixed_space();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.csv");
    let sel = select_model(&s, |c| Ok(Evaluation::scalar(quadratic(c))), &BoBudget::new(5, 2).unwrap(), 0).unwrap();
    ledger::write_ledger(&path, &s, &sel.trace).unwrap();
    assert!(ledger::read_ledger(&path, &ordinal_space(3)).is_err());
}

#[test]
fn initial_design_is_distinct_and_seeded() {
    let s = mixed_space();
    let a = initial_design(&s, 10, 1).unwrap();
    let b = initial_design(&s, 10, 2).unwrap();
    assert_eq!(a.len(), 10);
    assert_eq!(a.iter().collect::<HashSet<_>>().len(), 10);
    assert_ne!(a, b);
    assert_eq!(a, initial_design(&s, 10, 1).unwrap());
    assert_eq!(initial_design(&ordinal_space(3), 10, 0).unwrap().len(), 3);
}
