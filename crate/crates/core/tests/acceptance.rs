//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset by number: `cargo test --test acceptance -- 1 5 7`.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use megaquant::bayesopt::{
    expected_improvement_from, gp_fit, gp_fit_with, select_model, BoBudget, Config, ConfigSpace, Dimension,
    Evaluation, KernelParams,
};
use megaquant::evaluation::wilcoxon::{exact_lower_tail, signed_ranks, wilcoxon_one_tailed, Method};
use megaquant::evaluation::lls_quantify;
use megaquant::io::config::RunConfig;
use megaquant::models::{train_split, PreparedDataset, TrainedModel};
use megaquant::nn::{Activation, LayerSpec, Loss, Sequential, Tensor};
use megaquant::preprocess::{export_input, preprocess, DataType, ExportConfig, TargetNorm};
use megaquant::sobol::Sobol;
use megaquant::spectra::{apodize, fft_fid, ifft_spectrum, zero_fill_or_truncate, Acquisition, AcquisitionSet, Fid, PpmAxis, C64};
use megaquant::synthesis::{
    default_peak_table, generate_lorentzian_basis, mix_spectrum, BasisSet, ConcentrationVector, LinewidthMode,
    SynthesisConfig,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_normalised(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(0.0, f64::max);
    v.iter().map(|x| x / m).collect()
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let basis =
        generate_lorentzian_basis(&default_peak_table(), 2.0, &PpmAxis::with_defaults(2048, 2000.0).unwrap()).unwrap();
    let export = ExportConfig::new([Acquisition::Off, Acquisition::On], [DataType::Real, DataType::Imaginary], TargetNorm::Max)
        .with_points(512);
    let sobol = Sobol::new(5).unwrap();
    let worst = (1..=200u64)
        .into_par_iter()
        .map(|i| {
            let c = sobol.point(i);
            let acqs = mix_spectrum(&basis, &ConcentrationVector::new(c.clone()).unwrap(), 2.0).unwrap();
            let fit = lls_quantify(&basis, &acqs, &export).unwrap();
            fit.values()
                .iter()
                .zip(max_normalised(&c))
                .map(|(f, t)| ((f - t) / t).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    check(worst < 1e-8, format!("200 mixtures, worst per-metabolite relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// `sum(net(x) * r)`, whose gradient with respect to the output is `r`.
fn probe(net: &Sequential<f64>, x: &Tensor<f64>, r: &Tensor<f64>, training: bool) -> f64 {
    let y = net.clone().forward(x.clone(), training).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn layer_fd_error(spec: LayerSpec, in_shape: &[usize], batch: usize, training: bool, seed: u64) -> f64 {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Sequential::<f64>::build(&[spec], in_shape, seed).unwrap();
    let mut xs = vec![batch];
    xs.extend_from_slice(in_shape);
    let x = random_tensor(xs, &mut rng);
    let mut os = vec![batch];
    os.extend_from_slice(net.output_shape());
    let r = random_tensor(os, &mut rng);
    let mut analytic = net.clone();
    analytic.forward(x.clone(), training).unwrap();
    let dx = analytic.backward(&r).unwrap();
    let num: Vec<f64> = (0..x.len())
        .map(|i| {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            (probe(&net, &xp, &r, training) - probe(&net, &xm, &r, training)) / (2.0 * h)
        })
        .collect();
    let mut worst = rel_err(dx.data(), &num);
    for (pi, p) in analytic.params().iter().enumerate() {
        let num: Vec<f64> = (0..p.grad.len())
            .map(|k| {
                let (mut np, mut nm) = (net.clone(), net.clone());
                np.params_mut()[pi].value[k] += h;
                nm.params_mut()[pi].value[k] -= h;
                (probe(&np, &x, &r, training) - probe(&nm, &x, &r, training)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_err(&p.grad, &num));
    }
    worst
}

fn loss_fd_error(loss: Loss, shape: Vec<usize>, rng: &mut ChaCha8Rng) -> f64 {
    let h = 1e-5;
    let pred = random_tensor(shape.clone(), rng);
    let target = random_tensor(shape, rng);
    let (_, g) = loss.eval(&pred, &target).unwrap();
    let num: Vec<f64> = (0..pred.len())
        .map(|i| {
            let (mut p, mut m) = (pred.clone(), pred.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            (loss.eval(&p, &target).unwrap().0 - loss.eval(&m, &target).unwrap().0) / (2.0 * h)
        })
        .collect();
    rel_err(g.data(), &num)
}

fn criterion_2() -> Outcome {
    const KINDS: usize = 14;
    let mut worst = vec![0.0f64; KINDS];
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let kind = trial as usize % KINDS;
        let batch = rng.random_range(2..5);
        let (c, hgt, w) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(6..14));
        let act = |a| LayerSpec::Activation { activation: a };
        let flat = vec![rng.random_range(2..9)];
        let err = match kind {
            0 => layer_fd_error(LayerSpec::Dense { units: rng.random_range(1..6) }, &flat, batch, true, trial),
            1 => {
                let kh = rng.random_range(1..=hgt);
                let kw = rng.random_range(1..=w.min(5));
                let stride = rng.random_range(1..4);
                let spec = LayerSpec::Conv2d { filters: rng.random_range(1..4), kernel: (kh, kw), stride };
                layer_fd_error(spec, &[c, hgt, w], batch, true, trial)
            }
            2 => layer_fd_error(LayerSpec::BatchNorm, &flat, batch, true, trial),
            3 => layer_fd_error(LayerSpec::BatchNorm, &[c, hgt, w], batch, trial % 2 == 0, trial),
            4 => layer_fd_error(LayerSpec::Dropout { rate: rng.random_range(0.1..0.6) }, &flat, batch, true, trial),
            5 => layer_fd_error(LayerSpec::MaxPool2d { pool: rng.random_range(2..4) }, &[c, hgt, w], batch, true, trial),
            6 => layer_fd_error(act(Activation::Relu), &flat, batch, true, trial),
            7 => layer_fd_error(act(Activation::Sigmoid), &flat, batch, true, trial),
            8 => layer_fd_error(act(Activation::Tanh), &flat, batch, true, trial),
            9 => layer_fd_error(act(Activation::Softmax), &flat, batch, true, trial),
            10 => layer_fd_error(act(Activation::Linear), &flat, batch, true, trial),
            11 => layer_fd_error(LayerSpec::Flatten, &[c, hgt, w], batch, true, trial),
            12 => loss_fd_error(Loss::Mse, vec![batch, flat[0]], &mut rng),
            _ => loss_fd_error(Loss::Huber { delta: rng.random_range(0.2..1.0) }, vec![batch, flat[0]], &mut rng),
        };
        worst[kind] = worst[kind].max(err);
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    check(
        max < 1e-4,
        format!("100 trials over 12 layer kinds and 2 losses, worst relative error {max:.2e}"),
    )
}

// ---------------------------------------------------------------- 3 and 4

fn load_run_config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn intrinsic_basis(cfg: &RunConfig) -> BasisSet {
    cfg.basis.as_ref().unwrap().load().unwrap()
}

fn train_yae(cfg: &RunConfig) -> (TrainedModel<f32>, PreparedDataset) {
    let basis = intrinsic_basis(cfg);
    let model = cfg.effective_model().unwrap();
    let data = PreparedDataset::synthesize(&basis, cfg.synthesis.as_ref().unwrap(), model.export()).unwrap();
    assert_eq!(data.len(), 10_000, "no sample may be dropped");
    let tr: Vec<usize> = (0..8000).collect();
    let va: Vec<usize> = (8000..10_000).collect();
    let t = cfg.training.as_ref().unwrap();
    let m = train_split::<f32>(&model, &data, &tr, Some(&va), t.epochs, t.seed).unwrap();
    (m, data)
}

/// GABA MAE, slope and R² of predicted against true max-normalised GABA.
fn gaba_metrics(model: &TrainedModel<f32>, data: &PreparedDataset, idx: &[usize]) -> (f64, f64, f64) {
    let g = data.metabolites.iter().position(|m| m == "GABA").unwrap();
    let sub = data.subset(idx).unwrap();
    let pred = model.predict(&sub).unwrap();
    let xs: Vec<f64> = (0..sub.len()).map(|i| max_normalised(sub.raw_target(i))[g]).collect();
    let ys: Vec<f64> = pred.iter().map(|p| p[g]).collect();
    let n = xs.len() as f64;
    let mae = xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (mae, sxy / sxx, sxy * sxy / (sxx * syy))
}

#[derive(Default)]
struct Shared {
    fixed_model: Option<TrainedModel<f32>>,
}

fn criterion_3(shared: &mut Shared) -> Outcome {
    let cfg = load_run_config("run.json");
    let (model, data) = train_yae(&cfg);
    let va: Vec<usize> = (8000..10_000).collect();
    let (mae, slope, r2) = gaba_metrics(&model, &data, &va);
    let epochs = model.log.len();
    shared.fixed_model = Some(model);
    check(
        mae <= 0.06 && (0.90..=1.10).contains(&slope) && r2 >= 0.95,
        format!("{epochs} epochs, validation GABA MAE {mae:.4}, slope {slope:.3}, R² {r2:.3}"),
    )
}

fn held_out_mae(model: &TrainedModel<f32>, basis: &BasisSet, export: &ExportConfig, width: f64) -> f64 {
    let synth = SynthesisConfig {
        n_samples: 1000,
        noise_sigma_range: [0.0, 0.03],
        linewidth_mode: LinewidthMode::Fixed(width),
        master_seed: 90_000 + width as u64,
        sobol_skip: 20_001,
    };
    let data = PreparedDataset::synthesize(basis, &synth, export).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    gaba_metrics(model, &data, &idx).0
}

fn criterion_4(shared: &mut Shared) -> Outcome {
    let fixed_cfg = load_run_config("run.json");
    let aug_cfg = load_run_config("run-augmented.json");
    assert_eq!(
        aug_cfg.synthesis.as_ref().unwrap().linewidth_mode,
        LinewidthMode::UniformGrid { low: 1.0, high: 10.0, step: 1.0 }
    );
    let fixed = match shared.fixed_model.take() {
        Some(m) => m,
        None => train_yae(&fixed_cfg).0,
    };
    let (augmented, _) = train_yae(&aug_cfg);
    let basis = intrinsic_basis(&fixed_cfg);
    let export = fixed_cfg.effective_model().unwrap().export().clone();
    let mut rows = Vec::new();
    let mut at8 = (0.0, 0.0);
    for w in [2.0, 4.0, 8.0] {
        let f = held_out_mae(&fixed, &basis, &export, w);
        let a = held_out_mae(&augmented, &basis, &export, w);
        rows.push(format!("{w} Hz fixed {f:.4} augmented {a:.4}"));
        if w == 8.0 {
            at8 = (f, a);
        }
    }
    check(at8.1 < at8.0, format!("GABA MAE: {}", rows.join("; ")))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let space = ConfigSpace::new(vec![
        Dimension::categorical("norm", vec![json!("batchnorm"), json!("dropout")]),
        Dimension::ordinal("kernels", vec![json!("small"), json!("medium"), json!("large")]),
        Dimension::categorical("head", vec![json!("softmax-stride"), json!("sigmoid-pool")]),
        Dimension::ordinal("batch", vec![json!(16), json!(32), json!(64)]),
    ])
    .unwrap();
    assert_eq!(space.size(), 36);
    let objective = |c: &Config| -> f64 {
        let norm = [0.0, 0.010][c[0]];
        let k = [0.012, 0.0, 0.006][c[1]];
        let head = [0.004, 0.0][c[2]];
        let b = [0.0, 0.003, 0.008][c[3]];
        let inter = if c[0] == 1 && c[2] == 1 { -0.006 } else { 0.0 };
        0.05 + norm + k + head + b + inter
    };
    // exhaustive search is the oracle
    let all = space.all_configs();
    let best = all.iter().min_by(|a, b| objective(a).total_cmp(&objective(b))).unwrap().clone();
    let runner_up = all.iter().filter(|c| **c != best).map(|c| objective(c)).fold(f64::INFINITY, f64::min);
    assert!(runner_up > objective(&best), "optimum must be unique");
    let budget_evals = (0.4 * all.len() as f64).floor() as usize;
    let budget = BoBudget::new(budget_evals, 4).unwrap();
    let hits = (0..50u64)
        .filter(|&seed| {
            let sel = select_model(&space, |c| Ok(Evaluation::scalar(objective(c))), &budget, seed).unwrap();
            assert!(sel.trace.len() <= budget_evals);
            sel.trace.iter().any(|e| e.config == best)
        })
        .count();
    check(
        hits >= 45,
        format!("optimum found within {budget_evals} of 36 evaluations in {hits}/50 runs"),
    )
}

// ---------------------------------------------------------------- 6

fn se(p: &KernelParams, a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(&p.length_scales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    p.signal_var * (-0.5 * r2).exp()
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// EI by composite Simpson quadrature of `max(inc - y, 0)` against the
/// normal density.
fn ei_quadrature(mu: f64, sigma: f64, inc: f64) -> f64 {
    if sigma <= 0.0 {
        return (inc - mu).max(0.0);
    }
    let lo = mu - 12.0 * sigma;
    if inc <= lo {
        return 0.0;
    }
    let n = 20_000;
    let h = (inc - lo) / n as f64;
    let f = |y: f64| {
        (inc - y) * (-(y - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut s = f(lo) + f(inc);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn criterion_6() -> Outcome {
    // categorical(4) x ordinal(4) x ordinal(8) x ordinal(8) = 1024 points
    let space = ConfigSpace::new(vec![
        Dimension::categorical("a", (0..4).map(|i| json!(i)).collect()),
        Dimension::ordinal("b", (0..4).map(|i| json!(i)).collect()),
        Dimension::ordinal("c", (0..8).map(|i| json!(i)).collect()),
        Dimension::ordinal("d", (0..8).map(|i| json!(i)).collect()),
    ])
    .unwrap();
    let configs = space.all_configs();
    assert_eq!(configs.len(), 1024);
    let encode = |c: &Config| {
        let mut v = vec![0.0; 4];
        v[c[0]] = 1.0;
        v.push(c[1] as f64 / 3.0);
        v.push(c[2] as f64 / 7.0);
        v.push(c[3] as f64 / 7.0);
        v
    };
    let grid: Vec<Vec<f64>> = configs.iter().map(encode).collect();
    for (c, x) in configs.iter().zip(&grid) {
        assert_eq!(&space.encode(c).unwrap(), x);
    }
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut picked = HashSet::new();
        while picked.len() < 12 + 4 * trial as usize {
            picked.insert(rng.random_range(0..1024));
        }
        let xs: Vec<Vec<f64>> = picked.iter().map(|&i| grid[i].clone()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x[4]).sin() + x[5] * x[6] - 0.5 * x[0] + rng.random_range(-0.05..0.05)).collect();
        let gp = if trial % 2 == 0 {
            let p = KernelParams {
                signal_var: rng.random_range(0.5..2.0),
                length_scales: (0..7).map(|_| rng.random_range(0.3..1.5)).collect(),
                noise_var: [1e-4, 1e-2][trial as usize / 2],
            };
            gp_fit_with(&xs, &ys, p).unwrap()
        } else {
            gp_fit(&xs, &ys).unwrap()
        };
        let p = &gp.params;
        let n = xs.len();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let jitter = megaquant::bayesopt::gp::JITTER;
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| se(p, &xs[i], &xs[j]) + if i == j { p.noise_var + jitter } else { 0.0 }).collect())
            .collect();
        let alpha = solve(k.clone(), ys.iter().map(|y| y - mean).collect());
        let inc = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        for x in &grid {
            let ks: Vec<f64> = xs.iter().map(|xi| se(p, xi, x)).collect();
            let v = solve(k.clone(), ks.clone());
            let om = mean + ks.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
            let ov = (p.signal_var - ks.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()).max(0.0);
            let oei = ei_quadrature(om, ov.sqrt(), inc);
            let (m, var) = gp.predict(x);
            let ei = expected_improvement_from(m, var.sqrt(), inc);
            worst.0 = worst.0.max((m - om).abs());
            worst.1 = worst.1.max((var - ov).abs());
            worst.2 = worst.2.max((ei - oei).abs());
        }
    }
    check(
        worst.0 < 1e-8 && worst.1 < 1e-8 && worst.2 < 1e-8,
        format!(
            "1024-point space, 4 fits; max |Δmean| {:.1e}, |Δvar| {:.1e}, |ΔEI| {:.1e}",
            worst.0, worst.1, worst.2
        ),
    )
}

// ---------------------------------------------------------------- 7

/// `P(W+ <= w)` by listing all 2^n sign assignments.
fn brute_force_tail(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            s <= w + 1e-9
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut cases = 0;
    let mut mismatches = 0;
    for n in 1..=12usize {
        for trial in 0..20 {
            // integer magnitudes in a small range force ties in half the trials
            let d: Vec<f64> = (0..n)
                .map(|_| {
                    let m = if trial % 2 == 0 { rng.random_range(1..4) as f64 } else { rng.random_range(0.01..1.0) };
                    if rng.random_bool(0.5) { m } else { -m }
                })
                .collect();
            let ranks = signed_ranks(&d);
            let w: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
            let oracle = brute_force_tail(&ranks, w);
            cases += 1;
            if exact_lower_tail(&ranks, w) != oracle {
                mismatches += 1;
            }
            if n >= 5 {
                let r = wilcoxon_one_tailed("X", &d).unwrap();
                cases += 1;
                if r.method != Method::Exact || r.p_value != oracle {
                    mismatches += 1;
                }
            }
        }
    }
    // 11 of 14 experiments favour the first model; the three losses sit at
    // ranks 6, 8 and 11
    let fixture: Vec<f64> = (1..=14)
        .map(|r| if [6, 8, 11].contains(&r) { r as f64 * 0.001 } else { -(r as f64) * 0.001 })
        .collect();
    let f = wilcoxon_one_tailed("GABA", &fixture).unwrap();
    let fixture_oracle = brute_force_tail(&signed_ranks(&fixture), 25.0);
    let fixture_ok = f.wins == 11 && f.p_value == fixture_oracle && (f.p_value - 0.045).abs() < 0.0005;
    check(
        mismatches == 0 && fixture_ok,
        format!(
            "{cases} cases with n <= 12 equal to 2^n enumeration ({mismatches} mismatches); \
             constructed 11/14 pattern p = {:.4}",
            f.p_value
        ),
    )
}

// ---------------------------------------------------------------- 8

fn exp_fid(n: usize, dwell: f64, hz: f64) -> Fid {
    let s = (0..n)
        .map(|t| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * hz * t as f64 * dwell))
        .collect();
    Fid::new(s, dwell).unwrap()
}

/// FWHM in Hz of the real part, with linear interpolation at the
/// half-height crossings.
fn fwhm_hz(re: &[f64], bin_hz: f64) -> f64 {
    let (peak, &h) = re.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let half = h / 2.0;
    let mut l = peak;
    while re[l - 1] > half {
        l -= 1;
    }
    let mut r = peak;
    while re[r + 1] > half {
        r += 1;
    }
    let left = (l - 1) as f64 + (half - re[l - 1]) / (re[l] - re[l - 1]);
    let right = r as f64 + (re[r] - half) / (re[r] - re[r + 1]);
    (right - left) * bin_hz
}

fn preprocessing_fft() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for n in [2usize, 17, 512, 2048, 4096, 16_000] {
        let s: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let fid = Fid::new(s, 1.0 / 2000.0).unwrap();
        let back = ifft_spectrum(&fft_fid(&fid, &PpmAxis::with_defaults(n, 2000.0).unwrap(), Acquisition::Off).unwrap());
        worst = fid.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).norm()).fold(worst, f64::max);
    }
    (worst < 1e-10, format!("FFT round trip {worst:.1e}"))
}

fn preprocessing_apodization() -> (bool, String) {
    let (n, fill, bw) = (4096usize, 65_536usize, 2000.0);
    let axis = PpmAxis::with_defaults(fill, bw).unwrap();
    let line = |extra: &[f64]| {
        let mut fid = exp_fid(n, 1.0 / bw, 0.0);
        for &e in extra {
            fid = apodize(&fid, e).unwrap();
        }
        // half-weight the first point so the spectrum has no constant offset
        let mut s = fid.samples().to_vec();
        s[0] *= 0.5;
        let fid = zero_fill_or_truncate(&Fid::new(s, 1.0 / bw).unwrap(), fill).unwrap();
        fwhm_hz(&fft_fid(&fid, &axis, Acquisition::Off).unwrap().real(), bw / fill as f64)
    };
    let mut worst = 0.0f64;
    for (extra, target) in [(vec![1.0], 1.0), (vec![3.0], 3.0), (vec![8.0], 8.0), (vec![2.0, 4.0], 6.0), (vec![1.0, 1.5, 2.5], 5.0)] {
        worst = worst.max((line(&extra) - target).abs() / target);
    }
    (worst < 0.05, format!("apodization FWHM {:.2}%", 100.0 * worst))
}

fn preprocessing_jain() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut worst = 0.0f64;
    for n in [512usize, 2048] {
        let axis = PpmAxis::with_defaults(n, 2000.0).unwrap();
        for _ in 0..100 {
            let bin = rng.random_range(n as f64 * 0.25..n as f64 * 0.75);
            let s = fft_fid(&exp_fid(n, axis.dwell_time(), axis.hz(bin)), &axis, Acquisition::Off).unwrap();
            let (hi, lo) = (axis.ppm(bin.round() - 10.0), axis.ppm(bin.round() + 10.0));
            let est = megaquant::preprocess::jain_peak_location(&s, hi, lo).unwrap();
            worst = worst.max((est - bin).abs());
        }
    }
    (worst <= 0.05, format!("Jain worst {worst:.1e} bin"))
}

fn shifted(set: &AcquisitionSet, hz: f64) -> AcquisitionSet {
    let move_it = |acq: Acquisition| {
        let s = set.get(acq).unwrap();
        let fid = s.to_fid();
        let dt = fid.dwell_time();
        let v = fid
            .samples()
            .iter()
            .enumerate()
            .map(|(t, x)| x * C64::from_polar(1.0, 2.0 * std::f64::consts::PI * hz * t as f64 * dt))
            .collect();
        fft_fid(&Fid::new(v, dt).unwrap(), s.axis(), acq).unwrap()
    };
    AcquisitionSet::from_off_on(move_it(Acquisition::Off), move_it(Acquisition::On)).unwrap()
}

fn mixtures(basis: &BasisSet) -> Vec<AcquisitionSet> {
    [[0.8, 0.6, 0.4, 0.5, 0.3], [1.0, 0.9, 0.2, 0.7, 0.6], [0.6, 1.0, 0.5, 0.3, 0.2]]
        .iter()
        .map(|c| mix_spectrum(basis, &ConcentrationVector::new(c.to_vec()).unwrap(), 4.0).unwrap())
        .collect()
}

fn basis_at(bw: f64) -> BasisSet {
    generate_lorentzian_basis(&default_peak_table(), 2.0, &PpmAxis::with_defaults(2048, bw).unwrap()).unwrap()
}

fn preprocessing_alignment() -> (bool, String) {
    let basis = basis_at(2000.0);
    let cfg = ExportConfig::new([Acquisition::Off, Acquisition::On], [DataType::Real], TargetNorm::Sum).with_points(512);
    let bin = (cfg.ppm_band[0] - cfg.ppm_band[1]) / (cfg.n_points - 1) as f64;
    let sf = basis.axis().spectrometer_freq();
    let mut worst = 0.0f64;
    for m in mixtures(&basis) {
        let reference = preprocess(&m, &cfg).unwrap().1.b0.unwrap().shift_ppm;
        for k in -4..=4 {
            let delta = 0.025 * k as f64;
            // a positive frequency offset lowers ppm, so this raises lines by delta
            let est = preprocess(&shifted(&m, -delta * sf), &cfg).unwrap().1.b0.unwrap().shift_ppm;
            worst = worst.max((est - reference + delta).abs() / bin);
        }
    }
    (worst < 1.0, format!("B0 residual {worst:.3} bin"))
}

fn preprocessing_dual_bandwidth() -> (bool, String) {
    let c = ExportConfig::new(Acquisition::ALL, DataType::ALL, TargetNorm::Sum);
    let mut worst = 0.0f64;
    for (a, b) in mixtures(&basis_at(2000.0)).iter().zip(mixtures(&basis_at(1250.0)).iter()) {
        let ea = export_input(&preprocess(a, &c).unwrap().0, &c).unwrap();
        let eb = export_input(&preprocess(b, &c).unwrap().0, &c).unwrap();
        let peak = ea.channels.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dev = ea.channels.iter().zip(&eb.channels).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(dev / peak);
    }
    (worst < 0.02, format!("dual bandwidth {:.2}% of peak", 100.0 * worst))
}

fn criterion_8() -> Outcome {
    let parts = [
        preprocessing_fft(),
        preprocessing_apodization(),
        preprocessing_jain(),
        preprocessing_alignment(),
        preprocessing_dual_bandwidth(),
    ];
    check(
        parts.iter().all(|p| p.0),
        parts.iter().map(|p| format!("{}{}", p.1, if p.0 { "" } else { " (FAIL)" })).collect::<Vec<_>>().join("; "),
    )
}

// ---------------------------------------------------------------- 9

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_megaquant"))
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();
    let cfg = json!({
        "basis": {"fwhm": 2.0, "axis": {"n_points": 1024, "bandwidth": 2000.0}},
        "synthesis": {"n_samples": 40, "noise_sigma_range": [0.0, 0.03], "linewidth_mode": {"fixed": 2.0},
                      "master_seed": 3, "sobol_skip": 1},
        "model": {"architecture": "yae", "l_e": 3, "l_d": 3, "l_q": 2, "n_q": 16, "a_e": "tanh", "a_d": "tanh",
                  "a_q": "sigmoid", "a_m": "sigmoid", "d_e": 0.2, "batch_size": 8,
                  "export": {"n_points": 64, "acquisitions": ["off", "on"], "datatypes": ["real"], "target_norm": "sum"}},
        "training": {"epochs": 3, "seed": 5},
        "selection": {"budget": {"max_evaluations": 5, "init_design": 2}, "folds": 2, "epochs": 1}
    });
    let space = json!({"dimensions": [
        {"name": "n_q", "kind": "ordinal", "values": [8, 16, 32], "target": "/n_q"},
        {"name": "a_q", "kind": "categorical", "values": ["relu", "sigmoid"], "target": "/a_q"}
    ]});
    let (cfg_path, space_path) = (d.join("run.json"), d.join("space.json"));
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    std::fs::write(&space_path, space.to_string()).unwrap();
    let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in 0..2 {
        let p = |name: &str| d.join(format!("{run}-{name}"));
        let (data, model, ledger, best) = (p("data.mqd"), p("model.json"), p("ledger.csv"), p("best.json"));
        run_cli(&["generate", "--config", &s(&cfg_path), "--out", &s(&data), "--seed", "11"]);
        run_cli(&["train", "--config", &s(&cfg_path), "--data", &s(&data), "--out", &s(&model), "--seed", "12"]);
        run_cli(&[
            "select", "--config", &s(&cfg_path), "--space", &s(&space_path), "--data", &s(&data),
            "--ledger", &s(&ledger), "--out", &s(&best), "--seed", "13",
        ]);
        let log = PathBuf::from(format!("{}.log.csv", s(&model)));
        outputs.push([&data, &model, &log, &ledger, &best].iter().map(|f| std::fs::read(f).unwrap()).collect());
    }
    let names = ["generate archive", "train checkpoint", "training log", "select ledger", "select result"];
    let differing: Vec<&str> = names.iter().zip(outputs[0].iter().zip(&outputs[1])).filter(|(_, (a, b))| a != b).map(|(n, _)| *n).collect();
    check(
        differing.is_empty(),
        if differing.is_empty() {
            "generate, train and select outputs bit-identical across two runs".into()
        } else {
            format!("differing outputs: {differing:?}")
        },
    )
}

// ---------------------------------------------------------------- runner

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let criteria: Vec<(usize, &str, Box<dyn FnMut(&mut Shared) -> Outcome>)> = vec![
        (1, "LLS oracle closure", Box::new(|_| criterion_1())),
        (2, "gradient correctness", Box::new(|_| criterion_2())),
        (5, "BO efficiency", Box::new(|_| criterion_5())),
        (6, "GP/EI oracle equivalence", Box::new(|_| criterion_6())),
        (7, "Wilcoxon exactness", Box::new(|_| criterion_7())),
        (8, "preprocessing contracts", Box::new(|_| criterion_8())),
        (9, "CLI determinism", Box::new(|_| criterion_9())),
        (3, "scaled simulation benchmark", Box::new(criterion_3)),
        (4, "linewidth-augmentation robustness", Box::new(criterion_4)),
    ];
    let mut failed = 0;
    for (id, name, mut f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut shared)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id} ({name}): PASS  {d}  [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL  {d}  [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
