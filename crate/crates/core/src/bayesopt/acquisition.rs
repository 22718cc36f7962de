use std::collections::HashSet;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::gp::GpState;
use super::optim::minimize;
use super::space::{Config, ConfigSpace};
use crate::error::{Error, Result};

/// Spaces up to this size are enumerated exhaustively for candidate sets.
pub const EXHAUSTIVE_LIMIT: usize = 4096;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Expected improvement below `incumbent` for a normal predictive
/// distribution with mean `mu` and standard deviation `sigma`.
pub fn expected_improvement_from(mu: f64, sigma: f64, incumbent: f64) -> f64 {
    if !(sigma > 0.0) {
        return 0.0;
    }
    let n = std_normal();
    let z = (incumbent - mu) / sigma;
    ((incumbent - mu) * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

/// Expected improvement of the GP posterior at encoded point `x`.
pub fn expected_improvement(gp: &GpState, x: &[f64], incumbent: f64) -> f64 {
    let (mu, var) = gp.predict(x);
    expected_improvement_from(mu, var.sqrt(), incumbent)
}

/// EI and its gradient with respect to `x`.
fn ei_with_grad(gp: &GpState, x: &[f64], incumbent: f64) -> (f64, Vec<f64>) {
    let (mu, var, dmu, dvar) = gp.predict_with_grad(x);
    let sigma = var.sqrt();
    if !(sigma > 1e-12) {
        return (0.0, vec![0.0; x.len()]);
    }
    let n = std_normal();
    let z = (incumbent - mu) / sigma;
    let (cdf, pdf) = (n.cdf(z), n.pdf(z));
    let ei = (incumbent - mu) * cdf + sigma * pdf;
    // dEI/dmu = -cdf, dEI/dsigma = pdf, dsigma = dvar / (2 sigma)
    let g = dmu
        .iter()
        .zip(&dvar)
        .map(|(m, v)| -cdf * m + pdf * v / (2.0 * sigma))
        .collect();
    (ei, g)
}

/// Lowest observed objective value.
pub fn incumbent(gp: &GpState) -> f64 {
    gp.y.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub config: Config,
    pub ei: f64,
    pub mean: f64,
    /// Set when no gradient start produced a usable candidate and the
    /// proposal came from the random-grid fallback.
    pub fallback: bool,
}

fn better(a: (f64, f64, &Config), b: (f64, f64, &Config)) -> bool {
    // higher EI, then lower mean, then lexicographically smaller
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1 != b.1 {
        return a.1 < b.1;
    }
    a.2 < b.2
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(x: f64) -> f64 {
    let x = x.clamp(1e-4, 1.0 - 1e-4);
    (x / (1.0 - x)).ln()
}

/// Candidate configurations: every unevaluated configuration of a small
/// space, otherwise `count` seeded random ones.
pub fn candidate_set(space: &ConfigSpace, exclude: &HashSet<Config>, count: usize, rng: &mut ChaCha8Rng) -> Vec<Config> {
    if space.size() <= EXHAUSTIVE_LIMIT {
        return space.all_configs().into_iter().filter(|c| !exclude.contains(c)).collect();
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < count && attempts < count * 20 {
        attempts += 1;
        let c = random_config(space, rng);
        if !exclude.contains(&c) && seen.insert(c.clone()) {
            out.push(c);
        }
    }
    out
}

pub(crate) fn random_config(space: &ConfigSpace, rng: &mut ChaCha8Rng) -> Config {
    space.dimensions.iter().map(|d| rng.random_range(0..d.values.len())).collect()
}

/// Maximise EI over the continuous relaxation of `space` from `restarts`
/// seeded starts plus the incumbent, round to configurations, and refine
/// each by discrete hill climbing. Configurations in `exclude` are never
/// proposed. Returns `None` once every configuration is excluded.
pub fn propose_ei(
    gp: &GpState,
    space: &ConfigSpace,
    restarts: usize,
    seed: u64,
    exclude: &HashSet<Config>,
) -> Result<Option<Proposal>> {
    if exclude.len() >= space.size() {
        return Ok(None);
    }
    let inc = incumbent(gp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = space.encoded_len();

    let mut starts: Vec<Vec<f64>> = (0..restarts)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    if let Some(best) = gp
        .y
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| gp.x[i].clone())
    {
        starts.push(best);
    }

    let score = |c: &Config| -> Result<(f64, f64)> {
        let x = space.encode(c)?;
        let (mu, var) = gp.predict(&x);
        Ok((expected_improvement_from(mu, var.sqrt(), inc), mu))
    };

    let mut best: Option<Proposal> = None;
    let consider = |c: Config, ei: f64, mean: f64, best: &mut Option<Proposal>| {
        if best.as_ref().is_none_or(|b| better((ei, mean, &c), (b.ei, b.mean, &b.config))) {
            *best = Some(Proposal {
                config: c,
                ei,
                mean,
                fallback: false,
            });
        }
    };

    for x0 in starts {
        let u0: Vec<f64> = x0.iter().map(|&x| logit(x)).collect();
        let f = |u: &[f64]| {
            let x: Vec<f64> = u.iter().map(|&v| sigmoid(v)).collect();
            let (ei, g) = ei_with_grad(gp, &x, inc);
            let gu = g.iter().zip(&x).map(|(g, s)| -g * s * (1.0 - s)).collect();
            (-ei, gu)
        };
        let (u, _) = minimize(f, u0, 50);
        let x: Vec<f64> = u.iter().map(|&v| sigmoid(v)).collect();
        let mut c = space.decode(&x)?;
        let mut cur = if exclude.contains(&c) { None } else { Some(score(&c)?) };
        // discrete hill climb to a local EI maximum among unevaluated configs
        loop {
            let mut step: Option<(Config, (f64, f64))> = None;
            for n in space.neighbours(&c) {
                if exclude.contains(&n) {
                    continue;
                }
                let s = score(&n)?;
                let beats_cur = cur.is_none_or(|(e, m)| better((s.0, s.1, &n), (e, m, &c)));
                let beats_step = step.as_ref().is_none_or(|(sc, (e, m))| better((s.0, s.1, &n), (*e, *m, sc)));
                if beats_cur && beats_step {
                    step = Some((n, s));
                }
            }
            match step {
                Some((n, s)) => {
                    c = n;
                    cur = Some(s);
                }
                None => break,
            }
        }
        if let Some((ei, mean)) = cur {
            consider(c, ei, mean, &mut best);
        }
    }

    if best.is_none() {
        log::warn!("EI gradient starts gave no candidate; using random-grid fallback");
        for c in candidate_set(space, exclude, 1000, &mut rng) {
            let (ei, mean) = score(&c)?;
            consider(c, ei, mean, &mut best);
        }
        if let Some(b) = &mut best {
            b.fallback = true;
        }
    }
    Ok(best)
}

/// Draw one joint posterior sample over the candidate set and return its
/// minimiser. Returns `None` once every configuration is excluded.
pub fn propose_thompson(
    gp: &GpState,
    space: &ConfigSpace,
    candidate_count: usize,
    seed: u64,
    exclude: &HashSet<Config>,
) -> Result<Option<Config>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = candidate_set(space, exclude, candidate_count, &mut rng);
    if candidates.is_empty() {
        return Ok(None);
    }
    let points = candidates.iter().map(|c| space.encode(c)).collect::<Result<Vec<_>>>()?;
    let (mean, cov) = gp.joint(&points);
    let l = factor_with_escalation(&cov)?;
    let z = DVector::from_iterator(candidates.len(), (0..candidates.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let sample = mean + l * z;
    let (i, _) = sample
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    Ok(Some(candidates[i].clone()))
}

fn factor_with_escalation(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let mut jitter = 1e-10;
    while jitter <= 1e-4 {
        let mut m = cov.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok(c.unpack());
        }
        jitter *= 10.0;
    }
    Err(Error::Conditioning {
        what: "posterior covariance for Thompson sampling".into(),
        condition: f64::INFINITY,
    })
}
