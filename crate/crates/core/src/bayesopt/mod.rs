//! Bayesian model selection over discrete hyperparameter spaces.

pub mod acquisition;
pub mod gp;
pub mod ledger;
mod optim;
pub mod space;

#[cfg(test)]
mod tests;

use std::collections::HashSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use acquisition::{expected_improvement, expected_improvement_from, propose_ei, propose_thompson, Proposal};
pub use gp::{gp_fit, gp_fit_with, GpState, KernelParams};
pub use space::{Config, ConfigSpace, Dimension, DimensionKind};

use crate::error::{config, Result};
use crate::sobol::{Sobol, MAX_DIMENSION};
use crate::synthesis::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoBudget {
    pub max_evaluations: usize,
    /// Quasi-random evaluations before the surrogate takes over.
    pub init_design: usize,
    #[serde(default = "default_restarts")]
    pub ei_restarts: usize,
    /// Thompson candidate count for spaces too large to enumerate.
    #[serde(default = "default_candidates")]
    pub thompson_candidates: usize,
}

fn default_restarts() -> usize {
    20
}

fn default_candidates() -> usize {
    2000
}

impl BoBudget {
    pub fn new(max_evaluations: usize, init_design: usize) -> Result<Self> {
        let b = Self {
            max_evaluations,
            init_design,
            ei_restarts: default_restarts(),
            thompson_candidates: default_candidates(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_design < 2 {
            return Err(config("init_design must be at least 2"));
        }
        if self.max_evaluations <= self.init_design {
            return Err(config("max_evaluations must exceed init_design"));
        }
        if self.ei_restarts == 0 || self.thompson_candidates == 0 {
            return Err(config("ei_restarts and thompson_candidates must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    Init,
    Ei,
    /// EI from the random-grid fallback.
    EiFallback,
    Thompson,
    /// Uniform random pick, used while fewer than two evaluations succeeded
    /// or when the surrogate could not be fitted.
    Random,
}

impl Acquisition {
    pub fn as_str(self) -> &'static str {
        match self {
            Acquisition::Init => "init",
            Acquisition::Ei => "ei",
            Acquisition::EiFallback => "ei_fallback",
            Acquisition::Thompson => "thompson",
            Acquisition::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "init" => Acquisition::Init,
            "ei" => Acquisition::Ei,
            "ei_fallback" => Acquisition::EiFallback,
            "thompson" => Acquisition::Thompson,
            "random" => Acquisition::Random,
            _ => return None,
        })
    }
}

/// Result of one objective evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub fold_maes: Vec<f64>,
    pub mean: f64,
}

impl Evaluation {
    pub fn scalar(v: f64) -> Self {
        Self {
            fold_maes: vec![v],
            mean: v,
        }
    }

    pub fn from_folds(fold_maes: Vec<f64>) -> Self {
        let mean = fold_maes.iter().sum::<f64>() / fold_maes.len() as f64;
        Self { fold_maes, mean }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub acquisition: Acquisition,
    pub config: Config,
    pub encoded: Vec<f64>,
    pub fold_maes: Vec<f64>,
    /// NaN for failed evaluations.
    pub mean: f64,
    /// `None` on success, otherwise the failure message.
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl TraceEntry {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.mean.is_finite()
    }
}

#[derive(Clone, Debug)]
pub struct Selection {
    /// Evaluated configuration with the lowest mean, `None` if every
    /// evaluation failed.
    pub best: Option<Config>,
    pub best_mean: f64,
    pub trace: Vec<TraceEntry>,
}

impl Selection {
    /// Lowest mean seen after each evaluation (NaN until the first success).
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NAN;
        self.trace
            .iter()
            .map(|e| {
                if e.succeeded() && !(e.mean >= best) {
                    best = e.mean;
                }
                best
            })
            .collect()
    }
}

/// Distinct configurations from a digitally shifted Sobol sequence, one
/// coordinate per dimension, topped up with seeded random draws.
pub fn initial_design(space: &ConfigSpace, count: usize, seed: u64) -> Result<Vec<Config>> {
    let count = count.min(space.size());
    let mut out: Vec<Config> = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    let n = space.n_dims();
    if n <= MAX_DIMENSION {
        let sobol = Sobol::new(n)?;
        let shift: Vec<u32> = (0..n).map(|d| derive_seed(seed, d as u64) as u32).collect();
        for index in 0..(count as u64 * 64).max(64) {
            if out.len() == count {
                break;
            }
            let c: Config = sobol
                .point_bits(index)
                .iter()
                .zip(&shift)
                .zip(&space.dimensions)
                .map(|((b, s), d)| {
                    let u = (b ^ s) as f64 / 4_294_967_296.0;
                    ((u * d.values.len() as f64) as usize).min(d.values.len() - 1)
                })
                .collect();
            if seen.insert(c.clone()) {
                out.push(c);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    while out.len() < count {
        let c = acquisition::random_config(space, &mut rng);
        if seen.insert(c.clone()) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Budgeted Bayesian optimisation of `objective` over `space`.
pub fn select_model(
    space: &ConfigSpace,
    objective: impl FnMut(&Config) -> Result<Evaluation>,
    budget: &BoBudget,
    seed: u64,
) -> Result<Selection> {
    select_model_resume(space, objective, budget, seed, Vec::new(), |_| Ok(()))
}

/// As [`select_model`], continuing from a `prior` trace (for example one
/// read back from a ledger). `observer` sees each new entry as soon as it
/// is complete.
pub fn select_model_resume(
    space: &ConfigSpace,
    mut objective: impl FnMut(&Config) -> Result<Evaluation>,
    budget: &BoBudget,
    seed: u64,
    prior: Vec<TraceEntry>,
    mut observer: impl FnMut(&TraceEntry) -> Result<()>,
) -> Result<Selection> {
    space.validate()?;
    budget.validate()?;
    let mut trace = prior;
    let mut evaluated: HashSet<Config> = HashSet::new();
    for (i, e) in trace.iter().enumerate() {
        if e.iteration != i || !space.contains(&e.config) {
            return Err(config(format!("prior trace entry {i} does not belong to this search")));
        }
        if !evaluated.insert(e.config.clone()) {
            return Err(config(format!("prior trace repeats configuration {:?}", e.config)));
        }
    }
    let init = initial_design(space, budget.init_design, seed)?;
    let mut init_iter = init.into_iter();

    while trace.len() < budget.max_evaluations && evaluated.len() < space.size() {
        let iteration = trace.len();
        let iter_seed = derive_seed(seed, iteration as u64);
        let (c, acq) = if iteration < budget.init_design {
            match init_iter.by_ref().find(|c| !evaluated.contains(c)) {
                Some(c) => (c, Acquisition::Init),
                None => random_unevaluated(space, &evaluated, iter_seed),
            }
        } else {
            propose(space, &trace, &evaluated, budget, iteration, iter_seed)?
        };
        let encoded = space.encode(&c)?;
        let started = Instant::now();
        let outcome = objective(&c);
        let wall_time_s = started.elapsed().as_secs_f64();
        let entry = match outcome {
            Ok(ev) if ev.mean.is_finite() => TraceEntry {
                iteration,
                acquisition: acq,
                config: c.clone(),
                encoded,
                fold_maes: ev.fold_maes,
                mean: ev.mean,
                error: None,
                wall_time_s,
            },
            Ok(ev) => TraceEntry {
                iteration,
                acquisition: acq,
                config: c.clone(),
                encoded,
                fold_maes: ev.fold_maes,
                mean: f64::NAN,
                error: Some("non-finite objective".into()),
                wall_time_s,
            },
            Err(err) => {
                log::warn!("evaluation of {c:?} failed: {err}");
                TraceEntry {
                    iteration,
                    acquisition: acq,
                    config: c.clone(),
                    encoded,
                    fold_maes: Vec::new(),
                    mean: f64::NAN,
                    error: Some(err.to_string()),
                    wall_time_s,
                }
            }
        };
        log::info!(
            "iteration {iteration} [{}] {:?} -> {}",
            acq.as_str(),
            space.describe(&c),
            entry.mean
        );
        observer(&entry)?;
        evaluated.insert(c);
        trace.push(entry);
    }

    let best = trace
        .iter()
        .filter(|e| e.succeeded())
        .min_by(|a, b| a.mean.total_cmp(&b.mean).then_with(|| a.config.cmp(&b.config)));
    Ok(Selection {
        best: best.map(|e| e.config.clone()),
        best_mean: best.map_or(f64::NAN, |e| e.mean),
        trace,
    })
}

fn random_unevaluated(space: &ConfigSpace, evaluated: &HashSet<Config>, seed: u64) -> (Config, Acquisition) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cands = acquisition::candidate_set(space, evaluated, 1000, &mut rng);
    if cands.is_empty() {
        // a huge space where 1000 random draws all hit evaluated configs
        cands = space.all_configs().into_iter().filter(|c| !evaluated.contains(c)).take(1).collect();
    }
    let i = (derive_seed(seed, 1) % cands.len() as u64) as usize;
    (cands.swap_remove(i), Acquisition::Random)
}

fn propose(
    space: &ConfigSpace,
    trace: &[TraceEntry],
    evaluated: &HashSet<Config>,
    budget: &BoBudget,
    iteration: usize,
    seed: u64,
) -> Result<(Config, Acquisition)> {
    let ok: Vec<&TraceEntry> = trace.iter().filter(|e| e.succeeded()).collect();
    if ok.len() < 2 {
        return Ok(random_unevaluated(space, evaluated, seed));
    }
    let xs: Vec<Vec<f64>> = ok.iter().map(|e| e.encoded.clone()).collect();
    let ys: Vec<f64> = ok.iter().map(|e| e.mean).collect();
    let gp = match gp_fit(&xs, &ys) {
        Ok(gp) => gp,
        Err(e) => {
            log::warn!("surrogate fit failed ({e}); proposing at random");
            return Ok(random_unevaluated(space, evaluated, seed));
        }
    };
    let proposal = if iteration % 2 == 0 {
        propose_ei(&gp, space, budget.ei_restarts, seed, evaluated)?.map(|p| {
            let acq = if p.fallback { Acquisition::EiFallback } else { Acquisition::Ei };
            (p.config, acq)
        })
    } else {
        propose_thompson(&gp, space, budget.thompson_candidates, seed, evaluated)?.map(|c| (c, Acquisition::Thompson))
    };
    Ok(proposal.unwrap_or_else(|| random_unevaluated(space, evaluated, seed)))
}
