use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;

struct Problem<F> {
    f: F,
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> CostFunction for Problem<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<f64, argmin::core::Error> {
        Ok((self.f)(p).0)
    }
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Gradient for Problem<F> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Self::Param) -> Result<Vec<f64>, argmin::core::Error> {
        Ok((self.f)(p).1)
    }
}

/// Unconstrained L-BFGS minimisation of `f` (value and gradient) from
/// `x0`. Never fails: a solver error or non-finite result returns the best
/// point seen, which may be `x0` itself.
pub(crate) fn minimize(f: impl Fn(&[f64]) -> (f64, Vec<f64>), x0: Vec<f64>, max_iters: u64) -> (Vec<f64>, f64) {
    let f0 = f(&x0).0;
    let problem = Problem { f: &f };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7);
    let res = Executor::new(problem, solver)
        .configure(|s| s.param(x0.clone()).max_iters(max_iters))
        .timer(false)
        .run();
    match res {
        Ok(r) => {
            let st = r.state();
            match st.get_best_param() {
                Some(p) if st.get_best_cost().is_finite() && st.get_best_cost() <= f0 => (p.clone(), st.get_best_cost()),
                _ => (x0, f0),
            }
        }
        Err(e) => {
            log::debug!("L-BFGS stopped: {e}");
            (x0, f0)
        }
    }
}
