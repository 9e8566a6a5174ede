//! Small derivative-free minimizers used by initialization and MAP
//! personalization.

use std::cell::Cell;

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// The simplex met the tolerance before the iteration cap.
    pub converged: bool,
    pub n_evals: usize,
}

struct Objective<'a, F> {
    f: &'a F,
    evals: &'a Cell<usize>,
}

impl<F: Fn(&[f64]) -> f64> CostFunction for Objective<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<f64, argmin::core::Error> {
        self.evals.set(self.evals.get() + 1);
        let v = (self.f)(p);
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }
}

/// Nelder-Mead from `x0` with an axis-aligned initial simplex of edge `step`.
///
/// Stops when the std of the simplex values drops below `tol`.
pub fn nelder_mead<F>(f: &F, x0: &[f64], step: &[f64], tol: f64, max_iters: u64) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x0.len(), step.len());
    let mut simplex = vec![x0.to_vec()];
    for (i, s) in step.iter().enumerate() {
        let mut v = x0.to_vec();
        v[i] += s;
        simplex.push(v);
    }
    let evals = Cell::new(0);
    let problem = Objective { f, evals: &evals };
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(tol)
        .expect("tolerance must be non-negative");
    let run = Executor::new(problem, solver)
        .configure(|state| state.max_iters(max_iters))
        .run();
    match run {
        Ok(res) => {
            let state = res.state();
            let converged = matches!(
                state.get_termination_status(),
                TerminationStatus::Terminated(TerminationReason::SolverConverged)
            );
            let x = state.get_best_param().cloned().unwrap_or_else(|| x0.to_vec());
            let value = state.get_best_cost();
            Minimum {
                x,
                value,
                converged,
                n_evals: evals.get(),
            }
        }
        Err(e) => {
            log::warn!("nelder-mead aborted: {e}");
            Minimum {
                x: x0.to_vec(),
                value: f(x0),
                converged: false,
                n_evals: evals.get(),
            }
        }
    }
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}
