//! MAP personalization of new patients and the resulting predictions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{patient_longitudinal, patient_survival};
use crate::model::{
    log_survival, logistic_curve, Hyperparams, IndividualEffects, LatentFixedEffects,
    PatientRecord, PopulationParams,
};
use crate::optim::nelder_mead;
use crate::saem::FitResult;

const OBJECTIVE_TOL: f64 = 1e-8;
const MAX_SIMPLEX_ITERS: u64 = 5000;
/// Largest accepted gradient in units of the local curvature scale.
const STATIONARITY_TOL: f64 = 1e-3;

/// Fitted population model used for prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub params: PopulationParams,
    pub latent_fixed: LatentFixedEffects,
    pub hyper: Hyperparams,
}

impl From<&FitResult> for FittedModel {
    fn from(fit: &FitResult) -> Self {
        Self {
            params: fit.params,
            latent_fixed: fit.latent_fixed,
            hyper: fit.hyper,
        }
    }
}

impl FittedModel {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.latent_fixed.longitudinal(self.params.t0).validate()?;
        self.latent_fixed.survival().validate()?;
        self.hyper.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationResult {
    pub effects: IndividualEffects,
    /// Log-posterior of `(xi, tau)` at `effects`.
    pub map_objective: f64,
    pub converged: bool,
    pub n_evals: usize,
}

/// Log-posterior of the random effects of one patient: longitudinal and
/// survival attachments plus the random-effects prior. The event of
/// `record` is taken as given, so callers censor it beforehand.
pub fn log_posterior(record: &PatientRecord, model: &FittedModel, effects: IndividualEffects) -> f64 {
    let p = &model.params;
    let long = model.latent_fixed.longitudinal(p.t0);
    let surv = model.latent_fixed.survival();
    let a = (effects.xi - p.mean_xi) / p.sigma_xi;
    let b = (effects.tau - p.t0) / p.sigma_tau;
    let prior = -0.5 * (a * a + b * b)
        - (p.sigma_xi * p.sigma_tau).ln()
        - 2.0 * crate::likelihood::LN_SQRT_2PI;
    patient_longitudinal(record, &effects, &long, p.sigma)
        + patient_survival(record, &effects, &surv, p.t0)
        + prior
}

/// MAP estimate of `(xi, tau)` from the first `k` visits of `record`, with
/// the event censored at the last used visit.
///
/// Nelder-Mead runs from the prior mode `(0, t0)` and from a guess placing the
/// first visit on the population curve, then restarts from the better end
/// point. The fixed effects stay at their fitted values. Failure to converge
/// is reported through `converged`, never as an error.
pub fn personalize(record: &PatientRecord, k: usize, model: &FittedModel) -> Result<PersonalizationResult> {
    if k == 0 || record.visits.is_empty() {
        return Err(Error::Contract(format!(
            "patient {} needs at least one visit to personalize",
            record.id
        )));
    }
    model.validate()?;
    let used = record.truncated(k);
    let t0 = model.params.t0;
    let objective = |x: &[f64]| -log_posterior(&used, model, IndividualEffects::new(x[0], x[1]));
    let step = [0.5 * model.params.sigma_xi.max(0.05), 0.5 * model.params.sigma_tau.max(0.05)];

    let mut evals = 0;
    let mut best: Option<crate::optim::Minimum> = None;
    for start in [[model.params.mean_xi, t0], moment_guess(&used, model)] {
        let m = nelder_mead(&objective, &start, &step, OBJECTIVE_TOL, MAX_SIMPLEX_ITERS);
        evals += m.n_evals;
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let first = best.expect("two starts were run");
    let small = [step[0] * 0.1, step[1] * 0.1];
    let restart = nelder_mead(&objective, &first.x, &small, OBJECTIVE_TOL, MAX_SIMPLEX_ITERS);
    evals += restart.n_evals;
    let m = if restart.value <= first.value { restart } else { first };

    let effects = IndividualEffects::new(m.x[0], m.x[1]);
    let value = -m.value;
    let stationary = value.is_finite() && is_stationary(&objective, &m.x, m.value);
    Ok(PersonalizationResult {
        effects,
        map_objective: value,
        converged: m.converged && stationary,
        n_evals: evals,
    })
}

/// Personalizes every record on its first `k` visits, in parallel.
pub fn personalize_all(
    records: &[PatientRecord],
    k: usize,
    model: &FittedModel,
) -> Vec<Result<PersonalizationResult>> {
    records.par_iter().map(|r| personalize(r, k, model)).collect()
}

/// `xi = 0` and `tau` placing the first visit on the population curve.
fn moment_guess(record: &PatientRecord, model: &FittedModel) -> [f64; 2] {
    let long = model.latent_fixed.longitudinal(model.params.t0);
    let v = record.visits[0];
    let y = v.value.clamp(0.01, 0.99);
    // gamma0(psi) = y  <=>  psi - t0 = -ln((1/y - 1) / g) / rate
    let offset = -((1.0 / y - 1.0) / long.g).ln() / long.rate();
    [0.0, v.time - offset]
}

/// Central-difference gradient, scaled by the square root of the diagonal
/// curvature, is below [`STATIONARITY_TOL`] in every coordinate. The
/// difference step shrinks with the curvature so that the quadratic model
/// holds.
fn is_stationary<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64) -> bool {
    let probe = |i: usize, h: f64| {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        ((fp - fm) / (2.0 * h), (fp - 2.0 * fx + fm) / (h * h), fp.is_finite() && fm.is_finite())
    };
    for i in 0..x.len() {
        let mut h = 1e-4 * (1.0 + x[i].abs());
        let (_, rough, ok) = probe(i, h);
        if !ok {
            return false;
        }
        if rough > 0.0 {
            h = h.min(1e-2 / rough.sqrt()).max(1e-9);
        }
        let (grad, curv, ok) = probe(i, h);
        if !ok || curv <= 0.0 || grad.abs() / curv.sqrt() > STATIONARITY_TOL {
            return false;
        }
    }
    true
}

/// Noise-free score `gamma0(psi(t))` at each time.
pub fn predict_longitudinal(effects: IndividualEffects, model: &FittedModel, times: &[f64]) -> Vec<f64> {
    let t0 = model.params.t0;
    let long = model.latent_fixed.longitudinal(t0);
    times
        .iter()
        .map(|&t| logistic_curve(&long, effects.psi(t0, t)))
        .collect()
}

/// `S(h) / S(t_last)` for each horizon `h >= t_last`, clipped to `(0, 1]`.
pub fn predict_conditional_survival(
    effects: IndividualEffects,
    model: &FittedModel,
    t_last: f64,
    horizons: &[f64],
) -> Result<Vec<f64>> {
    let t0 = model.params.t0;
    let surv = model.latent_fixed.survival();
    let base = log_survival(&surv, t0, effects.psi(t0, t_last));
    if base.is_nan() || base.exp() == 0.0 {
        return Err(Error::Degenerate(format!(
            "survival at the conditioning time {t_last} is zero"
        )));
    }
    horizons
        .iter()
        .map(|&h| {
            if h < t_last {
                return Err(Error::Contract(format!(
                    "horizon {h} precedes the conditioning time {t_last}"
                )));
            }
            let ratio = (log_survival(&surv, t0, effects.psi(t0, h)) - base).exp();
            Ok(ratio.clamp(f64::MIN_POSITIVE, 1.0))
        })
        .collect()
}
