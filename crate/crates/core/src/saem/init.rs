//! Starting points for the SAEM chain.

use crate::error::{Error, Result};
use crate::likelihood::{patient_sq_residuals, LatentState};
use crate::model::{
    IndividualEffects, LatentFixedEffects, LongitudinalFixed, PatientRecord, PopulationParams,
    SurvivalFixed,
};
use crate::optim::{golden_section, nelder_mead};

use super::sampler::{Mode, Sampler};
use super::{InitStrategy, SaemConfig};

const INIT_SIGMA_XI: f64 = 0.5;
const MIN_INIT_SIGMA_TAU: f64 = 0.05;
const ALIGNMENT_ROUNDS: usize = 3;
const TAU_SEARCH_HALF_WIDTH: f64 = 10.0;
const MAP_ROUNDS: usize = 3;
const RIDGE_HALF_WIDTH: f64 = 3.0;
const RIDGE_GRID: usize = 120;

/// A feasible latent state and matching model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub latent: LatentState,
    pub params: PopulationParams,
}

/// Builds the starting point selected by `config.init`.
///
/// With [`InitStrategy::LongitudinalPrefit`] a longitudinal-only chain is run
/// from the moment initializer first. Either way every observed event ends
/// with `psi(t_e) > t0` and the Weibull parameters come from a marginal fit
/// of the latent event ages.
pub fn initialize(records: &[PatientRecord], config: &SaemConfig) -> Result<InitialState> {
    let mut init = moment_init(records, config)?;
    if let InitStrategy::LongitudinalPrefit { iterations } = config.init {
        if iterations > 0 {
            let mut pre = config.clone();
            pre.n_iterations = iterations;
            pre.n_rm_iterations = 0;
            pre.seed = config.seed ^ 0x9e37_79b9_7f4a_7c15;
            let mut sampler = Sampler::from_state(records, &pre, Mode::LongitudinalOnly, init)?;
            sampler.run_to_end();
            init = sampler.current_state();
        }
    }
    finish_survival_init(records, &mut init, config.feasibility_margin);
    Ok(init)
}

/// Moment-based start.
///
/// A pooled logistic fit with per-patient time alignment is refined by a few
/// rounds of per-patient MAP fits of `(xi, tau)` alternating with pooled
/// refits. The position of the reference time along the curve, which the
/// longitudinal data barely constrain, is then chosen by maximizing the
/// time-shift prior and the Weibull likelihood jointly.
pub fn moment_init(records: &[PatientRecord], config: &SaemConfig) -> Result<InitialState> {
    let n_visits: usize = records.iter().map(|r| r.visits.len()).sum();
    if records.is_empty() || n_visits == 0 {
        return Err(Error::Input(
            "initialization needs at least one patient with one visit".into(),
        ));
    }
    let mean_time =
        records.iter().flat_map(|r| r.visits.iter().map(|v| v.time)).sum::<f64>() / n_visits as f64;
    let mean_value =
        records.iter().flat_map(|r| r.visits.iter().map(|v| v.value)).sum::<f64>() / n_visits as f64;

    let mut effects: Vec<IndividualEffects> =
        records.iter().map(|_| IndividualEffects::new(0.0, mean_time)).collect();
    let clamped = mean_value.clamp(0.02, 0.98);
    let mut long = LongitudinalFixed {
        g: ((1.0 - clamped) / clamped).clamp(0.05, 50.0),
        v0: 0.2,
        t0: mean_time,
    };

    for _ in 0..ALIGNMENT_ROUNDS {
        long = fit_pooled_curve(records, &effects, long);
        for (r, e) in records.iter().zip(effects.iter_mut()) {
            if r.visits.is_empty() {
                continue;
            }
            let first = r.visits[0].time;
            let last = r.visits[r.visits.len() - 1].time;
            e.tau = golden_section(
                |tau| patient_sq_residuals(r, &IndividualEffects::new(0.0, tau), &long),
                first - TAU_SEARCH_HALF_WIDTH,
                last + TAU_SEARCH_HALF_WIDTH,
                1e-6,
            );
        }
    }
    long = fit_pooled_curve(records, &effects, long);

    let mut m = Moments::of(records, &effects, &long, INIT_SIGMA_XI);
    for _ in 0..MAP_ROUNDS {
        for (r, e) in records.iter().zip(effects.iter_mut()) {
            if !r.visits.is_empty() {
                *e = patient_map(r, *e, &long, &m);
            }
        }
        let c = effects.iter().map(|e| e.xi).sum::<f64>() / effects.len() as f64;
        for e in effects.iter_mut() {
            e.xi -= c;
        }
        long.v0 *= c.exp();
        long = fit_pooled_curve(records, &effects, long);
        m = Moments::of(records, &effects, &long, m.sigma_xi);
        m.sigma_xi = std_of(effects.iter().map(|e| e.xi)).clamp(0.05, 2.0);
    }

    let shift = best_reference_shift(records, &effects, &long);
    if shift != 0.0 {
        log::debug!("moving the reference point by {shift:.4} along the curve");
        for e in effects.iter_mut() {
            e.tau -= shift * (-e.xi).exp();
        }
        let r = long.rate();
        long.g *= (r * shift).exp();
        long.v0 = r * long.g / ((long.g + 1.0) * (long.g + 1.0));
        m = Moments::of(records, &effects, &long, m.sigma_xi);
    }
    long.t0 = m.tau_mean;

    let surv = SurvivalFixed { nu: 1.0, rho: 1.0 };
    let fixed = LatentFixedEffects::from_natural(&long, &surv);
    let params = PopulationParams {
        t0: m.tau_mean,
        sigma_tau: m.sigma_tau,
        sigma_xi: m.sigma_xi,
        mean_xi: 0.0,
        mean_g_tilde: fixed.g_tilde,
        mean_v0_tilde: fixed.v0_tilde,
        mean_nu_tilde: fixed.nu_tilde,
        mean_rho_tilde: fixed.rho_tilde,
        sigma: m.sigma,
    };
    let mut init = InitialState {
        latent: LatentState { fixed, effects },
        params,
    };
    finish_survival_init(records, &mut init, config.feasibility_margin);
    Ok(init)
}

fn std_of(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Summary moments of the current alignment.
struct Moments {
    tau_mean: f64,
    sigma_tau: f64,
    sigma_xi: f64,
    sigma: f64,
}

impl Moments {
    fn of(
        records: &[PatientRecord],
        effects: &[IndividualEffects],
        long: &LongitudinalFixed,
        sigma_xi: f64,
    ) -> Self {
        let n_visits: usize = records.iter().map(|r| r.visits.len()).sum();
        let ss: f64 = records
            .iter()
            .zip(effects)
            .map(|(r, e)| patient_sq_residuals(r, e, long))
            .sum();
        let n = effects.len() as f64;
        Self {
            tau_mean: effects.iter().map(|e| e.tau).sum::<f64>() / n,
            sigma_tau: std_of(effects.iter().map(|e| e.tau)).max(MIN_INIT_SIGMA_TAU),
            sigma_xi,
            sigma: (ss / n_visits as f64).sqrt().max(1e-4),
        }
    }
}

/// MAP of one patient's `(xi, tau)` under the current moments.
fn patient_map(
    r: &PatientRecord,
    start: IndividualEffects,
    long: &LongitudinalFixed,
    m: &Moments,
) -> IndividualEffects {
    let inv = 1.0 / (2.0 * m.sigma * m.sigma);
    let f = |p: &[f64]| {
        let e = IndividualEffects::new(p[0], p[1]);
        let a = p[0] / m.sigma_xi;
        let b = (p[1] - m.tau_mean) / m.sigma_tau;
        patient_sq_residuals(r, &e, long) * inv + 0.5 * (a * a + b * b)
    };
    let best = nelder_mead(&f, &[start.xi, start.tau], &[0.1, 0.2], 1e-10, 500);
    IndividualEffects::new(best.x[0], best.x[1])
}

/// Shift `c` of the latent disease age that maximizes the time-shift prior
/// and the Weibull fit once every `tau_i` moves to `tau_i - c exp(-xi_i)`.
/// That move leaves the longitudinal fit unchanged given matching `(g, v0)`.
fn best_reference_shift(
    records: &[PatientRecord],
    effects: &[IndividualEffects],
    _long: &LongitudinalFixed,
) -> f64 {
    let x: Vec<(f64, bool)> = records
        .iter()
        .zip(effects)
        .map(|(r, e)| (e.xi.exp() * (r.event_time - e.tau), r.event_observed))
        .collect();
    let lowest_event = x
        .iter()
        .filter(|(_, o)| *o)
        .map(|(v, _)| *v)
        .fold(f64::INFINITY, f64::min);
    let objective = |c: f64| -> f64 {
        if lowest_event.is_finite() && lowest_event + c <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let tau_sd = std_of(effects.iter().map(|e| e.tau - c * (-e.xi).exp()));
        let shifted: Vec<(f64, bool)> = x.iter().map(|(v, o)| (v + c, *o)).collect();
        let n = effects.len() as f64;
        -n * tau_sd.max(MIN_INIT_SIGMA_TAU).ln() + weibull_loglik(&shifted, &fit_weibull(&shifted))
    };
    let lo = if lowest_event.is_finite() {
        (-lowest_event + 1e-3).max(-RIDGE_HALF_WIDTH)
    } else {
        -RIDGE_HALF_WIDTH
    };
    let hi = RIDGE_HALF_WIDTH;
    if lo >= hi {
        return 0.0;
    }
    let grid: Vec<f64> = (0..=RIDGE_GRID).map(|k| lo + (hi - lo) * k as f64 / RIDGE_GRID as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&c| objective(c)).collect();
    let (k, best) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    if !best.is_finite() {
        return 0.0;
    }
    let a = grid[k.saturating_sub(1)];
    let b = grid[(k + 1).min(RIDGE_GRID)];
    let c = golden_section(|c| -objective(c), a, b, 1e-6);
    if objective(c) >= best { c } else { grid[k] }
}

/// Censored Weibull log-likelihood of latent event ages; entries with
/// `x <= 0` contribute nothing.
pub fn weibull_loglik(samples: &[(f64, bool)], surv: &SurvivalFixed) -> f64 {
    samples
        .iter()
        .filter(|(x, _)| *x > 0.0)
        .map(|&(x, obs)| {
            let z = x / surv.nu;
            let log_s = -z.powf(surv.rho);
            if obs {
                surv.rho.ln() - surv.nu.ln() + (surv.rho - 1.0) * z.ln() + log_s
            } else {
                log_s
            }
        })
        .sum()
}

/// Least-squares fit of `(g, v0)` with the random effects held fixed.
fn fit_pooled_curve(
    records: &[PatientRecord],
    effects: &[IndividualEffects],
    start: LongitudinalFixed,
) -> LongitudinalFixed {
    let t0 = start.t0;
    let sse = |p: &[f64]| {
        let long = LongitudinalFixed {
            g: p[0].exp(),
            v0: p[1].exp(),
            t0,
        };
        records
            .iter()
            .zip(effects)
            .map(|(r, e)| patient_sq_residuals(r, e, &long))
            .sum::<f64>()
    };
    let m = nelder_mead(&sse, &[start.g.ln(), start.v0.ln()], &[0.3, 0.3], 1e-12, 2000);
    LongitudinalFixed {
        g: m.x[0].exp(),
        v0: m.x[1].exp(),
        t0,
    }
}

/// Shifts `tau_i` of every observed event with `psi(t_e) - t0 < margin` so that
/// `psi(t_e) = t0 + margin`. Returns the number of repaired patients.
pub fn repair_feasibility(records: &[PatientRecord], latent: &mut LatentState, margin: f64) -> usize {
    let mut repaired = 0;
    for (r, e) in records.iter().zip(latent.effects.iter_mut()) {
        if !r.event_observed {
            continue;
        }
        if e.xi.exp() * (r.event_time - e.tau) < margin {
            e.tau = r.event_time - margin * (-e.xi).exp();
            repaired += 1;
        }
    }
    repaired
}

/// Censored Weibull MLE on latent event ages `x_i = psi_i(t_e) - t0`.
///
/// Patients with `x_i <= 0` carry no survival information and are skipped.
/// Without any event the MLE does not exist and a flat `(nu, rho) = (10, 1)`
/// is returned.
pub fn fit_weibull(samples: &[(f64, bool)]) -> SurvivalFixed {
    let pos: Vec<(f64, bool)> = samples.iter().copied().filter(|(x, _)| *x > 0.0).collect();
    let d = pos.iter().filter(|(_, obs)| *obs).count() as f64;
    if d == 0.0 {
        log::warn!("no observed events to initialize the Weibull fit; using nu=10, rho=1");
        return SurvivalFixed { nu: 10.0, rho: 1.0 };
    }
    let sum_log_events: f64 = pos.iter().filter(|(_, o)| *o).map(|(x, _)| x.ln()).sum();
    let scale_pow = |rho: f64| pos.iter().map(|(x, _)| x.powf(rho)).sum::<f64>() / d;
    let neg_profile = |log_rho: f64| {
        let rho = log_rho.exp();
        let nu_rho = scale_pow(rho);
        -(d * rho.ln() - d * nu_rho.ln() + (rho - 1.0) * sum_log_events - d)
    };
    let log_rho = golden_section(neg_profile, (0.05f64).ln(), (20.0f64).ln(), 1e-9);
    let rho = log_rho.exp();
    SurvivalFixed {
        nu: scale_pow(rho).powf(1.0 / rho),
        rho,
    }
}

fn finish_survival_init(records: &[PatientRecord], init: &mut InitialState, margin: f64) {
    let repaired = repair_feasibility(records, &mut init.latent, margin);
    if repaired > 0 {
        log::debug!("feasibility repair moved tau for {repaired} patients");
    }
    let samples: Vec<(f64, bool)> = records
        .iter()
        .zip(&init.latent.effects)
        .map(|(r, e)| (e.xi.exp() * (r.event_time - e.tau), r.event_observed))
        .collect();
    let surv = fit_weibull(&samples);
    init.latent.fixed.nu_tilde = -surv.nu.ln();
    init.latent.fixed.rho_tilde = surv.rho.ln();
    init.params.mean_nu_tilde = init.latent.fixed.nu_tilde;
    init.params.mean_rho_tilde = init.latent.fixed.rho_tilde;
}
