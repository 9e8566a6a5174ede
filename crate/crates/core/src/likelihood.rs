//! Complete-data log-likelihood, sufficient statistics and closed-form
//! maximization.
//!
//! The joint log-density splits into four terms: the Gaussian longitudinal
//! attachment, the Weibull survival attachment, the Gaussian prior of the
//! random effects and the Gaussian prior of the latent fixed effects. As a
//! curved exponential family it is also `-Phi(theta) + <S(y, z), f(theta)>`;
//! [`compute_stats`] produces `S` and [`stats_to_loglik`] rebuilds the
//! log-likelihood from `S` alone.
//!
//! The cross statistic `s2` stores `y * gamma0(psi)` with a positive sign, so
//! the residual sum of squares is `s1 - 2 s2 + s3`.
//!
//! Denominators of the variance updates are the MLE ones: the noise variance
//! is averaged over all visits and the time-shift variance over patients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    log_hazard, log_survival, logistic_curve, FixedEffect, Hyperparams, IndividualEffects,
    LatentFixedEffects, LongitudinalFixed, PatientRecord, PopulationParams, SurvivalFixed,
};

/// Default floor applied to every variance update.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-9;

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// All latent variables: the sampled fixed effects and one pair of random
/// effects per patient, aligned with the record slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub fixed: LatentFixedEffects,
    pub effects: Vec<IndividualEffects>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikTerms {
    pub longitudinal_attach: f64,
    pub survival_attach: f64,
    pub random_effects_prior: f64,
    pub fixed_effects_prior: f64,
    pub total: f64,
}

/// Patient and visit counts the statistics were computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_patients: usize,
    pub n_visits: usize,
}

impl Counts {
    pub fn of(records: &[PatientRecord]) -> Self {
        Self {
            n_patients: records.len(),
            n_visits: records.iter().map(|r| r.visits.len()).sum(),
        }
    }
}

/// Sufficient statistics. Per-visit vectors are flattened in record order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// `y^2` per visit.
    pub s1: Vec<f64>,
    /// `y * gamma0(psi)` per visit.
    pub s2: Vec<f64>,
    /// `gamma0(psi)^2` per visit.
    pub s3: Vec<f64>,
    /// Survival log-likelihood per patient.
    pub s4: Vec<f64>,
    pub s5: f64,
    pub s6: f64,
    pub s7: f64,
    pub s8: f64,
    pub s9: f64,
    pub s10: f64,
    pub s11: f64,
    pub s12: f64,
    /// `tau^2` per patient.
    pub s13: Vec<f64>,
    pub s14: Vec<f64>,
    /// `xi^2` per patient.
    pub s15: Vec<f64>,
    pub s16: Vec<f64>,
}

impl SufficientStats {
    /// Statistics of `fe`'s square and linear term, as `(square, linear)`.
    pub fn fixed_pair(&self, which: FixedEffect) -> (f64, f64) {
        match which {
            FixedEffect::G => (self.s5, self.s6),
            FixedEffect::V0 => (self.s7, self.s8),
            FixedEffect::Nu => (self.s9, self.s10),
            FixedEffect::Rho => (self.s11, self.s12),
        }
    }

    fn fixed_pair_mut(&mut self, which: FixedEffect) -> (&mut f64, &mut f64) {
        match which {
            FixedEffect::G => (&mut self.s5, &mut self.s6),
            FixedEffect::V0 => (&mut self.s7, &mut self.s8),
            FixedEffect::Nu => (&mut self.s9, &mut self.s10),
            FixedEffect::Rho => (&mut self.s11, &mut self.s12),
        }
    }

    pub fn check_counts(&self, counts: Counts) -> Result<()> {
        let visit_ok = [&self.s1, &self.s2, &self.s3]
            .iter()
            .all(|v| v.len() == counts.n_visits);
        let patient_ok = [&self.s4, &self.s13, &self.s14, &self.s15, &self.s16]
            .iter()
            .all(|v| v.len() == counts.n_patients);
        if visit_ok && patient_ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "statistics shapes do not match {} patients / {} visits",
                counts.n_patients, counts.n_visits
            )))
        }
    }

    /// Residual sum of squares `sum(s1 - 2 s2 + s3)`.
    pub fn residual_ss(&self) -> f64 {
        self.s1
            .iter()
            .zip(&self.s2)
            .zip(&self.s3)
            .map(|((a, b), c)| a - 2.0 * b + c)
            .sum()
    }

    /// Stochastic-approximation step `S <- S + step (new - S)`.
    pub fn sa_update(&mut self, new: &SufficientStats, step: f64) {
        fn vec(acc: &mut [f64], new: &[f64], step: f64) {
            for (a, n) in acc.iter_mut().zip(new) {
                *a += step * (n - *a);
            }
        }
        fn scalar(acc: &mut f64, new: f64, step: f64) {
            *acc += step * (new - *acc);
        }
        if step == 1.0 {
            self.clone_from(new);
            return;
        }
        if step == 0.0 {
            return;
        }
        vec(&mut self.s1, &new.s1, step);
        vec(&mut self.s2, &new.s2, step);
        vec(&mut self.s3, &new.s3, step);
        vec(&mut self.s4, &new.s4, step);
        scalar(&mut self.s5, new.s5, step);
        scalar(&mut self.s6, new.s6, step);
        scalar(&mut self.s7, new.s7, step);
        scalar(&mut self.s8, new.s8, step);
        scalar(&mut self.s9, new.s9, step);
        scalar(&mut self.s10, new.s10, step);
        scalar(&mut self.s11, new.s11, step);
        scalar(&mut self.s12, new.s12, step);
        vec(&mut self.s13, &new.s13, step);
        vec(&mut self.s14, &new.s14, step);
        vec(&mut self.s15, &new.s15, step);
        vec(&mut self.s16, &new.s16, step);
    }

    /// Re-expresses the statistics after every `xi_i` moved by `-shift` and
    /// `v0_tilde`, `nu_tilde` moved by `+shift`.
    pub fn shift_xi(&mut self, shift: f64) {
        for (sq, lin) in self.s15.iter_mut().zip(self.s16.iter_mut()) {
            *sq += -2.0 * shift * *lin + shift * shift;
            *lin -= shift;
        }
        for which in [FixedEffect::V0, FixedEffect::Nu] {
            let (sq, lin) = self.fixed_pair_mut(which);
            *sq += 2.0 * shift * *lin + shift * shift;
            *lin += shift;
        }
    }
}

fn gaussian_logpdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -std.ln() - LN_SQRT_2PI - 0.5 * z * z
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be > 0, got {v}")))
    }
}

/// Sum of squared residuals of one patient.
pub fn patient_sq_residuals(
    record: &PatientRecord,
    effects: &IndividualEffects,
    long: &LongitudinalFixed,
) -> f64 {
    let rate = effects.xi.exp();
    record
        .visits
        .iter()
        .map(|v| {
            let psi = rate * (v.time - effects.tau) + long.t0;
            let r = v.value - logistic_curve(long, psi);
            r * r
        })
        .sum()
}

/// Gaussian longitudinal log-likelihood of one patient.
pub fn patient_longitudinal(
    record: &PatientRecord,
    effects: &IndividualEffects,
    long: &LongitudinalFixed,
    sigma: f64,
) -> f64 {
    let n = record.visits.len() as f64;
    -n * (sigma.ln() + LN_SQRT_2PI)
        - patient_sq_residuals(record, effects, long) / (2.0 * sigma * sigma)
}

/// Survival log-likelihood of one patient: `B log h(t_e) + log S(t_e)`.
///
/// An observed event with `psi(t_e) <= t0` is infeasible and yields `-inf`.
pub fn patient_survival(
    record: &PatientRecord,
    effects: &IndividualEffects,
    surv: &SurvivalFixed,
    t0: f64,
) -> f64 {
    let psi = effects.psi(t0, record.event_time);
    let log_s = log_survival(surv, t0, psi);
    if !record.event_observed {
        return log_s;
    }
    if effects.xi.exp() * (record.event_time - effects.tau) <= 0.0 {
        return f64::NEG_INFINITY;
    }
    log_hazard(*effects, surv, record.event_time) + log_s
}

fn check_state(records: &[PatientRecord], state: &LatentState) -> Result<()> {
    if records.len() != state.effects.len() {
        return Err(Error::Contract(format!(
            "{} records but {} random-effect pairs",
            records.len(),
            state.effects.len()
        )));
    }
    Ok(())
}

pub fn longitudinal_attachment(
    records: &[PatientRecord],
    state: &LatentState,
    params: &PopulationParams,
) -> Result<f64> {
    positive("sigma", params.sigma)?;
    check_state(records, state)?;
    let long = state.fixed.longitudinal(params.t0);
    Ok(records
        .iter()
        .zip(&state.effects)
        .map(|(r, e)| patient_longitudinal(r, e, &long, params.sigma))
        .sum())
}

pub fn survival_attachment(
    records: &[PatientRecord],
    state: &LatentState,
    params: &PopulationParams,
) -> Result<f64> {
    check_state(records, state)?;
    let surv = state.fixed.survival();
    Ok(records
        .iter()
        .zip(&state.effects)
        .map(|(r, e)| patient_survival(r, e, &surv, params.t0))
        .sum())
}

/// Gaussian prior of the random effects: `tau_i ~ N(t0, sigma_tau^2)` and
/// `xi_i ~ N(mean_xi, sigma_xi^2)`.
pub fn random_effects_prior(effects: &[IndividualEffects], params: &PopulationParams) -> Result<f64> {
    positive("sigma_tau", params.sigma_tau)?;
    positive("sigma_xi", params.sigma_xi)?;
    Ok(effects
        .iter()
        .map(|e| {
            gaussian_logpdf(e.tau, params.t0, params.sigma_tau)
                + gaussian_logpdf(e.xi, params.mean_xi, params.sigma_xi)
        })
        .sum())
}

/// Log-prior of one latent fixed effect.
pub fn fixed_effect_prior(
    value: f64,
    which: FixedEffect,
    params: &PopulationParams,
    hyper: &Hyperparams,
) -> f64 {
    gaussian_logpdf(value, params.fixed_mean(which), hyper.std(which))
}

pub fn fixed_effects_prior(
    fixed: &LatentFixedEffects,
    params: &PopulationParams,
    hyper: &Hyperparams,
) -> Result<f64> {
    hyper.validate()?;
    Ok(FixedEffect::ALL
        .iter()
        .map(|&w| fixed_effect_prior(fixed.get(w), w, params, hyper))
        .sum())
}

pub fn total_loglik(
    records: &[PatientRecord],
    state: &LatentState,
    params: &PopulationParams,
    hyper: &Hyperparams,
) -> Result<LogLikTerms> {
    let longitudinal_attach = longitudinal_attachment(records, state, params)?;
    let survival_attach = survival_attachment(records, state, params)?;
    let random_effects_prior = random_effects_prior(&state.effects, params)?;
    let fixed_effects_prior = fixed_effects_prior(&state.fixed, params, hyper)?;
    Ok(LogLikTerms {
        longitudinal_attach,
        survival_attach,
        random_effects_prior,
        fixed_effects_prior,
        total: longitudinal_attach + survival_attach + random_effects_prior + fixed_effects_prior,
    })
}

pub fn compute_stats(
    records: &[PatientRecord],
    state: &LatentState,
    params: &PopulationParams,
) -> Result<SufficientStats> {
    check_state(records, state)?;
    let counts = Counts::of(records);
    let long = state.fixed.longitudinal(params.t0);
    let surv = state.fixed.survival();
    let mut s1 = Vec::with_capacity(counts.n_visits);
    let mut s2 = Vec::with_capacity(counts.n_visits);
    let mut s3 = Vec::with_capacity(counts.n_visits);
    let mut s4 = Vec::with_capacity(counts.n_patients);
    for (r, e) in records.iter().zip(&state.effects) {
        for v in &r.visits {
            let gamma = logistic_curve(&long, e.psi(params.t0, v.time));
            s1.push(v.value * v.value);
            s2.push(v.value * gamma);
            s3.push(gamma * gamma);
        }
        s4.push(patient_survival(r, e, &surv, params.t0));
    }
    let f = &state.fixed;
    Ok(SufficientStats {
        s1,
        s2,
        s3,
        s4,
        s5: f.g_tilde * f.g_tilde,
        s6: f.g_tilde,
        s7: f.v0_tilde * f.v0_tilde,
        s8: f.v0_tilde,
        s9: f.nu_tilde * f.nu_tilde,
        s10: f.nu_tilde,
        s11: f.rho_tilde * f.rho_tilde,
        s12: f.rho_tilde,
        s13: state.effects.iter().map(|e| e.tau * e.tau).collect(),
        s14: state.effects.iter().map(|e| e.tau).collect(),
        s15: state.effects.iter().map(|e| e.xi * e.xi).collect(),
        s16: state.effects.iter().map(|e| e.xi).collect(),
    })
}

/// Rebuilds the complete-data log-likelihood from the statistics.
pub fn stats_to_loglik(
    stats: &SufficientStats,
    params: &PopulationParams,
    hyper: &Hyperparams,
    counts: Counts,
) -> Result<f64> {
    stats.check_counts(counts)?;
    positive("sigma", params.sigma)?;
    positive("sigma_tau", params.sigma_tau)?;
    positive("sigma_xi", params.sigma_xi)?;
    hyper.validate()?;
    let n = counts.n_patients as f64;
    let n_visits = counts.n_visits as f64;

    let sigma2 = params.sigma * params.sigma;
    let mut ll = -n_visits * (params.sigma.ln() + LN_SQRT_2PI) - stats.residual_ss() / (2.0 * sigma2);
    ll += stats.s4.iter().sum::<f64>();

    for which in FixedEffect::ALL {
        let (sq, lin) = stats.fixed_pair(which);
        let s = hyper.std(which);
        let m = params.fixed_mean(which);
        let s2 = s * s;
        ll += -(s.ln() + LN_SQRT_2PI) - sq / (2.0 * s2) + lin * m / s2 - m * m / (2.0 * s2);
    }

    let gaussian_block = |sum_sq: f64, sum_lin: f64, mean: f64, std: f64| {
        let v = std * std;
        -n * (std.ln() + LN_SQRT_2PI) - sum_sq / (2.0 * v) + sum_lin * mean / v
            - n * mean * mean / (2.0 * v)
    };
    ll += gaussian_block(
        stats.s13.iter().sum(),
        stats.s14.iter().sum(),
        params.t0,
        params.sigma_tau,
    );
    ll += gaussian_block(
        stats.s15.iter().sum(),
        stats.s16.iter().sum(),
        params.mean_xi,
        params.sigma_xi,
    );
    Ok(ll)
}

/// Closed-form maximizer of `theta -> stats_to_loglik(stats, theta)`.
///
/// The result carries the maximized `mean_xi`; call
/// [`apply_identifiability`] to fold it back to zero. Variances below
/// `variance_floor` are floored with a warning.
pub fn maximization_step(
    stats: &SufficientStats,
    counts: Counts,
    variance_floor: f64,
) -> Result<PopulationParams> {
    stats.check_counts(counts)?;
    if counts.n_patients == 0 || counts.n_visits == 0 {
        return Err(Error::Contract("maximization needs at least one visit".into()));
    }
    let n = counts.n_patients as f64;
    let floored = |name: &str, var: f64| {
        if var.is_nan() || var < variance_floor {
            log::warn!("{name} variance update {var:e} floored at {variance_floor:e}");
            variance_floor
        } else {
            var
        }
    };

    let sigma2 = floored("noise", stats.residual_ss() / counts.n_visits as f64);

    let tau_mean = stats.s14.iter().sum::<f64>() / n;
    let tau_var = stats.s13.iter().sum::<f64>() / n - 2.0 * tau_mean * stats.s14.iter().sum::<f64>() / n
        + tau_mean * tau_mean;
    let tau_var = floored("time shift", tau_var);

    let xi_mean = stats.s16.iter().sum::<f64>() / n;
    let xi_var = stats.s15.iter().sum::<f64>() / n - 2.0 * xi_mean * stats.s16.iter().sum::<f64>() / n
        + xi_mean * xi_mean;
    let xi_var = floored("log-rate", xi_var);

    Ok(PopulationParams {
        t0: tau_mean,
        sigma_tau: tau_var.sqrt(),
        sigma_xi: xi_var.sqrt(),
        mean_xi: xi_mean,
        mean_g_tilde: stats.s6,
        mean_v0_tilde: stats.s8,
        mean_nu_tilde: stats.s10,
        mean_rho_tilde: stats.s12,
        sigma: sigma2.sqrt(),
    })
}

/// Moves the mean log-rate into the fixed effects so that `mean_xi == 0`.
///
/// Every `xi_i` drops by `c = mean_xi`; `v0_tilde`, `nu_tilde` and their means rise
/// by `c`. Both data attachments are unchanged by the shift. When given,
/// `stats` is re-expressed in the shifted coordinates as well.
pub fn apply_identifiability(
    params: &mut PopulationParams,
    state: &mut LatentState,
    stats: Option<&mut SufficientStats>,
) {
    let c = params.mean_xi;
    if c == 0.0 {
        return;
    }
    for e in &mut state.effects {
        e.xi -= c;
    }
    state.fixed.v0_tilde += c;
    state.fixed.nu_tilde += c;
    params.mean_v0_tilde += c;
    params.mean_nu_tilde += c;
    params.mean_xi = 0.0;
    if let Some(s) = stats {
        s.shift_xi(c);
    }
}
