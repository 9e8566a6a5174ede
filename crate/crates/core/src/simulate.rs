//! Synthetic cohorts drawn from the joint model.
//!
//! For each patient: draw `(xi, tau)`, place the first visit `delta_f` after
//! `tau`, lay visits every `delta_v` until the follow-up `T_f` is exhausted,
//! draw Beta scores with mode on the true curve, draw the event as
//! `tau + exp(-xi) W(nu, rho)`, then let the event cut the follow-up and the
//! follow-up censor the event.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Weibull};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    logistic_curve, Hyperparams, IndividualEffects, LatentFixedEffects, LongitudinalFixed,
    PatientRecord, PopulationParams, SurvivalFixed, Visit,
};
use crate::personalize::FittedModel;

const DAYS_PER_YEAR: f64 = 365.25;
const MONTHS_PER_YEAR: f64 = 12.0;
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_patients: usize,
    pub sigma_tau: f64,
    pub sigma_xi: f64,
    pub t0: f64,
    pub v0: f64,
    pub g: f64,
    pub nu: f64,
    pub rho: f64,
    /// Time from `tau` to the first visit (years).
    pub delta_f_mean: f64,
    pub delta_f_std: f64,
    /// Follow-up duration (years).
    pub follow_up_mean: f64,
    pub follow_up_std: f64,
    pub visit_gap_mean_months: f64,
    pub visit_gap_std_months: f64,
    /// Concentration `p` of the mode/concentration Beta noise.
    pub beta_concentration: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::als_preset()
    }
}

impl SimConfig {
    /// ALS real-like simulation scenario: 200 patients, `t0 = 5`, Beta noise
    /// of concentration 100.
    pub fn als_preset() -> Self {
        Self {
            n_patients: 200,
            sigma_tau: 1.04,
            sigma_xi: 0.73,
            t0: 5.0,
            v0: 1.13,
            g: 6.40,
            nu: 3.62,
            rho: 2.25,
            delta_f_mean: 0.0,
            delta_f_std: 0.4,
            follow_up_mean: 1.2,
            follow_up_std: 0.3,
            visit_gap_mean_months: 1.47,
            visit_gap_std_months: 0.5,
            beta_concentration: 100.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(msg));
        if self.n_patients == 0 {
            return bad("n_patients must be >= 1".into());
        }
        for (name, v) in [
            ("sigma_tau", self.sigma_tau),
            ("sigma_xi", self.sigma_xi),
            ("delta_f_std", self.delta_f_std),
            ("follow_up_std", self.follow_up_std),
            ("visit_gap_std_months", self.visit_gap_std_months),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite std >= 0, got {v}"));
            }
        }
        for (name, v) in [("v0", self.v0), ("g", self.g), ("nu", self.nu), ("rho", self.rho)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.visit_gap_mean_months > 0.0 && self.visit_gap_mean_months.is_finite()) {
            return bad("visit_gap_mean_months must be > 0".into());
        }
        if !(self.beta_concentration > 2.0 && self.beta_concentration.is_finite()) {
            return bad(format!(
                "beta_concentration must be > 2, got {}",
                self.beta_concentration
            ));
        }
        for (name, v) in [
            ("t0", self.t0),
            ("delta_f_mean", self.delta_f_mean),
            ("follow_up_mean", self.follow_up_mean),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    pub fn longitudinal(&self) -> LongitudinalFixed {
        LongitudinalFixed {
            g: self.g,
            v0: self.v0,
            t0: self.t0,
        }
    }

    pub fn survival(&self) -> SurvivalFixed {
        SurvivalFixed {
            nu: self.nu,
            rho: self.rho,
        }
    }

    /// The generating parameters as a fitted model with Gaussian noise `sigma`.
    pub fn generating_model(&self, sigma: f64) -> FittedModel {
        let latent_fixed = LatentFixedEffects::from_natural(&self.longitudinal(), &self.survival());
        FittedModel {
            params: PopulationParams {
                t0: self.t0,
                sigma_tau: self.sigma_tau,
                sigma_xi: self.sigma_xi,
                mean_xi: 0.0,
                mean_g_tilde: latent_fixed.g_tilde,
                mean_v0_tilde: latent_fixed.v0_tilde,
                mean_nu_tilde: latent_fixed.nu_tilde,
                mean_rho_tilde: latent_fixed.rho_tilde,
                sigma,
            },
            latent_fixed,
            hyper: Hyperparams::default(),
        }
    }
}

/// A simulated cohort with the random effects that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCohort {
    pub records: Vec<PatientRecord>,
    /// Ground-truth effects aligned with `records`.
    pub truth: Vec<IndividualEffects>,
}

impl SimulatedCohort {
    pub fn n_visits(&self) -> usize {
        self.records.iter().map(|r| r.visits.len()).sum()
    }

    pub fn censoring_rate(&self) -> f64 {
        let censored = self.records.iter().filter(|r| !r.event_observed).count();
        censored as f64 / self.records.len() as f64
    }

    /// Root mean square of the scores around the true curves.
    pub fn noise_std(&self, long: &LongitudinalFixed) -> f64 {
        let mut ss = 0.0;
        let mut n = 0usize;
        for (r, e) in self.records.iter().zip(&self.truth) {
            for v in &r.visits {
                let d = v.value - logistic_curve(long, e.psi(long.t0, v.time));
                ss += d * d;
                n += 1;
            }
        }
        (ss / n as f64).sqrt()
    }
}

/// Shape parameters of the Beta distribution with the given mode and
/// concentration.
pub fn beta_shapes(mode: f64, concentration: f64) -> (f64, f64) {
    let k = concentration - 2.0;
    (mode * k + 1.0, (1.0 - mode) * k + 1.0)
}

fn normal(mean: f64, std: f64) -> Result<Normal<f64>> {
    Normal::new(mean, std).map_err(|e| Error::Input(format!("normal({mean}, {std}): {e}")))
}

struct Samplers {
    xi: Normal<f64>,
    tau: Normal<f64>,
    delta_f: Normal<f64>,
    follow_up: Normal<f64>,
    gap: Normal<f64>,
    event: Weibull<f64>,
}

fn draw_gap_years(gap: &Normal<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let months = loop {
        let m = gap.sample(rng);
        if m > 0.0 {
            break m;
        }
    };
    (months / MONTHS_PER_YEAR).max(1.0 / DAYS_PER_YEAR)
}

fn draw_score(mode: f64, concentration: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (a, b) = beta_shapes(mode, concentration);
    let beta = Beta::new(a, b).map_err(|e| Error::Input(format!("beta({a}, {b}): {e}")))?;
    loop {
        let y: f64 = beta.sample(rng);
        if y > 0.0 && y < 1.0 {
            return Ok(y);
        }
    }
}

fn simulate_patient(
    config: &SimConfig,
    samplers: &Samplers,
    index: usize,
) -> Result<(PatientRecord, IndividualEffects)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let long = config.longitudinal();

    for _ in 0..MAX_REDRAWS {
        let effects = IndividualEffects::new(samplers.xi.sample(&mut rng), samplers.tau.sample(&mut rng));
        let first = effects.tau + samplers.delta_f.sample(&mut rng);
        let horizon = first + samplers.follow_up.sample(&mut rng).max(0.0);

        let mut times = vec![first];
        loop {
            let next = times[times.len() - 1] + draw_gap_years(&samplers.gap, &mut rng);
            if next > horizon {
                break;
            }
            times.push(next);
        }

        let event_time = effects.tau + (-effects.xi).exp() * samplers.event.sample(&mut rng);
        if event_time < first {
            continue;
        }

        let mut visits = Vec::with_capacity(times.len());
        for &time in &times {
            let mode = logistic_curve(&long, effects.psi(config.t0, time));
            let value = draw_score(mode, config.beta_concentration, &mut rng)?;
            visits.push(Visit { time, value });
        }

        let last_scheduled = times[times.len() - 1];
        let record = if event_time <= last_scheduled {
            visits.retain(|v| v.time <= event_time);
            PatientRecord {
                id: patient_id(index),
                visits,
                event_time,
                event_observed: true,
            }
        } else {
            PatientRecord {
                id: patient_id(index),
                visits,
                event_time: last_scheduled,
                event_observed: false,
            }
        };
        return Ok((record, effects));
    }
    Err(Error::Input(format!(
        "patient {index}: no draw produced a visit before the event"
    )))
}

pub fn patient_id(index: usize) -> String {
    format!("P{index:05}")
}

/// Draws a cohort; each patient uses its own RNG stream of `config.seed`.
pub fn simulate_cohort(config: &SimConfig) -> Result<SimulatedCohort> {
    config.validate()?;
    let samplers = Samplers {
        xi: normal(0.0, config.sigma_xi)?,
        tau: normal(config.t0, config.sigma_tau)?,
        delta_f: normal(config.delta_f_mean, config.delta_f_std)?,
        follow_up: normal(config.follow_up_mean, config.follow_up_std)?,
        gap: normal(config.visit_gap_mean_months, config.visit_gap_std_months)?,
        event: Weibull::new(config.nu, config.rho)
            .map_err(|e| Error::Input(format!("weibull: {e}")))?,
    };
    let mut records = Vec::with_capacity(config.n_patients);
    let mut truth = Vec::with_capacity(config.n_patients);
    for i in 0..config.n_patients {
        let (r, e) = simulate_patient(config, &samplers, i)?;
        records.push(r);
        truth.push(e);
    }
    Ok(SimulatedCohort { records, truth })
}
