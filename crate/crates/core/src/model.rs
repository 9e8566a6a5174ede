//! Model quantities and the four structural functions of the joint model.
//!
//! Every patient is mapped onto a shared disease timeline through the latent
//! disease age `psi_i(t) = exp(xi_i) (t - tau_i) + t0`. The longitudinal score
//! follows a logistic curve of `psi`, and survival follows a Weibull
//! distribution started at the reference time `t0` of the same timeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bound applied to the logistic exponent before `exp`.
pub const LOGISTIC_EXPONENT_CLAMP: f64 = 700.0;

/// Per-patient random effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndividualEffects {
    /// Log-rate factor; the patient progresses `exp(xi)` times faster.
    pub xi: f64,
    /// Time shift in years: the age at which the patient reaches `t0`.
    pub tau: f64,
}

impl IndividualEffects {
    pub fn new(xi: f64, tau: f64) -> Self {
        Self { xi, tau }
    }

    /// Latent disease age without input checks.
    #[inline]
    pub fn psi(&self, t0: f64, t: f64) -> f64 {
        self.xi.exp() * (t - self.tau) + t0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalFixed {
    pub g: f64,
    pub v0: f64,
    pub t0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalFixed {
    /// Weibull scale (years).
    pub nu: f64,
    /// Weibull shape.
    pub rho: f64,
}

impl LongitudinalFixed {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::Parameter(format!("g must be > 0, got {}", self.g)));
        }
        if !(self.v0 > 0.0 && self.v0.is_finite()) {
            return Err(Error::Parameter(format!("v0 must be > 0, got {}", self.v0)));
        }
        if !self.t0.is_finite() {
            return Err(Error::Parameter("t0 must be finite".into()));
        }
        Ok(())
    }

    /// Steepness `v0 (g+1)^2 / g` of the logistic in latent time.
    #[inline]
    pub fn rate(&self) -> f64 {
        self.v0 * (self.g + 1.0).powi(2) / self.g
    }
}

impl SurvivalFixed {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::Parameter(format!("nu must be > 0, got {}", self.nu)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Parameter(format!("rho must be > 0, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Log-space parametrization of the fixed effects that are sampled.
///
/// `nu_tilde` is `-log(nu)`, so a shift of every `xi_i` by `c` is absorbed by
/// adding `c` to both `v0_tilde` and `nu_tilde`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentFixedEffects {
    pub g_tilde: f64,
    pub v0_tilde: f64,
    pub nu_tilde: f64,
    pub rho_tilde: f64,
}

impl LatentFixedEffects {
    pub fn from_natural(long: &LongitudinalFixed, surv: &SurvivalFixed) -> Self {
        Self {
            g_tilde: long.g.ln(),
            v0_tilde: long.v0.ln(),
            nu_tilde: -surv.nu.ln(),
            rho_tilde: surv.rho.ln(),
        }
    }

    pub fn longitudinal(&self, t0: f64) -> LongitudinalFixed {
        LongitudinalFixed {
            g: self.g_tilde.exp(),
            v0: self.v0_tilde.exp(),
            t0,
        }
    }

    pub fn survival(&self) -> SurvivalFixed {
        SurvivalFixed {
            nu: (-self.nu_tilde).exp(),
            rho: self.rho_tilde.exp(),
        }
    }

    pub fn get(&self, which: FixedEffect) -> f64 {
        match which {
            FixedEffect::G => self.g_tilde,
            FixedEffect::V0 => self.v0_tilde,
            FixedEffect::Nu => self.nu_tilde,
            FixedEffect::Rho => self.rho_tilde,
        }
    }

    pub fn set(&mut self, which: FixedEffect, value: f64) {
        match which {
            FixedEffect::G => self.g_tilde = value,
            FixedEffect::V0 => self.v0_tilde = value,
            FixedEffect::Nu => self.nu_tilde = value,
            FixedEffect::Rho => self.rho_tilde = value,
        }
    }
}

/// Names the four latent fixed effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FixedEffect {
    G,
    V0,
    Nu,
    Rho,
}

impl FixedEffect {
    pub const ALL: [FixedEffect; 4] = [
        FixedEffect::G,
        FixedEffect::V0,
        FixedEffect::Nu,
        FixedEffect::Rho,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixedEffect::G => "g",
            FixedEffect::V0 => "v0",
            FixedEffect::Nu => "nu",
            FixedEffect::Rho => "rho",
        }
    }

    pub fn is_survival(self) -> bool {
        matches!(self, FixedEffect::Nu | FixedEffect::Rho)
    }
}

/// Maximized model parameters.
///
/// `t0` doubles as the mean time shift and `mean_xi` is kept at zero once
/// identifiability has been applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub t0: f64,
    pub sigma_tau: f64,
    pub sigma_xi: f64,
    #[serde(default)]
    pub mean_xi: f64,
    pub mean_g_tilde: f64,
    pub mean_v0_tilde: f64,
    pub mean_nu_tilde: f64,
    pub mean_rho_tilde: f64,
    /// Longitudinal noise std.
    pub sigma: f64,
}

impl PopulationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_tau", self.sigma_tau),
            ("sigma_xi", self.sigma_xi),
            ("sigma", self.sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be > 0, got {v}")));
            }
        }
        let all = [
            self.t0,
            self.mean_xi,
            self.mean_g_tilde,
            self.mean_v0_tilde,
            self.mean_nu_tilde,
            self.mean_rho_tilde,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("population means must be finite".into()));
        }
        Ok(())
    }

    pub fn fixed_mean(&self, which: FixedEffect) -> f64 {
        match which {
            FixedEffect::G => self.mean_g_tilde,
            FixedEffect::V0 => self.mean_v0_tilde,
            FixedEffect::Nu => self.mean_nu_tilde,
            FixedEffect::Rho => self.mean_rho_tilde,
        }
    }

    pub fn fixed_mean_mut(&mut self, which: FixedEffect) -> &mut f64 {
        match which {
            FixedEffect::G => &mut self.mean_g_tilde,
            FixedEffect::V0 => &mut self.mean_v0_tilde,
            FixedEffect::Nu => &mut self.mean_nu_tilde,
            FixedEffect::Rho => &mut self.mean_rho_tilde,
        }
    }

    /// Latent fixed effects placed at their prior means.
    pub fn mean_latent(&self) -> LatentFixedEffects {
        LatentFixedEffects {
            g_tilde: self.mean_g_tilde,
            v0_tilde: self.mean_v0_tilde,
            nu_tilde: self.mean_nu_tilde,
            rho_tilde: self.mean_rho_tilde,
        }
    }
}

/// User-set prior stds of the latent fixed effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub sigma_g_tilde: f64,
    pub sigma_v0_tilde: f64,
    pub sigma_nu_tilde: f64,
    pub sigma_rho_tilde: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            sigma_g_tilde: 0.01,
            sigma_v0_tilde: 0.01,
            sigma_nu_tilde: 0.01,
            sigma_rho_tilde: 0.01,
        }
    }
}

impl Hyperparams {
    pub fn std(&self, which: FixedEffect) -> f64 {
        match which {
            FixedEffect::G => self.sigma_g_tilde,
            FixedEffect::V0 => self.sigma_v0_tilde,
            FixedEffect::Nu => self.sigma_nu_tilde,
            FixedEffect::Rho => self.sigma_rho_tilde,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for which in FixedEffect::ALL {
            let s = self.std(which);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Parameter(format!(
                    "prior std of {} must be > 0, got {s}",
                    which.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub time: f64,
    /// Normalized score, 0 healthiest and 1 maximal change.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub visits: Vec<Visit>,
    pub event_time: f64,
    pub event_observed: bool,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<()> {
        if self.visits.iter().any(|v| !v.time.is_finite() || !v.value.is_finite()) {
            return Err(Error::Input(format!("patient {}: non-finite visit", self.id)));
        }
        if self.visits.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::Input(format!(
                "patient {}: visit times must be strictly increasing",
                self.id
            )));
        }
        if self.visits.iter().any(|v| !(0.0..=1.0).contains(&v.value)) {
            return Err(Error::Input(format!(
                "patient {}: scores must lie in [0, 1]",
                self.id
            )));
        }
        if let Some(first) = self.visits.first() {
            if self.event_time < first.time {
                return Err(Error::Input(format!(
                    "patient {}: event time precedes the first visit",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn last_visit_time(&self) -> Option<f64> {
        self.visits.last().map(|v| v.time)
    }

    /// The record restricted to its first `k` visits with the event censored
    /// at the last kept visit.
    pub fn truncated(&self, k: usize) -> PatientRecord {
        let visits: Vec<Visit> = self.visits.iter().take(k).copied().collect();
        let event_time = visits.last().map_or(self.event_time, |v| v.time);
        PatientRecord {
            id: self.id.clone(),
            visits,
            event_time,
            event_observed: false,
        }
    }
}

/// Latent disease age `exp(xi) (t - tau) + t0`.
pub fn latent_age(effects: IndividualEffects, t0: f64, t: f64) -> Result<f64> {
    if !(effects.xi.is_finite() && effects.tau.is_finite() && t0.is_finite() && t.is_finite()) {
        return Err(Error::Domain("latent_age inputs must be finite".into()));
    }
    Ok(effects.psi(t0, t))
}

/// Population logistic curve evaluated at latent age `psi`.
#[inline]
pub fn logistic_curve(fx: &LongitudinalFixed, psi: f64) -> f64 {
    let arg = (-fx.rate() * (psi - fx.t0)).clamp(-LOGISTIC_EXPONENT_CLAMP, LOGISTIC_EXPONENT_CLAMP);
    1.0 / (1.0 + fx.g * arg.exp())
}

/// Weibull survival started at `t0` on the latent timeline.
#[inline]
pub fn survival(sx: &SurvivalFixed, t0: f64, psi: f64) -> f64 {
    log_survival(sx, t0, psi).exp()
}

/// `log S`, exactly zero for `psi <= t0`.
#[inline]
pub fn log_survival(sx: &SurvivalFixed, t0: f64, psi: f64) -> f64 {
    if psi <= t0 {
        0.0
    } else {
        -((psi - t0) / sx.nu).powf(sx.rho)
    }
}

/// Individual hazard in chronological time.
///
/// Zero while `psi(t) < t0`. At `psi(t) == t0` the hazard is zero for
/// `rho >= 1` and `+inf` for `rho < 1` (the singular limit).
pub fn hazard(effects: IndividualEffects, sx: &SurvivalFixed, t0: f64, t: f64) -> f64 {
    let psi = effects.psi(t0, t);
    if psi < t0 || (psi == t0 && sx.rho >= 1.0) {
        return 0.0;
    }
    if psi == t0 {
        return f64::INFINITY;
    }
    sx.rho * effects.xi.exp() / sx.nu * ((psi - t0) / sx.nu).powf(sx.rho - 1.0)
}

/// `log h`, `-inf` wherever the hazard vanishes. Depends on `t0` only through
/// `psi - t0 = exp(xi) (t - tau)`, so it is not an argument.
#[inline]
pub fn log_hazard(effects: IndividualEffects, sx: &SurvivalFixed, t: f64) -> f64 {
    let x = effects.xi.exp() * (t - effects.tau);
    if x <= 0.0 {
        return if x == 0.0 && sx.rho < 1.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
    }
    sx.rho.ln() + effects.xi - sx.nu.ln() + (sx.rho - 1.0) * (x / sx.nu).ln()
}
