//! MCMC-SAEM estimation.
//!
//! Each iteration runs Metropolis-within-Gibbs updates of the latent
//! variables, a stochastic-approximation update of the sufficient statistics,
//! the closed-form maximization and the identifiability shift. The last
//! `n_rm_iterations` draws are averaged into the final estimates.

mod init;
mod sampler;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{apply_identifiability, LatentState, DEFAULT_VARIANCE_FLOOR};
use crate::model::{
    FixedEffect, Hyperparams, IndividualEffects, LatentFixedEffects, PatientRecord,
    PopulationParams,
};

pub use init::{fit_weibull, initialize, moment_init, repair_feasibility, weibull_loglik, InitialState};
pub use sampler::{Mode, Sampler, CHECKPOINT_VERSION};

/// Random-walk proposal stds. The patient block scales `xi` and `tau` jointly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalStds {
    pub g_tilde: f64,
    pub v0_tilde: f64,
    pub nu_tilde: f64,
    pub rho_tilde: f64,
    pub xi: f64,
    pub tau: f64,
}

impl Default for ProposalStds {
    fn default() -> Self {
        Self {
            g_tilde: 0.005,
            v0_tilde: 0.005,
            nu_tilde: 0.005,
            rho_tilde: 0.005,
            xi: 0.1,
            tau: 0.5,
        }
    }
}

impl ProposalStds {
    pub fn fixed(&self, which: FixedEffect) -> f64 {
        match which {
            FixedEffect::G => self.g_tilde,
            FixedEffect::V0 => self.v0_tilde,
            FixedEffect::Nu => self.nu_tilde,
            FixedEffect::Rho => self.rho_tilde,
        }
    }

    fn all(&self) -> [f64; 6] {
        [self.g_tilde, self.v0_tilde, self.nu_tilde, self.rho_tilde, self.xi, self.tau]
    }
}

/// Proposal-scale adaptation toward a target acceptance rate.
///
/// Scales are adapted at the end of every window while the step size is 1
/// and frozen afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Adaptation {
    pub enabled: bool,
    pub target: f64,
    pub window: usize,
}

impl Default for Adaptation {
    fn default() -> Self {
        Self {
            enabled: true,
            target: 0.3,
            window: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitStrategy {
    /// Data moments only.
    Moments,
    /// Moments followed by a longitudinal-only chain of this many iterations.
    LongitudinalPrefit { iterations: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaemConfig {
    /// Total iterations, averaging window included.
    pub n_iterations: usize,
    /// Length of the final averaging window.
    pub n_rm_iterations: usize,
    /// Fraction of the pre-averaging iterations run with step size 1.
    pub burn_in_fraction: f64,
    pub step_exponent: f64,
    pub proposal_stds: ProposalStds,
    pub adaptation: Adaptation,
    pub seed: u64,
    pub variance_floor: f64,
    pub hyper: Hyperparams,
    pub init: InitStrategy,
    /// Latent event age given to infeasible observed events at start.
    pub feasibility_margin: f64,
    /// Keep every draw of the random effects in the trace.
    pub trace_latents: bool,
}

impl Default for SaemConfig {
    /// Full-length schedule: 70,000 iterations, the last 10,000 averaged.
    fn default() -> Self {
        Self {
            n_iterations: 70_000,
            n_rm_iterations: 10_000,
            burn_in_fraction: 0.6,
            step_exponent: 0.9,
            proposal_stds: ProposalStds::default(),
            adaptation: Adaptation::default(),
            seed: 0,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            hyper: Hyperparams::default(),
            init: InitStrategy::LongitudinalPrefit { iterations: 2000 },
            feasibility_margin: 0.01,
            trace_latents: false,
        }
    }
}

impl SaemConfig {
    pub fn full() -> Self {
        Self::default()
    }

    /// 20,000 iterations followed by a 4,000-iteration averaging window.
    pub fn desk() -> Self {
        Self {
            n_iterations: 24_000,
            n_rm_iterations: 4_000,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.n_iterations == 0 {
            return bad("n_iterations must be positive".into());
        }
        if self.n_rm_iterations >= self.n_iterations {
            return bad(format!(
                "n_rm_iterations ({}) must be below n_iterations ({})",
                self.n_rm_iterations, self.n_iterations
            ));
        }
        if !(self.step_exponent > 0.5 && self.step_exponent <= 1.0) {
            return bad(format!("step_exponent must lie in (0.5, 1], got {}", self.step_exponent));
        }
        if !(0.0..=1.0).contains(&self.burn_in_fraction) {
            return bad(format!("burn_in_fraction must lie in [0, 1], got {}", self.burn_in_fraction));
        }
        if self.proposal_stds.all().iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("all proposal stds must be positive".into());
        }
        if !(self.adaptation.target > 0.0 && self.adaptation.target < 1.0) {
            return bad("adaptation target must lie in (0, 1)".into());
        }
        if self.adaptation.window == 0 {
            return bad("adaptation window must be positive".into());
        }
        if !(self.variance_floor > 0.0) {
            return bad("variance_floor must be positive".into());
        }
        if !(self.feasibility_margin > 0.0) {
            return bad("feasibility_margin must be positive".into());
        }
        self.hyper
            .validate()
            .map_err(|e| Error::Input(format!("hyperparameters: {e}")))
    }

    /// Index of the first iteration with a decreasing step.
    pub fn burn_in_end(&self) -> usize {
        let pre = self.n_iterations - self.n_rm_iterations;
        (self.burn_in_fraction * pre as f64).floor() as usize
    }

    /// Index of the first averaged iteration.
    pub fn averaging_start(&self) -> usize {
        self.n_iterations - self.n_rm_iterations
    }

    /// Stochastic-approximation step of 0-based iteration `k`.
    pub fn step_size(&self, k: usize) -> f64 {
        let kb = self.burn_in_end();
        if k < kb {
            1.0
        } else {
            ((k - kb + 1) as f64).powf(-self.step_exponent)
        }
    }
}

/// Acceptance rates of the sampler blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockRates {
    pub g_tilde: f64,
    pub v0_tilde: f64,
    pub nu_tilde: f64,
    pub rho_tilde: f64,
    /// Pooled over all patient blocks.
    pub patients: f64,
}

/// One iteration of the chain after the maximization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub params: PopulationParams,
    pub fixed: LatentFixedEffects,
    /// Total log-likelihood of the current draw under the current parameters.
    pub loglik: f64,
    /// Cumulative acceptance rates.
    pub acceptance: BlockRates,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effects: Option<Vec<IndividualEffects>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub acceptance: BlockRates,
    /// Windows in which some block accepted under 1% of its proposals.
    pub stalled_windows: usize,
    pub final_proposal_stds: ProposalStds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: PopulationParams,
    pub hyper: Hyperparams,
    pub latent_fixed: LatentFixedEffects,
    pub individual_effects: BTreeMap<String, IndividualEffects>,
    pub trace: Vec<TraceRow>,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    /// Estimated effects in the order of `records`.
    pub fn effects_for(&self, records: &[PatientRecord]) -> Result<Vec<IndividualEffects>> {
        records
            .iter()
            .map(|r| {
                self.individual_effects.get(&r.id).copied().ok_or_else(|| {
                    Error::Contract(format!("no fitted effects for patient {}", r.id))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMeans {
    pub params: PopulationParams,
    pub latent_fixed: LatentFixedEffects,
    pub effects: Vec<IndividualEffects>,
}

/// Running sums behind the final averages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct Averager {
    count: usize,
    params: [f64; 9],
    fixed: [f64; 4],
    effects: Vec<(f64, f64)>,
}

fn params_array(p: &PopulationParams) -> [f64; 9] {
    [
        p.t0,
        p.sigma_tau,
        p.sigma_xi,
        p.mean_xi,
        p.mean_g_tilde,
        p.mean_v0_tilde,
        p.mean_nu_tilde,
        p.mean_rho_tilde,
        p.sigma,
    ]
}

fn fixed_array(f: &LatentFixedEffects) -> [f64; 4] {
    [f.g_tilde, f.v0_tilde, f.nu_tilde, f.rho_tilde]
}

impl Averager {
    pub(crate) fn add(
        &mut self,
        params: &PopulationParams,
        fixed: &LatentFixedEffects,
        effects: &[IndividualEffects],
    ) {
        if self.count == 0 {
            self.effects = vec![(0.0, 0.0); effects.len()];
        }
        self.count += 1;
        for (s, v) in self.params.iter_mut().zip(params_array(params)) {
            *s += v;
        }
        for (s, v) in self.fixed.iter_mut().zip(fixed_array(fixed)) {
            *s += v;
        }
        for (s, e) in self.effects.iter_mut().zip(effects) {
            s.0 += e.xi;
            s.1 += e.tau;
        }
    }

    pub(crate) fn finish(&self) -> Result<PosteriorMeans> {
        if self.count == 0 {
            return Err(Error::Contract("posterior mean over an empty window".into()));
        }
        let n = self.count as f64;
        let p = self.params.map(|s| s / n);
        let f = self.fixed.map(|s| s / n);
        let effects: Vec<IndividualEffects> = self
            .effects
            .iter()
            .map(|(xi, tau)| IndividualEffects::new(xi / n, tau / n))
            .collect();
        let mut params = PopulationParams {
            t0: p[0],
            sigma_tau: p[1],
            sigma_xi: p[2],
            mean_xi: p[3],
            mean_g_tilde: p[4],
            mean_v0_tilde: p[5],
            mean_nu_tilde: p[6],
            mean_rho_tilde: p[7],
            sigma: p[8],
        };
        let mut latent = LatentState {
            fixed: LatentFixedEffects {
                g_tilde: f[0],
                v0_tilde: f[1],
                nu_tilde: f[2],
                rho_tilde: f[3],
            },
            effects,
        };
        if !latent.effects.is_empty() {
            params.mean_xi =
                latent.effects.iter().map(|e| e.xi).sum::<f64>() / latent.effects.len() as f64;
        }
        apply_identifiability(&mut params, &mut latent, None);
        Ok(PosteriorMeans {
            params,
            latent_fixed: latent.fixed,
            effects: latent.effects,
        })
    }
}

/// Arithmetic means of the trace rows in `window`, followed by one
/// identifiability shift. Rows must carry the random-effect draws.
pub fn posterior_means(window: &[TraceRow]) -> Result<PosteriorMeans> {
    if window.is_empty() {
        return Err(Error::Contract("posterior mean over an empty window".into()));
    }
    let mut avg = Averager::default();
    for row in window {
        let effects = row.effects.as_deref().ok_or_else(|| {
            Error::Contract(format!(
                "trace row {} carries no random effects; enable trace_latents",
                row.iteration
            ))
        })?;
        avg.add(&row.params, &row.fixed, effects);
    }
    avg.finish()
}

/// Fits the model to `records`: initialization, the full chain and the
/// averaged estimates.
pub fn run_saem(records: &[PatientRecord], config: &SaemConfig) -> Result<FitResult> {
    let mut sampler = Sampler::new(records, config)?;
    sampler.run_to_end();
    sampler.finish()
}

pub const TRACE_PARAM_COLUMNS: [&str; 9] = [
    "t0",
    "sigma_tau",
    "sigma_xi",
    "mean_xi",
    "mean_g_tilde",
    "mean_v0_tilde",
    "mean_nu_tilde",
    "mean_rho_tilde",
    "sigma",
];

/// Writes the trace as CSV: iteration, parameters, realized fixed effects,
/// log-likelihood, cumulative acceptance rates and, when recorded,
/// `xi_<id>`/`tau_<id>` columns.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], ids: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let with_effects = trace.first().is_some_and(|r| r.effects.is_some());
    let mut header: Vec<String> = vec!["iteration".into()];
    header.extend(TRACE_PARAM_COLUMNS.iter().map(|s| s.to_string()));
    header.extend(["g_tilde", "v0_tilde", "nu_tilde", "rho_tilde", "loglik"].map(String::from));
    header.extend(
        ["acc_g_tilde", "acc_v0_tilde", "acc_nu_tilde", "acc_rho_tilde", "acc_patients"]
            .map(String::from),
    );
    if with_effects {
        for id in ids {
            header.push(format!("xi_{id}"));
            header.push(format!("tau_{id}"));
        }
    }
    w.write_record(&header)?;
    for row in trace {
        let mut rec: Vec<String> = vec![row.iteration.to_string()];
        rec.extend(params_array(&row.params).iter().map(f64::to_string));
        rec.extend(fixed_array(&row.fixed).iter().map(f64::to_string));
        rec.push(row.loglik.to_string());
        let a = row.acceptance;
        rec.extend([a.g_tilde, a.v0_tilde, a.nu_tilde, a.rho_tilde, a.patients].map(|v| v.to_string()));
        if let Some(effects) = &row.effects {
            if effects.len() != ids.len() {
                return Err(Error::Contract(format!(
                    "{} ids for {} traced patients",
                    ids.len(),
                    effects.len()
                )));
            }
            for e in effects {
                rec.push(e.xi.to_string());
                rec.push(e.tau.to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
