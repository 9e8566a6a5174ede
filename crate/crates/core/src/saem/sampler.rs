//! The Metropolis-within-Gibbs chain and its checkpointable state.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationReport};
use crate::likelihood::{
    apply_identifiability, compute_stats, fixed_effect_prior, maximization_step,
    fixed_effects_prior, patient_sq_residuals, patient_survival, random_effects_prior, Counts,
    LatentState, SufficientStats, LN_SQRT_2PI,
};
use crate::model::{FixedEffect, PatientRecord, PopulationParams};

use super::init::{initialize, InitialState};
use super::{
    Averager, BlockRates, Diagnostics, FitResult, ProposalStds, SaemConfig, TraceRow,
};

pub const CHECKPOINT_VERSION: u32 = 1;

const STALL_RATE: f64 = 0.01;

/// Which data attachments drive the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Joint,
    /// Survival term dropped and the survival fixed effects held still.
    LongitudinalOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Counter {
    accepted: u64,
    proposed: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Everything needed to continue the chain bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChainState {
    version: u32,
    config: SaemConfig,
    mode: Mode,
    n_patients: usize,
    n_visits: usize,
    iteration: usize,
    latent: LatentState,
    params: PopulationParams,
    stats: Option<SufficientStats>,
    rng: ChaCha8Rng,
    /// Log proposal stds of the fixed-effect blocks.
    log_fixed_scale: [f64; 4],
    /// Per-patient log multiplier of the `(xi, tau)` proposal.
    log_patient_scale: Vec<f64>,
    total_fixed: [Counter; 4],
    total_patients: Counter,
    window_fixed: [Counter; 4],
    window_patients: Vec<Counter>,
    adapt_windows: usize,
    stalled_windows: usize,
    /// Per-patient squared residuals and survival log-likelihood of the draw.
    sq_resid: Vec<f64>,
    surv_ll: Vec<f64>,
    averager: Averager,
    trace: Vec<TraceRow>,
}

/// One SAEM chain over a borrowed dataset.
pub struct Sampler<'a> {
    records: &'a [PatientRecord],
    counts: Counts,
    s: ChainState,
    scratch: Vec<f64>,
}

fn validate_records(records: &[PatientRecord]) -> Result<()> {
    let mut report = ValidationReport::default();
    for r in records {
        if let Err(e) = r.validate() {
            report.push(Some(&r.id), e.to_string());
        }
    }
    if report.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(report))
    }
}

fn fixed_index(w: FixedEffect) -> usize {
    match w {
        FixedEffect::G => 0,
        FixedEffect::V0 => 1,
        FixedEffect::Nu => 2,
        FixedEffect::Rho => 3,
    }
}

impl<'a> Sampler<'a> {
    /// Validates inputs, initializes per `config.init` and prepares a joint chain.
    pub fn new(records: &'a [PatientRecord], config: &SaemConfig) -> Result<Self> {
        config.validate()?;
        validate_records(records)?;
        let init = initialize(records, config)?;
        Self::from_state(records, config, Mode::Joint, init)
    }

    pub fn from_state(
        records: &'a [PatientRecord],
        config: &SaemConfig,
        mode: Mode,
        init: InitialState,
    ) -> Result<Self> {
        config.validate()?;
        if init.latent.effects.len() != records.len() {
            return Err(Error::Contract(format!(
                "{} records but {} initial effects",
                records.len(),
                init.latent.effects.len()
            )));
        }
        init.params.validate()?;
        let counts = Counts::of(records);
        let p = config.proposal_stds;
        let n = records.len();
        let mut s = ChainState {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            mode,
            n_patients: counts.n_patients,
            n_visits: counts.n_visits,
            iteration: 0,
            latent: init.latent,
            params: init.params,
            stats: None,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            log_fixed_scale: FixedEffect::ALL.map(|w| p.fixed(w).ln()),
            log_patient_scale: vec![0.0; n],
            total_fixed: [Counter::default(); 4],
            total_patients: Counter::default(),
            window_fixed: [Counter::default(); 4],
            window_patients: vec![Counter::default(); n],
            adapt_windows: 0,
            stalled_windows: 0,
            sq_resid: Vec::new(),
            surv_ll: Vec::new(),
            averager: Averager::default(),
            trace: Vec::with_capacity(config.n_iterations),
        };
        refresh_caches(records, &mut s);
        if mode == Mode::Joint {
            if let Some(i) = s.surv_ll.iter().position(|v| !v.is_finite()) {
                return Err(Error::Contract(format!(
                    "initial state is infeasible for patient {}",
                    records[i].id
                )));
            }
        }
        Ok(Self {
            records,
            counts,
            s,
            scratch: Vec::with_capacity(n),
        })
    }

    pub fn iteration(&self) -> usize {
        self.s.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.s.iteration >= self.s.config.n_iterations
    }

    pub fn params(&self) -> &PopulationParams {
        &self.s.params
    }

    pub fn latent(&self) -> &LatentState {
        &self.s.latent
    }

    pub fn stats(&self) -> Option<&SufficientStats> {
        self.s.stats.as_ref()
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.s.trace
    }

    /// Current proposal stds including the mean patient multiplier.
    pub fn proposal_stds(&self) -> ProposalStds {
        let f = self.s.log_fixed_scale.map(f64::exp);
        let n = self.s.log_patient_scale.len().max(1) as f64;
        let m = (self.s.log_patient_scale.iter().sum::<f64>() / n).exp();
        let base = self.s.config.proposal_stds;
        ProposalStds {
            g_tilde: f[0],
            v0_tilde: f[1],
            nu_tilde: f[2],
            rho_tilde: f[3],
            xi: base.xi * m,
            tau: base.tau * m,
        }
    }

    pub fn current_state(&self) -> InitialState {
        InitialState {
            latent: self.s.latent.clone(),
            params: self.s.params,
        }
    }

    /// Runs at most `n` further iterations.
    pub fn run(&mut self, n: usize) {
        for _ in 0..n {
            if self.is_finished() {
                break;
            }
            self.step();
        }
    }

    pub fn run_to_end(&mut self) {
        let n = self.s.config.n_iterations;
        while !self.is_finished() {
            self.step();
            let k = self.s.iteration;
            if k % 5000 == 0 || k == n {
                log::info!(
                    "iteration {k}/{n}: sigma={:.5} t0={:.4} loglik={:.3}",
                    self.s.params.sigma,
                    self.s.params.t0,
                    self.s.trace.last().map_or(f64::NAN, |r| r.loglik)
                );
            }
        }
    }

    /// One full SAEM iteration.
    pub fn step(&mut self) {
        if self.is_finished() {
            return;
        }
        let k = self.s.iteration;
        let blocks: &[FixedEffect] = match self.s.mode {
            Mode::Joint => &FixedEffect::ALL,
            Mode::LongitudinalOnly => &[FixedEffect::G, FixedEffect::V0],
        };
        for &w in blocks {
            self.update_fixed(w);
        }
        self.update_patients();

        let records = self.records;
        let config = self.s.config.clone();
        let fresh = compute_stats(records, &self.s.latent, &self.s.params)
            .expect("sampler state matches its dataset");
        let gamma = config.step_size(k);
        match &mut self.s.stats {
            Some(st) => st.sa_update(&fresh, gamma),
            None => self.s.stats = Some(fresh),
        }
        let stats = self.s.stats.as_mut().expect("statistics exist after the first update");
        let mut params = maximization_step(stats, self.counts, config.variance_floor)
            .expect("statistics shapes match their dataset");
        apply_identifiability(&mut params, &mut self.s.latent, Some(stats));
        self.s.params = params;

        if (k + 1) % config.adaptation.window == 0 {
            self.end_window(k);
        }
        if k >= config.averaging_start() {
            self.s
                .averager
                .add(&self.s.params, &self.s.latent.fixed, &self.s.latent.effects);
        }
        let row = TraceRow {
            iteration: k,
            params: self.s.params,
            fixed: self.s.latent.fixed,
            loglik: self.current_loglik(),
            acceptance: self.rates(),
            effects: self.s.config.trace_latents.then(|| self.s.latent.effects.clone()),
        };
        self.s.trace.push(row);
        self.s.iteration += 1;
    }

    fn update_fixed(&mut self, w: FixedEffect) {
        let records = self.records;
        let s = &mut self.s;
        let idx = fixed_index(w);
        let step = s.log_fixed_scale[idx].exp();
        let z: f64 = s.rng.sample(StandardNormal);
        let u: f64 = s.rng.random();
        let current = s.latent.fixed.get(w);
        let proposal = current + step * z;
        let prior_cur = fixed_effect_prior(current, w, &s.params, &s.config.hyper);
        let prior_new = fixed_effect_prior(proposal, w, &s.params, &s.config.hyper);

        let mut fixed = s.latent.fixed;
        fixed.set(w, proposal);
        self.scratch.clear();
        let delta = if w.is_survival() {
            let surv = fixed.survival();
            let t0 = s.params.t0;
            self.scratch.extend(
                records
                    .iter()
                    .zip(&s.latent.effects)
                    .map(|(r, e)| patient_survival(r, e, &surv, t0)),
            );
            self.scratch.iter().sum::<f64>() - s.surv_ll.iter().sum::<f64>()
        } else {
            let long = fixed.longitudinal(s.params.t0);
            self.scratch.extend(
                records
                    .iter()
                    .zip(&s.latent.effects)
                    .map(|(r, e)| patient_sq_residuals(r, e, &long)),
            );
            let inv = 1.0 / (2.0 * s.params.sigma * s.params.sigma);
            (s.sq_resid.iter().sum::<f64>() - self.scratch.iter().sum::<f64>()) * inv
        };
        let log_alpha = delta + prior_new - prior_cur;
        let accept = log_alpha.is_finite() && u.ln() < log_alpha;
        if accept {
            s.latent.fixed = fixed;
            if w.is_survival() {
                std::mem::swap(&mut s.surv_ll, &mut self.scratch);
            } else {
                std::mem::swap(&mut s.sq_resid, &mut self.scratch);
            }
        }
        s.total_fixed[idx].record(accept);
        s.window_fixed[idx].record(accept);
    }

    fn update_patients(&mut self) {
        let records = self.records;
        let s = &mut self.s;
        let long = s.latent.fixed.longitudinal(s.params.t0);
        let surv = s.latent.fixed.survival();
        let p = s.params;
        let inv = 1.0 / (2.0 * p.sigma * p.sigma);
        let joint = s.mode == Mode::Joint;
        let prior = |xi: f64, tau: f64| {
            let a = (xi - p.mean_xi) / p.sigma_xi;
            let b = (tau - p.t0) / p.sigma_tau;
            -0.5 * (a * a + b * b)
        };
        let base = s.config.proposal_stds;
        for (i, r) in records.iter().enumerate() {
            let z1: f64 = s.rng.sample(StandardNormal);
            let z2: f64 = s.rng.sample(StandardNormal);
            let u: f64 = s.rng.random();
            let m = s.log_patient_scale[i].exp();
            let cur = s.latent.effects[i];
            let mut new = cur;
            new.xi += base.xi * m * z1;
            new.tau += base.tau * m * z2;

            let sq_new = patient_sq_residuals(r, &new, &long);
            let surv_new = if joint { patient_survival(r, &new, &surv, p.t0) } else { 0.0 };
            let surv_cur = if joint { s.surv_ll[i] } else { 0.0 };
            let log_alpha = (s.sq_resid[i] - sq_new) * inv + (surv_new - surv_cur)
                + prior(new.xi, new.tau)
                - prior(cur.xi, cur.tau);
            let accept = log_alpha.is_finite() && u.ln() < log_alpha;
            if accept {
                s.latent.effects[i] = new;
                s.sq_resid[i] = sq_new;
                if joint {
                    s.surv_ll[i] = surv_new;
                }
            }
            s.total_patients.record(accept);
            s.window_patients[i].record(accept);
        }
    }

    fn end_window(&mut self, k: usize) {
        let s = &mut self.s;
        let cfg = s.config.adaptation;
        let blocks: &[FixedEffect] = match s.mode {
            Mode::Joint => &FixedEffect::ALL,
            Mode::LongitudinalOnly => &[FixedEffect::G, FixedEffect::V0],
        };
        let pooled = s.window_patients.iter().fold(Counter::default(), |a, c| Counter {
            accepted: a.accepted + c.accepted,
            proposed: a.proposed + c.proposed,
        });
        let mut stalled: Vec<&str> = blocks
            .iter()
            .filter(|w| s.window_fixed[fixed_index(**w)].rate() < STALL_RATE)
            .map(|w| w.name())
            .collect();
        if pooled.proposed > 0 && pooled.rate() < STALL_RATE {
            stalled.push("patients");
        }
        if !stalled.is_empty() {
            s.stalled_windows += 1;
            log::warn!(
                "acceptance below 1% over iterations {}..={k} for blocks {}",
                k + 1 - cfg.window,
                stalled.join(", ")
            );
        }

        if cfg.enabled && k < s.config.burn_in_end() {
            let gain = 1.0 / ((s.adapt_windows + 1) as f64).sqrt();
            for &w in blocks {
                let i = fixed_index(w);
                s.log_fixed_scale[i] += gain * (s.window_fixed[i].rate() - cfg.target);
            }
            for (ls, c) in s.log_patient_scale.iter_mut().zip(&s.window_patients) {
                *ls += gain * (c.rate() - cfg.target);
            }
            s.adapt_windows += 1;
        }
        s.window_fixed = [Counter::default(); 4];
        s.window_patients.iter_mut().for_each(|c| *c = Counter::default());
    }

    fn rates(&self) -> BlockRates {
        let f = &self.s.total_fixed;
        BlockRates {
            g_tilde: f[0].rate(),
            v0_tilde: f[1].rate(),
            nu_tilde: f[2].rate(),
            rho_tilde: f[3].rate(),
            patients: self.s.total_patients.rate(),
        }
    }

    /// Total log-likelihood of the draw from the caches. The survival term is
    /// left out of a longitudinal-only chain.
    fn current_loglik(&self) -> f64 {
        let s = &self.s;
        let p = &s.params;
        let long = -(self.counts.n_visits as f64) * (p.sigma.ln() + LN_SQRT_2PI)
            - s.sq_resid.iter().sum::<f64>() / (2.0 * p.sigma * p.sigma);
        let surv = match s.mode {
            Mode::Joint => s.surv_ll.iter().sum::<f64>(),
            Mode::LongitudinalOnly => 0.0,
        };
        let re = random_effects_prior(&s.latent.effects, p).unwrap_or(f64::NAN);
        let fe = fixed_effects_prior(&s.latent.fixed, p, &s.config.hyper)
            .unwrap_or(f64::NAN);
        long + surv + re + fe
    }

    /// Serializes the full chain state as versioned JSON.
    pub fn checkpoint(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.s)?)
    }

    /// Rebuilds a sampler from [`Sampler::checkpoint`] output.
    pub fn restore(records: &'a [PatientRecord], json: &str) -> Result<Self> {
        let s: ChainState = serde_json::from_str(json)?;
        if s.version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                s.version
            )));
        }
        let counts = Counts::of(records);
        if counts.n_patients != s.n_patients || counts.n_visits != s.n_visits {
            return Err(Error::Input(format!(
                "checkpoint was taken on {} patients / {} visits, dataset has {} / {}",
                s.n_patients, s.n_visits, counts.n_patients, counts.n_visits
            )));
        }
        Ok(Self {
            records,
            counts,
            scratch: Vec::with_capacity(records.len()),
            s,
        })
    }

    /// Averaged estimates over the final window, or the last draw when the
    /// window is empty.
    pub fn finish(self) -> Result<FitResult> {
        let diagnostics = Diagnostics {
            acceptance: self.rates(),
            stalled_windows: self.s.stalled_windows,
            final_proposal_stds: self.proposal_stds(),
        };
        let s = self.s;
        let (params, latent_fixed, effects) = if s.config.n_rm_iterations > 0 {
            let m = s.averager.finish()?;
            (m.params, m.latent_fixed, m.effects)
        } else {
            (s.params, s.latent.fixed, s.latent.effects)
        };
        let individual_effects: BTreeMap<_, _> = self
            .records
            .iter()
            .map(|r| r.id.clone())
            .zip(effects)
            .collect();
        Ok(FitResult {
            params,
            hyper: s.config.hyper,
            latent_fixed,
            individual_effects,
            trace: s.trace,
            diagnostics,
        })
    }
}

fn refresh_caches(records: &[PatientRecord], s: &mut ChainState) {
    let long = s.latent.fixed.longitudinal(s.params.t0);
    let surv = s.latent.fixed.survival();
    s.sq_resid = records
        .iter()
        .zip(&s.latent.effects)
        .map(|(r, e)| patient_sq_residuals(r, e, &long))
        .collect();
    s.surv_ll = match s.mode {
        Mode::Joint => records
            .iter()
            .zip(&s.latent.effects)
            .map(|(r, e)| patient_survival(r, e, &surv, s.params.t0))
            .collect(),
        Mode::LongitudinalOnly => vec![0.0; records.len()],
    };
}
