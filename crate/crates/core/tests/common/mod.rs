//! Independent oracles and instance generators shared by the test targets.
#![allow(dead_code)]

use latent_joint::likelihood::{compute_stats, Counts, LatentState, SufficientStats};
use latent_joint::model::{
    Hyperparams, IndividualEffects, LatentFixedEffects, PatientRecord, PopulationParams, Visit,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub records: Vec<PatientRecord>,
    pub state: LatentState,
    pub params: PopulationParams,
    pub hyper: Hyperparams,
}

/// Random feasible instance: every observed event falls after its `tau`.
pub fn instance(seed: u64, max_patients: usize, max_visits: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_patients);
    let mut records = Vec::new();
    let mut effects = Vec::new();
    for i in 0..n {
        let e = IndividualEffects::new(rng.random_range(-1.0..1.0), rng.random_range(3.0..7.0));
        let mut t = rng.random_range(2.0..6.0);
        let visits: Vec<Visit> = (0..rng.random_range(1..=max_visits))
            .map(|_| {
                t += rng.random_range(0.05..0.5);
                Visit { time: t, value: rng.random_range(0.0..1.0) }
            })
            .collect();
        let last = visits.last().unwrap().time;
        let observed = rng.random_bool(0.5);
        let event_time = if observed { last.max(e.tau) + rng.random_range(0.01..1.0) } else { last };
        records.push(PatientRecord {
            id: format!("p{i}"),
            visits,
            event_time,
            event_observed: observed,
        });
        effects.push(e);
    }
    let fixed = LatentFixedEffects {
        g_tilde: rng.random_range(0.0..3.0),
        v0_tilde: rng.random_range(-1.0..1.0),
        nu_tilde: rng.random_range(-2.5..0.0),
        rho_tilde: rng.random_range(-0.5..1.5),
    };
    let params = PopulationParams {
        t0: rng.random_range(3.0..7.0),
        sigma_tau: rng.random_range(0.3..2.0),
        sigma_xi: rng.random_range(0.2..1.0),
        mean_xi: rng.random_range(-0.3..0.3),
        mean_g_tilde: fixed.g_tilde + rng.random_range(-0.05..0.05),
        mean_v0_tilde: fixed.v0_tilde + rng.random_range(-0.05..0.05),
        mean_nu_tilde: fixed.nu_tilde + rng.random_range(-0.05..0.05),
        mean_rho_tilde: fixed.rho_tilde + rng.random_range(-0.05..0.05),
        sigma: rng.random_range(0.01..0.2),
    };
    let hyper = Hyperparams {
        sigma_g_tilde: rng.random_range(0.005..0.5),
        sigma_v0_tilde: rng.random_range(0.005..0.5),
        sigma_nu_tilde: rng.random_range(0.005..0.5),
        sigma_rho_tilde: rng.random_range(0.005..0.5),
    };
    Instance {
        records,
        state: LatentState { fixed, effects },
        params,
        hyper,
    }
}

pub fn coordinate(p: &mut PopulationParams, i: usize) -> &mut f64 {
    match i {
        0 => &mut p.t0,
        1 => &mut p.sigma_tau,
        2 => &mut p.sigma_xi,
        3 => &mut p.mean_xi,
        4 => &mut p.mean_g_tilde,
        5 => &mut p.mean_v0_tilde,
        6 => &mut p.mean_nu_tilde,
        7 => &mut p.mean_rho_tilde,
        _ => &mut p.sigma,
    }
}

/// Statistics averaged over several random states of one dataset, as in a
/// stochastic-approximation run.
pub fn snapshot(seed: u64) -> (SufficientStats, Counts, Hyperparams) {
    let base = instance(seed, 12, 6);
    let mut stats = compute_stats(&base.records, &base.state, &base.params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for k in 2..6 {
        let mut state = base.state.clone();
        for e in &mut state.effects {
            e.xi += rng.random_range(-0.2..0.2);
            // only earlier shifts, so observed events stay feasible
            e.tau -= rng.random_range(0.0..0.3);
        }
        state.fixed.g_tilde += rng.random_range(-0.1..0.1);
        let s = compute_stats(&base.records, &state, &base.params).unwrap();
        stats.sa_update(&s, 1.0 / k as f64);
    }
    (stats, Counts::of(&base.records), base.hyper)
}

/// Tanh-sinh quadrature; tolerates integrable endpoint singularities.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mut prev = f64::NAN;
    let mut h = 0.5;
    for _ in 0..12 {
        let mut sum = 0.0;
        let n = (6.0 / h) as i64;
        for k in -n..=n {
            let t = k as f64 * h;
            let u = std::f64::consts::FRAC_PI_2 * t.sinh();
            let x = u.tanh();
            let w = std::f64::consts::FRAC_PI_2 * t.cosh() / u.cosh().powi(2);
            // distance to the nearer endpoint, kept exact near each end
            let dist = 1.0 / (u.abs().exp() * u.abs().cosh());
            let point = if x < 0.0 { a + half * dist } else { b - half * dist };
            if dist > 0.0 && point > a && point < b {
                sum += w * f(point);
            }
        }
        let est = half * h * sum;
        if (est - prev).abs() <= 1e-14 * est.abs().max(1e-300) {
            return est;
        }
        prev = est;
        h *= 0.5;
    }
    prev
}

pub fn brute_c_index(risk: &[f64], times: &[f64], events: &[bool], horizon: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..risk.len() {
        if !events[i] || times[i] > horizon {
            continue;
        }
        for j in 0..risk.len() {
            if i == j {
                continue;
            }
            let comparable = times[i] < times[j] || (times[i] == times[j] && !events[j]);
            if !comparable {
                continue;
            }
            den += 1.0;
            if risk[i] > risk[j] {
                num += 1.0;
            } else if risk[i] == risk[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Product-limit estimate of P(C > t), or P(C >= t) when `left` is set.
pub fn brute_km(times: &[f64], events: &[bool], t: f64, left: bool) -> f64 {
    let mut distinct: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(_, e)| !**e)
        .map(|(s, _)| *s)
        .collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut g = 1.0;
    for s in distinct {
        if (left && s >= t) || (!left && s > t) {
            break;
        }
        let at_risk = times.iter().filter(|&&x| x >= s).count() as f64;
        let d = times.iter().zip(events).filter(|(x, e)| **x == s && !**e).count() as f64;
        g *= 1.0 - d / at_risk;
    }
    g
}

pub fn brute_auc(surv: &[f64], times: &[f64], events: &[bool], t: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..times.len() {
        if !(events[i] && times[i] <= t) {
            continue;
        }
        let w = 1.0 / brute_km(times, events, times[i], true);
        for j in 0..times.len() {
            if times[j] <= t {
                continue;
            }
            den += w;
            let (ri, rj) = (1.0 - surv[i], 1.0 - surv[j]);
            if ri > rj {
                num += w;
            } else if ri == rj {
                num += 0.5 * w;
            }
        }
    }
    num / den
}

pub fn brute_brier(surv: &[f64], times: &[f64], events: &[bool], t: f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..times.len() {
        if times[i] <= t && events[i] {
            sum += surv[i].powi(2) / brute_km(times, events, times[i], true);
        } else if times[i] > t {
            sum += (1.0 - surv[i]).powi(2) / brute_km(times, events, t, false);
        }
    }
    sum / times.len() as f64
}

/// ICC(2,1) for an n x k table from textbook mean squares.
pub fn brute_icc(table: &[Vec<f64>]) -> f64 {
    let n = table.len() as f64;
    let k = table[0].len() as f64;
    let grand: f64 = table.iter().flatten().sum::<f64>() / (n * k);
    let row_means: Vec<f64> = table.iter().map(|r| r.iter().sum::<f64>() / k).collect();
    let col_means: Vec<f64> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c]).sum::<f64>() / n)
        .collect();
    let msr = k * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n - 1.0);
    let msc = n * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (k - 1.0);
    let mut sse = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (c, x) in r.iter().enumerate() {
            sse += (x - row_means[i] - col_means[c] + grand).powi(2);
        }
    }
    let mse = sse / ((n - 1.0) * (k - 1.0));
    (msr - mse) / (msr + (k - 1.0) * mse + k * (msc - mse) / n)
}

pub struct Cohort {
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    pub surv: Vec<f64>,
}

/// Times on a coarse grid so that ties occur between events, censorings
/// and risks.
pub fn cohort(n: usize, seed: u64) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Cohort {
        times: Vec::new(),
        events: Vec::new(),
        surv: Vec::new(),
    };
    for _ in 0..n {
        c.times.push(rng.random_range(1..=12) as f64 * 0.25);
        c.events.push(rng.random_bool(0.6));
        c.surv.push(rng.random_range(0..=10) as f64 / 10.0);
    }
    c
}

