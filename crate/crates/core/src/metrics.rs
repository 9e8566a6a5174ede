//! Parameter-recovery and prediction-quality metrics.
//!
//! Survival metrics take event times and predictions on a common time axis.
//! The IPCW metrics weight observed events by the inverse of the
//! Kaplan-Meier estimate of the censoring distribution, evaluated just
//! before the event time, and survivors by its value at the evaluation time.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};

/// Points on the 48-point functional rating scale spanned by `[0, 1]`.
pub const RAW_SCALE: f64 = 48.0;

fn check_truth(truth: f64) -> Result<()> {
    if truth == 0.0 || !truth.is_finite() {
        return Err(Error::Domain(format!("relative metrics need a finite non-zero truth, got {truth}")));
    }
    Ok(())
}

fn non_empty(estimates: &[f64]) -> Result<()> {
    if estimates.is_empty() {
        return Err(Error::Input("no estimates".into()));
    }
    Ok(())
}

/// Relative estimation error in percent.
pub fn ree(estimate: f64, truth: f64) -> Result<f64> {
    check_truth(truth)?;
    Ok((estimate - truth) / truth * 100.0)
}

/// Mean relative error in percent.
pub fn relative_bias(estimates: &[f64], truth: f64) -> Result<f64> {
    check_truth(truth)?;
    non_empty(estimates)?;
    let sum: f64 = estimates.iter().map(|&e| (e - truth) / truth * 100.0).sum();
    Ok(sum / estimates.len() as f64)
}

/// Root mean squared relative error in percent.
pub fn rrmse(estimates: &[f64], truth: f64) -> Result<f64> {
    check_truth(truth)?;
    non_empty(estimates)?;
    let sum: f64 = estimates
        .iter()
        .map(|&e| {
            let r = (e - truth) / truth * 100.0;
            r * r
        })
        .sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

/// Empirical standard error across replicates and its ratio to the mean
/// estimate.
pub fn empirical_se(estimates: &[f64]) -> Result<(f64, f64)> {
    if estimates.len() < 2 {
        return Err(Error::Input("empirical SE needs at least two estimates".into()));
    }
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let ss: f64 = estimates.iter().map(|e| (e - mean) * (e - mean)).sum();
    let se = (ss / (m - 1.0)).sqrt();
    Ok((se, se / mean))
}

/// Exact two-sided 95% Clopper-Pearson interval for `successes` out of `trials`.
pub fn clopper_pearson(successes: usize, trials: usize) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(Error::Input(format!("invalid proportion {successes}/{trials}")));
    }
    let alpha = 0.05;
    let (x, n) = (successes as f64, trials as f64);
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0)
            .map_err(|e| Error::Domain(e.to_string()))?
            .inverse_cdf(alpha / 2.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(x + 1.0, n - x)
            .map_err(|e| Error::Domain(e.to_string()))?
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Fraction of intervals containing the truth.
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn coverage_rate(intervals: &[(f64, f64)], truth: f64) -> Result<Coverage> {
    if intervals.is_empty() {
        return Err(Error::Input("no intervals".into()));
    }
    let hits = intervals.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count();
    let (ci_low, ci_high) = clopper_pearson(hits, intervals.len())?;
    Ok(Coverage {
        rate: hits as f64 / intervals.len() as f64,
        ci_low,
        ci_high,
    })
}

/// Two-way, absolute-agreement, single-measure intraclass correlation
/// ICC(2,1) between two aligned vectors.
pub fn icc(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.len() != truth.len() || estimated.len() < 2 {
        return Err(Error::Input("ICC needs two aligned vectors of length >= 2".into()));
    }
    let n = estimated.len() as f64;
    let k = 2.0;
    let grand = (estimated.iter().sum::<f64>() + truth.iter().sum::<f64>()) / (n * k);
    let mean_a = estimated.iter().sum::<f64>() / n;
    let mean_b = truth.iter().sum::<f64>() / n;
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    if var(estimated, mean_a) == 0.0 && var(truth, mean_b) == 0.0 {
        return Err(Error::Degenerate("ICC undefined when both vectors are constant".into()));
    }
    let mut ss_rows = 0.0;
    let mut ss_total = 0.0;
    for (a, b) in estimated.iter().zip(truth) {
        let row = 0.5 * (a + b);
        ss_rows += k * (row - grand) * (row - grand);
        ss_total += (a - grand) * (a - grand) + (b - grand) * (b - grand);
    }
    let ss_cols = n * ((mean_a - grand).powi(2) + (mean_b - grand).powi(2));
    let ss_err = ss_total - ss_rows - ss_cols;
    let ms_rows = ss_rows / (n - 1.0);
    let ms_cols = ss_cols / (k - 1.0);
    let ms_err = ss_err / ((n - 1.0) * (k - 1.0));
    Ok((ms_rows - ms_err) / (ms_rows + (k - 1.0) * ms_err + k * (ms_cols - ms_err) / n))
}

fn check_survival_inputs(n: usize, times: &[f64], events: &[bool]) -> Result<()> {
    if times.len() != n || events.len() != n {
        return Err(Error::Input("survival inputs are not aligned".into()));
    }
    if n == 0 {
        return Err(Error::Input("no patients".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Input("event times must be finite".into()));
    }
    Ok(())
}

/// Fenwick tree of counts over risk ranks.
struct RankCounts(Vec<u64>);

impl RankCounts {
    fn new(n: usize) -> Self {
        Self(vec![0; n + 1])
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks strictly below `rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's concordance restricted to pairs anchored on an observed event
/// at or before `horizon`.
///
/// A pair `(i, j)` is comparable when `i` has an observed event with
/// `T_i <= horizon` and either `T_i < T_j`, or `T_i == T_j` with `j`
/// censored. It is concordant when `risk_i > risk_j`; equal risks count one
/// half.
pub fn c_index(risk: &[f64], times: &[f64], events: &[bool], horizon: f64) -> Result<f64> {
    check_survival_inputs(risk.len(), times, events)?;
    if risk.iter().any(|r| r.is_nan()) {
        return Err(Error::Input("risk scores must not be NaN".into()));
    }
    let n = risk.len();
    let mut sorted_risk: Vec<f64> = risk.to_vec();
    sorted_risk.sort_by(f64::total_cmp);
    sorted_risk.dedup();
    let rank = |r: f64| sorted_risk.partition_point(|&v| v < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = RankCounts::new(sorted_risk.len());
    let mut inserted = 0u64;
    let (mut concordant, mut tied, mut comparable) = (0u64, 0u64, 0u64);
    let mut g = 0;
    while g < n {
        let t = times[order[g]];
        let mut end = g;
        while end < n && times[order[end]] == t {
            end += 1;
        }
        let group = &order[g..end];
        for &j in group.iter().filter(|&&j| !events[j]) {
            tree.add(rank(risk[j]));
            inserted += 1;
        }
        if t <= horizon {
            for &i in group.iter().filter(|&&i| events[i]) {
                let r = rank(risk[i]);
                let below = tree.below(r);
                let not_above = tree.below(r + 1);
                concordant += below;
                tied += not_above - below;
                comparable += inserted;
            }
        }
        for &i in group.iter().filter(|&&i| events[i]) {
            tree.add(rank(risk[i]));
            inserted += 1;
        }
        g = end;
    }
    if comparable == 0 {
        return Err(Error::Degenerate("no comparable pairs".into()));
    }
    Ok((2 * concordant + tied) as f64 / (2 * comparable) as f64)
}

/// Kaplan-Meier estimate of the censoring survival function.
#[derive(Debug, Clone)]
pub struct CensoringKm {
    /// Distinct censoring times and the survival value right after each.
    steps: Vec<(f64, f64)>,
}

impl CensoringKm {
    /// Events are taken to precede censorings recorded at the same time.
    pub fn fit(times: &[f64], events: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let mut steps = Vec::new();
        let mut surv = 1.0;
        let mut at_risk = times.len();
        let mut g = 0;
        while g < order.len() {
            let t = times[order[g]];
            let mut end = g;
            while end < order.len() && times[order[end]] == t {
                end += 1;
            }
            let censored = order[g..end].iter().filter(|&&i| !events[i]).count();
            if censored > 0 {
                surv *= 1.0 - censored as f64 / at_risk as f64;
                steps.push((t, surv));
            }
            at_risk -= end - g;
            g = end;
        }
        Self { steps }
    }

    /// `G(t) = P(C > t)`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.steps.partition_point(|(s, _)| *s <= t);
        if k == 0 { 1.0 } else { self.steps[k - 1].1 }
    }

    /// `G(t-) = P(C >= t)`.
    pub fn before(&self, t: f64) -> f64 {
        let k = self.steps.partition_point(|(s, _)| *s < t);
        if k == 0 { 1.0 } else { self.steps[k - 1].1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub times: Vec<f64>,
    pub auc: Vec<f64>,
    pub mean: f64,
}

/// IPCW cumulative/dynamic AUC at each evaluation time and their plain mean.
///
/// `survival[i][k]` is patient `i`'s predicted survival at `eval_times[k]`;
/// the risk score is `1 - survival`. Cases at `t` are observed events with
/// `T_i <= t`, controls are patients with `T_j > t`.
pub fn cumulative_dynamic_auc(
    survival: &[Vec<f64>],
    times: &[f64],
    events: &[bool],
    eval_times: &[f64],
) -> Result<AucResult> {
    check_survival_inputs(survival.len(), times, events)?;
    if eval_times.is_empty() {
        return Err(Error::Input("no evaluation times".into()));
    }
    if survival.iter().any(|s| s.len() != eval_times.len()) {
        return Err(Error::Input("each patient needs one prediction per evaluation time".into()));
    }
    let km = CensoringKm::fit(times, events);
    let mut auc = Vec::with_capacity(eval_times.len());
    for (k, &t) in eval_times.iter().enumerate() {
        let mut cases: Vec<(f64, f64)> = Vec::new();
        let mut controls: Vec<f64> = Vec::new();
        for i in 0..times.len() {
            let risk = 1.0 - survival[i][k];
            if events[i] && times[i] <= t {
                let g = km.before(times[i]);
                if g <= 0.0 {
                    return Err(Error::Degenerate(format!(
                        "censoring survival is zero at event time {}",
                        times[i]
                    )));
                }
                cases.push((risk, 1.0 / g));
            } else if times[i] > t {
                controls.push(risk);
            }
        }
        if cases.is_empty() || controls.is_empty() {
            return Err(Error::Degenerate(format!("AUC at {t} needs both cases and controls")));
        }
        controls.sort_by(f64::total_cmp);
        let mut num = 0.0;
        let mut weight = 0.0;
        for (r, w) in &cases {
            let below = controls.partition_point(|c| c < r);
            let not_above = controls.partition_point(|c| c <= r);
            num += w * (below as f64 + 0.5 * (not_above - below) as f64);
            weight += w;
        }
        auc.push(num / (weight * controls.len() as f64));
    }
    let mean = auc.iter().sum::<f64>() / auc.len() as f64;
    Ok(AucResult {
        times: eval_times.to_vec(),
        auc,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrierResult {
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    /// Trapezoid integral over the grid divided by its span.
    pub integrated: f64,
}

/// IPCW Brier score at each grid time and its time average.
///
/// `survival[i][k]` is the predicted survival of patient `i` at `grid[k]`.
/// A single-point grid returns that point's score.
pub fn integrated_brier(
    survival: &[Vec<f64>],
    grid: &[f64],
    times: &[f64],
    events: &[bool],
) -> Result<BrierResult> {
    check_survival_inputs(survival.len(), times, events)?;
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("the grid must be non-empty and increasing".into()));
    }
    if survival.iter().any(|s| s.len() != grid.len()) {
        return Err(Error::Input("each patient needs one prediction per grid time".into()));
    }
    let km = CensoringKm::fit(times, events);
    let n = times.len() as f64;
    let mut scores = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let g_t = km.at(t);
        let mut sum = 0.0;
        for i in 0..times.len() {
            let s = survival[i][k];
            if times[i] <= t && events[i] {
                let g = km.before(times[i]);
                if g <= 0.0 {
                    return Err(Error::Degenerate(format!(
                        "censoring survival is zero at event time {}",
                        times[i]
                    )));
                }
                sum += s * s / g;
            } else if times[i] > t {
                if g_t <= 0.0 {
                    return Err(Error::Degenerate(format!("censoring survival is zero at {t}")));
                }
                sum += (1.0 - s) * (1.0 - s) / g_t;
            }
        }
        scores.push(sum / n);
    }
    let integrated = if grid.len() == 1 {
        scores[0]
    } else {
        let area: f64 = grid
            .windows(2)
            .zip(scores.windows(2))
            .map(|(t, s)| 0.5 * (s[0] + s[1]) * (t[1] - t[0]))
            .sum();
        area / (grid[grid.len() - 1] - grid[0])
    };
    Ok(BrierResult {
        grid: grid.to_vec(),
        scores,
        integrated,
    })
}

/// Evaluation grid of the integrated Brier score: 30 points up to 1.5 years.
pub fn default_brier_grid() -> Vec<f64> {
    (1..=30).map(|k| 1.5 * k as f64 / 30.0).collect()
}

/// Mean absolute and mean squared error after multiplying differences by `scale`.
pub fn mae_mse(predictions: &[f64], observations: &[f64], scale: f64) -> Result<(f64, f64)> {
    if predictions.len() != observations.len() || predictions.is_empty() {
        return Err(Error::Input("predictions and observations must be aligned and non-empty".into()));
    }
    let n = predictions.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, o) in predictions.iter().zip(observations) {
        let d = (p - o) * scale;
        abs += d.abs();
        sq += d * d;
    }
    Ok((abs / n, sq / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecovery {
    pub name: String,
    pub truth: f64,
    pub rb: f64,
    pub rrmse: f64,
    pub ree: Vec<f64>,
    pub se_emp: f64,
    pub rse_emp: f64,
    /// Coverage of `estimate +- 1.96 SE_emp`.
    pub coverage: Coverage,
}

impl ParameterRecovery {
    pub fn compute(name: &str, estimates: &[f64], truth: f64) -> Result<Self> {
        let (se_emp, rse_emp) = empirical_se(estimates)?;
        let intervals: Vec<(f64, f64)> = estimates
            .iter()
            .map(|e| (e - 1.96 * se_emp, e + 1.96 * se_emp))
            .collect();
        Ok(Self {
            name: name.to_string(),
            truth,
            rb: relative_bias(estimates, truth)?,
            rrmse: rrmse(estimates, truth)?,
            ree: estimates.iter().map(|&e| ree(e, truth)).collect::<Result<_>>()?,
            se_emp,
            rse_emp,
            coverage: coverage_rate(&intervals, truth)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub parameters: Vec<ParameterRecovery>,
    pub icc_tau: Vec<f64>,
    pub icc_xi: Vec<f64>,
}

impl RecoveryReport {
    pub fn mean_icc_tau(&self) -> f64 {
        self.icc_tau.iter().sum::<f64>() / self.icc_tau.len().max(1) as f64
    }

    pub fn mean_icc_xi(&self) -> f64 {
        self.icc_xi.iter().sum::<f64>() / self.icc_xi.len().max(1) as f64
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterRecovery> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per parameter: RB, RRMSE and coverage with its interval, all
    /// in percent.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parameter", "truth", "rb", "rrmse", "se_emp", "rse_emp", "cr", "cr_low", "cr_high"])?;
        for p in &self.parameters {
            w.write_record([
                p.name.clone(),
                p.truth.to_string(),
                p.rb.to_string(),
                p.rrmse.to_string(),
                p.se_emp.to_string(),
                p.rse_emp.to_string(),
                (100.0 * p.coverage.rate).to_string(),
                (100.0 * p.coverage.ci_low).to_string(),
                (100.0 * p.coverage.ci_high).to_string(),
            ])?;
        }
        for (name, v) in [("icc_tau", self.mean_icc_tau()), ("icc_xi", self.mean_icc_xi())] {
            let mut row = vec![String::new(); 9];
            row[0] = name.to_string();
            row[2] = v.to_string();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetric {
    pub horizon: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub n_patients: usize,
    /// Raw-score units; absent when no score predictions were scored.
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub c_index: Vec<HorizonMetric>,
    pub auc: AucResult,
    pub ibs: Option<f64>,
}

impl PredictionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "horizon", "value"])?;
        let mut put = |name: &str, h: Option<f64>, v: Option<f64>| -> Result<()> {
            if let Some(v) = v {
                w.write_record([name.to_string(), h.map(|h| h.to_string()).unwrap_or_default(), v.to_string()])?;
            }
            Ok(())
        };
        put("mae", None, self.mae)?;
        put("mse", None, self.mse)?;
        for c in &self.c_index {
            put("c_index", Some(c.horizon), Some(c.value))?;
        }
        for (t, a) in self.auc.times.iter().zip(&self.auc.auc) {
            put("auc", Some(*t), Some(*a))?;
        }
        put("mean_cumulative_auc", None, Some(self.auc.mean))?;
        put("ibs", None, self.ibs)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_bias(&[2.0, 2.0], 2.0).unwrap(), 0.0);
        assert!(relative_bias(&[2.2, 1.8], 2.0).unwrap().abs() < 1e-12);
        assert!((ree(1.1 * 3.0, 3.0).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(rrmse(&[4.0], 4.0).unwrap(), 0.0);
        assert!(matches!(relative_bias(&[1.0], 0.0), Err(Error::Domain(_))));
        assert!(empirical_se(&[1.0]).is_err());
    }

    #[test]
    fn clopper_pearson_reference_values() {
        let c = coverage_rate(&vec![(0.0, 2.0); 95].into_iter().chain(vec![(3.0, 4.0); 5]).collect::<Vec<_>>(), 1.0).unwrap();
        assert_eq!(c.rate, 0.95);
        assert!((100.0 * c.ci_low - 88.7).abs() < 0.05, "{c:?}");
        assert!((100.0 * c.ci_high - 98.4).abs() < 0.05, "{c:?}");
        let (lo, hi) = clopper_pearson(0, 1).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 0.975).abs() < 1e-12);
        let all = coverage_rate(&[(0.0, 1.0); 7], 0.5).unwrap();
        assert_eq!((all.rate, all.ci_high), (1.0, 1.0));
        assert!(coverage_rate(&[], 0.0).is_err());
    }

    #[test]
    fn icc_cases() {
        let t = [1.0, 2.0, 4.0, 3.5];
        assert!((icc(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!(icc(&neg, &t).unwrap() < 0.0);
        assert!(icc(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        // a constant offset lowers absolute agreement
        let shifted: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert!(icc(&shifted, &t).unwrap() < 0.9);
    }

    #[test]
    fn c_index_trivial_cases() {
        let times = [1.0, 2.0, 3.0, 4.0];
        let events = [true, true, true, false];
        let perfect = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(c_index(&perfect, &times, &events, 10.0).unwrap(), 1.0);
        assert_eq!(c_index(&[1.0; 4], &times, &events, 10.0).unwrap(), 0.5);
        assert!(c_index(&perfect, &times, &[false; 4], 10.0).is_err());
    }

    #[test]
    fn perfect_auc_and_brier_cases() {
        let times = [0.5, 0.8, 2.0, 3.0];
        let events = [true, true, false, true];
        let surv: Vec<Vec<f64>> = times.iter().map(|&t| vec![if t <= 1.0 { 0.1 } else { 0.9 }]).collect();
        let a = cumulative_dynamic_auc(&surv, &times, &events, &[1.0]).unwrap();
        assert_eq!(a.mean, 1.0);

        let no_cens = [true; 4];
        let grid = [0.6, 1.0, 2.5];
        let oracle: Vec<Vec<f64>> = times
            .iter()
            .map(|&ti| grid.iter().map(|&t| if t < ti { 1.0 } else { 0.0 }).collect())
            .collect();
        assert_eq!(integrated_brier(&oracle, &grid, &times, &no_cens).unwrap().integrated, 0.0);
        let half = vec![vec![0.5; 3]; 4];
        let b = integrated_brier(&half, &grid, &times, &no_cens).unwrap();
        assert!(b.scores.iter().all(|s| (s - 0.25).abs() < 1e-15));
        assert!((b.integrated - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mae_mse_cases() {
        assert_eq!(mae_mse(&[0.3, 0.4], &[0.3, 0.4], RAW_SCALE).unwrap(), (0.0, 0.0));
        let obs = [0.25, 0.5];
        let pred: Vec<f64> = obs.iter().map(|o| o + 2.0 / RAW_SCALE).collect();
        let (mae, mse) = mae_mse(&pred, &obs, RAW_SCALE).unwrap();
        assert!((mae - 2.0).abs() < 1e-12 && (mse - 4.0).abs() < 1e-12);
        assert!(mae_mse(&[], &[], RAW_SCALE).is_err());
    }

    #[test]
    fn censoring_km_steps() {
        // censorings at 2 (1 of 3 at risk) and 3 (1 of 1)
        let km = CensoringKm::fit(&[1.0, 2.0, 2.0, 3.0], &[true, false, true, false]);
        assert_eq!(km.at(1.5), 1.0);
        assert!((km.at(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.before(2.0), 1.0);
        assert_eq!(km.at(3.0), 0.0);
    }
}
