//! Personalize, predict and score steps shared by the command line and the
//! tests.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::io::{EffectsRow, PredictionKind, PredictionRow};
use crate::metrics::{
    c_index, cumulative_dynamic_auc, default_brier_grid, icc, integrated_brier, mae_mse,
    HorizonMetric, PredictionReport, RAW_SCALE,
};
use crate::model::{IndividualEffects, PatientRecord};
use crate::personalize::{personalize_all, predict_conditional_survival, predict_longitudinal, FittedModel};

/// MAP effects of every record from its first `k` visits.
pub fn personalize_records(records: &[PatientRecord], k: usize, model: &FittedModel) -> Result<Vec<EffectsRow>> {
    model.validate()?;
    let results = personalize_all(records, k, model);
    records
        .iter()
        .zip(results)
        .map(|(r, res)| {
            let res = res?;
            let used = k.min(r.visits.len());
            Ok(EffectsRow {
                patient_id: r.id.clone(),
                xi: res.effects.xi,
                tau: res.effects.tau,
                t_last: r.visits[used - 1].time,
                k_visits: used,
                log_posterior: res.map_objective,
                converged: res.converged,
            })
        })
        .collect()
}

/// Requested horizons merged with the integrated Brier grid, sorted.
pub fn survival_horizons(requested: &[f64], with_brier_grid: bool) -> Result<Vec<f64>> {
    if requested.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
        return Err(Error::Input("horizons must be finite and non-negative".into()));
    }
    let mut all = requested.to_vec();
    if with_brier_grid {
        all.extend(default_brier_grid());
    }
    all.sort_by(f64::total_cmp);
    all.dedup();
    Ok(all)
}

/// Conditional survival at `t_last + h` for each horizon and, when records
/// are given, predicted scores at every visit after `t_last`.
pub fn predict(
    model: &FittedModel,
    effects: &[EffectsRow],
    horizons: &[f64],
    records: Option<&[PatientRecord]>,
) -> Result<Vec<PredictionRow>> {
    model.validate()?;
    let by_id: HashMap<&str, &PatientRecord> = records
        .unwrap_or(&[])
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    let mut rows = Vec::new();
    for e in effects {
        let times: Vec<f64> = horizons.iter().map(|h| e.t_last + h).collect();
        let surv = predict_conditional_survival(e.effects(), model, e.t_last, &times)
            .map_err(|err| Error::Degenerate(format!("patient {}: {err}", e.patient_id)))?;
        for ((h, t), s) in horizons.iter().zip(&times).zip(surv) {
            rows.push(PredictionRow {
                patient_id: e.patient_id.clone(),
                kind: PredictionKind::Survival,
                t_last: e.t_last,
                horizon: *h,
                time: *t,
                value: s,
            });
        }
        if let Some(r) = by_id.get(e.patient_id.as_str()) {
            let later: Vec<f64> = r.visits.iter().map(|v| v.time).filter(|t| *t > e.t_last).collect();
            for (t, y) in later.iter().zip(predict_longitudinal(e.effects(), model, &later)) {
                rows.push(PredictionRow {
                    patient_id: e.patient_id.clone(),
                    kind: PredictionKind::Score,
                    t_last: e.t_last,
                    horizon: t - e.t_last,
                    time: *t,
                    value: y,
                });
            }
        }
    }
    Ok(rows)
}

struct PatientPredictions {
    t_last: f64,
    survival: BTreeMap<u64, f64>,
}

fn survival_at(p: &PatientPredictions, h: f64, id: &str) -> Result<f64> {
    p.survival
        .get(&h.to_bits())
        .copied()
        .ok_or_else(|| Error::Input(format!("patient {id}: no survival prediction at horizon {h}")))
}

/// Scores predictions against the full records.
///
/// Event times are measured from each patient's conditioning time; patients
/// whose event or censoring falls at or before it are not at risk and are
/// left out of the survival metrics. C-index and AUC are computed at
/// `horizons`, the integrated Brier score on the default grid when every
/// grid point was predicted.
pub fn prediction_report(
    preds: &[PredictionRow],
    records: &[PatientRecord],
    horizons: &[f64],
) -> Result<PredictionReport> {
    let mut patients: BTreeMap<&str, PatientPredictions> = BTreeMap::new();
    for p in preds.iter().filter(|p| p.kind == PredictionKind::Survival) {
        let entry = patients.entry(p.patient_id.as_str()).or_insert(PatientPredictions {
            t_last: p.t_last,
            survival: BTreeMap::new(),
        });
        entry.survival.insert(p.horizon.to_bits(), p.value);
    }
    let by_id: HashMap<&str, &PatientRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();

    let mut ids = Vec::new();
    let mut times = Vec::new();
    let mut events = Vec::new();
    for (id, p) in &patients {
        let r = by_id
            .get(id)
            .ok_or_else(|| Error::Input(format!("prediction for unknown patient {id}")))?;
        let t = r.event_time - p.t_last;
        if t > 0.0 {
            ids.push(*id);
            times.push(t);
            events.push(r.event_observed);
        }
    }
    if ids.is_empty() {
        return Err(Error::Degenerate("no patient at risk after conditioning".into()));
    }

    let table = |grid: &[f64]| -> Result<Vec<Vec<f64>>> {
        ids.iter()
            .map(|id| grid.iter().map(|h| survival_at(&patients[id], *h, id)).collect())
            .collect()
    };
    let at_horizons = table(horizons)?;
    let c = horizons
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let risk: Vec<f64> = at_horizons.iter().map(|s| 1.0 - s[k]).collect();
            Ok(HorizonMetric {
                horizon: h,
                value: c_index(&risk, &times, &events, h)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let auc = cumulative_dynamic_auc(&at_horizons, &times, &events, horizons)?;

    let grid = default_brier_grid();
    let ibs = match table(&grid) {
        Ok(s) => Some(integrated_brier(&s, &grid, &times, &events)?.integrated),
        Err(_) => None,
    };

    let mut pred_scores = Vec::new();
    let mut obs_scores = Vec::new();
    for p in preds.iter().filter(|p| p.kind == PredictionKind::Score) {
        let r = by_id
            .get(p.patient_id.as_str())
            .ok_or_else(|| Error::Input(format!("prediction for unknown patient {}", p.patient_id)))?;
        let v = r
            .visits
            .iter()
            .find(|v| v.time == p.time)
            .ok_or_else(|| Error::Input(format!("patient {}: no visit at {}", p.patient_id, p.time)))?;
        pred_scores.push(p.value);
        obs_scores.push(v.value);
    }
    let (mae, mse) = if pred_scores.is_empty() {
        (None, None)
    } else {
        let (a, s) = mae_mse(&pred_scores, &obs_scores, RAW_SCALE)?;
        (Some(a), Some(s))
    };

    Ok(PredictionReport {
        n_patients: ids.len(),
        mae,
        mse,
        c_index: c,
        auc,
        ibs,
    })
}

/// ICC of `(tau, xi)` between estimates and truth over the shared ids.
pub fn effects_icc(
    estimated: &BTreeMap<String, IndividualEffects>,
    truth: &BTreeMap<String, IndividualEffects>,
) -> Result<(f64, f64)> {
    let shared: Vec<(&IndividualEffects, &IndividualEffects)> = estimated
        .iter()
        .filter_map(|(id, e)| truth.get(id).map(|t| (e, t)))
        .collect();
    let col = |f: fn(&IndividualEffects) -> f64| -> (Vec<f64>, Vec<f64>) {
        shared.iter().map(|(e, t)| (f(e), f(t))).unzip()
    };
    let (tau_e, tau_t) = col(|e| e.tau);
    let (xi_e, xi_t) = col(|e| e.xi);
    Ok((icc(&tau_e, &tau_t)?, icc(&xi_e, &xi_t)?))
}
