//! On-disk formats.
//!
//! A dataset directory holds `longitudinal.csv`
//! (`patient_id,time_years,score_normalized`) and `events.csv`
//! (`patient_id,event_time_years,observed`), plus `truth.csv`
//! (`patient_id,xi,tau`) for simulated data. Scores may instead be given on
//! the raw rating scale in a `score_raw` column. Times are in years. Floats
//! are written in their shortest round-trip form.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationReport};
use crate::model::{IndividualEffects, PatientRecord, Visit};
use crate::personalize::FittedModel;

pub const LONGITUDINAL_FILE: &str = "longitudinal.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const TRUTH_FILE: &str = "truth.csv";

/// Raw rating scale mapped onto `[0, 1]` with 0 the healthiest score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawScale {
    pub max: f64,
    /// Higher raw scores are healthier.
    pub decreasing: bool,
}

impl Default for RawScale {
    /// 48-point functional rating scale, 48 being the healthiest.
    fn default() -> Self {
        Self {
            max: 48.0,
            decreasing: true,
        }
    }
}

impl RawScale {
    pub fn normalize(&self, raw: f64) -> f64 {
        if self.decreasing {
            (self.max - raw) / self.max
        } else {
            raw / self.max
        }
    }

    pub fn to_raw(&self, normalized: f64) -> f64 {
        if self.decreasing {
            self.max - normalized * self.max
        } else {
            normalized * self.max
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    /// Scale used for a `score_raw` column.
    pub raw_scale: RawScale,
}

#[derive(Serialize)]
struct LongitudinalOut<'a> {
    patient_id: &'a str,
    time_years: f64,
    score_normalized: f64,
}

#[derive(Serialize)]
struct EventOut<'a> {
    patient_id: &'a str,
    event_time_years: f64,
    observed: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub patient_id: String,
    pub xi: f64,
    pub tau: f64,
}

/// One personalized patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsRow {
    pub patient_id: String,
    pub xi: f64,
    pub tau: f64,
    /// Time of the last visit used; predictions condition on survival to it.
    pub t_last: f64,
    pub k_visits: usize,
    pub log_posterior: f64,
    pub converged: bool,
}

impl EffectsRow {
    pub fn effects(&self) -> IndividualEffects {
        IndividualEffects::new(self.xi, self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionKind {
    /// Survival at `time` given survival to `t_last`.
    Survival,
    /// Noise-free normalized score at `time`.
    Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub patient_id: String,
    pub kind: PredictionKind,
    /// Conditioning time.
    pub t_last: f64,
    /// `time - t_last`.
    pub horizon: f64,
    pub time: f64,
    pub value: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_rows<T: Serialize, W: Write>(rows: impl IntoIterator<Item = T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_csv_file<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    write_rows(rows, create(path)?)
}

fn read_csv_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(file).deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Writes the longitudinal and event tables of `records` into `dir`.
pub fn save_dataset(dir: &Path, records: &[PatientRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv_file(
        &dir.join(LONGITUDINAL_FILE),
        records.iter().flat_map(|r| {
            r.visits.iter().map(move |v| LongitudinalOut {
                patient_id: &r.id,
                time_years: v.time,
                score_normalized: v.value,
            })
        }),
    )?;
    write_csv_file(
        &dir.join(EVENTS_FILE),
        records.iter().map(|r| EventOut {
            patient_id: &r.id,
            event_time_years: r.event_time,
            observed: u8::from(r.event_observed),
        }),
    )
}

pub fn save_truth(dir: &Path, ids: &[String], truth: &[IndividualEffects]) -> Result<()> {
    if ids.len() != truth.len() {
        return Err(Error::Contract("ids and truth must be aligned".into()));
    }
    std::fs::create_dir_all(dir)?;
    write_csv_file(
        &dir.join(TRUTH_FILE),
        ids.iter().zip(truth).map(|(id, e)| TruthRow {
            patient_id: id.clone(),
            xi: e.xi,
            tau: e.tau,
        }),
    )
}

pub fn load_truth(dir: &Path) -> Result<BTreeMap<String, IndividualEffects>> {
    let rows: Vec<TruthRow> = read_csv_file(&dir.join(TRUTH_FILE))?;
    let mut out = BTreeMap::new();
    for r in rows {
        if out.insert(r.patient_id.clone(), IndividualEffects::new(r.xi, r.tau)).is_some() {
            return Err(Error::Input(format!("duplicate truth row for {}", r.patient_id)));
        }
    }
    Ok(out)
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn require(headers: &csv::StringRecord, name: &str, file: &str, report: &mut ValidationReport) -> usize {
    column(headers, name).unwrap_or_else(|| {
        report.push(None, format!("{file}: missing column {name}"));
        usize::MAX
    })
}

fn field<'r>(rec: &'r csv::StringRecord, i: usize) -> &'r str {
    rec.get(i).unwrap_or("").trim()
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads and validates the dataset in `dir`.
///
/// Every problem found is collected into one [`Error::Validation`] report.
/// Patients keep the order of the event table and visits are sorted by time.
pub fn load_dataset(dir: &Path, schema: &Schema) -> Result<Vec<PatientRecord>> {
    let mut report = ValidationReport::default();
    let mut visits: HashMap<String, Vec<Visit>> = HashMap::new();

    let long_path = dir.join(LONGITUDINAL_FILE);
    let mut reader = csv::Reader::from_path(&long_path)
        .map_err(|e| Error::Input(format!("{}: {e}", long_path.display())))?;
    let headers = reader.headers()?.clone();
    let id_col = require(&headers, "patient_id", LONGITUDINAL_FILE, &mut report);
    let time_col = require(&headers, "time_years", LONGITUDINAL_FILE, &mut report);
    let (score_col, raw) = match (column(&headers, "score_normalized"), column(&headers, "score_raw")) {
        (Some(c), _) => (c, false),
        (None, Some(c)) => (c, true),
        (None, None) => {
            report.push(None, format!("{LONGITUDINAL_FILE}: missing column score_normalized or score_raw"));
            (usize::MAX, false)
        }
    };
    if !report.is_empty() {
        return Err(Error::Validation(report));
    }
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let id = field(&rec, id_col).to_string();
        let time = parse_number(field(&rec, time_col));
        let score = parse_number(field(&rec, score_col));
        let (Some(time), Some(score)) = (time, score) else {
            report.push(Some(&id), format!("{LONGITUDINAL_FILE} row {row}: unreadable time or score"));
            continue;
        };
        let value = if raw { schema.raw_scale.normalize(score) } else { score };
        if !(0.0..=1.0).contains(&value) {
            report.push(Some(&id), format!("{LONGITUDINAL_FILE} row {row}: score {score} out of range"));
            continue;
        }
        visits.entry(id).or_default().push(Visit { time, value });
    }

    let ev_path = dir.join(EVENTS_FILE);
    let mut reader = csv::Reader::from_path(&ev_path)
        .map_err(|e| Error::Input(format!("{}: {e}", ev_path.display())))?;
    let headers = reader.headers()?.clone();
    let before = report.issues.len();
    let id_col = require(&headers, "patient_id", EVENTS_FILE, &mut report);
    let time_col = require(&headers, "event_time_years", EVENTS_FILE, &mut report);
    let obs_col = require(&headers, "observed", EVENTS_FILE, &mut report);
    if report.issues.len() > before {
        return Err(Error::Validation(report));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let id = field(&rec, id_col).to_string();
        if !seen.insert(id.clone()) {
            report.push(Some(&id), format!("{EVENTS_FILE} row {row}: duplicate patient"));
            continue;
        }
        let Some(event_time) = parse_number(field(&rec, time_col)) else {
            report.push(Some(&id), format!("{EVENTS_FILE} row {row}: unreadable event time"));
            continue;
        };
        let event_observed = match field(&rec, obs_col) {
            "1" => true,
            "0" => false,
            other => {
                report.push(Some(&id), format!("{EVENTS_FILE} row {row}: observed must be 0 or 1, got {other:?}"));
                continue;
            }
        };
        let Some(mut v) = visits.remove(&id) else {
            report.push(Some(&id), "no longitudinal visits");
            continue;
        };
        v.sort_by(|a, b| a.time.total_cmp(&b.time));
        if v.windows(2).any(|w| w[0].time == w[1].time) {
            report.push(Some(&id), "duplicate visit time");
            continue;
        }
        if event_time < v[0].time {
            report.push(Some(&id), "event time precedes the first visit");
            continue;
        }
        records.push(PatientRecord {
            id,
            visits: v,
            event_time,
            event_observed,
        });
    }
    let mut orphans: Vec<&String> = visits.keys().filter(|id| !seen.contains(*id)).collect();
    orphans.sort();
    for id in orphans {
        report.push(Some(id), "visits without an event row");
    }
    if records.is_empty() && report.is_empty() {
        report.push(None, "dataset has no patients");
    }
    if !report.is_empty() {
        return Err(Error::Validation(report));
    }
    Ok(records)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_model(path: &Path, model: &FittedModel) -> Result<()> {
    save_json(path, model)
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    let model: FittedModel = load_json(path)?;
    model.validate()?;
    Ok(model)
}

pub fn save_effects(path: &Path, rows: &[EffectsRow]) -> Result<()> {
    write_csv_file(path, rows)
}

pub fn load_effects(path: &Path) -> Result<Vec<EffectsRow>> {
    read_csv_file(path)
}

pub fn write_predictions<W: Write>(rows: &[PredictionRow], out: W) -> Result<()> {
    write_rows(rows, out)
}

pub fn save_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    write_csv_file(path, rows)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    read_csv_file(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) {
        std::fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn raw_scale_conversion() {
        let s = RawScale::default();
        assert_eq!(s.normalize(48.0), 0.0);
        assert_eq!(s.normalize(0.0), 1.0);
        assert!((s.normalize(37.9) - 0.210_416_666_666_666_7).abs() < 1e-15);
        assert!((s.to_raw(s.normalize(30.5)) - 30.5).abs() < 1e-12);
    }

    #[test]
    fn raw_scores_are_normalized_on_load() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), LONGITUDINAL_FILE, "patient_id,time_years,score_raw\na,1.0,48\na,0.5,36\n");
        write(dir.path(), EVENTS_FILE, "patient_id,event_time_years,observed\na,1.0,0\n");
        let records = load_dataset(dir.path(), &Schema::default()).unwrap();
        assert_eq!(records[0].visits, vec![Visit { time: 0.5, value: 0.25 }, Visit { time: 1.0, value: 0.0 }]);
    }

    #[test]
    fn every_problem_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            LONGITUDINAL_FILE,
            "patient_id,time_years,score_normalized\na,1,0.2\na,1,0.3\nb,1,1.4\nc,0.5,0.1\nd,2,0.1\norphan,1,0.1\n",
        );
        write(
            dir.path(),
            EVENTS_FILE,
            "patient_id,event_time_years,observed\na,2,1\nb,2,0\nc,1,2\nd,1,1\nmissing,3,0\n",
        );
        let Err(Error::Validation(report)) = load_dataset(dir.path(), &Schema::default()) else {
            panic!("expected a validation error");
        };
        let ids: Vec<_> = report.issues.iter().map(|i| i.patient_id.clone().unwrap_or_default()).collect();
        for id in ["a", "b", "c", "d", "missing", "orphan"] {
            assert!(ids.iter().any(|x| x == id), "{id} not reported: {report}");
        }
    }

    #[test]
    fn missing_columns_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), LONGITUDINAL_FILE, "id,t,y\n");
        write(dir.path(), EVENTS_FILE, "patient_id,event_time_years,observed\n");
        assert!(matches!(load_dataset(dir.path(), &Schema::default()), Err(Error::Validation(_))));
    }
}
