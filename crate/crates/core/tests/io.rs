use latent_joint::io::*;
use latent_joint::metrics::default_brier_grid;
use latent_joint::pipeline::{personalize_records, predict, prediction_report, survival_horizons};
use latent_joint::saem::{run_saem, InitStrategy, SaemConfig};
use latent_joint::personalize::FittedModel;
use latent_joint::simulate::{patient_id, simulate_cohort, SimConfig};
use latent_joint::Error;

fn sim(n: usize, seed: u64) -> latent_joint::simulate::SimulatedCohort {
    simulate_cohort(&SimConfig {
        n_patients: n,
        ..SimConfig::als_preset().with_seed(seed)
    })
    .unwrap()
}

#[test]
fn dataset_round_trips_exactly() {
    let cohort = sim(60, 5);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &cohort.records).unwrap();
    let ids: Vec<String> = cohort.records.iter().map(|r| r.id.clone()).collect();
    save_truth(dir.path(), &ids, &cohort.truth).unwrap();
    let back = load_dataset(dir.path(), &Schema::default()).unwrap();
    assert_eq!(back, cohort.records);
    let truth = load_truth(dir.path()).unwrap();
    for (id, e) in ids.iter().zip(&cohort.truth) {
        assert_eq!(truth[id], *e);
    }
    assert_eq!(ids[0], patient_id(0));
}

#[test]
fn model_json_round_trips_exactly() {
    let records = sim(30, 2).records;
    let cfg = SaemConfig {
        n_iterations: 300,
        n_rm_iterations: 50,
        init: InitStrategy::Moments,
        ..SaemConfig::desk().with_seed(4)
    };
    let model = FittedModel::from(&run_saem(&records, &cfg).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&path, &model).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.params, model.params);
    assert_eq!(back.latent_fixed, model.latent_fixed);
    let first = std::fs::read(&path).unwrap();
    save_model(&path, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn invalid_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut model = SimConfig::als_preset().generating_model(0.04);
    model.params.sigma = -1.0;
    save_model(&path, &model).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Parameter(_))));
}

#[test]
fn effects_and_predictions_round_trip() {
    let cohort = sim(40, 8);
    let model = SimConfig::als_preset().generating_model(0.04);
    let effects = personalize_records(&cohort.records, 2, &model).unwrap();
    assert!(effects.iter().all(|e| e.k_visits <= 2));
    let dir = tempfile::tempdir().unwrap();
    save_effects(&dir.path().join("effects.csv"), &effects).unwrap();
    assert_eq!(load_effects(&dir.path().join("effects.csv")).unwrap(), effects);

    let horizons = survival_horizons(&[1.0, 1.5], true).unwrap();
    let preds = predict(&model, &effects, &horizons, Some(&cohort.records)).unwrap();
    save_predictions(&dir.path().join("preds.csv"), &preds).unwrap();
    assert_eq!(load_predictions(&dir.path().join("preds.csv")).unwrap(), preds);
}

#[test]
fn horizons_merge_with_brier_grid() {
    let h = survival_horizons(&[1.0, 1.5], true).unwrap();
    assert_eq!(h.len(), default_brier_grid().len());
    let h = survival_horizons(&[2.0, 1.0], false).unwrap();
    assert_eq!(h, vec![1.0, 2.0]);
    assert!(survival_horizons(&[-1.0], false).is_err());
}

#[test]
fn report_on_generating_model_is_informative() {
    let cohort = sim(200, 21);
    let model = SimConfig::als_preset().generating_model(0.04);
    let effects = personalize_records(&cohort.records, 2, &model).unwrap();
    let horizons = survival_horizons(&[1.0, 1.5], true).unwrap();
    let preds = predict(&model, &effects, &horizons, Some(&cohort.records)).unwrap();
    let report = prediction_report(&preds, &cohort.records, &[1.0, 1.5]).unwrap();
    assert!(report.auc.mean > 0.6, "{report:?}");
    assert!(report.c_index.iter().all(|c| c.value > 0.6));
    assert!(report.ibs.unwrap() < 0.25);
    assert!(report.mae.unwrap() > 0.0);

    let no_grid = predict(&model, &effects, &[1.0, 1.5], None).unwrap();
    let r = prediction_report(&no_grid, &cohort.records, &[1.0, 1.5]).unwrap();
    assert_eq!(r.ibs, None);
    assert_eq!(r.mae, None);
    assert_eq!(r.auc, report.auc);
}
