use latent_joint::metrics::*;
mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn c_index_matches_pairwise_enumeration() {
    for seed in 0..40 {
        let c = cohort(60, seed);
        let risk: Vec<f64> = c.surv.iter().map(|s| 1.0 - s).collect();
        for horizon in [1.0, 1.5, 10.0] {
            let fast = c_index(&risk, &c.times, &c.events, horizon).unwrap();
            let slow = brute_c_index(&risk, &c.times, &c.events, horizon);
            assert!((fast - slow).abs() < 1e-12, "seed {seed} h {horizon}: {fast} vs {slow}");
        }
    }
}

#[test]
fn censoring_km_matches_product_limit() {
    for seed in 0..20 {
        let c = cohort(50, seed);
        let km = CensoringKm::fit(&c.times, &c.events);
        for k in 0..=14 {
            let t = k as f64 * 0.25;
            assert!((km.at(t) - brute_km(&c.times, &c.events, t, false)).abs() < 1e-12);
            assert!((km.before(t) - brute_km(&c.times, &c.events, t, true)).abs() < 1e-12);
        }
    }
}

#[test]
fn auc_matches_weighted_pair_loop() {
    let eval = [1.0, 1.5];
    for seed in 0..20 {
        let c = cohort(80, seed);
        let surv: Vec<Vec<f64>> = c.surv.iter().map(|&s| vec![s, s * 0.9]).collect();
        let r = cumulative_dynamic_auc(&surv, &c.times, &c.events, &eval).unwrap();
        for (k, &t) in eval.iter().enumerate() {
            let col: Vec<f64> = surv.iter().map(|s| s[k]).collect();
            let slow = brute_auc(&col, &c.times, &c.events, t);
            assert!((r.auc[k] - slow).abs() < 1e-12, "seed {seed} t {t}");
        }
        assert!((r.mean - 0.5 * (r.auc[0] + r.auc[1])).abs() < 1e-15);
    }
}

#[test]
fn brier_matches_weighted_loop_and_trapezoid() {
    let grid = default_brier_grid();
    assert_eq!(grid.len(), 30);
    assert!((grid[29] - 1.5).abs() < 1e-15 && (grid[0] - 0.05).abs() < 1e-15);
    for seed in 0..10 {
        let mut c = cohort(60, seed);
        // keep a control at the far end so G stays positive
        c.times.push(5.0);
        c.events.push(false);
        c.surv.push(0.5);
        let surv: Vec<Vec<f64>> = c
            .surv
            .iter()
            .map(|&s| grid.iter().map(|t| s.powf(*t)).collect())
            .collect();
        let r = integrated_brier(&surv, &grid, &c.times, &c.events).unwrap();
        let mut area = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for (k, &t) in grid.iter().enumerate() {
            let col: Vec<f64> = surv.iter().map(|s| s[k]).collect();
            let b = brute_brier(&col, &c.times, &c.events, t);
            assert!((r.scores[k] - b).abs() < 1e-12);
            if let Some((t0, b0)) = prev {
                area += 0.5 * (b + b0) * (t - t0);
            }
            prev = Some((t, b));
        }
        assert!((r.integrated - area / (1.5 - 0.05)).abs() < 1e-12);
    }
}

#[test]
fn icc_matches_anova_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let truth: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let est: Vec<f64> = truth.iter().map(|t| 0.9 * t + 0.1 + rng.random_range(-0.3..0.3)).collect();
        let table: Vec<Vec<f64>> = est.iter().zip(&truth).map(|(a, b)| vec![*a, *b]).collect();
        assert!((icc(&est, &truth).unwrap() - brute_icc(&table)).abs() < 1e-12);
    }
}

#[test]
fn clopper_pearson_frozen_values() {
    // reference values from the exact binomial tail inversion
    let (lo, hi) = clopper_pearson(95, 100).unwrap();
    assert!((lo - 0.887_165_1).abs() < 1e-6, "{lo}");
    assert!((hi - 0.983_568_1).abs() < 1e-6, "{hi}");
    let (lo, hi) = clopper_pearson(5, 10).unwrap();
    assert!((lo - 0.187_086_0).abs() < 1e-6 && (hi - 0.812_914_0).abs() < 1e-6);
}

#[test]
fn clopper_pearson_bounds_invert_binomial_tails() {
    use statrs::distribution::{Binomial, DiscreteCDF};
    for (x, n) in [(1u64, 7u64), (3, 20), (18, 19), (50, 100)] {
        let (lo, hi) = clopper_pearson(x as usize, n as usize).unwrap();
        // P(X >= x | lo) = 0.025 and P(X <= x | hi) = 0.025
        let upper_tail = 1.0 - Binomial::new(lo, n).unwrap().cdf(x - 1);
        let lower_tail = Binomial::new(hi, n).unwrap().cdf(x);
        assert!((upper_tail - 0.025).abs() < 1e-8, "{x}/{n}: {upper_tail}");
        assert!((lower_tail - 0.025).abs() < 1e-8, "{x}/{n}: {lower_tail}");
    }
}

#[test]
fn parameter_recovery_row() {
    let est = [1.1, 0.9, 1.05, 0.95];
    let p = ParameterRecovery::compute("g", &est, 1.0).unwrap();
    assert!(p.rb.abs() < 1e-12);
    let expected_rrmse = ((100.0 + 100.0 + 25.0 + 25.0) / 4.0f64).sqrt();
    assert!((p.rrmse - expected_rrmse).abs() < 1e-10);
    assert_eq!(p.ree.len(), 4);
    assert_eq!(p.coverage.rate, 1.0);
    let report = RecoveryReport {
        parameters: vec![p],
        icc_tau: vec![0.9, 1.0],
        icc_xi: vec![0.8],
    };
    assert!((report.mean_icc_tau() - 0.95).abs() < 1e-15);
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("parameter,truth,rb,rrmse"));
    let back: RecoveryReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
}

proptest! {
    #[test]
    fn rrmse_dominates_bias(est in prop::collection::vec(-5.0..5.0f64, 1..30), truth in 0.1..3.0f64) {
        let rb = relative_bias(&est, truth).unwrap();
        let rr = rrmse(&est, truth).unwrap();
        prop_assert!(rr + 1e-9 >= rb.abs());
    }

    #[test]
    fn c_index_invariant_to_monotone_transform(seed in 0u64..1000, a in 0.1..5.0f64, b in -3.0..3.0f64) {
        let c = cohort(40, seed);
        let risk: Vec<f64> = c.surv.iter().map(|s| 1.0 - s).collect();
        let mapped: Vec<f64> = risk.iter().map(|r| a * r.powi(3) + b).collect();
        if let (Ok(x), Ok(y)) = (c_index(&risk, &c.times, &c.events, 10.0), c_index(&mapped, &c.times, &c.events, 10.0)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn c_index_reverses_with_negated_risk_without_ties(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..3.0)).collect();
        let events: Vec<bool> = (0..30).map(|_| rng.random_bool(0.7)).collect();
        let risk: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let neg: Vec<f64> = risk.iter().map(|r| -r).collect();
        if let Ok(x) = c_index(&risk, &times, &events, 10.0) {
            let y = c_index(&neg, &times, &events, 10.0).unwrap();
            prop_assert!((x + y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval(seed in 0u64..500) {
        let c = cohort(50, seed);
        let surv: Vec<Vec<f64>> = c.surv.iter().map(|&s| vec![s]).collect();
        if let Ok(r) = cumulative_dynamic_auc(&surv, &c.times, &c.events, &[1.0]) {
            prop_assert!((0.0..=1.0).contains(&r.mean));
        }
        let risk: Vec<f64> = c.surv.iter().map(|s| 1.0 - s).collect();
        if let Ok(x) = c_index(&risk, &c.times, &c.events, 1.5) {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}
