use latent_joint::likelihood::{
    compute_stats, maximization_step, stats_to_loglik, total_loglik, Counts, DEFAULT_VARIANCE_FLOOR,
};
use latent_joint::model::{hazard, survival, IndividualEffects, SurvivalFixed};
mod common;

use common::{coordinate, instance, snapshot, tanh_sinh};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loglik_from_stats_equals_direct_loglik(seed in any::<u64>()) {
        let inst = instance(seed, 5, 4);
        let direct = total_loglik(&inst.records, &inst.state, &inst.params, &inst.hyper).unwrap().total;
        let stats = compute_stats(&inst.records, &inst.state, &inst.params).unwrap();
        let via = stats_to_loglik(&stats, &inst.params, &inst.hyper, Counts::of(&inst.records)).unwrap();
        prop_assert!(direct.is_finite());
        prop_assert!((direct - via).abs() <= 1e-10 * direct.abs().max(1.0), "{direct} vs {via}");
    }
}

#[test]
fn maximization_step_is_a_stationary_point() {
    for seed in 0..50 {
        let (stats, counts, hyper) = snapshot(seed);
        let theta = maximization_step(&stats, counts, DEFAULT_VARIANCE_FLOOR).unwrap();
        let f0 = stats_to_loglik(&stats, &theta, &hyper, counts).unwrap();
        for i in 0..9 {
            let mut scale = theta;
            let h = 1e-5 * coordinate(&mut scale, i).abs().max(1e-2);
            let eval = |d: f64| {
                let mut p = theta;
                *coordinate(&mut p, i) += d;
                stats_to_loglik(&stats, &p, &hyper, counts).unwrap()
            };
            let (fp, fm) = (eval(h), eval(-h));
            let grad = (fp - fm) / (2.0 * h);
            assert!(grad.abs() <= 1e-6, "seed {seed} coord {i}: gradient {grad:e}");
            assert!(fp <= f0 && fm <= f0, "seed {seed} coord {i}: not a maximum");
        }
    }
}

#[test]
fn survival_matches_integrated_hazard() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 100 {
        let e = IndividualEffects::new(rng.random_range(-1.5..1.5), rng.random_range(2.0..8.0));
        let sx = SurvivalFixed {
            nu: rng.random_range(0.3..10.0),
            rho: rng.random_range(0.4..5.0),
        };
        let t0 = rng.random_range(2.0..8.0);
        let t = e.tau + rng.random_range(0.01..6.0);
        let psi = e.psi(t0, t);
        if psi <= t0 || (psi - t0) / sx.nu > 4.0 {
            continue;
        }
        // the hazard depends on t - tau only; integrating from a zero origin
        // keeps nodes next to the onset distinct from it
        let origin = IndividualEffects::new(e.xi, 0.0);
        let d = t - e.tau;
        for f in [0.1, 0.5, 1.0] {
            let (a, b) = (hazard(e, &sx, t0, e.tau + f * d), hazard(origin, &sx, 0.0, f * d));
            assert!((a - b).abs() <= 1e-9 * b, "{a} vs {b}");
        }
        let cumulative = tanh_sinh(|s| hazard(origin, &sx, 0.0, s), 0.0, d);
        let expected = (-cumulative).exp();
        let s = survival(&sx, t0, psi);
        assert!(
            (s - expected).abs() <= 1e-6 * expected,
            "xi {} tau {} nu {} rho {} t0 {t0} t {t}: {s} vs {expected}",
            e.xi,
            e.tau,
            sx.nu,
            sx.rho
        );
        checked += 1;
    }
}

#[test]
fn quadrature_reference_integrals() {
    assert!((tanh_sinh(|x| x * x, 0.0, 3.0) - 9.0).abs() < 1e-12);
    assert!((tanh_sinh(|x| 1.0 / x.sqrt(), 0.0, 4.0) - 4.0).abs() < 1e-10);
    assert!((tanh_sinh(f64::exp, -1.0, 2.0) - (2f64.exp() - (-1f64).exp())).abs() < 1e-12);
}
