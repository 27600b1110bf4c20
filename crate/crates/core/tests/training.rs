mod common;

use common::*;
use dpnb::dpps::{init_similarity, train_dpps, DppsConfig};
use dpnb::dpsgd::{sensitivity, train_dpsgd, train_sgd, DpSgdConfig, NoiseMode};
use dpnb::eval::training_rmse;
use dpnb::Error;

fn dpsgd_cfg() -> DpSgdConfig {
    DpSgdConfig { batch_size: 300, iterations: 15, learning_rate: 0.4, seed: 3, ..DpSgdConfig::default() }
}

#[test]
fn ledger_rows_follow_the_calibration() {
    let data = synthetic_ratings(1, 120, 40);
    for eps in [0.1, 1.0, 20.0] {
        let cfg = DpSgdConfig { epsilon: eps, ..dpsgd_cfg() };
        let init = init_similarity(40, 1.0, 3);
        let (_, run) = train_dpsgd(&data, &cfg, &init).unwrap();
        let acc = &run.account;
        let gamma = cfg.batch_size as f64 / data.len() as f64;
        assert_eq!(acc.ledger.len(), cfg.iterations);
        for (t, row) in (1..).zip(&acc.ledger) {
            let df = 2.0 * (0.5 + 3.0 / (t as f64 + 1.0)) * 4.0 / cfg.c_bound;
            assert_eq!(row.iteration, t);
            assert_eq!(row.sensitivity, sensitivity(t, 4.0, cfg.c_bound));
            assert!((row.sensitivity - df).abs() <= 1e-15 * df);
            let b = gamma * cfg.iterations as f64 * row.sensitivity / eps;
            assert!((row.noise_scale - b).abs() <= 1e-15 * b);
        }
        assert!((acc.composed_epsilon() - eps).abs() < 1e-12 * eps);
    }
}

#[test]
fn noise_free_twin_tracks_plain_sgd() {
    let data = synthetic_ratings(2, 150, 40);
    let init = init_similarity(40, 1.0, 5);
    let cfg = DpSgdConfig { noise: NoiseMode::Off, ..dpsgd_cfg() };
    let (a, run) = train_dpsgd(&data, &cfg, &init).unwrap();
    assert!(run.account.ledger.iter().all(|r| r.noise_scale == 0.0));
    let b = train_sgd(&data, &cfg, &init).unwrap();
    let (ra, rb) = (training_rmse(&a, &data).unwrap(), training_rmse(&b, &data).unwrap());
    assert!((ra - rb).abs() < 1e-3, "{ra} vs {rb}");
}

#[test]
fn huge_epsilon_approaches_noise_free() {
    let data = synthetic_ratings(3, 120, 40);
    let init = init_similarity(40, 1.0, 5);
    let (a, _) = train_dpsgd(&data, &DpSgdConfig { epsilon: 1e9, ..dpsgd_cfg() }, &init).unwrap();
    let (b, _) = train_dpsgd(&data, &DpSgdConfig { noise: NoiseMode::Off, ..dpsgd_cfg() }, &init).unwrap();
    let diff = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6, "max difference {diff}");
}

#[test]
fn smaller_epsilon_means_more_noise() {
    let data = synthetic_ratings(4, 120, 40);
    let init = init_similarity(40, 1.0, 5);
    let (clean, _) = train_dpsgd(&data, &DpSgdConfig { noise: NoiseMode::Off, ..dpsgd_cfg() }, &init).unwrap();
    let distance = |eps: f64| {
        let (s, _) = train_dpsgd(&data, &DpSgdConfig { epsilon: eps, ..dpsgd_cfg() }, &init).unwrap();
        s.as_slice().iter().zip(clean.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    assert!(distance(0.1) > distance(1.0));
    assert!(distance(1.0) > distance(10.0));
}

#[test]
fn dpsgd_is_deterministic() {
    let data = synthetic_ratings(5, 80, 30);
    let init = init_similarity(30, 1.0, 1);
    let (a, _) = train_dpsgd(&data, &dpsgd_cfg(), &init).unwrap();
    let (b, _) = train_dpsgd(&data, &dpsgd_cfg(), &init).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dpsgd_rejects_oversized_batches() {
    let data = synthetic_ratings(6, 20, 30);
    let cfg = DpSgdConfig { batch_size: data.len() + 1, ..dpsgd_cfg() };
    assert!(matches!(train_dpsgd(&data, &cfg, &init_similarity(30, 1.0, 1)), Err(Error::InvalidConfig(_))));
}

fn dpps_cfg(data: &dpnb::RatingDataset) -> DppsConfig {
    DppsConfig {
        tau: data.max_user_count(),
        iterations: 1,
        burn_in: 0,
        batch_size: 100,
        temperature: 0.0,
        seed: 2,
        ..DppsConfig::default()
    }
}

#[test]
fn dpps_drift_scales_with_epsilon() {
    let data = synthetic_ratings(7, 100, 30);
    let init = init_similarity(30, 1.0, 4);
    let step = |eps: f64| {
        let out = train_dpps(&data, &DppsConfig { epsilon: eps, ..dpps_cfg(&data) }, &init).unwrap();
        let mut d = out.released.clone();
        for (v, s0) in d.as_mut_slice().iter_mut().zip(init.as_slice()) {
            *v -= s0;
        }
        (d, out.run.iterations[0].drift_norm)
    };
    let (one, n1) = step(10.0);
    let (three, n3) = step(30.0);
    assert!(n1 > 0.0);
    assert!((n3 / n1 - 3.0).abs() < 1e-12);
    // displacements are differences of entries near 1, exact to a few ulps
    for (a, b) in one.as_slice().iter().zip(three.as_slice()) {
        assert!((3.0 * a - b).abs() <= 2e-15, "{a} {b}");
    }
}

#[test]
fn dpps_drift_factor_is_epsilon_over_4b() {
    let data = synthetic_ratings(8, 100, 30);
    let cfg = DppsConfig { epsilon: 20.0, tau: 200, ..DppsConfig::default() };
    assert_eq!(cfg.bound(4.0), 3200.0);
    assert_eq!(cfg.drift_factor(4.0), 20.0 / 12800.0);
    let out = train_dpps(&data, &DppsConfig { epsilon: 20.0, ..dpps_cfg(&data) }, &init_similarity(30, 1.0, 1))
        .unwrap();
    let b = 16.0 * data.max_user_count() as f64;
    assert_eq!(out.run.bound, b);
    assert_eq!(out.run.drift_factor, 20.0 / (4.0 * b));
}

#[test]
fn dpps_divergence_is_reported() {
    let data = synthetic_ratings(9, 100, 30);
    let cfg = DppsConfig { epsilon: 1e30, eta1: 0.5, iterations: 50, ..dpps_cfg(&data) };
    let err = train_dpps(&data, &cfg, &init_similarity(30, 1.0, 1)).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. } | Error::NonFinite { .. }), "{err:?}");
}

#[test]
fn dpps_rejects_users_above_tau() {
    let data = synthetic_ratings(10, 50, 30);
    let cfg = DppsConfig { tau: data.max_user_count() - 1, ..dpps_cfg(&data) };
    assert!(train_dpps(&data, &cfg, &init_similarity(30, 1.0, 1)).is_err());
}

#[test]
fn dpps_is_deterministic() {
    let data = synthetic_ratings(11, 60, 30);
    let cfg = DppsConfig { temperature: 0.09, iterations: 20, burn_in: 10, ..dpps_cfg(&data) };
    let a = train_dpps(&data, &cfg, &init_similarity(30, 1.0, 1)).unwrap();
    let b = train_dpps(&data, &cfg, &init_similarity(30, 1.0, 1)).unwrap();
    assert_eq!(a.released, b.released);
    assert_eq!(a.run.iterations, b.run.iterations);
}
