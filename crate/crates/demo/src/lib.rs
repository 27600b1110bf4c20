//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every exported function returns a JSON string; the plain-Rust versions
//! underneath are what the native tests exercise.

use dpnb::dpps::DppsConfig;
use dpnb::dpsgd::{DpSgdConfig, PrivacyAccount};
use dpnb::eval::{self, CvSettings, ModelSpec, Privacy};
use dpnb::{rng, Rating, RatingDataset, RatingScale};
use rand::Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const USERS: usize = 120;
pub const ITEMS: usize = 60;

#[derive(Debug, Serialize)]
pub struct ScheduleStep {
    pub iteration: usize,
    pub sensitivity: f64,
    pub noise_scale: f64,
}

#[derive(Debug, Serialize)]
pub struct Schedule {
    pub per_iteration_epsilon: f64,
    pub sampling_ratio: f64,
    pub steps: Vec<ScheduleStep>,
}

/// Laplace noise schedule of DPSGD for a dataset of `n_ratings` ratings on a
/// scale of width `span`.
pub fn schedule(
    epsilon: f64,
    iterations: usize,
    batch_size: usize,
    n_ratings: usize,
    span: f64,
    c_bound: f64,
) -> Result<Schedule, String> {
    let cfg = DpSgdConfig { epsilon, iterations, batch_size, c_bound, ..DpSgdConfig::default() };
    cfg.validate(n_ratings).map_err(|e| e.to_string())?;
    if !(span > 0.0) {
        return Err(format!("rating span must be positive, got {span}"));
    }
    let account = PrivacyAccount::new(&cfg, span, n_ratings);
    let steps = (1..=iterations)
        .map(|t| ScheduleStep { iteration: t, sensitivity: account.sensitivity(t), noise_scale: account.noise_scale(t) })
        .collect();
    Ok(Schedule {
        per_iteration_epsilon: account.per_iteration_epsilon,
        sampling_ratio: account.sampling_ratio,
        steps,
    })
}

#[derive(Debug, Serialize)]
pub struct SamplingBudget {
    pub bound: f64,
    pub drift_factor: f64,
    pub private: bool,
}

/// Likelihood bound and drift factor of posterior sampling at `epsilon`.
pub fn sampling_budget(epsilon: f64, tau: usize, span: f64) -> Result<SamplingBudget, String> {
    if !(epsilon > 0.0) || tau == 0 || !(span > 0.0) {
        return Err("epsilon, tau and span must all be positive".into());
    }
    let cfg = DppsConfig { epsilon, tau, ..DppsConfig::default() };
    Ok(SamplingBudget { bound: cfg.bound(span), drift_factor: cfg.drift_factor(span), private: cfg.is_private(span) })
}

/// A 1..5 ratings table from a rank-2 taste model; every user rates 20 to 30
/// of the items.
pub fn synthetic_dataset(seed: u64) -> RatingDataset {
    let mut g = rng::stream(seed, "demo", &[]);
    let users: Vec<[f64; 2]> = (0..USERS).map(|_| [g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)]).collect();
    let items: Vec<[f64; 2]> = (0..ITEMS).map(|_| [g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)]).collect();
    let mut ratings = Vec::new();
    for (u, pu) in users.iter().enumerate() {
        let count = g.random_range(20..=30);
        let mut chosen = rand::seq::index::sample(&mut g, ITEMS, count).into_vec();
        chosen.sort_unstable();
        for i in chosen {
            let qi = items[i];
            let raw = 3.0 + 1.5 * (pu[0] * qi[0] + pu[1] * qi[1]) + g.random_range(-0.7..0.7);
            ratings.push(Rating { user: u as u32, item: i as u32, value: raw.round().clamp(1.0, 5.0) });
        }
    }
    let scale = RatingScale::new(1.0, 5.0).expect("valid scale");
    RatingDataset::new(USERS, ITEMS, scale, ratings).expect("consistent synthetic data")
}

#[derive(Debug, Serialize)]
pub struct ModelScore {
    pub model: String,
    pub epsilon: String,
    pub rmse: f64,
}

/// Three-fold RMSE of both private models at `epsilon` next to the Pearson
/// and cosine baselines, on the synthetic dataset drawn from `seed`.
pub fn compare(epsilon: f64, seed: u64) -> Result<Vec<ModelScore>, String> {
    if !(epsilon > 0.0) {
        return Err(format!("epsilon must be positive, got {epsilon}"));
    }
    let data = synthetic_dataset(seed);
    let settings = CvSettings { folds: 3, seeds: vec![seed], neighbor_limits: vec![ITEMS], record_wall_time: false };
    let runs = [
        (ModelSpec::DpSgd { config: DpSgdConfig::default(), overrides: vec![], neighbor_limit: ITEMS }, Privacy::Epsilon(epsilon)),
        (ModelSpec::Dpps { config: DppsConfig::default(), neighbor_limit: ITEMS }, Privacy::Epsilon(epsilon)),
        (ModelSpec::Pcc { neighbor_cap: ITEMS }, Privacy::Off),
        (ModelSpec::Cos { neighbor_cap: ITEMS }, Privacy::Off),
    ];
    let mut out = Vec::new();
    for (spec, privacy) in runs {
        let report = eval::run_cv(&data, &spec, privacy, &settings).map_err(|e| e.to_string())?;
        for a in report.aggregates() {
            out.push(ModelScore { model: a.model, epsilon: a.epsilon, rmse: a.mean_rmse });
        }
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = dpsgdSchedule)]
pub fn dpsgd_schedule(
    epsilon: f64,
    iterations: usize,
    batch_size: usize,
    n_ratings: usize,
    span: f64,
    c_bound: f64,
) -> Result<String, JsError> {
    to_js(schedule(epsilon, iterations, batch_size, n_ratings, span, c_bound))
}

#[wasm_bindgen(js_name = dppsBudget)]
pub fn dpps_budget(epsilon: f64, tau: usize, span: f64) -> Result<String, JsError> {
    to_js(sampling_budget(epsilon, tau, span))
}

#[wasm_bindgen(js_name = compareModels)]
pub fn compare_models(epsilon: f64, seed: u32) -> Result<String, JsError> {
    to_js(compare(epsilon, u64::from(seed)))
}
