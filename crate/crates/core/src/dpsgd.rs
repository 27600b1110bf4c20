//! Differentially private SGD over the similarity matrix.
//!
//! Each iteration samples a mini-batch of ratings without replacement,
//! clamps residuals to a shrinking band, adds Laplace noise calibrated to the
//! resulting per-iteration sensitivity to every touched gradient row and
//! applies an up-scaled update. Privacy is at rating level: neighbouring
//! datasets differ in a single rating.
//!
//! Budget bookkeeping: with sampling ratio γ = L/𝓛 each of the K iterations
//! runs at ε/(Kγ), which sampling amplification maps back to ε/K, and K-fold
//! composition to ε overall. The Laplace scale per iteration is γKΔF(t)/ε.

use web_time::Instant;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::RatingDataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{accumulate_row_gradient, prediction_terms};
use crate::rng::{self, StreamRng};
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    #[default]
    Laplace,
    /// Noise-free twin: same schedule, clamping and flooring, no noise.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    pub epsilon: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    /// β, the similarity rescale factor.
    pub beta: f64,
    /// C, floor on Σ_j |s_ij| I_uj.
    pub c_bound: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseMode,
}

impl Default for DpSgdConfig {
    fn default() -> Self {
        DpSgdConfig {
            epsilon: 1.0,
            iterations: 20,
            learning_rate: 0.1,
            lambda: 0.05,
            beta: 10.0,
            c_bound: 10.0,
            batch_size: 1000,
            seed: 0,
            noise: NoiseMode::Laplace,
        }
    }
}

impl DpSgdConfig {
    pub fn validate(&self, n_ratings: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda must be non-negative"));
        }
        if !(self.beta >= 1.0) {
            return Err(Error::config(format!("beta must be >= 1, got {}", self.beta)));
        }
        if !(self.c_bound > 0.0) {
            return Err(Error::config("C must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.batch_size > n_ratings {
            return Err(Error::config(format!(
                "batch size {} exceeds the {n_ratings} training ratings",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Residual bound at iteration `t` (1-based): 0.5 + (φ − 1)/(t + 1).
pub fn error_bound(t: usize, span: f64) -> f64 {
    0.5 + (span - 1.0) / (t as f64 + 1.0)
}

pub fn clamp_error(e: f64, t: usize, span: f64) -> f64 {
    let bound = error_bound(t, span);
    e.max(-bound).min(bound)
}

/// Per-iteration L1 sensitivity ΔF(t) = 2 (0.5 + (φ − 1)/(t + 1)) φ / C.
pub fn sensitivity(t: usize, span: f64, c_bound: f64) -> f64 {
    2.0 * error_bound(t, span) * span / c_bound
}

/// One draw from Laplace(0, b) by inverse CDF; `b == 0` yields exactly 0.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            let s = if u < 0.0 { -1.0 } else { 1.0 };
            return -scale * s * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| laplace(rng, scale)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: usize,
    pub sensitivity: f64,
    pub noise_scale: f64,
}

/// Budget split and per-iteration noise calibration of one private run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAccount {
    pub epsilon: f64,
    pub iterations: usize,
    /// γ = L/𝓛.
    pub sampling_ratio: f64,
    /// ε/(Kγ).
    pub per_iteration_epsilon: f64,
    pub span: f64,
    pub c_bound: f64,
    pub granularity: String,
    pub ledger: Vec<LedgerEntry>,
}

impl PrivacyAccount {
    pub fn new(cfg: &DpSgdConfig, span: f64, n_ratings: usize) -> Self {
        let gamma = cfg.batch_size as f64 / n_ratings as f64;
        PrivacyAccount {
            epsilon: cfg.epsilon,
            iterations: cfg.iterations,
            sampling_ratio: gamma,
            per_iteration_epsilon: cfg.epsilon / (cfg.iterations as f64 * gamma),
            span,
            c_bound: cfg.c_bound,
            granularity: "rating".into(),
            ledger: Vec::with_capacity(cfg.iterations),
        }
    }

    pub fn sensitivity(&self, t: usize) -> f64 {
        sensitivity(t, self.span, self.c_bound)
    }

    /// b(t) = γ K ΔF(t) / ε.
    pub fn noise_scale(&self, t: usize) -> f64 {
        self.sampling_ratio * self.iterations as f64 * self.sensitivity(t) / self.epsilon
    }

    /// Budget after amplification and composition: K · γ · ε/(Kγ).
    pub fn composed_epsilon(&self) -> f64 {
        self.iterations as f64 * self.sampling_ratio * self.per_iteration_epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sensitivity: f64,
    pub noise_scale: f64,
    pub train_rmse: f64,
}

/// JSON-serialisable record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSgdRun {
    pub config: DpSgdConfig,
    pub account: PrivacyAccount,
    pub iterations: Vec<IterationRecord>,
    pub wall_time_s: f64,
}

fn sample_batch(data: &RatingDataset, batch_size: usize, seed: u64, t: usize) -> Vec<usize> {
    let mut rng = rng::stream(seed, rng::BATCH, &[t as u64]);
    let mut batch = index::sample(&mut rng, data.len(), batch_size).into_vec();
    batch.sort_unstable();
    batch
}

/// Train with Laplace-noised SGD. Returns the released matrix and run record.
pub fn train_dpsgd(
    data: &RatingDataset,
    cfg: &DpSgdConfig,
    init: &SimilarityMatrix,
) -> Result<(SimilarityMatrix, DpSgdRun)> {
    let started = Instant::now();
    cfg.validate(data.len())?;
    if init.dim() != data.n_items() {
        return Err(Error::DimensionMismatch { matrix: init.dim(), items: data.n_items() });
    }
    if !init.is_finite() {
        return Err(Error::config("initial similarity has non-finite entries"));
    }
    let span = data.scale().span();
    let n = data.n_items();
    let means = data.item_means();
    let mut account = PrivacyAccount::new(cfg, span, data.len());
    let mut s = init.clone();
    s.rescale(cfg.beta);

    let mut grad = vec![0.0; n * n];
    let mut touched = vec![false; n];
    let mut records = Vec::with_capacity(cfg.iterations);

    for t in 1..=cfg.iterations {
        let batch = sample_batch(data, cfg.batch_size, cfg.seed, t);
        let delta_f = account.sensitivity(t);
        let bound = error_bound(t, span);
        let scale = match cfg.noise {
            NoiseMode::Laplace => account.noise_scale(t),
            NoiseMode::Off => 0.0,
        };

        for &k in &batch {
            let r = data.ratings()[k];
            let (u, i) = (r.user as usize, r.item as usize);
            let history = data.user_ratings(u);
            let row = s.row(i);
            let terms = prediction_terms(row, history, means, i, cfg.c_bound);
            let e = clamp_error(terms.value - r.value, t, span);
            assert!(e.abs() <= bound, "clamped residual {e} exceeds bound {bound}");
            let out = &mut grad[i * n..(i + 1) * n];
            accumulate_row_gradient(row, history, means, i, &terms, e, out);
            touched[i] = true;
        }

        let mut noise_rng: StreamRng = rng::stream(cfg.seed, rng::NOISE, &[t as u64]);
        let step = cfg.learning_rate;
        for i in 0..n {
            let row = s.row_mut(i);
            if touched[i] {
                let g = &mut grad[i * n..(i + 1) * n];
                for j in 0..n {
                    if j != i {
                        g[j] += laplace(&mut noise_rng, scale);
                    }
                }
                for (v, gj) in row.iter_mut().zip(g.iter_mut()) {
                    *v -= step * (cfg.beta * *gj + cfg.lambda * *v);
                    *gj = 0.0;
                }
                touched[i] = false;
            } else if cfg.lambda != 0.0 {
                row.iter_mut().for_each(|v| *v -= step * cfg.lambda * *v);
            }
        }
        if !s.is_finite() {
            return Err(Error::NonFinite { iteration: t });
        }

        account.ledger.push(LedgerEntry { iteration: t, sensitivity: delta_f, noise_scale: scale });
        records.push(IterationRecord {
            iteration: t,
            sensitivity: delta_f,
            noise_scale: scale,
            train_rmse: eval::training_rmse(&s, data)?,
        });
    }

    let run = DpSgdRun {
        config: cfg.clone(),
        account,
        iterations: records,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((s, run))
}

/// Non-private mini-batch SGD on the negative log-posterior, sharing the
/// private trainer's batch stream and β up-scaling but with no residual
/// clamping, no denominator floor and no noise.
pub fn train_sgd(
    data: &RatingDataset,
    cfg: &DpSgdConfig,
    init: &SimilarityMatrix,
) -> Result<SimilarityMatrix> {
    cfg.validate(data.len())?;
    if init.dim() != data.n_items() {
        return Err(Error::DimensionMismatch { matrix: init.dim(), items: data.n_items() });
    }
    let mut s = init.clone();
    s.rescale(cfg.beta);
    for t in 1..=cfg.iterations {
        let batch: Vec<(usize, usize)> = sample_batch(data, cfg.batch_size, cfg.seed, t)
            .into_iter()
            .map(|k| {
                let r = data.ratings()[k];
                (r.user as usize, r.item as usize)
            })
            .collect();
        let grad = crate::model::gradient(&s, data, &batch, 0.0)?;
        for (v, g) in s.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *v -= cfg.learning_rate * (cfg.beta * g + cfg.lambda * *v);
        }
        if !s.is_finite() {
            return Err(Error::NonFinite { iteration: t });
        }
    }
    Ok(s)
}
