//! Differentially private posterior sampling with stochastic gradient
//! Langevin dynamics.
//!
//! Releasing one sample from a posterior whose per-user log-likelihood is
//! bounded by B is 4B-differentially private at user level; scaling the
//! log-posterior drift by ε/4B brings that to ε. B = φ²τ is enforced by
//! capping every user at τ ratings during ingestion.
//!
//! The mini-batch gradient is made unbiased by dividing the prior term of
//! every regularised item pair by the probability H_ij that the pair occurs
//! in a with-replacement batch.

use web_time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::RatingDataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{accumulate_row_gradient, loss, prediction_terms};
use crate::rng;
use crate::similarity::SimilarityMatrix;

/// |s_ij| beyond which the chain is considered divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

pub const DELTA_CAVEAT: &str = "epsilon holds for an exact posterior sample; an approximate \
     sample at L1 distance delta from the posterior gives (epsilon, (1 + e^epsilon) delta)-DP. \
     delta is not computed and assumed to vanish as the chain converges.";

/// η_t = η₁ t^(−ξ).
pub fn step_size(t: usize, eta1: f64, xi: f64) -> f64 {
    eta1 * (t as f64).powf(-xi)
}

/// Per-user log-likelihood bound B = φ²τ.
pub fn likelihood_bound(span: f64, tau: usize) -> f64 {
    span * span * tau as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InclusionFormula {
    /// P(both items occur among L with-replacement draws).
    #[default]
    Exact,
    /// 1 − (|I_i||I_j|/𝓛²)(1 − |I_j|/𝓛)^(L−1)(1 − |I_i|/𝓛)^(L−1).
    Printed,
}

/// Pairwise inclusion probabilities H_ij for batches of size L.
///
/// Entries are computed on demand from item counts; [`dense`](Self::dense)
/// materialises the full matrix. The diagonal is 1, as is every pair
/// involving an item with no ratings (such pairs never enter a batch).
#[derive(Debug, Clone)]
pub struct InclusionProbabilityMatrix {
    formula: InclusionFormula,
    batch_size: usize,
    total: usize,
    probs: Vec<f64>,
    // Exact: 1 − (1 − p)^L.  Printed: p (1 − p)^(L−1).
    per_item: Vec<f64>,
}

impl InclusionProbabilityMatrix {
    pub fn new(data: &RatingDataset, batch_size: usize, formula: InclusionFormula) -> Result<Self> {
        let total = data.len();
        if batch_size == 0 || batch_size > total {
            return Err(Error::config(format!(
                "batch size must be in [1, {total}], got {batch_size}"
            )));
        }
        let l = batch_size as f64;
        let probs: Vec<f64> =
            (0..data.n_items()).map(|i| data.item_count(i) as f64 / total as f64).collect();
        if let Some(i) = probs.iter().position(|&p| p >= 1.0) {
            if batch_size > 1 || data.n_items() > 1 {
                return Err(Error::DegenerateDataset(format!(
                    "item {i} owns every rating; no other item can share a batch with it"
                )));
            }
        }
        let per_item = probs
            .iter()
            .map(|&p| match formula {
                InclusionFormula::Exact => -(l * (-p).ln_1p()).exp_m1(),
                InclusionFormula::Printed => p * (1.0 - p).powf(l - 1.0),
            })
            .collect();
        let h = InclusionProbabilityMatrix { formula, batch_size, total, probs, per_item };
        if formula == InclusionFormula::Exact {
            if batch_size == 1 && h.probs.iter().filter(|&&p| p > 0.0).count() > 1 {
                return Err(Error::DegenerateDataset(
                    "a batch of one rating never contains an item pair".into(),
                ));
            }
        }
        Ok(h)
    }

    pub fn formula(&self) -> InclusionFormula {
        self.formula
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        let (pi, pj) = (self.probs[i], self.probs[j]);
        if pi == 0.0 || pj == 0.0 {
            return 1.0;
        }
        match self.formula {
            InclusionFormula::Exact => {
                // 1 − (1−p_i)^L − (1−p_j)^L + (1−p_i−p_j)^L
                let l = self.batch_size as f64;
                let neither = -(l * (-(pi + pj)).ln_1p()).exp_m1();
                self.per_item[i] + self.per_item[j] - neither
            }
            InclusionFormula::Printed => 1.0 - self.per_item[i] * self.per_item[j],
        }
    }

    pub fn dense(&self) -> SimilarityMatrix {
        SimilarityMatrix::from_fn(self.dim(), |i, j| self.get(i, j))
    }

    /// 𝓛, the dataset size the probabilities refer to.
    pub fn total(&self) -> usize {
        self.total
    }
}

/// Empirical frequency with which each item pair co-occurs in `draws`
/// with-replacement batches of size `batch_size`; diagonal counts single
/// occurrence. Used to measure how far either formula is from the truth.
pub fn empirical_inclusion(
    data: &RatingDataset,
    batch_size: usize,
    draws: usize,
    seed: u64,
) -> SimilarityMatrix {
    let n = data.n_items();
    let mut counts = SimilarityMatrix::zeros(n);
    let mut rng = rng::stream(seed, rng::BATCH, &[u64::MAX]);
    let mut present = vec![false; n];
    let mut items = Vec::new();
    for _ in 0..draws {
        items.clear();
        for _ in 0..batch_size {
            let k = rng.random_range(0..data.len());
            let i = data.ratings()[k].item as usize;
            if !present[i] {
                present[i] = true;
                items.push(i);
            }
        }
        for &i in &items {
            for &j in &items {
                let v = counts.get(i, j);
                counts.set(i, j, v + 1.0);
            }
        }
        for &i in &items {
            present[i] = false;
        }
    }
    counts.as_mut_slice().iter_mut().for_each(|v| *v /= draws as f64);
    counts
}

/// Accumulate 𝓛ḡ + λ S∘H⁻¹ (prior restricted to pairs of distinct items both
/// present in the batch) into `out`, returning the distinct batch items in
/// ascending order.
fn accumulate_estimate(
    s: &SimilarityMatrix,
    data: &RatingDataset,
    batch: &[(usize, usize)],
    lambda: f64,
    h: &InclusionProbabilityMatrix,
    out: &mut [f64],
    present: &mut [bool],
) -> Result<Vec<usize>> {
    let n = s.dim();
    let means = data.item_means();
    let weight = data.len() as f64 / batch.len() as f64;
    let mut items = Vec::new();
    for &(u, i) in batch {
        data.check_user(u)?;
        data.check_item(i)?;
        let actual = data.rating(u, i).ok_or(Error::NotObserved { user: u, item: i })?;
        let history = data.user_ratings(u);
        let row = s.row(i);
        let terms = prediction_terms(row, history, means, i, 0.0);
        let e = terms.value - actual;
        accumulate_row_gradient(row, history, means, i, &terms, weight * e, &mut out[i * n..(i + 1) * n]);
        if !present[i] {
            present[i] = true;
            items.push(i);
        }
    }
    items.sort_unstable();
    if lambda != 0.0 {
        for &i in &items {
            let row = s.row(i);
            let o = &mut out[i * n..(i + 1) * n];
            for &j in &items {
                if j != i {
                    o[j] += lambda * row[j] / h.get(i, j);
                }
            }
        }
    }
    for &i in &items {
        present[i] = false;
    }
    Ok(items)
}

/// Unbiased mini-batch estimate of Σ_(u,i) e_ui ∂r̂_ui/∂S_i + λS.
///
/// The data term is 𝓛/L times the batch sum; the prior term covers pairs
/// (i, j), i ≠ j, whose items both occur in the batch, divided element-wise
/// by H_ij. `batch` holds `(user, item)` pairs drawn with replacement.
pub fn stochastic_gradient(
    s: &SimilarityMatrix,
    data: &RatingDataset,
    batch: &[(usize, usize)],
    lambda: f64,
    h: &InclusionProbabilityMatrix,
) -> Result<SimilarityMatrix> {
    if s.dim() != data.n_items() || h.dim() != s.dim() {
        return Err(Error::DimensionMismatch { matrix: s.dim(), items: data.n_items() });
    }
    if batch.is_empty() {
        return Err(Error::Empty("mini-batch".into()));
    }
    let mut out = SimilarityMatrix::zeros(s.dim());
    let mut present = vec![false; s.dim()];
    accumulate_estimate(s, data, batch, lambda, h, out.as_mut_slice(), &mut present)?;
    Ok(out)
}

/// `batch_size` uniform draws with replacement from the ratings.
pub fn sample_with_replacement<R: Rng + ?Sized>(
    data: &RatingDataset,
    batch_size: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    (0..batch_size)
        .map(|_| {
            let r = data.ratings()[rng.random_range(0..data.len())];
            (r.user as usize, r.item as usize)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppsConfig {
    pub epsilon: f64,
    /// Per-user rating cap the data was ingested with; B = φ²τ.
    pub tau: usize,
    pub eta1: f64,
    pub xi: f64,
    pub temperature: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Scale of the Uniform(0.5, 1) initialisation.
    #[serde(default = "unit")]
    pub init_scale: f64,
    #[serde(default)]
    pub inclusion: InclusionFormula,
    /// Keep every retained sample for prediction averaging (non-private only).
    #[serde(default)]
    pub keep_samples: bool,
    #[serde(default = "fifty")]
    pub monitor_every: usize,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn fifty() -> usize {
    50
}

impl Default for DppsConfig {
    fn default() -> Self {
        DppsConfig {
            epsilon: 20.0,
            tau: 200,
            eta1: 8e-6,
            xi: 0.3,
            temperature: 0.09,
            lambda: 0.02,
            iterations: 200,
            burn_in: 100,
            thin: 1,
            batch_size: 1000,
            seed: 0,
            init_scale: 1.0,
            inclusion: InclusionFormula::Exact,
            keep_samples: false,
            monitor_every: 50,
        }
    }
}

impl DppsConfig {
    pub fn bound(&self, span: f64) -> f64 {
        likelihood_bound(span, self.tau)
    }

    /// ε/4B.
    pub fn drift_factor(&self, span: f64) -> f64 {
        self.epsilon / (4.0 * self.bound(span))
    }

    pub fn is_private(&self, span: f64) -> bool {
        self.drift_factor(span) < 1.0
    }

    /// Variance of the injected Gaussian noise at iteration `t`: ϱ η_t.
    pub fn noise_variance(&self, t: usize) -> f64 {
        self.temperature * step_size(t, self.eta1, self.xi)
    }

    pub fn validate(&self, data: &RatingDataset) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.tau == 0 {
            return Err(Error::config("tau must be positive"));
        }
        let max = data.max_user_count();
        if max > self.tau {
            return Err(Error::config(format!(
                "a user has {max} ratings but tau = {}; the likelihood bound B = phi^2 tau does not hold",
                self.tau
            )));
        }
        if !(self.eta1 > 0.0) {
            return Err(Error::config("eta1 must be positive"));
        }
        if !(0.3..=1.0).contains(&self.xi) {
            return Err(Error::config(format!("xi must lie in [0.3, 1], got {}", self.xi)));
        }
        if !(0.0..1.0).contains(&self.temperature) {
            return Err(Error::config("temperature must lie in [0, 1)"));
        }
        if !(self.temperature * self.eta1 < 1.0) {
            return Err(Error::config("temperature * eta1 must be below 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda must be non-negative"));
        }
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::config(format!(
                "burn-in ({}) must be shorter than the run ({} iterations)",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::config("thinning interval must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > data.len() {
            return Err(Error::config(format!(
                "batch size must be in [1, {}], got {}",
                data.len(),
                self.batch_size
            )));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::config("init scale must be positive"));
        }
        if self.keep_samples && self.is_private(data.scale().span()) {
            return Err(Error::config(
                "averaging over retained samples releases more than one sample; only allowed with epsilon >= 4B",
            ));
        }
        if self.monitor_every == 0 {
            return Err(Error::config("monitor interval must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgldRecord {
    pub iteration: usize,
    pub step_size: f64,
    /// Frobenius norm of the scaled drift applied this iteration.
    pub drift_norm: f64,
    pub noise_variance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppsRun {
    pub config: DppsConfig,
    pub bound: f64,
    pub drift_factor: f64,
    pub granularity: String,
    pub burn_in: usize,
    pub thin: usize,
    pub retained: Vec<usize>,
    pub released: usize,
    pub caveat: String,
    pub iterations: Vec<SgldRecord>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct DppsOutput {
    /// The single released sample (last retained).
    pub released: SimilarityMatrix,
    /// All retained samples when `keep_samples` is set, otherwise empty.
    pub samples: Vec<SimilarityMatrix>,
    pub run: DppsRun,
}

pub fn init_similarity(n_items: usize, scale: f64, seed: u64) -> SimilarityMatrix {
    let mut rng = rng::stream(seed, rng::INIT, &[]);
    let mut s = SimilarityMatrix::uniform(n_items, 0.5, 1.0, &mut rng);
    if scale != 1.0 {
        s.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
    }
    s
}

pub fn train_dpps(
    data: &RatingDataset,
    cfg: &DppsConfig,
    init: &SimilarityMatrix,
) -> Result<DppsOutput> {
    let started = Instant::now();
    cfg.validate(data)?;
    if init.dim() != data.n_items() {
        return Err(Error::DimensionMismatch { matrix: init.dim(), items: data.n_items() });
    }
    let span = data.scale().span();
    let bound = cfg.bound(span);
    let factor = cfg.drift_factor(span);
    let h = InclusionProbabilityMatrix::new(data, cfg.batch_size, cfg.inclusion)?;
    let n = data.n_items();

    let mut s = init.clone();
    let mut grad = vec![0.0; n * n];
    let mut present = vec![false; n];
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut retained = Vec::new();
    let mut samples = Vec::new();
    let mut released: Option<(usize, SimilarityMatrix)> = None;

    for t in 1..=cfg.iterations {
        let eta = step_size(t, cfg.eta1, cfg.xi);
        let mut batch_rng = rng::stream(cfg.seed, rng::BATCH, &[t as u64]);
        let batch = sample_with_replacement(data, cfg.batch_size, &mut batch_rng);
        let items = accumulate_estimate(&s, data, &batch, cfg.lambda, &h, &mut grad, &mut present)?;

        let drift_scale = factor * eta / 2.0;
        let mut drift_sq = 0.0;
        for &i in &items {
            let row = s.row_mut(i);
            for (v, g) in row.iter_mut().zip(&mut grad[i * n..(i + 1) * n]) {
                let d = drift_scale * *g;
                drift_sq += d * d;
                *v -= d;
                *g = 0.0;
            }
        }

        let variance = cfg.noise_variance(t);
        if variance > 0.0 {
            let sd = variance.sqrt();
            let mut noise_rng = rng::stream(cfg.seed, rng::NOISE, &[t as u64]);
            for i in 0..n {
                for (j, v) in s.row_mut(i).iter_mut().enumerate() {
                    if j != i {
                        let z: f64 = noise_rng.sample(StandardNormal);
                        *v += sd * z;
                    }
                }
            }
        }

        let magnitude = s.max_abs();
        if !(magnitude <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence { iteration: t, magnitude });
        }

        let monitor = t % cfg.monitor_every == 0 || t == cfg.iterations;
        records.push(SgldRecord {
            iteration: t,
            step_size: eta,
            drift_norm: drift_sq.sqrt(),
            noise_variance: variance,
            train_rmse: if monitor { Some(eval::training_rmse(&s, data)?) } else { None },
            train_loss: if monitor { Some(loss(&s, data, cfg.lambda)?) } else { None },
        });

        if t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0 {
            retained.push(t);
            if cfg.keep_samples {
                samples.push(s.clone());
            }
            if t + cfg.thin > cfg.iterations {
                released = Some((t, s.clone()));
            }
        }
    }

    let (released_at, released) = released.ok_or_else(|| {
        Error::config("no sample retained after burn-in; check burn-in and thinning")
    })?;
    let run = DppsRun {
        config: cfg.clone(),
        bound,
        drift_factor: factor,
        granularity: "user".into(),
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        retained,
        released: released_at,
        caveat: DELTA_CAVEAT.into(),
        iterations: records,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(DppsOutput { released, samples, run })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Rating, RatingScale};

    fn data_with_counts(counts: &[usize]) -> RatingDataset {
        // one user per rating slot, so any per-item counts are expressible
        let total: usize = counts.iter().sum();
        let mut ratings = Vec::new();
        let mut user = 0;
        for (item, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                ratings.push(Rating { user, item: item as u32, value: 3.0 });
                user += 1;
            }
        }
        RatingDataset::new(total, counts.len(), RatingScale::MOVIELENS, ratings).unwrap()
    }

    #[test]
    fn step_size_examples() {
        assert_eq!(step_size(1, 8e-6, 0.3), 8e-6);
        // 8e-6 · 10^(−0.9)
        let v = step_size(1000, 8e-6, 0.3);
        assert!((v - 1.007_140_329_435_334e-6).abs() < 1e-20, "{v}");
    }

    #[test]
    fn bound_on_movielens() {
        assert_eq!(likelihood_bound(4.0, 200), 3200.0);
        let cfg = DppsConfig { epsilon: 640.0, ..Default::default() };
        assert_eq!(cfg.drift_factor(4.0), 0.05);
        let cfg = DppsConfig { epsilon: 12800.0, ..Default::default() };
        assert_eq!(cfg.drift_factor(4.0), 1.0);
    }

    #[test]
    fn printed_formula_examples() {
        let data = data_with_counts(&[10, 10, 80]);
        let h = InclusionProbabilityMatrix::new(&data, 2, InclusionFormula::Printed).unwrap();
        assert!((h.get(0, 1) - 0.9919).abs() < 1e-12);
        let h1 = InclusionProbabilityMatrix::new(&data, 1, InclusionFormula::Printed).unwrap();
        assert!((h1.get(0, 2) - (1.0 - 10.0 * 80.0 / 1e4)).abs() < 1e-12);
        assert_eq!(h.get(1, 1), 1.0);
    }

    #[test]
    fn empty_item_pairs_are_one() {
        let data = data_with_counts(&[5, 0, 5]);
        for formula in [InclusionFormula::Printed, InclusionFormula::Exact] {
            let h = InclusionProbabilityMatrix::new(&data, 3, formula).unwrap();
            assert_eq!(h.get(0, 1), 1.0);
            assert_eq!(h.get(1, 2), 1.0);
        }
    }

    #[test]
    fn exact_formula_matches_inclusion_exclusion() {
        let data = data_with_counts(&[3, 4, 5]);
        let h = InclusionProbabilityMatrix::new(&data, 2, InclusionFormula::Exact).unwrap();
        let (pi, pj, l) = (3.0 / 12.0, 4.0 / 12.0, 2.0);
        let want = 1.0 - (1.0f64 - pi).powf(l) - (1.0f64 - pj).powf(l) + (1.0f64 - pi - pj).powf(l);
        assert!((h.get(0, 1) - want).abs() < 1e-14);
        assert!((want - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn exact_formula_rejects_single_rating_batches() {
        let data = data_with_counts(&[3, 4]);
        assert!(matches!(
            InclusionProbabilityMatrix::new(&data, 1, InclusionFormula::Exact),
            Err(Error::DegenerateDataset(_))
        ));
    }

    #[test]
    fn item_owning_every_rating_is_degenerate() {
        let data = data_with_counts(&[6, 0]);
        assert!(matches!(
            InclusionProbabilityMatrix::new(&data, 2, InclusionFormula::Printed),
            Err(Error::DegenerateDataset(_))
        ));
    }

    #[test]
    fn noise_variance_is_temperature_times_step() {
        let cfg = DppsConfig { temperature: 0.09, eta1: 8e-6, xi: 0.3, ..Default::default() };
        for t in [1, 2, 10, 1000] {
            assert_eq!(cfg.noise_variance(t), 0.09 * step_size(t, 8e-6, 0.3));
        }
    }

    #[test]
    fn validation() {
        let data = data_with_counts(&[10, 10]);
        let cfg = DppsConfig { batch_size: 5, iterations: 10, burn_in: 5, ..Default::default() };
        assert!(cfg.validate(&data).is_ok());
        assert!(DppsConfig { burn_in: 10, ..cfg.clone() }.validate(&data).is_err());
        assert!(DppsConfig { xi: 0.2, ..cfg.clone() }.validate(&data).is_err());
        assert!(DppsConfig { tau: 0, ..cfg.clone() }.validate(&data).is_err());
        assert!(DppsConfig { keep_samples: true, ..cfg.clone() }.validate(&data).is_err());
        assert!(DppsConfig { keep_samples: true, epsilon: 12800.0, ..cfg }.validate(&data).is_ok());
    }
}
