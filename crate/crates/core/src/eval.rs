//! RMSE scoring, k-fold orchestration and result tables.

use std::fmt;
use std::io::Write;
use std::path::Path;
use web_time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{compute_similarity, CorrelationKind};
use crate::data::RatingDataset;
use crate::dpps::{self, DppsConfig};
use crate::dpsgd::{self, DpSgdConfig, NoiseMode};
use crate::error::{Error, Result};
use crate::ingest::split_folds;
use crate::model::{predict, prediction_terms};
use crate::rng;
use crate::similarity::SimilarityMatrix;

/// √(Σ (r − r̂)² / n) over `(predicted, actual)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("test set".into()));
    }
    let sse: f64 = pairs.iter().map(|(p, a)| (a - p) * (a - p)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

/// RMSE of clamped in-sample predictions over every training rating.
pub fn training_rmse(s: &SimilarityMatrix, data: &RatingDataset) -> Result<f64> {
    let scale = data.scale();
    let means = data.item_means();
    let pairs: Vec<(f64, f64)> = data
        .ratings()
        .iter()
        .map(|r| {
            let (u, i) = (r.user as usize, r.item as usize);
            let t = prediction_terms(s.row(i), data.user_ratings(u), means, i, 0.0);
            (scale.clamp(t.value), r.value)
        })
        .collect();
    rmse(&pairs)
}

/// A trained similarity model: one released matrix, or several samples whose
/// predictions are averaged (non-private analysis only).
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Single(SimilarityMatrix),
    Ensemble(Vec<SimilarityMatrix>),
}

impl TrainedModel {
    pub fn predict(
        &self,
        train: &RatingDataset,
        user: usize,
        item: usize,
        neighbor_limit: Option<usize>,
    ) -> Result<f64> {
        match self {
            TrainedModel::Single(s) => predict(s, train, user, item, neighbor_limit),
            TrainedModel::Ensemble(samples) => {
                let mut sum = 0.0;
                for s in samples {
                    sum += predict(s, train, user, item, neighbor_limit)?;
                }
                Ok(sum / samples.len() as f64)
            }
        }
    }

    pub fn released(&self) -> &SimilarityMatrix {
        match self {
            TrainedModel::Single(s) => s,
            TrainedModel::Ensemble(samples) => samples.last().expect("non-empty ensemble"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub rmse: f64,
    pub unclamped_rmse: f64,
}

/// Score `model` (fitted on `train`) against `test`, clamping predictions to
/// the rating scale.
pub fn score(
    model: &TrainedModel,
    train: &RatingDataset,
    test: &RatingDataset,
    neighbor_limit: Option<usize>,
) -> Result<Score> {
    let scale = train.scale();
    let mut clamped = Vec::with_capacity(test.len());
    let mut raw = Vec::with_capacity(test.len());
    for r in test.ratings() {
        let p = model.predict(train, r.user as usize, r.item as usize, neighbor_limit)?;
        clamped.push((scale.clamp(p), r.value));
        raw.push((p, r.value));
    }
    let score = Score { rmse: rmse(&clamped)?, unclamped_rmse: rmse(&raw)? };
    assert!(
        score.rmse <= score.unclamped_rmse * (1.0 + 1e-12),
        "clamping increased RMSE: {} > {}",
        score.rmse,
        score.unclamped_rmse
    );
    Ok(score)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Privacy {
    Epsilon(f64),
    #[serde(with = "off")]
    Off,
}

mod off {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("off")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let v = String::deserialize(d)?;
        if v == "off" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected a number or \"off\", got \"{v}\"")))
        }
    }
}

impl fmt::Display for Privacy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Privacy::Epsilon(e) => write!(f, "{e}"),
            Privacy::Off => f.write_str("non-private"),
        }
    }
}

/// Hyperparameter override for one privacy level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSgdOverride {
    pub epsilon: f64,
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub c_bound: Option<f64>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    DpSgd { config: DpSgdConfig, overrides: Vec<DpSgdOverride>, neighbor_limit: usize },
    Dpps { config: DppsConfig, neighbor_limit: usize },
    Pcc { neighbor_cap: usize },
    Cos { neighbor_cap: usize },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::DpSgd { .. } => "dpsgd-pnbm",
            ModelSpec::Dpps { .. } => "dpps-pnbm",
            ModelSpec::Pcc { .. } => "pcc",
            ModelSpec::Cos { .. } => "cos",
        }
    }

    pub fn is_private(&self) -> bool {
        matches!(self, ModelSpec::DpSgd { .. } | ModelSpec::Dpps { .. })
    }

    pub fn default_neighbor_limit(&self) -> usize {
        match self {
            ModelSpec::DpSgd { neighbor_limit, .. } | ModelSpec::Dpps { neighbor_limit, .. } => {
                *neighbor_limit
            }
            ModelSpec::Pcc { neighbor_cap } | ModelSpec::Cos { neighbor_cap } => *neighbor_cap,
        }
    }

    /// DPSGD hyperparameters effective at `epsilon` (base plus any override
    /// registered for exactly that value).
    pub fn dpsgd_config(
        config: &DpSgdConfig,
        overrides: &[DpSgdOverride],
        privacy: Privacy,
    ) -> DpSgdConfig {
        let mut cfg = config.clone();
        match privacy {
            Privacy::Epsilon(eps) => {
                cfg.epsilon = eps;
                cfg.noise = NoiseMode::Laplace;
                if let Some(o) = overrides.iter().find(|o| o.epsilon == eps) {
                    cfg.iterations = o.iterations.unwrap_or(cfg.iterations);
                    cfg.learning_rate = o.learning_rate.unwrap_or(cfg.learning_rate);
                    cfg.lambda = o.lambda.unwrap_or(cfg.lambda);
                    cfg.beta = o.beta.unwrap_or(cfg.beta);
                    cfg.c_bound = o.c_bound.unwrap_or(cfg.c_bound);
                    cfg.batch_size = o.batch_size.unwrap_or(cfg.batch_size);
                }
            }
            Privacy::Off => cfg.noise = NoiseMode::Off,
        }
        cfg
    }

    pub fn check_privacy(&self, privacy: Privacy) -> Result<()> {
        match (self.is_private(), privacy) {
            (false, Privacy::Epsilon(_)) => Err(Error::config(format!(
                "baseline `{}` has no privacy parameter",
                self.name()
            ))),
            (true, Privacy::Epsilon(e)) if !(e > 0.0) => {
                Err(Error::config(format!("epsilon must be positive, got {e}")))
            }
            _ => Ok(()),
        }
    }

    /// Train on `train` with all randomness derived from `seed`.
    pub fn train(&self, train: &RatingDataset, privacy: Privacy, seed: u64) -> Result<Trained> {
        self.check_privacy(privacy)?;
        let n = train.n_items();
        match self {
            ModelSpec::DpSgd { config, overrides, .. } => {
                let mut cfg = Self::dpsgd_config(config, overrides, privacy);
                cfg.seed = seed;
                let init = dpps::init_similarity(n, 1.0, seed);
                let (s, run) = dpsgd::train_dpsgd(train, &cfg, &init)?;
                Ok(Trained { model: TrainedModel::Single(s), record: RunRecord::DpSgd(run) })
            }
            ModelSpec::Dpps { config, .. } => {
                let mut cfg = config.clone();
                cfg.seed = seed;
                let span = train.scale().span();
                cfg.epsilon = match privacy {
                    Privacy::Epsilon(e) => e,
                    Privacy::Off => 4.0 * cfg.bound(span),
                };
                let init = dpps::init_similarity(n, cfg.init_scale, seed);
                let out = dpps::train_dpps(train, &cfg, &init)?;
                let model = if cfg.keep_samples {
                    TrainedModel::Ensemble(out.samples)
                } else {
                    TrainedModel::Single(out.released)
                };
                Ok(Trained { model, record: RunRecord::Dpps(out.run) })
            }
            ModelSpec::Pcc { .. } => Ok(Trained {
                model: TrainedModel::Single(compute_similarity(train, CorrelationKind::Pearson)),
                record: RunRecord::Baseline,
            }),
            ModelSpec::Cos { .. } => Ok(Trained {
                model: TrainedModel::Single(compute_similarity(train, CorrelationKind::Cosine)),
                record: RunRecord::Baseline,
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum RunRecord {
    DpSgd(dpsgd::DpSgdRun),
    Dpps(dpps::DppsRun),
    Baseline,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: TrainedModel,
    pub record: RunRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub epsilon: String,
    pub fold: usize,
    pub seed: u64,
    pub neighbor_limit: usize,
    pub rmse: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub epsilon: String,
    pub neighbor_limit: usize,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    /// Mean and sample standard deviation per (model, epsilon, limit), in
    /// order of first appearance.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(String, String, usize)> = Vec::new();
        for r in &self.rows {
            let key = (r.model.clone(), r.epsilon.clone(), r.neighbor_limit);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(model, epsilon, neighbor_limit)| {
                let values: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| {
                        r.model == model && r.epsilon == epsilon && r.neighbor_limit == neighbor_limit
                    })
                    .map(|r| r.rmse)
                    .collect();
                let count = values.len();
                let mean = values.iter().sum::<f64>() / count as f64;
                let std = if count > 1 {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64)
                        .sqrt()
                } else {
                    0.0
                };
                Aggregate { model, epsilon, neighbor_limit, mean_rmse: mean, std_rmse: std, count }
            })
            .collect()
    }

    pub fn mean_rmse(&self, model: &str, epsilon: &str, neighbor_limit: usize) -> Option<f64> {
        self.aggregates()
            .into_iter()
            .find(|a| a.model == model && a.epsilon == epsilon && a.neighbor_limit == neighbor_limit)
            .map(|a| a.mean_rmse)
    }

    pub fn write_rows<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["model", "epsilon", "fold", "seed", "neighbor_limit", "rmse", "wall_time_s"])?;
        for r in &self.rows {
            w.write_record(&[
                r.model.clone(),
                r.epsilon.clone(),
                r.fold.to_string(),
                r.seed.to_string(),
                r.neighbor_limit.to_string(),
                r.rmse.to_string(),
                r.wall_time_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregates<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["model", "epsilon", "neighbor_limit", "mean_rmse", "std_rmse", "count"])?;
        for a in self.aggregates() {
            w.write_record(&[
                a.model,
                a.epsilon,
                a.neighbor_limit.to_string(),
                a.mean_rmse.to_string(),
                a.std_rmse.to_string(),
                a.count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        self.write_rows(std::fs::File::create(dir.join("results.csv"))?)?;
        self.write_aggregates(std::fs::File::create(dir.join("aggregate.csv"))?)?;
        Ok(())
    }

    pub fn read_rows(path: &Path) -> Result<EvalReport> {
        let mut rdr = csv::Reader::from_path(path)?;
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<EvalRow>, _>>()?;
        Ok(EvalReport { rows })
    }
}

/// Settings shared by every cell of a cross-validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSettings {
    pub folds: usize,
    pub seeds: Vec<u64>,
    /// Neighbour limits to score each trained model under; empty means the
    /// model's own default.
    pub neighbor_limits: Vec<usize>,
    pub record_wall_time: bool,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            folds: 5,
            seeds: vec![1, 2, 3, 4, 5],
            neighbor_limits: Vec::new(),
            record_wall_time: false,
        }
    }
}

/// Seed of the training run for `fold` under root `seed`.
pub fn cell_seed(seed: u64, fold: usize) -> u64 {
    rng::stream(seed, "cell", &[fold as u64]).random()
}

/// Re-score already trained models under several top-N truncations.
pub fn neighbor_sweep(
    model: &TrainedModel,
    train: &RatingDataset,
    test: &RatingDataset,
    limits: &[usize],
) -> Result<Vec<(usize, f64)>> {
    limits
        .iter()
        .map(|&limit| {
            if limit == 0 || limit > train.n_items() {
                return Err(Error::config(format!(
                    "neighbour limit {limit} outside [1, {}]",
                    train.n_items()
                )));
            }
            Ok((limit, score(model, train, test, Some(limit))?.rmse))
        })
        .collect()
}

/// Train and score one (seed, fold) cell of a cross-validation run.
pub fn run_cell(
    data: &RatingDataset,
    spec: &ModelSpec,
    privacy: Privacy,
    settings: &CvSettings,
    seed: u64,
    fold: usize,
) -> Result<(Vec<EvalRow>, CellRun)> {
    let started = Instant::now();
    let split = split_folds(data, settings.folds, seed)?;
    let (train, test) = split.split(data, fold)?;
    let trained = spec.train(&train, privacy, cell_seed(seed, fold))?;
    let limits = if settings.neighbor_limits.is_empty() {
        vec![spec.default_neighbor_limit().min(train.n_items())]
    } else {
        settings.neighbor_limits.clone()
    };
    let scores = neighbor_sweep(&trained.model, &train, &test, &limits)?;
    let wall = if settings.record_wall_time { started.elapsed().as_secs_f64() } else { 0.0 };
    let rows = scores
        .into_iter()
        .map(|(limit, rmse)| EvalRow {
            model: spec.name().to_string(),
            epsilon: privacy.to_string(),
            fold,
            seed,
            neighbor_limit: limit,
            rmse,
            wall_time_s: wall,
        })
        .collect();
    Ok((rows, CellRun { seed, fold, record: trained.record }))
}

/// Training record of one (seed, fold) cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellRun {
    pub seed: u64,
    pub fold: usize,
    pub record: RunRecord,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: EvalReport,
    pub runs: Vec<CellRun>,
}

/// k-fold cross-validation of `spec` at `privacy`, repeated per seed.
///
/// Each seed draws its own fold assignment; rows are ordered by seed, fold
/// and neighbour limit regardless of how cells are scheduled.
pub fn run_cv(
    data: &RatingDataset,
    spec: &ModelSpec,
    privacy: Privacy,
    settings: &CvSettings,
) -> Result<EvalReport> {
    run_cv_detailed(data, spec, privacy, settings).map(|o| o.report)
}

/// [`run_cv`] that also returns each cell's training record.
pub fn run_cv_detailed(
    data: &RatingDataset,
    spec: &ModelSpec,
    privacy: Privacy,
    settings: &CvSettings,
) -> Result<CvOutcome> {
    spec.check_privacy(privacy)?;
    if settings.seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let cells: Vec<(u64, usize)> = settings
        .seeds
        .iter()
        .flat_map(|&s| (0..settings.folds).map(move |f| (s, f)))
        .collect();
    let run = |&(seed, fold): &(u64, usize)| {
        run_cell(data, spec, privacy, settings, seed, fold)
            .map_err(|e| Error::Cell { fold, seed, source: Box::new(e) })
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(Vec<EvalRow>, CellRun)>> = {
        use rayon::prelude::*;
        cells.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(Vec<EvalRow>, CellRun)>> = cells.iter().map(run).collect();

    let mut report = EvalReport::default();
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        let (rows, run) = r?;
        report.rows.extend(rows);
        runs.push(run);
    }
    Ok(CvOutcome { report, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[(3.0, 3.0), (1.0, 1.0)]).unwrap(), 0.0);
        assert_eq!(rmse(&[(3.0, 4.0), (3.0, 2.0), (3.0, 4.0), (3.0, 2.0)]).unwrap(), 1.0);
        assert_eq!(rmse(&[(1.0, 5.0)]).unwrap(), 4.0);
        assert!(matches!(rmse(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn aggregate_mean_is_mean_of_rows() {
        let row = |fold, rmse| EvalRow {
            model: "pcc".into(),
            epsilon: "non-private".into(),
            fold,
            seed: 1,
            neighbor_limit: 900,
            rmse,
            wall_time_s: 0.0,
        };
        let report = EvalReport { rows: vec![row(0, 1.0), row(1, 2.0), row(2, 3.0)] };
        let agg = report.aggregates();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].mean_rmse, 2.0);
        assert_eq!(agg[0].std_rmse, 1.0);
        assert_eq!(agg[0].count, 3);
    }

    #[test]
    fn privacy_labels() {
        assert_eq!(Privacy::Epsilon(0.5).to_string(), "0.5");
        assert_eq!(Privacy::Epsilon(20.0).to_string(), "20");
        assert_eq!(Privacy::Off.to_string(), "non-private");
    }

    #[test]
    fn baselines_refuse_epsilon() {
        let spec = ModelSpec::Pcc { neighbor_cap: 900 };
        assert!(spec.check_privacy(Privacy::Epsilon(1.0)).is_err());
        assert!(spec.check_privacy(Privacy::Off).is_ok());
    }

    #[test]
    fn overrides_apply_to_matching_epsilon_only() {
        let base = DpSgdConfig::default();
        let o = vec![DpSgdOverride { epsilon: 0.1, iterations: Some(3), ..Default::default() }];
        assert_eq!(ModelSpec::dpsgd_config(&base, &o, Privacy::Epsilon(0.1)).iterations, 3);
        assert_eq!(ModelSpec::dpsgd_config(&base, &o, Privacy::Epsilon(1.0)).iterations, 20);
        assert_eq!(ModelSpec::dpsgd_config(&base, &o, Privacy::Off).noise, NoiseMode::Off);
    }
}
