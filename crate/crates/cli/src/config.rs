//! Run configuration: one TOML document per experiment, validated before any
//! compute and hashed to name its run directory.

use std::fmt;
use std::path::{Path, PathBuf};

use dpnb::dpps::{DppsConfig, InclusionFormula};
use dpnb::dpsgd::DpSgdConfig;
use dpnb::eval::{DpSgdOverride, ModelSpec, Privacy};
use dpnb::ingest::{MovieLensFormat, PreprocessParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default = "privacy_off")]
    pub privacy: Privacy,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn privacy_off() -> Privacy {
    Privacy::Off
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub format: MovieLensFormat,
    /// Raw MovieLens ratings, or a cache written by `dpnb ingest`.
    pub path: PathBuf,
    #[serde(default = "default_min_ratings")]
    pub min_ratings: usize,
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_ratings() -> usize {
    20
}

fn default_tau() -> usize {
    200
}

impl DatasetConfig {
    pub fn params(&self) -> PreprocessParams {
        PreprocessParams { min_ratings: self.min_ratings, tau: self.tau, seed: self.seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    DpsgdPnbm,
    DppsPnbm,
    Pcc,
    Cos,
}

impl ModelName {
    pub fn is_private(self) -> bool {
        matches!(self, ModelName::DpsgdPnbm | ModelName::DppsPnbm)
    }

    fn default_limit(self) -> usize {
        if self.is_private() { 500 } else { 900 }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelName::DpsgdPnbm => "dpsgd-pnbm",
            ModelName::DppsPnbm => "dpps-pnbm",
            ModelName::Pcc => "pcc",
            ModelName::Cos => "cos",
        })
    }
}

impl std::str::FromStr for ModelName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dpsgd-pnbm" => Ok(ModelName::DpsgdPnbm),
            "dpps-pnbm" => Ok(ModelName::DppsPnbm),
            "pcc" => Ok(ModelName::Pcc),
            "cos" => Ok(ModelName::Cos),
            other => Err(format!("unknown model `{other}` (dpsgd-pnbm, dpps-pnbm, pcc, cos)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: ModelName,
    /// Top-N used when scoring; defaults to 500 for the private models and
    /// 900 for the correlation baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor_limit: Option<usize>,
    #[serde(default)]
    pub dpsgd: DpSgdParams,
    #[serde(default)]
    pub dpps: DppsParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSgdParams {
    pub iterations: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub beta: f64,
    pub c_bound: f64,
    pub batch_size: usize,
    pub overrides: Vec<DpSgdOverride>,
}

impl Default for DpSgdParams {
    fn default() -> Self {
        let d = DpSgdConfig::default();
        DpSgdParams {
            iterations: d.iterations,
            learning_rate: d.learning_rate,
            lambda: d.lambda,
            beta: d.beta,
            c_bound: d.c_bound,
            batch_size: d.batch_size,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DppsParams {
    pub eta1: f64,
    pub xi: f64,
    pub temperature: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub batch_size: usize,
    pub init_scale: f64,
    pub inclusion: InclusionFormula,
    pub keep_samples: bool,
    pub monitor_every: usize,
}

impl Default for DppsParams {
    fn default() -> Self {
        let d = DppsConfig::default();
        DppsParams {
            eta1: d.eta1,
            xi: d.xi,
            temperature: d.temperature,
            lambda: d.lambda,
            iterations: d.iterations,
            burn_in: d.burn_in,
            thin: d.thin,
            batch_size: d.batch_size,
            init_scale: d.init_scale,
            inclusion: d.inclusion,
            keep_samples: d.keep_samples,
            monitor_every: d.monitor_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub folds: usize,
    pub seeds: Vec<u64>,
    /// Limits to score under; empty means the model's own limit.
    pub neighbor_limits: Vec<usize>,
    /// Record per-cell wall time in the CSVs (breaks byte-identical reruns).
    pub wall_time: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: 5, seeds: vec![1, 2, 3, 4, 5], neighbor_limits: Vec::new(), wall_time: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub models: Vec<ModelName>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub neighbor_limits: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs") }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        self.dataset.params().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.cv.folds < 2 {
            return bad(format!("cv.folds must be at least 2, got {}", self.cv.folds));
        }
        if self.cv.seeds.is_empty() {
            return bad("cv.seeds must not be empty".into());
        }
        if self.cv.neighbor_limits.iter().chain(self.model.neighbor_limit.iter()).any(|&l| l == 0) {
            return bad("neighbour limits must be at least 1".into());
        }
        self.model_spec(self.model.name)?.check_privacy(self.privacy).map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(sweep) = &self.sweep {
            if sweep.models.is_empty() {
                return bad("sweep.models must not be empty".into());
            }
            if sweep.models.iter().any(|m| m.is_private()) && sweep.epsilons.is_empty() {
                return bad("sweep.epsilons must not be empty when a private model is swept".into());
            }
            if let Some(e) = sweep.epsilons.iter().find(|e| !(**e > 0.0)) {
                return bad(format!("sweep epsilons must be positive, got {e}"));
            }
            if sweep.neighbor_limits.iter().any(|&l| l == 0) {
                return bad("neighbour limits must be at least 1".into());
            }
        }
        Ok(())
    }

    pub fn model_spec(&self, name: ModelName) -> Result<ModelSpec, CliError> {
        let limit = self.model.neighbor_limit.filter(|_| name == self.model.name).unwrap_or(name.default_limit());
        Ok(match name {
            ModelName::DpsgdPnbm => {
                let p = &self.model.dpsgd;
                ModelSpec::DpSgd {
                    config: DpSgdConfig {
                        iterations: p.iterations,
                        learning_rate: p.learning_rate,
                        lambda: p.lambda,
                        beta: p.beta,
                        c_bound: p.c_bound,
                        batch_size: p.batch_size,
                        ..DpSgdConfig::default()
                    },
                    overrides: p.overrides.clone(),
                    neighbor_limit: limit,
                }
            }
            ModelName::DppsPnbm => {
                let p = &self.model.dpps;
                ModelSpec::Dpps {
                    config: DppsConfig {
                        tau: self.dataset.tau,
                        eta1: p.eta1,
                        xi: p.xi,
                        temperature: p.temperature,
                        lambda: p.lambda,
                        iterations: p.iterations,
                        burn_in: p.burn_in,
                        thin: p.thin,
                        batch_size: p.batch_size,
                        init_scale: p.init_scale,
                        inclusion: p.inclusion,
                        keep_samples: p.keep_samples,
                        monitor_every: p.monitor_every,
                        ..DppsConfig::default()
                    },
                    neighbor_limit: limit,
                }
            }
            ModelName::Pcc => ModelSpec::Pcc { neighbor_cap: limit },
            ModelName::Cos => ModelSpec::Cos { neighbor_cap: limit },
        })
    }

    /// Hex SHA-256 of everything that influences results (the output
    /// directory does not).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        hex_digest(serde_json::to_vec(&canonical).expect("run config serialises"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.dir.join(&self.hash()[..16])
    }
}

pub fn hex_digest(bytes: impl AsRef<[u8]>) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
