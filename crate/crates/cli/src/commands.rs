use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dpnb::eval::{self, CellRun, CvSettings, EvalReport, EvalRow, ModelSpec, Privacy, RunRecord};
use dpnb::export;
use dpnb::ingest::{self, MovieLensFormat, PreprocessParams};
use dpnb::RatingDataset;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{hex_digest, ModelName, RunConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "dpnb", version, about = "Differentially private neighbourhood recommenders")]
pub struct Cli {
    /// Worker threads; defaults to every available core.
    #[arg(long, global = true, env = "DPNB_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, cap and re-index a MovieLens ratings file into a cached CSV.
    Ingest(IngestArgs),
    /// Train one model on the whole dataset and export its similarity matrix.
    Train(TrainArgs),
    /// k-fold cross-validation of the configured model.
    Evaluate(RunArgs),
    /// Cross-validate every (model, epsilon) of the config's sweep block.
    Sweep(SweepArgs),
    /// Convert a binary similarity export into CSV triples.
    ExportSimilarity(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "ml100k")]
    pub format: MovieLensFormat,
    #[arg(long, default_value_t = 20)]
    pub min_ratings: usize,
    #[arg(long, default_value_t = 200)]
    pub tau: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Destination CSV; the sidecar is written next to it as `<output>.json`.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub model: Option<ModelName>,
    /// A positive number, or `off` for the non-private variant.
    #[arg(long, value_parser = parse_privacy)]
    pub epsilon: Option<Privacy>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub neighbor_limits: Option<Vec<usize>>,
    /// Ratings file, overriding `dataset.path`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Parent of the run directory, overriding `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Also write the `top_n` strongest neighbours of every item as CSV.
    #[arg(long)]
    pub top_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Reuse cells already completed in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Binary similarity file written by `train`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Average s_ij and s_ji before exporting.
    #[arg(long)]
    pub symmetrize: bool,
}

fn parse_privacy(s: &str) -> Result<Privacy, String> {
    if s == "off" {
        return Ok(Privacy::Off);
    }
    match s.parse::<f64>() {
        Ok(e) if e > 0.0 => Ok(Privacy::Epsilon(e)),
        _ => Err(format!("expected a positive number or `off`, got `{s}`")),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    // a second initialisation (e.g. in tests) keeps the existing pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match cli.command {
        Command::Ingest(a) => ingest_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::ExportSimilarity(a) => export_cmd(a),
    }
}

fn ingest_cmd(a: IngestArgs) -> Result<(), CliError> {
    let params = PreprocessParams { min_ratings: a.min_ratings, tau: a.tau, seed: a.seed };
    params.validate().map_err(CliError::usage)?;
    let data = read_raw(&a.input, a.format, &params)?;
    if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    }
    ingest::write_cache(&data, &params, &a.output).map_err(CliError::compute)?;
    println!("N = {}", data.n_users());
    println!("M = {}", data.n_items());
    println!("ratings = {}", data.len());
    println!("phi = {}", data.scale().span());
    println!("wrote {} and {}", a.output.display(), ingest::sidecar_path(&a.output).display());
    Ok(())
}

fn read_raw(path: &Path, format: MovieLensFormat, params: &PreprocessParams) -> Result<RatingDataset, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("ratings file not found: {}", path.display())));
    }
    let raw = ingest::parse_movielens(path, format)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    ingest::preprocess(&raw, params).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// The configured dataset: a cache from `ingest` when a sidecar sits next to
/// the path, otherwise a raw MovieLens file preprocessed on the fly.
fn load_dataset(cfg: &RunConfig) -> Result<RatingDataset, CliError> {
    let path = &cfg.dataset.path;
    let params = cfg.dataset.params();
    if ingest::sidecar_path(path).is_file() && path.is_file() {
        let (data, side) = ingest::read_cache(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if (side.min_ratings, side.tau, side.seed) != (params.min_ratings, params.tau, params.seed) {
            return Err(CliError::Usage(format!(
                "{} was cached with min_ratings={}, tau={}, seed={}, which does not match the config",
                path.display(),
                side.min_ratings,
                side.tau,
                side.seed
            )));
        }
        return Ok(data);
    }
    read_raw(path, cfg.dataset.format, &params)
}

fn resolve(a: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(m) = a.model {
        cfg.model.name = m;
    }
    if let Some(p) = a.epsilon {
        cfg.privacy = p;
    }
    if let Some(s) = &a.seeds {
        cfg.cv.seeds = s.clone();
    }
    if let Some(f) = a.folds {
        cfg.cv.folds = f;
    }
    if let Some(l) = &a.neighbor_limits {
        cfg.cv.neighbor_limits = l.clone();
    }
    if let Some(d) = &a.dataset {
        cfg.dataset.path = d.clone();
    }
    if let Some(o) = &a.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_run_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::compute)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    model: String,
    privacy: Privacy,
    seed: u64,
    n_users: usize,
    n_items: usize,
    n_ratings: usize,
    train_rmse: f64,
    record: &'a RunRecord,
}

#[derive(Serialize)]
struct SamplingAccount<'a> {
    epsilon: f64,
    bound: f64,
    drift_factor: f64,
    granularity: &'a str,
    caveat: &'a str,
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.run)?;
    let data = load_dataset(&cfg)?;
    let spec = cfg.model_spec(cfg.model.name)?;
    let seed = cfg.cv.seeds[0];
    let dir = prepare_run_dir(&cfg)?;
    let trained = spec.train(&data, cfg.privacy, seed).map_err(CliError::compute)?;
    let released = trained.model.released();

    let mut w = create(&dir.join("similarity.bin"))?;
    export::write_binary(released, &mut w).map_err(CliError::compute)?;
    w.flush().map_err(CliError::compute)?;
    if let Some(n) = a.top_n {
        export::write_triples(released, Some(n), create(&dir.join("similarity.csv"))?)
            .map_err(CliError::compute)?;
    }
    let train_rmse = eval::training_rmse(released, &data).map_err(CliError::compute)?;
    write_json(
        &dir.join("run.json"),
        &TrainRecord {
            model: spec.name().into(),
            privacy: cfg.privacy,
            seed,
            n_users: data.n_users(),
            n_items: data.n_items(),
            n_ratings: data.len(),
            train_rmse,
            record: &trained.record,
        },
    )?;
    match &trained.record {
        RunRecord::DpSgd(run) => write_json(&dir.join("privacy.json"), &run.account)?,
        RunRecord::Dpps(run) => write_json(
            &dir.join("privacy.json"),
            &SamplingAccount {
                epsilon: run.config.epsilon,
                bound: run.bound,
                drift_factor: run.drift_factor,
                granularity: &run.granularity,
                caveat: &run.caveat,
            },
        )?,
        RunRecord::Baseline => {}
    }
    println!("{} ({}) trained on {} ratings, training RMSE {train_rmse:.5}", spec.name(), cfg.privacy, data.len());
    println!("run directory {}", dir.display());
    Ok(())
}

fn settings(cfg: &RunConfig, limits: Vec<usize>) -> CvSettings {
    CvSettings {
        folds: cfg.cv.folds,
        seeds: cfg.cv.seeds.clone(),
        neighbor_limits: limits,
        record_wall_time: cfg.cv.wall_time,
    }
}

fn evaluate_cmd(a: RunArgs) -> Result<(), CliError> {
    let cfg = resolve(&a)?;
    let data = load_dataset(&cfg)?;
    let spec = cfg.model_spec(cfg.model.name)?;
    let dir = prepare_run_dir(&cfg)?;
    let out = eval::run_cv_detailed(&data, &spec, cfg.privacy, &settings(&cfg, cfg.cv.neighbor_limits.clone()))
        .map_err(CliError::compute)?;
    out.report.write_csvs(&dir).map_err(CliError::compute)?;
    write_json(&dir.join("runs.json"), &out.runs)?;
    print_aggregates(&out.report);
    println!("run directory {}", dir.display());
    Ok(())
}

/// One (model, privacy, seed, fold) unit of a sweep.
#[derive(Debug, Clone)]
struct Cell {
    model: ModelName,
    privacy: Privacy,
    seed: u64,
    fold: usize,
}

#[derive(Serialize)]
struct CellKey<'a> {
    dataset: &'a crate::config::DatasetConfig,
    model: &'a crate::config::ModelConfig,
    name: ModelName,
    privacy: Privacy,
    folds: usize,
    seed: u64,
    fold: usize,
    limits: &'a [usize],
    wall_time: bool,
}

#[derive(Serialize, Deserialize)]
struct CachedCell {
    rows: Vec<EvalRow>,
}

fn sweep_cmd(a: SweepArgs) -> Result<(), CliError> {
    let cfg = resolve(&a.run)?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{} has no [sweep] block", a.run.config.display())))?;
    let data = load_dataset(&cfg)?;
    let dir = prepare_run_dir(&cfg)?;
    let cell_dir = dir.join("cells");
    fs::create_dir_all(&cell_dir).map_err(|e| CliError::Compute(format!("{}: {e}", cell_dir.display())))?;
    let limits =
        if sweep.neighbor_limits.is_empty() { cfg.cv.neighbor_limits.clone() } else { sweep.neighbor_limits.clone() };
    let cv = settings(&cfg, limits.clone());

    let mut cells = Vec::new();
    for &model in &sweep.models {
        let levels: Vec<Privacy> =
            if model.is_private() { sweep.epsilons.iter().map(|&e| Privacy::Epsilon(e)).collect() } else { vec![Privacy::Off] };
        for privacy in levels {
            for &seed in &cfg.cv.seeds {
                for fold in 0..cfg.cv.folds {
                    cells.push(Cell { model, privacy, seed, fold });
                }
            }
        }
    }
    let specs: Vec<(ModelName, ModelSpec)> =
        sweep.models.iter().map(|&m| cfg.model_spec(m).map(|s| (m, s))).collect::<Result<_, _>>()?;
    let spec_of = |m: ModelName| &specs.iter().find(|(n, _)| *n == m).expect("spec for every model").1;

    let key = |c: &Cell| {
        hex_digest(
            serde_json::to_vec(&CellKey {
                dataset: &cfg.dataset,
                model: &cfg.model,
                name: c.model,
                privacy: c.privacy,
                folds: cfg.cv.folds,
                seed: c.seed,
                fold: c.fold,
                limits: &limits,
                wall_time: cfg.cv.wall_time,
            })
            .expect("cell key serialises"),
        )
    };

    let results: Vec<(Cell, Result<(Vec<EvalRow>, bool), String>)> = cells
        .par_iter()
        .map(|c| {
            let path = cell_dir.join(format!("{}.json", key(c)));
            if a.resume {
                if let Some(cached) = fs::read(&path).ok().and_then(|b| serde_json::from_slice::<CachedCell>(&b).ok()) {
                    return (c.clone(), Ok((cached.rows, true)));
                }
            }
            let outcome = eval::run_cell(&data, spec_of(c.model), c.privacy, &cv, c.seed, c.fold)
                .map_err(|e| e.to_string())
                .and_then(|(rows, _): (Vec<EvalRow>, CellRun)| {
                    let bytes = serde_json::to_vec(&CachedCell { rows: rows.clone() }).map_err(|e| e.to_string())?;
                    fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
                    Ok((rows, false))
                });
            (c.clone(), outcome)
        })
        .collect();

    let mut report = EvalReport::default();
    let mut failures = Vec::new();
    let mut reused = 0;
    for (cell, outcome) in results {
        match outcome {
            Ok((rows, cached)) => {
                reused += usize::from(cached);
                report.rows.extend(rows);
            }
            Err(e) => failures.push((cell, e)),
        }
    }
    report.write_csvs(&dir).map_err(CliError::compute)?;
    print_aggregates(&report);
    println!("{} cells, {reused} reused from cache, {} failed", cells.len(), failures.len());
    println!("run directory {}", dir.display());
    if failures.is_empty() {
        let _ = fs::remove_file(dir.join("failures.csv"));
        return Ok(());
    }
    let mut w = create(&dir.join("failures.csv"))?;
    writeln!(w, "model,epsilon,seed,fold,error").map_err(CliError::compute)?;
    for (c, e) in &failures {
        eprintln!("cell {} eps={} seed={} fold={} failed: {e}", c.model, c.privacy, c.seed, c.fold);
        writeln!(w, "{},{},{},{},\"{}\"", c.model, c.privacy, c.seed, c.fold, e.replace('"', "'")).map_err(CliError::compute)?;
    }
    w.flush().map_err(CliError::compute)?;
    Err(CliError::Compute(format!("{} of {} cells failed; see failures.csv", failures.len(), cells.len())))
}

fn export_cmd(a: ExportArgs) -> Result<(), CliError> {
    let file = File::open(&a.input).map_err(|e| CliError::Usage(format!("{}: {e}", a.input.display())))?;
    let mut s = export::read_binary(std::io::BufReader::new(file))
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.input.display())))?;
    if a.symmetrize {
        s = s.symmetrized();
    }
    export::write_triples(&s, a.top_n, create(&a.output)?).map_err(CliError::compute)?;
    println!("wrote {}", a.output.display());
    Ok(())
}

fn print_aggregates(report: &EvalReport) {
    println!("{:<12} {:>12} {:>6} {:>10} {:>10} {:>5}", "model", "epsilon", "N", "mean_rmse", "std_rmse", "n");
    for a in report.aggregates() {
        println!(
            "{:<12} {:>12} {:>6} {:>10.5} {:>10.5} {:>5}",
            a.model, a.epsilon, a.neighbor_limit, a.mean_rmse, a.std_rmse, a.count
        );
    }
}
