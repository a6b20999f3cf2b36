//! The `jdgen` command line: tabulate, train, generate, evaluate and
//! reproduce, with artifacts and a resumable manifest in a work directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::SampleBatch;
use crate::error::{Error, Result};
use crate::evaluation::{self, generation_seed, held_out_dataset, msle_mean, MetricsReport, RunRecord};
use crate::generation::{generate, Mode};
use crate::kernels::{fingerprint, tabulate, KernelTable};
use crate::score_model::ScoreNetParams;
use crate::training::{train, TrainHistory};

pub const KERNELS_FILE: &str = "kernels.jdlk";
pub const WEIGHTS_FILE: &str = "weights.jdlw";
pub const HISTORY_FILE: &str = "history.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn samples_file(mode: Mode) -> String {
    format!("samples_{mode}.csv")
}

pub fn sidecar_file(mode: Mode) -> String {
    format!("samples_{mode}.json")
}

pub fn metrics_file(mode: Mode) -> String {
    format!("metrics_{mode}.json")
}

#[derive(Debug, Parser)]
#[command(name = "jdgen", version, about = "Jump-diffusion score-based generative modelling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding all artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Master seed for training and experiments.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded execution for audit runs.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ode,
    Sde,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ode => Mode::Ode,
            ModeArg::Sde => Mode::Sde,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Tabulate,
    Train,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the radial kernels.
    Tabulate {
        /// Rewrite the table even if it is up to date.
        #[arg(long)]
        force: bool,
    },
    /// Train the score network.
    Train {
        /// Training data as headerless CSV.
        #[arg(long, conflicts_with = "synthetic_alpha")]
        data: Option<PathBuf>,
        /// Draw the training data from the isotropic alpha-stable law.
        #[arg(long)]
        synthetic_alpha: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate samples with a trained network.
    Generate {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        n: Option<usize>,
        /// Weights file; defaults to the one in the work directory.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Score generated samples against a target sample.
    Evaluate {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Generated samples; defaults to the mode's samples file.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Target sample; defaults to a fresh alpha-stable draw.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the whole benchmark: tabulate, train, then repeated generation and
    /// evaluation for both samplers.
    Reproduce {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        synthetic_alpha: Option<f64>,
        /// Train a new network for every run.
        #[arg(long)]
        retrain_per_run: bool,
        /// Stop after the given stage (the manifest records progress).
        #[arg(long, value_enum)]
        stop_after: Option<Stage>,
    },
}

/// Record of a work directory's configuration, artifacts and progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub seed: u64,
    pub kernel_fingerprint: String,
    pub artifacts: BTreeMap<String, String>,
    pub completed_stages: Vec<String>,
    pub partial_runs: Vec<RunRecord>,
    pub created_unix: u64,
    pub updated_unix: u64,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    fn fresh(cfg: &RunConfig) -> Self {
        let now = now_unix();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            seed: cfg.experiment.seed,
            kernel_fingerprint: format!("{:016x}", fingerprint(&cfg.model)),
            artifacts: BTreeMap::new(),
            completed_stages: Vec::new(),
            partial_runs: Vec::new(),
            created_unix: now,
            updated_unix: now,
        }
    }

    /// The manifest in `dir` if it was written for `cfg`, otherwise a new one.
    pub fn open(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::fresh(cfg));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        match serde_json::from_str::<RunManifest>(&text) {
            Ok(m) if m.config == *cfg => Ok(m),
            _ => Ok(Self::fresh(cfg)),
        }
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        self.updated_unix = now_unix();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn is_done(&self, stage: &str) -> bool {
        self.completed_stages.iter().any(|s| s == stage)
    }

    fn mark(&mut self, stage: &str) {
        if !self.is_done(stage) {
            self.completed_stages.push(stage.to_string());
        }
    }

    fn unmark(&mut self, stage: &str) {
        self.completed_stages.retain(|s| s != stage);
    }

    fn artifact(&mut self, name: &str, file: &str) {
        self.artifacts.insert(name.to_string(), file.to_string());
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 2 for usage and configuration errors, 3 for numerical
/// failures.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                3
            } else {
                2
            }
        }
    }
}

fn thread_count(strict: bool) -> Result<Option<usize>> {
    if strict {
        return Ok(Some(1));
    }
    match std::env::var("JDGEN_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("JDGEN_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.train.seed = seed;
        cfg.experiment.seed = seed;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.global.strict)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let dir = cli.global.workdir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    pool.install(|| dispatch(cli.command, cfg, &dir))
}

fn dispatch(command: Command, mut cfg: RunConfig, dir: &Path) -> Result<()> {
    match command {
        Command::Tabulate { force } => {
            cfg.validate()?;
            let mut manifest = RunManifest::open(dir, &cfg)?;
            cmd_tabulate(&cfg, dir, force, &mut manifest)?;
            manifest.save(dir)
        }
        Command::Train { data, synthetic_alpha, epochs } => {
            if let Some(a) = synthetic_alpha {
                cfg.experiment.alpha = a;
            }
            if let Some(e) = epochs {
                cfg.train.n_epochs = e;
            }
            cfg.validate()?;
            let mut manifest = RunManifest::open(dir, &cfg)?;
            cmd_train(&cfg, dir, data.as_deref(), &mut manifest)?;
            manifest.save(dir)
        }
        Command::Generate { mode, n, weights } => {
            if let Some(n) = n {
                cfg.experiment.n_gen = n;
            }
            cfg.model.validate()?;
            cmd_generate(&cfg, dir, mode.into(), cfg.experiment.n_gen, weights.as_deref())
        }
        Command::Evaluate { mode, samples, data } => {
            cfg.validate()?;
            cmd_evaluate(&cfg, dir, mode.into(), samples.as_deref(), data.as_deref())
        }
        Command::Reproduce { runs, epochs, n, synthetic_alpha, retrain_per_run, stop_after } => {
            if let Some(r) = runs {
                cfg.experiment.n_runs = r;
            }
            if let Some(e) = epochs {
                cfg.train.n_epochs = e;
            }
            if let Some(n) = n {
                cfg.experiment.n_gen = n;
            }
            if let Some(a) = synthetic_alpha {
                cfg.experiment.alpha = a;
            }
            cfg.experiment.retrain_per_run |= retrain_per_run;
            cfg.validate()?;
            cmd_reproduce(&cfg, dir, stop_after)
        }
    }
}

fn load_table(cfg: &RunConfig, dir: &Path) -> Result<KernelTable> {
    let path = dir.join(KERNELS_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    KernelTable::load(&path, &cfg.model)
}

/// Writes the kernel table unless an up-to-date one exists.
pub fn cmd_tabulate(cfg: &RunConfig, dir: &Path, force: bool, manifest: &mut RunManifest) -> Result<KernelTable> {
    let path = dir.join(KERNELS_FILE);
    if !force && path.exists() {
        if let Ok(table) = KernelTable::load(&path, &cfg.model) {
            println!("kernel table up to date ({})", path.display());
            manifest.artifact("kernels", KERNELS_FILE);
            manifest.mark("tabulate");
            return Ok(table);
        }
    }
    let table = tabulate(&cfg.model).map_err(|e| e.in_stage("tabulate"))?;
    table.save(&path)?;
    println!(
        "wrote {n}x{n} kernel table to {} (fingerprint {:016x})",
        path.display(),
        table.fingerprint(),
        n = cfg.model.n_grid
    );
    manifest.artifact("kernels", KERNELS_FILE);
    manifest.mark("tabulate");
    Ok(table)
}

/// Trains on `data` (or the synthetic target) and writes weights and history.
pub fn cmd_train(cfg: &RunConfig, dir: &Path, data: Option<&Path>, manifest: &mut RunManifest) -> Result<ScoreNetParams> {
    let table = load_table(cfg, dir)?;
    let dataset = match data {
        Some(path) => SampleBatch::read_csv(path)?,
        None => evaluation::training_dataset(cfg, None)?,
    };
    let epochs = cfg.train.n_epochs;
    let mut report = |epoch: usize, loss: f64| println!("epoch {}/{epochs} loss {loss:.6}", epoch + 1);
    let (params, history) =
        train(&dataset, &cfg.model, &cfg.train, &table, &mut report).map_err(|e| e.in_stage("train"))?;
    params.save(&dir.join(WEIGHTS_FILE))?;
    write_json(&dir.join(HISTORY_FILE), &history)?;
    if let Some(loss) = history.final_loss() {
        println!("final loss {loss:.6}");
    }
    manifest.artifact("weights", WEIGHTS_FILE);
    manifest.artifact("history", HISTORY_FILE);
    manifest.mark("train");
    Ok(params)
}

pub fn cmd_generate(cfg: &RunConfig, dir: &Path, mode: Mode, n: usize, weights: Option<&Path>) -> Result<()> {
    let path = weights.map(Path::to_path_buf).unwrap_or_else(|| dir.join(WEIGHTS_FILE));
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let params = ScoreNetParams::load(&path, &cfg.model)?;
    let result = generate(&params, &cfg.model, mode, n, generation_seed(cfg, 0)).map_err(|e| e.in_stage("generate"))?;
    let csv = dir.join(samples_file(mode));
    result.write(&csv, &dir.join(sidecar_file(mode)), fingerprint(&cfg.model))?;
    println!("wrote {n} {mode} samples to {}", csv.display());
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, dir: &Path, mode: Mode, samples: Option<&Path>, data: Option<&Path>) -> Result<()> {
    let path = samples.map(Path::to_path_buf).unwrap_or_else(|| dir.join(samples_file(mode)));
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let generated = SampleBatch::read_csv(&path)?;
    let target = match data {
        Some(p) => SampleBatch::read_csv(p)?,
        None => held_out_dataset(cfg, 0)?,
    };
    let value = msle_mean(&target, &generated, cfg.experiment.xi).map_err(|e| e.in_stage("evaluate"))?;
    let report = MetricsReport::from_runs(mode, vec![value], cfg)?;
    write_json(&dir.join(metrics_file(mode)), &report)?;
    println!("{mode} msle {value:.6}");
    Ok(())
}

/// The full benchmark with resumable stages.
pub fn cmd_reproduce(cfg: &RunConfig, dir: &Path, stop_after: Option<Stage>) -> Result<()> {
    let mut manifest = RunManifest::open(dir, cfg)?;
    let table = match (manifest.is_done("tabulate"), load_table(cfg, dir)) {
        (true, Ok(table)) => {
            println!("tabulate: already complete");
            table
        }
        _ => {
            manifest.unmark("tabulate");
            cmd_tabulate(cfg, dir, false, &mut manifest)?
        }
    };
    manifest.save(dir)?;
    if stop_after == Some(Stage::Tabulate) {
        return Ok(());
    }

    let mut params = None;
    if !cfg.experiment.retrain_per_run {
        let weights = dir.join(WEIGHTS_FILE);
        let loaded = if manifest.is_done("train") { ScoreNetParams::load(&weights, &cfg.model).ok() } else { None };
        params = Some(match loaded {
            Some(p) => {
                println!("train: already complete");
                p
            }
            None => {
                manifest.unmark("train");
                manifest.partial_runs.clear();
                cmd_train(cfg, dir, None, &mut manifest)?
            }
        });
        manifest.save(dir)?;
    }
    if stop_after == Some(Stage::Train) {
        return Ok(());
    }

    let done = manifest.partial_runs.clone();
    if !done.is_empty() {
        println!("evaluate: resuming with {} completed runs", done.len());
    }
    let mut on_run = |record: &RunRecord| {
        println!("run {:>3} {}: msle {:.6}", record.run + 1, record.mode, record.msle);
        manifest.partial_runs.push(*record);
        manifest.save(dir)
    };
    let reports = evaluation::run_experiment(cfg, &table, params.as_ref(), &Mode::ALL, &done, &mut on_run)
        .map_err(|e| e.in_stage("evaluate"))?;
    for report in &reports {
        let name = metrics_file(report.mode);
        write_json(&dir.join(&name), report)?;
        manifest.artifact(&format!("metrics_{}", report.mode), &name);
    }
    manifest.mark("evaluate");
    manifest.save(dir)?;

    println!();
    println!("{:<10} {:>10} {:>12}", "method", "MSLE", "SE");
    for r in &reports {
        let se = r.msle_stderr.map(|s| format!("{s:.3e}")).unwrap_or_else(|| "-".into());
        println!("{:<10} {:>10.4} {:>12}", format!("JDL-{}", r.mode.as_str().to_uppercase()), r.msle_mean, se);
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a training history written by `train`.
pub fn read_history(path: &Path) -> Result<TrainHistory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
