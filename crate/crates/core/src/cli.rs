//! The `timegci` command line: prepare, train, generate, evaluate and
//! theorycheck. Every command that produces files also writes a
//! `manifest.json` describing how they were made.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{
    dataset_stats, generate_sines, load_csv, write_csv, AutocorrEstimator, CsvOptions, Dataset, Normalizer,
    SinesConfig, BOUNDARY_EPS,
};
use crate::eval::{evaluate, EvalReport, PerturbConfig, PredictorConfig};
use crate::theory::{self, SuiteReport};
use crate::trainer::{Checkpoint, Event, Method, MetricsRow, TrainConfig, Trainer};
use crate::{seeded_rng, Error};

#[derive(Debug, Parser)]
#[command(name = "timegci", version, about = "Time-series generation by contrastive imitation")]
pub struct Cli {
    /// Upper bound on worker threads. Every command currently runs on one.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a normalized dataset directory from the simulator or a CSV file.
    Prepare(PrepareArgs),
    /// Train a generator on a prepared dataset.
    Train(TrainArgs),
    /// Sample trajectories from a checkpoint, on the original scale.
    Generate(GenerateArgs),
    /// Score synthetic trajectories against real ones.
    Evaluate(EvaluateArgs),
    /// Run a self-contained property suite.
    Theorycheck(TheoryArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Sines,
    Csv,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    /// Input file for `--dataset csv`.
    #[arg(long, required_if_eq("dataset", "csv"))]
    pub csv: Option<PathBuf>,
    /// Number of simulated trajectories.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Trajectory length (window length for CSV input).
    #[arg(long = "T", default_value_t = 24)]
    pub horizon: usize,
    /// Feature count of simulated data.
    #[arg(long = "D", default_value_t = 5)]
    pub dim: usize,
    /// Window stride for CSV input; defaults to non-overlapping windows.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Timegci,
    Tforcing,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Timegci => Method::TimeGci,
            MethodArg::Tforcing => Method::TForcing,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` config file; unset keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by `prepare`.
    #[arg(long, required_unless_present = "print_config")]
    pub data: Option<PathBuf>,
    /// Parent directory of the per-run directory.
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Timegci)]
    pub method: MethodArg,
    #[arg(long)]
    pub max_joint_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra overrides as `key=value`, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
    /// Resume from a checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write `last.ckpt` every this many steps (0 disables).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory written by `prepare`; its data are the real test set.
    #[arg(long)]
    pub real: PathBuf,
    /// Synthetic trajectories on the original scale, as written by `generate`.
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also write per-trajectory energy scores (needs `--checkpoint`).
    #[arg(long)]
    pub energy_scores: bool,
    #[arg(long, default_value = "synthetic")]
    pub label: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = PredictorConfig::default().steps)]
    pub predictor_steps: usize,
    /// Parent directory of the per-run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Nce,
    Gradeq,
    Eqd,
    Perturb,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training config for the perturb suite.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Joint-step budget for the perturb suite.
    #[arg(long)]
    pub max_joint_steps: Option<usize>,
    /// Simulated trajectories for the perturb suite.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
}

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, paths or configuration (exit code 2).
    Usage(String),
    /// Failure while running (exit code 1).
    Runtime(Error),
    /// A theory suite ran and reported failures (exit code 1).
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Provenance of one command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub git: Option<String>,
    pub seed: u64,
    pub threads: usize,
    pub args: Vec<String>,
    /// Effective training configuration, when the command has one.
    pub config: Option<BTreeMap<String, String>>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<String>,
    pub details: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    fn start(command: &str, seed: u64, threads: usize) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            git: git_revision(),
            seed,
            threads,
            args: std::env::args().collect(),
            config: None,
            started_unix: unix_now(),
            finished_unix: 0,
            artifacts: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details.insert(key.to_string(), serde_json::to_value(value).unwrap_or_default());
    }

    fn finish(mut self, dir: &Path) -> CliResult<()> {
        self.finished_unix = unix_now();
        self.artifacts.sort();
        write_json(&dir.join(MANIFEST), &self)
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }
}

pub const MANIFEST: &str = "manifest.json";
pub const DATA_FILE: &str = "data.csv";
pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const META_FILE: &str = "dataset.json";

/// Shape of a prepared dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub n: usize,
    pub horizon: usize,
    pub dim: usize,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(Error::io(path.display().to_string(), e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(Error::Invalid(e.to_string())))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// A fresh `<parent>/run-<unix seconds>-s<seed>` directory; a numeric suffix
/// keeps it unique when several runs start within one second.
pub fn run_dir(parent: &Path, seed: u64) -> CliResult<PathBuf> {
    create_dir(parent)?;
    let base = format!("run-{}-s{seed}", unix_now());
    let mut dir = parent.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = parent.join(format!("{base}-{k}"));
        k += 1;
    }
    create_dir(&dir)?;
    Ok(dir)
}

/// Loads the normalized data and the normalizer of a `prepare` directory.
pub fn load_prepared(dir: &Path) -> CliResult<(Dataset, Normalizer)> {
    let meta: DatasetMeta = read_json(&dir.join(META_FILE))?;
    let norm: Normalizer = read_json(&dir.join(NORMALIZER_FILE))?;
    let data = load_csv(&dir.join(DATA_FILE), CsvOptions::windows(meta.horizon))?;
    if data.dim() != meta.dim || norm.min.len() != meta.dim {
        return Err(CliError::Usage(format!("{}: inconsistent feature counts", dir.display())));
    }
    Ok((data, norm))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    match cli.command {
        Command::Prepare(a) => prepare(a, cli.threads),
        Command::Train(a) => train(a, cli.threads),
        Command::Generate(a) => generate(a, cli.threads),
        Command::Evaluate(a) => evaluate_cmd(a, cli.threads),
        Command::Theorycheck(a) => theorycheck(a),
    }
}

fn prepare(a: PrepareArgs, threads: usize) -> CliResult<()> {
    let mut manifest = RunManifest::start("prepare", a.seed, threads);
    let raw = match a.dataset {
        DatasetKind::Sines => {
            let cfg = SinesConfig {
                n: a.n,
                horizon: a.horizon,
                dim: a.dim,
                ..SinesConfig::default()
            };
            generate_sines(&cfg, a.seed)?
        }
        DatasetKind::Csv => {
            let path = a.csv.as_deref().ok_or_else(|| CliError::Usage("--csv is required with --dataset csv".into()))?;
            if !path.is_file() {
                return Err(CliError::Usage(format!("--csv: no such file {}", path.display())));
            }
            load_csv(
                path,
                CsvOptions {
                    horizon: a.horizon,
                    stride: a.stride,
                },
            )?
        }
    };
    let norm = Normalizer::fit(&raw)?;
    let data = norm.apply_dataset(&raw)?;
    create_dir(&a.out)?;
    write_csv(&data, &a.out.join(DATA_FILE))?;
    write_json(&a.out.join(NORMALIZER_FILE), &norm)?;
    let meta = DatasetMeta {
        name: raw.name.clone(),
        n: data.len(),
        horizon: data.horizon(),
        dim: data.dim(),
    };
    write_json(&a.out.join(META_FILE), &meta)?;
    manifest.artifacts = vec![DATA_FILE.into(), NORMALIZER_FILE.into(), META_FILE.into()];
    // statistics describe the original scale
    match dataset_stats(&raw, AutocorrEstimator::default()) {
        Ok(stats) => {
            fs::write(a.out.join("stats.txt"), stats.to_text()).map_err(io_err(&a.out))?;
            write_json(&a.out.join("stats.json"), &stats)?;
            manifest.artifacts.extend(["stats.txt".into(), "stats.json".into()]);
            print!("{}", stats.to_text());
        }
        Err(e) => eprintln!("skipping statistics: {e}"),
    }
    manifest.detail("dataset", &meta);
    manifest.finish(&a.out)?;
    println!("wrote {} trajectories to {}", meta.n, a.out.display());
    Ok(())
}

fn effective_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {o:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = a.max_joint_steps {
        cfg.max_joint_steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs, threads: usize) -> CliResult<()> {
    let cfg = effective_config(&a)?;
    if a.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let (data_dir, out) = (a.data.as_deref().expect("clap"), a.out.as_deref().expect("clap"));
    let (data, norm) = load_prepared(data_dir)?;
    let method = Method::from(a.method);
    let mut trainer = match &a.resume {
        Some(p) => Trainer::from_state(Checkpoint::load(p)?.state, &data)?,
        None => Trainer::new(cfg.clone(), method, &data, norm)?,
    };
    let dir = run_dir(out, trainer.state.config.seed)?;
    let mut manifest = RunManifest::start("train", trainer.state.config.seed, threads);
    manifest.config = Some(trainer.state.config.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect());
    fs::write(dir.join("config.txt"), trainer.state.config.to_text()).map_err(io_err(&dir))?;

    let metrics_path = dir.join("metrics.csv");
    let mut metrics = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    writeln!(metrics, "{}", MetricsRow::HEADER).map_err(io_err(&metrics_path))?;
    let best_path = dir.join("best.ckpt");
    let last_path = dir.join("last.ckpt");
    let started = Instant::now();
    let mut saved_best = false;
    let mut steps = 0usize;
    let quiet = a.quiet;
    let every = a.checkpoint_every;
    trainer.run(|t, e| {
        steps += 1;
        match e {
            Event::Pretrain { stage, step, loss } if !quiet && (step + 1) % 500 == 0 => {
                eprintln!("{stage:?} step {} loss {loss:.5}", step + 1);
            }
            Event::Joint {
                metrics: Some(m),
                improved,
                ..
            } => {
                writeln!(metrics, "{}", m.to_csv_line()).map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
                if *improved {
                    t.checkpoint().save(&best_path)?;
                    saved_best = true;
                }
                if !quiet {
                    eprintln!(
                        "joint step {} val {:.5}{}",
                        m.step,
                        m.val_predictive_score,
                        if *improved { " (best)" } else { "" }
                    );
                }
            }
            _ => {}
        }
        if every > 0 && steps % every == 0 {
            t.checkpoint().save(&last_path)?;
        }
        Ok(())
    })?;
    let last = trainer.checkpoint();
    last.save(&last_path)?;
    if !saved_best {
        last.save(&best_path)?;
    }
    manifest.artifacts = vec!["best.ckpt".into(), "last.ckpt".into(), "metrics.csv".into(), "config.txt".into()];
    manifest.detail("method", trainer.state.method.to_string());
    manifest.detail("energy_constructed", trainer.contrastive().is_some());
    manifest.detail("critic_constructed", trainer.contrastive().is_some());
    manifest.detail("data", data_dir.display().to_string());
    manifest.detail("joint_steps", trainer.state.joint_step);
    manifest.detail("best_val", trainer.state.best_val);
    manifest.detail("best_step", trainer.state.best_step);
    manifest.detail("runtime_secs", started.elapsed().as_secs_f64());
    manifest.finish(&dir)?;
    println!("{}", dir.display());
    Ok(())
}

fn generate(a: GenerateArgs, threads: usize) -> CliResult<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let st = &ckpt.state;
    let mut rng = seeded_rng(a.seed);
    let trajs = st.policy.sample_trajectories(a.n, st.horizon, &mut rng)?;
    let synth = st.normalizer.invert_dataset(&Dataset::new("synthetic", trajs)?)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_csv(&synth, &a.out)?;
    let mut manifest = RunManifest::start("generate", a.seed, threads);
    manifest.artifacts = vec![a.out.display().to_string()];
    manifest.detail("checkpoint", a.checkpoint.display().to_string());
    manifest.detail("n", a.n);
    let manifest_path = a.out.with_extension("manifest.json");
    manifest.finished_unix = unix_now();
    write_json(&manifest_path, &manifest)?;
    println!("wrote {} trajectories to {}", a.n, a.out.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, threads: usize) -> CliResult<()> {
    if a.energy_scores && a.checkpoint.is_none() {
        return Err(CliError::Usage("--energy-scores needs --checkpoint".into()));
    }
    let (real_norm, norm) = load_prepared(&a.real)?;
    let real = norm.invert_dataset(&real_norm)?;
    let synth = load_csv(&a.synthetic, CsvOptions::windows(real.horizon()))?;
    if synth.dim() != real.dim() {
        return Err(CliError::Runtime(Error::Shape(format!(
            "real data have D = {}, synthetic data have D = {}",
            real.dim(),
            synth.dim()
        ))));
    }
    let ckpt = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    if let Some(c) = &ckpt {
        if (c.state.horizon, c.state.dim) != (real.horizon(), real.dim()) {
            return Err(CliError::Runtime(Error::Shape("checkpoint and data shapes differ".into())));
        }
    }
    let started = Instant::now();
    let pcfg = PredictorConfig {
        steps: a.predictor_steps,
        ..PredictorConfig::default()
    };
    let row = evaluate(&a.label, &synth, &real, &pcfg, a.seed)?;
    let report = EvalReport {
        dataset: real.name.clone(),
        rows: vec![row],
        runtime_secs: started.elapsed().as_secs_f64(),
    };
    let dir = run_dir(&a.out, a.seed)?;
    let mut manifest = RunManifest::start("evaluate", a.seed, threads);
    fs::write(dir.join("scores.csv"), report.to_csv()).map_err(io_err(&dir))?;
    fs::write(dir.join("scores.txt"), report.to_text()).map_err(io_err(&dir))?;
    write_json(&dir.join("report.json"), &report)?;
    manifest.artifacts = vec!["scores.csv".into(), "scores.txt".into(), "report.json".into()];
    if a.energy_scores {
        let c = ckpt.as_ref().expect("checked above");
        let energy = &c
            .state
            .contrastive
            .as_ref()
            .ok_or_else(|| CliError::Usage("checkpoint has no energy model (teacher-forcing run)".into()))?
            .energy;
        let scaled = c.state.normalizer.apply_dataset(&synth)?.map(|t| Ok(t.clipped(BOUNDARY_EPS)))?;
        let refs: Vec<_> = scaled.trajectories().iter().collect();
        let scores = energy.quality_scores(&refs)?;
        let mut s = String::from("index,energy_score\n");
        for (i, v) in scores.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        fs::write(dir.join("energy_scores.csv"), s).map_err(io_err(&dir))?;
        manifest.artifacts.push("energy_scores.csv".into());
    }
    manifest.detail("real", a.real.display().to_string());
    manifest.detail("synthetic", a.synthetic.display().to_string());
    manifest.finish(&dir)?;
    print!("{}", report.to_text());
    println!("{}", dir.display());
    Ok(())
}

fn theorycheck(a: TheoryArgs) -> CliResult<()> {
    let report: SuiteReport = match a.suite {
        Suite::Nce => theory::nce_suite(&theory::NceConfig {
            seed: a.seed,
            ..Default::default()
        })?,
        Suite::Gradeq => theory::gradeq_suite(&theory::GradEqConfig {
            seed: a.seed,
            ..Default::default()
        })?,
        Suite::Eqd => theory::eqd_suite(&theory::EqdConfig {
            seed: a.seed,
            ..Default::default()
        })?,
        Suite::Perturb => {
            let mut train = match &a.config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = a.max_joint_steps {
                train.max_joint_steps = s;
            }
            train.seed = a.seed;
            let cfg = theory::PerturbSuiteConfig {
                sines: SinesConfig {
                    n: a.n,
                    ..SinesConfig::default()
                },
                train,
                perturb: PerturbConfig::default(),
                seed: a.seed,
            };
            let (rep, cmp) = theory::perturb_suite(&cfg)?;
            print!("{}", cmp.tforcing.to_text("T-Forcing"));
            print!("{}", cmp.timegci.to_text("TimeGCI"));
            rep
        }
    };
    print!("{}", report.to_text());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("suite {} failed", report.suite)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn missing_csv_is_a_usage_error() {
        let code = main_with_args(["timegci", "prepare", "--dataset", "csv", "--out", "/nonexistent"]);
        assert_eq!(code, 2);
    }
}
