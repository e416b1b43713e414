//! Command-line front end: JSON experiment configs, deterministic file
//! outputs (CSV series, JSON summaries, JSONL step logs), and sweep
//! orchestration.
//!
//! Exit codes: 0 success (including flagged divergence — a measured
//! outcome), 2 config error, 3 runtime/solver error.

use crate::data::{
    load_cifar10_bin, normalize_per_channel, synthetic_dataset, ImageDataset, StatsSource,
    SyntheticMode,
};
use crate::error::{Error, Result};
use crate::linalg::SolverConfig;
use crate::netfwd::LabeledBatch;
use crate::ntk::{alignment_sweep, ntk_lambda_max, weyl_check, GramMode};
use crate::oscillator::{
    fit_decay, measure_limit_cycle, predict, simulate_discrete, OscillatorConfig,
};
use crate::toyloss::{default_init, train_toy, ToyConfig, ToyState};
use crate::trainer::{detect_onset, run, stabilization_level, sweep, RunConfig};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "eoslab", about = "Edge-of-stability weight-decay laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Parser)]
pub struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for sweep cells (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Step-log format.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Iterate the damped-oscillator map and compare against closed forms.
    Simulate(CommonArgs),
    /// Train the three-variable toy loss over a γ grid.
    Toy(CommonArgs),
    /// Train an MLP with full-batch GD + weight decay, probing curvature.
    Train(CommonArgs),
    /// Grid of (γ, seed) training runs with summary rows.
    Sweep(CommonArgs),
    /// NTK Gram spectrum, Weyl-bound report, and N-convergence table.
    Ntk(CommonArgs),
    /// Rank-one alignment sweep over α.
    Align(CommonArgs),
}

// ---- command configs ------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub oscillator: OscillatorConfig,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyCliConfig {
    pub toy: ToyConfig,
    pub eta: f64,
    pub gammas: Vec<f64>,
    pub steps: usize,
    #[serde(default)]
    pub init: Option<ToyState>,
}

/// Where training data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        n: usize,
        seed: u64,
        mode: SyntheticMode,
    },
    Cifar10 {
        paths: Vec<PathBuf>,
        count: usize,
        #[serde(default)]
        normalize_full: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCliConfig {
    pub run: RunConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCliConfig {
    pub run: RunConfig,
    pub data: DataConfig,
    pub gammas: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtkCliConfig {
    pub run: RunConfig,
    pub data: DataConfig,
    #[serde(default = "default_gram_mode")]
    pub mode: GramMode,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Sample counts for the λmax(Θ̂)/N convergence table (empty to skip).
    #[serde(default)]
    pub n_grid: Vec<usize>,
    /// Training steps before the NTK is measured (0 = at initialization).
    #[serde(default)]
    pub train_steps: usize,
}

fn default_gram_mode() -> GramMode {
    GramMode::PerOutput
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignCliConfig {
    pub spectrum: Vec<f64>,
    pub b: Vec<f64>,
    pub alphas: Vec<f64>,
}

// ---- plumbing --------------------------------------------------------------

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn resolve_dataset(data: &DataConfig, input_dim: usize, classes: usize) -> Result<ImageDataset> {
    match data {
        DataConfig::Synthetic { n, seed, mode } => {
            synthetic_dataset(*n, input_dim, classes, *seed, *mode)
        }
        DataConfig::Cifar10 {
            paths,
            count,
            normalize_full,
        } => {
            let ds = load_cifar10_bin(paths, *count)?;
            let source = if *normalize_full {
                StatsSource::FullTrainSet(paths.clone())
            } else {
                StatsSource::SelfStats
            };
            normalize_per_channel(&ds, source)
        }
    }
}

fn dataset_batch(ds: &ImageDataset) -> Result<LabeledBatch> {
    LabeledBatch::new(ds.inputs.clone(), ds.one_hot.clone())
}

#[cfg(feature = "parallel")]
fn configure_jobs(jobs: Option<usize>) {
    if let Some(j) = jobs {
        if j > 0 {
            // Best-effort: fails harmlessly if a pool already exists.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_jobs(_jobs: Option<usize>) {}

/// Entry point used by the binary: parses args, runs the command, returns the
/// process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let (args, result) = match &cli.command {
        Command::Simulate(a) => (a, cmd_simulate(a)),
        Command::Toy(a) => (a, cmd_toy(a)),
        Command::Train(a) => (a, cmd_train(a)),
        Command::Sweep(a) => (a, cmd_sweep(a)),
        Command::Ntk(a) => (a, cmd_ntk(a)),
        Command::Align(a) => (a, cmd_align(a)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e @ Error::Config(_)) | Err(e @ Error::Json(_)) => {
            eprintln!("config error ({}): {e}", args.config.display());
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn prepare_out(args: &CommonArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    Ok(())
}

// ---- commands ---------------------------------------------------------------

fn cmd_simulate(args: &CommonArgs) -> Result<()> {
    let cfg: SimulateConfig = read_config(&args.config)?;
    cfg.oscillator
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
    if cfg.steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    prepare_out(args)?;
    let traj = simulate_discrete(&cfg.oscillator, cfg.steps)?;
    let prediction = predict(&cfg.oscillator)?;

    let mut csv = String::from("t,x,y\n");
    for i in 0..traj.len() {
        writeln!(csv, "{},{},{}", traj.times[i], traj.xs[i], traj.ys[i]).unwrap();
    }
    write_text(&args.out, "trajectory.csv", &csv)?;
    write_json(&args.out, "prediction.json", &prediction)?;

    #[derive(Serialize)]
    struct Report {
        diverged: bool,
        measured_amplitude: Option<f64>,
        measured_mean_x: Option<f64>,
        measured_y_rest: Option<f64>,
        fitted_decay_rate: Option<f64>,
        fitted_frequency: Option<f64>,
    }
    let cycle = measure_limit_cycle(&traj, 0.2).ok();
    let decay = fit_decay(&traj).ok();
    let report = Report {
        diverged: traj.diverged,
        measured_amplitude: cycle.map(|c| c.0),
        measured_mean_x: cycle.map(|c| c.1),
        measured_y_rest: cycle.map(|c| c.2),
        fitted_decay_rate: decay.map(|d| d.0),
        fitted_frequency: decay.map(|d| d.1),
    };
    write_json(&args.out, "report.json", &report)?;
    write_json(&args.out, "effective_config.json", &cfg)?;
    Ok(())
}

fn cmd_toy(args: &CommonArgs) -> Result<()> {
    let cfg: ToyCliConfig = read_config(&args.config)?;
    cfg.toy.validate().map_err(|e| Error::Config(e.to_string()))?;
    if cfg.gammas.is_empty() {
        return Err(Error::Config("gammas must be non-empty".into()));
    }
    prepare_out(args)?;
    let init = cfg.init.unwrap_or_else(|| default_init(&cfg.toy));

    #[derive(Serialize)]
    struct GammaSummary {
        gamma: f64,
        stabilization: Option<f64>,
        diverged: bool,
    }
    let mut csv = String::from("gamma,step,loss,sharpness\n");
    let mut summaries = Vec::new();
    for &gamma in &cfg.gammas {
        let run = train_toy(&cfg.toy, cfg.eta, gamma, cfg.steps, init)?;
        for s in &run.steps {
            writeln!(csv, "{},{},{},{}", gamma, s.step, s.loss, s.sharpness).unwrap();
        }
        let sharp: Vec<f64> = run.steps.iter().map(|s| s.sharpness).collect();
        summaries.push(GammaSummary {
            gamma,
            stabilization: stabilization_level(&sharp).ok(),
            diverged: run.diverged,
        });
    }
    write_text(&args.out, "toy_runs.csv", &csv)?;
    write_json(&args.out, "summary.json", &summaries)?;
    write_json(&args.out, "effective_config.json", &cfg)?;
    Ok(())
}

fn step_log_jsonl(log: &crate::trainer::RunLog) -> String {
    #[derive(Serialize)]
    struct StepRecord<'a> {
        step: usize,
        loss: f64,
        delta_loss: f64,
        lambda: &'a [f64],
        alpha: f64,
        beta: f64,
        c_x: f64,
        c_y: f64,
        c_y_crit: f64,
    }
    let mut out = String::new();
    for p in &log.probes {
        let rec = StepRecord {
            step: p.step,
            loss: p.loss,
            delta_loss: p.delta_loss,
            lambda: &p.lambda_topk,
            alpha: p.alpha,
            beta: p.beta,
            c_x: p.c_x,
            c_y: p.c_y,
            c_y_crit: p.c_y_crit,
        };
        out.push_str(&serde_json::to_string(&rec).unwrap());
        out.push('\n');
    }
    out
}

fn step_log_csv(log: &crate::trainer::RunLog) -> String {
    let mut out = String::from("step,loss,delta_loss,lambda_max,alpha,beta,c_x,c_y,c_y_crit\n");
    for p in &log.probes {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.step,
            p.loss,
            p.delta_loss,
            p.sharpness(),
            p.alpha,
            p.beta,
            p.c_x,
            p.c_y,
            p.c_y_crit
        )
        .unwrap();
    }
    out
}

fn cmd_train(args: &CommonArgs) -> Result<()> {
    let mut cfg: TrainCliConfig = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    cfg.run.validate().map_err(|e| Error::Config(e.to_string()))?;
    prepare_out(args)?;
    let ds = resolve_dataset(&cfg.data, cfg.run.spec.input_dim(), cfg.run.spec.output_dim())?;
    let batch = dataset_batch(&ds)?;
    let log = run(&cfg.run, &batch)?;

    let mut losses_csv = String::from("step,loss\n");
    for (t, l) in log.losses.iter().enumerate() {
        writeln!(losses_csv, "{t},{l}").unwrap();
    }
    write_text(&args.out, "losses.csv", &losses_csv)?;
    match args.format.unwrap_or(Format::Jsonl) {
        Format::Jsonl => write_text(&args.out, "steps.jsonl", &step_log_jsonl(&log))?,
        Format::Csv => write_text(&args.out, "steps.csv", &step_log_csv(&log))?,
    }

    #[derive(Serialize)]
    struct Summary {
        steps_executed: usize,
        diverged: bool,
        diverged_step: Option<usize>,
        onset: Option<usize>,
        stabilization: Option<f64>,
        params_digest: String,
        dataset: crate::data::DatasetMeta,
    }
    let sharp: Vec<f64> = log.probes.iter().map(|p| p.sharpness()).collect();
    let summary = Summary {
        steps_executed: log.losses.len(),
        diverged: log.diverged,
        diverged_step: log.diverged_step,
        onset: detect_onset(&log.losses, cfg.run.warmup_ignore),
        stabilization: stabilization_level(&sharp).ok(),
        params_digest: format!("{:016x}", log.params_digest),
        dataset: ds.meta.clone(),
    };
    write_json(&args.out, "summary.json", &summary)?;
    write_json(&args.out, "effective_config.json", &cfg)?;
    Ok(())
}

fn cmd_sweep(args: &CommonArgs) -> Result<()> {
    let mut cfg: SweepCliConfig = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    cfg.run.validate().map_err(|e| Error::Config(e.to_string()))?;
    if cfg.gammas.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("gammas and seeds must be non-empty".into()));
    }
    configure_jobs(args.jobs);
    prepare_out(args)?;
    let ds = resolve_dataset(&cfg.data, cfg.run.spec.input_dim(), cfg.run.spec.output_dim())?;
    let batch = dataset_batch(&ds)?;
    let rows = sweep(&cfg.run, &cfg.gammas, &cfg.seeds, &batch)?;

    let mut csv =
        String::from("gamma,seed,onset,stabilization,crossing,diverged,error\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.gamma,
            r.seed,
            r.onset.map_or(String::new(), |v| v.to_string()),
            r.stabilization.map_or(String::new(), |v| v.to_string()),
            r.crossing,
            r.diverged,
            r.error.as_deref().unwrap_or("")
        )
        .unwrap();
    }
    write_text(&args.out, "sweep.csv", &csv)?;
    write_json(&args.out, "rows.json", &rows)?;
    write_json(&args.out, "effective_config.json", &cfg)?;
    Ok(())
}

fn cmd_ntk(args: &CommonArgs) -> Result<()> {
    let mut cfg: NtkCliConfig = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    cfg.run.validate().map_err(|e| Error::Config(e.to_string()))?;
    prepare_out(args)?;
    let ds = resolve_dataset(&cfg.data, cfg.run.spec.input_dim(), cfg.run.spec.output_dim())?;
    let batch = dataset_batch(&ds)?;

    let params = if cfg.train_steps > 0 {
        let mut run_cfg = cfg.run.clone();
        run_cfg.steps = cfg.train_steps;
        run_cfg.probe_every = 0;
        run(&run_cfg, &batch)?.final_params
    } else {
        let mut spec = cfg.run.spec.clone();
        spec.init_seed = cfg.run.seed;
        crate::netfwd::init_params(&spec)
    };

    let report = weyl_check(&params, &batch, &cfg.run.spec, &cfg.solver)?;
    write_json(&args.out, "weyl_report.json", &report)?;

    if !cfg.n_grid.is_empty() {
        let mut csv = String::from("n,lambda_max_ntk,lambda_over_n\n");
        for &n in &cfg.n_grid {
            if n == 0 || n > batch.n() {
                return Err(Error::Config(format!(
                    "n_grid entry {n} outside 1..={}",
                    batch.n()
                )));
            }
            let sub = LabeledBatch::new(
                crate::linalg::DenseMatrix::from_fn(n, batch.inputs.cols(), |i, j| {
                    batch.inputs.get(i, j)
                }),
                crate::linalg::DenseMatrix::from_fn(n, batch.targets.cols(), |i, j| {
                    batch.targets.get(i, j)
                }),
            )?;
            let lam = ntk_lambda_max(&params, &sub, &cfg.run.spec, cfg.mode, &cfg.solver)?;
            writeln!(csv, "{},{},{}", n, lam, lam / n as f64).unwrap();
        }
        write_text(&args.out, "n_convergence.csv", &csv)?;
    }
    write_json(&args.out, "effective_config.json", &cfg)?;
    Ok(())
}

fn cmd_align(args: &CommonArgs) -> Result<()> {
    let cfg: AlignCliConfig = read_config(&args.config)?;
    prepare_out(args)?;
    let rows = alignment_sweep(&cfg.spectrum, &cfg.b, &cfg.alphas)
        .map_err(|e| match e {
            Error::InvalidArgument(m) | Error::Config(m) => Error::Config(m),
            other => other,
        })?;
    let mut csv = String::from("alpha,index,alignment\n");
    for (alpha, idx, val) in &rows {
        writeln!(csv, "{},{},{}", alpha, idx, val).unwrap();
    }
    write_text(&args.out, "alignment.csv", &csv)?;
    write_json(&args.out, "effective_config.json", &cfg)?;
    Ok(())
}
