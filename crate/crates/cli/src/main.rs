//! Command line front end for the dispflow core library.
//!
//! Subcommands map one-to-one onto the library entry points: `train` and
//! `sweep` drive the harness from JSON configs, `sample` and `eval` operate
//! on saved checkpoints, and `oracle` runs the loss property suite against
//! the reference implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dispflow_core::data::Dataset;
use dispflow_core::harness::{
    evaluate, output_root, read_manifest, run_sweep, run_to_dir, Manifest, RunConfig, SweepConfig,
    MANIFEST_FILE, SWEEP_SUMMARY_FILE,
};
use dispflow_core::model::load_checkpoint_file;
use dispflow_core::properties::{run_suite, SuiteConfig, SuiteImpls};
use dispflow_core::sampler::{sample_euler_sde, sample_heun, SamplerConfig, SamplerKind};
use dispflow_core::Tensor;

#[derive(Parser)]
#[command(
    name = "dispflow",
    version,
    about = "Train, sample, and evaluate small flow-matching models with dispersive regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from a JSON config, writing metrics and checkpoints
    Train(TrainArgs),
    /// Draw samples from a checkpoint and write them as CSV
    Sample(SampleArgs),
    /// Score a checkpoint against reference data and emit a JSON report
    Eval(EvalArgs),
    /// Check the loss implementations against the reference oracles
    Oracle(OracleArgs),
    /// Train every (lambda, tau) cell of a grid and summarize the results
    Sweep(SweepArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to a JSON run config
    #[arg(long)]
    config: PathBuf,
    /// Run directory name under the output root; defaults to the config file stem
    #[arg(long)]
    name: Option<String>,
    /// Output root; overrides the DISPFLOW_OUT environment variable
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Checkpoint to sample from
    #[arg(long)]
    ckpt: PathBuf,
    /// Integrator to use
    #[arg(long, value_enum, default_value_t = SamplerArg::Heun)]
    sampler: SamplerArg,
    /// Number of samples to draw
    #[arg(long)]
    n: usize,
    /// Seed for the initial noise and any SDE increments
    #[arg(long)]
    seed: u64,
    /// Number of integration steps
    #[arg(long, default_value_t = 250)]
    steps: usize,
    /// Noise scale for the SDE sampler; 0 reduces it to the deterministic path
    #[arg(long, default_value_t = 1.0)]
    diffusion_scale: f64,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    ckpt: PathBuf,
    /// Reference points as CSV, in the format written by `sample`
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Dataset for the held-out representation probe; defaults to the
    /// manifest next to the checkpoint when one exists
    #[arg(long, value_enum)]
    dataset: Option<DatasetArg>,
    /// Integrator for drawing model samples; defaults like --dataset
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    /// Integration steps; defaults like --dataset
    #[arg(long)]
    steps: Option<usize>,
    /// Number of model samples for the two-sample test
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON report to this path
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Use a reduced trial budget
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Path to a JSON sweep config
    #[arg(long)]
    config: PathBuf,
    /// Sweep directory name under the output root; defaults to the config file stem
    #[arg(long)]
    name: Option<String>,
    /// Output root; overrides the DISPFLOW_OUT environment variable
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplerArg {
    Heun,
    Sde,
}

impl From<SamplerArg> for SamplerKind {
    fn from(arg: SamplerArg) -> Self {
        match arg {
            SamplerArg::Heun => SamplerKind::HeunOde,
            SamplerArg::Sde => SamplerKind::EulerSde,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DatasetArg {
    #[value(name = "two_moons")]
    TwoMoons,
    #[value(name = "checkerboard")]
    Checkerboard,
    #[value(name = "eight_gaussians")]
    EightGaussians,
}

impl From<DatasetArg> for Dataset {
    fn from(arg: DatasetArg) -> Self {
        match arg {
            DatasetArg::TwoMoons => Dataset::TwoMoons,
            DatasetArg::Checkerboard => Dataset::Checkerboard,
            DatasetArg::EightGaussians => Dataset::EightGaussians,
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Directory name for a run: the explicit --name, else the config file stem.
fn run_name(name: Option<String>, config_path: &Path) -> Result<String> {
    if let Some(n) = name {
        return Ok(n);
    }
    match config_path.file_stem().and_then(|s| s.to_str()) {
        Some(stem) => Ok(stem.to_string()),
        None => bail!("cannot derive a run name from {}; pass --name", config_path.display()),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config: RunConfig = read_json(&args.config)?;
    let dir = output_root(args.out.as_deref()).join(run_name(args.name, &args.config)?);
    println!("training into {}", dir.display());
    let outcome = run_to_dir(&config, &dir)?;
    let last = outcome
        .records
        .last()
        .expect("a completed run records at least the final step");
    println!(
        "done after {} steps: loss_total {:.6} loss_diff {:.6} loss_disp {:.6}",
        outcome.completed_steps, last.loss_total, last.loss_diff, last.loss_disp
    );
    Ok(())
}

fn samples_csv(samples: &Tensor) -> String {
    let cols = samples.cols();
    let mut out = String::new();
    for j in 0..cols {
        if j > 0 {
            out.push(',');
        }
        out.push_str(&format!("x{j}"));
    }
    out.push('\n');
    for row in samples.data().chunks(cols) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV format written by `samples_csv`: an optional header line
/// followed by comma-separated floats, one point per line.
fn read_points_csv(path: &Path) -> Result<Tensor> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(e) if rows.is_empty() && i == 0 => {
                let _ = e; // header line
            }
            Err(e) => bail!("{} line {}: {}", path.display(), i + 1, e),
        }
    }
    if rows.is_empty() {
        bail!("{} holds no data rows", path.display());
    }
    Ok(Tensor::from_rows(&rows)?)
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let (state, _) = load_checkpoint_file(&args.ckpt)?;
    let config = SamplerConfig {
        kind: args.sampler.into(),
        steps: args.steps,
        diffusion_scale: args.diffusion_scale,
        ..SamplerConfig::default()
    };
    let samples = match config.kind {
        SamplerKind::HeunOde => sample_heun(&state, args.n, &config, args.seed)?,
        SamplerKind::EulerSde => sample_euler_sde(&state, args.n, &config, args.seed)?,
    };
    let csv = samples_csv(&samples);
    match args.output {
        Some(path) => {
            fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {} samples to {}", args.n, path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

/// The manifest sitting next to a checkpoint, when the checkpoint came out
/// of a training run directory.
fn sibling_manifest(ckpt: &Path) -> Option<Manifest> {
    let path = ckpt.parent()?.join(MANIFEST_FILE);
    path.is_file().then(|| read_manifest(&path).ok()).flatten()
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (state, _) = load_checkpoint_file(&args.ckpt)?;
    let reference = read_points_csv(&args.reference)?;
    let manifest = sibling_manifest(&args.ckpt);

    let dataset: Dataset = match (args.dataset, &manifest) {
        (Some(d), _) => d.into(),
        (None, Some(m)) => m.config.dataset,
        (None, None) => bail!(
            "no manifest next to {}; pass --dataset for the representation probe",
            args.ckpt.display()
        ),
    };
    let mut sampler = match &manifest {
        Some(m) => m.config.sampler,
        None => SamplerConfig::default(),
    };
    if let Some(kind) = args.sampler {
        sampler.kind = kind.into();
    }
    if let Some(steps) = args.steps {
        sampler.steps = steps;
    }

    let report = evaluate(&state, dataset, &reference, &sampler, args.n, args.seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.output {
        fs::write(path, format!("{json}\n"))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let config = if args.quick {
        SuiteConfig::quick()
    } else {
        SuiteConfig::default()
    };
    let report = run_suite(&SuiteImpls::default(), &config);
    print!("{}", report.render());
    if !report.all_passed() {
        bail!("{} properties failed", report.failures().len());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let config: SweepConfig = read_json(&args.config)?;
    let root = output_root(args.out.as_deref()).join(run_name(args.name, &args.config)?);
    println!("sweeping {} cells into {}", config.lambdas.len() * config.taus.len(), root.display());
    let rows = run_sweep(&config, &root)?;
    println!("{:>8} {:>8} {:>14} {:>14}  run_dir", "lambda", "tau", "loss_total", "loss_disp");
    for row in &rows {
        println!(
            "{:>8} {:>8} {:>14.6} {:>14.6}  {}",
            row.lambda, row.tau, row.final_total, row.final_disp, row.run_dir
        );
    }
    println!("summary: {}", root.join(SWEEP_SUMMARY_FILE).display());
    Ok(())
}
