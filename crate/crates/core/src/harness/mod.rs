//! Experiment orchestration: run configuration, the training loop, run
//! directories with manifests and CSV metrics, evaluation reports, and
//! parameter sweeps.

mod eval;
mod sweep;
mod trainer;

pub use eval::{evaluate, EvalReport};
pub use sweep::{run_sweep, SweepConfig, SweepRow, SWEEP_SUMMARY_FILE};
pub use trainer::{train, train_quiet, StepRecord, TrainOutcome};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::NoisePolicy;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{save_checkpoint_file, DenoiserConfig};
use crate::optim::AdamConfig;
use crate::sampler::SamplerConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CKPT_LAST_FILE: &str = "ckpt_last.ckpt";
pub const CKPT_FINAL_FILE: &str = "ckpt_final.ckpt";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Dataset,
    #[serde(default)]
    pub model: DenoiserConfig,
    pub loss: LossConfig,
    #[serde(default)]
    pub policy: NoisePolicy,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: u64,
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// Metrics cadence; the final step is always recorded.
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
}

fn default_batch_size() -> usize {
    256
}
fn default_steps() -> u64 {
    20_000
}
fn default_eval_every() -> u64 {
    500
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.policy.validate()?;
        self.optimizer.validate()?;
        self.sampler.validate()?;
        if self.model.input_dim != Dataset::DIM {
            return Err(Error::InvalidConfig {
                field: "model.input_dim",
                reason: format!(
                    "datasets are {}-dimensional, model expects {}",
                    Dataset::DIM,
                    self.model.input_dim
                ),
            });
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig {
                field: "batch_size",
                reason: "pairwise losses need at least 2 samples per batch".into(),
            });
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig {
                field: "steps",
                reason: "need at least one training step".into(),
            });
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig {
                field: "eval_every",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// What `manifest.json` holds: enough to bit-reproduce the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub code_version: String,
}

impl Manifest {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    manifest.config.validate()?;
    Ok(manifest)
}

pub fn csv_header(num_blocks: usize) -> String {
    let mut h = String::from("step,loss_total,loss_diff,loss_disp");
    for k in 1..=num_blocks {
        h.push_str(&format!(",norm_block_{k}"));
    }
    h.push_str(",dispersion");
    h
}

pub fn csv_row(r: &StepRecord) -> String {
    let mut row = format!(
        "{},{},{},{}",
        r.step, r.loss_total, r.loss_diff, r.loss_disp
    );
    for n in &r.block_norms {
        row.push_str(&format!(",{n}"));
    }
    row.push_str(&format!(",{}", r.dispersion));
    row
}

/// Trains under `config` inside `dir`, writing `manifest.json`, streaming
/// `metrics.csv`, refreshing `ckpt_last.ckpt` at every recorded step, and
/// finishing with `ckpt_final.ckpt`. On a training abort the partial metrics
/// and the last checkpoint are left in place.
pub fn run_to_dir(config: &RunConfig, dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    write_manifest(&Manifest::new(config.clone()), &dir.join(MANIFEST_FILE))?;

    let mut csv = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    writeln!(csv, "{}", csv_header(config.model.num_blocks))?;

    let ckpt_last = dir.join(CKPT_LAST_FILE);
    let result = train(
        config,
        |record| {
            writeln!(csv, "{}", csv_row(record))?;
            Ok(())
        },
        |state, step| save_checkpoint_file(state, step, &ckpt_last),
    );
    csv.flush()?;
    let outcome = result?;
    save_checkpoint_file(&outcome.state, outcome.completed_steps, &dir.join(CKPT_FINAL_FILE))?;
    Ok(outcome)
}

/// Resolves the output root: explicit argument, else the `DISPFLOW_OUT`
/// environment variable, else `./runs`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os("DISPFLOW_OUT") {
        Some(v) => PathBuf::from(v),
        None => PathBuf::from("runs"),
    }
}
