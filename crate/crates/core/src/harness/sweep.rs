//! Grid sweeps over the regularizer weight and temperature. Runs share no
//! mutable state, so execution order (or parallelism) cannot change any
//! per-run output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{run_to_dir, RunConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub lambdas: Vec<f64>,
    pub taus: Vec<f64>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.lambdas.is_empty() || self.taus.is_empty() {
            return Err(Error::InvalidConfig {
                field: "sweep.grid",
                reason: "lambdas and taus must both be nonempty".into(),
            });
        }
        for &l in &self.lambdas {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidConfig {
                    field: "sweep.lambdas",
                    reason: format!("must be non-negative reals, got {l}"),
                });
            }
        }
        for &t in &self.taus {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig {
                    field: "sweep.taus",
                    reason: format!("must be positive reals, got {t}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub tau: f64,
    pub run_dir: String,
    pub final_total: f64,
    pub final_disp: f64,
}

pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

fn compact(v: f64) -> String {
    format!("{v}").replace('.', "p").replace('-', "m")
}

fn run_cell(base: &RunConfig, lambda: f64, tau: f64, root: &Path) -> Result<SweepRow> {
    let mut cfg = base.clone();
    cfg.loss.lambda = lambda;
    cfg.loss.tau = tau;
    let name = format!("lam{}_tau{}", compact(lambda), compact(tau));
    let dir = root.join(&name);
    let outcome = run_to_dir(&cfg, &dir)?;
    let last = outcome.records.last().expect("at least one record");
    Ok(SweepRow {
        lambda,
        tau,
        run_dir: name,
        final_total: last.loss_total,
        final_disp: last.loss_disp,
    })
}

/// Trains every (lambda, tau) cell under `root`, one run directory per cell,
/// and writes `sweep_summary.csv`. Cells run in parallel when the crate's
/// parallel feature is enabled; outputs are identical either way.
pub fn run_sweep(cfg: &SweepConfig, root: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    fs::create_dir_all(root)?;
    let cells: Vec<(f64, f64)> = cfg
        .lambdas
        .iter()
        .flat_map(|&l| cfg.taus.iter().map(move |&t| (l, t)))
        .collect();

    #[cfg(feature = "parallel")]
    let rows: Result<Vec<SweepRow>> = cells
        .par_iter()
        .map(|&(l, t)| run_cell(&cfg.base, l, t, root))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Result<Vec<SweepRow>> = cells
        .iter()
        .map(|&(l, t)| run_cell(&cfg.base, l, t, root))
        .collect();
    let rows = rows?;

    let mut summary = BufWriter::new(File::create(root.join(SWEEP_SUMMARY_FILE))?);
    writeln!(summary, "lambda,tau,loss_total,loss_disp,run_dir")?;
    for row in &rows {
        writeln!(
            summary,
            "{},{},{},{},{}",
            row.lambda, row.tau, row.final_total, row.final_disp, row.run_dir
        )?;
    }
    summary.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::super::METRICS_FILE;
    use super::*;
    use tempfile::tempdir;

    fn tiny_sweep() -> SweepConfig {
        SweepConfig {
            base: tiny_config(21),
            lambdas: vec![0.25, 1.0],
            taus: vec![0.5, 2.0],
        }
    }

    #[test]
    fn grid_produces_one_run_per_cell() {
        let root = tempdir().unwrap();
        let rows = run_sweep(&tiny_sweep(), root.path()).unwrap();
        assert_eq!(rows.len(), 4);
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda, r.tau)).collect();
        assert_eq!(pairs, [(0.25, 0.5), (0.25, 2.0), (1.0, 0.5), (1.0, 2.0)]);
        for row in &rows {
            assert!(row.final_total.is_finite());
            assert!(root.path().join(&row.run_dir).join(METRICS_FILE).exists());
        }
        let summary = fs::read_to_string(root.path().join(SWEEP_SUMMARY_FILE)).unwrap();
        assert!(summary.starts_with("lambda,tau,loss_total,loss_disp,run_dir\n"));
        assert_eq!(summary.lines().count(), 5);
    }

    #[test]
    fn per_run_outputs_are_independent_of_grid_shape() {
        // The same cell trained alone or inside a larger grid must produce
        // identical bytes; runs share nothing.
        let solo_root = tempdir().unwrap();
        let grid_root = tempdir().unwrap();
        let mut solo = tiny_sweep();
        solo.lambdas = vec![1.0];
        solo.taus = vec![0.5];
        run_sweep(&solo, solo_root.path()).unwrap();
        run_sweep(&tiny_sweep(), grid_root.path()).unwrap();
        let a = fs::read(solo_root.path().join("lam1_tau0p5").join(METRICS_FILE)).unwrap();
        let b = fs::read(grid_root.path().join("lam1_tau0p5").join(METRICS_FILE)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut cfg = tiny_sweep();
        cfg.taus.clear();
        assert!(cfg.validate().is_err());
    }
}
