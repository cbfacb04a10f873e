//! Evaluation probes: per-block representation norms, batch dispersion, and
//! a multi-bandwidth kernel two-sample statistic.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::tensor::Tensor;

/// Mean row norm per probed block, in ascending block order.
#[derive(Debug, Clone, PartialEq)]
pub struct NormTrace {
    pub per_block: Vec<(usize, f64)>,
}

fn row_norm(z: &Tensor, i: usize) -> f64 {
    z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean row l2 norm for each `(block, representations)` pair.
pub fn norm_probe(taps: &[(usize, Tensor)]) -> NormTrace {
    let per_block = taps
        .iter()
        .map(|(block, z)| {
            let n = z.rows();
            let mean = if n == 0 {
                0.0
            } else {
                (0..n).map(|i| row_norm(z, i)).sum::<f64>() / n as f64
            };
            (*block, mean)
        })
        .collect();
    NormTrace { per_block }
}

/// Mean pairwise l2 distance over unordered row pairs.
pub fn dispersion_stat(z: &Tensor) -> Result<f64> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::BatchTooSmall { rows: n });
    }
    let mut total = 0.0;
    for i in 0..n {
        let ri = z.row(i);
        for j in i + 1..n {
            let sq: f64 = ri
                .iter()
                .zip(z.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += sq.sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmdConfig {
    /// RBF length scales; the kernel is the sum over all of them.
    #[serde(default = "default_bandwidths")]
    pub bandwidths: Vec<f64>,
    /// Shuffle count for the permutation threshold.
    #[serde(default = "default_shuffles")]
    pub shuffles: usize,
}

fn default_bandwidths() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 2.0]
}
fn default_shuffles() -> usize {
    200
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            bandwidths: default_bandwidths(),
            shuffles: default_shuffles(),
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() {
            return Err(Error::InvalidConfig {
                field: "mmd.bandwidths",
                reason: "need at least one bandwidth".into(),
            });
        }
        for &b in &self.bandwidths {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidConfig {
                    field: "mmd.bandwidths",
                    reason: format!("bandwidths must be positive reals, got {b}"),
                });
            }
        }
        if self.shuffles == 0 {
            return Err(Error::InvalidConfig {
                field: "mmd.shuffles",
                reason: "need at least one shuffle".into(),
            });
        }
        Ok(())
    }
}

/// Sum over bandwidths of exp(-d2 / (2 s^2)).
fn kernel(d2: f64, bandwidths: &[f64]) -> f64 {
    bandwidths
        .iter()
        .map(|s| (-d2 / (2.0 * s * s)).exp())
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pooled kernel matrix over the rows of `x` stacked above the rows of `y`.
fn pooled_kernel(x: &Tensor, y: &Tensor, bandwidths: &[f64]) -> Vec<Vec<f64>> {
    let rows: Vec<&[f64]> = (0..x.rows())
        .map(|i| x.row(i))
        .chain((0..y.rows()).map(|i| y.row(i)))
        .collect();
    let total = rows.len();
    let mut k = vec![vec![0.0; total]; total];
    for i in 0..total {
        k[i][i] = kernel(0.0, bandwidths);
        for j in i + 1..total {
            let v = kernel(sq_dist(rows[i], rows[j]), bandwidths);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// Unbiased MMD^2 between the index sets `xs` and `ys` of a pooled kernel.
fn mmd2_from_kernel(k: &[Vec<f64>], xs: &[usize], ys: &[usize]) -> f64 {
    let (n, m) = (xs.len(), ys.len());
    let mut xx = 0.0;
    for (a, &i) in xs.iter().enumerate() {
        for &j in &xs[a + 1..] {
            xx += k[i][j];
        }
    }
    let mut yy = 0.0;
    for (a, &i) in ys.iter().enumerate() {
        for &j in &ys[a + 1..] {
            yy += k[i][j];
        }
    }
    let mut xy = 0.0;
    for &i in xs {
        for &j in ys {
            xy += k[i][j];
        }
    }
    2.0 * xx / (n * (n - 1)) as f64 + 2.0 * yy / (m * (m - 1)) as f64
        - 2.0 * xy / (n * m) as f64
}

fn check_mmd_inputs(samples: &Tensor, reference: &Tensor, cfg: &MmdConfig) -> Result<()> {
    cfg.validate()?;
    if samples.cols() != reference.cols() {
        return Err(Error::ShapeMismatch {
            op: "mmd2",
            lhs: samples.shape().to_vec(),
            rhs: reference.shape().to_vec(),
        });
    }
    if samples.rows() < 2 || reference.rows() < 2 {
        return Err(Error::MmdTooFewSamples {
            n: samples.rows(),
            m: reference.rows(),
        });
    }
    Ok(())
}

/// Unbiased multi-bandwidth MMD^2 estimate. Near zero (possibly slightly
/// negative, by unbiasedness) when both sets come from one distribution.
pub fn mmd2(samples: &Tensor, reference: &Tensor, cfg: &MmdConfig) -> Result<f64> {
    check_mmd_inputs(samples, reference, cfg)?;
    let k = pooled_kernel(samples, reference, &cfg.bandwidths);
    let xs: Vec<usize> = (0..samples.rows()).collect();
    let ys: Vec<usize> = (samples.rows()..samples.rows() + reference.rows()).collect();
    Ok(mmd2_from_kernel(&k, &xs, &ys))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MmdTest {
    pub mmd2: f64,
    /// 95th percentile of the permutation null.
    pub threshold: f64,
    pub exceeds: bool,
}

/// MMD^2 with a permutation-test threshold: the pooled rows are reshuffled
/// `cfg.shuffles` times and the statistic's 95th percentile under the null
/// becomes the significance bar.
pub fn mmd_test(samples: &Tensor, reference: &Tensor, cfg: &MmdConfig, seed: u64) -> Result<MmdTest> {
    check_mmd_inputs(samples, reference, cfg)?;
    let (n, m) = (samples.rows(), reference.rows());
    let k = pooled_kernel(samples, reference, &cfg.bandwidths);
    let xs: Vec<usize> = (0..n).collect();
    let ys: Vec<usize> = (n..n + m).collect();
    let observed = mmd2_from_kernel(&k, &xs, &ys);

    let mut rng = stream_rng(seed, streams::EVAL);
    let mut pool: Vec<usize> = (0..n + m).collect();
    let mut null: Vec<f64> = (0..cfg.shuffles)
        .map(|_| {
            pool.shuffle(&mut rng);
            mmd2_from_kernel(&k, &pool[..n], &pool[n..])
        })
        .collect();
    null.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.95 * cfg.shuffles as f64).ceil() as usize).clamp(1, cfg.shuffles);
    let threshold = null[rank - 1];
    Ok(MmdTest {
        mmd2: observed,
        threshold,
        exceeds: observed > threshold,
    })
}
