//! Slow, obviously-correct reference implementations of every loss.
//!
//! These are deliberately naive: direct double and triple loops over rows,
//! no log-sum-exp shifting, no shared code with the differentiable versions
//! in [`crate::losses`]. They exist to cross-check the fast paths and are
//! also exposed through the CLI's property-suite command.
//!
//! All functions assume well-formed inputs (finite entries, at least two
//! rows, matching shapes); callers validate before invoking.

#![allow(clippy::needless_range_loop)]

use crate::losses::{DissimMode, LossConfig, LossVariant};
use crate::tensor::Tensor;

fn row(z: &Tensor, i: usize) -> &[f64] {
    z.row(i)
}

fn sq_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    sq_l2(a, b).sqrt()
}

fn neg_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    -dot / (na * nb)
}

pub fn dissim(a: &[f64], b: &[f64], mode: DissimMode) -> f64 {
    match mode {
        DissimMode::SquaredL2 => sq_l2(a, b),
        DissimMode::NegCosine => neg_cosine(a, b),
        DissimMode::L2 => l2(a, b),
    }
}

pub fn pairwise(z: &Tensor, mode: DissimMode) -> Vec<Vec<f64>> {
    let n = z.rows();
    (0..n)
        .map(|i| (0..n).map(|j| dissim(row(z, i), row(z, j), mode)).collect())
        .collect()
}

fn infonce_mode(cfg: &LossConfig) -> DissimMode {
    match cfg.variant {
        LossVariant::InfoNceCosine => DissimMode::NegCosine,
        _ => DissimMode::SquaredL2,
    }
}

pub fn dispersive_infonce_batch(z: &Tensor, cfg: &LossConfig) -> f64 {
    let mode = infonce_mode(cfg);
    let n = z.rows();
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i == j && !cfg.include_diagonal {
                continue;
            }
            acc += (-dissim(row(z, i), row(z, j), mode) / cfg.tau).exp();
            count += 1;
        }
    }
    (acc / count as f64).ln()
}

pub fn dispersive_infonce_per_sample(z: &Tensor, i: usize, cfg: &LossConfig) -> f64 {
    let mode = infonce_mode(cfg);
    let n = z.rows();
    let mut acc = 0.0;
    let mut count = 0usize;
    for j in 0..n {
        if i == j && !cfg.include_diagonal {
            continue;
        }
        acc += (-dissim(row(z, i), row(z, j), mode) / cfg.tau).exp();
        count += 1;
    }
    (acc / count as f64).ln()
}

pub fn dispersive_hinge(z: &Tensor, cfg: &LossConfig) -> f64 {
    let n = z.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let margin = (cfg.epsilon - l2(row(z, i), row(z, j))).max(0.0);
            acc += margin * margin;
        }
    }
    acc / (n * (n - 1)) as f64
}

/// Standardizes each column to zero mean and unit population variance, with
/// the 1e-5 stabilizer inside the square root.
fn standardize(z: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = (z.rows(), z.cols());
    let mut out = vec![vec![0.0; d]; n];
    for c in 0..d {
        let mean: f64 = (0..n).map(|r| z.at(r, c)).sum::<f64>() / n as f64;
        let var: f64 = (0..n).map(|r| (z.at(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
        let std = (var + 1e-5).sqrt();
        for r in 0..n {
            out[r][c] = (z.at(r, c) - mean) / std;
        }
    }
    out
}

pub fn dispersive_covariance(z: &Tensor, _cfg: &LossConfig) -> f64 {
    let (n, d) = (z.rows(), z.cols());
    let zh = standardize(z);
    let mut acc = 0.0;
    for m in 0..d {
        for c in 0..d {
            let cov: f64 = (0..n).map(|r| zh[r][m] * zh[r][c]).sum::<f64>() / n as f64;
            acc += cov * cov;
        }
    }
    acc
}

pub fn contrastive_infonce(z: &Tensor, zpos: &Tensor, cfg: &LossConfig) -> f64 {
    let mode = infonce_mode(cfg);
    let n = z.rows();
    let mut acc = 0.0;
    for i in 0..n {
        let positive = dissim(row(z, i), row(zpos, i), mode) / cfg.tau;
        let mut denom = 0.0;
        for j in 0..n {
            if i == j && !cfg.include_diagonal {
                continue;
            }
            denom += (-dissim(row(z, i), row(z, j), mode) / cfg.tau).exp();
        }
        acc += positive + denom.ln();
    }
    acc / n as f64
}

pub fn contrastive_hinge(z: &Tensor, zpos: &Tensor, cfg: &LossConfig) -> f64 {
    let n = z.rows();
    let mut acc = 0.0;
    for i in 0..n {
        let d_pos = l2(row(z, i), row(zpos, i));
        let mut neg = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let margin = (cfg.epsilon - l2(row(z, i), row(z, j))).max(0.0);
            neg += margin * margin;
        }
        acc += d_pos * d_pos + neg / (n - 1) as f64;
    }
    acc / n as f64
}

pub fn contrastive_covariance(z: &Tensor, zpos: &Tensor, cfg: &LossConfig) -> f64 {
    let (n, d) = (z.rows(), z.cols());
    let zh = standardize(z);
    let ph = standardize(zpos);
    let mut acc = 0.0;
    for m in 0..d {
        for c in 0..d {
            let cov: f64 = (0..n).map(|r| zh[r][m] * ph[r][c]).sum::<f64>() / n as f64;
            if m == c {
                acc += (1.0 - cov) * (1.0 - cov);
            } else {
                acc += cfg.w * cov * cov;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(variant: LossVariant) -> LossConfig {
        LossConfig {
            variant,
            ..LossConfig::default()
        }
    }

    #[test]
    fn two_point_infonce_l2_matches_hand_enumeration() {
        // Rows (0,0) and (1,0) at tau = 0.5: four ordered pairs, two with
        // distance 0 and two with squared distance 1, so the value is
        // log((2 + 2 e^{-2}) / 4).
        let z = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let expected = ((2.0 + 2.0 * (-2.0f64).exp()) / 4.0).ln();
        let got = dispersive_infonce_batch(&z, &cfg(LossVariant::InfoNceL2));
        assert_relative_eq!(got, expected, max_relative = 1e-14);
    }

    #[test]
    fn orthogonal_rows_infonce_cosine_matches_hand_enumeration() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let expected = ((2.0 * 2.0f64.exp() + 2.0) / 4.0).ln();
        let got = dispersive_infonce_batch(&z, &cfg(LossVariant::InfoNceCosine));
        assert_relative_eq!(got, expected, max_relative = 1e-14);
    }

    #[test]
    fn half_separated_hinge_pair() {
        let z = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.5, 0.0]]).unwrap();
        assert_relative_eq!(dispersive_hinge(&z, &cfg(LossVariant::Hinge)), 0.25);
    }

    #[test]
    fn sign_grid_covariance_is_near_two() {
        let z = Tensor::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![-1.0, -1.0],
        ])
        .unwrap();
        let got = dispersive_covariance(&z, &cfg(LossVariant::Covariance));
        assert_relative_eq!(got, 2.0, epsilon = 1e-4);
    }

    #[test]
    fn perfectly_correlated_covariance_is_near_four() {
        let z = Tensor::from_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let got = dispersive_covariance(&z, &cfg(LossVariant::Covariance));
        assert_relative_eq!(got, 4.0, epsilon = 1e-4);
    }

    #[test]
    fn shifted_positive_contrastive_hinge() {
        let z = Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 0.0]]).unwrap();
        let zpos = Tensor::from_rows(&[vec![0.1, 0.0], vec![3.0, 0.0]]).unwrap();
        let got = contrastive_hinge(&z, &zpos, &cfg(LossVariant::Hinge));
        assert_relative_eq!(got, 0.005, epsilon = 1e-12);
    }

    #[test]
    fn negated_views_contrastive_covariance_is_near_4d() {
        let z = Tensor::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![-1.0, -1.0],
        ])
        .unwrap();
        let zpos = Tensor::from_rows(&[
            vec![-1.0, -1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let got = contrastive_covariance(&z, &zpos, &cfg(LossVariant::Covariance));
        assert_relative_eq!(got, 8.0, epsilon = 1e-3);
    }
}
