//! Flow-matching forward process and training objectives.
//!
//! The interpolant is linear, `x_t = (1 - t) x0 + t eps`, with velocity
//! regression target `eps - x0` and `t` drawn uniformly on `[0, 1]`. Three
//! noising policies cover the single-view regularized objective and the
//! two-view contrastive baselines: independent views, and views whose noise
//! levels differ by at most `max_dt`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{contrastive_loss, dispersive_loss, LossConfig, RepBatch};
use crate::rng::{stream_rng, streams};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "two_view_independent")]
    TwoViewIndependent,
    #[serde(rename = "two_view_restricted")]
    TwoViewRestricted,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePolicy {
    pub kind: NoiseKind,
    /// Maximum gap between the two views' times under the restricted policy.
    #[serde(default = "default_max_dt")]
    pub max_dt: f64,
}

fn default_max_dt() -> f64 {
    0.005
}

impl Default for NoisePolicy {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Single,
            max_dt: default_max_dt(),
        }
    }
}

impl NoisePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_dt >= 0.0 && self.max_dt.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "policy.max_dt",
                reason: format!("must be a non-negative real, got {}", self.max_dt),
            });
        }
        Ok(())
    }

    pub fn is_two_view(&self) -> bool {
        matches!(
            self.kind,
            NoiseKind::TwoViewIndependent | NoiseKind::TwoViewRestricted
        )
    }
}

/// One noised view of a data batch.
#[derive(Debug, Clone)]
pub struct NoisedBatch {
    pub x_t: Tensor,
    /// Per-sample times, shape `[n]`.
    pub t: Tensor,
    /// Velocity regression target `eps - x0`.
    pub target: Tensor,
    pub x0: Tensor,
    pub eps: Tensor,
}

#[derive(Debug, Clone)]
pub enum NoisedViews {
    Single(NoisedBatch),
    Pair(NoisedBatch, NoisedBatch),
}

impl NoisedViews {
    /// The view carrying the denoising loss.
    pub fn first(&self) -> &NoisedBatch {
        match self {
            NoisedViews::Single(v) => v,
            NoisedViews::Pair(v, _) => v,
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn interpolate(x0: &Tensor, t: &[f64], eps: &Tensor) -> NoisedBatch {
    let (n, d) = (x0.rows(), x0.cols());
    let mut x_t = vec![0.0; n * d];
    let mut target = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let idx = i * d + j;
            x_t[idx] = (1.0 - t[i]) * x0.data()[idx] + t[i] * eps.data()[idx];
            target[idx] = eps.data()[idx] - x0.data()[idx];
        }
    }
    NoisedBatch {
        x_t: Tensor::new_unchecked(vec![n, d], x_t),
        t: Tensor::new_unchecked(vec![n], t.to_vec()),
        target: Tensor::new_unchecked(vec![n, d], target),
        x0: x0.clone(),
        eps: eps.clone(),
    }
}

fn normal_matrix(rng: &mut impl Rng, n: usize, d: usize) -> Tensor {
    let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new_unchecked(vec![n, d], data)
}

/// Noises a clean batch according to `policy`, deterministically in `seed`.
///
/// The first view's times and noise come from streams that do not depend on
/// the policy, so switching policies leaves the view-1 draws (and hence its
/// denoising loss at step 0) unchanged.
pub fn noise_batch(x0: &Tensor, seed: u64, policy: &NoisePolicy) -> Result<NoisedViews> {
    policy.validate()?;
    if x0.shape().len() != 2 {
        return Err(Error::InvalidShape {
            op: "noise_batch",
            shape: x0.shape().to_vec(),
            detail: "clean data must be a 2-D batch".into(),
        });
    }
    let (n, d) = (x0.rows(), x0.cols());
    let mut t_rng = stream_rng(seed, streams::TIME);
    let t1: Vec<f64> = (0..n).map(|_| t_rng.gen::<f64>()).collect();
    let eps1 = normal_matrix(&mut stream_rng(seed, streams::NOISE), n, d);
    let view1 = interpolate(x0, &t1, &eps1);

    match policy.kind {
        NoiseKind::Single => Ok(NoisedViews::Single(view1)),
        NoiseKind::TwoViewIndependent | NoiseKind::TwoViewRestricted => {
            let mut t2_rng = stream_rng(seed, streams::VIEW2_TIME);
            let t2: Vec<f64> = match policy.kind {
                NoiseKind::TwoViewIndependent => (0..n).map(|_| t2_rng.gen::<f64>()).collect(),
                _ => t1
                    .iter()
                    .map(|&t| {
                        let jitter = t2_rng.gen_range(-policy.max_dt..=policy.max_dt);
                        (t + jitter).clamp(0.0, 1.0)
                    })
                    .collect(),
            };
            let eps2 = normal_matrix(&mut stream_rng(seed, streams::VIEW2_NOISE), n, d);
            let view2 = interpolate(x0, &t2, &eps2);
            Ok(NoisedViews::Pair(view1, view2))
        }
    }
}

/// Mean squared error between prediction and target over all elements.
pub fn diffusion_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    let (ps, ts) = (pred.shape(), target.shape());
    if ps != ts {
        return Err(Error::ShapeMismatch {
            op: "diffusion_loss",
            lhs: ps,
            rhs: ts,
        });
    }
    let d = pred.sub(target)?;
    d.mul(d)?.mean()
}

/// The combined objective with its components, for logging.
#[derive(Debug, Clone, Copy)]
pub struct CombinedLoss<'t> {
    pub total: Var<'t>,
    pub diff: Var<'t>,
    pub disp: Var<'t>,
}

/// `L_diff + lambda * L_disp`. With `lambda == 0` the returned total IS the
/// diffusion loss node, so value and gradients reduce to the baseline
/// exactly; the dispersive component is still evaluated for logging but sits
/// outside the gradient path.
pub fn combined_loss<'t>(
    pred: Var<'t>,
    z: &RepBatch<'t>,
    target: Var<'t>,
    cfg: &LossConfig,
) -> Result<CombinedLoss<'t>> {
    cfg.validate()?;
    let diff = diffusion_loss(pred, target)?;
    let disp = dispersive_loss(z, cfg)?;
    let total = if cfg.lambda == 0.0 {
        diff
    } else {
        diff.add(disp.mul_scalar(cfg.lambda)?)?
    };
    Ok(CombinedLoss { total, diff, disp })
}

/// Two-view objective: denoising loss on the first view's prediction plus
/// `lambda` times the contrastive loss across the two views' taps.
pub fn two_view_combined_loss<'t>(
    pred1: Var<'t>,
    z1: &RepBatch<'t>,
    z2: &RepBatch<'t>,
    target1: Var<'t>,
    cfg: &LossConfig,
) -> Result<CombinedLoss<'t>> {
    cfg.validate()?;
    let diff = diffusion_loss(pred1, target1)?;
    let disp = contrastive_loss(z1, z2, cfg)?;
    let total = if cfg.lambda == 0.0 {
        diff
    } else {
        diff.add(disp.mul_scalar(cfg.lambda)?)?
    };
    Ok(CombinedLoss { total, diff, disp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{backward, Tape};
    use approx::assert_relative_eq;

    fn toy_x0(n: usize) -> Tensor {
        let data: Vec<f64> = (0..n * 2).map(|i| ((i as f64) * 0.37).sin()).collect();
        Tensor::new(vec![n, 2], data).unwrap()
    }

    #[test]
    fn interpolant_endpoints() {
        let x0 = toy_x0(3);
        let eps = normal_matrix(&mut stream_rng(1, streams::NOISE), 3, 2);
        let at_zero = interpolate(&x0, &[0.0, 0.0, 0.0], &eps);
        assert_eq!(at_zero.x_t, x0);
        let at_one = interpolate(&x0, &[1.0, 1.0, 1.0], &eps);
        assert_eq!(at_one.x_t, eps);
        for idx in 0..6 {
            assert_eq!(
                at_one.target.data()[idx],
                eps.data()[idx] - x0.data()[idx]
            );
        }
    }

    #[test]
    fn interpolant_relations_invert() {
        let x0 = toy_x0(5);
        let views = noise_batch(&x0, 11, &NoisePolicy::default()).unwrap();
        let v = views.first();
        let (n, d) = (v.x_t.rows(), v.x_t.cols());
        for i in 0..n {
            let t = v.t.data()[i];
            for j in 0..d {
                let idx = i * d + j;
                let x0_rec = v.x_t.data()[idx] - t * v.target.data()[idx];
                let eps_rec = v.x_t.data()[idx] + (1.0 - t) * v.target.data()[idx];
                assert_relative_eq!(x0_rec, v.x0.data()[idx], epsilon = 1e-12);
                assert_relative_eq!(eps_rec, v.eps.data()[idx], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn noising_is_deterministic_per_seed() {
        let x0 = toy_x0(4);
        let policy = NoisePolicy {
            kind: NoiseKind::TwoViewRestricted,
            max_dt: 0.005,
        };
        let a = noise_batch(&x0, 7, &policy).unwrap();
        let b = noise_batch(&x0, 7, &policy).unwrap();
        match (a, b) {
            (NoisedViews::Pair(a1, a2), NoisedViews::Pair(b1, b2)) => {
                assert_eq!(a1.x_t, b1.x_t);
                assert_eq!(a2.x_t, b2.x_t);
                assert_eq!(a2.t, b2.t);
            }
            _ => panic!("expected pairs"),
        }
    }

    #[test]
    fn restricted_policy_bounds_the_time_gap() {
        let x0 = toy_x0(64);
        let policy = NoisePolicy {
            kind: NoiseKind::TwoViewRestricted,
            max_dt: 0.005,
        };
        match noise_batch(&x0, 7, &policy).unwrap() {
            NoisedViews::Pair(v1, v2) => {
                for (a, b) in v1.t.data().iter().zip(v2.t.data()) {
                    assert!((a - b).abs() <= 0.005 + 1e-15, "gap {}", (a - b).abs());
                }
            }
            _ => panic!("expected pair"),
        }
    }

    #[test]
    fn first_view_is_policy_independent() {
        let x0 = toy_x0(6);
        let single = noise_batch(&x0, 3, &NoisePolicy::default()).unwrap();
        let indep = noise_batch(
            &x0,
            3,
            &NoisePolicy {
                kind: NoiseKind::TwoViewIndependent,
                max_dt: 0.005,
            },
        )
        .unwrap();
        let restr = noise_batch(
            &x0,
            3,
            &NoisePolicy {
                kind: NoiseKind::TwoViewRestricted,
                max_dt: 0.005,
            },
        )
        .unwrap();
        assert_eq!(single.first().x_t, indep.first().x_t);
        assert_eq!(single.first().x_t, restr.first().x_t);
        assert_eq!(single.first().t, restr.first().t);
        // The second views' times differ between the policies.
        match (&indep, &restr) {
            (NoisedViews::Pair(_, a), NoisedViews::Pair(_, b)) => assert_ne!(a.t, b.t),
            _ => panic!("expected pairs"),
        }
    }

    #[test]
    fn expected_target_norm_matches_monte_carlo() {
        // For x0 ~ N(0, I_2) and eps ~ N(0, I_2) independent,
        // E |eps - x0|^2 = 4. Check the empirical mean within 3 SE.
        let n = 100_000;
        let x0 = normal_matrix(&mut stream_rng(5, streams::DATA), n, 2);
        let views = noise_batch(&x0, 5, &NoisePolicy::default()).unwrap();
        let v = views.first();
        let sq_norms: Vec<f64> = (0..n)
            .map(|i| v.target.row(i).iter().map(|x| x * x).sum())
            .collect();
        let mean: f64 = sq_norms.iter().sum::<f64>() / n as f64;
        let var: f64 =
            sq_norms.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - 4.0).abs() <= 3.0 * se,
            "mean {mean}, se {se}"
        );
    }

    #[test]
    fn mse_examples() {
        let tape = Tape::new();
        let t = tape.constant(&toy_x0(3));
        let p_eq = tape.leaf(&toy_x0(3));
        assert_eq!(diffusion_loss(p_eq, t).unwrap().value().item(), 0.0);
        let shifted = Tensor::new(
            vec![3, 2],
            toy_x0(3).data().iter().map(|v| v + 1.0).collect(),
        )
        .unwrap();
        let p_shift = tape.leaf(&shifted);
        assert_relative_eq!(diffusion_loss(p_shift, t).unwrap().value().item(), 1.0);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let tape = Tape::new();
        let a = tape.leaf(&Tensor::zeros(vec![2, 2]));
        let b = tape.constant(&Tensor::zeros(vec![2, 3]));
        assert!(matches!(
            diffusion_loss(a, b).unwrap_err(),
            Error::ShapeMismatch { op: "diffusion_loss", .. }
        ));
    }

    #[test]
    fn lambda_zero_reduces_to_baseline_exactly() {
        let tape = Tape::new();
        let pred = tape.leaf(&toy_x0(4));
        let zt = Tensor::from_rows(&[
            vec![0.2, -0.5, 1.0],
            vec![1.1, 0.4, -0.3],
            vec![-0.7, 0.9, 0.2],
            vec![0.3, 0.3, -1.2],
        ])
        .unwrap();
        let zv = tape.leaf(&zt);
        let z = RepBatch::new(zv).unwrap();
        let target = tape.constant(&normal_matrix(&mut stream_rng(2, streams::NOISE), 4, 2));
        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let combined = combined_loss(pred, &z, target, &cfg).unwrap();
        let bare = diffusion_loss(pred, target).unwrap();
        assert_eq!(combined.total.value().item(), bare.value().item());
        let g = backward(combined.total).unwrap();
        assert_eq!(g.wrt(zv).data(), vec![0.0; 12].as_slice());
        let g_bare = backward(bare).unwrap();
        assert_eq!(g.wrt(pred).data(), g_bare.wrt(pred).data());
    }

    #[test]
    fn combined_adds_weighted_component() {
        let tape = Tape::new();
        let pred = tape.leaf(&toy_x0(4));
        let zv = tape.leaf(&normal_matrix(&mut stream_rng(9, streams::NOISE), 4, 3));
        let z = RepBatch::new(zv).unwrap();
        let target = tape.constant(&normal_matrix(&mut stream_rng(3, streams::NOISE), 4, 2));
        let cfg = LossConfig::default();
        let out = combined_loss(pred, &z, target, &cfg).unwrap();
        assert_relative_eq!(
            out.total.value().item(),
            out.diff.value().item() + 0.5 * out.disp.value().item(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn combined_gradient_is_additive() {
        let tape = Tape::new();
        let pred = tape.leaf(&toy_x0(4));
        let zv = tape.leaf(&normal_matrix(&mut stream_rng(9, streams::NOISE), 4, 3));
        let z = RepBatch::new(zv).unwrap();
        let target = tape.constant(&normal_matrix(&mut stream_rng(3, streams::NOISE), 4, 2));
        let cfg = LossConfig {
            lambda: 0.7,
            ..LossConfig::default()
        };
        let out = combined_loss(pred, &z, target, &cfg).unwrap();
        let g_total = backward(out.total).unwrap();
        let g_diff = backward(out.diff).unwrap();
        let g_disp = backward(out.disp).unwrap();
        for (gt, (gd, gz)) in g_total
            .wrt(zv)
            .data()
            .iter()
            .zip(g_diff.wrt(zv).data().iter().zip(g_disp.wrt(zv).data()))
        {
            assert_relative_eq!(*gt, gd + 0.7 * gz, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_views_with_zero_lambda_match_single_view() {
        let tape = Tape::new();
        let pred = tape.leaf(&toy_x0(4));
        let zv = tape.leaf(&normal_matrix(&mut stream_rng(9, streams::NOISE), 4, 3));
        let z = RepBatch::new(zv).unwrap();
        let target = tape.constant(&normal_matrix(&mut stream_rng(3, streams::NOISE), 4, 2));
        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let two = two_view_combined_loss(pred, &z, &z, target, &cfg).unwrap();
        let one = combined_loss(pred, &z, target, &cfg).unwrap();
        assert_eq!(two.total.value().item(), one.total.value().item());
    }
}
