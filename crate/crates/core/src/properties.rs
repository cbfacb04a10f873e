//! Brute-force verification suite: every loss is replayed against its naive
//! reference, gradient-checked, and probed for the invariances it should
//! satisfy. Implementations are injectable so tests can plant a defect and
//! confirm the suite pins it to the right property.

use crate::check::{grad_check, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::diffusion::{combined_loss, diffusion_loss};
use crate::error::Result;
use crate::losses::{
    self, DissimMode, LossConfig, LossVariant, RepBatch,
};
use crate::model::{forward_with_taps, init_model, weight_layout, DenoiserConfig, ModelVars};
use crate::oracle;
use crate::rng::{mix, stream_rng, streams};
use crate::tape::{backward, Tape, Var};
use crate::tensor::Tensor;

use rand::Rng;
use rand_distr::StandardNormal;

pub type DispersiveFn =
    Box<dyn for<'t> Fn(&RepBatch<'t>, &LossConfig) -> Result<Var<'t>> + Send + Sync>;
pub type PerSampleFn =
    Box<dyn for<'t> Fn(&RepBatch<'t>, usize, &LossConfig) -> Result<Var<'t>> + Send + Sync>;
pub type ContrastiveFn = Box<
    dyn for<'t> Fn(&RepBatch<'t>, &RepBatch<'t>, &LossConfig) -> Result<Var<'t>> + Send + Sync,
>;

/// The implementations under test. Defaults to the crate's own; tests swap
/// in broken ones to prove the suite catches them.
pub struct SuiteImpls {
    pub dispersive: DispersiveFn,
    pub per_sample: PerSampleFn,
    pub contrastive: ContrastiveFn,
}

impl Default for SuiteImpls {
    fn default() -> Self {
        Self {
            dispersive: Box::new(losses::dispersive_loss),
            per_sample: Box::new(losses::dispersive_infonce_per_sample),
            contrastive: Box::new(losses::contrastive_loss),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub equivalence_batches: usize,
    pub gradient_seeds: usize,
    pub jensen_batches: usize,
    pub invariance_batches: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            equivalence_batches: 20,
            gradient_seeds: 10,
            jensen_batches: 50,
            invariance_batches: 20,
            seed: 2024,
        }
    }
}

impl SuiteConfig {
    /// Reduced counts for quick in-process checks.
    pub fn quick() -> Self {
        Self {
            equivalence_batches: 5,
            gradient_seeds: 2,
            jensen_batches: 10,
            invariance_batches: 5,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub results: Vec<PropertyResult>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&PropertyResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }

    /// One line per property plus a tally, ready for terminal output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let mark = if r.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{mark}  {:<60}  {}\n", r.name, r.detail));
        }
        let failed = self.results.iter().filter(|r| !r.passed).count();
        out.push_str(&format!(
            "{} properties, {} passed, {} failed\n",
            self.results.len(),
            self.results.len() - failed,
            failed
        ));
        out
    }

    fn record(&mut self, name: &str, outcome: Result<String>) {
        match outcome {
            Ok(detail) => self.results.push(PropertyResult {
                name: name.to_string(),
                passed: true,
                detail,
            }),
            Err(e) => self.results.push(PropertyResult {
                name: name.to_string(),
                passed: false,
                detail: e.to_string(),
            }),
        }
    }
}

/// A property failure is reported through the config-error channel so it
/// carries a human-readable reason.
fn violation(name: &'static str, reason: String) -> crate::Error {
    crate::Error::InvalidConfig {
        field: name,
        reason,
    }
}

fn variant_slug(variant: LossVariant) -> &'static str {
    match variant {
        LossVariant::InfoNceL2 => "infonce_l2",
        LossVariant::InfoNceCosine => "infonce_cosine",
        LossVariant::Hinge => "hinge",
        LossVariant::Covariance => "covariance",
    }
}

const ALL_VARIANTS: [LossVariant; 4] = [
    LossVariant::InfoNceL2,
    LossVariant::InfoNceCosine,
    LossVariant::Hinge,
    LossVariant::Covariance,
];

fn config_for(variant: LossVariant) -> LossConfig {
    LossConfig {
        variant,
        // Wide margin so random normal batches produce active hinge terms.
        epsilon: 3.0,
        ..LossConfig::default()
    }
}

fn random_batch(rng: &mut impl Rng, n: usize, d: usize) -> Tensor {
    let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new_unchecked(vec![n, d], data)
}

fn batch_rng(cfg: &SuiteConfig, salt: u64, k: usize) -> impl Rng {
    stream_rng(mix(cfg.seed ^ salt, k as u64), streams::EVAL)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn eval_dispersive(impls: &SuiteImpls, z: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let tape = Tape::new();
    let batch = RepBatch::new(tape.constant(z))?;
    Ok((impls.dispersive)(&batch, cfg)?.value().item())
}

fn eval_per_sample(impls: &SuiteImpls, z: &Tensor, i: usize, cfg: &LossConfig) -> Result<f64> {
    let tape = Tape::new();
    let batch = RepBatch::new(tape.constant(z))?;
    Ok((impls.per_sample)(&batch, i, cfg)?.value().item())
}

fn eval_contrastive(
    impls: &SuiteImpls,
    z: &Tensor,
    zpos: &Tensor,
    cfg: &LossConfig,
) -> Result<f64> {
    let tape = Tape::new();
    let a = RepBatch::new(tape.constant(z))?;
    let b = RepBatch::new(tape.constant(zpos))?;
    Ok((impls.contrastive)(&a, &b, cfg)?.value().item())
}

const EQUIVALENCE_TOL: f64 = 1e-10;
const EXACT_TOL: f64 = 1e-12;

fn dispersive_equivalence(
    impls: &SuiteImpls,
    cfg: &SuiteConfig,
    variant: LossVariant,
) -> Result<String> {
    let loss_cfg = config_for(variant);
    let oracle_fn: fn(&Tensor, &LossConfig) -> f64 = match variant {
        LossVariant::InfoNceL2 | LossVariant::InfoNceCosine => oracle::dispersive_infonce_batch,
        LossVariant::Hinge => oracle::dispersive_hinge,
        LossVariant::Covariance => oracle::dispersive_covariance,
    };
    let mut worst = 0.0f64;
    for k in 0..cfg.equivalence_batches {
        let mut rng = batch_rng(cfg, 0x0e, k);
        let (n, d) = (rng.gen_range(2..=64), rng.gen_range(2..=16));
        let z = random_batch(&mut rng, n, d);
        let got = eval_dispersive(impls, &z, &loss_cfg)?;
        let want = oracle_fn(&z, &loss_cfg);
        worst = worst.max(rel_err(got, want));
    }
    if worst > EQUIVALENCE_TOL {
        return Err(violation(
            "batch_matches_reference",
            format!("worst rel err {worst:.3e} exceeds {EQUIVALENCE_TOL:.0e}"),
        ));
    }
    Ok(format!(
        "worst rel err {worst:.3e} over {} batches",
        cfg.equivalence_batches
    ))
}

fn per_sample_equivalence(
    impls: &SuiteImpls,
    cfg: &SuiteConfig,
    variant: LossVariant,
) -> Result<String> {
    let loss_cfg = config_for(variant);
    let mut worst = 0.0f64;
    for k in 0..cfg.equivalence_batches {
        let mut rng = batch_rng(cfg, 0x9e, k);
        let (n, d) = (rng.gen_range(2..=64), rng.gen_range(2..=16));
        let z = random_batch(&mut rng, n, d);
        for i in [0, n / 2, n - 1] {
            let got = eval_per_sample(impls, &z, i, &loss_cfg)?;
            let want = oracle::dispersive_infonce_per_sample(&z, i, &loss_cfg);
            worst = worst.max(rel_err(got, want));
        }
    }
    if worst > EQUIVALENCE_TOL {
        return Err(violation(
            "per_sample_matches_reference",
            format!("worst rel err {worst:.3e} exceeds {EQUIVALENCE_TOL:.0e}"),
        ));
    }
    Ok(format!(
        "worst rel err {worst:.3e} over {} batches x 3 indices",
        cfg.equivalence_batches
    ))
}

fn contrastive_equivalence(
    impls: &SuiteImpls,
    cfg: &SuiteConfig,
    variant: LossVariant,
) -> Result<String> {
    let loss_cfg = config_for(variant);
    let oracle_fn: fn(&Tensor, &Tensor, &LossConfig) -> f64 = match variant {
        LossVariant::InfoNceL2 | LossVariant::InfoNceCosine => oracle::contrastive_infonce,
        LossVariant::Hinge => oracle::contrastive_hinge,
        LossVariant::Covariance => oracle::contrastive_covariance,
    };
    let mut worst = 0.0f64;
    for k in 0..cfg.equivalence_batches {
        let mut rng = batch_rng(cfg, 0xc0, k);
        let (n, d) = (rng.gen_range(2..=64), rng.gen_range(2..=16));
        let z = random_batch(&mut rng, n, d);
        let zpos = random_batch(&mut rng, n, d);
        let got = eval_contrastive(impls, &z, &zpos, &loss_cfg)?;
        let want = oracle_fn(&z, &zpos, &loss_cfg);
        worst = worst.max(rel_err(got, want));
    }
    if worst > EQUIVALENCE_TOL {
        return Err(violation(
            "matches_reference",
            format!("worst rel err {worst:.3e} exceeds {EQUIVALENCE_TOL:.0e}"),
        ));
    }
    Ok(format!(
        "worst rel err {worst:.3e} over {} batch pairs",
        cfg.equivalence_batches
    ))
}

fn dispersive_gradients(
    impls: &SuiteImpls,
    cfg: &SuiteConfig,
    variant: LossVariant,
) -> Result<String> {
    let loss_cfg = config_for(variant);
    let mut worst = 0.0f64;
    for s in 0..cfg.gradient_seeds {
        let mut rng = batch_rng(cfg, 0x6d, s);
        let z = random_batch(&mut rng, 6, 4);
        let err = grad_check(
            |_tape, v| (impls.dispersive)(&RepBatch::new(v)?, &loss_cfg),
            &z,
            DEFAULT_STEP,
        )?;
        worst = worst.max(err);
    }
    if worst > DEFAULT_TOLERANCE {
        return Err(violation(
            "gradient_matches_finite_differences",
            format!("worst rel err {worst:.3e} exceeds {DEFAULT_TOLERANCE:.0e}"),
        ));
    }
    Ok(format!(
        "worst rel err {worst:.3e} over {} seeds",
        cfg.gradient_seeds
    ))
}

fn contrastive_gradients(
    impls: &SuiteImpls,
    cfg: &SuiteConfig,
    variant: LossVariant,
) -> Result<String> {
    let loss_cfg = config_for(variant);
    let n = 6;
    let mut worst = 0.0f64;
    for s in 0..cfg.gradient_seeds {
        let mut rng = batch_rng(cfg, 0x6c, s);
        // Both views packed into one probe tensor and split on the tape, so
        // finite differences sweep every input of the two-view loss.
        let packed = random_batch(&mut rng, 2 * n, 4);
        let err = grad_check(
            |_tape, v| {
                let a = RepBatch::new(v.slice_rows(0, n)?)?;
                let b = RepBatch::new(v.slice_rows(n, 2 * n)?)?;
                (impls.contrastive)(&a, &b, &loss_cfg)
            },
            &packed,
            DEFAULT_STEP,
        )?;
        worst = worst.max(err);
    }
    if worst > DEFAULT_TOLERANCE {
        return Err(violation(
            "gradient_matches_finite_differences",
            format!("worst rel err {worst:.3e} exceeds {DEFAULT_TOLERANCE:.0e}"),
        ));
    }
    Ok(format!(
        "worst rel err {worst:.3e} over {} seeds",
        cfg.gradient_seeds
    ))
}

fn end_to_end_gradient(cfg: &SuiteConfig) -> Result<String> {
    let model_cfg = DenoiserConfig {
        input_dim: 2,
        hidden_dim: 8,
        num_blocks: 2,
        time_embed_dim: 4,
        tap_blocks: None,
    };
    let layout = weight_layout(&model_cfg);
    let loss_cfg = LossConfig::default();
    let mut worst = 0.0f64;
    for s in 0..cfg.gradient_seeds {
        let state = init_model(&model_cfg, mix(cfg.seed, s as u64))?;
        let mut flat = Vec::with_capacity(model_cfg.param_count());
        for (_, w) in state.weights() {
            flat.extend_from_slice(w.data());
        }
        let theta = Tensor::new_unchecked(vec![flat.len(), 1], flat);

        let mut rng = batch_rng(cfg, 0xe2, s);
        let x_t = random_batch(&mut rng, 8, 2);
        let target = random_batch(&mut rng, 8, 2);
        let times: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t = Tensor::new_unchecked(vec![8], times);

        let err = grad_check(
            |tape, v| {
                let mut vars = Vec::with_capacity(layout.len());
                let mut offset = 0;
                for (_, shape) in &layout {
                    let numel: usize = shape.iter().product();
                    vars.push(v.slice_rows(offset, offset + numel)?.reshape(shape.clone())?);
                    offset += numel;
                }
                let model = ModelVars::from_vars(model_cfg.clone(), vars)?;
                let trace = forward_with_taps(&model, &x_t, &t)?;
                let z = RepBatch::new(trace.taps[0].1)?;
                let tv = tape.constant(&target);
                Ok(combined_loss(trace.pred, &z, tv, &loss_cfg)?.total)
            },
            &theta,
            DEFAULT_STEP,
        )?;
        worst = worst.max(err);
    }
    if worst > DEFAULT_TOLERANCE {
        return Err(violation(
            "combined_gradient_matches_finite_differences",
            format!("worst rel err {worst:.3e} exceeds {DEFAULT_TOLERANCE:.0e}"),
        ));
    }
    Ok(format!(
        "worst rel err {worst:.3e} over {} seeds, every weight probed",
        cfg.gradient_seeds
    ))
}

fn identity_views_identity(
    impls: &SuiteImpls,
    cfg: &SuiteConfig,
    variant: LossVariant,
) -> Result<String> {
    let loss_cfg = config_for(variant);
    let mode = match variant {
        LossVariant::InfoNceL2 => DissimMode::SquaredL2,
        LossVariant::InfoNceCosine => DissimMode::NegCosine,
        _ => unreachable!("identity check only covers InfoNCE variants"),
    };
    let mut worst = 0.0f64;
    for k in 0..cfg.equivalence_batches {
        let mut rng = batch_rng(cfg, 0x1d, k);
        let (n, d) = (rng.gen_range(2..=32), rng.gen_range(2..=8));
        let z = random_batch(&mut rng, n, d);
        let lhs = eval_contrastive(impls, &z, &z.clone(), &loss_cfg)?;
        let per_sample_mean = (0..n)
            .map(|i| eval_per_sample(impls, &z, i, &loss_cfg))
            .sum::<Result<f64>>()?
            / n as f64;
        // Self-dissimilarity enters the contrastive form as a constant, and
        // its log runs over a sum where the per-sample form uses a mean.
        let pairs = oracle::pairwise(&z, mode);
        let self_term =
            pairs.iter().enumerate().map(|(i, r)| r[i]).sum::<f64>() / (n as f64 * loss_cfg.tau);
        let terms = if loss_cfg.include_diagonal { n } else { n - 1 };
        let rhs = per_sample_mean + self_term + (terms as f64).ln();
        worst = worst.max(rel_err(lhs, rhs));
    }
    if worst > EXACT_TOL {
        return Err(violation(
            "identity_views_reduce_to_dispersive",
            format!("worst rel err {worst:.3e} exceeds {EXACT_TOL:.0e}"),
        ));
    }
    Ok(format!(
        "worst rel err {worst:.3e} over {} batches",
        cfg.equivalence_batches
    ))
}

fn jensen_ordering(
    impls: &SuiteImpls,
    cfg: &SuiteConfig,
    variant: LossVariant,
) -> Result<String> {
    let loss_cfg = config_for(variant);
    for k in 0..cfg.jensen_batches {
        let mut rng = batch_rng(cfg, 0x7e, k);
        let (n, d) = (rng.gen_range(2..=48), rng.gen_range(2..=12));
        let z = random_batch(&mut rng, n, d);
        let batch_form = eval_dispersive(impls, &z, &loss_cfg)?;
        let per_sample_mean = (0..n)
            .map(|i| eval_per_sample(impls, &z, i, &loss_cfg))
            .sum::<Result<f64>>()?
            / n as f64;
        // log of a mean dominates the mean of logs.
        if batch_form < per_sample_mean - EXACT_TOL {
            return Err(violation(
                "jensen_batch_form_dominates_per_sample_mean",
                format!(
                    "batch {batch_form:.12} fell below per-sample mean {per_sample_mean:.12} on batch {k}"
                ),
            ));
        }
    }
    Ok(format!(
        "batch form >= per-sample mean on {0}/{0} random batches",
        cfg.jensen_batches
    ))
}

fn lambda_zero_reduction(cfg: &SuiteConfig) -> Result<String> {
    let mut rng = batch_rng(cfg, 0x10, 0);
    let pred_t = random_batch(&mut rng, 4, 3);
    let target_t = random_batch(&mut rng, 4, 3);
    let z_t = random_batch(&mut rng, 4, 3);
    let loss_cfg = LossConfig {
        lambda: 0.0,
        ..LossConfig::default()
    };

    let tape = Tape::new();
    let pred = tape.leaf(&pred_t);
    let z_leaf = tape.leaf(&z_t);
    let target = tape.constant(&target_t);
    let z = RepBatch::new(z_leaf)?;
    let combined = combined_loss(pred, &z, target, &loss_cfg)?;
    let baseline = diffusion_loss(pred, target)?;
    if combined.total.value().item() != baseline.value().item() {
        return Err(violation(
            "lambda_zero_reduces_to_baseline",
            "combined total differs from bare diffusion loss".into(),
        ));
    }
    let grads = backward(combined.total)?;
    let z_grad = grads.wrt(z_leaf);
    if z_grad.data().iter().any(|g| *g != 0.0) {
        return Err(violation(
            "lambda_zero_reduces_to_baseline",
            "representation gradient is not identically zero".into(),
        ));
    }
    Ok("value bit-equal to baseline, representation gradient identically zero".into())
}

fn translation_invariance(impls: &SuiteImpls, cfg: &SuiteConfig) -> Result<String> {
    let loss_cfg = config_for(LossVariant::InfoNceL2);
    let mut worst = 0.0f64;
    for k in 0..cfg.invariance_batches {
        let mut rng = batch_rng(cfg, 0x77, k);
        let (n, d) = (rng.gen_range(2..=32), rng.gen_range(2..=8));
        let z = random_batch(&mut rng, n, d);
        let shift: Vec<f64> = (0..d).map(|_| 5.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let moved = Tensor::new_unchecked(
            z.shape().to_vec(),
            z.data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + shift[i % d])
                .collect(),
        );
        let a = eval_dispersive(impls, &z, &loss_cfg)?;
        let b = eval_dispersive(impls, &moved, &loss_cfg)?;
        worst = worst.max(rel_err(a, b));
    }
    if worst > EXACT_TOL {
        return Err(violation(
            "translation_invariant",
            format!("worst rel err {worst:.3e} exceeds {EXACT_TOL:.0e}"),
        ));
    }
    Ok(format!(
        "worst rel err {worst:.3e} over {} batches",
        cfg.invariance_batches
    ))
}

fn scale_invariance(impls: &SuiteImpls, cfg: &SuiteConfig) -> Result<String> {
    let loss_cfg = config_for(LossVariant::InfoNceCosine);
    let mut worst = 0.0f64;
    for k in 0..cfg.invariance_batches {
        let mut rng = batch_rng(cfg, 0x5c, k);
        let (n, d) = (rng.gen_range(2..=32), rng.gen_range(2..=8));
        let z = random_batch(&mut rng, n, d);
        let base = eval_dispersive(impls, &z, &loss_cfg)?;
        for a in [0.5, 2.0, 7.25] {
            let scaled =
                Tensor::new_unchecked(z.shape().to_vec(), z.data().iter().map(|v| a * v).collect());
            let got = eval_dispersive(impls, &scaled, &loss_cfg)?;
            worst = worst.max(rel_err(base, got));
        }
    }
    if worst > EXACT_TOL {
        return Err(violation(
            "scale_invariant",
            format!("worst rel err {worst:.3e} exceeds {EXACT_TOL:.0e}"),
        ));
    }
    Ok(format!(
        "worst rel err {worst:.3e} over {} batches x 3 scales",
        cfg.invariance_batches
    ))
}

fn permute_rows(z: &Tensor, perm: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(z.numel());
    for &i in perm {
        data.extend_from_slice(z.row(i));
    }
    Tensor::new_unchecked(z.shape().to_vec(), data)
}

fn permutation_invariance(
    impls: &SuiteImpls,
    cfg: &SuiteConfig,
    variant: LossVariant,
    contrastive: bool,
) -> Result<String> {
    use rand::seq::SliceRandom;
    let loss_cfg = config_for(variant);
    let mut worst = 0.0f64;
    for k in 0..cfg.invariance_batches {
        let mut rng = batch_rng(cfg, if contrastive { 0xbc } else { 0xb0 }, k);
        let (n, d) = (rng.gen_range(2..=32), rng.gen_range(2..=8));
        let z = random_batch(&mut rng, n, d);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        if contrastive {
            let zpos = random_batch(&mut rng, n, d);
            let a = eval_contrastive(impls, &z, &zpos, &loss_cfg)?;
            let b = eval_contrastive(
                impls,
                &permute_rows(&z, &perm),
                &permute_rows(&zpos, &perm),
                &loss_cfg,
            )?;
            worst = worst.max(rel_err(a, b));
        } else {
            let a = eval_dispersive(impls, &z, &loss_cfg)?;
            let b = eval_dispersive(impls, &permute_rows(&z, &perm), &loss_cfg)?;
            worst = worst.max(rel_err(a, b));
        }
    }
    if worst > EXACT_TOL {
        return Err(violation(
            "permutation_invariant",
            format!("worst rel err {worst:.3e} exceeds {EXACT_TOL:.0e}"),
        ));
    }
    Ok(format!(
        "worst rel err {worst:.3e} over {} permuted batches",
        cfg.invariance_batches
    ))
}

fn hinge_zero_beyond_margin(impls: &SuiteImpls, cfg: &SuiteConfig) -> Result<String> {
    let loss_cfg = config_for(LossVariant::Hinge);
    let eps = loss_cfg.epsilon;
    for k in 0..cfg.invariance_batches {
        let mut rng = batch_rng(cfg, 0x4a, k);
        // Rigid motions of a grid with spacing 2 * epsilon keep every pair
        // strictly beyond the margin.
        let side = rng.gen_range(2..=4usize);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (cos, sin) = (angle.cos(), angle.sin());
        let (ox, oy) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let mut rows = Vec::new();
        for i in 0..side {
            for j in 0..side {
                let (gx, gy) = (2.0 * eps * i as f64, 2.0 * eps * j as f64);
                rows.push(vec![cos * gx - sin * gy + ox, sin * gx + cos * gy + oy]);
            }
        }
        let z = Tensor::from_rows(&rows)?;
        let got = eval_dispersive(impls, &z, &loss_cfg)?;
        if got != 0.0 {
            return Err(violation(
                "zero_beyond_margin",
                format!("expected exactly 0, got {got:.3e} on batch {k}"),
            ));
        }
    }
    Ok(format!(
        "exactly zero on {} separated batches",
        cfg.invariance_batches
    ))
}

/// Runs every property and returns the per-property report.
pub fn run_suite(impls: &SuiteImpls, cfg: &SuiteConfig) -> SuiteReport {
    let mut report = SuiteReport::default();

    for variant in ALL_VARIANTS {
        let slug = variant_slug(variant);
        report.record(
            &format!("loss/{slug}/batch_matches_reference"),
            dispersive_equivalence(impls, cfg, variant),
        );
    }
    for variant in [LossVariant::InfoNceL2, LossVariant::InfoNceCosine] {
        let slug = variant_slug(variant);
        report.record(
            &format!("loss/{slug}/per_sample_matches_reference"),
            per_sample_equivalence(impls, cfg, variant),
        );
    }
    for variant in [
        LossVariant::InfoNceL2,
        LossVariant::Hinge,
        LossVariant::Covariance,
    ] {
        let name = match variant {
            LossVariant::InfoNceL2 => "loss/contrastive_infonce/matches_reference".to_string(),
            _ => format!("loss/contrastive_{}/matches_reference", variant_slug(variant)),
        };
        report.record(&name, contrastive_equivalence(impls, cfg, variant));
    }

    for variant in ALL_VARIANTS {
        let slug = variant_slug(variant);
        report.record(
            &format!("loss/{slug}/gradient_matches_finite_differences"),
            dispersive_gradients(impls, cfg, variant),
        );
    }
    for variant in [
        LossVariant::InfoNceL2,
        LossVariant::Hinge,
        LossVariant::Covariance,
    ] {
        let name = match variant {
            LossVariant::InfoNceL2 => {
                "loss/contrastive_infonce/gradient_matches_finite_differences".to_string()
            }
            _ => format!(
                "loss/contrastive_{}/gradient_matches_finite_differences",
                variant_slug(variant)
            ),
        };
        report.record(&name, contrastive_gradients(impls, cfg, variant));
    }
    report.record(
        "model/combined_gradient_matches_finite_differences",
        end_to_end_gradient(cfg),
    );

    report.record(
        "loss/contrastive_infonce/identity_views_reduce_to_dispersive",
        identity_views_identity(impls, cfg, LossVariant::InfoNceL2),
    );
    report.record(
        "loss/contrastive_infonce/identity_views_reduce_to_dispersive_cosine",
        identity_views_identity(impls, cfg, LossVariant::InfoNceCosine),
    );
    for variant in [LossVariant::InfoNceL2, LossVariant::InfoNceCosine] {
        let slug = variant_slug(variant);
        report.record(
            &format!("loss/{slug}/jensen_batch_form_dominates_per_sample_mean"),
            jensen_ordering(impls, cfg, variant),
        );
    }
    report.record(
        "loss/combined/lambda_zero_reduces_to_baseline",
        lambda_zero_reduction(cfg),
    );

    report.record(
        "loss/infonce_l2/translation_invariant",
        translation_invariance(impls, cfg),
    );
    report.record(
        "loss/infonce_cosine/scale_invariant",
        scale_invariance(impls, cfg),
    );
    for variant in ALL_VARIANTS {
        let slug = variant_slug(variant);
        report.record(
            &format!("loss/{slug}/permutation_invariant"),
            permutation_invariance(impls, cfg, variant, false),
        );
    }
    for variant in [
        LossVariant::InfoNceL2,
        LossVariant::Hinge,
        LossVariant::Covariance,
    ] {
        let name = match variant {
            LossVariant::InfoNceL2 => {
                "loss/contrastive_infonce/permutation_invariant".to_string()
            }
            _ => format!(
                "loss/contrastive_{}/permutation_invariant",
                variant_slug(variant)
            ),
        };
        report.record(
            &name,
            permutation_invariance(impls, cfg, variant, true),
        );
    }
    report.record(
        "loss/hinge/zero_beyond_margin",
        hinge_zero_beyond_margin(impls, cfg),
    );

    report
}
