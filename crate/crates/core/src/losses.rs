//! Batch dispersion regularizers and their contrastive counterparts.
//!
//! Four variants are provided, each in a "dispersive" form that needs only a
//! single batch of representations and a contrastive form that additionally
//! consumes a positive view per row:
//!
//! - InfoNCE with squared-Euclidean dissimilarity (representations are used
//!   raw, deliberately not normalized),
//! - InfoNCE with negative-cosine dissimilarity,
//! - a squared hinge over pairwise Euclidean distances,
//! - a covariance penalty over column-standardized representations.
//!
//! All losses are differentiable [`Var`] expressions; every exponential goes
//! through a max-shifted log-sum-exp so overflow can only come from
//! non-finite inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossVariant {
    #[serde(rename = "infonce_l2")]
    InfoNceL2,
    #[serde(rename = "infonce_cosine")]
    InfoNceCosine,
    #[serde(rename = "hinge")]
    Hinge,
    #[serde(rename = "covariance")]
    Covariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DissimMode {
    #[serde(rename = "squared_l2")]
    SquaredL2,
    #[serde(rename = "neg_cosine")]
    NegCosine,
    #[serde(rename = "l2")]
    L2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub variant: LossVariant,
    /// Weight of the regularizer in the combined objective.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Temperature dividing dissimilarities inside the exponential.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Margin of the hinge variant.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Off-diagonal weight of the contrastive covariance variant.
    #[serde(default = "default_w")]
    pub w: f64,
    /// Whether InfoNCE averages include the self-pair terms.
    #[serde(default = "default_include_diagonal")]
    pub include_diagonal: bool,
}

fn default_lambda() -> f64 {
    0.5
}
fn default_tau() -> f64 {
    0.5
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_w() -> f64 {
    1.0
}
fn default_include_diagonal() -> bool {
    true
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variant: LossVariant::InfoNceL2,
            lambda: default_lambda(),
            tau: default_tau(),
            epsilon: default_epsilon(),
            w: default_w(),
            include_diagonal: default_include_diagonal(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "loss.tau",
                reason: format!("must be a positive real, got {}", self.tau),
            });
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "loss.epsilon",
                reason: format!("must be a positive real, got {}", self.epsilon),
            });
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "loss.lambda",
                reason: format!("must be a non-negative real, got {}", self.lambda),
            });
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "loss.w",
                reason: format!("must be a non-negative real, got {}", self.w),
            });
        }
        Ok(())
    }

    fn infonce_mode(&self) -> Result<DissimMode> {
        match self.variant {
            LossVariant::InfoNceL2 => Ok(DissimMode::SquaredL2),
            LossVariant::InfoNceCosine => Ok(DissimMode::NegCosine),
            _ => Err(Error::InvalidConfig {
                field: "loss.variant",
                reason: "InfoNCE op called with a non-InfoNCE variant".into(),
            }),
        }
    }
}

/// A batch of flattened representations: one row per sample, at least two
/// rows so pairwise statistics are defined.
#[derive(Debug, Clone, Copy)]
pub struct RepBatch<'t> {
    var: Var<'t>,
    rows: usize,
    cols: usize,
}

impl<'t> RepBatch<'t> {
    pub fn new(var: Var<'t>) -> Result<Self> {
        let shape = var.shape();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "rep_batch",
                shape,
                detail: "representations must be a 2-D batch".into(),
            });
        }
        if shape[0] < 2 {
            return Err(Error::BatchTooSmall { rows: shape[0] });
        }
        Ok(Self {
            var,
            rows: shape[0],
            cols: shape[1],
        })
    }

    pub fn var(&self) -> Var<'t> {
        self.var
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

fn check_same_shape(op: &'static str, a: &RepBatch<'_>, b: &RepBatch<'_>) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.rows, a.cols],
            rhs: vec![b.rows, b.cols],
        });
    }
    Ok(())
}

fn diagonal_tensor(n: usize, value: f64) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = value;
    }
    Tensor::new_unchecked(vec![n, n], data)
}

fn off_diagonal_mask(n: usize) -> Tensor {
    let mut data = vec![1.0; n * n];
    for i in 0..n {
        data[i * n + i] = 0.0;
    }
    Tensor::new_unchecked(vec![n, n], data)
}

/// Pairwise squared Euclidean distances via the Gram expansion
/// `s_i + s_j - 2 <z_i, z_j>`, clamped at zero against rounding. The
/// diagonal is exactly zero because the same products cancel.
fn sq_dist_matrix<'t>(z: Var<'t>) -> Result<Var<'t>> {
    let n = z.shape()[0];
    let g = z.matmul(z.transpose()?)?;
    let s_col = z.mul(z)?.sum_axis(1)?;
    let s_row = s_col.reshape(vec![n])?;
    g.mul_scalar(-2.0)?.add(s_col)?.add(s_row)?.max_scalar(0.0)
}

/// Per-row Euclidean norms as an `[n, 1]` column, rejecting rows whose norm
/// is at or below 1e-12.
fn row_norms<'t>(z: Var<'t>) -> Result<Var<'t>> {
    let sq = z.mul(z)?.sum_axis(1)?;
    if let Some(row) = sq.value().data().iter().position(|&s| s <= 1e-24) {
        return Err(Error::ZeroRow { row });
    }
    sq.sqrt()
}

fn neg_cosine_matrix<'t>(z: Var<'t>) -> Result<Var<'t>> {
    let norms = row_norms(z)?;
    let zn = z.div(norms)?;
    zn.matmul(zn.transpose()?)?.mul_scalar(-1.0)
}

/// The `N x N` dissimilarity matrix `M[i][j] = D(z_i, z_j)`.
///
/// The plain `l2` mode takes a square root whose derivative blows up at
/// coincident rows; the hinge losses below therefore build their distance
/// matrix with a diagonal offset instead of calling this directly.
pub fn pairwise_dissim<'t>(z: &RepBatch<'t>, mode: DissimMode) -> Result<Var<'t>> {
    match mode {
        DissimMode::SquaredL2 => sq_dist_matrix(z.var),
        DissimMode::L2 => sq_dist_matrix(z.var)?.sqrt(),
        DissimMode::NegCosine => neg_cosine_matrix(z.var),
    }
}

/// `log((1/count) * sum exp(e))` over the entries of `e` selected by `mask`
/// (all entries when `mask` is `None`), max-shifted for overflow safety.
fn log_mean_exp<'t>(e: Var<'t>, mask: Option<&Tensor>, count: usize) -> Result<Var<'t>> {
    let ev = e.value();
    let shift = ev
        .data()
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m.data()[*i] != 0.0))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let ex = e.add_scalar(-shift)?.exp()?;
    let selected = match mask {
        Some(m) => ex.mul(e.tape().constant(m))?,
        None => ex,
    };
    selected
        .sum()?
        .mul_scalar(1.0 / count as f64)?
        .log()?
        .add_scalar(shift)
}

/// Batch dispersion objective: `log E_{i,j} exp(-D(z_i, z_j) / tau)` over
/// ordered pairs, self-pairs included by default.
pub fn dispersive_infonce_batch<'t>(z: &RepBatch<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    cfg.validate()?;
    let mode = cfg.infonce_mode()?;
    let n = z.rows;
    let e = pairwise_dissim(z, mode)?.mul_scalar(-1.0 / cfg.tau)?;
    if cfg.include_diagonal {
        log_mean_exp(e, None, n * n)
    } else {
        log_mean_exp(e, Some(&off_diagonal_mask(n)), n * (n - 1))
    }
}

/// Reference-sample form: `log E_j exp(-D(z_i, z_j) / tau)` for one row `i`.
/// Averaging this over `i` pools inside the log of the batch form's single
/// pooled average, so the two differ in general (Jensen).
pub fn dispersive_infonce_per_sample<'t>(
    z: &RepBatch<'t>,
    i: usize,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    let mode = cfg.infonce_mode()?;
    let n = z.rows;
    if i >= n {
        return Err(Error::InvalidConfig {
            field: "loss.sample_index",
            reason: format!("row {i} out of range for batch of {n}"),
        });
    }
    let row = pairwise_dissim(z, mode)?.slice_rows(i, i + 1)?;
    let e = row.mul_scalar(-1.0 / cfg.tau)?;
    if cfg.include_diagonal {
        log_mean_exp(e, None, n)
    } else {
        let mut mask = vec![1.0; n];
        mask[i] = 0.0;
        log_mean_exp(e, Some(&Tensor::new_unchecked(vec![1, n], mask)), n - 1)
    }
}

/// Distance matrix for the hinge losses: Euclidean distances off the
/// diagonal, `epsilon + 1` on the diagonal. The offset keeps the square
/// root's derivative finite where the distance is structurally zero, and the
/// inflated diagonal can never activate the margin.
fn hinge_dist_matrix<'t>(z: Var<'t>, epsilon: f64) -> Result<Var<'t>> {
    let n = z.shape()[0];
    let offset = diagonal_tensor(n, (epsilon + 1.0) * (epsilon + 1.0));
    let msq = sq_dist_matrix(z)?;
    msq.add(z.tape().constant(&offset))?.sqrt()
}

/// Mean over ordered pairs `i != j` of `max(0, epsilon - |z_i - z_j|)^2`.
///
/// Exactly coincident distinct rows make this non-differentiable; backward
/// reports a non-finite gradient in that degenerate case.
pub fn dispersive_hinge<'t>(z: &RepBatch<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    cfg.validate()?;
    let n = z.rows;
    let margin = hinge_dist_matrix(z.var, cfg.epsilon)?
        .mul_scalar(-1.0)?
        .add_scalar(cfg.epsilon)?
        .max_scalar(0.0)?;
    margin
        .mul(margin)?
        .sum()?
        .mul_scalar(1.0 / (n * (n - 1)) as f64)
}

/// Column-standardizes a batch (zero mean, unit population variance, 1e-5
/// stabilizer inside the square root), rejecting degenerate columns.
fn standardize<'t>(z: Var<'t>, view: &'static str) -> Result<Var<'t>> {
    let mu = z.mean_axis(0)?;
    let centered = z.sub(mu)?;
    let var = centered.mul(centered)?.mean_axis(0)?;
    if let Some((column, &variance)) = var
        .value()
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| v <= 1e-10)
    {
        return Err(Error::DegenerateColumn {
            view,
            column,
            variance,
        });
    }
    let std = var.add_scalar(1e-5)?.sqrt()?;
    centered.div(std)
}

/// Sum of squared entries of the standardized batch covariance
/// `(1/N) Zhat^T Zhat`. The diagonal is 1 after standardization, so the
/// value is bounded below by the column count.
pub fn dispersive_covariance<'t>(z: &RepBatch<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    cfg.validate()?;
    let zh = standardize(z.var, "z")?;
    let cov = zh
        .transpose()?
        .matmul(zh)?
        .mul_scalar(1.0 / z.rows as f64)?;
    cov.mul(cov)?.sum()
}

/// Row-wise dissimilarity `D(z_i, zpos_i)` between matched views, `[n, 1]`.
fn positive_dissim<'t>(z: Var<'t>, zpos: Var<'t>, mode: DissimMode) -> Result<Var<'t>> {
    match mode {
        DissimMode::SquaredL2 => {
            let diff = z.sub(zpos)?;
            diff.mul(diff)?.sum_axis(1)
        }
        DissimMode::L2 => positive_dissim(z, zpos, DissimMode::SquaredL2)?.sqrt(),
        DissimMode::NegCosine => {
            let dots = z.mul(zpos)?.sum_axis(1)?;
            dots.div(row_norms(z)?)?
                .div(row_norms(zpos)?)?
                .mul_scalar(-1.0)
        }
    }
}

/// Row-wise `log sum_j exp(e[i][j])` as an `[n, 1]` column, max-shifted per
/// row; `mask` selects which entries participate.
fn row_log_sum_exp<'t>(e: Var<'t>, mask: Option<&Tensor>) -> Result<Var<'t>> {
    let ev = e.value();
    let (n, cols) = (ev.rows(), ev.cols());
    let shifts: Vec<f64> = (0..n)
        .map(|i| {
            (0..cols)
                .filter(|j| mask.is_none_or(|m| m.data()[i * cols + j] != 0.0))
                .map(|j| ev.at(i, j))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let shift = e.tape().constant(&Tensor::new_unchecked(vec![n, 1], shifts));
    let ex = e.sub(shift)?.exp()?;
    let selected = match mask {
        Some(m) => ex.mul(e.tape().constant(m))?,
        None => ex,
    };
    selected.sum_axis(1)?.log()?.add(shift)
}

/// Full contrastive objective: mean over rows of the positive attraction
/// term `D(z_i, zpos_i) / tau` plus `log sum_j exp(-D(z_i, z_j) / tau)` with
/// in-batch negatives (self-pair included by default). Note the denominator
/// is a sum, not a mean: with identical views the value equals the averaged
/// per-sample dispersive form plus the positive constant plus `log N`.
pub fn contrastive_infonce<'t>(
    z: &RepBatch<'t>,
    zpos: &RepBatch<'t>,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    check_same_shape("contrastive_infonce", z, zpos)?;
    let mode = cfg.infonce_mode()?;
    let positive = positive_dissim(z.var, zpos.var, mode)?
        .mul_scalar(1.0 / cfg.tau)?
        .mean()?;
    let e = pairwise_dissim(z, mode)?.mul_scalar(-1.0 / cfg.tau)?;
    let mask = (!cfg.include_diagonal).then(|| off_diagonal_mask(z.rows));
    let lse = row_log_sum_exp(e, mask.as_ref())?.mean()?;
    positive.add(lse)
}

/// Positive views attract via the squared distance; in-batch pairs repel via
/// the same hinge as [`dispersive_hinge`].
pub fn contrastive_hinge<'t>(
    z: &RepBatch<'t>,
    zpos: &RepBatch<'t>,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    check_same_shape("contrastive_hinge", z, zpos)?;
    let diff = z.var.sub(zpos.var)?;
    let positive = diff.mul(diff)?.sum_axis(1)?.mean()?;
    positive.add(dispersive_hinge(z, cfg)?)
}

/// Cross-covariance between standardized views, pulled toward the identity:
/// `sum_m (1 - Cov_mm)^2 + w * sum_{m != n} Cov_mn^2`.
pub fn contrastive_covariance<'t>(
    z: &RepBatch<'t>,
    zpos: &RepBatch<'t>,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    check_same_shape("contrastive_covariance", z, zpos)?;
    let zh = standardize(z.var, "z")?;
    let ph = standardize(zpos.var, "z_pos")?;
    let cov = zh
        .transpose()?
        .matmul(ph)?
        .mul_scalar(1.0 / z.rows as f64)?;
    let tape = z.var.tape();
    let diag = tape.constant(&diagonal_tensor(z.cols, 1.0));
    let off = tape.constant(&off_diagonal_mask(z.cols));
    let dev = diag.sub(cov)?;
    let on_diag = dev.mul(dev)?.mul(diag)?.sum()?;
    let off_diag = cov.mul(cov)?.mul(off)?.sum()?;
    on_diag.add(off_diag.mul_scalar(cfg.w)?)
}

/// Dispatches to the batch-only loss named by `cfg.variant`.
pub fn dispersive_loss<'t>(z: &RepBatch<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    match cfg.variant {
        LossVariant::InfoNceL2 | LossVariant::InfoNceCosine => dispersive_infonce_batch(z, cfg),
        LossVariant::Hinge => dispersive_hinge(z, cfg),
        LossVariant::Covariance => dispersive_covariance(z, cfg),
    }
}

/// Dispatches to the two-view contrastive loss named by `cfg.variant`.
pub fn contrastive_loss<'t>(
    z: &RepBatch<'t>,
    zpos: &RepBatch<'t>,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    match cfg.variant {
        LossVariant::InfoNceL2 | LossVariant::InfoNceCosine => contrastive_infonce(z, zpos, cfg),
        LossVariant::Hinge => contrastive_hinge(z, zpos, cfg),
        LossVariant::Covariance => contrastive_covariance(z, zpos, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{backward, Tape};
    use approx::assert_relative_eq;

    fn cfg(variant: LossVariant) -> LossConfig {
        LossConfig {
            variant,
            ..LossConfig::default()
        }
    }

    fn batch<'t>(tape: &'t Tape, rows: &[Vec<f64>]) -> RepBatch<'t> {
        RepBatch::new(tape.leaf(&Tensor::from_rows(rows).unwrap())).unwrap()
    }

    #[test]
    fn identical_rows_infonce_l2_is_exactly_zero() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![0.3, -1.1], vec![0.3, -1.1], vec![0.3, -1.1]]);
        let loss = dispersive_infonce_batch(&z, &cfg(LossVariant::InfoNceL2)).unwrap();
        assert_eq!(loss.value().item(), 0.0);
    }

    #[test]
    fn two_point_infonce_l2_matches_enumeration() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let loss = dispersive_infonce_batch(&z, &cfg(LossVariant::InfoNceL2)).unwrap();
        let expected = ((2.0 + 2.0 * (-2.0f64).exp()) / 4.0).ln();
        assert_relative_eq!(loss.value().item(), expected, max_relative = 1e-14);
    }

    #[test]
    fn orthogonal_infonce_cosine_matches_enumeration() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let loss = dispersive_infonce_batch(&z, &cfg(LossVariant::InfoNceCosine)).unwrap();
        let expected = ((2.0 * 2.0f64.exp() + 2.0) / 4.0).ln();
        assert_relative_eq!(loss.value().item(), expected, max_relative = 1e-14);
    }

    #[test]
    fn per_sample_row_zero_matches_enumeration() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let loss = dispersive_infonce_per_sample(&z, 0, &cfg(LossVariant::InfoNceL2)).unwrap();
        let expected = ((1.0 + (-2.0f64).exp()) / 2.0).ln();
        assert_relative_eq!(loss.value().item(), expected, max_relative = 1e-14);
    }

    #[test]
    fn excluding_the_diagonal_matches_hand_sum() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let mut c = cfg(LossVariant::InfoNceL2);
        c.include_diagonal = false;
        let loss = dispersive_infonce_batch(&z, &c).unwrap();
        assert_relative_eq!(loss.value().item(), -2.0, max_relative = 1e-14);
        let per = dispersive_infonce_per_sample(&z, 1, &c).unwrap();
        assert_relative_eq!(per.value().item(), -2.0, max_relative = 1e-14);
    }

    #[test]
    fn hinge_is_zero_when_margins_hold() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![0.0, 0.0], vec![2.0, 0.0]]);
        let loss = dispersive_hinge(&z, &cfg(LossVariant::Hinge)).unwrap();
        assert_eq!(loss.value().item(), 0.0);
    }

    #[test]
    fn hinge_on_identical_rows_is_one() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let loss = dispersive_hinge(&z, &cfg(LossVariant::Hinge)).unwrap();
        assert_eq!(loss.value().item(), 1.0);
    }

    #[test]
    fn hinge_half_margin_pair() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![0.0, 0.0], vec![0.5, 0.0]]);
        let loss = dispersive_hinge(&z, &cfg(LossVariant::Hinge)).unwrap();
        assert_relative_eq!(loss.value().item(), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn hinge_gradient_pushes_points_apart() {
        let tape = Tape::new();
        let t = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.5, 0.0]]).unwrap();
        let v = tape.leaf(&t);
        let z = RepBatch::new(v).unwrap();
        let loss = dispersive_hinge(&z, &cfg(LossVariant::Hinge)).unwrap();
        let g = backward(loss).unwrap().wrt(v);
        // Moving row 0 left (negative x) increases separation, so descent
        // direction -grad must have negative x for row 0 and positive for 1.
        assert!(g.at(0, 0) > 0.0);
        assert!(g.at(1, 0) < 0.0);
    }

    #[test]
    fn sign_grid_covariance_near_two() {
        let tape = Tape::new();
        let z = batch(
            &tape,
            &[vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]],
        );
        let loss = dispersive_covariance(&z, &cfg(LossVariant::Covariance)).unwrap();
        assert_relative_eq!(loss.value().item(), 2.0, epsilon = 1e-4);
    }

    #[test]
    fn correlated_covariance_near_four() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![1.0, 1.0], vec![-1.0, -1.0]]);
        let loss = dispersive_covariance(&z, &cfg(LossVariant::Covariance)).unwrap();
        assert_relative_eq!(loss.value().item(), 4.0, epsilon = 1e-4);
    }

    #[test]
    fn covariance_is_at_least_column_count() {
        let tape = Tape::new();
        let z = batch(
            &tape,
            &[vec![0.1, 2.0, -0.4], vec![1.3, -0.7, 0.8], vec![-0.5, 0.9, 1.6], vec![2.2, 0.3, -1.1]],
        );
        let loss = dispersive_covariance(&z, &cfg(LossVariant::Covariance)).unwrap();
        assert!(loss.value().item() >= 3.0 - 1e-3);
    }

    #[test]
    fn identity_views_contrastive_covariance_near_zero() {
        let tape = Tape::new();
        let rows = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]];
        let z = batch(&tape, &rows);
        let zpos = batch(&tape, &rows);
        let loss = contrastive_covariance(&z, &zpos, &cfg(LossVariant::Covariance)).unwrap();
        assert!(loss.value().item() < 1e-8, "got {}", loss.value().item());
    }

    #[test]
    fn cosine_rejects_zero_rows() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let err = dispersive_infonce_batch(&z, &cfg(LossVariant::InfoNceCosine)).unwrap_err();
        assert!(matches!(err, Error::ZeroRow { row: 1 }));
    }

    #[test]
    fn covariance_rejects_constant_columns() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![1.0, 7.0], vec![2.0, 7.0], vec![3.0, 7.0]]);
        let err = dispersive_covariance(&z, &cfg(LossVariant::Covariance)).unwrap_err();
        match err {
            Error::DegenerateColumn { view, column, .. } => {
                assert_eq!(view, "z");
                assert_eq!(column, 1);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn contrastive_covariance_names_the_positive_view() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![1.0, 0.0], vec![2.0, 1.0], vec![3.0, -1.0]]);
        let zpos = batch(&tape, &[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]);
        let err = contrastive_covariance(&z, &zpos, &cfg(LossVariant::Covariance)).unwrap_err();
        match err {
            Error::DegenerateColumn { view, column, .. } => {
                assert_eq!(view, "z_pos");
                assert_eq!(column, 1);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn single_row_batch_is_rejected() {
        let tape = Tape::new();
        let v = tape.leaf(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let err = RepBatch::new(v).unwrap_err();
        assert!(matches!(err, Error::BatchTooSmall { rows: 1 }));
    }

    #[test]
    fn infonce_ops_reject_other_variants() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert!(dispersive_infonce_batch(&z, &cfg(LossVariant::Hinge)).is_err());
    }

    #[test]
    fn contrastive_shapes_must_match() {
        let tape = Tape::new();
        let z = batch(&tape, &[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let zpos = batch(&tape, &[vec![0.0; 3], vec![1.0, 0.0, 0.0]]);
        let err = contrastive_infonce(&z, &zpos, &cfg(LossVariant::InfoNceL2)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { op: "contrastive_infonce", .. }));
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        for bad in [
            LossConfig { tau: 0.0, ..LossConfig::default() },
            LossConfig { lambda: -0.1, ..LossConfig::default() },
            LossConfig { epsilon: -1.0, ..LossConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn loss_config_json_round_trip_uses_spec_names() {
        let c = LossConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"infonce_l2\""));
        let back: LossConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back.variant, LossVariant::InfoNceL2);
        let hinge: LossConfig = serde_json::from_str(r#"{"variant":"hinge"}"#).unwrap();
        assert_eq!(hinge.variant, LossVariant::Hinge);
        assert_eq!(hinge.lambda, 0.5);
        assert!(hinge.include_diagonal);
    }
}
