//! Finite-difference validation of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{backward, Tape, Var};
use crate::tensor::Tensor;

/// Default perturbation size for [`grad_check`].
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative-error threshold under which a gradient is considered correct.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: for<'a> Fn(&'a Tape, Var<'a>) -> Result<Var<'a>>,
{
    let tape = Tape::new();
    let vx = tape.leaf(x);
    let out = f(&tape, vx)?;
    let value = out.value();
    if !value.is_scalar() {
        return Err(Error::NonScalarRoot {
            shape: value.shape().to_vec(),
        });
    }
    Ok(value.item())
}

/// Compares the tape gradient of `f` at `x` against central finite
/// differences and returns the worst relative error over all coordinates.
///
/// The relative error of a coordinate is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: for<'a> Fn(&'a Tape, Var<'a>) -> Result<Var<'a>>,
{
    let tape = Tape::new();
    let vx = tape.leaf(x);
    let out = f(&tape, vx)?;
    let grads = backward(out)?;
    let analytic = grads.wrt(vx);

    let mut worst: f64 = 0.0;
    for coordinate in 0..x.numel() {
        let probe = |delta: f64| -> Result<f64> {
            let mut data = x.data().to_vec();
            data[coordinate] += delta;
            let shifted = Tensor::new(x.shape().to_vec(), data)?;
            eval_scalar(&f, &shifted)
        };
        let plus = probe(step).map_err(|e| Error::GradCheckProbe {
            coordinate,
            source: Box::new(e),
        })?;
        let minus = probe(-step).map_err(|e| Error::GradCheckProbe {
            coordinate,
            source: Box::new(e),
        })?;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[coordinate];
        let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}
