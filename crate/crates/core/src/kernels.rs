//! Dense compute kernels with sequential and data-parallel paths.
//!
//! The parallel paths split work over independent output elements only, and
//! every element is accumulated in the same order as the sequential code, so
//! both paths produce bit-identical results.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work threshold (multiply-adds) below which `matmul` stays sequential even
/// when the parallel feature is enabled.
#[cfg(feature = "parallel")]
const PAR_MIN_WORK: usize = 1 << 15;

fn check_matmul_shapes(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok((m, k, n))
}

fn matmul_row(a_row: &[f64], b: &[f64], n: usize, out_row: &mut [f64]) {
    for (l, &a_val) in a_row.iter().enumerate() {
        let b_row = &b[l * n..(l + 1) * n];
        for (o, &b_val) in out_row.iter_mut().zip(b_row) {
            *o += a_val * b_val;
        }
    }
}

pub fn matmul_seq(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = check_matmul_shapes(a, b)?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        matmul_row(&a.data()[i * k..(i + 1) * k], b.data(), n, &mut out[i * n..(i + 1) * n]);
    }
    Tensor::new(vec![m, n], out)
}

#[cfg(feature = "parallel")]
pub fn matmul_par(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = check_matmul_shapes(a, b)?;
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n)
        .zip(a.data().par_chunks(k))
        .for_each(|(out_row, a_row)| matmul_row(a_row, b.data(), n, out_row));
    Tensor::new(vec![m, n], out)
}

/// Matrix product, choosing the parallel path for large problems when the
/// `parallel` feature is enabled.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    #[cfg(feature = "parallel")]
    {
        let (m, k, n) = check_matmul_shapes(a, b)?;
        if m * k * n >= PAR_MIN_WORK {
            return matmul_par(a, b);
        }
    }
    matmul_seq(a, b)
}

pub fn transpose(t: &Tensor) -> Result<Tensor> {
    if t.shape().len() != 2 {
        return Err(Error::InvalidShape {
            op: "transpose",
            shape: t.shape().to_vec(),
            detail: "expected a 2-D tensor".into(),
        });
    }
    let (m, n) = (t.shape()[0], t.shape()[1]);
    let src = t.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Maps `f` over `0..n`, in parallel when enabled. Each index is independent,
/// so the output is identical to the sequential map.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over `0..n` strictly sequentially regardless of features.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Reports whether this build carries the data-parallel paths.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
