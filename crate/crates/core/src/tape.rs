//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as a node in a flat list; a [`Var`] is
//! an index into that list. Every op validates shapes up front and scans its
//! output for non-finite values before the node is admitted, so a failure is
//! reported at the op that produced it rather than surfacing later as a NaN
//! loss.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{numel_of, Tensor};

/// How a flat output index maps into an operand that may be broadcast.
#[derive(Debug, Clone, Copy)]
enum IdxMap {
    /// Operand has the output shape.
    Ident,
    /// Operand is a trailing-suffix of the output shape (covers scalars,
    /// equal shapes, and per-column vectors like a bias row).
    Mod(usize),
    /// Operand is a column vector `[m, 1]` against an `[m, n]` output.
    Row(usize),
}

impl IdxMap {
    #[inline]
    fn apply(self, i: usize) -> usize {
        match self {
            IdxMap::Ident => i,
            IdxMap::Mod(n) => i % n,
            IdxMap::Row(cols) => i / cols,
        }
    }
}

fn binary_layout(
    op: &'static str,
    lhs: &[usize],
    rhs: &[usize],
) -> Result<(Vec<usize>, IdxMap, IdxMap)> {
    if lhs == rhs {
        return Ok((lhs.to_vec(), IdxMap::Ident, IdxMap::Ident));
    }
    if lhs.ends_with(rhs) {
        return Ok((lhs.to_vec(), IdxMap::Ident, IdxMap::Mod(numel_of(rhs))));
    }
    if rhs.ends_with(lhs) {
        return Ok((rhs.to_vec(), IdxMap::Mod(numel_of(lhs)), IdxMap::Ident));
    }
    if lhs.len() == 2 && rhs == [lhs[0], 1] {
        return Ok((lhs.to_vec(), IdxMap::Ident, IdxMap::Row(lhs[1])));
    }
    if rhs.len() == 2 && lhs == [rhs[0], 1] {
        return Ok((rhs.to_vec(), IdxMap::Row(rhs[1]), IdxMap::Ident));
    }
    Err(Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize, IdxMap, IdxMap),
    Sub(usize, usize, IdxMap, IdxMap),
    Mul(usize, usize, IdxMap, IdxMap),
    Div(usize, usize, IdxMap, IdxMap),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Silu(usize),
    MaxScalar(usize, f64),
    AddScalar(usize),
    MulScalar(usize, f64),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    ConcatRows(usize, usize),
    SliceRows(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of a differentiable computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Per-node gradients produced by [`backward`].
#[derive(Debug)]
pub struct Gradients {
    by_id: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zero if `v` did not
    /// influence the root.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match self.by_id.get(v.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.value().shape().to_vec()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Registers a trainable input.
    pub fn leaf(&self, value: &Tensor) -> Var<'_> {
        self.push_unchecked(value.clone(), Op::Leaf, true)
    }

    /// Registers a non-trainable input; gradients do not flow into it.
    pub fn constant(&self, value: &Tensor) -> Var<'_> {
        self.push_unchecked(value.clone(), Op::Leaf, false)
    }

    fn push_unchecked(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(
        &self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var<'_>> {
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name, index });
        }
        Ok(self.push_unchecked(Tensor::new_unchecked(shape, data), op, requires_grad))
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    /// The tape this variable lives on, for registering auxiliary constants.
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Re-enters the current value as a constant, cutting the gradient path.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(&self.value())
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        build: impl Fn(usize, usize, IdxMap, IdxMap) -> Op,
    ) -> Result<Var<'t>> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let a = self.value();
        let b = other.value();
        let (shape, ma, mb) = binary_layout(name, a.shape(), b.shape())?;
        let n = numel_of(&shape);
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<f64> = (0..n).map(|i| f(ad[ma.apply(i)], bd[mb.apply(i)])).collect();
        let req = self.requires_grad() || other.requires_grad();
        self.tape
            .push(name, shape, data, build(self.id, other.id, ma, mb), req)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |a, b| a / b, Op::Div)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let out = kernels::matmul(&a, &b).map_err(|e| match e {
            Error::NonFinite { index, .. } => Error::NonFinite { op: "matmul", index },
            e => e,
        })?;
        let req = self.requires_grad() || other.requires_grad();
        let shape = out.shape().to_vec();
        self.tape
            .push("matmul", shape, out.into_data(), Op::MatMul(self.id, other.id), req)
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let t = kernels::transpose(&self.value())?;
        let shape = t.shape().to_vec();
        let req = self.requires_grad();
        self.tape
            .push("transpose", shape, t.into_data(), Op::Transpose(self.id), req)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let v = self.value();
        if numel_of(&shape) != v.numel() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape,
                detail: format!("source has {} elements", v.numel()),
            });
        }
        let req = self.requires_grad();
        self.tape
            .push("reshape", shape, v.into_data(), Op::Reshape(self.id), req)
    }

    fn unary(
        self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        build: impl Fn(usize) -> Op,
    ) -> Result<Var<'t>> {
        let v = self.value();
        let data: Vec<f64> = v.data().iter().map(|&x| f(x)).collect();
        let req = self.requires_grad();
        self.tape.push(name, v.shape().to_vec(), data, build(self.id), req)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", f64::exp, Op::Exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        let v = self.value();
        if let Some((index, &value)) = v.data().iter().enumerate().find(|(_, &x)| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                index,
                value,
            });
        }
        self.unary("log", f64::ln, Op::Log)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        let v = self.value();
        if let Some((index, &value)) = v.data().iter().enumerate().find(|(_, &x)| x < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                index,
                value,
            });
        }
        self.unary("sqrt", f64::sqrt, Op::Sqrt)
    }

    pub fn silu(self) -> Result<Var<'t>> {
        self.unary("silu", |x| x * sigmoid(x), Op::Silu)
    }

    /// Elementwise `max(x, c)`. Gradient is zero at and below the threshold.
    pub fn max_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary("max_scalar", |x| x.max(c), |id| Op::MaxScalar(id, c))
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", |x| x + c, Op::AddScalar)
    }

    pub fn mul_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary("mul_scalar", |x| x * c, |id| Op::MulScalar(id, c))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let v = self.value();
        let total = v.data().iter().sum();
        let req = self.requires_grad();
        self.tape.push("sum", vec![], vec![total], Op::Sum(self.id), req)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = self.value();
        let n = v.numel() as f64;
        let total: f64 = v.data().iter().sum();
        let req = self.requires_grad();
        self.tape
            .push("mean", vec![], vec![total / n], Op::Mean(self.id), req)
    }

    fn axis_reduce(
        self,
        name: &'static str,
        axis: usize,
        scale: impl Fn(usize, usize) -> f64,
        build: impl Fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape().len() != 2 || axis > 1 {
            return Err(Error::InvalidShape {
                op: name,
                shape: v.shape().to_vec(),
                detail: format!("axis {axis} reduction needs a 2-D tensor and axis in {{0, 1}}"),
            });
        }
        let (m, n) = (v.shape()[0], v.shape()[1]);
        let (out_shape, mut out) = if axis == 0 {
            (vec![n], vec![0.0; n])
        } else {
            (vec![m, 1], vec![0.0; m])
        };
        for i in 0..m {
            for j in 0..n {
                let slot = if axis == 0 { j } else { i };
                out[slot] += v.data()[i * n + j];
            }
        }
        let s = scale(m, n);
        for o in &mut out {
            *o *= s;
        }
        let req = self.requires_grad();
        self.tape.push(name, out_shape, out, build(self.id, axis), req)
    }

    /// Sums a 2-D tensor along `axis`; axis 0 yields shape `[n]`, axis 1
    /// yields a column `[m, 1]`.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.axis_reduce("sum_axis", axis, |_, _| 1.0, Op::SumAxis)
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        self.axis_reduce(
            "mean_axis",
            axis,
            |m, n| if axis == 0 { 1.0 / m as f64 } else { 1.0 / n as f64 },
            Op::MeanAxis,
        )
    }

    pub fn concat_rows(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = a.data().to_vec();
        data.extend_from_slice(b.data());
        let shape = vec![a.rows() + b.rows(), a.cols()];
        let req = self.requires_grad() || other.requires_grad();
        self.tape
            .push("concat_rows", shape, data, Op::ConcatRows(self.id, other.id), req)
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape().len() != 2 || start >= end || end > v.rows() {
            return Err(Error::InvalidShape {
                op: "slice_rows",
                shape: v.shape().to_vec(),
                detail: format!("cannot take rows {start}..{end}"),
            });
        }
        let n = v.cols();
        let data = v.data()[start * n..end * n].to_vec();
        let req = self.requires_grad();
        self.tape
            .push("slice_rows", vec![end - start, n], data, Op::SliceRows(self.id, start), req)
    }
}

fn accum(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

/// Accumulates gradients of a scalar `root` with respect to every node that
/// influences it.
pub fn backward(root: Var<'_>) -> Result<Gradients> {
    let root_value = root.value();
    if !root_value.is_scalar() {
        return Err(Error::NonScalarRoot {
            shape: root_value.shape().to_vec(),
        });
    }
    let nodes = root.tape.nodes.borrow();
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
    grads[root.id] = Some(vec![1.0]);

    for id in (0..=root.id).rev() {
        if !nodes[id].requires_grad {
            continue;
        }
        let g = match &grads[id] {
            Some(g) => g.clone(),
            None => continue,
        };
        let needs = |i: usize| nodes[i].requires_grad;
        let len_of = |i: usize| nodes[i].value.numel();
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b, ma, mb) => {
                if needs(*a) {
                    let ga = accum(&mut grads[*a], len_of(*a));
                    for (i, gi) in g.iter().enumerate() {
                        ga[ma.apply(i)] += gi;
                    }
                }
                if needs(*b) {
                    let gb = accum(&mut grads[*b], len_of(*b));
                    for (i, gi) in g.iter().enumerate() {
                        gb[mb.apply(i)] += gi;
                    }
                }
            }
            Op::Sub(a, b, ma, mb) => {
                if needs(*a) {
                    let ga = accum(&mut grads[*a], len_of(*a));
                    for (i, gi) in g.iter().enumerate() {
                        ga[ma.apply(i)] += gi;
                    }
                }
                if needs(*b) {
                    let gb = accum(&mut grads[*b], len_of(*b));
                    for (i, gi) in g.iter().enumerate() {
                        gb[mb.apply(i)] -= gi;
                    }
                }
            }
            Op::Mul(a, b, ma, mb) => {
                let av = nodes[*a].value.data();
                let bv = nodes[*b].value.data();
                if needs(*a) {
                    let ga = accum(&mut grads[*a], len_of(*a));
                    for (i, gi) in g.iter().enumerate() {
                        ga[ma.apply(i)] += gi * bv[mb.apply(i)];
                    }
                }
                if needs(*b) {
                    let gb = accum(&mut grads[*b], len_of(*b));
                    for (i, gi) in g.iter().enumerate() {
                        gb[mb.apply(i)] += gi * av[ma.apply(i)];
                    }
                }
            }
            Op::Div(a, b, ma, mb) => {
                let av = nodes[*a].value.data();
                let bv = nodes[*b].value.data();
                if needs(*a) {
                    let ga = accum(&mut grads[*a], len_of(*a));
                    for (i, gi) in g.iter().enumerate() {
                        ga[ma.apply(i)] += gi / bv[mb.apply(i)];
                    }
                }
                if needs(*b) {
                    let gb = accum(&mut grads[*b], len_of(*b));
                    for (i, gi) in g.iter().enumerate() {
                        let bij = bv[mb.apply(i)];
                        gb[mb.apply(i)] -= gi * av[ma.apply(i)] / (bij * bij);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let gt = Tensor::new_unchecked(nodes[id].value.shape().to_vec(), g.clone());
                if needs(*a) {
                    let bt = kernels::transpose(&nodes[*b].value)?;
                    let da = kernels::matmul(&gt, &bt)?;
                    let ga = accum(&mut grads[*a], len_of(*a));
                    for (s, d) in ga.iter_mut().zip(da.data()) {
                        *s += d;
                    }
                }
                if needs(*b) {
                    let at = kernels::transpose(&nodes[*a].value)?;
                    let db = kernels::matmul(&at, &gt)?;
                    let gb = accum(&mut grads[*b], len_of(*b));
                    for (s, d) in gb.iter_mut().zip(db.data()) {
                        *s += d;
                    }
                }
            }
            Op::Transpose(a) => {
                let gt = Tensor::new_unchecked(nodes[id].value.shape().to_vec(), g.clone());
                let da = kernels::transpose(&gt)?;
                let ga = accum(&mut grads[*a], len_of(*a));
                for (s, d) in ga.iter_mut().zip(da.data()) {
                    *s += d;
                }
            }
            Op::Reshape(a) => {
                let ga = accum(&mut grads[*a], len_of(*a));
                for (s, d) in ga.iter_mut().zip(&g) {
                    *s += d;
                }
            }
            Op::Exp(a) => {
                let out = nodes[id].value.data();
                let ga = accum(&mut grads[*a], len_of(*a));
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i];
                }
            }
            Op::Log(a) => {
                let x = nodes[*a].value.data();
                let ga = accum(&mut grads[*a], len_of(*a));
                for i in 0..g.len() {
                    ga[i] += g[i] / x[i];
                }
            }
            Op::Sqrt(a) => {
                let out = nodes[id].value.data();
                let ga = accum(&mut grads[*a], len_of(*a));
                for i in 0..g.len() {
                    ga[i] += g[i] * 0.5 / out[i];
                }
            }
            Op::Silu(a) => {
                let x = nodes[*a].value.data();
                let ga = accum(&mut grads[*a], len_of(*a));
                for i in 0..g.len() {
                    let s = sigmoid(x[i]);
                    ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
                }
            }
            Op::MaxScalar(a, c) => {
                let x = nodes[*a].value.data();
                let ga = accum(&mut grads[*a], len_of(*a));
                for i in 0..g.len() {
                    if x[i] > *c {
                        ga[i] += g[i];
                    }
                }
            }
            Op::AddScalar(a) => {
                let ga = accum(&mut grads[*a], len_of(*a));
                for i in 0..g.len() {
                    ga[i] += g[i];
                }
            }
            Op::MulScalar(a, c) => {
                let ga = accum(&mut grads[*a], len_of(*a));
                for i in 0..g.len() {
                    ga[i] += g[i] * c;
                }
            }
            Op::Sum(a) => {
                let ga = accum(&mut grads[*a], len_of(*a));
                for s in ga.iter_mut() {
                    *s += g[0];
                }
            }
            Op::Mean(a) => {
                let n = len_of(*a) as f64;
                let ga = accum(&mut grads[*a], len_of(*a));
                for s in ga.iter_mut() {
                    *s += g[0] / n;
                }
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let shape = nodes[*a].value.shape().to_vec();
                let (m, n) = (shape[0], shape[1]);
                let scale = match &nodes[id].op {
                    Op::MeanAxis(..) if *axis == 0 => 1.0 / m as f64,
                    Op::MeanAxis(..) => 1.0 / n as f64,
                    _ => 1.0,
                };
                let ga = accum(&mut grads[*a], len_of(*a));
                for i in 0..m {
                    for j in 0..n {
                        let slot = if *axis == 0 { j } else { i };
                        ga[i * n + j] += g[slot] * scale;
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let split = len_of(*a);
                if needs(*a) {
                    let ga = accum(&mut grads[*a], split);
                    for (s, d) in ga.iter_mut().zip(&g[..split]) {
                        *s += d;
                    }
                }
                if needs(*b) {
                    let gb = accum(&mut grads[*b], len_of(*b));
                    for (s, d) in gb.iter_mut().zip(&g[split..]) {
                        *s += d;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let n = nodes[*a].value.shape()[1];
                let ga = accum(&mut grads[*a], len_of(*a));
                for (i, gi) in g.iter().enumerate() {
                    ga[start * n + i] += gi;
                }
            }
        }
    }

    let mut by_id = Vec::with_capacity(nodes.len());
    for (id, slot) in grads.into_iter().enumerate() {
        match slot {
            Some(data) => {
                if let Some(index) = data.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        op: "backward",
                        index,
                    });
                }
                by_id.push(Some(Tensor::new_unchecked(
                    nodes[id].value.shape().to_vec(),
                    data,
                )));
            }
            None => by_id.push(None),
        }
    }
    Ok(Gradients { by_id })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chain_rule_through_scalar_ops() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.0).unwrap());
        let y = x.mul_scalar(2.0).unwrap().add_scalar(3.0).unwrap();
        let z = y.mul(y).unwrap();
        let g = backward(z).unwrap();
        assert_relative_eq!(g.wrt(x).item(), 20.0);
    }

    #[test]
    fn bias_broadcast_accumulates_over_rows() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap());
        let b = tape.leaf(&Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let s = x.add(b).unwrap().sum().unwrap();
        let g = backward(s).unwrap();
        assert_eq!(g.wrt(b).data(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.wrt(x).data(), &[1.0; 6]);
    }

    #[test]
    fn column_broadcast_divides_rows() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_rows(&[vec![2.0, 4.0], vec![3.0, 9.0]]).unwrap());
        let d = tape.leaf(&Tensor::new(vec![2, 1], vec![2.0, 3.0]).unwrap());
        let out = x.div(d).unwrap();
        assert_eq!(out.value().data(), &[1.0, 2.0, 1.0, 3.0]);
        let g = backward(out.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0]);
        assert_relative_eq!(g.wrt(d).data()[0], -(2.0 + 4.0) / 4.0);
        assert_relative_eq!(g.wrt(d).data()[1], -(3.0 + 9.0) / 9.0);
    }

    #[test]
    fn matmul_gradients_match_hand_computation() {
        let tape = Tape::new();
        let a = tape.leaf(&Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.leaf(&Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let s = a.matmul(b).unwrap().sum().unwrap();
        let g = backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(g.wrt(b).data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn log_rejects_non_positive_input() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::new(vec![2], vec![1.0, -0.5]).unwrap());
        let err = x.log().unwrap_err();
        assert!(matches!(err, Error::Domain { op: "log", index: 1, .. }));
    }

    #[test]
    fn overflow_is_reported_at_the_op() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1000.0).unwrap());
        let err = x.exp().unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "exp", .. }));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(vec![2, 2]));
        let err = backward(x).unwrap_err();
        assert!(matches!(err, Error::NonScalarRoot { .. }));
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0).unwrap());
        let y = x.detach().mul(x).unwrap();
        let g = backward(y).unwrap();
        assert_relative_eq!(g.wrt(x).item(), 2.0);
    }

    #[test]
    fn unreached_var_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.0).unwrap());
        let y = tape.leaf(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let g = backward(x.mul_scalar(3.0).unwrap()).unwrap();
        assert_eq!(g.wrt(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn concat_and_slice_route_gradients_by_row() {
        let tape = Tape::new();
        let a = tape.leaf(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b = tape.leaf(&Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let cat = a.concat_rows(b).unwrap();
        let tail = cat.slice_rows(1, 3).unwrap();
        let s = tail.mul_scalar(2.0).unwrap().sum().unwrap();
        let g = backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[0.0, 0.0]);
        assert_eq!(g.wrt(b).data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn axis_reductions_have_expected_shapes_and_grads() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap());
        let cols = x.sum_axis(0).unwrap();
        assert_eq!(cols.value().shape(), &[3]);
        assert_eq!(cols.value().data(), &[5.0, 7.0, 9.0]);
        let rows = x.mean_axis(1).unwrap();
        assert_eq!(rows.value().shape(), &[2, 1]);
        assert_eq!(rows.value().data(), &[2.0, 5.0]);
        let g = backward(rows.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0 / 3.0; 6]);
    }

    #[test]
    fn mean_axis_matches_manual_normalization() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_rows(&[vec![2.0, 4.0], vec![6.0, 8.0]]).unwrap());
        let m0 = x.mean_axis(0).unwrap();
        assert_eq!(m0.value().data(), &[4.0, 6.0]);
        let g = backward(m0.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.5; 4]);
    }
}
