//! Matrix-free linear operators.
//!
//! An operator only needs its shape and the two products `A x` and `Aᵀ y`.
//! Operators are immutable after construction and `Send + Sync`, so a
//! single instance can back several solver states at once.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::rng::NormalStream;

/// Upper bound on `nrows * ncols` accepted by [`materialize`].
pub const MATERIALIZE_LIMIT: usize = 10_000_000;

pub trait LinearOp: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// Writes `A x` into `out`. Lengths are checked by [`LinearOp::apply`];
    /// implementations may assume `x.len() == ncols` and `out.len() == nrows`.
    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    /// Writes `Aᵀ y` into `out`.
    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.nrows()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.nrows(),
                got: y.len(),
            });
        }
        let mut out = vec![0.0; self.ncols()];
        self.apply_transpose_into(y, &mut out);
        Ok(out)
    }
}

impl<T: LinearOp + ?Sized> LinearOp for &T {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn ncols(&self) -> usize {
        (**self).ncols()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply_into(x, out)
    }
    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        (**self).apply_transpose_into(y, out)
    }
}

impl<T: LinearOp + ?Sized> LinearOp for Box<T> {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn ncols(&self) -> usize {
        (**self).ncols()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply_into(x, out)
    }
    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        (**self).apply_transpose_into(y, out)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Identity {
    n: usize,
}

impl Identity {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl LinearOp for Identity {
    fn nrows(&self) -> usize {
        self.n
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Zero {
    rows: usize,
    cols: usize,
}

impl Zero {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }
}

impl LinearOp for Zero {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn apply_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn apply_transpose_into(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Explicit row-major matrix behind the operator interface.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    inner: Matrix,
}

impl DenseMatrix {
    pub fn new(inner: Matrix) -> Result<Self> {
        if inner.rows() == 0 || inner.cols() == 0 {
            return Err(Error::InvalidArgument(
                "dense matrix must have positive dimensions",
            ));
        }
        if inner.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "dense matrix entries must be finite",
            ));
        }
        Ok(Self { inner })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.inner
    }
}

impl LinearOp for DenseMatrix {
    fn nrows(&self) -> usize {
        self.inner.rows()
    }
    fn ncols(&self) -> usize {
        self.inner.cols()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.inner.row(i), x);
        }
    }
    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                crate::linalg::axpy(yi, self.inner.row(i), out);
            }
        }
    }
}

/// Vertical concatenation `[A₁; A₂; …]` of operators sharing `ncols`.
pub struct Stacked<'a> {
    ops: Vec<&'a dyn LinearOp>,
    offsets: Vec<usize>,
}

/// Stacks operators with a common column count.
pub fn stack<'a>(ops: Vec<&'a dyn LinearOp>) -> Result<Stacked<'a>> {
    let first = ops
        .first()
        .ok_or(Error::InvalidArgument("stack needs at least one operator"))?;
    let n = first.ncols();
    let mut offsets = Vec::with_capacity(ops.len() + 1);
    offsets.push(0);
    for op in &ops {
        if op.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: op.ncols(),
            });
        }
        offsets.push(offsets.last().copied().unwrap_or(0) + op.nrows());
    }
    Ok(Stacked { ops, offsets })
}

impl LinearOp for Stacked<'_> {
    fn nrows(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }
    fn ncols(&self) -> usize {
        self.ops[0].ncols()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, op) in self.ops.iter().enumerate() {
            op.apply_into(x, &mut out[self.offsets[i]..self.offsets[i + 1]]);
        }
    }
    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut part = vec![0.0; out.len()];
        for (i, op) in self.ops.iter().enumerate() {
            op.apply_transpose_into(&y[self.offsets[i]..self.offsets[i + 1]], &mut part);
            crate::linalg::axpy(1.0, &part, out);
        }
    }
}

/// Dense copy of an operator, column `j` being `A e_j`. Test oracle only.
pub fn materialize(op: &dyn LinearOp) -> Result<Matrix> {
    let (m, n) = (op.nrows(), op.ncols());
    let entries = m.saturating_mul(n);
    if entries > MATERIALIZE_LIMIT {
        return Err(Error::TooLarge { entries });
    }
    let mut out = Matrix::zeros(m, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        op.apply_into(&e, &mut col);
        e[j] = 0.0;
        for i in 0..m {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

/// Power-iteration estimate of `‖A‖₂` (a lower bound that converges from below).
pub fn norm_estimate(op: &dyn LinearOp, iters: usize, seed: u64) -> f64 {
    let mut rng = NormalStream::new(seed);
    let mut x = vec![0.0; op.ncols()];
    rng.fill(&mut x);
    let mut y = vec![0.0; op.nrows()];
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let nx = norm2(&x);
        if nx == 0.0 {
            return 0.0;
        }
        crate::linalg::scale(1.0 / nx, &mut x);
        op.apply_into(&x, &mut y);
        est = norm2(&y);
        op.apply_transpose_into(&y, &mut x);
    }
    est
}

/// Worst relative adjoint mismatch `|⟨Ax,y⟩ − ⟨x,Aᵀy⟩| / (‖x‖‖y‖‖A‖)` over
/// `trials` random Gaussian pairs.
pub fn adjoint_mismatch(op: &dyn LinearOp, trials: usize, seed: u64) -> f64 {
    let norm = norm_estimate(op, 20, seed ^ 0x9e37_79b9).max(f64::MIN_POSITIVE);
    let mut rng = NormalStream::new(seed);
    let mut worst = 0.0f64;
    let mut x = vec![0.0; op.ncols()];
    let mut y = vec![0.0; op.nrows()];
    let mut ax = vec![0.0; op.nrows()];
    let mut aty = vec![0.0; op.ncols()];
    for _ in 0..trials {
        rng.fill(&mut x);
        rng.fill(&mut y);
        op.apply_into(&x, &mut ax);
        op.apply_transpose_into(&y, &mut aty);
        let gap = (dot(&ax, &y) - dot(&x, &aty)).abs();
        worst = worst.max(gap / (norm2(&x) * norm2(&y) * norm));
    }
    worst
}
