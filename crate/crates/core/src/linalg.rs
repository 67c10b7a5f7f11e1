//! Small dense linear algebra: a row-major [`Matrix`], vector kernels,
//! Gram-Schmidt on column lists, Householder least squares, and a one-sided
//! Jacobi SVD.
//!
//! Length-`N` bases are kept as `Vec<Vec<f64>>` column lists; `Matrix` is for
//! the small projected quantities whose size is bounded by the storage limit.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    // scaled to avoid overflow for huge entries
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = a.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * libm::sqrt(s)
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for v in x {
        *v *= alpha;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `Σ coeffs[j] * cols[j]`; `len` is the vector length (needed when `cols` is empty).
pub fn combine(cols: &[Vec<f64>], coeffs: &[f64], len: usize) -> Vec<f64> {
    debug_assert_eq!(cols.len(), coeffs.len());
    let mut out = vec![0.0; len];
    for (c, &a) in cols.iter().zip(coeffs) {
        axpy(a, c, &mut out);
    }
    out
}

/// `[cols]ᵀ x`
pub fn project(cols: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    cols.iter().map(|c| dot(c, x)).collect()
}

/// Two passes of classical Gram-Schmidt of `v` against orthonormal `cols`.
/// Returns the accumulated coefficients.
pub fn reorthogonalize(v: &mut [f64], cols: &[Vec<f64>]) -> Vec<f64> {
    let mut total = vec![0.0; cols.len()];
    for _ in 0..2 {
        let c = project(cols, v);
        for (q, &a) in cols.iter().zip(&c) {
            axpy(-a, q, v);
        }
        for (t, a) in total.iter_mut().zip(c) {
            *t += a;
        }
    }
    total
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Columns whose
/// residual falls below `drop_tol` times their original norm are discarded.
pub fn orthonormalize(cols: &[Vec<f64>], drop_tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for c in cols {
        let n0 = norm2(c);
        if n0 == 0.0 {
            continue;
        }
        let mut v = c.clone();
        for _ in 0..2 {
            for q in &out {
                let a = dot(q, &v);
                axpy(-a, q, &mut v);
            }
        }
        let n = norm2(&v);
        if n > drop_tol * n0 {
            scale(1.0 / n, &mut v);
            out.push(v);
        }
    }
    out
}

/// Extends orthonormal `cols` (each of length `dim`) to `target` columns by
/// orthogonalizing unit coordinate vectors, always taking the one with the
/// largest remaining component.
pub fn complete_orthonormal(cols: &mut Vec<Vec<f64>>, dim: usize, target: usize) {
    while cols.len() < target.min(dim) {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            reorthogonalize(&mut e, cols);
            let n = norm2(&e);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                best = Some((n, e));
            }
        }
        let (n, mut e) = best.expect("dim > 0");
        scale(1.0 / n, &mut e);
        cols.push(e);
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            if r.len() != ncols {
                return Err(Error::DimensionMismatch {
                    expected: ncols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols: ncols,
            data,
        })
    }

    /// Columns given as vectors of length `rows`.
    pub fn from_columns(rows: usize, cols: &[Vec<f64>]) -> Self {
        let mut m = Self::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            debug_assert_eq!(c.len(), rows);
            for i in 0..rows {
                m[(i, j)] = c[i];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.col(j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ y`
    pub fn tmatvec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "tmatvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            axpy(y[i], self.row(i), &mut out);
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| alpha * a).collect(),
        }
    }

    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Matrix {
        let mut b = Matrix::zeros(nr, nc);
        for i in 0..nr {
            for j in 0..nc {
                b[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Leading `n` columns.
    pub fn leading_columns(&self, n: usize) -> Matrix {
        self.block(0, 0, self.rows, n)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Gram matrix `colsᵀ cols` deviation from the identity, max-abs.
pub fn orthogonality_loss(cols: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..cols.len() {
        for j in i..cols.len() {
            let g = dot(&cols[i], &cols[j]);
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}

/// `Aᵀ B` for two column lists of equal length vectors.
pub fn cross_gram(a: &[Vec<f64>], b: &[Vec<f64>]) -> Matrix {
    let mut g = Matrix::zeros(a.len(), b.len());
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            g[(i, j)] = dot(ai, bj);
        }
    }
    g
}

/// Least-squares solution of a full-column-rank tall system via Householder QR.
pub fn lstsq(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (a.rows(), a.cols());
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: b.len(),
        });
    }
    if m < n {
        return Err(Error::InvalidArgument("lstsq needs rows >= cols"));
    }
    let mut r = a.clone();
    let mut rhs = b.to_vec();
    for k in 0..n {
        let x: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        let alpha = norm2(&x);
        if alpha == 0.0 {
            continue;
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x;
        v[0] += sign * alpha;
        let vn = norm2(&v);
        scale(1.0 / vn, &mut v);
        for j in k..n {
            let s: f64 = (k..m).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..m {
                r[(i, j)] -= 2.0 * s * v[i - k];
            }
        }
        let s: f64 = (k..m).map(|i| v[i - k] * rhs[i]).sum();
        for i in k..m {
            rhs[i] -= 2.0 * s * v[i - k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= r[(i, j)] * x[j];
        }
        let d = r[(i, i)];
        if d == 0.0 {
            return Err(Error::RankDeficient { index: i, value: d });
        }
        x[i] = s / d;
    }
    Ok(x)
}

/// Full singular value decomposition `A = U Σ Vᵀ` with `U` square of order
/// `rows`, `V` square of order `cols`, and singular values sorted descending.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    /// Rebuilds `U Σ Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let (r, c) = (self.u.rows(), self.v.rows());
        let mut us = Matrix::zeros(r, c);
        for i in 0..r {
            for j in 0..self.s.len() {
                us[(i, j)] = self.u[(i, j)] * self.s[j];
            }
        }
        us.matmul(&self.v.transpose())
    }
}

/// One-sided Jacobi SVD. Accurate to high relative precision in the singular
/// values; intended for the small projected matrices only.
pub fn svd(a: &Matrix) -> Svd {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (r, c) = (a.rows(), a.cols());
    let mut work = a.columns();
    let mut vcols: Vec<Vec<f64>> = (0..c)
        .map(|j| {
            let mut e = vec![0.0; c];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON;
    for _sweep in 0..100 {
        let mut rotated = false;
        for i in 0..c {
            for j in i + 1..c {
                let alpha = dot(&work[i], &work[i]);
                let beta = dot(&work[j], &work[j]);
                let gamma = dot(&work[i], &work[j]);
                if gamma == 0.0 || gamma.abs() <= tol * libm::sqrt(alpha) * libm::sqrt(beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let sgn = if zeta >= 0.0 { 1.0 } else { -1.0 };
                let t = sgn / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let cs = 1.0 / libm::sqrt(1.0 + t * t);
                let sn = cs * t;
                rotate(&mut work, i, j, cs, sn);
                rotate(&mut vcols, i, j, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..c).collect();
    let norms: Vec<f64> = work.iter().map(|w| norm2(w)).collect();
    order.sort_by(|&x, &y| {
        norms[y]
            .partial_cmp(&norms[x])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let smax = order.first().map_or(0.0, |&i| norms[i]);
    let cutoff = smax * f64::EPSILON * r.max(1) as f64;
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut s = Vec::with_capacity(c);
    let mut v = Matrix::zeros(c, c);
    for (k, &j) in order.iter().enumerate() {
        s.push(norms[j]);
        for i in 0..c {
            v[(i, k)] = vcols[j][i];
        }
        if norms[j] > cutoff && norms[j] > 0.0 {
            let mut u = work[j].clone();
            scale(1.0 / norms[j], &mut u);
            ucols.push(u);
        }
    }
    complete_orthonormal(&mut ucols, r, r);
    Svd {
        u: Matrix::from_columns(r, &ucols),
        s,
        v,
    }
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, cs: f64, sn: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    let (a, b) = (&mut lo[i], &mut hi[0]);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xi, yi) = (*x, *y);
        *x = cs * xi - sn * yi;
        *y = sn * xi + cs * yi;
    }
}

pub fn singular_values(a: &Matrix) -> Vec<f64> {
    svd(a).s
}

/// Largest principal angle between `span(small)` and `span(big)` (both
/// orthonormal column lists), computed from the sine so that angles near
/// zero are resolved to working precision. Zero means containment.
pub fn max_principal_angle(small: &[Vec<f64>], big: &[Vec<f64>]) -> f64 {
    if small.is_empty() {
        return 0.0;
    }
    let n = small[0].len();
    let resid: Vec<Vec<f64>> = small
        .iter()
        .map(|s| {
            let mut r = s.clone();
            reorthogonalize(&mut r, big);
            r
        })
        .collect();
    let m = Matrix::from_columns(n, &resid);
    let smax = singular_values(&m).first().copied().unwrap_or(0.0);
    libm::asin(smax.min(1.0))
}
