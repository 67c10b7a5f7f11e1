//! Compression of a stored solution basis `V^c` (`m` columns) to at most `q`
//! directions. Every strategy returns orthonormal columns inside
//! `span(V^c)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{
    axpy, combine, dot, norm2, orthonormalize, reorthogonalize, scale, svd, Matrix,
};
use crate::projreg::Spectral;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum CompressMethod {
    Tsvd {
        q: usize,
        eps_tol: f64,
    },
    SolutionOriented {
        q: usize,
        eps_tol: f64,
    },
    Sparse {
        q: usize,
        eps_tol: f64,
        mu: Option<f64>,
    },
    Rbd {
        q: usize,
        eps_tol: f64,
    },
}

impl CompressMethod {
    pub fn q(&self) -> usize {
        match *self {
            CompressMethod::Tsvd { q, .. }
            | CompressMethod::SolutionOriented { q, .. }
            | CompressMethod::Sparse { q, .. }
            | CompressMethod::Rbd { q, .. } => q,
        }
    }

    fn eps_tol(&self) -> f64 {
        match *self {
            CompressMethod::Tsvd { eps_tol, .. }
            | CompressMethod::SolutionOriented { eps_tol, .. }
            | CompressMethod::Sparse { eps_tol, .. }
            | CompressMethod::Rbd { eps_tol, .. } => eps_tol,
        }
    }

    /// `1 ≤ q < storage_limit`, `eps_tol ≥ 0`, `mu ≥ 0`.
    pub fn validate(&self, storage_limit: usize) -> Result<()> {
        let q = self.q();
        if q == 0 || q >= storage_limit {
            return Err(Error::InvalidArgument(
                "compression size q must satisfy 1 <= q < storage_limit",
            ));
        }
        if !(self.eps_tol() >= 0.0) {
            return Err(Error::InvalidArgument("eps_tol must be nonnegative"));
        }
        if let CompressMethod::Sparse { mu: Some(mu), .. } = *self {
            if !(mu >= 0.0) {
                return Err(Error::InvalidArgument("mu must be nonnegative"));
            }
        }
        Ok(())
    }
}

fn check_basis(vc: &[Vec<f64>], bhat: &Matrix) -> Result<()> {
    if vc.is_empty() {
        return Err(Error::InvalidArgument("basis to compress is empty"));
    }
    if vc.len() != bhat.cols() {
        return Err(Error::DimensionMismatch {
            expected: bhat.cols(),
            got: vc.len(),
        });
    }
    Ok(())
}

/// Re-orthonormalizes `vc · coeffs[j]` for each coefficient vector.
fn lift_columns(vc: &[Vec<f64>], coeffs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = vc[0].len();
    let cols: Vec<Vec<f64>> = coeffs.iter().map(|c| combine(vc, c, n)).collect();
    orthonormalize(&cols, 1e-10)
}

/// Number of kept directions: `q` unless `σ_q < eps_tol`, in which case the
/// count of `σᵢ ≥ eps_tol` (at least one).
pub fn tsvd_rank(singvals: &[f64], q: usize, eps_tol: f64) -> usize {
    let q = q.min(singvals.len()).max(1);
    if singvals[q - 1] < eps_tol {
        singvals
            .iter()
            .take(q)
            .filter(|&&s| s >= eps_tol)
            .count()
            .max(1)
    } else {
        q
    }
}

/// `W = V^c Φ_{k−1}`: leading right singular vectors of `B̂`.
pub fn compress_tsvd(
    vc: &[Vec<f64>],
    bhat: &Matrix,
    q: usize,
    eps_tol: f64,
) -> Result<Vec<Vec<f64>>> {
    check_basis(vc, bhat)?;
    let s = svd(bhat);
    let keep = tsvd_rank(&s.s, q, eps_tol);
    let coeffs: Vec<Vec<f64>> = (0..keep).map(|j| s.v.col(j)).collect();
    Ok(lift_columns(vc, &coeffs))
}

/// Indices of `I ∩ J` in ascending order, with `I = {i : |yᵢ| > eps_tol}` and
/// `J` the `q` largest `|yᵢ|` (ties to the lower index). Falls back to the
/// single index of the largest `|yᵢ|` when the intersection is empty.
pub fn select_indices(y: &[f64], q: usize, eps_tol: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    // stable sort keeps lower indices first among equal magnitudes
    order.sort_by(|&a, &b| {
        y[b].abs()
            .partial_cmp(&y[a].abs())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut keep: Vec<usize> = order
        .iter()
        .take(q)
        .copied()
        .filter(|&i| y[i].abs() > eps_tol)
        .collect();
    if keep.is_empty() {
        keep.push(order[0]);
    }
    keep.sort_unstable();
    keep
}

/// Keeps the columns of `V^c` indexed by [`select_indices`].
pub fn compress_solution(
    vc: &[Vec<f64>],
    y: &[f64],
    q: usize,
    eps_tol: f64,
) -> Result<Vec<Vec<f64>>> {
    if vc.is_empty() || y.len() != vc.len() {
        return Err(Error::DimensionMismatch {
            expected: vc.len(),
            got: y.len(),
        });
    }
    let cols: Vec<Vec<f64>> = select_indices(y, q, eps_tol)
        .into_iter()
        .map(|i| vc[i].clone())
        .collect();
    Ok(orthonormalize(&cols, 1e-10))
}

/// `0.01 ‖B̂ᵀĉ‖_∞`.
pub fn default_mu(bhat: &Matrix, chat: &[f64]) -> f64 {
    0.01 * bhat
        .tmatvec(chat)
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solution-oriented selection on the minimizer of
/// `‖B̂ y − ĉ‖² + mu ‖y‖₁`. `mu = 0` uses the minimum-norm least-squares
/// solution directly.
pub fn compress_sparse(
    vc: &[Vec<f64>],
    bhat: &Matrix,
    chat: &[f64],
    q: usize,
    eps_tol: f64,
    mu: Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    check_basis(vc, bhat)?;
    let mu = mu.unwrap_or_else(|| default_mu(bhat, chat));
    let y = if mu == 0.0 {
        Spectral::new(bhat, chat)?.solve(0.0)
    } else {
        fista_l1(bhat, chat, mu, FISTA_MAX_ITERS, FISTA_TOL)?.y
    };
    compress_solution(vc, &y, q, eps_tol)
}

pub const FISTA_MAX_ITERS: usize = 500;
pub const FISTA_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct FistaResult {
    pub y: Vec<f64>,
    /// Objective value after each accepted iterate.
    pub objective: Vec<f64>,
    pub restarts: usize,
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// FISTA for `min ‖B̂ y − ĉ‖² + mu ‖y‖₁` with step `1/L`, `L = 2σ₁²`. When
/// the momentum step increases the objective, momentum is reset and a plain
/// proximal-gradient step is taken instead, so the objective trace is
/// nonincreasing.
pub fn fista_l1(
    bhat: &Matrix,
    chat: &[f64],
    mu: f64,
    max_iters: usize,
    tol: f64,
) -> Result<FistaResult> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument("mu must be nonnegative"));
    }
    if chat.len() != bhat.rows() {
        return Err(Error::DimensionMismatch {
            expected: bhat.rows(),
            got: chat.len(),
        });
    }
    let p = bhat.cols();
    let s1 = svd(bhat).s.first().copied().unwrap_or(0.0);
    if s1 == 0.0 {
        return Ok(FistaResult {
            y: vec![0.0; p],
            objective: vec![dot(chat, chat)],
            restarts: 0,
        });
    }
    let lip = 2.0 * s1 * s1;
    let objective = |y: &[f64]| {
        let mut r = bhat.matvec(y);
        axpy(-1.0, chat, &mut r);
        dot(&r, &r) + mu * y.iter().map(|v| v.abs()).sum::<f64>()
    };
    let prox_step = |z: &[f64]| {
        let mut r = bhat.matvec(z);
        axpy(-1.0, chat, &mut r);
        let g = bhat.tmatvec(&r);
        z.iter()
            .zip(&g)
            .map(|(zi, gi)| soft_threshold(zi - 2.0 * gi / lip, mu / lip))
            .collect::<Vec<f64>>()
    };

    let mut y = vec![0.0; p];
    let mut z = y.clone();
    let mut t = 1.0;
    let mut f = objective(&y);
    let mut trace = vec![f];
    let mut restarts = 0;
    for _ in 0..max_iters {
        let mut cand = prox_step(&z);
        let mut fc = objective(&cand);
        let mut t_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * t * t));
        if fc > f {
            restarts += 1;
            t_next = 1.0;
            cand = prox_step(&y);
            fc = objective(&cand);
        }
        let momentum = (t - 1.0) / t_next;
        z = cand
            .iter()
            .zip(&y)
            .map(|(c, o)| c + momentum * (c - o))
            .collect();
        let change = (f - fc).abs();
        y = cand;
        t = t_next;
        let f_old = f;
        f = fc;
        trace.push(f);
        if change <= tol * f_old.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(FistaResult {
        y,
        objective: trace,
        restarts,
    })
}

#[derive(Clone, Debug)]
pub struct RbdResult {
    /// Orthonormal columns of length `m`.
    pub basis: Vec<Vec<f64>>,
    /// `E_i` after each greedy pick.
    pub errors: Vec<f64>,
}

/// Greedy reduced-basis decomposition of `G = B̂ᵀ`: repeatedly add the
/// column of `G` with the largest residual, stopping at the first `i` with
/// `E_i ≤ eps_tol` or at `i = q`.
pub fn rbd(bhat: &Matrix, q: usize, eps_tol: f64) -> Result<RbdResult> {
    let g = bhat.transpose();
    let mut res: Vec<Vec<f64>> = g.columns();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut errors = Vec::new();
    for _ in 0..q.min(g.rows()) {
        let norms: Vec<f64> = res.iter().map(|r| norm2(r)).collect();
        let mut pick = 0;
        for j in 1..norms.len() {
            if norms[j] > norms[pick] {
                pick = j;
            }
        }
        if norms[pick] == 0.0 {
            if basis.is_empty() {
                return Err(Error::InvalidArgument("projected matrix is zero"));
            }
            break;
        }
        let mut s = res[pick].clone();
        reorthogonalize(&mut s, &basis);
        let ns = norm2(&s);
        scale(1.0 / ns, &mut s);
        for r in &mut res {
            let c = dot(&s, r);
            axpy(-c, &s, r);
        }
        basis.push(s);
        let e = res.iter().map(|r| norm2(r)).fold(0.0f64, f64::max);
        errors.push(e);
        if e <= eps_tol {
            break;
        }
    }
    Ok(RbdResult { basis, errors })
}

/// `W = V^c S` with `S` from [`rbd`].
pub fn compress_rbd(
    vc: &[Vec<f64>],
    bhat: &Matrix,
    q: usize,
    eps_tol: f64,
) -> Result<Vec<Vec<f64>>> {
    check_basis(vc, bhat)?;
    let r = rbd(bhat, q, eps_tol)?;
    Ok(lift_columns(vc, &r.basis))
}

/// Dispatches on the strategy. `y` is the current regularized projected
/// solution paired with `vc`.
pub fn compress(
    method: &CompressMethod,
    vc: &[Vec<f64>],
    bhat: &Matrix,
    chat: &[f64],
    y: &[f64],
) -> Result<Vec<Vec<f64>>> {
    match *method {
        CompressMethod::Tsvd { q, eps_tol } => compress_tsvd(vc, bhat, q, eps_tol),
        CompressMethod::SolutionOriented { q, eps_tol } => compress_solution(vc, y, q, eps_tol),
        CompressMethod::Sparse { q, eps_tol, mu } => {
            compress_sparse(vc, bhat, chat, q, eps_tol, mu)
        }
        CompressMethod::Rbd { q, eps_tol } => compress_rbd(vc, bhat, q, eps_tol),
    }
}
