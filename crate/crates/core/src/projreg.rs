//! Tikhonov solves of the small projected problem and automatic choice of
//! the regularization parameter.
//!
//! With `B̂ = P Σ Qᵀ`, `dᵢ = pᵢᵀ ĉ` and filter factors
//! `φᵢ = σᵢ² / (σᵢ² + λ²)`, every functional below is evaluated in
//! `O(p)` from the cached SVD. Minimization uses a 200-point logarithmic
//! grid on `[1e-10 σ₁, σ₁]` followed by golden-section refinement around
//! the best grid point.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{norm2, sub, svd, Matrix};

pub const GRID_POINTS: usize = 200;
pub const GRID_DECADES: f64 = 10.0;
pub const DEFAULT_TAU: f64 = 1.01;

/// Full SVD of a projected matrix.
#[derive(Clone, Debug)]
pub struct SmallSvd {
    pub left: Matrix,
    pub singvals: Vec<f64>,
    pub right: Matrix,
}

impl SmallSvd {
    pub fn new(bhat: &Matrix) -> Self {
        let s = svd(bhat);
        Self {
            left: s.u,
            singvals: s.s,
            right: s.v,
        }
    }
}

/// Cached spectral data of one projected problem.
#[derive(Clone, Debug)]
pub struct Spectral {
    svd: SmallSvd,
    /// `Pᵀ ĉ`
    d: Vec<f64>,
    /// Number of singular values treated as nonzero.
    rank: usize,
    /// Part of `‖ĉ‖²` no `λ` can reach.
    tail: f64,
    rows: usize,
}

impl Spectral {
    pub fn new(bhat: &Matrix, chat: &[f64]) -> Result<Self> {
        if chat.len() != bhat.rows() {
            return Err(Error::DimensionMismatch {
                expected: bhat.rows(),
                got: chat.len(),
            });
        }
        let svd = SmallSvd::new(bhat);
        let d = svd.left.tmatvec(chat);
        let smax = svd.singvals.first().copied().unwrap_or(0.0);
        let cutoff = smax * f64::EPSILON * bhat.rows().max(bhat.cols()) as f64;
        let rank = svd
            .singvals
            .iter()
            .take_while(|&&s| s > cutoff && s > 0.0)
            .count();
        let tail = d[rank..].iter().map(|x| x * x).sum();
        Ok(Self {
            svd,
            d,
            rank,
            tail,
            rows: bhat.rows(),
        })
    }

    pub fn svd(&self) -> &SmallSvd {
        &self.svd
    }

    pub fn sigma_max(&self) -> f64 {
        self.svd.singvals.first().copied().unwrap_or(0.0)
    }

    pub fn solve(&self, lambda: f64) -> Vec<f64> {
        let l2 = lambda * lambda;
        let mut coef = vec![0.0; self.svd.right.rows()];
        for i in 0..self.rank {
            let s = self.svd.singvals[i];
            coef[i] = s / (s * s + l2) * self.d[i];
        }
        self.svd.right.matvec(&coef)
    }

    pub fn residual_sq(&self, lambda: f64) -> f64 {
        let l2 = lambda * lambda;
        let mut r = self.tail;
        for i in 0..self.rank {
            let s2 = self.svd.singvals[i] * self.svd.singvals[i];
            let f = l2 / (s2 + l2) * self.d[i];
            r += f * f;
        }
        r
    }

    pub fn residual(&self, lambda: f64) -> f64 {
        libm::sqrt(self.residual_sq(lambda))
    }

    /// `Σ φᵢ`, the trace of the projected influence matrix.
    pub fn filter_trace(&self, lambda: f64) -> f64 {
        let l2 = lambda * lambda;
        (0..self.rank)
            .map(|i| {
                let s2 = self.svd.singvals[i] * self.svd.singvals[i];
                s2 / (s2 + l2)
            })
            .sum()
    }

    pub fn gcv(&self, lambda: f64) -> f64 {
        self.wgcv(lambda, 1.0)
    }

    pub fn wgcv(&self, lambda: f64, omega: f64) -> f64 {
        let n = self.rows as f64;
        let den = n - omega * self.filter_trace(lambda);
        n * self.residual_sq(lambda) / (den * den)
    }

    pub fn upre(&self, lambda: f64, noise_variance: f64) -> f64 {
        let n = self.rows as f64;
        self.residual_sq(lambda) / n + 2.0 * noise_variance * self.filter_trace(lambda) / n
            - noise_variance
    }

    /// Weight that makes the weighted GCV function stationary at `lambda`:
    /// `ω = n ρ' / (ρ' T − 2 ρ T')` with `ρ = ‖r‖²`, `T = Σ φᵢ`.
    /// Falls back to 1 when the expression is degenerate.
    pub fn stationary_omega(&self, lambda: f64) -> f64 {
        let l2 = lambda * lambda;
        let mut drho = 0.0;
        let mut dt = 0.0;
        for i in 0..self.rank {
            let s2 = self.svd.singvals[i] * self.svd.singvals[i];
            let q = s2 + l2;
            drho += 4.0 * lambda * l2 * s2 / (q * q * q) * self.d[i] * self.d[i];
            dt -= 2.0 * lambda * s2 / (q * q);
        }
        let rho = self.residual_sq(lambda);
        let t = self.filter_trace(lambda);
        let den = drho * t - 2.0 * rho * dt;
        let omega = self.rows as f64 * drho / den;
        if den > 0.0 && omega.is_finite() {
            omega
        } else {
            1.0
        }
    }

    /// Logarithmic λ grid on `[1e-10 σ₁, σ₁]`.
    pub fn grid(&self) -> Vec<f64> {
        let s1 = self.sigma_max();
        (0..GRID_POINTS)
            .map(|i| {
                let e = -GRID_DECADES + GRID_DECADES * i as f64 / (GRID_POINTS - 1) as f64;
                s1 * libm::pow(10.0, e)
            })
            .collect()
    }

    /// Grid search then golden section on `log λ` between the neighbors of
    /// the best grid point.
    pub fn minimize(&self, f: &mut dyn FnMut(f64) -> f64) -> f64 {
        let grid = self.grid();
        let vals: Vec<f64> = grid.iter().map(|&l| f(l)).collect();
        let mut best = 0;
        for i in 1..vals.len() {
            if vals[i] < vals[best] {
                best = i;
            }
        }
        let lo = libm::log(grid[best.saturating_sub(1)]);
        let hi = libm::log(grid[(best + 1).min(grid.len() - 1)]);
        let (t, ft) = golden_section(lo, hi, |t| f(libm::exp(t)));
        if ft < vals[best] {
            libm::exp(t)
        } else {
            grid[best]
        }
    }

    /// Smallest λ with `‖r(λ)‖ ≥ target` by bisection (the residual is
    /// nondecreasing in λ). Returns `(λ, feasible)`; λ = 0 when even the
    /// unregularized residual exceeds the target.
    pub fn discrepancy(&self, target: f64) -> (f64, bool) {
        if self.residual(0.0) >= target {
            return (0.0, true);
        }
        let s1 = self.sigma_max();
        let mut hi = s1;
        while self.residual(hi) < target {
            if hi > 1e8 * s1 {
                return (hi, false);
            }
            hi *= 10.0;
        }
        let mut lo = s1 * 1e-14;
        if self.residual(lo) >= target {
            hi = lo;
            lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if self.residual(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return (hi, true);
        }
        for _ in 0..200 {
            let mid = libm::sqrt(lo * hi);
            if self.residual(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo - 1.0 < 1e-14 {
                break;
            }
        }
        (hi, true)
    }
}

fn golden_section(mut a: f64, mut b: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let g = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-10 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// `y = Σ σᵢ/(σᵢ²+λ²) (pᵢᵀĉ) qᵢ` and `‖B̂ y − ĉ‖`.
pub fn tikhonov_projected(bhat: &Matrix, chat: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("lambda must be nonnegative"));
    }
    let sp = Spectral::new(bhat, chat)?;
    let y = sp.solve(lambda);
    let r = norm2(&sub(&bhat.matvec(&y), chat));
    Ok((y, r))
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Omega {
    Fixed(f64),
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum RegMethod {
    /// Minimizes the true error; needs `x_true` and a lift in the context.
    Optimal,
    Gcv,
    Wgcv {
        omega: Omega,
    },
    Upre {
        noise_variance: f64,
    },
    Dp {
        noise_norm: f64,
        tau: f64,
    },
}

impl RegMethod {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RegMethod::Wgcv {
                omega: Omega::Fixed(w),
            } => w > 0.0 && w.is_finite(),
            RegMethod::Upre { noise_variance } => {
                noise_variance > 0.0 && noise_variance.is_finite()
            }
            RegMethod::Dp { noise_norm, tau } => {
                noise_norm > 0.0 && noise_norm.is_finite() && tau > 0.0
            }
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "regularization parameters must be positive",
            ))
        }
    }
}

/// Maps projected coefficients to the full-space solution.
pub type LiftFn<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

/// Information beyond the projected problem that some rules need.
#[derive(Clone, Copy, Default)]
pub struct SelectContext<'a> {
    pub lift: Option<LiftFn<'a>>,
    pub x_true: Option<&'a [f64]>,
    pub noise_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub lambda: f64,
    pub y: Vec<f64>,
    pub resnorm: f64,
    /// Discrepancy target not reachable on `[0, 1e8 σ₁]`.
    pub infeasible: bool,
    /// Weight used by weighted GCV, if applicable.
    pub omega: Option<f64>,
}

/// Stateful λ selection across the iterations of one solve.
///
/// Weighted GCV with automatic ω uses the mean of the per-iteration weights
/// so far. Each weight makes the WGCV function stationary at a surrogate λ:
/// the discrepancy-principle λ when the noise norm is known, otherwise the
/// optimal λ when the true solution is known, otherwise ω = 1. Weights are
/// capped at 1.
#[derive(Clone, Debug)]
pub struct LambdaSelector {
    pub method: RegMethod,
    omegas: Vec<f64>,
}

fn optimal_lambda(sp: &Spectral, ctx: &SelectContext) -> Option<f64> {
    let (lift, xt) = (ctx.lift?, ctx.x_true?);
    Some(sp.minimize(&mut |l| norm2(&sub(&lift(&sp.solve(l)), xt))))
}

impl LambdaSelector {
    pub fn new(method: RegMethod) -> Self {
        Self {
            method,
            omegas: Vec::new(),
        }
    }

    pub fn omega_history(&self) -> &[f64] {
        &self.omegas
    }

    pub fn select(
        &mut self,
        bhat: &Matrix,
        chat: &[f64],
        ctx: &SelectContext,
    ) -> Result<Selection> {
        let sp = Spectral::new(bhat, chat)?;
        self.select_spectral(&sp, ctx)
    }

    pub fn select_spectral(&mut self, sp: &Spectral, ctx: &SelectContext) -> Result<Selection> {
        if !(sp.sigma_max() > 0.0) {
            return Err(Error::InvalidArgument("projected matrix is zero"));
        }
        let mut infeasible = false;
        let mut omega = None;
        let lambda = match self.method {
            RegMethod::Optimal => optimal_lambda(sp, ctx).ok_or(Error::InvalidArgument(
                "optimal rule needs x_true and a lift",
            ))?,
            RegMethod::Gcv => sp.minimize(&mut |l| sp.gcv(l)),
            RegMethod::Wgcv { omega: w } => {
                let w = match w {
                    Omega::Fixed(w) => w,
                    Omega::Auto => {
                        let surrogate = ctx
                            .noise_norm
                            .filter(|&nn| nn > 0.0)
                            .map(|nn| sp.discrepancy(DEFAULT_TAU * nn).0)
                            .or_else(|| optimal_lambda(sp, ctx));
                        let current = surrogate.map_or(1.0, |l| sp.stationary_omega(l).min(1.0));
                        self.omegas.push(current);
                        self.omegas.iter().sum::<f64>() / self.omegas.len() as f64
                    }
                };
                omega = Some(w);
                sp.minimize(&mut |l| sp.wgcv(l, w))
            }
            RegMethod::Upre { noise_variance } => sp.minimize(&mut |l| sp.upre(l, noise_variance)),
            RegMethod::Dp { noise_norm, tau } => {
                let (l, ok) = sp.discrepancy(tau * noise_norm);
                infeasible = !ok;
                l
            }
        };
        let y = sp.solve(lambda);
        Ok(Selection {
            lambda,
            resnorm: sp.residual(lambda),
            y,
            infeasible,
            omega,
        })
    }
}

/// One-shot selection (no ω history).
pub fn select_lambda(
    bhat: &Matrix,
    chat: &[f64],
    method: RegMethod,
    ctx: &SelectContext,
) -> Result<Selection> {
    LambdaSelector::new(method).select(bhat, chat, ctx)
}
