//! Numerical checks for one compress-then-recycle cycle.
//!
//! A reference run of `m + ℓ` standard bidiagonalization steps is compared
//! with a recycling run started from `W_k`, a compression of the first `m`
//! right vectors. The orthogonal transforms `T = [T1 T2 Tc]` and
//! `Z = [Z1 Z2 Zc]` map one set of bases onto the other, which makes the
//! block structure of `Tᵀ B_{m+ℓ} Z`, the residual bound for the compressed
//! regularized solution, and a few singular value inequalities directly
//! checkable.
//!
//! [`verify`] bundles everything into a [`VerificationReport`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gkb::{gkb_init, GkbState};
use crate::linalg::{
    combine, cross_gram, max_principal_angle, norm2, orthogonality_loss, reorthogonalize, scale,
    singular_values, sub, svd, Matrix,
};
use crate::linops::LinearOp;
use crate::projreg::{select_lambda, tikhonov_projected, RegMethod, SelectContext};
use crate::recycle::{build_wk, recycle_init, RecycleState};
use crate::rng::NormalStream;

pub const CONTAINMENT_TOL: f64 = 1e-6;
pub const ORTHOGONALITY_TOL: f64 = 1e-8;
/// Relative to `‖B_{m+ℓ}‖_F`.
pub const BLOCK_TOL: f64 = 1e-8;
pub const BOUND_SLACK: f64 = 1e-10;
pub const EQUALITY_TOL: f64 = 1e-8;
pub const INEQUALITY_SLACK: f64 = 1e-10;
pub const GAP_RATIO_LIMIT: f64 = 0.1;
pub const SIGMA1_SLACK: f64 = 0.1;

/// `steps` complete reorthogonalized steps plus one further `v`, so that
/// `α_{steps+1}` is available.
pub fn reference_gkb(a: &dyn LinearOp, b: &[f64], steps: usize) -> Result<GkbState> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "reference run needs at least one step",
        ));
    }
    let mut st = gkb_init(a, b)?;
    while st.complete_steps() < steps {
        st.extend_u(a, true)?;
        st.extend_v(a, true)?;
    }
    Ok(st)
}

/// `W_k = V_m [Φ_{k−1}, ξ]`: the `k − 1` dominant right singular directions
/// of `B_m` plus the deflated Tikhonov solution on `B_m`. Without an explicit
/// `x1_lambda` the parameter is chosen by GCV. Returns the basis and the
/// parameter used.
pub fn tsvd_basis(
    full: &GkbState,
    m: usize,
    k: usize,
    x1_lambda: Option<f64>,
) -> Result<(Vec<Vec<f64>>, f64)> {
    if k == 0 || k > m {
        return Err(Error::InvalidArgument("need 1 <= k <= m"));
    }
    if full.complete_steps() < m {
        return Err(Error::InvalidArgument("reference run shorter than m"));
    }
    let bm = full.projected(m);
    let rhs = full.rhs(m);
    let s = svd(&bm);
    let n = full.v[0].len();
    let w_prev: Vec<Vec<f64>> = (0..k - 1)
        .map(|j| combine(&full.v[..m], &s.v.col(j), n))
        .collect();
    let lambda = match x1_lambda {
        Some(l) => l,
        None => select_lambda(&bm, &rhs, RegMethod::Gcv, &SelectContext::default())?.lambda,
    };
    let (y1, _) = tikhonov_projected(&bm, &rhs, lambda)?;
    let x1 = full.lift(&y1);
    let w = build_wk(&w_prev, &x1)?;
    if w.len() != k {
        return Err(Error::InvalidArgument(
            "regularized solution lies in the truncated span",
        ));
    }
    Ok((w, lambda))
}

/// Recycling run from `w` extended to `ℓ` complete steps plus `ṽ_{ℓ+1}`.
pub fn run_recycling(
    a: &dyn LinearOp,
    b: &[f64],
    w: &[Vec<f64>],
    ell: usize,
) -> Result<RecycleState> {
    let mut rec = recycle_init(a, b, w, true)?;
    while rec.vt.len() < ell + 1 {
        rec.extend_u(a, true)?;
        rec.extend_v(a, true)?;
    }
    Ok(rec)
}

/// Reference run, recycled basis, and the compressed projected problem.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub full: GkbState,
    pub rec: RecycleState,
    pub m: usize,
    pub k: usize,
    pub ell: usize,
    /// Singular values of `B_m`, descending.
    pub sigma_m: Vec<f64>,
    pub bhat: Matrix,
    pub chat: Vec<f64>,
}

impl Pipeline {
    /// TSVD compression after `m` steps, then `ℓ` recycling steps.
    pub fn tsvd(
        a: &dyn LinearOp,
        b: &[f64],
        m: usize,
        k: usize,
        ell: usize,
        x1_lambda: Option<f64>,
    ) -> Result<Self> {
        let full = reference_gkb(a, b, m + ell)?;
        let (w, _) = tsvd_basis(&full, m, k, x1_lambda)?;
        Self::from_basis(a, b, full, w, m, ell)
    }

    /// `W = V_m` itself (`k = m`).
    pub fn identity(a: &dyn LinearOp, b: &[f64], m: usize, ell: usize) -> Result<Self> {
        let full = reference_gkb(a, b, m + ell)?;
        let w = full.v[..m].to_vec();
        Self::from_basis(a, b, full, w, m, ell)
    }

    /// Recycling from an arbitrary orthonormal `w` inside `range(V_m)`.
    pub fn from_basis(
        a: &dyn LinearOp,
        b: &[f64],
        full: GkbState,
        w: Vec<Vec<f64>>,
        m: usize,
        ell: usize,
    ) -> Result<Self> {
        let k = w.len();
        if k == 0 || k > m {
            return Err(Error::InvalidArgument("need 1 <= k <= m"));
        }
        if full.complete_steps() < m + ell || full.v.len() < m + ell + 1 {
            return Err(Error::InvalidArgument("reference run shorter than m + ell"));
        }
        let rec = run_recycling(a, b, &w, ell)?;
        let (bhat, chat) = projected_problem(&rec, ell);
        let sigma_m = singular_values(&full.projected(m));
        Ok(Self {
            full,
            rec,
            m,
            k,
            ell,
            sigma_m,
            bhat,
            chat,
        })
    }

    /// `B_{m+ℓ}`.
    pub fn b_full(&self) -> Matrix {
        self.full.projected(self.m + self.ell)
    }

    pub fn sigma_k(&self) -> f64 {
        self.sigma_m[self.k - 1]
    }

    pub fn r_kk(&self) -> f64 {
        self.rec.r[(self.k - 1, self.k - 1)].abs()
    }

    /// `α_{m+1}` of the reference run.
    pub fn alpha_next(&self) -> f64 {
        self.full.bidiag.alphas[self.m]
    }

    /// `α̃_{ℓ+1}` of the recycling run.
    pub fn alpha_tilde_next(&self) -> f64 {
        self.rec.bidiag.alphas[self.ell]
    }

    /// Trailing `ℓ × ℓ` block `B̄_ℓ` of `B_{m+ℓ}`.
    pub fn bbar(&self) -> Matrix {
        self.b_full().block(self.m + 1, self.m, self.ell, self.ell)
    }

    /// `[α_{m+1} e₁ᵀ; B̄_ℓ]`.
    pub fn bbarbar(&self) -> Matrix {
        self.b_full().block(self.m, self.m, self.ell + 1, self.ell)
    }

    /// `B̃_ℓ`, the bidiagonal block of `B̂`.
    pub fn btilde(&self) -> Matrix {
        self.bhat.block(self.k, self.k, self.ell + 1, self.ell)
    }

    /// `Yᵀ A Ṽ_ℓ` as stored in `B̂`.
    pub fn c_block(&self) -> Matrix {
        self.bhat.block(0, self.k, self.k, self.ell)
    }

    /// Perturbs the leading entry of `B̂` by 10% of `‖B̂‖_F`. Used to confirm
    /// that the checks detect a corrupted projected matrix.
    pub fn inject_fault(&mut self) {
        let delta = 0.1 * self.bhat.frobenius();
        self.bhat[(0, 0)] += delta;
    }
}

/// `B̂ = [[R, C], [0, B̃_ℓ]]`, `ĉ = [ζ + R e_k; β̃₁ e₁]`, valid also for `ℓ = 0`.
fn projected_problem(rec: &RecycleState, ell: usize) -> (Matrix, Vec<f64>) {
    let k = rec.k();
    let mut bhat = Matrix::zeros(k + ell + 1, k + ell);
    bhat.set_block(0, 0, &rec.r);
    bhat.set_block(0, k, &rec.c_matrix(ell));
    bhat.set_block(k, k, &rec.bidiag.leading(ell + 1, ell));
    let mut chat = vec![0.0; k + ell + 1];
    for i in 0..k {
        chat[i] = rec.zeta[i] + rec.r[(i, k - 1)];
    }
    chat[k] = rec.beta1t;
    (bhat, chat)
}

/// Orthogonal transforms relating the reference and recycled bases.
#[derive(Clone, Debug)]
pub struct TransformPair {
    pub t1: Matrix,
    pub t2: Matrix,
    pub tc: Matrix,
    pub z1: Matrix,
    pub z2: Matrix,
    pub zc: Matrix,
    /// Largest of `‖Y − U T1‖_F`, `‖Ũ − U T2‖_F`, `‖W − V Z1‖_F`, `‖Ṽ − V Z2‖_F`.
    pub containment_residual: f64,
}

impl TransformPair {
    /// `[T1 T2 Tc]`.
    pub fn t(&self) -> Matrix {
        hcat(&[&self.t1, &self.t2, &self.tc])
    }

    /// `[Z1 Z2 Zc]`.
    pub fn z(&self) -> Matrix {
        hcat(&[&self.z1, &self.z2, &self.zc])
    }

    /// Max-abs deviation of `TᵀT` and `ZᵀZ` from the identity.
    pub fn orthogonality_loss(&self) -> f64 {
        orthogonality_loss(&self.t().columns()).max(orthogonality_loss(&self.z().columns()))
    }

    /// `max |Tcᵀ [T1 T2]|` and `max |Zcᵀ [Z1 Z2]|`.
    pub fn complement_leakage(&self) -> f64 {
        let t12 = hcat(&[&self.t1, &self.t2]);
        let z12 = hcat(&[&self.z1, &self.z2]);
        let a = self.tc.transpose().matmul(&t12).max_abs();
        let b = self.zc.transpose().matmul(&z12).max_abs();
        a.max(b)
    }
}

fn hcat(parts: &[&Matrix]) -> Matrix {
    let rows = parts[0].rows();
    let cols: Vec<Vec<f64>> = parts.iter().flat_map(|p| p.columns()).collect();
    Matrix::from_columns(rows, &cols)
}

fn reconstruction_error(target: &[Vec<f64>], basis: &[Vec<f64>], coeffs: &Matrix) -> f64 {
    let mut sq = 0.0;
    for (j, t) in target.iter().enumerate() {
        let approx = combine(basis, &coeffs.col(j), t.len());
        let d = norm2(&sub(t, &approx));
        sq += d * d;
    }
    libm::sqrt(sq)
}

/// Random orthonormal completion of `basis` to `dim` columns.
fn complement(basis: &[Vec<f64>], dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let target = dim.saturating_sub(basis.len());
    let mut rng = NormalStream::new(seed);
    let mut all = basis.to_vec();
    let mut out = Vec::with_capacity(target);
    let mut attempts = 0;
    while out.len() < target && attempts < 4 * dim + 16 {
        attempts += 1;
        let mut g = vec![0.0; dim];
        rng.fill(&mut g);
        let n0 = norm2(&g);
        reorthogonalize(&mut g, &all);
        let n = norm2(&g);
        if n > 1e-8 * n0 {
            scale(1.0 / n, &mut g);
            all.push(g.clone());
            out.push(g);
        }
    }
    out
}

/// `T1 = Uᵀ Y`, `T2 = Uᵀ Ũ_{ℓ+1}`, `Z1 = Vᵀ W`, `Z2 = Vᵀ Ṽ_ℓ` with
/// `U = U_{m+ℓ+1}`, `V = V_{m+ℓ}`, and seeded random completions.
pub fn build_transforms(pipe: &Pipeline, seed: u64) -> Result<TransformPair> {
    let (m, k, ell) = (pipe.m, pipe.k, pipe.ell);
    let u = &pipe.full.u[..m + ell + 1];
    let v = &pipe.full.v[..m + ell];
    let rec = &pipe.rec;
    let ut = &rec.ut[..ell + 1];
    let vt = &rec.vt[..ell];
    let t1 = cross_gram(u, &rec.y);
    let t2 = cross_gram(u, ut);
    let z1 = cross_gram(v, &rec.w);
    let z2 = cross_gram(v, vt);
    let containment_residual = reconstruction_error(&rec.y, u, &t1)
        .max(reconstruction_error(ut, u, &t2))
        .max(reconstruction_error(&rec.w, v, &z1))
        .max(reconstruction_error(vt, v, &z2));
    if !(containment_residual <= CONTAINMENT_TOL) {
        return Err(Error::ContainmentViolated {
            residual: containment_residual,
        });
    }
    let t12: Vec<Vec<f64>> = t1.columns().into_iter().chain(t2.columns()).collect();
    let z12: Vec<Vec<f64>> = z1.columns().into_iter().chain(z2.columns()).collect();
    let tc = complement(&t12, m + ell + 1, seed);
    let zc = complement(&z12, m + ell, seed.wrapping_add(1));
    if tc.len() != m - k || zc.len() != m - k {
        return Err(Error::InvalidArgument("orthogonal completion failed"));
    }
    Ok(TransformPair {
        t1,
        t2,
        tc: Matrix::from_columns(m + ell + 1, &tc),
        z1,
        z2,
        zc: Matrix::from_columns(m + ell, &zc),
        containment_residual,
    })
}

/// Frobenius norms of the six blocks of `Tᵀ B_{m+ℓ} Z` that should vanish
/// once the known parts of `B̂` are subtracted.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct BlockResiduals {
    /// `‖T1ᵀ B Z1 − R‖`
    pub r: f64,
    /// `‖T1ᵀ B Z2 − C‖`
    pub c: f64,
    /// `‖T2ᵀ B Z1‖`
    pub t2_z1: f64,
    /// `‖T2ᵀ B Z2 − B̃‖`
    pub btilde: f64,
    /// `‖Tcᵀ B Z1‖`
    pub tc_z1: f64,
    /// `‖Tcᵀ B Z2‖`
    pub tc_z2: f64,
    /// `‖B_{m+ℓ}‖_F`
    pub scale: f64,
}

impl BlockResiduals {
    pub fn max(&self) -> f64 {
        [
            self.r,
            self.c,
            self.t2_z1,
            self.btilde,
            self.tc_z1,
            self.tc_z2,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn relative_max(&self) -> f64 {
        self.max() / self.scale.max(f64::MIN_POSITIVE)
    }
}

pub fn block_residuals(pair: &TransformPair, pipe: &Pipeline) -> BlockResiduals {
    let (k, ell) = (pipe.k, pipe.ell);
    let b = pipe.b_full();
    let bz1 = b.matmul(&pair.z1);
    let bz2 = b.matmul(&pair.z2);
    let (t1t, t2t, tct) = (
        pair.t1.transpose(),
        pair.t2.transpose(),
        pair.tc.transpose(),
    );
    BlockResiduals {
        r: t1t
            .matmul(&bz1)
            .sub(&pipe.bhat.block(0, 0, k, k))
            .frobenius(),
        c: t1t.matmul(&bz2).sub(&pipe.c_block()).frobenius(),
        t2_z1: t2t.matmul(&bz1).frobenius(),
        btilde: t2t
            .matmul(&bz2)
            .sub(&pipe.bhat.block(k, k, ell + 1, ell))
            .frobenius(),
        tc_z1: tct.matmul(&bz1).frobenius(),
        tc_z2: tct.matmul(&bz2).frobenius(),
        scale: b.frobenius(),
    }
}

/// Residual quantities for the compressed Tikhonov solution at one `λ`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ResidualBound {
    pub lambda: f64,
    /// `‖r̂_λ‖ = ‖ĉ − B̂ ỹ_λ‖`.
    pub rhat_norm: f64,
    /// Normal-equations residual of the full transformed problem at `[ỹ_λ; 0]`.
    pub r_norm: f64,
    /// `‖Zcᵀ B_{m+ℓ}ᵀ [T1 T2] r̂_λ‖`.
    pub r_equality: f64,
    pub bound: f64,
    /// `σ_k² − r_kk² + α_{m+1}² − ‖C‖_F² + α̃_{ℓ+1}²` before clamping.
    pub radicand: f64,
    pub clamped: bool,
    /// `‖Zcᵀ B_{m+ℓ}ᵀ [T1 T2]‖_F` evaluated directly.
    pub frob_direct: f64,
    /// The same quantity from recurrence coefficients and `Zcᵀ Vᵀ ṽ_{ℓ+1}`.
    pub frob_exact: f64,
}

impl ResidualBound {
    pub fn holds(&self) -> bool {
        self.r_norm <= self.bound + BOUND_SLACK
    }

    pub fn equality_gap(&self) -> f64 {
        (self.r_norm - self.r_equality).abs()
    }
}

pub fn residual_bound(pipe: &Pipeline, pair: &TransformPair, lambda: f64) -> Result<ResidualBound> {
    let (y, _) = tikhonov_projected(&pipe.bhat, &pipe.chat, lambda)?;
    let rhat = sub(&pipe.chat, &pipe.bhat.matvec(&y));
    terms(pipe, pair, lambda, &y, &rhat)
}

fn terms(
    pipe: &Pipeline,
    pair: &TransformPair,
    lambda: f64,
    y: &[f64],
    rhat: &[f64],
) -> Result<ResidualBound> {
    let (m, k, ell) = (pipe.m, pipe.k, pipe.ell);
    let b = pipe.b_full();
    let t12 = hcat(&[&pair.t1, &pair.t2]);
    let zct = pair.zc.transpose();
    let r_equality = norm2(&zct.matvec(&b.tmatvec(&t12.matvec(rhat))));

    let t = pair.t();
    let mm = t.transpose().matmul(&b).matmul(&pair.z());
    let g: Vec<f64> = t.row(0).iter().map(|x| pipe.full.beta1 * x).collect();
    let mut yfull = vec![0.0; m + ell];
    yfull[..y.len()].copy_from_slice(y);
    let mut r = mm.tmatvec(&sub(&g, &mm.matvec(&yfull)));
    for (ri, yi) in r.iter_mut().zip(&yfull) {
        *ri -= lambda * lambda * yi;
    }
    let r_norm = norm2(&r);

    let rhat_norm = norm2(rhat);
    let c_sq = sq(pipe.c_block().frobenius());
    let at = pipe.alpha_tilde_next();
    let radicand = sq(pipe.sigma_k()) - sq(pipe.r_kk()) + sq(pipe.alpha_next()) - c_sq + sq(at);
    let clamped = radicand < 0.0;
    let bound = rhat_norm * libm::sqrt(radicand.max(0.0));

    let frob_direct = zct.matmul(&b.transpose()).matmul(&t12).frobenius();
    // ‖Aᵀ Y‖² = ‖L_{m+1}ᵀ U_{m+1}ᵀ Y‖² because range(Y) ⊂ range(U_{m+1}).
    let l_next = pipe.full.bidiag.leading(m + 1, m + 1);
    let t1_top = pair.t1.block(0, 0, m + 1, k);
    let aty_sq = sq(l_next.transpose().matmul(&t1_top).frobenius());
    let r_sq = sq(pipe.bhat.block(0, 0, k, k).frobenius());
    let vt_next = &pipe.rec.vt[ell];
    let coords: Vec<f64> = pipe.full.v[..m + ell]
        .iter()
        .map(|v| crate::linalg::dot(v, vt_next))
        .collect();
    let leak = norm2(&zct.matvec(&coords));
    let frob_exact = libm::sqrt((aty_sq - r_sq - c_sq + sq(at * leak)).max(0.0));

    Ok(ResidualBound {
        lambda,
        rhat_norm,
        r_norm,
        r_equality,
        bound,
        radicand,
        clamped,
        frob_direct,
        frob_exact,
    })
}

fn sq(x: f64) -> f64 {
    x * x
}

/// Largest violation of `σ_{m−k+j}(B_{m+ℓ}) ≤ σ_j(B̂) ≤ σ_j(B_{m+ℓ})` over
/// `j = 1..=k+ℓ`. Negative means every inequality holds with room to spare.
pub fn interlacing_check(b_full: &Matrix, bhat: &Matrix) -> f64 {
    let sb = singular_values(b_full);
    let sh = singular_values(bhat);
    let shift = b_full.cols() - bhat.cols();
    let mut worst = f64::NEG_INFINITY;
    for j in 0..bhat.cols() {
        worst = worst.max(sh[j] - sb[j]);
        worst = worst.max(sb[shift + j] - sh[j]);
    }
    worst
}

/// `(‖B_{m+ℓ}‖_F − ‖B̂‖_F, max{σ_k, ‖B̄_ℓ‖_F}(m − k) + |α_{m+1}|)`.
pub fn frob_gap(
    b_full: &Matrix,
    bhat: &Matrix,
    sigma_k: f64,
    alpha_next: f64,
    bbar: &Matrix,
) -> (f64, f64) {
    let lhs = b_full.frobenius() - bhat.frobenius();
    let mk = (b_full.cols() - bhat.cols()) as f64;
    let rhs = sigma_k.max(bbar.frobenius()) * mk + alpha_next.abs();
    (lhs, rhs)
}

/// Gap between the trailing reference block and the recycled bidiagonal block.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CompressionGap {
    pub d: f64,
    #[cfg_attr(feature = "serde", serde(rename = "norm_Bbarbar_F_sq"))]
    pub norm_bbarbar_sq: f64,
    #[cfg_attr(feature = "serde", serde(rename = "norm_Btilde_F_sq"))]
    pub norm_btilde_sq: f64,
    pub sigma_k: f64,
}

impl CompressionGap {
    /// `d / ‖B̃_ℓ‖_F²`.
    pub fn ratio(&self) -> f64 {
        self.d / self.norm_btilde_sq
    }
}

pub fn compression_gap(pipe: &Pipeline) -> Result<CompressionGap> {
    if pipe.ell == 0 {
        return Err(Error::InvalidArgument("compression_gap gap needs ell >= 1"));
    }
    let bb = sq(pipe.bbarbar().frobenius());
    let bt = sq(pipe.btilde().frobenius());
    Ok(CompressionGap {
        d: (bb - bt).abs(),
        norm_bbarbar_sq: bb,
        norm_btilde_sq: bt,
        sigma_k: pipe.sigma_k(),
    })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AlphaTrend {
    /// `|α_j|`, `j = 1..`.
    pub series: Vec<f64>,
    /// Least-squares slope of `ln |α_j|` against `j`.
    pub slope: f64,
}

pub fn alpha_trend(full: &GkbState) -> Result<AlphaTrend> {
    let series: Vec<f64> = full.bidiag.alphas.iter().map(|a| a.abs()).collect();
    let n = series.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "trend needs at least two coefficients",
        ));
    }
    let logs: Vec<f64> = series.iter().map(|a| libm::log(*a)).collect();
    let xm = (n + 1) as f64 / 2.0;
    let ym = logs.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, l) in logs.iter().enumerate() {
        let dx = (i + 1) as f64 - xm;
        num += dx * (l - ym);
        den += dx * dx;
    }
    Ok(AlphaTrend {
        series,
        slope: num / den,
    })
}

/// Largest principal angle between two orthonormal column sets.
pub fn subspace_containment(small: &[Vec<f64>], big: &[Vec<f64>]) -> Result<f64> {
    if small.len() > big.len() {
        return Err(Error::InvalidArgument(
            "small basis has more columns than big",
        ));
    }
    Ok(max_principal_angle(small, big))
}

/// Approximate bound on the top singular value of the reference matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Sigma1Estimate {
    pub sigma1_full: f64,
    pub sigma1_hat: f64,
    /// `(σ₁²(B̂) + σ_k² − r_kk² + σ_{k+1}² + … + σ_m²)^{1/2}`.
    pub estimate: f64,
    pub within_slack: bool,
}

pub fn sigma1_estimate(pipe: &Pipeline) -> Sigma1Estimate {
    let sigma1_full = singular_values(&pipe.b_full())[0];
    let sigma1_hat = singular_values(&pipe.bhat)[0];
    let tail: f64 = pipe.sigma_m[pipe.k..pipe.m].iter().map(|s| s * s).sum();
    let est_sq = sq(sigma1_hat) + sq(pipe.sigma_k()) - sq(pipe.r_kk()) + tail;
    let estimate = libm::sqrt(est_sq.max(0.0));
    Sigma1Estimate {
        sigma1_full,
        sigma1_hat,
        estimate,
        within_slack: sigma1_full <= (1.0 + SIGMA1_SLACK) * estimate,
    }
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (libm::log10(lo), libm::log10(hi));
    (0..n)
        .map(|i| libm::pow(10.0, a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// One pass/fail line of a [`VerificationReport`].
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    /// Soft checks are reported but do not fail the report.
    pub hard: bool,
}

impl Check {
    fn le(name: &'static str, value: f64, limit: f64, hard: bool) -> Self {
        Self {
            name,
            value,
            limit,
            passed: value <= limit,
            hard,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct VerificationReport {
    pub m: usize,
    pub k: usize,
    pub ell: usize,
    pub containment_residual: f64,
    pub vtilde_angle: f64,
    pub utilde_angle: f64,
    pub orthogonality_loss: f64,
    pub complement_leakage: f64,
    pub blocks: BlockResiduals,
    /// The same block norms with a second random completion.
    pub blocks_alt: BlockResiduals,
    pub bounds: Vec<ResidualBound>,
    pub interlacing_violation: f64,
    pub frob_gap_lhs: f64,
    pub frob_gap_rhs: f64,
    pub compression_gap: Option<CompressionGap>,
    pub alpha: AlphaTrend,
    pub sigma1: Sigma1Estimate,
    pub r_kk: f64,
    /// `‖B_mᵀ η‖` with `η` the last column of `U_{m+1}ᵀ Y`; compare with `r_kk`.
    pub bmt_eta_norm: f64,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    /// All hard checks passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.hard)
    }
}

/// Runs every check on `pipe` at each `λ` in `lambdas`.
pub fn verify(pipe: &Pipeline, lambdas: &[f64], seed: u64) -> Result<VerificationReport> {
    let (m, k, ell) = (pipe.m, pipe.k, pipe.ell);
    let pair = build_transforms(pipe, seed)?;
    let alt = build_transforms(pipe, seed.wrapping_add(0x9e37_79b9))?;
    let blocks = block_residuals(&pair, pipe);
    let blocks_alt = block_residuals(&alt, pipe);
    let bounds = lambdas
        .iter()
        .map(|&l| residual_bound(pipe, &pair, l))
        .collect::<Result<Vec<_>>>()?;
    let b_full = pipe.b_full();
    let interlacing_violation = interlacing_check(&b_full, &pipe.bhat);
    let (frob_gap_lhs, frob_gap_rhs) = frob_gap(
        &b_full,
        &pipe.bhat,
        pipe.sigma_k(),
        pipe.alpha_next(),
        &pipe.bbar(),
    );
    let compression_gap = if ell > 0 {
        Some(compression_gap(pipe)?)
    } else {
        None
    };
    let alpha = alpha_trend(&pipe.full)?;
    let sigma1 = sigma1_estimate(pipe);
    let vtilde_angle = subspace_containment(&pipe.rec.vt[..ell], &pipe.full.v[..m + ell])?;
    let utilde_angle = subspace_containment(&pipe.rec.ut[..ell + 1], &pipe.full.u[..m + ell + 1])?;
    let eta = pair.t1.block(0, k - 1, m + 1, 1).col(0);
    let bmt_eta_norm = norm2(&pipe.full.projected(m).tmatvec(&eta));

    let mut checks = vec![
        Check::le(
            "containment",
            pair.containment_residual,
            CONTAINMENT_TOL,
            true,
        ),
        Check::le("vtilde_angle", vtilde_angle, CONTAINMENT_TOL, true),
        Check::le("utilde_angle", utilde_angle, CONTAINMENT_TOL, true),
        Check::le(
            "transform_orthogonality",
            pair.orthogonality_loss(),
            ORTHOGONALITY_TOL,
            true,
        ),
        Check::le("block_structure", blocks.relative_max(), BLOCK_TOL, true),
        Check::le(
            "block_structure_completion_invariance",
            (blocks.max() - blocks_alt.max()).abs() / blocks.scale,
            BLOCK_TOL,
            true,
        ),
    ];
    let worst_bound = bounds
        .iter()
        .map(|b| b.r_norm - b.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_eq = bounds
        .iter()
        .map(ResidualBound::equality_gap)
        .fold(0.0, f64::max);
    checks.push(Check::le("residual_bound", worst_bound, BOUND_SLACK, true));
    checks.push(Check::le("residual_equality", worst_eq, EQUALITY_TOL, true));
    checks.push(Check::le(
        "bound_radicand_clamped",
        bounds.iter().filter(|b| b.clamped).count() as f64,
        0.0,
        false,
    ));
    checks.push(Check::le(
        "interlacing",
        interlacing_violation,
        INEQUALITY_SLACK,
        true,
    ));
    checks.push(Check::le(
        "frobenius_gap",
        frob_gap_lhs - frob_gap_rhs,
        INEQUALITY_SLACK,
        true,
    ));
    if let Some(c) = compression_gap {
        checks.push(Check::le(
            "compression_gap_ratio",
            c.ratio(),
            GAP_RATIO_LIMIT,
            false,
        ));
        checks.push(Check::le(
            "compression_gap_below_sigma_k",
            c.d - c.sigma_k,
            0.0,
            false,
        ));
    }
    checks.push(Check::le(
        "sigma1_estimate",
        sigma1.sigma1_full - (1.0 + SIGMA1_SLACK) * sigma1.estimate,
        0.0,
        false,
    ));

    Ok(VerificationReport {
        m,
        k,
        ell,
        containment_residual: pair.containment_residual,
        vtilde_angle,
        utilde_angle,
        orthogonality_loss: pair.orthogonality_loss(),
        complement_leakage: pair.complement_leakage(),
        blocks,
        blocks_alt,
        bounds,
        interlacing_violation,
        frob_gap_lhs,
        frob_gap_rhs,
        compression_gap,
        alpha,
        sigma1,
        r_kk: pipe.r_kk(),
        bmt_eta_norm,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{DenseMatrix, Identity};
    use crate::problems::{gaussian_blur_1d, smooth_signal, NoisyProblem};

    fn blur_pipeline_n(n: usize, m: usize, k: usize, ell: usize) -> Pipeline {
        let op = gaussian_blur_1d(n, 2.0).unwrap();
        let p = NoisyProblem::new(op, smooth_signal(n), 0.002, 3).unwrap();
        Pipeline::tsvd(&p.op, &p.b, m, k, ell, None).unwrap()
    }

    fn blur_pipeline(m: usize, k: usize, ell: usize) -> Pipeline {
        blur_pipeline_n(64, m, k, ell)
    }

    fn dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut s = NormalStream::new(seed);
        let mut data = vec![0.0; rows * cols];
        s.fill(&mut data);
        DenseMatrix::new(Matrix::from_row_major(rows, cols, data).unwrap()).unwrap()
    }

    fn rhs(rows: usize, seed: u64) -> Vec<f64> {
        let mut b = vec![0.0; rows];
        NormalStream::new(seed).fill(&mut b);
        b
    }

    #[test]
    fn identity_compression_gives_identity_z1() {
        let a = dense(40, 25, 1);
        let b = rhs(40, 2);
        let pipe = Pipeline::identity(&a, &b, 6, 0).unwrap();
        let pair = build_transforms(&pipe, 7).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((pair.z1[(i, j)].abs() - target).abs() < 1e-10);
            }
        }
        let blocks = block_residuals(&pair, &pipe);
        assert!(blocks.relative_max() < 1e-10, "{blocks:?}");
        assert!(interlacing_check(&pipe.b_full(), &pipe.bhat).abs() < 1e-10);
        let (lhs, rhs) = frob_gap(
            &pipe.b_full(),
            &pipe.bhat,
            pipe.sigma_k(),
            pipe.alpha_next(),
            &pipe.bbar(),
        );
        assert!(lhs.abs() < 1e-10 && lhs <= rhs);
        assert!(compression_gap(&pipe).is_err());
    }

    #[test]
    fn dense_tsvd_transform_invariants() {
        let a = dense(40, 25, 11);
        let b = rhs(40, 12);
        let pipe = Pipeline::tsvd(&a, &b, 10, 5, 5, None).unwrap();
        let pair = build_transforms(&pipe, 5).unwrap();
        assert!(pair.containment_residual < 1e-6);
        // Gram oracle: [T1 T2 Tc] and [Z1 Z2 Zc] square and orthogonal.
        let t = pair.t();
        let z = pair.z();
        assert_eq!((t.rows(), t.cols()), (16, 16));
        assert_eq!((z.rows(), z.cols()), (15, 15));
        assert!(
            t.transpose()
                .matmul(&t)
                .sub(&Matrix::identity(16))
                .max_abs()
                < 1e-8
        );
        assert!(
            z.transpose()
                .matmul(&z)
                .sub(&Matrix::identity(15))
                .max_abs()
                < 1e-8
        );
        assert!(pair.complement_leakage() < 1e-10);
        let blocks = block_residuals(&pair, &pipe);
        assert!(blocks.relative_max() < 1e-8, "{blocks:?}");
    }

    #[test]
    fn tsvd_r_is_diagonal_with_leading_singular_values() {
        let pipe = blur_pipeline(30, 15, 10);
        let r = &pipe.rec.r;
        for i in 0..14 {
            assert!((r[(i, i)] - pipe.sigma_m[i]).abs() < 1e-8 * pipe.sigma_m[0]);
            for j in 0..15 {
                if i != j {
                    assert!(r[(i, j)].abs() < 1e-8 * pipe.sigma_m[0]);
                }
            }
        }
        assert!(pipe.r_kk() <= pipe.sigma_k() * (1.0 + 1e-12));
    }

    #[test]
    fn blur_blocks_and_bound() {
        let pipe = blur_pipeline(30, 15, 10);
        let pair = build_transforms(&pipe, 1).unwrap();
        let blocks = block_residuals(&pair, &pipe);
        assert!(blocks.relative_max() < 1e-8, "{blocks:?}");
        let s1 = pipe.sigma_m[0];
        for lambda in log_grid(1e-6 * s1, s1, 20) {
            let rb = residual_bound(&pipe, &pair, lambda).unwrap();
            assert!(rb.holds(), "{rb:?}");
            assert!(rb.equality_gap() < 1e-8, "{rb:?}");
            assert!(rb.frob_direct <= libm::sqrt(rb.radicand.max(0.0)) + 1e-10);
            assert!((rb.frob_direct - rb.frob_exact).abs() < 1e-6, "{rb:?}");
        }
    }

    #[test]
    fn zero_projected_residual_gives_zero_bound() {
        let pipe = blur_pipeline(12, 6, 4);
        let pair = build_transforms(&pipe, 1).unwrap();
        let (y, _) = tikhonov_projected(&pipe.bhat, &pipe.chat, 0.0).unwrap();
        let zero = vec![0.0; pipe.chat.len()];
        let rb = terms(&pipe, &pair, 0.0, &y, &zero).unwrap();
        assert_eq!(rb.bound, 0.0);
        assert_eq!(rb.r_equality, 0.0);
    }

    #[test]
    fn second_completion_gives_same_norms() {
        let pipe = blur_pipeline(20, 8, 6);
        let a = block_residuals(&build_transforms(&pipe, 1).unwrap(), &pipe);
        let b = block_residuals(&build_transforms(&pipe, 99).unwrap(), &pipe);
        assert!((a.max() - b.max()).abs() < 1e-8 * a.scale);
        let ra = residual_bound(&pipe, &build_transforms(&pipe, 1).unwrap(), 0.01).unwrap();
        let rb = residual_bound(&pipe, &build_transforms(&pipe, 99).unwrap(), 0.01).unwrap();
        assert!((ra.r_norm - rb.r_norm).abs() < 1e-8);
    }

    #[test]
    fn sign_flip_leaves_block_norms_unchanged() {
        let op = gaussian_blur_1d(64, 2.0).unwrap();
        let p = NoisyProblem::new(op, smooth_signal(64), 0.002, 3).unwrap();
        let full = reference_gkb(&p.op, &p.b, 26).unwrap();
        let (w, _) = tsvd_basis(&full, 20, 8, None).unwrap();
        let mut flipped = w.clone();
        scale(-1.0, &mut flipped[2]);
        let a = Pipeline::from_basis(&p.op, &p.b, full.clone(), w, 20, 6).unwrap();
        let b = Pipeline::from_basis(&p.op, &p.b, full, flipped, 20, 6).unwrap();
        let la = block_residuals(&build_transforms(&a, 4).unwrap(), &a);
        let lb = block_residuals(&build_transforms(&b, 4).unwrap(), &b);
        assert!((la.max() - lb.max()).abs() < 1e-8 * la.scale);
        assert!(lb.relative_max() < 1e-8);
    }

    #[test]
    fn interlacing_and_frob_gap_on_blur() {
        let pipe = blur_pipeline(30, 15, 10);
        assert!(interlacing_check(&pipe.b_full(), &pipe.bhat) <= 1e-10);
        let (lhs, rhs) = frob_gap(
            &pipe.b_full(),
            &pipe.bhat,
            pipe.sigma_k(),
            pipe.alpha_next(),
            &pipe.bbar(),
        );
        assert!(lhs <= rhs, "{lhs} {rhs}");
    }

    #[test]
    fn frob_gap_rhs_linear_in_rank_deficit() {
        let bbar = Matrix::zeros(0, 0);
        let rhs_for = |cols_full: usize, cols_hat: usize| {
            frob_gap(
                &Matrix::zeros(cols_full + 1, cols_full),
                &Matrix::zeros(cols_hat + 1, cols_hat),
                0.5,
                0.1,
                &bbar,
            )
            .1
        };
        let r1 = rhs_for(10, 9);
        let r2 = rhs_for(10, 8);
        let r3 = rhs_for(10, 7);
        assert!(((r2 - r1) - (r3 - r2)).abs() < 1e-15);
        assert!((r2 - r1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn compression_gap_small_on_blur() {
        // 64 samples are nearly exhausted by 40 steps; use a longer signal.
        let pipe = blur_pipeline_n(256, 30, 15, 10);
        let c = compression_gap(&pipe).unwrap();
        assert!(c.ratio() <= 0.1, "{c:?}");
        assert!(c.d < c.sigma_k, "{c:?}");
    }

    #[test]
    fn alpha_trend_cases() {
        let id = Identity::new(5);
        let b = [1.0, 2.0, 0.0, 0.0, 1.0];
        let mut st = gkb_init(&id, &b).unwrap();
        assert!((st.bidiag.alphas[0] - 1.0).abs() < 1e-15);
        assert!(matches!(
            st.extend_u(&id, true),
            Err(Error::Breakdown { .. })
        ));
        assert!(alpha_trend(&st).is_err());

        let pipe = blur_pipeline(30, 15, 10);
        let tr = alpha_trend(&pipe.full).unwrap();
        assert_eq!(tr.series.len(), pipe.full.m());
        assert!(tr.slope < 0.0);
    }

    #[test]
    fn containment_angles() {
        let a = dense(30, 12, 4);
        let full = reference_gkb(&a, &rhs(30, 5), 8).unwrap();
        assert!(subspace_containment(&full.v[..3], &full.v[..8]).unwrap() <= 1e-12);
        let angle = subspace_containment(&full.v[8..9], &full.v[..8]).unwrap();
        assert!((angle - core::f64::consts::FRAC_PI_2).abs() < 1e-8);
        assert!(subspace_containment(&full.v[..8], &full.v[..3]).is_err());

        let pipe = blur_pipeline(30, 15, 10);
        let ang = subspace_containment(&pipe.rec.vt[..10], &pipe.full.v[..40]).unwrap();
        assert!(ang <= 1e-6, "{ang}");
    }

    #[test]
    fn verify_passes_and_detects_fault() {
        let mut pipe = blur_pipeline(30, 15, 10);
        let s1 = pipe.sigma_m[0];
        let grid = log_grid(1e-6 * s1, s1, 20);
        let rep = verify(&pipe, &grid, 1).unwrap();
        let failed: Vec<_> = rep.checks.iter().filter(|c| !c.passed).collect();
        assert!(rep.passed(), "{failed:?}");
        pipe.inject_fault();
        let bad = verify(&pipe, &grid, 1).unwrap();
        assert!(!bad.passed());
        assert!(bad
            .checks
            .iter()
            .any(|c| c.name == "residual_bound" && !c.passed));
    }
}
