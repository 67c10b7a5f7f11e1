//! Recycling Golub-Kahan bidiagonalization.
//!
//! Given an orthonormal recycled basis `W` (`N × k`) with skinny QR
//! `A W = Y R`, the process builds `Ũ`, `Ṽ`, `B̃` from the part of the
//! residual outside `range(Y)`, so that
//!
//! ```text
//! A [W Ṽ_ℓ] = [Y Ũ_{ℓ+1}] [[R, C], [0, B̃_ℓ]],   C = Yᵀ A Ṽ_ℓ.
//! ```
//!
//! Like [`crate::gkb`], extension happens in half steps so a solver can use
//! the projected problem before paying for the next `ṽ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gkb::{Bidiagonal, BREAKDOWN_TOL};
use crate::linalg::{axpy, combine, dot, norm2, project, reorthogonalize, scale, Matrix};
use crate::linops::LinearOp;

/// Relative size below which a deflated direction counts as already in range.
pub const IN_RANGE_TOL: f64 = 1e-12;
/// Relative size of `|R_ii|` that flags `A W` as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Appends the direction of `x1` orthogonal to `w_prev`, normalized. If `x1`
/// already lies in `range(w_prev)` the previous basis is returned unchanged.
pub fn build_wk(w_prev: &[Vec<f64>], x1: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n1 = norm2(x1);
    if n1 == 0.0 {
        return Err(Error::InvalidArgument("solution direction is zero"));
    }
    if let Some(w) = w_prev.first() {
        if w.len() != x1.len() {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                got: x1.len(),
            });
        }
    }
    let mut x = x1.to_vec();
    reorthogonalize(&mut x, w_prev);
    let mut out = w_prev.to_vec();
    let nx = norm2(&x);
    if nx > IN_RANGE_TOL * n1 {
        scale(1.0 / nx, &mut x);
        out.push(x);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RecycleState {
    pub w: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Upper triangular `k × k`.
    pub r: Matrix,
    pub zeta: Vec<f64>,
    pub beta1t: f64,
    pub ut: Vec<Vec<f64>>,
    pub vt: Vec<Vec<f64>>,
    pub bidiag: Bidiagonal,
    /// Columns of `Yᵀ A Ṽ`, one per `ṽ` whose image has been formed.
    pub c: Vec<Vec<f64>>,
    max_coef: f64,
}

/// Small dense projected problem `min ‖ĉ − B̂ y‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedProblem {
    pub bhat: Matrix,
    pub chat: Vec<f64>,
}

/// Skinny QR of `A W`, residual split, and the first `ũ`, `ṽ` pair.
///
/// An empty `w` degenerates to the standard process started from `b`.
pub fn recycle_init(
    a: &dyn LinearOp,
    b: &[f64],
    w: &[Vec<f64>],
    reorth: bool,
) -> Result<RecycleState> {
    let (m_rows, n_cols) = (a.nrows(), a.ncols());
    if b.len() != m_rows {
        return Err(Error::DimensionMismatch {
            expected: m_rows,
            got: b.len(),
        });
    }
    if let Some(bad) = w.iter().find(|c| c.len() != n_cols) {
        return Err(Error::DimensionMismatch {
            expected: n_cols,
            got: bad.len(),
        });
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Err(Error::ZeroRhs);
    }
    let k = w.len();
    let aw: Vec<Vec<f64>> = w.iter().map(|c| a.apply(c)).collect::<Result<_>>()?;
    let aw_norm = libm::sqrt(aw.iter().map(|c| dot(c, c)).sum::<f64>());

    // modified Gram-Schmidt with one reorthogonalization pass
    let mut y: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = Matrix::zeros(k, k);
    for (i, col) in aw.iter().enumerate() {
        let mut z = col.clone();
        for _ in 0..2 {
            for (p, q) in y.iter().enumerate() {
                let coef = dot(q, &z);
                axpy(-coef, q, &mut z);
                r[(p, i)] += coef;
            }
        }
        let d = norm2(&z);
        if !(d > RANK_TOL * aw_norm) {
            return Err(Error::RankDeficient { index: i, value: d });
        }
        r[(i, i)] = d;
        scale(1.0 / d, &mut z);
        y.push(z);
    }

    // ř = b − A x̌ with x̌ the last column of W
    let mut rc = b.to_vec();
    if let Some(last) = aw.last() {
        axpy(-1.0, last, &mut rc);
    }
    let zeta = reorthogonalize(&mut rc, &y);
    let beta1t = norm2(&rc);
    if !(beta1t > BREAKDOWN_TOL * bnorm) {
        return Err(Error::NoExtensionNeeded);
    }
    scale(1.0 / beta1t, &mut rc);

    let mut v1 = a.apply_transpose(&rc)?;
    if reorth {
        reorthogonalize(&mut v1, w);
    }
    let alpha1 = norm2(&v1);
    if !(alpha1 > 0.0) {
        return Err(Error::Breakdown {
            step: 1,
            which: "alpha",
            value: alpha1,
        });
    }
    scale(1.0 / alpha1, &mut v1);

    Ok(RecycleState {
        w: w.to_vec(),
        y,
        r,
        zeta,
        beta1t,
        ut: vec![rc],
        vt: vec![v1],
        bidiag: Bidiagonal {
            alphas: vec![alpha1],
            betas: Vec::new(),
        },
        c: Vec::new(),
        max_coef: alpha1,
    })
}

/// One full recycling step: `ũ_{ℓ+1}` (plus the new column of `C`), then `ṽ_{ℓ+1}`.
pub fn recycle_step(state: &mut RecycleState, a: &dyn LinearOp, reorth: bool) -> Result<()> {
    state.extend_u(a, reorth)?;
    state.extend_v(a, reorth)
}

impl RecycleState {
    pub fn k(&self) -> usize {
        self.w.len()
    }

    /// Number of `ṽ` vectors.
    pub fn ell(&self) -> usize {
        self.vt.len()
    }

    /// Length-`N` vectors currently held (`W` and `Ṽ`).
    pub fn basis_count(&self) -> usize {
        self.w.len() + self.vt.len()
    }

    fn check_breakdown(&mut self, value: f64, which: &'static str) -> Result<()> {
        if !(value > BREAKDOWN_TOL * self.max_coef) {
            return Err(Error::Breakdown {
                step: self.bidiag.alphas.len() + usize::from(which == "alpha"),
                which,
                value,
            });
        }
        self.max_coef = self.max_coef.max(value);
        Ok(())
    }

    /// `β̃_{j+1} ũ_{j+1} = (I − Y Yᵀ) A ṽ_j − α̃_j ũ_j`. The column
    /// `Yᵀ A ṽ_j` of `C` is recorded even when this half step breaks down.
    pub fn extend_u(&mut self, a: &dyn LinearOp, reorth: bool) -> Result<()> {
        let j = self.vt.len();
        if self.ut.len() != j {
            return Err(Error::InvalidArgument("u side already extended"));
        }
        let mut z = a.apply(&self.vt[j - 1])?;
        let ccol = if reorth {
            reorthogonalize(&mut z, &self.y)
        } else {
            let c = project(&self.y, &z);
            for (q, &coef) in self.y.iter().zip(&c) {
                axpy(-coef, q, &mut z);
            }
            c
        };
        if self.c.len() < j {
            self.c.push(ccol);
        }
        axpy(-self.bidiag.alphas[j - 1], &self.ut[j - 1], &mut z);
        if reorth {
            reorthogonalize(&mut z, &self.ut);
        }
        let beta = norm2(&z);
        self.check_breakdown(beta, "beta")?;
        scale(1.0 / beta, &mut z);
        self.ut.push(z);
        self.bidiag.betas.push(beta);
        Ok(())
    }

    /// `α̃_{j+1} ṽ_{j+1} = Aᵀ ũ_{j+1} − β̃_{j+1} ṽ_j`, additionally projected
    /// against `W` when reorthogonalizing.
    pub fn extend_v(&mut self, a: &dyn LinearOp, reorth: bool) -> Result<()> {
        let j = self.vt.len();
        if self.ut.len() != j + 1 {
            return Err(Error::InvalidArgument("u side must be extended first"));
        }
        let mut z = a.apply_transpose(&self.ut[j])?;
        axpy(-self.bidiag.betas[j - 1], &self.vt[j - 1], &mut z);
        if reorth {
            reorthogonalize(&mut z, &self.w);
            reorthogonalize(&mut z, &self.vt);
        }
        let alpha = norm2(&z);
        self.check_breakdown(alpha, "alpha")?;
        scale(1.0 / alpha, &mut z);
        self.vt.push(z);
        self.bidiag.alphas.push(alpha);
        Ok(())
    }

    /// `C` restricted to its first `l` columns as a `k × l` matrix.
    pub fn c_matrix(&self, l: usize) -> Matrix {
        let k = self.k();
        let mut c = Matrix::zeros(k, l);
        for j in 0..l {
            for i in 0..k {
                c[(i, j)] = self.c[j][i];
            }
        }
        c
    }

    /// `B̂ = [[R, C], [0, B̃_l]]` and `ĉ = [ζ + R e_k; β̃₁ e₁]` using the first
    /// `l` recycling vectors. A missing `β̃_{l+1}` reads as zero.
    pub fn assemble_projected(&self, l: usize) -> Result<ProjectedProblem> {
        if l == 0 || l > self.vt.len() || l > self.c.len() {
            return Err(Error::InvalidArgument(
                "projected size exceeds the built basis",
            ));
        }
        let k = self.k();
        let mut bhat = Matrix::zeros(k + l + 1, k + l);
        bhat.set_block(0, 0, &self.r);
        bhat.set_block(0, k, &self.c_matrix(l));
        bhat.set_block(k, k, &self.bidiag.leading(l + 1, l));
        let mut chat = vec![0.0; k + l + 1];
        for i in 0..k {
            chat[i] = self.zeta[i] + self.r[(i, k - 1)];
        }
        chat[k] = self.beta1t;
        Ok(ProjectedProblem { bhat, chat })
    }

    /// Projected problem over every `ṽ` whose image has been formed.
    pub fn projected(&self) -> Result<ProjectedProblem> {
        self.assemble_projected(self.c.len().min(self.vt.len()))
    }

    /// `x = W y[..k] + Ṽ y[k..]`.
    pub fn lift_solution(&self, y: &[f64]) -> Result<Vec<f64>> {
        let k = self.k();
        if y.len() < k || y.len() - k > self.vt.len() {
            return Err(Error::DimensionMismatch {
                expected: k + self.vt.len(),
                got: y.len(),
            });
        }
        let n = self.vt[0].len();
        let mut x = combine(&self.w, &y[..k], n);
        for (v, &c) in self.vt.iter().zip(&y[k..]) {
            axpy(c, v, &mut x);
        }
        Ok(x)
    }

    /// `[W Ṽ]` as one column list.
    pub fn combined_basis(&self) -> Vec<Vec<f64>> {
        self.w.iter().chain(&self.vt).cloned().collect()
    }

    /// `‖A W − Y R‖_F / ‖A W‖_F`.
    pub fn qr_residual(&self, a: &dyn LinearOp) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, wc) in self.w.iter().enumerate() {
            let mut z = a.apply(wc).expect("basis length");
            den += dot(&z, &z);
            for p in 0..=i {
                axpy(-self.r[(p, i)], &self.y[p], &mut z);
            }
            num += dot(&z, &z);
        }
        if den == 0.0 {
            0.0
        } else {
            libm::sqrt(num / den)
        }
    }

    /// `‖A [W Ṽ_l] − [Y Ũ_{l+1}] B̂‖_F / ‖B̂‖_F` for the largest complete `l`.
    pub fn relation_residual(&self, a: &dyn LinearOp) -> f64 {
        let l = self.c.len().min(self.vt.len());
        let p = match self.assemble_projected(l) {
            Ok(p) => p,
            Err(_) => return f64::NAN,
        };
        let k = self.k();
        let left: Vec<&Vec<f64>> = self.y.iter().chain(&self.ut).collect();
        let mut num = 0.0;
        for (jc, col) in self.w.iter().chain(&self.vt[..l]).enumerate() {
            let mut z = a.apply(col).expect("basis length");
            for (i, q) in left.iter().enumerate() {
                if i < k + l + 1 {
                    let coef = if i < p.bhat.rows() {
                        p.bhat[(i, jc)]
                    } else {
                        0.0
                    };
                    if coef != 0.0 {
                        axpy(-coef, q, &mut z);
                    }
                }
            }
            num += dot(&z, &z);
        }
        libm::sqrt(num) / p.bhat.frobenius()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cross_gram, max_principal_angle, orthogonality_loss, orthonormalize, sub};
    use crate::linops::Identity;
    use crate::problems::{gaussian_blur_1d, smooth_signal};
    use crate::NormalStream;

    fn e(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    fn random_orthonormal(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut s = NormalStream::new(seed);
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let mut v = vec![0.0; n];
                s.fill(&mut v);
                v
            })
            .collect();
        orthonormalize(&cols, 1e-12)
    }

    #[test]
    fn build_wk_cases() {
        assert_eq!(build_wk(&[], &[3.0, 0.0]).unwrap(), vec![vec![1.0, 0.0]]);
        assert_eq!(build_wk(&[e(2, 0)], &[1.0, 0.0]).unwrap(), vec![e(2, 0)]);
        let w = build_wk(&[e(2, 0)], &[1.0, 1.0]).unwrap();
        assert_eq!(w.len(), 2);
        assert!(sub(&w[1], &e(2, 1)).iter().all(|x| x.abs() < 1e-15));
        assert!(build_wk(&[], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn init_by_hand_identity() {
        let st = recycle_init(&Identity::new(4), &[0.0, 1.0, 0.0, 0.0], &[e(4, 0)], false).unwrap();
        assert_eq!(st.y, vec![e(4, 0)]);
        assert_eq!(st.r[(0, 0)], 1.0);
        assert_eq!(st.zeta, vec![-1.0]);
        assert_eq!(st.beta1t, 1.0);
        assert_eq!(st.ut[0], e(4, 1));
        assert_eq!(st.vt[0], e(4, 1));
    }

    #[test]
    fn residual_in_range_needs_no_extension() {
        let err = recycle_init(&Identity::new(3), &[2.0, 0.0, 0.0], &[e(3, 0)], false).unwrap_err();
        assert_eq!(err, Error::NoExtensionNeeded);
    }

    #[test]
    fn identity_step_breaks_down() {
        let a = Identity::new(3);
        let mut st = recycle_init(&a, &[1.0, 1.0, 0.0], &[e(3, 0)], false).unwrap();
        assert!(sub(&st.vt[0], &e(3, 1)).iter().all(|x| x.abs() < 1e-15));
        let err = recycle_step(&mut st, &a, false).unwrap_err();
        assert!(matches!(err, Error::Breakdown { which: "beta", .. }));
        // the C column for ṽ₁ is recorded and the projected problem is usable
        let p = st.projected().unwrap();
        assert_eq!((p.bhat.rows(), p.bhat.cols()), (3, 2));
    }

    #[test]
    fn rank_deficient_aw_is_rejected() {
        let a = crate::linops::DenseMatrix::from_rows(&[
            &[1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0],
        ])
        .unwrap();
        let err = recycle_init(&a, &[1.0, 1.0, 1.0], &[e(3, 1)], false).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { index: 0, .. }));
    }

    fn blur_pipeline(reorth: bool) -> (crate::problems::GaussianBlur1d, Vec<f64>, RecycleState) {
        let a = gaussian_blur_1d(64, 2.0).unwrap();
        let b = a.apply(&smooth_signal(64)).unwrap();
        let w = random_orthonormal(64, 5, 8);
        let mut st = recycle_init(&a, &b, &w, reorth).unwrap();
        for _ in 1..10 {
            recycle_step(&mut st, &a, reorth).unwrap();
        }
        st.extend_u(&a, reorth).unwrap();
        (a, b, st)
    }

    #[test]
    fn blur_invariants_with_reorth() {
        let (a, _, st) = blur_pipeline(true);
        assert_eq!((st.k(), st.ell()), (5, 10));
        assert!(st.qr_residual(&a) < 1e-10);
        assert!(cross_gram(&st.ut, &st.y).max_abs() < 1e-8);
        assert!(cross_gram(&st.w, &st.vt).max_abs() < 1e-10);
        assert!(st.relation_residual(&a) < 1e-8);
        assert!(orthogonality_loss(&st.vt) < 1e-10);
    }

    #[test]
    fn blur_invariants_without_reorth() {
        let (a, _, st) = blur_pipeline(false);
        assert!(cross_gram(&st.w, &st.vt).max_abs() < 1e-6);
        assert!(cross_gram(&st.ut, &st.y).max_abs() < 1e-8);
        assert!(st.relation_residual(&a) < 1e-8);
    }

    #[test]
    fn krylov_characterization() {
        let a = gaussian_blur_1d(64, 2.0).unwrap();
        let b = a.apply(&smooth_signal(64)).unwrap();
        let w = random_orthonormal(64, 3, 21);
        let mut st = recycle_init(&a, &b, &w, true).unwrap();
        let l = 4;
        for _ in 1..l {
            recycle_step(&mut st, &a, true).unwrap();
        }
        // Aᵀ (I − YYᵀ) applied to ř, then powers of Aᵀ(I − YYᵀ)A
        let proj = |v: &mut Vec<f64>| {
            reorthogonalize(v, &st.y);
        };
        let mut r = b.clone();
        axpy(-1.0, &a.apply(&w[2]).unwrap(), &mut r);
        proj(&mut r);
        let mut kry = vec![a.apply_transpose(&r).unwrap()];
        for _ in 1..l {
            let mut z = a.apply(kry.last().unwrap()).unwrap();
            proj(&mut z);
            kry.push(a.apply_transpose(&z).unwrap());
        }
        let kb = orthonormalize(&kry, 1e-14);
        assert!(max_principal_angle(&st.vt, &kb) < 1e-6);
    }

    #[test]
    fn projected_residual_identity_and_lift() {
        let (a, b, st) = blur_pipeline(true);
        let p = st.projected().unwrap();
        for i in 0..st.k() {
            assert_eq!(
                p.bhat.block(st.k(), 0, st.ell() + 1, st.k()).max_abs(),
                0.0,
                "{i}"
            );
        }
        // y = 0: projected residual is ‖ĉ‖
        let left: Vec<Vec<f64>> = st.y.iter().chain(&st.ut).cloned().collect();
        let outside = {
            let mut z = b.clone();
            reorthogonalize(&mut z, &left);
            norm2(&z)
        };
        let mut s = NormalStream::new(77);
        for _ in 0..3 {
            let mut yv = vec![0.0; p.bhat.cols()];
            s.fill(&mut yv);
            let x = st.lift_solution(&yv).unwrap();
            assert!((norm2(&x) - norm2(&yv)).abs() < 1e-10 * norm2(&yv));
            let full = norm2(&sub(&b, &a.apply(&x).unwrap()));
            let proj = norm2(&sub(&p.chat, &p.bhat.matvec(&yv)));
            assert!((full * full - (proj * proj + outside * outside)).abs() < 1e-8 * full * full);
        }
        let mut ek = vec![0.0; p.bhat.cols()];
        ek[st.k() - 1] = 1.0;
        assert_eq!(st.lift_solution(&ek).unwrap(), st.w[st.k() - 1]);
        assert!(st
            .lift_solution(&vec![0.0; p.bhat.cols()])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn empty_recycled_basis_matches_standard_process() {
        let a = gaussian_blur_1d(32, 1.5).unwrap();
        let b = a.apply(&smooth_signal(32)).unwrap();
        let mut st = recycle_init(&a, &b, &[], true).unwrap();
        let mut g = crate::gkb::gkb_init(&a, &b).unwrap();
        for _ in 0..5 {
            recycle_step(&mut st, &a, true).unwrap();
            crate::gkb::gkb_step(&mut g, &a, true).unwrap();
        }
        for (x, y) in st.bidiag.alphas.iter().zip(&g.bidiag.alphas) {
            assert!((x - y).abs() < 1e-12 * y);
        }
        assert_eq!(st.beta1t, g.beta1);
    }
}
