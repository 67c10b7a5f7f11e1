//! Golub-Kahan bidiagonalization.
//!
//! The process is exposed in half steps: [`GkbState::extend_u`] produces
//! `β_{j+1}, u_{j+1}` and [`GkbState::extend_v`] produces `α_{j+1}, v_{j+1}`.
//! A hybrid solver can then solve the projected problem with `B_j` before
//! committing storage for `v_{j+1}`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{axpy, lstsq, norm2, reorthogonalize, scale, Matrix};
use crate::linops::LinearOp;

/// Relative breakdown threshold against the running maximum of `α`, `β`.
pub const BREAKDOWN_TOL: f64 = 1e-14;

/// Lower bidiagonal factor: `alphas` is the diagonal `α₁, α₂, …`, `betas` the
/// subdiagonal `β₂, β₃, …`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bidiagonal {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Bidiagonal {
    /// Dense `(betas + 1) × alphas` matrix. With equal lengths `m` this is
    /// the `(m+1) × m` matrix `B_m`; with one more alpha it is the square
    /// `L_{m+1}`.
    pub fn to_matrix(&self) -> Matrix {
        self.leading(self.betas.len() + 1, self.alphas.len())
    }

    /// Leading `rows × cols` corner, treating missing coefficients as zero.
    pub fn leading(&self, rows: usize, cols: usize) -> Matrix {
        let mut b = Matrix::zeros(rows, cols);
        for j in 0..cols {
            if j < rows {
                b[(j, j)] = self.alphas.get(j).copied().unwrap_or(0.0);
            }
            if j + 1 < rows {
                b[(j + 1, j)] = self.betas.get(j).copied().unwrap_or(0.0);
            }
        }
        b
    }
}

/// Factors of `A V_m = U_{m+1} B_m`.
#[derive(Clone, Debug)]
pub struct GkbState {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub bidiag: Bidiagonal,
    pub beta1: f64,
    max_coef: f64,
}

pub fn gkb_init(a: &dyn LinearOp, b: &[f64]) -> Result<GkbState> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let beta1 = norm2(b);
    if beta1 == 0.0 {
        return Err(Error::ZeroRhs);
    }
    let mut u1 = b.to_vec();
    scale(1.0 / beta1, &mut u1);
    let mut v1 = vec![0.0; a.ncols()];
    a.apply_transpose_into(&u1, &mut v1);
    let alpha1 = norm2(&v1);
    if !(alpha1 > 0.0) {
        return Err(Error::Breakdown {
            step: 1,
            which: "alpha",
            value: alpha1,
        });
    }
    scale(1.0 / alpha1, &mut v1);
    Ok(GkbState {
        u: vec![u1],
        v: vec![v1],
        bidiag: Bidiagonal {
            alphas: vec![alpha1],
            betas: Vec::new(),
        },
        beta1,
        max_coef: alpha1,
    })
}

/// One full step: `u_{j+1}` then `v_{j+1}`.
pub fn gkb_step(state: &mut GkbState, a: &dyn LinearOp, reorth: bool) -> Result<()> {
    state.extend_u(a, reorth)?;
    state.extend_v(a, reorth)
}

impl GkbState {
    /// Number of `v` vectors (the Krylov dimension).
    pub fn m(&self) -> usize {
        self.v.len()
    }

    /// Largest `j` for which `B_j` is complete.
    pub fn complete_steps(&self) -> usize {
        self.bidiag.betas.len()
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

    /// `β_{j+1} u_{j+1} = A v_j − α_j u_j`. On breakdown the state is left
    /// unchanged and `B_j` (with a zero last row) is still usable.
    pub fn extend_u(&mut self, a: &dyn LinearOp, reorth: bool) -> Result<()> {
        let j = self.v.len();
        if self.u.len() != j {
            return Err(Error::InvalidArgument("u side already extended"));
        }
        let mut w = vec![0.0; a.nrows()];
        a.apply_into(&self.v[j - 1], &mut w);
        axpy(-self.bidiag.alphas[j - 1], &self.u[j - 1], &mut w);
        if reorth {
            reorthogonalize(&mut w, &self.u);
        }
        let beta = norm2(&w);
        self.check_breakdown(beta, "beta")?;
        scale(1.0 / beta, &mut w);
        self.u.push(w);
        self.bidiag.betas.push(beta);
        Ok(())
    }

    /// `α_{j+1} v_{j+1} = Aᵀ u_{j+1} − β_{j+1} v_j`.
    pub fn extend_v(&mut self, a: &dyn LinearOp, reorth: bool) -> Result<()> {
        let j = self.v.len();
        if self.u.len() != j + 1 {
            return Err(Error::InvalidArgument("u side must be extended first"));
        }
        let mut z = vec![0.0; a.ncols()];
        a.apply_transpose_into(&self.u[j], &mut z);
        axpy(-self.bidiag.betas[j - 1], &self.v[j - 1], &mut z);
        if reorth {
            reorthogonalize(&mut z, &self.v);
        }
        let alpha = norm2(&z);
        self.check_breakdown(alpha, "alpha")?;
        scale(1.0 / alpha, &mut z);
        self.v.push(z);
        self.bidiag.alphas.push(alpha);
        Ok(())
    }

    /// `B_j` as a dense `(j+1) × j` matrix; a missing `β_{j+1}` reads as zero.
    pub fn projected(&self, j: usize) -> Matrix {
        self.bidiag.leading(j + 1, j)
    }

    /// `β₁ e₁` of length `j + 1`.
    pub fn rhs(&self, j: usize) -> Vec<f64> {
        let mut c = vec![0.0; j + 1];
        c[0] = self.beta1;
        c
    }

    /// `V_j y`.
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        crate::linalg::combine(&self.v[..y.len()], y, self.v[0].len())
    }

    /// Relative Frobenius residuals of `A V_j = U_{j+1} B_j` and
    /// `Aᵀ U_i = V_i L_iᵀ`, both divided by `‖B_j‖_F`.
    pub fn recurrence_residuals(&self, a: &dyn LinearOp) -> (f64, f64) {
        let j = self.complete_steps();
        let b = self.projected(j);
        let bnorm = b.frobenius().max(f64::MIN_POSITIVE);
        let mut lhs = 0.0;
        for c in 0..j {
            let mut r = a.apply(&self.v[c]).expect("basis length");
            axpy(-b[(c, c)], &self.u[c], &mut r);
            axpy(-b[(c + 1, c)], &self.u[c + 1], &mut r);
            lhs += crate::linalg::dot(&r, &r);
        }
        let i = self.u.len().min(self.v.len());
        let mut rhs = 0.0;
        for c in 0..i {
            let mut r = a.apply_transpose(&self.u[c]).expect("basis length");
            axpy(-self.bidiag.alphas[c], &self.v[c], &mut r);
            if c > 0 {
                axpy(-self.bidiag.betas[c - 1], &self.v[c - 1], &mut r);
            }
            rhs += crate::linalg::dot(&r, &r);
        }
        (libm::sqrt(lhs) / bnorm, libm::sqrt(rhs) / bnorm)
    }
}

/// LSQR iterates `x_j = V_j y_j`, `y_j = argmin ‖B_j y − β₁ e₁‖`, for
/// `j = 1..=m`. Stops early (without error) at a breakdown.
pub fn lsqr_solve(a: &dyn LinearOp, b: &[f64], m: usize, reorth: bool) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::InvalidArgument("iteration count must be positive"));
    }
    let mut st = gkb_init(a, b)?;
    let mut out = Vec::with_capacity(m);
    for j in 1..=m {
        let broke = st.extend_u(a, reorth).is_err();
        let y = lstsq(&st.projected(j), &st.rhs(j))?;
        out.push(st.lift(&y));
        if broke || j == m || st.extend_v(a, reorth).is_err() {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_principal_angle, orthogonality_loss, orthonormalize};
    use crate::linops::{DenseMatrix, Identity};
    use crate::NormalStream;

    fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut s = NormalStream::new(seed);
        let mut d = vec![0.0; rows * cols];
        s.fill(&mut d);
        DenseMatrix::new(Matrix::from_row_major(rows, cols, d).unwrap()).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut v = vec![0.0; n];
        NormalStream::new(seed).fill(&mut v);
        v
    }

    #[test]
    fn init_identity() {
        let st = gkb_init(&Identity::new(2), &[2.0, 0.0]).unwrap();
        assert_eq!(st.beta1, 2.0);
        assert_eq!(st.u[0], vec![1.0, 0.0]);
        assert_eq!(st.bidiag.alphas, vec![1.0]);
        assert_eq!(st.v[0], vec![1.0, 0.0]);
    }

    #[test]
    fn init_diagonal_by_hand() {
        let a = DenseMatrix::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
        let st = gkb_init(&a, &[1.0, 1.0]).unwrap();
        let r2 = core::f64::consts::SQRT_2;
        assert!((st.beta1 - r2).abs() < 1e-15);
        assert!((st.u[0][0] - 1.0 / r2).abs() < 1e-15);
        assert!((st.bidiag.alphas[0] - libm::sqrt(5.0)).abs() < 1e-14);
        let s10 = libm::sqrt(10.0);
        assert!((st.v[0][0] - 3.0 / s10).abs() < 1e-15);
        assert!((st.v[0][1] - 1.0 / s10).abs() < 1e-15);
    }

    #[test]
    fn init_rejects_zero_rhs() {
        assert_eq!(
            gkb_init(&Identity::new(3), &[0.0; 3]).unwrap_err(),
            Error::ZeroRhs
        );
    }

    #[test]
    fn identity_breaks_down_after_one_step() {
        let mut st = gkb_init(&Identity::new(4), &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let err = gkb_step(&mut st, &Identity::new(4), false).unwrap_err();
        assert!(matches!(err, Error::Breakdown { which: "beta", .. }));
        assert_eq!(st.u.len(), 1);
    }

    #[test]
    fn reorthogonalized_factors_hold_invariants() {
        let a = random_dense(50, 30, 11);
        let b = random_vec(50, 12);
        let mut st = gkb_init(&a, &b).unwrap();
        for _ in 0..20 {
            gkb_step(&mut st, &a, true).unwrap();
        }
        let (r1, r2) = st.recurrence_residuals(&a);
        assert!(r1 < 1e-10 && r2 < 1e-10, "{r1} {r2}");
        assert!(orthogonality_loss(&st.u) < 1e-10);
        assert!(orthogonality_loss(&st.v) < 1e-10);
        assert!(st
            .bidiag
            .alphas
            .iter()
            .chain(&st.bidiag.betas)
            .all(|&x| x >= 0.0));
    }

    #[test]
    fn krylov_characterization_and_lsqr_oracle() {
        let a = random_dense(40, 20, 3);
        let b = random_vec(40, 4);
        let m = 5;
        // explicit Krylov basis of AᵀA applied to Aᵀb
        let mut k = vec![a.apply_transpose(&b).unwrap()];
        for _ in 1..m {
            let last = k.last().unwrap();
            let next = a.apply_transpose(&a.apply(last).unwrap()).unwrap();
            k.push(next);
        }
        let kb = orthonormalize(&k, 1e-14);
        let xs = lsqr_solve(&a, &b, m, true).unwrap();
        let mut st = gkb_init(&a, &b).unwrap();
        for _ in 1..m {
            gkb_step(&mut st, &a, true).unwrap();
        }
        assert!(max_principal_angle(&st.v, &kb) < 1e-8);
        // dense oracle: min ‖A K c − b‖
        let ak: Vec<Vec<f64>> = kb.iter().map(|c| a.apply(c).unwrap()).collect();
        let c = lstsq(&Matrix::from_columns(40, &ak), &b).unwrap();
        let x_ref = crate::linalg::combine(&kb, &c, 20);
        let diff = norm2(&crate::linalg::sub(&xs[m - 1], &x_ref));
        assert!(diff < 1e-10 * norm2(&x_ref), "{diff}");
    }

    #[test]
    fn lsqr_identity_and_monotone_residual() {
        let xs = lsqr_solve(&Identity::new(3), &[1.0, 2.0, 3.0], 4, false).unwrap();
        assert_eq!(xs.len(), 1);
        for (x, y) in xs[0].iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - y).abs() < 1e-15);
        }
        let a = random_dense(12, 12, 9);
        let b = random_vec(12, 10);
        let xs = lsqr_solve(&a, &b, 12, true).unwrap();
        let mut prev = f64::INFINITY;
        for x in &xs {
            let r = norm2(&crate::linalg::sub(&a.apply(x).unwrap(), &b));
            assert!(r <= prev * (1.0 + 1e-12));
            prev = r;
        }
        assert!(prev < 1e-8 * norm2(&b));
    }

    #[test]
    fn bidiagonal_shapes() {
        let bd = Bidiagonal {
            alphas: vec![1.0, 2.0],
            betas: vec![3.0, 4.0],
        };
        let m = bd.to_matrix();
        assert_eq!((m.rows(), m.cols()), (3, 2));
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(m[(1, 1)], 2.0);
        assert_eq!(m[(2, 1)], 4.0);
        assert_eq!(m[(0, 1)], 0.0);
    }
}
