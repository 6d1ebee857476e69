//! Dense symmetric linear algebra in a fixed `B`-weighted geometry.
//!
//! A [`NormContext`] owns the SPD matrix `B` together with its Cholesky factor
//! `C` (`C Cᵀ = B`). Primal norms are `⟨Bx, x⟩^{1/2}`, dual norms are
//! `⟨g, B⁻¹g⟩^{1/2}`.
//!
//! A [`HessianSnapshot`] stores the `B`-orthogonal eigendecomposition
//! `H = U Λ Uᵀ`, `U Uᵀ = B`, obtained from the ordinary eigendecomposition of
//! the congruent matrix `C⁻¹ H C⁻ᵀ = V Λ Vᵀ` with `U = C V`. Once it is
//! available every shifted system `(H + τB) h = −g` costs `O(d²)`.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used by every symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-12;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Checks symmetry to [`SYMMETRY_TOL`] relative to the largest entry and
/// returns the symmetrized matrix `(M + Mᵀ)/2`.
pub fn symmetrize_checked(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m)?;
    let scale = max_abs(m);
    let asym = max_abs(&(m - m.transpose()));
    let tolerance = SYMMETRY_TOL * scale;
    if asym > tolerance {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance,
        });
    }
    Ok((m + m.transpose()) * 0.5)
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// The SPD matrix `B` that fixes the coordinate system, with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct NormContext {
    b: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl NormContext {
    pub fn new(b: DMatrix<f64>) -> Result<Self> {
        let b = symmetrize_checked(&b)?;
        if b.nrows() == 0 {
            return Err(Error::InvalidConfig("empty norm matrix".into()));
        }
        let chol = Cholesky::new(b.clone())
            .ok_or(Error::NotPositiveDefinite)?
            .unpack();
        if chol.diagonal().iter().any(|&p| p.is_nan() || p <= 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { b, chol })
    }

    /// Euclidean geometry, `B = I`.
    pub fn identity(dim: usize) -> Self {
        Self {
            b: DMatrix::identity(dim, dim),
            chol: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Lower-triangular `C` with `C Cᵀ = B`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `B x`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(&self.b * x)
    }

    /// `C⁻¹ g`, whose Euclidean length is the dual norm of `g`.
    pub fn whiten(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), g.len())?;
        Ok(self
            .chol
            .solve_lower_triangular(g)
            .expect("Cholesky factor has a positive diagonal"))
    }

    /// `B⁻¹ g` through two triangular solves.
    pub fn solve(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.whiten(g)?;
        Ok(self
            .chol
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal"))
    }

    pub fn primal_norm(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        // ‖Cᵀx‖₂ avoids the cancellation of forming ⟨Bx, x⟩ directly.
        Ok((self.chol.transpose() * x).norm())
    }

    pub fn dual_norm(&self, g: &DVector<f64>) -> Result<f64> {
        Ok(self.whiten(g)?.norm())
    }

    /// `C⁻¹ H C⁻ᵀ`, the Hessian expressed in whitened coordinates.
    pub fn congruence(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), h.nrows())?;
        check_dim(self.dim(), h.ncols())?;
        let left = self
            .chol
            .solve_lower_triangular(h)
            .expect("Cholesky factor has a positive diagonal");
        let both = self
            .chol
            .solve_lower_triangular(&left.transpose())
            .expect("Cholesky factor has a positive diagonal");
        Ok((&both + both.transpose()) * 0.5)
    }

    /// Eigenvalues of `B^{-1/2} H B^{-1/2}` in ascending order.
    pub fn relative_eigenvalues(&self, h: &DMatrix<f64>) -> Result<Vec<f64>> {
        let h = symmetrize_checked(h)?;
        let a = self.congruence(&h)?;
        let mut vals: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::EigSolverFailure("non-finite eigenvalue".into()));
        }
        vals.sort_by(f64::total_cmp);
        Ok(vals)
    }
}

/// `[−λ_min(B^{-1/2} H B^{-1/2})]₊` for an arbitrary symmetric `H`.
pub fn xi_of(ctx: &NormContext, h: &DMatrix<f64>) -> Result<f64> {
    let vals = ctx.relative_eigenvalues(h)?;
    Ok((-vals[0]).max(0.0))
}

/// Factorized Hessian `∇²f(z) = U Λ Uᵀ` with `U Uᵀ = B`.
#[derive(Debug)]
pub struct HessianSnapshot {
    z: DVector<f64>,
    u: DMatrix<f64>,
    /// `U⁻ᵀ = C⁻ᵀ V`. Its columns are the `B`-orthonormal eigenvectors.
    w: DMatrix<f64>,
    eigvals: DVector<f64>,
    n_solves: AtomicUsize,
}

impl Clone for HessianSnapshot {
    fn clone(&self) -> Self {
        Self {
            z: self.z.clone(),
            u: self.u.clone(),
            w: self.w.clone(),
            eigvals: self.eigvals.clone(),
            n_solves: AtomicUsize::new(self.n_solves()),
        }
    }
}

impl HessianSnapshot {
    /// Eigendecomposition of `C⁻¹ H C⁻ᵀ`; costs `O(d³)`.
    ///
    /// Eigenvalues are sorted ascending and every eigenvector is signed so
    /// that its entry of largest magnitude (the first one on ties) is
    /// nonnegative.
    pub fn factorize(ctx: &NormContext, h: &DMatrix<f64>, z: DVector<f64>) -> Result<Self> {
        let d = ctx.dim();
        check_dim(d, z.len())?;
        check_dim(d, h.nrows())?;
        let h = symmetrize_checked(h)?;
        let a = ctx.congruence(&h)?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::EigSolverFailure("non-finite Hessian entry".into()));
        }
        let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0)
            .ok_or_else(|| Error::EigSolverFailure("eigensolver did not converge".into()))?;

        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

        let mut v = DMatrix::zeros(d, d);
        let mut eigvals = DVector::zeros(d);
        for (dst, &src) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(src).into_owned();
            let mut lead = 0;
            for i in 1..d {
                if col[i].abs() > col[lead].abs() {
                    lead = i;
                }
            }
            if col[lead] < 0.0 {
                col.neg_mut();
            }
            v.set_column(dst, &col);
            eigvals[dst] = eig.eigenvalues[src];
        }

        let u = ctx.factor() * &v;
        let w = ctx
            .factor()
            .tr_solve_lower_triangular(&v)
            .expect("Cholesky factor has a positive diagonal");
        Ok(Self {
            z,
            u,
            w,
            eigvals,
            n_solves: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    /// Point at which the Hessian was evaluated.
    pub fn point(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// `B`-orthonormal eigenvectors, one per column, matching [`Self::eigvals`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn min_eigval(&self) -> f64 {
        self.eigvals[0]
    }

    pub fn n_solves(&self) -> usize {
        self.n_solves.load(Ordering::Relaxed)
    }

    /// Coordinates of a gradient in the eigenbasis, `U⁻¹ g`. Their Euclidean
    /// norm equals the dual norm of `g`.
    pub fn coords(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), g.len())?;
        Ok(self.w.tr_mul(g))
    }

    /// Maps eigenbasis coordinates back to a primal vector, `U⁻ᵀ y`. The
    /// primal norm of the result is `‖y‖₂`.
    pub fn from_coords(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.w * y
    }

    /// Solves `(∇²f(z) + τB) h = −g`.
    pub fn solve_shifted(&self, tau: f64, g: &DVector<f64>) -> Result<DVector<f64>> {
        let shifted_min = self.min_eigval() + tau;
        if shifted_min.is_nan() || shifted_min <= 0.0 {
            return Err(Error::SingularShift { shifted_min });
        }
        let mut y = self.coords(g)?;
        for (yi, &li) in y.iter_mut().zip(self.eigvals.iter()) {
            *yi = -*yi / (li + tau);
        }
        self.n_solves.fetch_add(1, Ordering::Relaxed);
        Ok(self.from_coords(&y))
    }

    /// Second-order stationarity measure `[−λ_min]₊` at the snapshot point.
    pub fn xi(&self) -> f64 {
        (-self.min_eigval()).max(0.0)
    }
}
