//! SPD inner-product machinery.
//!
//! A symmetric positive definite matrix `S` defines the scalar product
//! `<x, y>_S = x' S y` and the norm `|x|_S`. The Cholesky factor `L`
//! (with `S = L L'`) gives an isometry `x -> L' x` between the `S`-geometry
//! and the plain Euclidean one, which the geometry module uses to reduce
//! metric projections to Euclidean ones.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Hard cap on the ambient dimension. Everything here is dense.
pub const MAX_DIM: usize = 64;

const SYM_RTOL: f64 = 1e-12;

/// An SPD matrix together with its Cholesky factorization and inverse.
///
/// Immutable after construction; cheap to clone relative to the solves it
/// backs, and safe to share across threads.
#[derive(Debug, Clone)]
pub struct SpdMetric {
    dim: usize,
    s: DMatrix<f64>,
    l: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// true iff S is a positive multiple of the identity
    scalar: bool,
    /// true iff S is diagonal
    diagonal: bool,
}

impl SpdMetric {
    /// Build from a symmetric positive definite matrix.
    ///
    /// Fails with `InvalidArgument` when the matrix is not square, not
    /// symmetric to within `1e-12` relative tolerance, larger than
    /// [`MAX_DIM`], or not positive definite (Cholesky failure).
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        let dim = s.nrows();
        if dim == 0 || s.ncols() != dim {
            return Err(Error::invalid(format!(
                "metric must be square and non-empty, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        if dim > MAX_DIM {
            return Err(Error::invalid(format!(
                "dimension {dim} exceeds the supported maximum {MAX_DIM}"
            )));
        }
        let scale = s.norm();
        let asym = (&s - s.transpose()).norm();
        if asym > SYM_RTOL * scale.max(1.0) {
            return Err(Error::invalid(format!(
                "metric is not symmetric: |S - S'| = {asym:.3e} vs |S| = {scale:.3e}"
            )));
        }
        // Symmetrize exactly before factorizing so L L' reproduces what we store.
        let s = (&s + s.transpose()) * 0.5;
        let chol = Cholesky::new(s.clone())
            .ok_or_else(|| Error::invalid("metric is not positive definite"))?;
        let l = chol.l();
        let s_inv = chol.inverse();

        let mut diagonal = true;
        for i in 0..dim {
            for j in 0..dim {
                if i != j && s[(i, j)].abs() > 1e-14 * scale.max(1.0) {
                    diagonal = false;
                }
            }
        }
        let s00 = s[(0, 0)];
        let scalar = diagonal && (0..dim).all(|i| (s[(i, i)] - s00).abs() <= 1e-14 * s00);

        Ok(SpdMetric { dim, s, l, s_inv, chol, scalar, diagonal })
    }

    /// The identity metric on `R^dim` (plain Euclidean geometry).
    pub fn identity(dim: usize) -> Self {
        SpdMetric::new(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.s_inv
    }

    /// Lower-triangular Cholesky factor, `S = L L'`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn is_identity_like(&self) -> bool {
        self.scalar && (self.s[(0, 0)] - 1.0).abs() <= 1e-14
    }

    /// Is S a positive multiple of the identity?
    pub fn is_scalar(&self) -> bool {
        self.scalar
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector has dimension {}, metric expects {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `<x, y>_S = x' S y`.
    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(x.dot(&(&self.s * y)))
    }

    /// `|x|_S`. Panics never; dimension mismatch is an error.
    pub fn norm(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.inner(x, x)?.max(0.0).sqrt())
    }

    /// Isometry to Euclidean coordinates: `x -> L' x` (so `|L'x|_2 = |x|_S`).
    pub fn to_isotropic(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(self.l.transpose() * x)
    }

    /// Exact inverse of [`to_isotropic`](Self::to_isotropic): solves `L' x = y`.
    pub fn from_isotropic(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(y)?;
        self.l
            .transpose()
            .solve_upper_triangular(y)
            .ok_or_else(|| Error::invalid("singular Cholesky factor"))
    }

    /// `S^{-1} v` through the Cholesky factorization.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(v)?;
        Ok(self.chol.solve(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_spd(dim: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::seed::rng(seed);
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5
    }

    #[test]
    fn inner_identity_orthogonal_basis() {
        let m = SpdMetric::identity(2);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let y = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(m.inner(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn inner_diagonal_expansion() {
        let m = SpdMetric::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_abs_diff_eq!(m.inner(&x, &x).unwrap(), 5.0, epsilon = 1e-14);
    }

    #[test]
    fn inner_matches_triple_loop_oracle() {
        // naive oracle: sum_ij x_i S_ij y_j
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let m = SpdMetric::new(s.clone()).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let y = DVector::from_vec(vec![0.0, 1.0]);
        let mut oracle = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                oracle += x[i] * s[(i, j)] * y[j];
            }
        }
        assert_eq!(oracle, 1.0);
        assert_abs_diff_eq!(m.inner(&x, &y).unwrap(), oracle, epsilon = 1e-14);
    }

    #[test]
    fn isotropic_diagonal_square_root() {
        let m = SpdMetric::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]))).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let y = m.to_isotropic(&x).unwrap();
        assert_abs_diff_eq!(y[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(y[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(y.norm_squared(), m.inner(&x, &x).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn isotropic_round_trip_and_norm_identity() {
        for seed in 0..10u64 {
            let dim = 1 + (seed as usize % 6);
            let m = SpdMetric::new(random_spd(dim, seed)).unwrap();
            let mut rng = crate::seed::rng(1000 + seed);
            for _ in 0..10 {
                let x = DVector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0));
                let y = m.to_isotropic(&x).unwrap();
                let back = m.from_isotropic(&y).unwrap();
                assert!((&back - &x).norm() <= 1e-10 * (1.0 + x.norm()));
                let ns = m.norm(&x).unwrap();
                assert!((y.norm() - ns).abs() <= 1e-10 * (1.0 + ns));
                if x.norm() > 1e-9 {
                    assert!(m.inner(&x, &x).unwrap() > 0.0, "positive definiteness");
                }
            }
        }
    }

    #[test]
    fn factorization_invariants() {
        for seed in 0..8u64 {
            let dim = 2 + (seed as usize % 5);
            let s = random_spd(dim, 77 + seed);
            let m = SpdMetric::new(s.clone()).unwrap();
            let recon = m.factor() * m.factor().transpose();
            assert!((&recon - m.matrix()).norm() <= 1e-10 * m.matrix().norm());
            let id = m.matrix() * m.inverse();
            assert!((&id - DMatrix::identity(dim, dim)).norm() <= 1e-8);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(SpdMetric::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(SpdMetric::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(SpdMetric::new(DMatrix::zeros(0, 0)).is_err());
        assert!(SpdMetric::new(DMatrix::identity(65, 65)).is_err());
        let m = SpdMetric::identity(2);
        assert!(m.inner(&DVector::zeros(3), &DVector::zeros(2)).is_err());
    }
}
