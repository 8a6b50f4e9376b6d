//! Dense symmetric factorization and solves.
//!
//! Matrices here are small by construction: the r x r covariance of the
//! low-rank coefficients and the capacitance matrices that appear inside
//! the Woodbury identities. Everything is column-major `nalgebra` storage.

use nalgebra::{DMatrix, DVector};

use crate::error::{FgpError, Result};

/// Relative pivot floor: a pivot at or below `PIVOT_RTOL * max(diag)` is
/// treated as a positive-definiteness failure.
pub const PIVOT_RTOL: f64 = 1e-12;

/// Checks that `m` is square and symmetric to `rtol` relative to its
/// largest entry, with all entries finite.
pub fn check_symmetric(m: &DMatrix<f64>, rtol: f64, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(FgpError::DimensionMismatch {
            context,
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if !scale.is_finite() {
        return Err(FgpError::Asymmetric { context });
    }
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            if (m[(i, j)] - m[(j, i)]).abs() > rtol * scale.max(1.0) {
                return Err(FgpError::Asymmetric { context });
            }
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor of a dense symmetric positive-definite
/// matrix, with its log-determinant.
#[derive(Debug, Clone)]
pub struct DenseChol {
    l: DMatrix<f64>,
    logdet: f64,
}

impl DenseChol {
    /// Factor `m = L L'`. Fails with the index of the first pivot that
    /// drops to or below the relative floor.
    pub fn factor(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(FgpError::DimensionMismatch {
                context: "dense Cholesky",
                expected: n,
                found: m.ncols(),
            });
        }
        let max_diag = (0..n).fold(0.0f64, |a, i| a.max(m[(i, i)]));
        let floor = PIVOT_RTOL * max_diag.max(f64::MIN_POSITIVE);
        let mut l = m.lower_triangle();
        let mut logdet = 0.0;
        for j in 0..n {
            let mut d = l[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > floor) {
                return Err(FgpError::NotPositiveDefinite { pivot: j });
            }
            let root = d.sqrt();
            l[(j, j)] = root;
            logdet += 2.0 * root.ln();
            for i in (j + 1)..n {
                let mut s = l[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / root;
            }
        }
        // zero the strictly upper part left over from lower_triangle copy
        Ok(DenseChol { l, logdet })
    }

    /// Factor `m`, adding `jitter * trace(m)/dim` to the diagonal and
    /// retrying once if the first attempt fails. Used for covariance
    /// updates that are positive semidefinite by construction but may be
    /// numerically rank-deficient.
    pub fn factor_with_jitter(m: &DMatrix<f64>, jitter: f64) -> Result<Self> {
        match Self::factor(m) {
            Ok(f) => Ok(f),
            Err(FgpError::NotPositiveDefinite { .. }) if m.nrows() > 0 => {
                let bump = jitter * m.trace() / m.nrows() as f64;
                let mut m2 = m.clone();
                for i in 0..m.nrows() {
                    m2[(i, i)] += bump;
                }
                Self::factor(&m2)
            }
            Err(e) => Err(e),
        }
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Solves `m x = b` in place for a single right-hand side.
    pub fn solve_vec_mut(&self, b: &mut DVector<f64>) {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        // forward: L y = b
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
        // backward: L' x = y
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_vec_mut(&mut x);
        x
    }

    /// Solves `m X = B` column by column.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for j in 0..b.ncols() {
            let mut col = DVector::from_column_slice(x.column(j).as_slice());
            self.solve_vec_mut(&mut col);
            x.set_column(j, &col);
        }
        x
    }

    /// Explicit inverse; intended for the r x r matrices only.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }
}

/// Extreme eigenvalues (min, max) of a dense symmetric matrix. Test oracle
/// and small-scale path for the admissibility bounds.
pub fn sym_eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn random_spd(dim: usize, shift: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
        &g * g.transpose() + DMatrix::identity(dim, dim) * shift
    }

    #[test]
    fn identity_is_its_own_factor() {
        let f = DenseChol::factor(&DMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!(f.logdet(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(f.l()[(0, 0)], 1.0);
        assert_relative_eq!(f.l()[(2, 2)], 1.0);
    }

    #[test]
    fn diagonal_logdet() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let f = DenseChol::factor(&m).unwrap();
        assert_relative_eq!(f.logdet(), 36.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn logdet_matches_eigenvalue_oracle() {
        let m = random_spd(8, 8.0, 17);
        let f = DenseChol::factor(&m).unwrap();
        let eig = m.clone().symmetric_eigen();
        let oracle: f64 = eig.eigenvalues.iter().map(|v| v.ln()).sum();
        assert_relative_eq!(f.logdet(), oracle, epsilon = 1e-10);
    }

    #[test]
    fn solve_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let f = DenseChol::factor(&m).unwrap();
        let x = f.solve_vec(&DVector::from_vec(vec![8.0, 27.0]));
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn solve_residual_small() {
        let m = random_spd(12, 2.0, 3);
        let f = DenseChol::factor(&m).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let b = DVector::from_fn(12, |_, _| rng.random::<f64>() - 0.5);
        let x = f.solve_vec(&b);
        let resid = (&m * &x - &b).norm() / b.norm();
        assert!(resid <= 1e-10, "residual {resid}");
    }

    #[test]
    fn roundtrip_solve_recovers_input() {
        for seed in 0..5 {
            let m = random_spd(9, 1.5, seed);
            let f = DenseChol::factor(&m).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(100 + seed);
            let x = DVector::from_fn(9, |_, _| rng.random::<f64>() - 0.5);
            let got = f.solve_vec(&(&m * &x));
            assert!((got - &x).norm() / x.norm() <= 1e-8);
        }
    }

    #[test]
    fn reports_failing_pivot() {
        let mut m = DMatrix::identity(4, 4);
        m[(2, 2)] = -1.0;
        match DenseChol::factor(&m) {
            Err(FgpError::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 2),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        // rank-1 outer product is PSD but singular
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        assert!(DenseChol::factor(&m).is_err());
        let f = DenseChol::factor_with_jitter(&m, 1e-10).unwrap();
        assert!(f.logdet().is_finite());
    }

    #[test]
    fn symmetry_check_flags_asymmetric() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 0.5;
        assert!(check_symmetric(&m, 1e-12, "test").is_err());
        m[(1, 0)] = 0.5;
        assert!(check_symmetric(&m, 1e-12, "test").is_ok());
    }
}
