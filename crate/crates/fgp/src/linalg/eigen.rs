//! Extreme eigenvalues of sparse symmetric matrices.
//!
//! Small matrices go through a dense symmetric eigendecomposition; large
//! ones use plain Lanczos with a deterministic start vector, which is
//! accurate for the spectrum edges long before the full decomposition
//! would be affordable.

use nalgebra::{DMatrix, DVector};

use crate::linalg::dense::sym_eigen_extremes;
use crate::linalg::sparse::SparseSym;

/// Above this dimension the dense path is replaced by Lanczos.
pub const DENSE_EIG_LIMIT: usize = 1024;

const LANCZOS_MAX_ITER: usize = 160;
const LANCZOS_RTOL: f64 = 1e-8;
/// Lanczos Ritz values sit inside the true spectrum; widen the estimate so
/// downstream admissibility intervals stay conservative.
const LANCZOS_INFLATE: f64 = 1e-3;

/// Smallest and largest eigenvalues of `a`.
pub fn extreme_eigenvalues(a: &SparseSym) -> (f64, f64) {
    if a.dim() <= DENSE_EIG_LIMIT {
        sym_eigen_extremes(&a.to_dense())
    } else {
        lanczos_extremes(a)
    }
}

fn deterministic_start(n: usize) -> DVector<f64> {
    let mut state: u64 = 0x9e3779b97f4a7c15;
    let mut v = DVector::zeros(n);
    for i in 0..n {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        v[i] = ((state >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
    }
    let norm = v.norm();
    v / norm
}

fn tridiag_extremes(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let k = alphas.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    sym_eigen_extremes(&t)
}

fn lanczos_extremes(a: &SparseSym) -> (f64, f64) {
    let n = a.dim();
    let mut v_prev = DVector::zeros(n);
    let mut v = deterministic_start(n);
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut last = (f64::NAN, f64::NAN);
    for it in 0..LANCZOS_MAX_ITER.min(n) {
        let mut w = a.matvec(&v);
        let alpha = v.dot(&w);
        w.axpy(-alpha, &v, 1.0);
        if let Some(&beta_prev) = betas.last() {
            w.axpy(-beta_prev, &v_prev, 1.0);
        }
        alphas.push(alpha);
        let beta = w.norm();
        if beta < 1e-14 * alpha.abs().max(1.0) {
            break; // invariant subspace reached
        }
        betas.push(beta);
        v_prev = std::mem::replace(&mut v, w / beta);

        if it % 8 == 7 || it + 1 == LANCZOS_MAX_ITER.min(n) {
            let (lo, hi) = tridiag_extremes(&alphas, &betas[..betas.len() - 1]);
            let spread = (hi - lo).abs().max(1e-30);
            if (lo - last.0).abs() + (hi - last.1).abs() < LANCZOS_RTOL * spread {
                last = (lo, hi);
                break;
            }
            last = (lo, hi);
        }
    }
    if last.0.is_nan() {
        let blen = betas.len().min(alphas.len().saturating_sub(1));
        last = tridiag_extremes(&alphas, &betas[..blen]);
    }
    let spread = (last.1 - last.0).abs().max(1e-30);
    (
        last.0 - LANCZOS_INFLATE * spread,
        last.1 + LANCZOS_INFLATE * spread,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn chain_adjacency(m: usize) -> SparseSym {
        let mut t = Vec::new();
        for i in 0..m {
            t.push((i, i, 0.0));
            if i + 1 < m {
                t.push((i, i + 1, 1.0));
                t.push((i + 1, i, 1.0));
            }
        }
        SparseSym::from_triplets(m, &t).unwrap()
    }

    #[test]
    fn dense_path_chain() {
        // path-graph adjacency eigenvalues are 2 cos(k pi / (m+1))
        let m = 31;
        let (lo, hi) = extreme_eigenvalues(&chain_adjacency(m));
        let expect = 2.0 * (std::f64::consts::PI / (m as f64 + 1.0)).cos();
        assert_relative_eq!(hi, expect, epsilon = 1e-10);
        assert_relative_eq!(lo, -expect, epsilon = 1e-10);
    }

    #[test]
    fn lanczos_path_brackets_spectrum() {
        let m = 5000;
        let (lo, hi) = extreme_eigenvalues(&chain_adjacency(m));
        let expect = 2.0 * (std::f64::consts::PI / (m as f64 + 1.0)).cos();
        // estimates must bracket conservatively and land close
        assert!(hi >= expect - 1e-6, "hi {hi} vs {expect}");
        assert!(hi <= 2.2);
        assert!(lo <= -expect + 1e-6);
        assert!(lo >= -2.2);
        assert!((hi - expect).abs() < 0.02);
    }
}
