//! Conditional autoregressive (CAR) specification of the lattice random
//! field: proximity matrices, admissible dependence range, and the sparse
//! precision Q = Delta^{-1} (I - gamma H) / tau^2.

use nalgebra::DVector;

use crate::basis::{Lattice, LatticeGeometry, Point};
use crate::error::{FgpError, Result};
use crate::linalg::{extreme_eigenvalues, SparseSym};

/// 0/1 proximity from a distance threshold: `H_ij = 1` iff
/// `0 < |s_i - s_j| <= d`.
pub fn proximity_threshold(locations: &[Point], d: f64) -> SparseSym {
    let n = locations.len();
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if locations[i].dist(&locations[j]) <= d {
                triplets.push((i, j, 1.0));
                triplets.push((j, i, 1.0));
            }
        }
    }
    SparseSym::from_triplets(n, &triplets).expect("threshold proximity is symmetric")
}

/// 0/1 proximity from the first-order neighborhood of the lattice graph
/// (left/right on a line, rook moves on a grid).
pub fn proximity_first_order(lat: &Lattice) -> SparseSym {
    let mut triplets = Vec::new();
    match *lat.geometry() {
        LatticeGeometry::Line { m, .. } => {
            for i in 0..m.saturating_sub(1) {
                triplets.push((i, i + 1, 1.0));
                triplets.push((i + 1, i, 1.0));
            }
        }
        LatticeGeometry::Grid { nx, ny, .. } => {
            let idx = |ix: usize, iy: usize| iy * nx + ix;
            for iy in 0..ny {
                for ix in 0..nx {
                    if ix + 1 < nx {
                        triplets.push((idx(ix, iy), idx(ix + 1, iy), 1.0));
                        triplets.push((idx(ix + 1, iy), idx(ix, iy), 1.0));
                    }
                    if iy + 1 < ny {
                        triplets.push((idx(ix, iy), idx(ix, iy + 1), 1.0));
                        triplets.push((idx(ix, iy + 1), idx(ix, iy), 1.0));
                    }
                }
            }
        }
    }
    SparseSym::from_triplets(lat.num_cells(), &triplets).expect("lattice adjacency is symmetric")
}

/// Admissible interval for the spatial-dependence parameter: the
/// reciprocals of the smallest and largest eigenvalues of H. The precision
/// is positive definite exactly for gamma strictly inside.
pub fn gamma_bounds(h: &SparseSym) -> Result<(f64, f64)> {
    if h.nnz() == 0 || h.iter().all(|(_, _, v)| v == 0.0) {
        return Err(FgpError::ZeroMatrix);
    }
    let (lo_eig, hi_eig) = extreme_eigenvalues(h);
    debug_assert!(lo_eig < 0.0 && hi_eig > 0.0, "proximity spectrum must straddle zero");
    Ok((1.0 / lo_eig, 1.0 / hi_eig))
}

/// Relative shrink applied to the open admissibility interval so that
/// optimizers can work on a closed box.
pub const GAMMA_SHRINK: f64 = 1e-6;

/// Fixed part of a CAR model: proximity, conditional-variance weights,
/// and the cached admissibility interval.
#[derive(Debug, Clone)]
pub struct CarStructure {
    h: SparseSym,
    delta: DVector<f64>,
    bounds: Option<(f64, f64)>,
}

impl CarStructure {
    pub fn new(h: SparseSym, delta: DVector<f64>) -> Result<Self> {
        let m = h.dim();
        if delta.len() != m {
            return Err(FgpError::DimensionMismatch {
                context: "CAR conditional-variance weights",
                expected: m,
                found: delta.len(),
            });
        }
        if delta.iter().any(|&d| !(d > 0.0)) {
            return Err(FgpError::AsymmetricPrecision);
        }
        for (i, j, v) in h.iter() {
            if i == j && v != 0.0 {
                return Err(FgpError::AsymmetricPrecision);
            }
            // Delta^{-1}(I - gamma H) symmetric iff h_ij/Delta_i = h_ji/Delta_j
            if i < j {
                let lhs = v / delta[i];
                let rhs = h.get(j, i) / delta[j];
                if (lhs - rhs).abs() > 1e-12 * lhs.abs().max(1.0) {
                    return Err(FgpError::AsymmetricPrecision);
                }
            }
        }
        let bounds = match gamma_bounds(&h) {
            Ok(b) => Some(b),
            Err(FgpError::ZeroMatrix) => None,
            Err(e) => return Err(e),
        };
        Ok(CarStructure { h, delta, bounds })
    }

    pub fn with_identity_delta(h: SparseSym) -> Result<Self> {
        let m = h.dim();
        Self::new(h, DVector::from_element(m, 1.0))
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn proximity(&self) -> &SparseSym {
        &self.h
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    /// `None` when H has no edges; every gamma is then admissible.
    pub fn gamma_bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    /// Closed optimization box strictly inside the open interval.
    pub fn shrunk_bounds(&self) -> Option<(f64, f64)> {
        self.bounds.map(|(lo, hi)| {
            let eps = GAMMA_SHRINK * (hi - lo);
            (lo + eps, hi - eps)
        })
    }

    pub fn gamma_admissible(&self, gamma: f64) -> bool {
        match self.bounds {
            Some((lo, hi)) => gamma > lo && gamma < hi,
            None => true,
        }
    }

    /// Q = Delta^{-1} (I - gamma H) / tau^2, sparse with the pattern of H
    /// plus the full diagonal.
    pub fn precision(&self, tau2: f64, gamma: f64) -> Result<SparseSym> {
        if !(tau2 > 0.0) {
            return Err(FgpError::GammaOutOfRange {
                gamma: tau2,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if !self.gamma_admissible(gamma) {
            let (lo, hi) = self.bounds.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
            return Err(FgpError::GammaOutOfRange { gamma, lo, hi });
        }
        let m = self.dim();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(self.h.nnz() + m);
        for i in 0..m {
            triplets.push((i, i, 1.0 / (tau2 * self.delta[i])));
        }
        if gamma != 0.0 {
            for (i, j, v) in self.h.iter() {
                if i != j && v != 0.0 {
                    triplets.push((i, j, -gamma * v / (tau2 * self.delta[i])));
                }
            }
        }
        SparseSym::from_triplets(m, &triplets)
    }
}

/// A CAR model with its dependence and scale parameters fixed.
#[derive(Debug, Clone)]
pub struct CarModel {
    pub structure: CarStructure,
    pub gamma: f64,
    pub tau2: f64,
}

impl CarModel {
    pub fn new(h: SparseSym, delta: DVector<f64>, gamma: f64, tau2: f64) -> Result<Self> {
        let structure = CarStructure::new(h, delta)?;
        if !structure.gamma_admissible(gamma) {
            let (lo, hi) = structure
                .gamma_bounds()
                .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
            return Err(FgpError::GammaOutOfRange { gamma, lo, hi });
        }
        if !(tau2 > 0.0) {
            return Err(FgpError::DegenerateData);
        }
        Ok(CarModel {
            structure,
            gamma,
            tau2,
        })
    }

    pub fn precision(&self) -> Result<SparseSym> {
        self.structure.precision(self.tau2, self.gamma)
    }
}

/// Free function mirror of [`CarModel::precision`].
pub fn car_precision(model: &CarModel) -> Result<SparseSym> {
    model.precision()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sym_eigen_extremes, DenseChol, SparseChol};
    use approx::assert_relative_eq;

    fn chain_h(m: usize) -> SparseSym {
        let mut t = Vec::new();
        for i in 0..m - 1 {
            t.push((i, i + 1, 1.0));
            t.push((i + 1, i, 1.0));
        }
        SparseSym::from_triplets(m, &t).unwrap()
    }

    #[test]
    fn threshold_keeps_close_pairs_only() {
        let locs = vec![Point::new_1d(0.0), Point::new_1d(0.2), Point::new_1d(1.0)];
        let h = proximity_threshold(&locs, 0.3);
        assert_relative_eq!(h.get(0, 1), 1.0);
        assert_relative_eq!(h.get(1, 0), 1.0);
        assert_relative_eq!(h.get(0, 2), 0.0);
        assert_relative_eq!(h.get(1, 2), 0.0);
        assert_relative_eq!(h.get(0, 0), 0.0);
    }

    #[test]
    fn threshold_on_scenario_grid_is_first_order() {
        let lat = Lattice::line(0.0, 100.0, 450).unwrap();
        let h = proximity_threshold(lat.centers(), 0.3);
        // brute-force neighbor counts: interior nodes have exactly 2
        let counts: Vec<usize> = (0..450)
            .map(|i| (0..450).filter(|&j| h.get(i, j) != 0.0).count())
            .collect();
        assert_eq!(counts[0], 1);
        assert_eq!(counts[449], 1);
        assert!(counts[1..449].iter().all(|&c| c == 2));
    }

    #[test]
    fn threshold_below_min_distance_is_empty() {
        let lat = Lattice::line(0.0, 100.0, 450).unwrap();
        let h = proximity_threshold(lat.centers(), 0.1);
        assert_eq!(h.nnz(), 0);
        assert!(gamma_bounds(&h).is_err());
    }

    #[test]
    fn first_order_chain_and_grid() {
        let line = Lattice::line(0.0, 3.0, 4).unwrap();
        let h = proximity_first_order(&line);
        assert_eq!(h.nnz(), 6); // edges {1-2, 2-3, 3-4} stored twice
        let grid = Lattice::grid((0.0, 3.0), (0.0, 3.0), 3, 3).unwrap();
        let hg = proximity_first_order(&grid);
        let deg: Vec<usize> = (0..9)
            .map(|i| (0..9).filter(|&j| hg.get(i, j) != 0.0).count())
            .collect();
        assert_eq!(deg[0], 2); // corner
        assert_eq!(deg[4], 4); // center
        let big = Lattice::grid((0.0, 10.0), (0.0, 10.0), 10, 10).unwrap();
        let hb = proximity_first_order(&big);
        assert_eq!(hb.nnz(), 2 * 180); // 2 g (g-1) edges on a g x g rook lattice
    }

    #[test]
    fn gamma_bounds_small_graphs() {
        let h3 = chain_h(3);
        let (lo, hi) = gamma_bounds(&h3).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_relative_eq!(lo, -s, epsilon = 1e-10);
        assert_relative_eq!(hi, s, epsilon = 1e-10);

        let h2 = chain_h(2);
        let (lo, hi) = gamma_bounds(&h2).unwrap();
        assert_relative_eq!(lo, -1.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gamma_bounds_lattice_matches_dense_oracle() {
        let lat = Lattice::grid((0.0, 10.0), (0.0, 10.0), 10, 10).unwrap();
        let h = proximity_first_order(&lat);
        let (lo, hi) = gamma_bounds(&h).unwrap();
        let (lo_eig, hi_eig) = sym_eigen_extremes(&h.to_dense());
        assert_relative_eq!(hi, 1.0 / hi_eig, epsilon = 1e-10);
        assert_relative_eq!(lo, 1.0 / lo_eig, epsilon = 1e-10);
    }

    #[test]
    fn precision_independence_at_gamma_zero() {
        let cs = CarStructure::with_identity_delta(chain_h(4)).unwrap();
        let q = cs.precision(2.0, 0.0).unwrap();
        let d = q.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.5 } else { 0.0 };
                assert_relative_eq!(d[(i, j)], want);
            }
        }
    }

    #[test]
    fn precision_chain_pd_inside_bounds() {
        let cs = CarStructure::with_identity_delta(chain_h(3)).unwrap();
        let q = cs.precision(1.0, 0.5).unwrap();
        assert!(SparseChol::factor(&q).is_ok());
        let d = q.to_dense();
        assert_relative_eq!(d[(0, 1)], -0.5);
        assert_relative_eq!(d[(0, 0)], 1.0);
    }

    #[test]
    fn precision_rejects_gamma_outside() {
        let cs = CarStructure::with_identity_delta(chain_h(3)).unwrap();
        match cs.precision(1.0, 0.8) {
            Err(FgpError::GammaOutOfRange { .. }) => {}
            other => panic!("expected gamma rejection, got {other:?}"),
        }
    }

    #[test]
    fn pd_iff_gamma_inside_bounds_with_margin() {
        // sample gammas straddling the interval on several graphs
        for m in [4usize, 7, 12] {
            let h = chain_h(m);
            let (lo, hi) = gamma_bounds(&h).unwrap();
            let cs = CarStructure::with_identity_delta(h).unwrap();
            for frac in [0.0, 0.4, 0.8, 0.999] {
                let g = hi * frac;
                let q = cs.precision(1.0, g).unwrap();
                assert!(SparseChol::factor(&q).is_ok(), "m={m} frac={frac}");
                let g = lo * frac;
                let q = cs.precision(1.0, g).unwrap();
                assert!(SparseChol::factor(&q).is_ok());
            }
            for margin in [1e-3, 0.1] {
                let g = hi * (1.0 + margin);
                let q_dense = {
                    let mut d = cs.proximity().to_dense() * (-g);
                    for i in 0..m {
                        d[(i, i)] = 1.0;
                    }
                    d
                };
                assert!(
                    DenseChol::factor(&q_dense).is_err(),
                    "gamma {g} past the bound must fail"
                );
            }
        }
    }

    #[test]
    fn conditional_moments_match_joint() {
        // dense joint covariance Q^{-1} must reproduce the stated
        // conditional mean weights and variances cell by cell
        let m = 5;
        let tau2 = 1.7;
        let gamma = 0.35;
        let cs = CarStructure::with_identity_delta(chain_h(m)).unwrap();
        let q = cs.precision(tau2, gamma).unwrap().to_dense();
        let qf = DenseChol::factor(&q).unwrap();
        let sigma = qf.inverse();
        // condition each cell on the rest via Schur complements
        for i in 0..m {
            let others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            let sigma_oo = nalgebra::DMatrix::from_fn(m - 1, m - 1, |a, b| {
                sigma[(others[a], others[b])]
            });
            let sigma_io = nalgebra::DVector::from_fn(m - 1, |a, _| sigma[(i, others[a])]);
            let f = DenseChol::factor(&sigma_oo).unwrap();
            let w = f.solve_vec(&sigma_io);
            // weights: gamma on neighbors, 0 elsewhere
            for (a, &j) in others.iter().enumerate() {
                let want = if j.abs_diff(i) == 1 { gamma } else { 0.0 };
                assert_relative_eq!(w[a], want, epsilon = 1e-6);
            }
            let cond_var = sigma[(i, i)] - sigma_io.dot(&w);
            assert_relative_eq!(cond_var, tau2, epsilon = 1e-6);
        }
    }

    #[test]
    fn tau2_scales_covariance_linearly() {
        let cs = CarStructure::with_identity_delta(chain_h(6)).unwrap();
        let q1 = cs.precision(1.0, 0.3).unwrap().to_dense();
        let q2 = cs.precision(2.0, 0.3).unwrap().to_dense();
        let s1 = DenseChol::factor(&q1).unwrap().inverse();
        let s2 = DenseChol::factor(&q2).unwrap().inverse();
        for i in 0..6 {
            for j in 0..6 {
                assert_relative_eq!(s2[(i, j)], 2.0 * s1[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn asymmetric_delta_rejected() {
        let h = chain_h(3);
        let delta = DVector::from_vec(vec![1.0, 2.0, 1.0]);
        // h_ij/delta_i != h_ji/delta_j for unequal weights on a 0/1 graph
        assert!(CarStructure::new(h, delta).is_err());
    }
}
