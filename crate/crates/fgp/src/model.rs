//! Model data structures: observation sets, the fixed design of a fused
//! Gaussian process, and its free parameters.

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisMatrix, Incidence, Point};
use crate::car::CarStructure;
use crate::error::{FgpError, Result};
use crate::linalg::DenseChol;

/// Observed spatial data: locations, values, covariates, and the known
/// noise profile sigma^2_eps * v(s).
#[derive(Debug, Clone)]
pub struct SpatialDataset {
    pub locations: Vec<Point>,
    pub z: DVector<f64>,
    pub x: DMatrix<f64>,
    pub noise_weights: DVector<f64>,
    pub sigma2_eps: f64,
}

impl SpatialDataset {
    /// Constant-trend dataset with unit noise weights.
    pub fn with_constant_trend(locations: Vec<Point>, z: DVector<f64>, sigma2_eps: f64) -> Self {
        let n = locations.len();
        SpatialDataset {
            locations,
            z,
            x: DMatrix::from_element(n, 1, 1.0),
            noise_weights: DVector::from_element(n, 1.0),
            sigma2_eps,
        }
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    /// Diagonal of V_eps.
    pub fn v_eps(&self) -> DVector<f64> {
        &self.noise_weights * self.sigma2_eps
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.z.len() != n {
            return Err(FgpError::DimensionMismatch {
                context: "dataset values",
                expected: n,
                found: self.z.len(),
            });
        }
        if self.x.nrows() != n {
            return Err(FgpError::DimensionMismatch {
                context: "dataset covariates",
                expected: n,
                found: self.x.nrows(),
            });
        }
        if self.noise_weights.len() != n {
            return Err(FgpError::DimensionMismatch {
                context: "dataset noise weights",
                expected: n,
                found: self.noise_weights.len(),
            });
        }
        if !(self.sigma2_eps > 0.0) || self.noise_weights.iter().any(|&v| !(v > 0.0)) {
            return Err(FgpError::DegenerateData);
        }
        Ok(())
    }
}

/// Graphical-model side of the design: the observation-to-cell incidence
/// and the fixed CAR skeleton (proximity and Delta).
#[derive(Debug, Clone)]
pub struct GgmStructure {
    pub incidence: Incidence,
    pub car: CarStructure,
}

impl GgmStructure {
    pub fn new(incidence: Incidence, car: CarStructure) -> Result<Self> {
        if incidence.n_cols() != car.dim() {
            return Err(FgpError::DimensionMismatch {
                context: "incidence vs CAR cells",
                expected: car.dim(),
                found: incidence.n_cols(),
            });
        }
        Ok(GgmStructure { incidence, car })
    }

    pub fn m(&self) -> usize {
        self.car.dim()
    }
}

/// Fixed structures of a fused Gaussian process: covariates X, basis
/// matrix S, incidence A with its CAR skeleton, and noise diagonal V_eps.
/// Both degenerate variants are legal: `basis` with zero columns gives a
/// pure-CAR model, `ggm: None` a pure low-rank model.
#[derive(Debug, Clone)]
pub struct FgpStructure {
    pub x: DMatrix<f64>,
    pub basis: BasisMatrix,
    pub ggm: Option<GgmStructure>,
    pub v_eps: DVector<f64>,
}

impl FgpStructure {
    pub fn new(
        x: DMatrix<f64>,
        basis: BasisMatrix,
        ggm: Option<GgmStructure>,
        v_eps: DVector<f64>,
    ) -> Result<Self> {
        let n = x.nrows();
        if basis.n_rows() != n {
            return Err(FgpError::DimensionMismatch {
                context: "basis rows",
                expected: n,
                found: basis.n_rows(),
            });
        }
        if v_eps.len() != n {
            return Err(FgpError::DimensionMismatch {
                context: "noise diagonal",
                expected: n,
                found: v_eps.len(),
            });
        }
        if v_eps.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(FgpError::DegenerateData);
        }
        if let Some(g) = &ggm {
            if g.incidence.n_rows() != n {
                return Err(FgpError::DimensionMismatch {
                    context: "incidence rows",
                    expected: n,
                    found: g.incidence.n_rows(),
                });
            }
        }
        Ok(FgpStructure {
            x,
            basis,
            ggm,
            v_eps,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn r(&self) -> usize {
        self.basis.n_cols()
    }

    /// Lattice size; zero when the model has no graphical component.
    pub fn m(&self) -> usize {
        self.ggm.as_ref().map_or(0, |g| g.m())
    }
}

/// Free parameters theta = {beta, K, tau^2, gamma}.
#[derive(Debug, Clone)]
pub struct FgpParams {
    pub beta: DVector<f64>,
    pub k: DMatrix<f64>,
    pub tau2: f64,
    pub gamma: f64,
}

impl FgpParams {
    pub fn validate(&self, structure: &FgpStructure) -> Result<()> {
        if self.beta.len() != structure.p() {
            return Err(FgpError::DimensionMismatch {
                context: "trend coefficients",
                expected: structure.p(),
                found: self.beta.len(),
            });
        }
        if self.k.nrows() != structure.r() || self.k.ncols() != structure.r() {
            return Err(FgpError::DimensionMismatch {
                context: "low-rank covariance",
                expected: structure.r(),
                found: self.k.nrows(),
            });
        }
        if structure.r() > 0 {
            DenseChol::factor_with_jitter(&self.k, 1e-10)?;
        }
        if structure.ggm.is_some() && !(self.tau2 > 0.0) {
            return Err(FgpError::DegenerateData);
        }
        if let Some(g) = &structure.ggm {
            if !g.car.gamma_admissible(self.gamma) {
                let (lo, hi) = g
                    .car
                    .gamma_bounds()
                    .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
                return Err(FgpError::GammaOutOfRange {
                    gamma: self.gamma,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    /// Flattened parameter vector used by the convergence norm: beta,
    /// the upper triangle of K (each symmetric entry once), tau^2, gamma.
    pub fn flat(&self) -> DVector<f64> {
        let r = self.k.nrows();
        let mut v = Vec::with_capacity(self.beta.len() + r * (r + 1) / 2 + 2);
        v.extend(self.beta.iter().copied());
        for j in 0..r {
            for i in 0..=j {
                v.push(self.k[(i, j)]);
            }
        }
        v.push(self.tau2);
        v.push(self.gamma);
        DVector::from_vec(v)
    }
}
