use thiserror::Error;

/// Errors produced by model construction, factorization, and fitting.
#[derive(Debug, Clone, Error)]
pub enum FgpError {
    /// A Cholesky pivot fell below the positive-definiteness floor.
    #[error("matrix not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not symmetric: {context}")]
    Asymmetric { context: &'static str },

    /// The spatial-dependence parameter lies outside the admissible interval.
    #[error("gamma {gamma} outside admissible interval ({lo}, {hi})")]
    GammaOutOfRange { gamma: f64, lo: f64, hi: f64 },

    /// CAR precision would be asymmetric for the given proximity/Delta pair.
    #[error("proximity and conditional-variance weights yield an asymmetric precision")]
    AsymmetricPrecision,

    /// Eigenvalue bounds of an all-zero proximity matrix are undefined.
    #[error("proximity matrix has no edges; dependence bounds undefined")]
    ZeroMatrix,

    #[error("domain interval is empty or inverted")]
    EmptyDomain,

    #[error("location {index} falls outside the lattice domain")]
    LocationOutsideLattice { index: usize },

    /// X'DX was singular while updating the trend coefficients.
    #[error("covariate Gram matrix is singular")]
    SingularGram,

    /// Data carry no variance; initialization rules are undefined.
    #[error("observed data are degenerate (zero variance)")]
    DegenerateData,

    #[error("holdout set is empty")]
    EmptyHoldout,

    /// Dense simulation of the requested size would exceed the direct-sampling bound.
    #[error("simulation size {n} exceeds dense-sampling bound {max}")]
    SimulationTooLarge { n: usize, max: usize },

    /// The requested covariance family is invalid for the given coordinates.
    #[error("{0}")]
    InvalidCovariance(String),
}

pub type Result<T> = std::result::Result<T, FgpError>;
