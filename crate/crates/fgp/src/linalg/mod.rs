//! Dense and sparse symmetric linear algebra shared by the whole crate:
//! Cholesky-type factorizations, triangular solves, and log-determinants.

pub mod dense;
pub mod eigen;
pub mod sparse;

pub use dense::{check_symmetric, sym_eigen_extremes, DenseChol};
pub use eigen::extreme_eigenvalues;
pub use sparse::{Ordering, SparseChol, SparseSym};
