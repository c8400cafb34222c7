//! Dense linear algebra, distributions and hypothesis tests shared by the
//! rest of the crate. Everything here is a pure function of its inputs.

mod dist;
mod linalg;
mod matrix;
mod rng;
mod stats;

pub use dist::{
    beta_reg, erfc, gamma_p, gamma_q, ln_gamma, normal_cdf, normal_two_sided_p, t_cdf,
    t_critical, t_two_sided_p,
};
pub use linalg::{ridge_fit, ridge_solve, spectral_radius, Cholesky, RidgeFit};
pub use matrix::{axpy, dot, norm, Matrix};
pub(crate) use matrix::SparseRows;
pub use rng::RandomSource;
pub use stats::{mann_whitney_u, two_sample_t, TTestKind, TestResult};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("power iteration did not converge within {max_iter} iterations")]
    NonConvergence { max_iter: usize },
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("need at least {needed} samples per group, found {found}")]
    InsufficientSamples { needed: usize, found: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("{0}")]
    InvalidArgument(String),
}
