//! Error type shared by every fitter and estimator in the crate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input violated a documented precondition (range, length, finiteness).
    #[error("domain error: {0}")]
    Domain(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    Singular { pivot: usize, value: f64 },

    /// The design matrix does not have full column rank.
    #[error("design matrix is rank deficient: column {column} is (nearly) a combination of earlier columns")]
    RankDeficient { column: usize },

    /// Adaptive-lasso pilot coefficients of zero magnitude (1-based covariate indices).
    #[error("degenerate adaptive weights: pilot coefficients for covariates {0:?} are zero")]
    DegenerateWeight(Vec<usize>),

    /// A fit whose total check loss is exactly zero; log-based criteria are undefined.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Kernel weights collapsed (non-finite or all zero).
    #[error("bandwidth too small: {0}")]
    Bandwidth(String),

    /// A root finder or series evaluation failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed scenario file or basis/estimator string.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Short machine-readable category, stable across versions.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Singular { .. } => "singular",
            Error::RankDeficient { .. } => "rank",
            Error::DegenerateWeight(_) => "degenerate-weight",
            Error::DegenerateFit(_) => "degenerate-fit",
            Error::Bandwidth(_) => "bandwidth",
            Error::Numeric(_) => "numeric",
            Error::Parse(_) => "parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
