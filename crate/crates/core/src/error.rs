use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A lattice index fell outside `-n_max..=n_max` on some axis.
    #[error("index {index:?} outside the truncated basis (n_max = {n_max})")]
    BasisBounds { index: Vec<i64>, n_max: i64 },

    /// An argument violated the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs built on different lattices or otherwise inconsistent setups.
    #[error("configuration error: {0}")]
    Config(String),

    /// A config file parsed but failed a physical or numerical check.
    #[error("validation error: {0}")]
    Validation(String),

    /// Quadrature or root finding did not reach its tolerance.
    #[error("numeric error: {what} (residual estimate {residual:.3e})")]
    Numeric { what: String, residual: f64 },

    /// Time integration produced a non-finite value; the last finite state is kept.
    #[error("integration failure at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
