use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("not a density matrix: {0}")]
    InvalidState(String),

    #[error("class {0} is not supported by this operation")]
    UnsupportedClass(String),

    #[error("configuration required: {0}")]
    ConfigurationRequired(String),

    #[error("did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        last_iterate: Box<crate::qcore::CMatrix>,
    },

    #[error("degenerate step: normalizer {0:.3e}")]
    DegenerateStep(f64),

    #[error("data error in field `{field}`: {message}")]
    Data { field: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
