use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("point is not on the Stiefel manifold: ||Q^T Q - I||_F = {residual:e}")]
    Infeasible { residual: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{what} did not converge after {iterations} iterations (best estimate {best:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        best: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// The adaptive step-size rule produced a value above the configured cap.
    #[error("step-size bound infeasible: need beta_k = {required:e} but upper bound is {upper:e}; raise the upper bound")]
    BetaBound { required: f64, upper: f64 },

    #[error("sign selection inconsistent with sign(X^T Q Q^T) at ({row}, {col})")]
    Selection { row: usize, col: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid image: {0}")]
    Image(String),

    #[error("trace is missing {0}")]
    MissingTrace(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
