//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric: max|A - A^T| = {max_asym:e} exceeds {tol:e}")]
    Asymmetric { max_asym: f64, tol: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "eigensolver did not converge within {iters} iterations; \
         best residuals {residuals:?}"
    )]
    NoConvergence {
        iters: usize,
        /// Best-so-far eigenvalue estimates, descending.
        estimates: Vec<f64>,
        /// Residual norms matching `estimates`.
        residuals: Vec<f64>,
    },

    #[error("overflow in layer {layer}: non-finite activations")]
    ActivationOverflow { layer: usize },

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("trajectory tail too short: {len} points, need at least {min}")]
    TailTooShort { len: usize, min: usize },

    #[error("fewer than {min} usable extrema found ({found})")]
    TooFewExtrema { found: usize, min: usize },

    #[error("integration blew up at tau = {tau}")]
    BlowUp { tau: f64 },

    #[error("zero standard deviation in channel {channel}")]
    ZeroStd { channel: usize },

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
