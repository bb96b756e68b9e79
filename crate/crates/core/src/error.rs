use thiserror::Error;

use crate::lpgd::IterTrace;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum SmfError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid value for `{field}`: {msg}")]
    InvalidConfig { field: &'static str, msg: String },

    #[error("matrix is rank deficient: smallest singular value {sigma_min:e} below {threshold:e}")]
    RankDeficient { sigma_min: f64, threshold: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("solver diverged at iteration {iter}")]
    Diverged {
        iter: usize,
        last_finite: Option<Box<IterTrace>>,
    },

    #[error("inner solver did not converge (residual {residual:e})")]
    NonConvergence { residual: f64 },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SmfError {
    pub(crate) fn config(field: &'static str, msg: impl Into<String>) -> Self {
        SmfError::InvalidConfig {
            field,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        SmfError::Shape(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, SmfError>;
