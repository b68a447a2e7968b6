use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Snapshot of estimator state taken when an epoch hits a non-finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub particles: Vec<f64>,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub radii: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("need at least {required} points, got {actual}")]
    TooFewPoints { required: usize, actual: usize },

    #[error("non-finite coordinate at point {point}, dimension {dim}")]
    NonFiniteCoordinate { point: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {context} (particle {particle:?})")]
    NonFinite {
        context: &'static str,
        particle: Option<usize>,
    },

    #[error("zero-mean pretraining stopped after {iterations} iterations with residual {residual}")]
    PretrainDiverged { iterations: usize, residual: f64 },

    #[error("environment fault in trajectory {trajectory}: {reason}")]
    Environment { trajectory: usize, reason: String },

    #[error("epoch {epoch} aborted: non-finite {what}")]
    EpochAborted {
        epoch: usize,
        what: &'static str,
        diagnostics: alloc::boxed::Box<Diagnostics>,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
