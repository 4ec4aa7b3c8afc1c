use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scaling is not symmetric (q_tilde_a = {q_tilde_a}, q_tilde_w = {q_tilde_w})")]
    NonSymmetricScaling { q_tilde_a: f64, q_tilde_w: f64 },
    #[error("tolerance must be non-negative, got {0}")]
    InvalidTolerance(f64),
    #[error("scaling is outside the dynamical stability band (q_sigma + q_tilde = {0})")]
    OutsideStabilityBand(f64),
    #[error("condition values {0:?} snap to an impossible sign pattern")]
    InconsistentSigns([f64; 4]),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label must be -1 or +1, got {0}")]
    InvalidLabel(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("sample is empty")]
    EmptySample,
    #[error("input index {0} is not among the tracked inputs")]
    UntrackedInput(usize),
    #[error("state has no initial logit bias")]
    MissingInitBias,
    #[error("incompatible limit variant: {0}")]
    IncompatibleVariant(String),
    #[error("gaussian with non-positive variance ({0})")]
    DegenerateGaussian(f64),
    #[error("logarithm of non-positive value {0}")]
    LogDomain(f64),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("cannot ingest {path}: {reason} (byte offset {offset})")]
    Ingest {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
    #[error("corrupt record in {path} at byte offset {offset}: label byte {label}")]
    CorruptRecord { path: PathBuf, offset: u64, label: u8 },
    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
