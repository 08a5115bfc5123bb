//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Configuration vector has the wrong length or non-finite entries.
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    /// Dimension mismatch in a problem description.
    #[error("invalid dimension: {0}")]
    InvalidDim(String),

    /// Integration step outside the allowed range.
    #[error("invalid step size {0}")]
    InvalidStep(f64),

    /// A linear solve or factorization failed.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Drag estimation cannot proceed (too few samples, uneven timing,
    /// or a near-rest segment with no drag signal).
    #[error("estimation failure: {0}")]
    EstimationFailure(String),

    /// Query time outside the predicted horizon.
    #[error("query time {t} outside horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },

    /// No reachable capture pose along the predicted flight.
    #[error("no capture plan over the prediction horizon")]
    NoCapturePlan,

    /// Compliance QP unsolvable; the caller should hold the joints.
    #[error("safety stop: {0}")]
    SafetyStop(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    /// A recorded track is too short or malformed.
    #[error("invalid track: {0}")]
    InvalidTrack(String),

    /// Rejection sampling gave up.
    #[error("sampling exhausted after {attempts} attempts for {want} specs")]
    SamplingExhausted { attempts: usize, want: usize },

    /// Malformed input file.
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
