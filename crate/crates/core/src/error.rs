use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two consecutive positions coincide and no explicit heading was recorded.
    #[error(
        "cannot derive heading at step {step}: vehicle did not move and no heading was recorded"
    )]
    DegenerateHeading { step: usize },

    #[error("horizon out of range: step {step} + {horizon} exceeds track length {len}")]
    HorizonOutOfRange {
        step: usize,
        horizon: usize,
        len: usize,
    },

    #[error("position ({x:.3}, {y:.3}) lies outside the grid extent")]
    OutOfExtent { x: f64, y: f64 },

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("non-finite gradient (loss {loss}, {bad} of {total} coordinates affected)")]
    NonFiniteGradient { loss: f64, bad: usize, total: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("nothing to evaluate: every sample was masked or skipped")]
    EmptyEvaluation,

    #[error("measurement noise {sigma_v} exceeds metric value {metric}")]
    NoiseExceedsMetric { metric: f64, sigma_v: f64 },

    #[error("track too short: {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },

    #[error("polynomial fit failed for track {track}: consensus {inliers} below {required}")]
    FitFailure {
        track: usize,
        inliers: usize,
        required: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
