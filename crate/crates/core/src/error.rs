use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpadError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("intensity {value} at pixel ({row}, {col}) is outside [0, 1]")]
    IntensityOutOfRange { row: usize, col: usize, value: f32 },
    #[error("label {value} at pixel ({row}, {col}) is not below class count {classes}")]
    LabelOutOfRange {
        row: usize,
        col: usize,
        value: u8,
        classes: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid timestep {t} (valid range {lo}..={hi})")]
    InvalidTimestep { t: usize, lo: usize, hi: usize },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("config error on line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error("corpus at {0} contains no samples")]
    EmptyCorpus(PathBuf),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("predictor failure: {0}")]
    PredictorFailure(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("image codec error: {0}")]
    Image(String),
}

impl SpadError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpadError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SpadError::ShapeMismatch(_)
                | SpadError::IntensityOutOfRange { .. }
                | SpadError::LabelOutOfRange { .. }
                | SpadError::InvalidParam(_)
                | SpadError::InvalidTimestep { .. }
                | SpadError::SchemaViolation(_)
                | SpadError::Config { .. }
                | SpadError::HashMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, SpadError>;
