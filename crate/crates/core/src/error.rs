use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("token id {id} is out of vocabulary (size {vocab_size})")]
    OutOfVocabulary { id: u32, vocab_size: usize },

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize, trace: Vec<f64> },

    #[error("training made no progress after {epochs} epochs (parameters unchanged)")]
    NoProgress { epochs: usize, trace: Vec<f64> },

    #[error(
        "ensemble member {member} reached held-out accuracy {accuracy:.4}, below floor {floor:.4}"
    )]
    EnsembleQuality {
        member: usize,
        accuracy: f64,
        floor: f64,
    },

    #[error("sampling gave up after {attempts} attempts: {reason}")]
    SamplingExhausted { attempts: usize, reason: String },

    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
