use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KgError>;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Parse {
        path: PathBuf,
        line: usize,
        found: usize,
    },

    #[error("training split is empty after filtering")]
    EmptyTrain,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("self-loop pair: head and tail are both entity {0}")]
    SelfLoop(usize),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("no cluster has two or more entities; cannot sample a pair")]
    NoEligibleCluster,

    #[error("sampler exhausted {attempts} attempts without accepting a triple")]
    SamplerExhausted { attempts: usize },

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("wrong model variant: expected {expected}, found {found}")]
    WrongVariant {
        expected: &'static str,
        found: &'static str,
    },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

impl KgError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KgError::Io {
            path: path.into(),
            source,
        }
    }
}
