//! Error types shared across the pipeline.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Array dimensions do not satisfy an operation's contract.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    /// A precondition on argument values was violated.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Header bytes could not be parsed.
    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    /// Payload shorter or longer than the header implies.
    #[error("truncated payload in {path}: header implies {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    /// Header declares an encoding this implementation does not read.
    #[error("unsupported encoding in {path}: {what}")]
    UnsupportedEncoding { path: PathBuf, what: String },

    /// Training produced a non-finite loss; carries the last finite values
    /// seen so the failure can be localized.
    #[error("non-finite loss at epoch {epoch}, step {step} (last finite losses: {last_finite:?})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        last_finite: Vec<f64>,
    },

    /// Two checkpoints cannot be combined; lists the differing fields.
    #[error("incompatible checkpoints, differing fields: {fields:?}")]
    Incompatible { fields: Vec<String> },

    /// A pipeline stage was invoked before its upstream stage produced its
    /// artifacts.
    #[error("missing artifact from stage `{stage}`: {path}")]
    MissingStage { stage: String, path: PathBuf },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {message}")]
    Json { path: PathBuf, message: String },
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
