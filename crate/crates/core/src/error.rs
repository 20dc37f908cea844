use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis `{axis}`: {detail}")]
    Dimension {
        op: &'static str,
        axis: String,
        detail: String,
    },

    #[error("{op}: index {index} out of range (bound {bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("non-finite gradient in parameter `{0}`; training aborted")]
    NonFiniteGradient(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{}:{line}: {message}", path.display())]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("audio error on {}: {message}", path.display())]
    Audio { path: PathBuf, message: String },

    #[error("malformed {what} in {}: {detail}", path.display())]
    Format {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("stage `{stage}` needs the output of `{missing}` (expected {}); run `{missing}` first", path.display())]
    Prerequisite {
        stage: String,
        missing: String,
        path: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot read checkpoint file {}: {source}", path.display())]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt checkpoint manifest {}: {detail}", path.display())]
    CorruptManifest { path: PathBuf, detail: String },

    #[error("checkpoint blob size mismatch: manifest implies {expected} bytes, blob has {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("checkpoint schema error: {0}")]
    Schema(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
