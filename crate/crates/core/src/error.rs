use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for `{name}`: expected {expected}, got {actual}")]
    Dimension {
        name: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("vertex {index} is at or behind the near plane (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },

    #[error("light coincides with vertex {0}")]
    LightAtVertex(usize),

    #[error("no visible vertices for the pixel energy")]
    NoVisibleVertices,

    #[error("single-class training data: every label is {0}")]
    SingleClass(i8),

    #[error("matrix is not positive definite (pivot {pivot}); try a larger shrinkage epsilon")]
    NotPositiveDefinite { pivot: usize },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported format version {found} in {path} (supported: {supported})")]
    Version {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("truncated or oversized array file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("manifest disagreement in {path}: {field} is {manifest} in the manifest but {actual} in the data")]
    Manifest {
        path: PathBuf,
        field: String,
        manifest: String,
        actual: String,
    },

    #[error("malformed container {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_dim(name: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            name,
            expected,
            actual,
        })
    }
}
