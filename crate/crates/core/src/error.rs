use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, extents, or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that violates a documented precondition (non-binary mask, size mismatch).
    #[error("validation error: {0}")]
    Validation(String),

    /// A NaN or infinity appeared in a forward value or gradient.
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: String, detail: String },

    /// API misuse, such as calling backward on a node that is not a scalar.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// The synthetic scene generator could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// Checkpoint parse failures and parameter shape audits.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numeric(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
