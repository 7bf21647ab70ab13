use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not line up for an operation.
    #[error("dimension error in {context}: {message}")]
    Dimension { context: String, message: String },

    /// Invalid configuration (layer chain, bit widths, window sizes, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was invoked in the wrong order.
    #[error("state error: {0}")]
    State(String),

    /// NaN or infinity appeared during training.
    #[error("numerical failure: {0}")]
    NonFinite(String),

    /// A CSV cell could not be parsed. Row and column are 1-based; rows count
    /// data records after the header.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    /// Malformed input data that is not tied to a single cell.
    #[error("data error: {0}")]
    Data(String),

    /// Corrupt or unsupported model file.
    #[error("model file format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Dimension {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
