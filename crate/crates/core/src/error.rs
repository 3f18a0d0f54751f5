use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping of errors, used by drivers to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments, configuration or selection parameters.
    Usage,
    /// Malformed or inconsistent input data.
    Data,
    /// Training produced a non-finite loss.
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("reference error: {0}")]
    Reference(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("class {class:?} has no labeled images")]
    EmptyClass { class: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("sampling error: class {class:?} has {available} images, {requested} shots requested")]
    Sampling {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("lookup error: {0}")]
    Lookup(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Selection(_) => ErrorKind::Usage,
            Error::Divergence { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
