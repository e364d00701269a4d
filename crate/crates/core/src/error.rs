use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, band counts or indices that do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A parameter outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// An input value outside the domain of a formula (log of zero, division by zero).
    #[error("domain error: {0}")]
    Domain(String),
    /// A request that exceeds a configured resource cap.
    #[error("resource error: {0}")]
    Resource(String),
    /// A non-finite value surfaced during the forward or backward pass.
    #[error("numeric error in {layer}: {detail}")]
    Numeric { layer: String, detail: String },
    /// Training diverged.
    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Divergence {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },
    /// Malformed container, checkpoint, manifest or config file.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn numeric(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } | Error::Divergence { .. } => 4,
            Error::Parameter(_) => 2,
            _ => 3,
        }
    }
}
