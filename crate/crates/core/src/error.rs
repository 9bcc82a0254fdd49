use thiserror::Error;

use crate::params::ParamStore;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed configuration or an argument outside its admissible range.
    #[error("config error: {0}")]
    Config(String),

    /// A mask row admits no column.
    #[error("mask error: {0}")]
    Mask(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Model input outside the domain of an embedding.
    #[error("input error: {0}")]
    Input(String),

    /// An object was used before it was fully initialised.
    #[error("state error: {0}")]
    State(String),

    /// A declared column is missing from a data source.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite loss. Carries the last parameters for
    /// which every loss was finite.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        last_good: Box<ParamStore>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Data(format!("{other:?}")),
        }
    }
}
