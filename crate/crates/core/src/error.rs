use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
///
/// The CLI maps `Validation` and `Io` to exit code 2 and `Numerical` to 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Prefixes the message with the fold that produced it.
    pub(crate) fn in_fold(self, fold: usize) -> Self {
        match self {
            Error::Validation(m) => Error::Validation(format!("fold {fold}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("fold {fold}: {m}")),
            other => other,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) | Error::Csv(_) | Error::Json(_) => "validation",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
