use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants are grouped so a front end can map them onto a small exit-code
/// taxonomy: argument problems, data problems, and capability/budget limits.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("work budget exceeded: projected {projected:.3e} units, limit {limit:.3e}")]
    Budget { projected: f64, limit: f64 },

    #[error("arithmetic overflow: {0}")]
    Overflow(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for errors caused by the input data rather than by how the library
    /// was called.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Shape(_) | Error::Validation(_) | Error::Io(_) | Error::Json(_)
        )
    }

    /// True for capability and work-budget limits.
    pub fn is_limit_error(&self) -> bool {
        matches!(self, Error::Capability(_) | Error::Budget { .. } | Error::Overflow(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
