use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    /// `I + B` has no inverse on the grid.
    #[error("singular operator: {0}")]
    SingularOperator(String),

    /// `I - B_eta` is not positive definite (Lambda too close to or above one).
    #[error("not contractive: lambda_max = {lambda} (need < {limit})")]
    NotContractive { lambda: f64, limit: f64 },

    #[error("config error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config field `{field}`: {message}")]
    ConfigField { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
