use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model specification: {0}")]
    Spec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The evaluation point sits on a kink where a derivative is undefined.
    #[error("degenerate evaluation point: {0}")]
    Degenerate(String),

    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("row {row}, column `{column}`: {message}")]
    Csv { row: usize, column: String, message: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// True for errors caused by bad user input: malformed or missing files, configs, arguments.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dimension(_)
            | Error::Spec(_)
            | Error::InvalidArgument(_)
            | Error::Csv { .. }
            | Error::Config(_)
            | Error::Json(_) => true,
            Error::Io(e) => e.kind() == std::io::ErrorKind::NotFound,
            Error::Context { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
