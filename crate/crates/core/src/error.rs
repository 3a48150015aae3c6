use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Conformance(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure{}: {message}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Numeric {
        message: String,
        iteration: Option<usize>,
    },

    #[error("component {0} is degenerate (zero column)")]
    DegenerateComponent(usize),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("value {0} is outside the loss domain (must be finite and >= 0)")]
    Domain(f64),

    #[error("factorization outside prior support: {0}")]
    Support(String),

    #[error("epsilon calibration failed: {0}")]
    Calibration(String),

    #[error("degenerate run: {0}")]
    DegenerateRun(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric {
            message: message.into(),
            iteration: None,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 numeric, 4 degenerate run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. }
            | Error::Calibration(_)
            | Error::Domain(_)
            | Error::Support(_) => 3,
            Error::DegenerateRun(_) | Error::DegenerateComponent(_) | Error::Degenerate(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
