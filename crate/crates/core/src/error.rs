use thiserror::Error;

/// Failure categories surfaced by every module.
///
/// The category is what the CLI reports as its machine-readable error class;
/// `module` names where the failure originated.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error in {module}: {message}")]
    Numeric {
        module: &'static str,
        message: String,
    },

    #[error("{loop_name} loop did not converge after {iterations} iterations (last residual {residual:e})")]
    Convergence {
        module: &'static str,
        loop_name: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn numeric(module: &'static str, message: impl Into<String>) -> Self {
        Error::Numeric {
            module,
            message: message.into(),
        }
    }

    /// Short machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Numeric { .. } => "numeric",
            Error::Convergence { .. } => "convergence",
            Error::Estimation(_) => "estimation",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    pub fn module(&self) -> &'static str {
        match self {
            Error::Numeric { module, .. } | Error::Convergence { module, .. } => module,
            Error::InvalidArgument(_) => "core",
            Error::Estimation(_) => "queue",
            Error::Parse(_) => "cli",
            Error::Io(_) => "cli",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
