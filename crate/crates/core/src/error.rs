use thiserror::Error;

/// Broad failure categories, stable across releases so callers can map them to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerics,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parameter outside its domain: {0}")]
    Parameter(String),
    #[error("grid mismatch: {0}")]
    Grid(String),
    #[error("singular ensemble covariance at t = {t}")]
    Singular { t: f64 },
    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: usize },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension { .. }
            | Error::Contract(_)
            | Error::Config(_)
            | Error::Parameter(_) => ErrorKind::Config,
            Error::Grid(_) => ErrorKind::Data,
            Error::Singular { .. } | Error::NoConvergence { .. } | Error::NonFinite { .. } => {
                ErrorKind::Numerics
            }
            Error::Context { source, .. } => source.kind(),
        }
    }

    /// Wraps the error with a human-readable location such as `(t, N, rep)`.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::Dimension {
                context,
                expected,
                found,
            })
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
