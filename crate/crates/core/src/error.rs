use thiserror::Error;

/// Errors raised across the eigenframework, simulator and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("divergent sum: {0}")]
    DivergentSum(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("singular interpolation threshold: {0}")]
    SingularThreshold(String),

    #[error("root bracket failure: {0}")]
    BracketFailure(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics (as opposed to malformed input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoSolution(_)
                | Error::SingularThreshold(_)
                | Error::BracketFailure(_)
                | Error::NotConverged { .. }
                | Error::SingularMatrix(_)
                | Error::DivergentSum(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
