use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Kron reduction failed: H_LL is singular (smallest singular value {smallest_singular_value:e})")]
    ReductionFailure { smallest_singular_value: f64 },

    #[error("operating point did not converge after {iterations} iterations (mismatch {mismatch:e} W)")]
    OperatingPoint { iterations: usize, mismatch: f64 },

    #[error("controller design failed: {0}")]
    Design(String),

    #[error("system identification failed: {0}")]
    Identification(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("scenario aborted at t = {time:.4} s (event {event_index}): {source}")]
    Scenario {
        time: f64,
        event_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }

    /// True for failures of the numerical machinery (design, identification,
    /// power flow) as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::ReductionFailure { .. }
            | Error::OperatingPoint { .. }
            | Error::Design(_)
            | Error::Identification(_) => true,
            Error::Scenario { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Scenario { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::Parse {
                line,
                message: format!("{kind:?}"),
            },
        }
    }
}
