use thiserror::Error;

/// Errors raised by the library. A failed check is never an error; it is
/// reported as FAIL inside the corresponding report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("integrand error at node {node}: {message}")]
    Integrand { node: usize, message: String },
    #[error("divergent tail: kernel decay {decay} does not exceed growth exponent {growth}")]
    DivergentTail { decay: f64, growth: f64 },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("degenerate point: {0}")]
    Degenerate(String),
    #[error("truncation error: {0}")]
    Truncation(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
