use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative solver ran out of budget.
    #[error("nonconvergence: {what} (last residual {residual:e}, bracket [{lo:e}, {hi:e}])")]
    NonConvergence {
        what: String,
        residual: f64,
        lo: f64,
        hi: f64,
    },

    /// Fixed-point iteration failed; carries the residual history.
    #[error("fixed point failed: {what} after {} iterations", history.len())]
    FixedPoint { what: String, history: Vec<f64> },

    /// A structural bound was broken during a run.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("configuration error in `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::NonConvergence { .. } | Error::FixedPoint { .. } => 3,
            Error::Invariant(_) => 4,
            Error::Domain(_) | Error::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
