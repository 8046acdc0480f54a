use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The state became non-finite during integration.
    #[error("integration diverged at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("initial state is infeasible: ||X0 a - b|| = {residual:e} exceeds {limit:e}")]
    InfeasibleStart { residual: f64, limit: f64 },

    #[error("degenerate coupling: {0}")]
    DegenerateCoupling(String),

    #[error("gradient bracket not found for target {target} (cost is not strictly convex or is degenerate)")]
    UnboundedGradient { target: f64 },

    #[error("cost of agent {agent} is not coordinate-separable; the oracle only handles separable costs")]
    NotSeparable { agent: usize },

    #[error("config error at line {line}, field `{field}`: {message}")]
    Config {
        line: usize,
        field: String,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
