use thiserror::Error;

/// Errors raised by the engines, the bound evaluators and the study drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no admissible support bound: {0}")]
    NoValidSupport(String),

    #[error("invalid time mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("invalid spatial grid: {0}")]
    InvalidGrid(String),

    #[error("argument outside domain: {0}")]
    DomainError(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("epsilon {eps} outside the admissible window (0, {eps_max})")]
    EpsilonOutOfWindow { eps: f64, eps_max: f64 },

    #[error("constant {name} = {value} is not positive")]
    NonpositiveConstant { name: &'static str, value: f64 },

    #[error("bound vacuous at this step size: {0}")]
    BoundVacuous(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
