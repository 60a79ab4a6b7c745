use thiserror::Error;

/// Errors raised by the simulation and bound evaluators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mobile {mobile} is colocated with antenna {antenna}")]
    ZeroDistance { mobile: usize, antenna: usize },

    #[error("no Voronoi vertex: {0}")]
    NoVoronoiVertex(&'static str),

    #[error("path-loss exponent must exceed 2, got {0}")]
    InvalidAlpha(f64),

    #[error("horizon of {horizon} rings too small: omitted tail is about {fraction:e} of the sum")]
    InsufficientHorizon { horizon: usize, fraction: f64 },

    #[error("coherence block shorter than one symbol (T = {0})")]
    CoherenceTooShort(f64),

    #[error("{name} must be {requirement}, got {value}")]
    OutOfDomain {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(name: &'static str, requirement: &'static str, value: f64) -> Self {
        Error::OutOfDomain {
            name,
            requirement,
            value,
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
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
