use thiserror::Error;

use crate::lattice::Representation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("representation mismatch: expected {expected:?}, found {found:?}")]
    RepresentationMismatch {
        expected: Representation,
        found: Representation,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("step too large: {0}")]
    StepTooLarge(String),

    #[error("zero norm: wavefunction has vanished numerically")]
    ZeroNorm,

    #[error("dt too large: exit probability {exit_probability} exceeds 1 at site {site}")]
    DtTooLarge { site: usize, exit_probability: f64 },

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("trajectory {trajectory} aborted at step {step}: {source}")]
    TrajectoryAbort {
        trajectory: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at(self, trajectory: usize, step: usize) -> Self {
        Error::TrajectoryAbort {
            trajectory,
            step,
            source: Box::new(self),
        }
    }

    /// Whether the error comes from the numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::StepTooLarge(_)
            | Error::ZeroNorm
            | Error::DtTooLarge { .. }
            | Error::Instability(_)
            | Error::DegenerateSeries(_) => true,
            Error::TrajectoryAbort { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
