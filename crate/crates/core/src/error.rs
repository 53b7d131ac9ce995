use thiserror::Error;

use crate::drm::Basis;
use crate::panel::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("occasion {occasion} out of range (sample has {num_occasions} occasions)")]
    OccasionOutOfRange { occasion: usize, num_occasions: usize },

    #[error("occasion pair must name two distinct occasions, got ({0}, {0})")]
    SameOccasion(usize),

    #[error("degenerate sample: {0}")]
    DegenerateSample(&'static str),

    #[error("empty input")]
    EmptyInput,

    #[error("level {0} outside (0, 1)")]
    InvalidLevel(f64),

    #[error("basis domain error: {basis} is undefined at y = {value}")]
    BasisDomain { basis: Basis, value: f64 },

    #[error("profile fit failed after {iterations} iterations (max residual {residual:e})")]
    ProfileFitFailed { iterations: usize, residual: f64 },

    #[error(
        "percentile outside range: pooled percentile {xi} falls outside the range \
         [{min}, {max}] of occasion {occasion}; a strong indication that the \
         population has significantly changed"
    )]
    PercentileOutsideRange { xi: f64, occasion: usize, min: f64, max: f64 },

    #[error("convex hull violated: zero is not interior to the constraint residual hull")]
    ConvexHullViolated,

    #[error("solver diverged after {iterations} iterations (max residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("observed statistic failed: {0}")]
    ObservedStatisticFailed(Box<Error>),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sample failed validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl Error {
    /// True for failures of a statistic on data (as opposed to bad input).
    pub fn is_statistic_failure(&self) -> bool {
        matches!(
            self,
            Error::DegenerateSample(_)
                | Error::BasisDomain { .. }
                | Error::ProfileFitFailed { .. }
                | Error::PercentileOutsideRange { .. }
                | Error::ConvexHullViolated
                | Error::SolverDiverged { .. }
                | Error::ObservedStatisticFailed(_)
        )
    }
}
