use alloc::string::String;
use core::fmt;

/// Errors reported by the learners and numeric kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A latent point fell outside the cube `[-1, +1]^D`.
    LatentOutOfCube { coord: f64, dim: usize },
    /// Array shapes or latent dimensions do not match.
    DimensionMismatch { expected: usize, got: usize, what: &'static str },
    /// An input contained NaN or infinity.
    NonFinite { what: &'static str },
    /// A configuration value is out of its valid range.
    InvalidConfig(String),
    /// A task ended up with zero total instance weight.
    EmptyTaskWeights { task: usize },
    /// A task index outside the trained task set.
    UnknownTask { task: usize, n_tasks: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::LatentOutOfCube { coord, dim } => write!(
                f,
                "latent coordinate {coord} in dimension {dim} lies outside [-1, +1]"
            ),
            Error::DimensionMismatch { expected, got, what } => {
                write!(f, "dimension mismatch for {what}: expected {expected}, got {got}")
            }
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::EmptyTaskWeights { task } => {
                write!(f, "task {task} has zero total instance weight")
            }
            Error::UnknownTask { task, n_tasks } => {
                write!(f, "task index {task} not in trained task set of size {n_tasks}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
