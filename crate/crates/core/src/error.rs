use std::fmt;

/// A single violated structural constraint of a causal parameter set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Entry of the latent→observed-free lower-left block is nonzero.
    ExogeneityA { row: usize, col: usize },
    ExogeneityW { row: usize, col: usize },
    /// Off-diagonal entry of the latent-latent adjacency block.
    LatentOffDiagonal { row: usize, col: usize },
    /// `A_ii · W_ii == 0` for a latent index.
    LatentSelfLoopMissing { index: usize },
    /// Adjacency entry outside `{0, 1}`.
    NonBinary { row: usize, col: usize },
    NonFinite { row: usize, col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ExogeneityA { row, col } => {
                write!(f, "lower-left block of A nonzero at ({row}, {col})")
            }
            Violation::ExogeneityW { row, col } => {
                write!(f, "lower-left block of W nonzero at ({row}, {col})")
            }
            Violation::LatentOffDiagonal { row, col } => {
                write!(f, "latent block of A not diagonal at ({row}, {col})")
            }
            Violation::LatentSelfLoopMissing { index } => {
                write!(f, "latent self-loop missing at index {index}")
            }
            Violation::NonBinary { row, col } => write!(f, "A not binary at ({row}, {col})"),
            Violation::NonFinite { row, col } => write!(f, "non-finite value at ({row}, {col})"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or dimension counts that do not fit together.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("block structure violated: {}", join(.0))]
    Validation(Vec<Violation>),

    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Non-finite values, divergence or non-convergence.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("iteration did not converge after {iterations} steps (last estimate {last_estimate})")]
    NoConvergence { iterations: usize, last_estimate: f64 },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence {
        epoch: usize,
        reason: String,
        trace: Vec<f64>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    /// True for failures caused by the numerics rather than by the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::NoConvergence { .. } | Error::Divergence { .. }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
