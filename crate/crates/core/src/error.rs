use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("electrode placement failed: {0}")]
    Electrode(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("linear solve failed: relative residual {residual:e} exceeds {tolerance:e}")]
    SolveFailed { residual: f64, tolerance: f64 },

    #[error("iteration {iteration}: {reason}")]
    Iteration { iteration: usize, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable code, used by the CLI on stderr.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::InvalidMesh(_) => "invalid_mesh",
            Error::Electrode(_) => "electrode",
            Error::Shape { .. } => "shape",
            Error::NotPositiveDefinite { .. } => "not_spd",
            Error::SolveFailed { .. } => "solve_failed",
            Error::Iteration { .. } => "iteration",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    /// Whether the failure is numerical (as opposed to bad usage or input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::SolveFailed { .. } | Error::Iteration { .. }
        )
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
