use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A numeric parameter is outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Operand shapes do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// Parse failure in a matrix/vector file, with 1-based line number.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// A matrix that must have full column rank does not; `column` is the
    /// first dependent column (0-based).
    #[error("rank deficient input: column {column} is numerically dependent")]
    RankDeficient { column: usize },

    /// An iterative routine hit its iteration cap before meeting its
    /// stopping rule.
    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    /// A computation that needs at least one admissible element got none
    /// (empty sample set, all-zero sampling weights, no valid probes).
    #[error("empty input for {what}: {reason}")]
    EmptyInput { what: &'static str, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn dims(
        context: &'static str,
        expected: impl Into<String>,
        found: impl Into<String>,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.into(),
            found: found.into(),
        }
    }
}
