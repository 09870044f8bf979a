use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("matrix is not skew-symmetric (asymmetry {asymmetry:.3e})")]
    NotSkew { asymmetry: f64 },

    #[error("index out of range: {what} = {index}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("singular configuration ({context}): condition estimate {condition:.3e}")]
    SingularConfiguration { condition: f64, context: String },

    #[error("matrix is not Hurwitz: max real eigenvalue {max_real:.6e}")]
    NotHurwitz { max_real: f64 },

    #[error("linear model is not controllable: rank {rank} < {expected}")]
    Uncontrollable { rank: usize, expected: usize },

    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    RiccatiDiverged { iterations: usize, residual: f64 },

    #[error("{what} did not converge")]
    NoConvergence { what: &'static str },

    #[error("degenerate thrust for quadrotor {quad}: |A| = {norm:.3e}")]
    DegenerateThrust { quad: usize, norm: f64 },

    #[error("heading command is parallel to thrust axis for quadrotor {quad}")]
    ParallelHeading { quad: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("step failed at t = {time:.6} s: {source}")]
    Step {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("failed to parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. }
            | Error::NotSkew { .. }
            | Error::IndexOutOfRange { .. }
            | Error::Dimension { .. }
            | Error::UnknownScenario(_)
            | Error::Parse { .. } => 2,
            Error::Io { .. } => 4,
            Error::Step { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
