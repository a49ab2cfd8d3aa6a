use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numeric failure{}: {what}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericFailure { step: Option<usize>, what: String },

    #[error("importance-sampling oracle degenerate: effective sample size {ess:.1} < {min}")]
    OracleDegenerate { ess: f64, min: f64 },

    #[error("training diverged at step {step}: loss {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("config error{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },

    #[error("unsupported dimension {0}: only 2-dimensional latents can be plotted")]
    UnsupportedDimension(usize),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(step: Option<usize>, what: impl Into<String>) -> Self {
        Error::NumericFailure {
            step,
            what: what.into(),
        }
    }

    pub(crate) fn config(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) | Error::Checkpoint(_) => 2,
            Error::NumericFailure { .. }
            | Error::OracleDegenerate { .. }
            | Error::TrainingDiverged { .. }
            | Error::DimensionMismatch { .. }
            | Error::UnsupportedDimension(_) => 3,
            Error::Io(_) => 1,
        }
    }
}
