use std::path::PathBuf;

/// Errors produced by the phasecorr toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The wrapped Gaussian with zero spread is a Dirac delta and has no density.
    #[error("wrapped Gaussian with sigma = 0 is a point mass and has no density")]
    DegenerateDistribution,

    /// The weighted phasor sum cancelled exactly, so its argument is undefined.
    #[error("weighted phasor sum vanished; combined phase is undefined")]
    DegenerateResultant,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("evaluation budget of {budget} exhausted before the coarse grid ({needed} points) completed")]
    BudgetExhausted { budget: u64, needed: u64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("integration diverged at step {step}: {reason}")]
    IntegrationDiverged { step: u64, reason: String },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
