use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate samples: dimension {dim} has zero variance")]
    DegenerateSamples { dim: usize },

    #[error("Cholesky factorization failed (last jitter tried {jitter:e})")]
    Factorization { jitter: f64 },

    #[error("GP fitting failed: {0}")]
    Fit(String),

    #[error("map evaluation failed at {lambda:?}: {message}")]
    MapEvaluation { lambda: Vec<f64>, message: String },

    #[error(
        "target unreachable: all {samples} ratios are zero ({violations} predictability violations)"
    )]
    Unreachable { samples: usize, violations: usize },

    #[error("no samples accepted after {batches} batches")]
    NoAcceptance { batches: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::Dimension { expected, got })
        }
    }
}
