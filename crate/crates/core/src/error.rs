use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no feasible design found after {attempts} generations")]
    NoFeasibleDesign { attempts: usize },

    #[error("rank-deficient design matrix: feature `{feature}` is degenerate")]
    RankDeficient { feature: String },

    #[error("degenerate regression input: {0}")]
    Degenerate(String),

    #[error("quantile curves cross at x = {x}: low {low} > high {high}")]
    QuantileCrossing { x: f64, low: f64, high: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss during update: {0}")]
    NonFiniteLoss(String),

    #[error("no feasible particle after {iterations} iterations (best violation {best_violation})")]
    NoFeasibleParticle { iterations: usize, best_violation: f64 },

    #[error("stage `{stage}` needs artifact {path}")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
