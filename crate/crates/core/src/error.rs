use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid charging request: {0}")]
    InvalidRequest(String),

    #[error("duplicate ev_id {0} in one slot batch")]
    DuplicateEv(u32),

    #[error("batch mixes slots {0} and {1}")]
    MixedSlots(u32, u32),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("wrong feature count: expected {expected}, got {got}")]
    FeatureCount { expected: usize, got: usize },

    #[error("output directory is locked by another run: {0}")]
    Locked(std::path::PathBuf),

    #[error("missing artifact {0}; run the earlier stage first")]
    MissingArtifact(std::path::PathBuf),

    #[error(transparent)]
    Autodiff(#[from] evguard_autodiff::AutodiffError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
