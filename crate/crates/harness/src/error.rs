use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] xsync_core::Error),
    #[error(transparent)]
    Sim(#[from] xsync_net::SimError),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("bench config: {0}")]
    Config(String),
    #[error("unknown brick {0}")]
    UnknownBrick(String),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
