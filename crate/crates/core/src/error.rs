use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("cannot blend rotations: {0}")]
    Blend(String),
    #[error("operation requires {expected} mode")]
    Mode { expected: &'static str },
    #[error("stamp {stamp} is not newer than {previous} for replica {replica}")]
    Stamp {
        replica: String,
        stamp: String,
        previous: String,
    },
    #[error("objects have different identities: {0}")]
    Identity(String),
}
