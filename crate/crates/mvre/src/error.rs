use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("missing field '{0}'")]
    MissingField(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("rank deficient design matrix; offending columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("coordinate out of range: {0}")]
    CoordinateRange(String),
    #[error("tile not found: {0}")]
    MissingTile(String),
    #[error("malformed image for tile {0}: {1}")]
    MalformedImage(String, String),
    #[error("retries exhausted fetching tile {quadkey} after {attempts} attempts: {last_error}")]
    RetryExhausted {
        quadkey: String,
        attempts: u32,
        last_error: String,
    },
    #[error("strategy {0} is not interpretable")]
    NotInterpretable(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
