use thiserror::Error;

/// Errors surfaced by the guardkit library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("policy schema violation in field `{field}`: {message}")]
    PolicySchema { field: String, message: String },

    #[error("manifest validation failed: {0}")]
    ManifestInvalid(String),

    #[error("missing label for sample `{sample_id}` under policy `{policy_id}`")]
    MissingLabel { sample_id: String, policy_id: String },

    #[error("pair integrity violated for pair_id `{pair_id}`: {message}")]
    PairIntegrity { pair_id: String, message: String },

    #[error("no samples labeled for policy `{policy_id}`")]
    NoLabeledSamples { policy_id: String },

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("unknown harm category `{0}`")]
    UnknownCategory(String),

    #[error("prompt template missing placeholder `{0}`")]
    MissingPlaceholder(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("permanent backend error (status {status}): {message}")]
    Permanent { status: u16, message: String },

    #[error("metric input error: {0}")]
    Metric(String),

    #[error("empty reward group")]
    EmptyGroup,

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("unknown run id `{0}`")]
    UnknownRun(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
