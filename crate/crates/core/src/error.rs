use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("unknown feature role `{0}`")]
    UnknownRole(String),

    #[error("unknown discharge destination `{0}`")]
    UnknownDestination(String),

    #[error("unknown drug `{0}`")]
    UnknownDrug(String),

    #[error("dose of `{drug}` recorded on day {day}, before admission")]
    PreAdmissionDose { drug: String, day: i32 },

    #[error("admission `{0}` is excluded for this drug and cannot be labelled")]
    ExcludedAssignment(String),

    #[error("no events: {0}")]
    NoEvents(String),

    #[error("dummy model not futile: validation AUC {auc:.4} after {attempts} seeds")]
    NotFutile { auc: f64, attempts: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
