use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("unknown category {label:?} for feature {feature:?}")]
    UnknownCategory { feature: String, label: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("background for {variant} is empty: {reason}")]
    EmptyBackground { variant: String, reason: String },
    #[error("counterfactual search exhausted {budget} evaluations (best |f - y*| = {best_gap:.4})")]
    CounterfactualNotFound {
        budget: usize,
        best_gap: f64,
        best: Vec<f64>,
    },
    #[error("exact enumeration refused for d = {0} (> 14); use kernelshap_estimate")]
    TooManyFeatures(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Schema(_) => "schema",
            Error::Row { .. } => "row",
            Error::UnknownCategory { .. } => "unknown_category",
            Error::Dimension { .. } => "dimension",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Diverged(_) => "diverged",
            Error::EmptyBackground { .. } => "empty_background",
            Error::CounterfactualNotFound { .. } => "counterfactual_not_found",
            Error::TooManyFeatures(_) => "too_many_features",
            Error::Degenerate(_) => "degenerate",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
