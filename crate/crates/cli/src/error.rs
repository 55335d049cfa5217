use serde::Serialize;
use shapval_core::review::SCHEMA_VERSION;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact {path}: run `{command}` first")]
    MissingArtifact { path: String, command: String },
    #[error("artifact {path} was produced under config {found}, current config is {expected}; rerun the upstream command")]
    StaleArtifact { path: String, found: String, expected: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Core(#[from] shapval_core::Error),
    #[error(transparent)]
    Study(#[from] shapval_study::StudyError),
    #[error("usage: {0}")]
    Usage(String),
}

#[derive(Serialize)]
struct Detail<'a> {
    kind: &'a str,
    message: String,
}

#[derive(Serialize)]
struct Body<'a> {
    v: &'a str,
    error: Detail<'a>,
}

impl CliError {
    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::StaleArtifact { .. } => "stale_artifact",
            CliError::Io { .. } => "io",
            CliError::Core(_) => "pipeline",
            CliError::Study(_) => "study",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Body { v: SCHEMA_VERSION, error: Detail { kind: self.kind(), message: self.to_string() } })
            .expect("error body serializes")
    }
}
