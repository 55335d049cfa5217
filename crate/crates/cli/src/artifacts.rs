//! Output files. JSON artifacts share one envelope carrying the config
//! hash; CSV outputs start with a `# config_hash=` comment line.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use shapval_core::review::SCHEMA_VERSION;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub v: String,
    pub kind: String,
    pub config_hash: String,
    pub data: T,
}

pub struct Layout {
    pub root: PathBuf,
    pub hash: String,
}

pub fn pair_name(dataset: &str, model: &str) -> String {
    format!("{dataset}_{model}")
}

impl Layout {
    pub fn prepared(&self, dataset: &str) -> PathBuf {
        self.root.join("prepared").join(format!("{dataset}.json"))
    }
    pub fn model(&self, dataset: &str, model: &str) -> PathBuf {
        self.root.join("models").join(format!("{}.json", pair_name(dataset, model)))
    }
    pub fn amortizer(&self, dataset: &str, model: &str, variant: &str) -> PathBuf {
        self.root.join("amortizers").join(format!("{}_{variant}.json", pair_name(dataset, model)))
    }
    pub fn oracle(&self, dataset: &str, model: &str) -> PathBuf {
        self.root.join("oracle").join(format!("{}.json", pair_name(dataset, model)))
    }
    pub fn metrics_dir(&self) -> PathBuf {
        self.root.join("metrics")
    }
    pub fn simulated_log(&self) -> PathBuf {
        self.root.join("simulated").join("reviews.ndjson")
    }
    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    fn ensure_parent(path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        Ok(())
    }

    pub fn write_text(&self, path: &Path, text: &str) -> CliResult<()> {
        Self::ensure_parent(path)?;
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn write_csv(&self, path: &Path, body: &str) -> CliResult<()> {
        self.write_text(path, &format!("# config_hash={}\n{body}", self.hash))
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, kind: &str, data: &T) -> CliResult<()> {
        let env = Envelope { v: SCHEMA_VERSION.to_string(), kind: kind.to_string(), config_hash: self.hash.clone(), data };
        let text = serde_json::to_string(&env).map_err(|e| CliError::io(path, e))?;
        self.write_text(path, &text)
    }

    /// Reads an artifact, insisting it was made under the current config.
    pub fn read_json<T: DeserializeOwned>(&self, path: &Path, kind: &str, producer: &str) -> CliResult<T> {
        if !path.is_file() {
            return Err(CliError::MissingArtifact { path: path.display().to_string(), command: producer.to_string() });
        }
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let env: Envelope<T> = serde_json::from_slice(&bytes).map_err(|e| CliError::io(path, e))?;
        if env.kind != kind {
            return Err(CliError::io(path, format!("expected a {kind} artifact, found {}", env.kind)));
        }
        if env.config_hash != self.hash {
            return Err(CliError::StaleArtifact { path: path.display().to_string(), found: env.config_hash, expected: self.hash.clone() });
        }
        Ok(env.data)
    }
}
