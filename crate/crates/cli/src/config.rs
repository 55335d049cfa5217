//! Run configuration, read from one TOML file per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shapval_core::amortizer::TrainConfig;
use shapval_core::analysis::AnalysisConfig;
use shapval_core::dataset::{preset, DatasetSpec};
use shapval_core::metrics::EvalSettings;
use shapval_core::models::ModelKind;
use shapval_core::oracle::Budget;
use shapval_core::pipeline::ModelConfigs;
use shapval_core::rng;
use shapval_core::simulate::SimulationSpec;
use shapval_core::valuefunctions::{ValueFunctionSpec, VariantKind};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    /// CSV path, relative to the config file.
    pub path: PathBuf,
    /// Built-in schema name; defaults to `name` when `spec` is absent.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub spec: Option<DatasetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelsSection {
    pub kinds: Vec<ModelKind>,
    #[serde(flatten)]
    pub configs: ModelConfigs,
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection { kinds: ModelKind::all().to_vec(), configs: ModelConfigs::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub n_boot: usize,
    /// Leading test rows evaluated per pair; all when unset.
    pub max_instances: Option<usize>,
    pub settings: EvalSettings,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { n_boot: 50, max_instances: Some(100), settings: EvalSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Defaults to full enumeration up to 14 features, else `2048 d` samples.
    pub budget: Option<Budget>,
    pub max_instances: Option<usize>,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { budget: None, max_instances: Some(100) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub bind: String,
    pub n_cases: usize,
    /// Review log directory, relative to the output directory.
    pub data_dir: PathBuf,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection { bind: "127.0.0.1:8080".into(), n_cases: 9, data_dir: PathBuf::from("study") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory, relative to the config file; `--out` overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub models: ModelsSection,
    /// Background size for variants without an explicit spec.
    #[serde(default = "default_background")]
    pub background_size: usize,
    /// Explicit value-function specs; unlisted variants use defaults.
    #[serde(default)]
    pub variants: Vec<ValueFunctionSpec>,
    #[serde(default)]
    pub amortizer: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub simulate: SimulationSpec,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_background() -> usize {
    100
}

/// A parsed config plus where it lives.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
    pub hash: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<RunConfig> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Short SHA-256 of the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn dataset_spec(&self, d: &DatasetEntry) -> CliResult<DatasetSpec> {
        if let Some(s) = &d.spec {
            return Ok(s.clone());
        }
        let name = d.preset.as_deref().unwrap_or(&d.name);
        let mut spec = preset(name).ok_or_else(|| CliError::Config(format!("dataset {:?} has no spec and no preset {name:?}", d.name)))?;
        spec.name = d.name.clone();
        Ok(spec)
    }

    /// Value-function spec per variant, seeded from the run seed.
    pub fn variant_specs(&self) -> Vec<ValueFunctionSpec> {
        VariantKind::ALL
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mut spec = self
                    .variants
                    .iter()
                    .find(|s| s.kind() == k)
                    .cloned()
                    .unwrap_or_else(|| ValueFunctionSpec::default_for(k, 0).with_background_size(self.background_size));
                spec.seed = rng::derive_seed(self.seed, "value-function", &[i as u64]);
                spec
            })
            .collect()
    }

    pub fn validate(&self, base: &Path) -> CliResult<()> {
        if self.datasets.is_empty() {
            return Err(CliError::Config("at least one dataset is required".into()));
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("dataset names must be unique".into()));
        }
        for d in &self.datasets {
            let p = base.join(&d.path);
            if !p.is_file() {
                return Err(CliError::Config(format!("dataset {:?}: file {} does not exist", d.name, p.display())));
            }
            self.dataset_spec(d)?;
        }
        if self.models.kinds.is_empty() {
            return Err(CliError::Config("models.kinds must not be empty".into()));
        }
        for k in VariantKind::ALL {
            if self.variants.iter().filter(|s| s.kind() == k).count() > 1 {
                return Err(CliError::Config(format!("variant {k} is specified twice")));
            }
        }
        self.amortizer.validate()?;
        if self.metrics.n_boot == 0 {
            return Err(CliError::Config("metrics.n_boot must be >= 1".into()));
        }
        self.study
            .bind
            .parse::<std::net::SocketAddr>()
            .map_err(|e| CliError::Config(format!("study.bind {:?}: {e}", self.study.bind)))?;
        Ok(())
    }
}

/// Reads, overrides and validates a config file.
pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>) -> CliResult<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut config = RunConfig::parse(&text)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.validate(&base_dir)?;
    let out_dir = match (out, &config.out_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => base_dir.join(o),
        (None, None) => base_dir.join("out"),
    };
    let hash = config.hash();
    Ok(Loaded { config, base_dir, out_dir, hash })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let err = RunConfig::parse("[[datasets]]\nname = \"german_credit\"\npath = \"x.csv\"\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn defaults_fill_all_variants() {
        let c = RunConfig::parse("seed = 3\nbackground_size = 20\n[[datasets]]\nname = \"german_credit\"\npath = \"x.csv\"\n[[variants]]\nvariant = \"conditional\"\nbandwidth = 0.5\n").unwrap();
        let specs = c.variant_specs();
        assert_eq!(specs.len(), 8);
        assert_eq!(specs[5].background_size, 100);
        assert_eq!(specs[0].background_size, 20);
        assert_ne!(specs[0].seed, specs[1].seed);
        let mut other = c.clone();
        other.seed = 4;
        assert_ne!(c.hash(), other.hash());
        other.seed = 3;
        other.out_dir = Some("elsewhere".into());
        assert_eq!(c.hash(), other.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("seed = 1\ndatasets = []\ncolour = 1\n").is_err());
    }
}
