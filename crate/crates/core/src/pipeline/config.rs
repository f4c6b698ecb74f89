use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::registry::{ComponentConfig, Params};

/// `train_test_split` block: splitter name, corpus directory and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub name: String,
    pub cell_data_path: PathBuf,
    #[serde(flatten)]
    pub params: Params,
}

impl SplitConfig {
    pub fn new(name: &str, cell_data_path: impl Into<PathBuf>) -> Self {
        Self { name: name.to_string(), cell_data_path: cell_data_path.into(), params: Params::new() }
    }

    pub fn component(&self) -> ComponentConfig {
        ComponentConfig { name: self.name.clone(), params: self.params.clone() }
    }
}

pub fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

/// One experiment. Key order in the file is irrelevant; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub train_test_split: SplitConfig,
    pub feature: ComponentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_transformation: Option<ComponentConfig>,
    pub label: ComponentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_transformation: Option<ComponentConfig>,
    pub model: ComponentConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workspace: Option<PathBuf>,
    /// Accepted for compatibility; every model runs on the CPU.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl PipelineConfig {
    pub fn from_yaml_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_yaml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_yaml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds contain duplicates".into()));
        }
        Ok(())
    }

    /// Identifies a run: everything except the workspace and device hint.
    pub fn run_hash(&self) -> String {
        let mut c = self.clone();
        c.workspace = None;
        c.device = None;
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    /// Covers the settings that determine feature rows and label values.
    pub fn feature_label_hash(&self) -> String {
        let key = (&self.feature, &self.feature_transformation, &self.label, &self.label_transformation);
        sha256_hex(&serde_json::to_vec(&key).expect("config serializes"))
    }
}
