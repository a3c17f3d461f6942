use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::dataset::file_sha256;
use crate::error::{Result, UalError};
use crate::kv::KvFile;
use crate::pipeline::config::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub path: String,
    pub sha256: String,
}

impl DatasetRef {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(DatasetRef {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        })
    }
}

/// Everything needed to reproduce and evaluate a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub train: DatasetRef,
    pub val: Option<DatasetRef>,
    /// Branch name to model file, relative to the manifest's directory.
    pub models: BTreeMap<String, String>,
    pub selected_epoch: Option<usize>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn config(&self) -> Result<TrainingConfig> {
        let mut kv = KvFile::default();
        for (k, v) in &self.config {
            kv.set(k, v.clone());
        }
        TrainingConfig::from_kv(kv)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| UalError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UalError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| UalError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: format!("bad manifest: {e}"),
        })
    }

    /// Refuse a dataset whose hash matches none recorded in the manifest.
    pub fn check_dataset(&self, path: &Path, force: bool) -> Result<String> {
        let actual = file_sha256(path)?;
        let known: Vec<&DatasetRef> = std::iter::once(&self.train).chain(self.val.as_ref()).collect();
        if known.iter().any(|d| d.sha256 == actual) {
            return Ok(actual);
        }
        if force {
            log::warn!("{} does not match the manifest datasets; continuing (--force)", path.display());
            return Ok(actual);
        }
        let expected = self.val.as_ref().unwrap_or(&self.train).sha256.clone();
        Err(UalError::HashMismatch {
            path: PathBuf::from(path),
            expected,
            actual,
        })
    }
}
