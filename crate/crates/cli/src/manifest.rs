use std::collections::BTreeMap;
use std::path::Path;

use eventadapt::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Written next to the outputs of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub started: String,
    /// Resolved configuration as TOML.
    pub config: String,
    pub config_hash: String,
    /// SHA-256 of every file read, keyed by path relative to the run directory
    /// where possible.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config_toml: String, config_hash: String) -> Self {
        let versions = BTreeMap::from([
            ("eventadapt".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            (
                "cohort_archive".to_string(),
                eventadapt::data::ARCHIVE_VERSION.to_string(),
            ),
            (
                "checkpoint".to_string(),
                eventadapt::model::CHECKPOINT_VERSION.to_string(),
            ),
        ]);
        Self {
            command: command.to_string(),
            started: chrono::Utc::now().to_rfc3339(),
            config: config_toml,
            config_hash,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            versions,
            timings: BTreeMap::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
