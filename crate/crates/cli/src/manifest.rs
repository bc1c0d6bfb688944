use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mvc_core::util::file_sha256;
use mvc_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command: no timestamps or host details, so
/// identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: BTreeMap<String, serde_json::Value>,
    pub inputs: BTreeMap<String, InputFile>,
    pub artifacts: BTreeMap<String, String>,
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            summary: BTreeMap::new(),
        }
    }

    pub fn config<T: Serialize>(&mut self, section: &str, value: &T) {
        let v = serde_json::to_value(value).expect("config serialises");
        self.config.insert(section.to_string(), v);
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let file = InputFile {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        };
        self.inputs.insert(role.to_string(), file);
        Ok(())
    }

    pub fn artifact(&mut self, role: &str, path: &Path) {
        self.artifacts
            .insert(role.to_string(), path.display().to_string());
    }

    pub fn summary<T: Serialize>(&mut self, key: &str, value: T) {
        let v = serde_json::to_value(value).expect("summary serialises");
        self.summary.insert(key.to_string(), v);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
