//! Run manifests: enough to tell whether two output directories came from
//! the same inputs and settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    /// File name only, so manifests compare equal across directories.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration serialized as JSON.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    /// Relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub parameters: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, seed: Option<u64>) -> Result<Self> {
        let json = serde_json::to_vec(config)?;
        let versions = BTreeMap::from([
            ("gmraim-core".to_string(), gmraim::VERSION.to_string()),
            (
                "gmraim-cli".to_string(),
                env!("CARGO_PKG_VERSION").to_string(),
            ),
        ]);
        Ok(Self {
            command: command.to_string(),
            config_hash: sha256_hex(&json),
            seed,
            versions,
            inputs: Vec::new(),
            outputs: Vec::new(),
            parameters: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.input_bytes(&file_name(path), &bytes);
        Ok(())
    }

    pub fn input_bytes(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(file_name(path));
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.parameters
            .insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Writes `<command>.manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
