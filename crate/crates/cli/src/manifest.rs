use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub parallel_feature: bool,
    pub config_sha256: String,
    /// The resolved configuration, after defaults and flag overrides.
    pub config: serde_json::Value,
    pub seed: u64,
    /// Input file name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64) -> serde_json::Result<Self> {
        let value = serde_json::to_value(config)?;
        let canonical = serde_json::to_vec(&value)?;
        Ok(Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            parallel_feature: ctsurv::parallel::is_parallel(),
            config_sha256: sha256_hex(&canonical),
            config: value,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn add_input(&mut self, label: &str, path: &Path) -> std::io::Result<()> {
        self.inputs.insert(label.to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }
}
