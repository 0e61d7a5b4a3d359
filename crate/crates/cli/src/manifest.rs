use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

/// Replay record written last into every output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the command's canonical JSON configuration (output
    /// directory excluded).
    pub config_hash: String,
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by the path as given.
    pub input_digests: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub struct ManifestBuilder {
    command: &'static str,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
    started: String,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, config: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            command,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            seed,
            started: now(),
        })
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs
            .insert(path.display().to_string(), sha256_hex(bytes));
    }

    pub fn write(self, out: &Path) -> Result<()> {
        let config_text = serde_json::to_string(&self.config)?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash: sha256_hex(config_text.as_bytes()),
            config: self.config,
            input_digests: self.inputs,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started,
            finished: now(),
        };
        let path = out.join(FILE_NAME);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
