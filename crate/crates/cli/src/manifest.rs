//! Run manifest: what ran, under which configuration, on which inputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stimkit::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Input file name to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory to sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub seed: u64,
    pub config: String,
    pub config_sha256: String,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new(subcommand: &str, seed: u64, config: &str) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("stimkit".to_string(), env!("CARGO_PKG_VERSION").to_string());
        Manifest {
            subcommand: subcommand.to_string(),
            seed,
            config: config.to_string(),
            config_sha256: sha256_hex(config.as_bytes()),
            versions,
            stages: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("cannot serialize manifest: {e}")))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

/// Configuration text stored in a manifest.
pub fn config_from_manifest(json: &str) -> std::result::Result<String, String> {
    let m: Manifest = serde_json::from_str(json).map_err(|e| format!("not a run manifest: {e}"))?;
    if sha256_hex(m.config.as_bytes()) != m.config_sha256 {
        return Err("manifest config does not match its recorded hash".into());
    }
    Ok(m.config)
}
