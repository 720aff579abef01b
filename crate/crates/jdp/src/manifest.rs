//! Run manifest written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration's canonical JSON.
    pub config_digest: String,
    pub master_seed: u64,
    pub toolkit_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<PathBuf>,
    /// Command-specific facts, e.g. the subpopulation size used.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, serde_json::Value>,
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Digest of `config` serialized with sorted object keys.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    // Value maps are BTreeMaps, so keys come out sorted.
    let value = serde_json::to_value(config).expect("serializable config");
    let canonical = serde_json::to_vec(&value).expect("serializable value");
    hex::encode(Sha256::digest(canonical))
}

impl RunManifest {
    pub fn start<T: Serialize>(command: &str, config: &T, master_seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_digest: config_digest(config),
            master_seed,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now_rfc3339(),
            finished_at: String::new(),
            outputs: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details.insert(key.to_string(), serde_json::to_value(value).expect("serializable detail"));
    }

    pub fn finish(&mut self, outputs: Vec<PathBuf>) {
        self.outputs = outputs;
        self.finished_at = now_rfc3339();
    }
}
