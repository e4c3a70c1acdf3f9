use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use anyhow::{Context, Result};
use prefalign::seed::{self, stream};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    /// SHA-256 over the input files, in the listed order.
    pub dataset_fingerprint: String,
    pub seeds: BTreeMap<String, u64>,
    pub output_dir: String,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub stats: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, fingerprint: String, run_seed: u64, output: &Path) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            dataset_fingerprint: fingerprint,
            seeds: named_seeds(run_seed),
            output_dir: output.display().to_string(),
            stats: serde_json::Map::new(),
        }
    }

    pub fn stat(mut self, key: &str, value: impl Serialize) -> Self {
        self.stats.insert(key.to_string(), serde_json::to_value(value).expect("serializable stat"));
        self
    }

    /// Writes `manifest.json` into `dir`, replacing any previous one.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(dir.join(FILE), text).with_context(|| format!("writing manifest in {}", dir.display()))
    }

    #[cfg(test)]
    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(FILE)).with_context(|| format!("reading manifest in {}", dir.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn named_seeds(run_seed: u64) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    seeds.insert("run".to_string(), run_seed);
    for (name, s) in [
        ("data", stream::DATA),
        ("init", stream::INIT),
        ("negatives", stream::NEGATIVES),
        ("eval", stream::EVAL),
        ("shuffle", stream::SHUFFLE),
    ] {
        seeds.insert(name.to_string(), seed::derive(run_seed, &[s]));
    }
    seeds
}

/// Hex SHA-256 over the concatenated contents of `files`.
pub fn fingerprint(files: &[&Path]) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    for path in files {
        let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
        loop {
            let n = r.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}
