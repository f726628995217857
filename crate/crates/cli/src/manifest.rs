//! Run manifests: a config snapshot plus content hashes of every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a serde_json::Value,
    /// Hash of the canonical config JSON.
    config_hash: String,
    outputs: BTreeMap<String, String>,
}

/// Writes `manifest.json` into `dir`, hashing every other regular file
/// there. The manifest carries no timestamps, so identical runs produce
/// identical manifests.
pub fn write(dir: &Path, command: &str, config: &impl Serialize) -> Result<String> {
    let config = serde_json::to_value(config)?;
    let canonical = serde_json::to_string(&config)?;
    let mut outputs = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if !path.is_file() || name == "manifest.json" {
            continue;
        }
        outputs.insert(name, sha256_hex(&fs::read(&path)?));
    }
    let config_hash = sha256_hex(canonical.as_bytes());
    let m = Manifest { command, version: env!("CARGO_PKG_VERSION"), config: &config, config_hash: config_hash.clone(), outputs };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(config_hash)
}
