//! Run manifest and the opt-in stage cache.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "run_manifest.json";
const CACHE_DIR: &str = ".cache";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path)
        .map_err(|e| CliError::Input(format!("open {}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f
            .read(&mut buf)
            .map_err(|e| CliError::Input(format!("read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub cached: bool,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Record of a run: config hash, tool version, and the hashed inputs and
/// outputs of every stage. Paths inside the output directory are stored
/// relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub timestamp_unix_s: u64,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    /// Continue the manifest in `out_dir` if it was written with the same
    /// config, otherwise start a new one.
    pub fn open(out_dir: &Path, config_hash: &str, seed: u64) -> Self {
        let fresh = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            config_hash: config_hash.to_string(),
            seed,
            stages: Vec::new(),
        };
        let previous = std::fs::read_to_string(out_dir.join(MANIFEST_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
            .filter(|m| m.config_hash == config_hash && m.seed == seed);
        match previous {
            Some(m) => RunManifest {
                stages: m.stages,
                ..fresh
            },
            None => fresh,
        }
    }

    /// Replace any earlier record of the same stage name.
    pub fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|s| s.name != rec.name);
        self.stages.push(rec);
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Input(format!("create {}: {e}", out_dir.display())))?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(out_dir.join(MANIFEST_FILE), text + "\n")
            .map_err(|e| CliError::Input(format!("write manifest: {e}")))
    }
}

pub fn display_path(out_dir: &Path, p: &Path) -> String {
    p.strip_prefix(out_dir)
        .unwrap_or(p)
        .to_string_lossy()
        .replace('\\', "/")
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    outputs: BTreeMap<PathBuf, String>,
}

/// Outputs recorded for `key` if all of them still exist with their recorded
/// hashes.
pub fn cache_lookup(out_dir: &Path, key: &str) -> Option<Vec<PathBuf>> {
    let text = std::fs::read_to_string(out_dir.join(CACHE_DIR).join(format!("{key}.json"))).ok()?;
    let entry: CacheEntry = serde_json::from_str(&text).ok()?;
    for (p, h) in &entry.outputs {
        if hash_file(p).ok().as_deref() != Some(h.as_str()) {
            return None;
        }
    }
    Some(entry.outputs.into_keys().collect())
}

pub fn cache_store(
    out_dir: &Path,
    key: &str,
    outputs: &BTreeMap<PathBuf, String>,
) -> Result<(), CliError> {
    let dir = out_dir.join(CACHE_DIR);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Input(format!("create {}: {e}", dir.display())))?;
    let text = serde_json::to_string(&CacheEntry {
        outputs: outputs.clone(),
    })
    .expect("cache entry serializes");
    std::fs::write(dir.join(format!("{key}.json")), text)
        .map_err(|e| CliError::Input(format!("write cache: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_continues_only_for_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::open(dir.path(), "aa", 1);
        let rec = |n: &str| StageRecord {
            name: n.into(),
            seconds: 0.0,
            cached: false,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::from([("x.csv".to_string(), "h".to_string())]),
        };
        m.record(rec("a"));
        m.record(rec("a"));
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::open(dir.path(), "aa", 1).stages.len(), 1);
        assert!(RunManifest::open(dir.path(), "bb", 1).stages.is_empty());
    }
}
