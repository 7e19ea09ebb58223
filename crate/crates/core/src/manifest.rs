//! Output-directory manifest: every artifact with its content hash, grouped
//! by the stage that wrote it.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "MANIFEST.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// False while a run is in progress or after it failed.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Hash over the stage's configuration and upstream artifacts.
    pub input_hash: String,
    /// Artifact path relative to the output directory -> sha256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl Manifest {
    /// The manifest in `dir`, or an empty one when absent or unreadable.
    pub fn load(dir: &Path) -> Self {
        std::fs::read_to_string(dir.join(MANIFEST_FILE))
            .ok()
            .and_then(|text| serde_json::from_str(&text).ok())
            .unwrap_or_default()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn upsert(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|s| s.name == record.name) {
            Some(slot) => *slot = record,
            None => self.stages.push(record),
        }
    }

    /// True when `name` was recorded with `input_hash` and every output
    /// still exists with its recorded hash.
    pub fn is_fresh(&self, dir: &Path, name: &str, input_hash: &str) -> bool {
        let Some(record) = self.stage(name) else {
            return false;
        };
        record.input_hash == input_hash
            && record
                .outputs
                .iter()
                .all(|(rel, hash)| file_sha256(&dir.join(rel)).is_ok_and(|h| &h == hash))
    }
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
    fn freshness_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        std::fs::write(&path, "one").unwrap();
        let mut m = Manifest::default();
        m.upsert(StageRecord {
            name: "s".into(),
            input_hash: "h".into(),
            outputs: [("a.txt".to_string(), file_sha256(&path).unwrap())].into(),
        });
        m.save(dir.path()).unwrap();
        let m = Manifest::load(dir.path());
        assert!(m.is_fresh(dir.path(), "s", "h"));
        assert!(!m.is_fresh(dir.path(), "s", "other"));
        assert!(!m.is_fresh(dir.path(), "t", "h"));
        std::fs::write(&path, "two").unwrap();
        assert!(!m.is_fresh(dir.path(), "s", "h"));
        std::fs::remove_file(&path).unwrap();
        assert!(!m.is_fresh(dir.path(), "s", "h"));
    }

    #[test]
    fn missing_manifest_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(Manifest::load(dir.path()), Manifest::default());
    }
}
