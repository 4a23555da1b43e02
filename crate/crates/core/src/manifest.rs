//! Run manifest: config snapshot, timestamps and content hashes of every
//! emitted file. Written last, via rename, so a present manifest means the run
//! finished.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: String,
    pub crate_version: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub files: Vec<FileEntry>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

impl RunManifest {
    /// Hashes `files` (relative paths under `dir`) and writes the manifest.
    pub fn write(
        dir: &Path,
        config: String,
        seed: u64,
        started_unix: u64,
        files: &[String],
    ) -> Result<RunManifest> {
        let files = files
            .iter()
            .map(|rel| {
                let (sha256, bytes) = sha256_file(&dir.join(rel))?;
                Ok(FileEntry { path: rel.clone(), sha256, bytes })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            config,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix,
            finished_unix: unix_now(),
            files,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let dst = dir.join(MANIFEST_FILE);
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<RunManifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Artifact {
            path,
            message: e.to_string(),
        })
    }

    /// Re-hashes every listed file and compares.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for entry in &self.files {
            let path = dir.join(&entry.path);
            let (sha, bytes) = sha256_file(&path)?;
            if sha != entry.sha256 || bytes != entry.bytes {
                return Err(Error::Artifact {
                    path,
                    message: "content hash does not match the manifest".into(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_verify_then_tamper() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "hello").unwrap();
        let m = RunManifest::write(dir.path(), "seed = 1\n".into(), 1, 0, &["a.txt".into()]).unwrap();
        assert_eq!(m.files[0].bytes, 5);
        let loaded = RunManifest::load(dir.path()).unwrap();
        assert_eq!(loaded, m);
        loaded.verify(dir.path()).unwrap();
        assert!(!dir.path().join("manifest.json.tmp").exists());
        fs::write(dir.path().join("a.txt"), "hellO").unwrap();
        assert!(loaded.verify(dir.path()).is_err());
    }
}
