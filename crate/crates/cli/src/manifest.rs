//! Stage manifests: content hashes of a stage's inputs and outputs, the
//! resolved config hash, the seed, and the wall time.
//!
//! Wall time lives in its own field so that byte-comparison of everything
//! else across reruns stays meaningful.

use std::collections::BTreeMap;
use std::path::Path;

use agro_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// FNV-1a 64-bit content hash, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("fnv1a64:{h:016x}")
}

pub fn hash_file(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    Ok(content_hash(&std::fs::read(path)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Timestamp-like field; the one field allowed to differ across reruns.
    pub wall_time_ms: u128,
}

pub struct StageRecorder {
    manifest: StageManifest,
    started: std::time::Instant,
    run_dir: std::path::PathBuf,
}

impl StageRecorder {
    pub fn start(run_dir: &Path, stage: &str, seed: u64, config_hash: String) -> StageRecorder {
        StageRecorder {
            manifest: StageManifest {
                stage: stage.to_string(),
                seed,
                config_hash,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                wall_time_ms: 0,
            },
            started: std::time::Instant::now(),
            run_dir: run_dir.to_path_buf(),
        }
    }

    fn key_for(&self, path: &Path) -> String {
        path.strip_prefix(&self.run_dir)
            .unwrap_or(path)
            .display()
            .to_string()
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = hash_file(path)?;
        self.manifest.inputs.insert(self.key_for(path), hash);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let hash = hash_file(path)?;
        self.manifest.outputs.insert(self.key_for(path), hash);
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.wall_time_ms = self.started.elapsed().as_millis();
        let dir = self.run_dir.join("manifests");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", self.manifest.stage));
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::Parse(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        assert_eq!(content_hash(b"abc"), content_hash(b"abc"));
        assert_ne!(content_hash(b"abc"), content_hash(b"abd"));
    }
}
