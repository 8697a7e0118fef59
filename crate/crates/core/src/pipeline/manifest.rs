//! The run manifest records, per completed stage, the configuration hash it
//! ran with and a SHA-256 digest of every file it wrote.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::write_atomic;
use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Stored as a string since TOML integers are signed 64-bit.
    #[serde(with = "seed_string")]
    pub seed: u64,
    /// File name to SHA-256 digest.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
}

mod seed_string {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&seed.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e.to_string()))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e.to_string()))?;
        toml::from_str(&text).map_err(|e| PipelineError::io(&path, e.to_string()))
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let text = toml::to_string(self).map_err(|e| PipelineError::Internal(e.to_string()))?;
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    /// Whether `stage` completed with `hash` and its files are unchanged.
    pub fn is_current(&self, dir: &Path, stage: &str, hash: &str) -> bool {
        match self.stages.get(stage) {
            Some(rec) if rec.config_hash == hash => rec
                .files
                .iter()
                .all(|(name, digest)| file_digest(&dir.join(name)).is_ok_and(|d| &d == digest)),
            _ => false,
        }
    }

    /// Records `stage` as complete with digests of `files`.
    pub fn record(
        &mut self,
        dir: &Path,
        stage: &str,
        hash: &str,
        seed: u64,
        files: &[String],
    ) -> Result<(), PipelineError> {
        let mut digests = BTreeMap::new();
        for f in files {
            digests.insert(f.clone(), file_digest(&dir.join(f))?);
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                config_hash: hash.to_string(),
                seed,
                files: digests,
            },
        );
        Ok(())
    }
}
