//! Run manifest: config hash, per-stage seeds, and a content hash for every
//! emitted artifact. Completed stages whose artifacts still verify are skipped
//! on resume.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Schema versions of the emitted file formats.
pub fn schema_versions() -> BTreeMap<String, u32> {
    [
        ("surface_csv", 1),
        ("trajectory_dir", 1),
        ("world_model_checkpoint", crate::world_model::CHECKPOINT_SCHEMA_VERSION),
        ("ppo_checkpoint", crate::agents::ppo::PPO_CHECKPOINT_SCHEMA_VERSION),
        ("episode_csv", 1),
        ("metrics_csv", 1),
        ("frontier_csv", 1),
        ("scatter_csv", 1),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated. Directories are hashed
    /// as a whole: the digest of their sorted `(name, file hash)` pairs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seed: u64,
    pub completed: bool,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub master_seed: u64,
    pub schemas: BTreeMap<String, u32>,
    pub stages: Vec<StageRecord>,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest of a file, or of a directory tree via its sorted entries.
pub fn hash_path(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    if path.is_file() {
        return hash_file(path);
    }
    let mut entries: Vec<_> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    let mut h = Sha256::new();
    for p in entries {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.update(name.as_bytes());
        h.update([0]);
        h.update(hash_path(&p)?.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex::encode(h.finalize()))
}

impl Manifest {
    pub fn new(config_hash: String, master_seed: u64) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            config_hash,
            master_seed,
            schemas: schema_versions(),
            stages: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: m.schema_version,
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        Ok(Some(m))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// True when `name` completed and every listed artifact still hashes the same.
    pub fn verified(&self, dir: &Path, name: &str) -> bool {
        self.stage(name).is_some_and(|s| {
            s.completed
                && s.files
                    .iter()
                    .all(|f| hash_path(&dir.join(&f.path)).is_ok_and(|h| h == f.sha256))
        })
    }

    /// Records `name` as completed with the given artifacts, replacing any earlier record.
    pub fn complete(&mut self, dir: &Path, name: &str, seed: u64, paths: &[String]) -> Result<()> {
        let files = paths
            .iter()
            .map(|p| {
                Ok(FileEntry {
                    path: p.clone(),
                    sha256: hash_path(&dir.join(p))?,
                })
            })
            .collect::<Result<_>>()?;
        let record = StageRecord {
            name: name.to_string(),
            seed,
            completed: true,
            files,
        };
        match self.stages.iter_mut().find(|s| s.name == name) {
            Some(s) => *s = record,
            None => self.stages.push(record),
        }
        Ok(())
    }

    /// Marks `name` and every later stage as incomplete.
    pub fn invalidate_from(&mut self, name: &str) {
        if let Some(i) = self.stages.iter().position(|s| s.name == name) {
            self.stages.truncate(i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verification_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a.txt"), "one").unwrap();
        fs::write(dir.path().join("sub/b.txt"), "two").unwrap();
        let mut m = Manifest::new("h".into(), 0);
        m.complete(dir.path(), "s1", 3, &["a.txt".into(), "sub".into()]).unwrap();
        assert!(m.verified(dir.path(), "s1"));
        assert!(!m.verified(dir.path(), "s2"));
        fs::write(dir.path().join("sub/b.txt"), "changed").unwrap();
        assert!(!m.verified(dir.path(), "s1"));

        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap().unwrap(), m);
        m.complete(dir.path(), "s2", 0, &[]).unwrap();
        m.invalidate_from("s1");
        assert!(m.stages.is_empty());
    }
}
