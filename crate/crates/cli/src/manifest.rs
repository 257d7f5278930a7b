//! Run manifest with per-stage cache keys and output hashes, plus the
//! output-directory lock.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".ctf3d.lock";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of stage name, tool version, parameters and input hashes.
    pub key: String,
    pub ok: bool,
    /// Output file name to content hash.
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Wall-clock time of the last run; ignored by determinism checks.
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: Value,
    pub stages: BTreeMap<String, StageRecord>,
    /// Headline values copied from stage outputs for quick inspection.
    pub results: BTreeMap<String, Value>,
}

impl RunManifest {
    pub fn load_or_default(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        if !p.is_file() {
            return Ok(Self {
                tool_version: TOOL_VERSION.into(),
                ..Default::default()
            });
        }
        let text = std::fs::read_to_string(&p)?;
        match serde_json::from_str(&text) {
            Ok(m) => Ok(m),
            Err(e) => {
                log::warn!("ignoring unreadable {}: {e}", p.display());
                Ok(Self {
                    tool_version: TOOL_VERSION.into(),
                    ..Default::default()
                })
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::rename(&tmp, &p)?;
        Ok(())
    }

    /// True when `stage` last succeeded with `key` and its outputs are
    /// unchanged on disk.
    pub fn is_fresh(&self, dir: &Path, stage: &str, key: &str) -> bool {
        let Some(rec) = self.stages.get(stage) else {
            return false;
        };
        rec.ok
            && rec.key == key
            && rec
                .outputs
                .iter()
                .all(|(name, hash)| sha256_file(&dir.join(name)).is_ok_and(|h| &h == hash))
    }

    pub fn record(
        &mut self,
        dir: &Path,
        stage: &str,
        key: String,
        outputs: &[String],
        error: Option<String>,
    ) -> Result<()> {
        let mut hashes = BTreeMap::new();
        for name in outputs {
            let p = dir.join(name);
            if p.is_file() {
                hashes.insert(name.clone(), sha256_file(&p)?);
            }
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                key,
                ok: error.is_none(),
                outputs: hashes,
                error,
                finished_unix: unix_now(),
            },
        );
        Ok(())
    }

    /// Copy with wall-clock fields zeroed, for comparing runs.
    pub fn without_timestamps(&self) -> Self {
        let mut m = self.clone();
        for r in m.stages.values_mut() {
            r.finished_unix = 0;
        }
        m
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked(dir.display().to_string()).into())
            }
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freshness_tracks_key_and_content() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        std::fs::write(d.join("a.txt"), "one").unwrap();
        let mut m = RunManifest::load_or_default(d).unwrap();
        m.record(d, "s", "k1".into(), &["a.txt".into()], None)
            .unwrap();
        assert!(m.is_fresh(d, "s", "k1"));
        assert!(!m.is_fresh(d, "s", "k2"));
        std::fs::write(d.join("a.txt"), "two").unwrap();
        assert!(!m.is_fresh(d, "s", "k1"));
        m.record(d, "s", "k1".into(), &["a.txt".into()], Some("boom".into()))
            .unwrap();
        assert!(!m.is_fresh(d, "s", "k1"));
        m.save(d).unwrap();
        assert_eq!(RunManifest::load_or_default(d).unwrap(), m);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let l = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(l);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
