//! Stamped artifact files, the run manifest and the directory lock.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::failure::{Failure, Outcome};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "MANIFEST.json";
const LOCK: &str = ".attnfid.lock";

/// Identity carried by every artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Stamp {
        Stamp {
            tool_version: TOOL_VERSION.into(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    /// One-line form used at the top of text and CSV files.
    pub fn comment(&self) -> String {
        format!(
            "# tool_version={} config_hash={} seed={}",
            self.tool_version, self.config_hash, self.seed
        )
    }
}

/// A JSON document with the stamp as its first key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub stamp: Stamp,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub completed_stages: Vec<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Writes stamped files under one directory and remembers them.
pub struct ArtifactWriter {
    dir: PathBuf,
    stamp: Stamp,
    written: Vec<String>,
}

impl ArtifactWriter {
    pub fn new(dir: impl Into<PathBuf>, stamp: Stamp) -> Outcome<ArtifactWriter> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
        Ok(ArtifactWriter {
            dir,
            stamp,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stamp(&self) -> &Stamp {
        &self.stamp
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> Outcome<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Failure::io(&path, e))?;
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, body: &T) -> Outcome<()> {
        let doc = Stamped {
            stamp: self.stamp.clone(),
            body,
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.put(rel, text.as_bytes())
    }

    /// JSON lines: a stamp object, then one compact object per item.
    pub fn jsonl<T: Serialize>(&mut self, rel: &str, items: &[T]) -> Outcome<()> {
        let mut text = serde_json::to_string(&serde_json::json!({ "stamp": self.stamp }))?;
        text.push('\n');
        for item in items {
            text.push_str(&serde_json::to_string(item)?);
            text.push('\n');
        }
        self.put(rel, text.as_bytes())
    }

    /// Plain text or CSV behind a `#` stamp line.
    pub fn text(&mut self, rel: &str, body: &str) -> Outcome<()> {
        let text = format!("{}\n{body}", self.stamp.comment());
        self.put(rel, text.as_bytes())
    }

    /// SVG with the stamp as a leading XML comment.
    pub fn svg(&mut self, rel: &str, body: &str) -> Outcome<()> {
        let text = format!(
            "<!-- {} -->\n{body}",
            self.stamp.comment().trim_start_matches("# ")
        );
        self.put(rel, text.as_bytes())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Records the outcome and a digest of every file written so far.
    pub fn manifest(
        &mut self,
        completed: &[&str],
        failure: Option<(&str, &Failure)>,
    ) -> Outcome<()> {
        let mut paths = self.written.clone();
        paths.retain(|p| p != MANIFEST);
        paths.sort();
        let mut artifacts = Vec::with_capacity(paths.len());
        for rel in paths {
            let path = self.dir.join(&rel);
            let bytes = fs::read(&path).map_err(|e| Failure::io(&path, e))?;
            artifacts.push(ArtifactEntry {
                path: rel,
                bytes: bytes.len() as u64,
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
        let manifest = Manifest {
            status: if failure.is_some() {
                "failed"
            } else {
                "complete"
            }
            .into(),
            failed_stage: failure.map(|(s, _)| s.to_string()),
            error: failure.map(|(_, f)| f.to_string()),
            completed_stages: completed.iter().map(|s| s.to_string()).collect(),
            artifacts,
        };
        self.json(MANIFEST, &manifest)
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Outcome<DirLock> {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Failure::Runtime(format!(
                    "{} is in use by another run (remove {} if that run is gone)",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(Failure::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
