//! Per-command run manifests with content digests of inputs and outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};

pub const RUN_MANIFEST: &str = "run_manifest.json";
/// Files whose name starts with this are manifests and never digested.
pub const MANIFEST_PREFIX: &str = "run_manifest";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Path relative to the digested root, with `/` separators.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Combined digests of input roots, keyed by role.
    pub inputs: BTreeMap<String, String>,
    /// Digest of every output file except the manifest itself.
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else if !p
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with(MANIFEST_PREFIX))
        {
            out.push(p);
        }
    }
    Ok(())
}

/// Digest of every file under `root` (or of `root` itself when it is a
/// file), sorted by relative path. Run manifests are skipped.
pub fn digest_tree(root: &Path) -> Result<Vec<FileDigest>> {
    if root.is_file() {
        return Ok(vec![FileDigest {
            path: root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: sha256_file(root)?,
        }]);
    }
    if !root.is_dir() {
        return Err(Error::MissingInput(root.to_path_buf()));
    }
    let mut files = Vec::new();
    walk(root, &mut files)?;
    files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(root).expect("walked under root");
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok(FileDigest {
                path,
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// One digest summarising [`digest_tree`].
pub fn combined_digest(files: &[FileDigest]) -> String {
    let mut h = Sha256::new();
    for f in files {
        h.update(f.path.as_bytes());
        h.update([0]);
        h.update(f.sha256.as_bytes());
        h.update(*b"\n");
    }
    hex::encode(h.finalize())
}

pub fn tree_digest(root: &Path) -> Result<String> {
    Ok(combined_digest(&digest_tree(root)?))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    /// Digest every file under `out` and write the manifest into it.
    pub fn finish(self, out: &Path, wall_clock_seconds: f64) -> Result<Self> {
        self.finish_named(out, RUN_MANIFEST, |_| true, wall_clock_seconds)
    }

    /// Digest the files under `out` whose relative path passes `keep` and
    /// write the manifest as `out/name`.
    pub fn finish_named(mut self, out: &Path, name: &str, keep: impl Fn(&str) -> bool, wall_clock_seconds: f64) -> Result<Self> {
        self.outputs = digest_tree(out)?.into_iter().filter(|f| keep(&f.path)).collect();
        self.wall_clock_seconds = wall_clock_seconds;
        write_json(&out.join(name), &self)?;
        Ok(self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Self::read_named(dir, RUN_MANIFEST)
    }

    pub fn read_named(dir: &Path, name: &str) -> Result<Self> {
        read_json(&dir.join(name))
    }

    /// Recompute the digest of every listed output under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let mut changed = Vec::new();
        for f in &self.outputs {
            let p = dir.join(&f.path);
            if !p.is_file() || sha256_file(&p)? != f.sha256 {
                changed.push(f.path.as_str());
            }
        }
        if !changed.is_empty() {
            return Err(Error::Schema {
                path: dir.to_path_buf(),
                msg: format!("output digests do not match: {changed:?}"),
            });
        }
        Ok(())
    }
}
