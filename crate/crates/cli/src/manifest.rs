// SPDX-License-Identifier: Apache-2.0
//! Run manifests: what produced an output directory, from which inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTime {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: Option<String>,
    /// Input name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Hash of the directory contents, excluding this file.
    pub output_hash: Option<String>,
    pub seed: Option<u64>,
    pub parameters: serde_json::Value,
    pub phases: Vec<PhaseTime>,
    pub complete: bool,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: None,
            inputs: BTreeMap::new(),
            output_hash: None,
            seed: None,
            parameters: serde_json::Value::Null,
            phases: Vec::new(),
            complete: false,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), hash_path(path)?);
        Ok(())
    }

    pub fn timed<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.phases.push(PhaseTime {
            name: name.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    /// Hash the directory and write the manifest into it.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.output_hash = Some(hash_path(dir)?);
        self.complete = true;
        let p = dir.join(RUN_MANIFEST);
        std::fs::write(&p, serde_json::to_string_pretty(&self)?)
            .with_context(|| format!("writing {}", p.display()))?;
        Ok(self)
    }

    pub fn read(dir: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(dir.join(RUN_MANIFEST)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Whether `dir` already holds a complete run of the same command on
    /// the same inputs, with contents unchanged since.
    pub fn is_done(&self, dir: &Path) -> bool {
        let Some(old) = Self::read(dir) else {
            return false;
        };
        old.complete
            && old.command == self.command
            && old.config_hash == self.config_hash
            && old.inputs == self.inputs
            && old.seed == self.seed
            && old.parameters == self.parameters
            && old.output_hash.as_deref() == hash_path(dir).ok().as_deref()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file, or of a directory tree (sorted relative paths and
/// contents, run manifests skipped).
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        walk(path, path, &mut files)?;
        files.sort();
        for rel in files {
            let data = std::fs::read(path.join(&rel))
                .with_context(|| format!("reading {}", rel.display()))?;
            let name = rel.to_string_lossy().replace('\\', "/");
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((data.len() as u64).to_le_bytes());
            h.update(&data);
        }
    } else {
        let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        h.update(&data);
    }
    Ok(hex(&h.finalize()))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != RUN_MANIFEST) {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}
