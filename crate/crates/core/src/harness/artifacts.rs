use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

fn artifact_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes files below an output directory and remembers what it wrote.
pub struct ArtifactWriter {
    root: PathBuf,
    written: Vec<PathBuf>,
    timings: Vec<StageTiming>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| artifact_error(root, e))?;
        Ok(ArtifactWriter {
            root: root.to_path_buf(),
            written: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn prepare(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| artifact_error(parent, e))?;
        }
        if !self.written.iter().any(|p| p == Path::new(rel)) {
            self.written.push(PathBuf::from(rel));
        }
        Ok(path)
    }

    pub fn write_csv<I, R>(&mut self, rel: &str, header: &[&str], rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.prepare(rel)?;
        let mut w = csv::Writer::from_path(&path).map_err(|e| artifact_error(&path, e))?;
        w.write_record(header).map_err(|e| artifact_error(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| artifact_error(&path, e))?;
        }
        w.flush().map_err(|e| artifact_error(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let path = self.prepare(rel)?;
        write_json(&path, value)?;
        Ok(path)
    }

    /// Records an externally written file, e.g. a cache entry.
    pub fn record(&mut self, rel: &str) {
        if !self.written.iter().any(|p| p == Path::new(rel)) {
            self.written.push(PathBuf::from(rel));
        }
    }

    /// Runs a stage, timing it and tagging its errors.
    pub fn stage<T>(&mut self, name: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self).map_err(|e| e.in_stage(name));
        self.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    /// Lists every written file with its checksum in `manifest.json`,
    /// under the entry for `command`.
    pub fn finish(self, command: &str, config_hash: &str, lattice_hash: &str, seedless: bool) -> Result<CommandManifest> {
        let mut artifacts = Vec::new();
        for rel in &self.written {
            let path = self.root.join(rel);
            let bytes = fs::read(&path).map_err(|e| artifact_error(&path, e))?;
            artifacts.push(ArtifactEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            });
        }
        let entry = CommandManifest {
            config_hash: config_hash.to_string(),
            lattice_hash: lattice_hash.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seedless,
            stages: self.timings,
            artifacts,
        };
        let path = self.root.join("manifest.json");
        let mut manifest: RunManifest = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_default(),
            Err(_) => RunManifest::default(),
        };
        manifest.commands.insert(command.to_string(), entry.clone());
        write_json(&path, &manifest)?;
        Ok(entry)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| artifact_error(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| artifact_error(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| artifact_error(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| artifact_error(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| artifact_error(path, e))
}

/// Reads a CSV of floats with the given header.
pub fn read_csv_columns(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| artifact_error(path, e))?;
    let found = r.headers().map_err(|e| artifact_error(path, e))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(artifact_error(
            path,
            format!("expected columns {header:?}, found {:?}", found.iter().collect::<Vec<_>>()),
        ));
    }
    let mut cols = vec![Vec::new(); header.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| artifact_error(path, e))?;
        for (col, field) in cols.iter_mut().zip(rec.iter()) {
            col.push(
                field
                    .parse::<f64>()
                    .map_err(|e| artifact_error(path, format!("row {}: {e}", line + 1)))?,
            );
        }
    }
    Ok(cols)
}

/// Shortest representation that parses back to the same value.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandManifest {
    pub config_hash: String,
    pub lattice_hash: String,
    pub version: String,
    pub seedless: bool,
    pub stages: Vec<StageTiming>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// `manifest.json`: the latest invocation of each command in a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub commands: BTreeMap<String, CommandManifest>,
}
