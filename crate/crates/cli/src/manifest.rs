use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use tbauc::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one CLI run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    /// Fully resolved configuration, defaults included.
    pub config: Value,
    pub seeds: BTreeMap<String, Value>,
    /// Output files relative to the manifest's directory.
    pub artifacts: Vec<String>,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct Recorder {
    command: String,
    started: Instant,
    started_unix: f64,
    pub config: Value,
    pub seeds: BTreeMap<String, Value>,
    artifacts: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        Recorder {
            command: command.to_string(),
            started: Instant::now(),
            started_unix,
            config: Value::Null,
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, v: impl Serialize) {
        self.seeds
            .insert(name.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    /// Write `manifest.json` into `dir`. After a successful run every
    /// artifact must exist; after a failure only those present are listed.
    pub fn finish(self, dir: &Path, error: Option<String>) -> Result<PathBuf> {
        let mut artifacts = Vec::with_capacity(self.artifacts.len());
        for a in &self.artifacts {
            if !a.exists() {
                if error.is_some() {
                    continue;
                }
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("artifact {} missing at end of run", a.display()),
                )));
            }
            let rel = a.strip_prefix(dir).unwrap_or(a);
            artifacts.push(rel.to_string_lossy().into_owned());
        }
        let path = dir.join(MANIFEST_FILE);
        artifacts.push(MANIFEST_FILE.to_string());
        let m = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            seeds: self.seeds,
            artifacts,
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            status: if error.is_some() { "failed" } else { "ok" },
            error,
        };
        fs::create_dir_all(dir)?;
        fs::write(&path, serde_json::to_string_pretty(&m)?)?;
        Ok(path)
    }
}
