use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use relbias::io::SCHEMA_VERSION;
use serde::Serialize;
use serde_json::Value;

/// What a command read, wrote and used. Commands fill one in; `main`
/// adds timing and writes it.
#[derive(Debug, Default)]
pub struct RunRecord {
    pub config: BTreeMap<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunRecord {
    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.config.insert(key.to_string(), v);
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }
}

/// Wall-clock fields, kept apart so everything else is reproducible.
#[derive(Debug, Serialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub duration_secs: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub artifact_version: String,
    pub config: BTreeMap<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// `ok`, or the error kind of a failed run.
    pub status: String,
    pub timing: Timing,
}

impl RunManifest {
    pub fn new(command: &str, record: RunRecord, status: &str, started: SystemTime, elapsed: Duration) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            config: record.config,
            seeds: record.seeds,
            inputs: record.inputs,
            outputs: record.outputs,
            status: status.to_string(),
            timing: Timing {
                started_unix_ms: started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
                duration_secs: elapsed.as_secs_f64(),
            },
        }
    }
}

/// `<first output>.manifest.json`, else `relbias-<command>.manifest.json`.
pub fn default_path(command: &str, outputs: &[PathBuf]) -> PathBuf {
    match outputs.first() {
        Some(p) => {
            let mut s = p.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("relbias-{command}.manifest.json")),
    }
}
