//! Run records: what was run, with which configs and inputs.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use textsr_core::{Error, ModelConfig, Result, TrainConfig};

pub const RUN_RECORD_FILE: &str = "run_record.json";

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub args: Value,
    pub configs: Value,
    pub seed: u64,
    pub version: String,
    /// Input path (as given) to its SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub timestamp_unix: u64,
}

impl RunRecord {
    pub fn new(command: &str, args: &impl Serialize, seed: u64) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            args: serde_json::to_value(args)?,
            configs: Value::Null,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: BTreeMap::new(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }

    /// The seed lives in its own field, so it is dropped from the train config.
    pub fn with_configs(mut self, model: &ModelConfig, train: Option<&TrainConfig>) -> Result<Self> {
        let mut configs = serde_json::Map::new();
        configs.insert("model".into(), serde_json::to_value(model)?);
        if let Some(t) = train {
            let mut t = serde_json::to_value(t)?;
            if let Some(obj) = t.as_object_mut() {
                obj.remove("seed");
            }
            configs.insert("train".into(), t);
        }
        self.configs = Value::Object(configs);
        Ok(self)
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.insert(path.display().to_string(), digest_path(path)?);
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// `<dir>/run_record.json` for directory outputs, `<file>.run.json` otherwise.
pub fn record_path(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join(RUN_RECORD_FILE)
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        output.with_file_name(name)
    }
}

fn digest_file(path: &Path, hasher: &mut Sha256) -> Result<()> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Ok(());
        }
        hasher.update(&buf[..n]);
    }
}

/// SHA-256 of a file, or of a directory's sorted `name\0contents` stream.
pub fn digest_path(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            hasher.update(p.file_name().unwrap_or_default().as_encoded_bytes());
            hasher.update([0u8]);
            digest_file(&p, &mut hasher)?;
        }
    } else {
        digest_file(path, &mut hasher)?;
    }
    Ok(hex::encode(hasher.finalize()))
}
