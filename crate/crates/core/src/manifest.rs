//! Reproducibility record written next to the outputs of every run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::report::SCHEMA_VERSION;

/// Manifest file name for a subcommand, so runs of different subcommands can share a directory.
pub fn manifest_name(command: &str) -> String {
    format!("manifest-{command}.json")
}

/// SHA-256 hex digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a value's canonical JSON form, so formatting changes in a config file do not
/// change the hash but any parameter change does.
pub fn canonical_hash<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(sha256_hex(v.to_string().as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: Option<String>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub threads: usize,
    /// Unix time at start, seconds.
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    /// Resolved parameters of the subcommand.
    pub parameters: serde_json::Value,
    /// Files written by the run, relative to the output directory.
    pub outputs: Vec<String>,
}

/// Collects the manifest fields while a run is in progress.
#[derive(Debug)]
pub struct ManifestBuilder {
    command: String,
    config_path: Option<String>,
    config_hash: String,
    started_unix: f64,
    clock: Instant,
    seeds: Vec<u64>,
    parameters: serde_json::Value,
}

impl ManifestBuilder {
    pub fn start(command: &str, config_path: Option<&Path>, config_hash: &str) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        ManifestBuilder {
            command: command.into(),
            config_path: config_path.map(|p| p.display().to_string()),
            config_hash: config_hash.into(),
            started_unix,
            clock: Instant::now(),
            seeds: Vec::new(),
            parameters: serde_json::Value::Null,
        }
    }

    pub fn seeds(&mut self, seeds: &[u64]) {
        self.seeds = seeds.to_vec();
    }

    pub fn parameters<T: Serialize>(&mut self, p: &T) -> Result<()> {
        self.parameters = serde_json::to_value(p).map_err(|e| Error::Serialization(e.to_string()))?;
        Ok(())
    }

    pub fn finish(self, outputs: Vec<String>) -> RunManifest {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            config_path: self.config_path,
            config_hash: self.config_hash,
            seeds: self.seeds,
            threads: rayon::current_num_threads(),
            started_unix: self.started_unix,
            wall_clock_seconds: self.clock.elapsed().as_secs_f64(),
            parameters: self.parameters,
            outputs,
        }
    }
}

impl RunManifest {
    pub fn file_name(&self) -> String {
        manifest_name(&self.command)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))?;
        let path = dir.join(self.file_name());
        fs::write(&path, s)?;
        Ok(path)
    }

    pub fn read(dir: &Path, command: &str) -> Result<Self> {
        let s = fs::read_to_string(dir.join(manifest_name(command)))?;
        serde_json::from_str(&s).map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn canonical_hash_ignores_formatting() {
        let a: serde_json::Value = serde_json::from_str(r#"{"x": 1, "y": [1,2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str("{\n \"y\":[1, 2],\"x\":1}").unwrap();
        assert_eq!(canonical_hash(&a).unwrap(), canonical_hash(&b).unwrap());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ManifestBuilder::start("equilibrium", None, "h");
        b.seeds(&[3, 4]);
        b.parameters(&serde_json::json!({"m": 64})).unwrap();
        let m = b.finish(vec!["a.csv".into()]);
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path(), "equilibrium").unwrap(), m);
        assert!(dir.path().join("manifest-equilibrium.json").exists());
    }
}
