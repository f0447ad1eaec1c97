use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Record of one run: what was asked for and what was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// TOML snapshot of the effective configuration.
    pub config: String,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub outputs: Vec<OutputFile>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files into an output directory and keeps their checksums.
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<OutputFile>,
    started: u64,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: now(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(OutputFile {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_vec_pretty(value).expect("serializable report");
        text.push(b'\n');
        self.write(name, &text)
    }

    pub fn finish(self, command: &str, config: &RunConfig) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            config: toml::to_string(config).expect("config serializes"),
            started_unix_s: self.started,
            finished_unix_s: now(),
            outputs: self.files,
        };
        let path = self.dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_vec_pretty(&manifest).expect("serializable manifest");
        text.push(b'\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::create(dir.path()).unwrap();
        out.write("a.csv", b"x,y,yerr\n1,2,0\n").unwrap();
        let cfg = RunConfig::default_config();
        let m = out.finish("test", &cfg).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.outputs[0].bytes, 15);
    }
}
