//! Run manifests: what was run, on what, and the hash of every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::detect::StageTiming;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Option<PipelineConfig>,
    pub inputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: None,
            inputs: Vec::new(),
            seed: None,
            timings: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Hashes `path` and lists it as an output.
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.outputs.push(OutputFile {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    /// Outputs whose current content no longer matches the recorded hash.
    pub fn stale_outputs(&self) -> Result<Vec<PathBuf>> {
        let mut stale = Vec::new();
        for o in &self.outputs {
            if !o.path.exists() || sha256_file(&o.path)? != o.sha256 {
                stale.push(o.path.clone());
            }
        }
        Ok(stale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.csv");
        std::fs::write(&out, "a,b\n").unwrap();
        let mut m = RunManifest::new("signals");
        m.config = Some(PipelineConfig::default());
        m.seed = Some(3);
        m.add_output(&out).unwrap();
        let mp = dir.path().join("manifest.json");
        m.write(&mp).unwrap();
        let back = RunManifest::read(&mp).unwrap();
        assert_eq!(back, m);
        assert!(back.stale_outputs().unwrap().is_empty());
        std::fs::write(&out, "changed\n").unwrap();
        assert_eq!(back.stale_outputs().unwrap(), vec![out]);
    }
}
