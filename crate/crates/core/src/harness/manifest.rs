//! Run manifests: everything needed to repeat a run bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::ScenarioSpec;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub iterations: u64,
    /// Evaluated policy, or `None` for training runs.
    #[serde(default)]
    pub policy: Option<String>,
    /// sha256 of every output file, keyed by file name.
    #[serde(default)]
    pub outputs: Vec<(String, String)>,
    pub scenario: ScenarioSpec,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &str, scenario: &ScenarioSpec, iterations: u64) -> Self {
        Self {
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: scenario.config_hash(),
            seed: scenario.seed,
            iterations,
            policy: None,
            outputs: Vec::new(),
            scenario: scenario.clone(),
        }
    }

    pub fn record_output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.push((name.into(), sha256_hex(bytes)));
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("manifest: {e}")))?;
        if m.scenario.config_hash() != m.config_hash {
            return Err(HarnessError::Config("manifest hash does not match its scenario".into()));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_hash_check() {
        let s = ScenarioSpec::from_toml("duration_s = 5.0\n[random]\n").unwrap();
        let mut m = Manifest::new("train", &s, 3);
        m.record_output("checkpoint.bin", b"abc");
        assert_eq!(m.outputs[0].1, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        assert_eq!(Manifest::read(&p).unwrap(), m);
        m.config_hash = "0".into();
        m.write(&p).unwrap();
        assert!(matches!(Manifest::read(&p), Err(HarnessError::Config(_))));
    }
}
