//! The JSON run manifest written next to every training run's outputs:
//! the resolved configuration (overrides already applied), the seed, a
//! content hash of the code version string, and the wall-clock time. A run
//! is reconstructible from its manifest — feeding the `config` map back
//! through the parser reproduces the same metrics file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use proxyspike::checkpoint::atomic_write;
use proxyspike::{Error, Result};

/// Everything needed to reproduce or audit a run.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub code_version: String,
    pub code_hash: String,
    pub wall_clock_seconds: f64,
}

/// The version string identifying this build of the tool.
pub fn code_version() -> String {
    format!("proxyspike {}", env!("CARGO_PKG_VERSION"))
}

/// Hex SHA-256 content hash of the code version string.
pub fn code_hash() -> String {
    let digest = Sha256::digest(code_version().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &str, config: BTreeMap<String, String>, seed: u64, wall: f64) -> Self {
        Manifest {
            command: command.to_string(),
            config,
            seed,
            code_version: code_version(),
            code_hash: code_hash(),
            wall_clock_seconds: wall,
        }
    }

    /// Atomically write the manifest as pretty-printed JSON.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
        text.push('\n');
        atomic_write(path, text.as_bytes())
    }
}
