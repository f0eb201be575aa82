//! Network configuration for `run-party`.

use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;

use crate::{CliError, Mode};

/// ```toml
/// parties = ["127.0.0.1:7001", "127.0.0.1:7002", "127.0.0.1:7003"]
/// k = 72                 # optional; must match the share files
/// mode = "exact"         # optional; --mode overrides
/// connect_timeout_secs = 30
///
/// [seeds]                # only honoured with --insecure-deterministic
/// master = 42
/// ```
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub parties: [SocketAddr; 3],
    pub k: Option<u32>,
    pub mode: Option<Mode>,
    #[serde(default = "default_timeout")]
    pub connect_timeout_secs: u64,
    pub seeds: Option<Seeds>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub master: u64,
}

fn default_timeout() -> u64 {
    30
}

impl NetConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("network config: {e}")))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.connect_timeout_secs)
    }

    /// The deterministic master seed, allowed only when the operator opted in.
    pub fn master_seed(&self, insecure_deterministic: bool) -> Result<Option<u64>, CliError> {
        match (&self.seeds, insecure_deterministic) {
            (Some(s), true) => Ok(Some(s.master)),
            (Some(_), false) => Err(CliError::config(
                "config sets [seeds] but --insecure-deterministic was not given",
            )),
            (None, true) => Err(CliError::config("--insecure-deterministic needs [seeds] master in the config")),
            (None, false) => Ok(None),
        }
    }
}
