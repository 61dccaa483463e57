//! Run manifest: the resolved configuration plus run metadata, written
//! atomically at the end of a run so an interrupted run never leaves a
//! manifest behind.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ResolvedConfig;

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ResolvedConfig,
    pub seed: u64,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub out_dir: String,
    pub artifacts: Vec<String>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, config: &ResolvedConfig, out_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.clone(),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now_unix(),
            finished_unix: None,
            out_dir: out_dir.display().to_string(),
            artifacts: Vec::new(),
        }
    }

    /// Stamp the end time and write `run_manifest.json` atomically.
    pub fn finish(mut self, out_dir: &Path) -> Result<()> {
        self.finished_unix = Some(now_unix());
        let path = out_dir.join(MANIFEST_NAME);
        let tmp = path.with_extension("tmp");
        let body = serde_json::to_vec_pretty(&self)?;
        std::fs::write(&tmp, body).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, &path)
            .with_context(|| format!("renaming into {}", path.display()))?;
        Ok(())
    }
}
