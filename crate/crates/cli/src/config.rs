//! Run configuration with three-layer precedence: command-line flags
//! override a JSON config file, which overrides built-in defaults.

use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use dynunet_core::network::{ArchitectureConfig, Variant};
use dynunet_core::train::TrainConfig;

/// Channel plan the `--levels` flag draws from.
pub const CHANNEL_PLAN: [usize; 5] = [32, 64, 128, 256, 512];

/// Values a JSON config file may provide; every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub levels: Option<usize>,
    pub classes: Option<usize>,
    pub iters: Option<usize>,
    pub folds: Option<usize>,
    pub samples: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub lr0: Option<f64>,
    pub poly_power: Option<f64>,
    pub momentum: Option<f64>,
    pub nesterov: Option<bool>,
    pub batch_size: Option<usize>,
    /// Explicit channel plan; overrides `levels` when present.
    pub channels: Option<Vec<usize>>,
}

/// Flag values that may override the config file.
#[derive(Debug, Clone, Default)]
pub struct CommonOverrides {
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub levels: Option<usize>,
    pub classes: Option<usize>,
    pub iters: Option<usize>,
    pub folds: Option<usize>,
}

/// The fully resolved configuration echoed into run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub variant: String,
    pub levels: usize,
    pub classes: usize,
    pub iters: usize,
    pub folds: usize,
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub lr0: f64,
    pub poly_power: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub batch_size: usize,
    pub channels_override: Option<Vec<usize>>,
}

impl Default for ResolvedConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ResolvedConfig {
            seed: 0,
            variant: "dynamic_unet".to_string(),
            levels: 3,
            classes: 6,
            iters: t.max_iters,
            folds: t.folds,
            samples: 40,
            height: 64,
            width: 64,
            lr0: t.lr0,
            poly_power: t.poly_power,
            momentum: t.momentum,
            nesterov: t.nesterov,
            batch_size: t.batch_size,
            channels_override: None,
        }
    }
}

impl ResolvedConfig {
    pub fn resolve(config_path: Option<&Path>, flags: &CommonOverrides) -> Result<Self> {
        let mut cfg = ResolvedConfig::default();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let file: FileConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            cfg.apply_file(&file);
        }
        cfg.apply_flags(flags);
        Ok(cfg)
    }

    fn apply_file(&mut self, f: &FileConfig) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &f.$field { self.$field = v.clone(); })*
            };
        }
        take!(seed, variant, levels, classes, iters, folds, samples, height, width, lr0,
              poly_power, momentum, nesterov, batch_size);
        if f.channels.is_some() {
            self.channels_override = f.channels.clone();
        }
    }

    fn apply_flags(&mut self, o: &CommonOverrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.variant {
            self.variant = v.clone();
        }
        if let Some(v) = o.levels {
            self.levels = v;
        }
        if let Some(v) = o.classes {
            self.classes = v;
        }
        if let Some(v) = o.iters {
            self.iters = v;
        }
        if let Some(v) = o.folds {
            self.folds = v;
        }
    }

    pub fn channels(&self) -> Result<Vec<usize>> {
        if let Some(c) = &self.channels_override {
            return Ok(c.clone());
        }
        if self.levels == 0 || self.levels > CHANNEL_PLAN.len() {
            anyhow::bail!(
                "levels must lie in 1..={}, got {}",
                CHANNEL_PLAN.len(),
                self.levels
            );
        }
        Ok(CHANNEL_PLAN[..self.levels].to_vec())
    }

    pub fn architecture(&self) -> Result<ArchitectureConfig> {
        let variant = Variant::from_str(&self.variant)?;
        Ok(ArchitectureConfig::new(
            variant,
            self.classes,
            self.channels()?,
        ))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            max_iters: self.iters,
            poly_power: self.poly_power,
            momentum: self.momentum,
            nesterov: self.nesterov,
            batch_size: self.batch_size,
            folds: self.folds,
            seed: self.seed,
        }
    }
}
