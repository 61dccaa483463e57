//! Variant comparison benchmark: trains every architecture variant on the
//! same seeded synthetic datasets with identical fold splits and reports a
//! per-variant DSC table. Fully deterministic — the same configuration
//! always yields a byte-identical CSV.

use serde::{Deserialize, Serialize};

use crate::data::generate_dataset;
use crate::error::Result;
use crate::network::{ArchitectureConfig, Variant};
use crate::scalar::Scalar;
use crate::train::{train_cv, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seeds: Vec<u64>,
    pub folds: usize,
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub channels: Vec<usize>,
    pub max_iters: usize,
    pub variants: Vec<Variant>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seeds: vec![0, 1, 2],
            folds: 2,
            samples: 40,
            height: 32,
            width: 32,
            num_classes: 6,
            channels: vec![16, 32, 64],
            max_iters: 600,
            variants: Variant::ALL.to_vec(),
        }
    }
}

/// One variant × seed measurement: per-class DSC averaged over folds plus
/// the foreground mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: Variant,
    pub seed: u64,
    pub per_class: Vec<f64>,
    pub mean_foreground: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Mean foreground DSC across seeds for one variant.
    pub fn variant_mean(&self, variant: Variant) -> Option<f64> {
        let scores: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.mean_foreground)
            .collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }

    /// `variant,seed,class0,...,classK-1,mean` rows plus a per-variant
    /// aggregate (`seed` column = `all`).
    pub fn csv(&self) -> String {
        let k = self.config.num_classes;
        let mut out = String::from("variant,seed");
        for c in 0..k {
            out.push_str(&format!(",class{c}"));
        }
        out.push_str(",mean\n");
        for row in &self.rows {
            out.push_str(&format!("{},{}", row.variant, row.seed));
            for d in &row.per_class {
                out.push_str(&format!(",{d}"));
            }
            out.push_str(&format!(",{}\n", row.mean_foreground));
        }
        for &v in &self.config.variants {
            if let Some(m) = self.variant_mean(v) {
                let mut per_class = vec![0.0f64; k];
                let mut n = 0usize;
                for r in self.rows.iter().filter(|r| r.variant == v) {
                    for (c, d) in r.per_class.iter().enumerate() {
                        per_class[c] += d;
                    }
                    n += 1;
                }
                out.push_str(&format!("{v},all"));
                for s in per_class {
                    out.push_str(&format!(",{}", s / n as f64));
                }
                out.push_str(&format!(",{m}\n"));
            }
        }
        out
    }
}

/// Run the full comparison: for every seed, generate one dataset and train
/// every variant on identical fold splits. `progress` is called once per
/// completed variant × seed cell.
pub fn run_bench<T: Scalar>(
    cfg: &BenchConfig,
    mut progress: Option<&mut dyn FnMut(&BenchRow)>,
) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let samples =
            generate_dataset::<T>(seed, cfg.samples, cfg.height, cfg.width, cfg.num_classes)?;
        for &variant in &cfg.variants {
            let arch = ArchitectureConfig::new(variant, cfg.num_classes, cfg.channels.clone());
            let tcfg = TrainConfig {
                max_iters: cfg.max_iters,
                folds: cfg.folds,
                seed,
                ..TrainConfig::default()
            };
            let folds = train_cv(&arch, &tcfg, &samples, None)?;
            let k = cfg.num_classes;
            let mut per_class = vec![0.0f64; k];
            for f in &folds {
                for (c, d) in f.eval.per_class.iter().enumerate() {
                    per_class[c] += d;
                }
            }
            for d in &mut per_class {
                *d /= folds.len() as f64;
            }
            let mean_foreground =
                folds.iter().map(|f| f.eval.mean_foreground).sum::<f64>() / folds.len() as f64;
            let row = BenchRow {
                variant,
                seed,
                per_class,
                mean_foreground,
            };
            if let Some(p) = progress.as_deref_mut() {
                p(&row);
            }
            rows.push(row);
        }
    }
    Ok(BenchReport {
        config: cfg.clone(),
        rows,
    })
}
