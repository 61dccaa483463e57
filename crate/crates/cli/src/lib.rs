//! Command-line driver: training, evaluation, prediction, gradient
//! checking, and the variant comparison benchmark.
//!
//! Configuration precedence is flags > JSON config file > built-in
//! defaults; the fully resolved configuration is echoed into a run
//! manifest so any run can be reproduced exactly.

pub mod config;
pub mod manifest;
pub mod pgm;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dynunet_core::bench::{run_bench, BenchConfig};
use dynunet_core::checkpoint;
use dynunet_core::data::generate_dataset;
use dynunet_core::gradcheck::run_suite;
use dynunet_core::network::{argmax_labels, NetworkState, Variant};
use dynunet_core::train::{evaluate, train_cv, ITER_LOG_HEADER};
use dynunet_core::{Shape, Tensor};

use config::{CommonOverrides, ResolvedConfig};
use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(
    name = "dynunet",
    about = "Dynamic U-Net segmentation kit",
    version,
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonFlags {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for data, init, and shuffling
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Architecture variant (unet, sconv_unet, dcc_unet, dcd_unet, dcu_unet, dynamic_unet)
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Encoder depth: how many entries of the channel plan to use
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// Number of segmentation classes (including background)
    #[arg(long, global = true)]
    pub classes: Option<usize>,
    /// Training iterations
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Cross-validation folds
    #[arg(long, global = true)]
    pub folds: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one variant with k-fold cross-validation on synthetic data
    Train(TrainArgs),
    /// Evaluate a checkpoint; prints a per-class DSC table
    Eval(EvalArgs),
    /// Run inference on one image and write the predicted label map
    Predict(PredictArgs),
    /// Finite-difference validation of analytic gradients
    Gradcheck(GradcheckArgs),
    /// Train all variants on shared seeds/folds and emit a comparison table
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// Checkpoint directory (containing manifest.json + params.dut1)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate on this DUT1 image + label-map pair instead of synthetic data
    #[arg(long, requires = "labels")]
    pub image: Option<PathBuf>,
    /// DUT1 label tensor paired with --image (class indices as numbers)
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// Checkpoint directory (containing manifest.json + params.dut1)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input image: PGM P5 8-bit grayscale or a DUT1 tensor
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// Check target: all, ops, deform, dcc, dcd, dcu, network, or a variant name
    #[arg(long, default_value = "all")]
    pub target: String,
    /// Number of seeds to check
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// Number of seeds to benchmark over
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
}

/// Run the CLI; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn resolve(common: &CommonFlags) -> Result<ResolvedConfig> {
    let overrides = CommonOverrides {
        seed: common.seed,
        variant: common.variant.clone(),
        levels: common.levels,
        classes: common.classes,
        iters: common.iters,
        folds: common.folds,
    };
    ResolvedConfig::resolve(common.config.as_deref(), &overrides)
}

fn require_out(common: &CommonFlags) -> Result<PathBuf> {
    common
        .out
        .clone()
        .context("--out DIR is required for this command")
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)
        .with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let out = require_out(&args.common)?;
    let arch = cfg.architecture()?;
    let tcfg = cfg.train_config();
    // validate everything before touching the filesystem
    arch.validate().map_err(anyhow::Error::from)?;
    tcfg.validate(cfg.samples).map_err(anyhow::Error::from)?;
    let mut manifest = RunManifest::start("train", &cfg, &out);

    let samples =
        generate_dataset::<f32>(cfg.seed, cfg.samples, cfg.height, cfg.width, cfg.classes)?;
    fs::create_dir_all(&out)?;
    let results = train_cv(&arch, &tcfg, &samples, Some(&out))?;
    for r in &results {
        let mut log = String::from(ITER_LOG_HEADER);
        log.push('\n');
        for row in &r.log {
            log.push_str(&row.csv_row());
            log.push('\n');
        }
        let log_path = out.join(format!("fold{}", r.fold)).join("train_log.csv");
        write_atomic(&log_path, log.as_bytes())?;
        let eval_path = out.join(format!("fold{}", r.fold)).join("eval.csv");
        write_atomic(&eval_path, r.eval.csv().as_bytes())?;
        manifest.artifacts.push(log_path.display().to_string());
        manifest.artifacts.push(eval_path.display().to_string());
        manifest
            .artifacts
            .push(out.join(format!("fold{}", r.fold)).display().to_string());
        println!(
            "fold {}: final loss {:.6}, mean foreground DSC {:.4}",
            r.fold,
            r.log.last().map(|l| l.loss_total).unwrap_or(f64::NAN),
            r.eval.mean_foreground
        );
    }
    let mean: f64 =
        results.iter().map(|r| r.eval.mean_foreground).sum::<f64>() / results.len() as f64;
    println!("cross-validated mean foreground DSC: {mean:.4}");
    manifest.finish(&out)?;
    Ok(())
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let net: NetworkState<f32> = checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let report = match (&args.image, &args.labels) {
        (Some(image), Some(labels)) => {
            let img: Tensor<f32> = dynunet_core::io::load_tensor(image)?;
            let truth_t: Tensor<f32> = dynunet_core::io::load_tensor(labels)?;
            let truth = tensor_to_labels(&truth_t, net.config.num_classes)?;
            let logits = net.infer(&img)?;
            let pred = argmax_labels(&logits);
            let k = net.config.num_classes;
            let per_class: Vec<f64> = (0..k)
                .map(|c| dynunet_core::train::dsc_metric(&pred, &truth, c))
                .collect::<dynunet_core::Result<_>>()?;
            let mean_foreground = per_class[1..].iter().sum::<f64>() / (k - 1) as f64;
            dynunet_core::train::EvalReport {
                per_class,
                mean_foreground,
            }
        }
        _ => {
            // seeded held-out set, disjoint from training seeds by offset
            let samples = generate_dataset::<f32>(
                cfg.seed.wrapping_add(0x5eed_0000),
                cfg.samples,
                cfg.height,
                cfg.width,
                net.config.num_classes,
            )?;
            evaluate(&net, &samples)?
        }
    };
    print!("{}", report.csv());
    if let Some(out) = &args.common.out {
        fs::create_dir_all(out)?;
        let mut manifest = RunManifest::start("eval", &cfg, out);
        let path = out.join("eval.csv");
        write_atomic(&path, report.csv().as_bytes())?;
        manifest.artifacts.push(path.display().to_string());
        manifest.finish(out)?;
    }
    Ok(())
}

pub fn cmd_predict(args: PredictArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let out = require_out(&args.common)?;
    let net: NetworkState<f32> = checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let img = load_image(&args.image)?;
    let logits = net.infer(&img)?;
    let pred = argmax_labels(&logits);

    fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::start("predict", &cfg, &out);
    let pgm_path = out.join("prediction.pgm");
    pgm::write_labels(&pgm_path, &pred, net.config.num_classes)?;
    let logits_path = out.join("logits.dut1");
    dynunet_core::io::save_tensor(&logits_path, &logits)?;
    manifest.artifacts.push(pgm_path.display().to_string());
    manifest.artifacts.push(logits_path.display().to_string());
    manifest.finish(&out)?;
    println!(
        "wrote {} and {}",
        pgm_path.display(),
        logits_path.display()
    );
    Ok(())
}

pub fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|i| cfg.seed + i).collect();
    let reports = run_suite(&args.target, &seeds)?;
    let mut failed = false;
    for (name, report) in &reports {
        for check in &report.checks {
            println!(
                "{name}.{} {} max_rel {:.3e} max_abs {:.3e} {}",
                check.name,
                check.shape,
                check.max_rel,
                check.max_abs,
                if check.pass { "PASS" } else { "FAIL" }
            );
            failed |= !check.pass;
        }
    }
    if failed {
        bail!("gradient check failed");
    }
    println!("all gradient checks passed");
    Ok(())
}

pub fn cmd_bench(args: BenchArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let bcfg = BenchConfig {
        seeds: (0..args.seeds as u64).map(|i| cfg.seed + i).collect(),
        folds: cfg.folds,
        samples: cfg.samples,
        height: cfg.height,
        width: cfg.width,
        num_classes: cfg.classes,
        channels: cfg.channels()?,
        max_iters: cfg.iters,
        variants: Variant::ALL.to_vec(),
    };
    let mut progress = |row: &dynunet_core::bench::BenchRow| {
        eprintln!(
            "done: {} seed {} mean DSC {:.4}",
            row.variant, row.seed, row.mean_foreground
        );
    };
    let report = run_bench::<f32>(&bcfg, Some(&mut progress))?;
    print!("{}", report.csv());
    if let Some(out) = &args.common.out {
        fs::create_dir_all(out)?;
        let mut manifest = RunManifest::start("bench", &cfg, out);
        let path = out.join("bench.csv");
        write_atomic(&path, report.csv().as_bytes())?;
        manifest.artifacts.push(path.display().to_string());
        manifest.finish(out)?;
    }
    Ok(())
}

/// Load a network input from PGM P5 (values scaled to [0,1]) or DUT1.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"P5") {
        let (h, w, pixels) = pgm::parse(&bytes)?;
        let data: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Ok(Tensor::new(Shape::nchw(1, 1, h, w), data)?)
    } else {
        Ok(dynunet_core::io::load_tensor(path)?)
    }
}

/// Interpret a [1,1,H,W] tensor of numeric class ids as a label map.
fn tensor_to_labels(
    t: &Tensor<f32>,
    num_classes: usize,
) -> Result<dynunet_core::LabelMap> {
    let s = t.shape;
    if s.c() != 1 {
        bail!("label tensor must have one channel, got {s}");
    }
    let labels: Vec<usize> = t
        .data
        .iter()
        .map(|&v| {
            let l = v.round();
            if l < 0.0 || l >= num_classes as f32 {
                bail!("label value {v} outside 0..{num_classes}");
            }
            Ok(l as usize)
        })
        .collect::<Result<_>>()?;
    Ok(dynunet_core::LabelMap::new(s.n(), s.h(), s.w(), labels)?)
}

/// Entry point shared by the binary.
pub fn main_entry() -> i32 {
    let code = run(std::env::args_os());
    std::io::stdout().flush().ok();
    code
}
