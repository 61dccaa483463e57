//! End-to-end command contract: config precedence, artifact layout,
//! checkpoint round-trips through the eval/predict paths, PGM I/O, and
//! failure modes that must not leave partial run directories behind.

use std::fs;
use std::path::Path;

use dynunet_cli::config::{CommonOverrides, ResolvedConfig, CHANNEL_PLAN};
use dynunet_cli::{pgm, run};
use dynunet_core::LabelMap;

fn run_cli(args: &[&str]) -> i32 {
    let mut full = vec!["dynunet"];
    full.extend_from_slice(args);
    run(full)
}

// ---------------------------------------------------------------------------
// configuration

#[test]
fn defaults_resolve_to_dynamic_unet_desk_scale() {
    let cfg = ResolvedConfig::default();
    assert_eq!(cfg.variant, "dynamic_unet");
    assert_eq!(cfg.channels().unwrap(), vec![32, 64, 128]);
    assert_eq!((cfg.height, cfg.width, cfg.classes), (64, 64, 6));
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, r#"{"seed": 5, "variant": "unet", "iters": 77}"#).unwrap();
    let flags = CommonOverrides {
        iters: Some(99),
        ..CommonOverrides::default()
    };
    let cfg = ResolvedConfig::resolve(Some(&path), &flags).unwrap();
    assert_eq!(cfg.seed, 5); // from file
    assert_eq!(cfg.variant, "unet"); // from file
    assert_eq!(cfg.iters, 99); // flag wins over file
    assert_eq!(cfg.folds, 5); // default untouched
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, r#"{"sede": 5}"#).unwrap();
    assert!(ResolvedConfig::resolve(Some(&path), &CommonOverrides::default()).is_err());
}

#[test]
fn levels_index_the_channel_plan() {
    let mut cfg = ResolvedConfig::default();
    cfg.levels = 5;
    assert_eq!(cfg.channels().unwrap(), CHANNEL_PLAN.to_vec());
    cfg.levels = 0;
    assert!(cfg.channels().is_err());
    cfg.levels = 6;
    assert!(cfg.channels().is_err());
}

// ---------------------------------------------------------------------------
// pgm

#[test]
fn pgm_roundtrip_and_comment_handling() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.pgm");
    let pixels: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
    pgm::write(&path, 3, 4, &pixels).unwrap();
    let (h, w, back) = pgm::read(&path).unwrap();
    assert_eq!((h, w), (3, 4));
    assert_eq!(back, pixels);

    let with_comment = b"P5\n# a comment\n2 2\n255\n\x00\x40\x80\xff".to_vec();
    let (h, w, px) = pgm::parse(&with_comment).unwrap();
    assert_eq!((h, w), (2, 2));
    assert_eq!(px, vec![0x00, 0x40, 0x80, 0xff]);

    assert!(pgm::parse(b"P2\n2 2\n255\n....").is_err());
    assert!(pgm::parse(b"P5\n4 4\n255\nxx").is_err());
}

#[test]
fn pgm_labels_scale_evenly_to_255() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.pgm");
    let labels = LabelMap::new(1, 2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
    pgm::write_labels(&path, &labels, 3).unwrap();
    let (_, _, px) = pgm::read(&path).unwrap();
    assert_eq!(px, vec![0, 127, 255, 255, 127, 0]);
}

// ---------------------------------------------------------------------------
// commands

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    fs::write(
        &path,
        r#"{
            "variant": "unet",
            "channels": [4, 8],
            "classes": 3,
            "height": 16,
            "width": 16,
            "samples": 4,
            "iters": 4,
            "folds": 2,
            "seed": 3
        }"#,
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn train_writes_checkpoints_logs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let code = run_cli(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    for fold in 0..2 {
        let fd = out.join(format!("fold{fold}"));
        assert!(fd.join("manifest.json").exists());
        assert!(fd.join("params.dut1").exists());
        let log = fs::read_to_string(fd.join("train_log.csv")).unwrap();
        assert!(log.starts_with("iter,lr,loss_total,loss_ce,loss_dice\n"));
        assert_eq!(log.lines().count(), 5); // header + 4 iterations
        let eval = fs::read_to_string(fd.join("eval.csv")).unwrap();
        assert!(eval.starts_with("class,dsc\n"));
        assert!(eval.lines().last().unwrap().starts_with("mean,"));
    }
    let manifest = fs::read_to_string(out.join("run_manifest.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(parsed["command"], "train");
    assert_eq!(parsed["config"]["variant"], "unet");
    assert!(parsed["finished_unix"].is_u64());
}

#[test]
fn eval_and_predict_consume_a_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    assert_eq!(
        run_cli(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]),
        0
    );
    let ckpt = out.join("fold0");

    let eval_out = dir.path().join("eval");
    assert_eq!(
        run_cli(&[
            "eval",
            "--config",
            &cfg,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            eval_out.to_str().unwrap(),
        ]),
        0
    );
    let eval = fs::read_to_string(eval_out.join("eval.csv")).unwrap();
    assert!(eval.starts_with("class,dsc\n"));
    assert_eq!(eval.lines().count(), 5); // header + 3 classes + mean

    // predict from a PGM image
    let img = dir.path().join("input.pgm");
    pgm::write(&img, 16, 16, &vec![128u8; 256]).unwrap();
    let pred_out = dir.path().join("pred");
    assert_eq!(
        run_cli(&[
            "predict",
            "--config",
            &cfg,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--image",
            img.to_str().unwrap(),
            "--out",
            pred_out.to_str().unwrap(),
        ]),
        0
    );
    let (h, w, _) = pgm::read(&pred_out.join("prediction.pgm")).unwrap();
    assert_eq!((h, w), (16, 16));
    let logits: dynunet_core::Tensor<f32> =
        dynunet_core::io::load_tensor(&pred_out.join("logits.dut1")).unwrap();
    assert_eq!(logits.shape, dynunet_core::Shape::nchw(1, 3, 16, 16));
    assert!(pred_out.join("run_manifest.json").exists());
}

#[test]
fn gradcheck_command_reports_pass() {
    assert_eq!(run_cli(&["gradcheck", "--target", "deform", "--seeds", "1"]), 0);
}

#[test]
fn invalid_arguments_exit_nonzero_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    // unknown variant must fail before the output directory is created
    assert_ne!(
        run_cli(&[
            "train",
            "--variant",
            "resnet",
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    assert!(!out.exists());
    assert_ne!(run_cli(&["train"]), 0); // missing --out
    assert_ne!(run_cli(&["frobnicate"]), 0); // unknown subcommand
}

#[test]
fn identical_seeds_reproduce_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(
            run_cli(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]),
            0
        );
    }
    for rel in ["fold0/train_log.csv", "fold0/eval.csv", "fold1/params.dut1"] {
        assert_eq!(
            fs::read(a.join(rel)).unwrap(),
            fs::read(b.join(rel)).unwrap(),
            "{rel} differs between identical runs"
        );
    }
}
