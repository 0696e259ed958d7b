//! End-to-end exercise of the `latentmark` binary: argument handling and
//! the pretrain -> train -> embed -> extract -> evaluate -> export-attn
//! pipeline on a miniature model.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use latentmark_core::checkpoint::{Checkpoint, Phase};
use latentmark_core::config::{default_injection, Config};
use latentmark_core::dataset::procedural_image;
use latentmark_core::imageio;
use latentmark_core::trainer::Models;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latentmark"))
}

fn temp_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("latentmark-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn tiny_cfg() -> Config {
    let mut cfg = Config::toy();
    cfg.model.image_size = 32;
    cfg.model.alpha = 4;
    cfg.model.injection = default_injection(4);
    cfg.model.k = 8;
    cfg.model.codec_width = 8;
    cfg.model.c_f = 8;
    cfg.optim.batch_size = 1;
    cfg.optim.grad_accum = 1;
    cfg.train.dataset_size = 6;
    cfg.train.holdout_size = 2;
    cfg.train.pretrain_steps = 2;
    cfg.train.steps = 2;
    cfg.train.log_every = 1;
    cfg.distortion.warmup_identity_steps = 1;
    cfg.validate().unwrap();
    cfg
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        stdout(&out),
        stderr(&out)
    );
    stdout(&out)
}

/// An untrained (but architecturally valid) watermark checkpoint.
fn stub_checkpoint(dir: &Path) -> PathBuf {
    let cfg = tiny_cfg();
    let models = Models::new(&cfg);
    let ckpt = Checkpoint::capture(&cfg, Phase::Watermark, 0, &models.store, None);
    let path = dir.join("stub.ckpt");
    ckpt.save(&path).unwrap();
    path
}

#[test]
fn help_lists_subcommands_and_bad_args_fail() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    for sub in ["pretrain", "train", "embed", "extract", "evaluate", "export-attn"] {
        assert!(text.contains(sub), "--help must mention {sub}\n{text}");
    }

    let out = bin().arg("no-such-command").output().unwrap();
    assert!(!out.status.success());

    let out = bin().args(["embed", "--ckpt", "x", "--input", "y"]).output().unwrap();
    assert!(!out.status.success(), "missing required args must fail");
}

#[test]
fn embed_rejects_malformed_hex() {
    let dir = temp_dir("hex");
    let ckpt = stub_checkpoint(&dir);
    let input = dir.join("in.png");
    imageio::save_image_png(&input, &procedural_image(32, 7)).unwrap();

    // k=8 wants exactly 2 hex digits.
    for bad in ["a", "abc", "zz"] {
        let out = bin()
            .args(["embed", "--ckpt"])
            .arg(&ckpt)
            .arg("--input")
            .arg(&input)
            .args(["--bits", bad, "--output"])
            .arg(dir.join("out.png"))
            .output()
            .unwrap();
        assert!(!out.status.success(), "--bits {bad} must be rejected");
        let err = stderr(&out);
        assert!(
            err.contains("hex digits") || err.contains("hex digit"),
            "unhelpful error for {bad}: {err}"
        );
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn evaluate_rejects_unknown_distortions() {
    let dir = temp_dir("evalargs");
    let ckpt = stub_checkpoint(&dir);
    let out = bin()
        .args(["evaluate", "--ckpt"])
        .arg(&ckpt)
        .args(["--distortions", "identity,warp"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("warp"), "error should name the bad kind");

    let out = bin()
        .args(["evaluate", "--ckpt"])
        .arg(&ckpt)
        .args(["--distortions", "gaussian-blur"])
        .output()
        .unwrap();
    assert!(!out.status.success(), "blur without sigma must be rejected");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = temp_dir("pipeline");
    let cfg = tiny_cfg();
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).unwrap();

    let text = run_ok(
        bin().args(["pretrain", "--config"]).arg(&cfg_path).arg("--out-dir").arg(&dir),
    );
    assert!(text.contains("pretrain done"), "{text}");
    assert!(dir.join("pretrain.ckpt").exists());

    let text = run_ok(
        bin()
            .args(["train", "--config"])
            .arg(&cfg_path)
            .arg("--init")
            .arg(dir.join("pretrain.ckpt"))
            .arg("--out-dir")
            .arg(&dir),
    );
    assert!(text.contains("watermark training done"), "{text}");
    let wm = dir.join("watermark.ckpt");
    assert!(wm.exists());

    let input = dir.join("in.png");
    imageio::save_image_png(&input, &procedural_image(32, 99)).unwrap();
    let marked = dir.join("marked.png");
    run_ok(
        bin()
            .args(["embed", "--ckpt"])
            .arg(&wm)
            .arg("--input")
            .arg(&input)
            .args(["--bits", "a5", "--output"])
            .arg(&marked),
    );
    assert!(marked.exists());

    let mask = dir.join("mask.png");
    let text = run_ok(
        bin()
            .args(["extract", "--ckpt"])
            .arg(&wm)
            .arg("--input")
            .arg(&marked)
            .arg("--mask-output")
            .arg(&mask),
    );
    let line = text.lines().find(|l| l.starts_with("message: ")).expect("message line");
    let hex = line.trim_start_matches("message: ").trim();
    assert_eq!(hex.len(), 2, "k=8 gives 2 hex digits, got {hex:?}");
    assert!(hex.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(mask.exists());

    let json = dir.join("report.json");
    let text = run_ok(
        bin()
            .args(["evaluate", "--ckpt"])
            .arg(&wm)
            .args(["--distortions", "identity,jpeg:80", "--seed", "3", "--json"])
            .arg(&json),
    );
    assert!(text.contains("identity") && text.contains("jpeg:80"), "{text}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);

    let attn_dir = dir.join("attn");
    run_ok(
        bin()
            .args(["export-attn", "--ckpt"])
            .arg(&wm)
            .arg("--input")
            .arg(&input)
            .args(["--bits", "a5", "--out-dir"])
            .arg(&attn_dir),
    );
    // alpha=4 has one intermediate (CAF) stage: stage 1.
    assert!(attn_dir.join("attn_stage1.png").exists());

    let _ = std::fs::remove_dir_all(&dir);
}
