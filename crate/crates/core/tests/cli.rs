//! End-to-end smoke tests for the `blurclip` binary.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use blurclip::imaging::save_image;
use blurclip::manifest::{read_json, EvaluationReport, RunManifest, TruthManifest};
use common::{disk_mask, texture};

fn blurclip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blurclip"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small sharp/alpha pair and returns their paths.
fn small_scene(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let sharp = texture(32, 32, 1);
    let mask = disk_mask(32, 32, 16.0, 16.0, 8.0);
    let sharp_path = dir.join("sharp.png");
    let alpha_path = dir.join("alpha.png");
    save_image(&sharp, &sharp_path).unwrap();
    save_image(&mask, &alpha_path).unwrap();
    (sharp_path, alpha_path)
}

#[test]
fn synthesize_writes_case_and_truth_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (sharp, alpha) = small_scene(dir.path());
    let out = dir.path().join("case");
    let output = blurclip(&[
        "synthesize",
        "--sharp",
        path_str(&sharp),
        "--alpha",
        path_str(&alpha),
        "--motion",
        "translate 0.05",
        "--frames",
        "5",
        "--out",
        path_str(&out),
    ]);
    assert!(output.status.success(), "{output:?}");

    assert!(out.join("blurred.png").exists());
    assert!(out.join("alpha.png").exists());
    for i in 1..=5 {
        assert!(out.join(format!("frame_{i:02}.png")).exists());
    }
    assert!(!out.join("frame_06.png").exists());

    let truth: TruthManifest = read_json(&out.join("truth.json")).unwrap();
    assert_eq!(truth.n_frames, 5);
    assert_eq!(truth.params.theta(), [1.0, 0.0, 0.05, 0.0, 1.0, 0.0]);

    let manifest: RunManifest = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.command, "synthesize");
}

#[test]
fn missing_input_fails_with_path_in_message() {
    let dir = tempfile::tempdir().unwrap();
    let (sharp, _) = small_scene(dir.path());
    let out = dir.path().join("case");
    let output = blurclip(&[
        "synthesize",
        "--sharp",
        path_str(&sharp),
        "--alpha",
        path_str(&dir.path().join("no_such_alpha.png")),
        "--motion",
        "translate 0.05",
        "--out",
        path_str(&out),
    ]);
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("error:"), "stderr: {stderr}");
    assert!(stderr.contains("no_such_alpha.png"), "stderr: {stderr}");
}

#[test]
fn extract_respects_config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (sharp, alpha) = small_scene(dir.path());
    let case = dir.path().join("case");
    assert!(blurclip(&[
        "synthesize",
        "--sharp",
        path_str(&sharp),
        "--alpha",
        path_str(&alpha),
        "--motion",
        "translate 0.05",
        "--out",
        path_str(&case),
    ])
    .status
    .success());

    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, "n_frames = 5\nseed = 3\niterations_per_scale = [2, 2, 2]\n")
        .unwrap();
    let out = dir.path().join("run");
    let output = blurclip(&[
        "extract",
        "--blurred",
        path_str(&case.join("blurred.png")),
        "--alpha",
        path_str(&case.join("alpha.png")),
        "--config",
        path_str(&cfg_path),
        "--frames",
        "7",
        "--out",
        path_str(&out),
    ]);
    assert!(output.status.success(), "{output:?}");

    // --frames overrides the config file; seed and iterations come from it
    let manifest: RunManifest = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.config.n_frames, 7);
    assert_eq!(manifest.config.seed, 3);
    assert_eq!(manifest.config.iterations_per_scale, [2, 2, 2]);
    for i in 1..=7 {
        assert!(out.join(format!("frame_{i:02}.png")).exists());
    }
    assert!(out.join("params.json").exists());
}

#[test]
fn multi_object_extract_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (sharp, alpha) = small_scene(dir.path());
    let case = dir.path().join("case");
    assert!(blurclip(&[
        "synthesize",
        "--sharp",
        path_str(&sharp),
        "--alpha",
        path_str(&alpha),
        "--motion",
        "translate 0.05",
        "--out",
        path_str(&case),
    ])
    .status
    .success());

    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, "iterations_per_scale = [2, 2, 2]\n").unwrap();
    let out = dir.path().join("run");
    let output = blurclip(&[
        "extract",
        "--blurred",
        path_str(&case.join("blurred.png")),
        "--alpha",
        path_str(&case.join("alpha.png")),
        "--alpha",
        path_str(&case.join("alpha.png")),
        "--config",
        path_str(&cfg_path),
        "--out",
        path_str(&out),
    ]);
    assert!(output.status.success(), "{output:?}");

    for obj in ["object_01", "object_02", "composite"] {
        for i in 1..=7 {
            assert!(
                out.join(obj).join(format!("frame_{i:02}.png")).exists(),
                "{obj} frame {i}"
            );
        }
    }
    assert!(out.join("object_01").join("params.json").exists());
    let manifest: RunManifest = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.final_losses.len(), 2);
}

#[test]
fn evaluate_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (sharp, alpha) = small_scene(dir.path());
    let case = dir.path().join("case");
    assert!(blurclip(&[
        "synthesize",
        "--sharp",
        path_str(&sharp),
        "--alpha",
        path_str(&alpha),
        "--motion",
        "translate 0.05",
        "--out",
        path_str(&case),
    ])
    .status
    .success());

    let output = blurclip(&[
        "evaluate",
        "--result",
        path_str(&case),
        "--truth",
        path_str(&case),
    ]);
    assert!(output.status.success(), "{output:?}");

    let report: EvaluationReport = read_json(&case.join("evaluation.json")).unwrap();
    // identical frames: psnr is infinite (serialized null), ssim exactly 1
    assert!(report.mean_psnr.is_none());
    assert!((report.mean_ssim - 1.0).abs() < 1e-12);
    for f in &report.frames {
        assert!(f.psnr.is_none());
        assert!((f.ssim - 1.0).abs() < 1e-12);
    }
    let params = report.params.expect("params compared via truth.json");
    assert!(params.absolute.iter().all(|&e| e <= 1e-15));
}
