//! End-to-end checks of the `splatloc` binary: exit codes, determinism,
//! and the file outputs of each subcommand.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splatloc"))
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("splatloc_cli_test").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn assert_status(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small scene/run settings shared by the config-driven tests.
fn tiny_config(out_dir: &Path) -> String {
    format!(
        r#"
reference_stride = 12
max_queries = 2
retrieval_k = 2
query_noise_sigma = 0.005
output_dir = "{}"

[scene]
kind = "recipe"
layout = "textured_box_room"
primitive_count = 400
texture_frequency = 6.0
seed = 3

[camera]
width = 48
height = 36
fov_x_deg = 70.0

[refine]
max_iters = 3

[backend]
kind = "oracle_noise"
sigma_rot_rad = 0.005
sigma_dir_rad = 0.005
seed = 11
"#,
        out_dir.display()
    )
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let out = bin().args(["eval", "--definitely-not-a-flag"]).output().unwrap();
    assert_status(&out, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
}

#[test]
fn eval_with_missing_config_exits_1() {
    let out = bin().args(["eval", "--config", "/nonexistent/missing.toml"]).output().unwrap();
    assert_status(&out, 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn synth_is_deterministic_for_a_fixed_seed() {
    let dir_a = temp_dir("synth_a");
    let dir_b = temp_dir("synth_b");
    for dir in [&dir_a, &dir_b] {
        let out = bin()
            .args([
                "synth",
                "--recipe",
                "default",
                "--seed",
                "1",
                "--primitives",
                "300",
                "--width",
                "48",
                "--height",
                "36",
                "--max-query-pngs",
                "2",
                "--out",
            ])
            .arg(dir)
            .output()
            .unwrap();
        assert_status(&out, 0);
    }
    for name in ["scene.ply", "trajectory.json", "query_0000.png", "query_0001.png"] {
        let a = std::fs::read(dir_a.join(name)).unwrap();
        let b = std::fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical synth runs");
    }
}

#[test]
fn synth_rejects_unknown_recipe() {
    let out = bin()
        .args(["synth", "--recipe", "nope", "--out"])
        .arg(temp_dir("synth_bad"))
        .output()
        .unwrap();
    assert_status(&out, 1);
}

#[test]
fn eval_runs_from_config_and_writes_reports() {
    let dir = temp_dir("eval_run");
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(&cfg_path, tiny_config(&dir.join("out"))).unwrap();
    let out = bin()
        .args(["eval", "--config"])
        .arg(&cfg_path)
        .args(["--threads", "2"])
        .output()
        .unwrap();
    assert_status(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("refinement"), "stdout: {stdout}");
    assert!(dir.join("out/summary.csv").exists());
    assert!(dir.join("out/full_results.jsonl").exists());
    assert!(dir.join("out/full_curve.svg").exists());
}

#[test]
fn eval_accepts_ply_scene_sources() {
    let dir = temp_dir("eval_ply");
    let synth = bin()
        .args([
            "synth",
            "--seed",
            "4",
            "--primitives",
            "300",
            "--max-query-pngs",
            "0",
            "--out",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert_status(&synth, 0);

    let cfg_path = dir.join("cfg.toml");
    let cfg = format!(
        r#"
reference_stride = 12
max_queries = 1
retrieval_k = 2
staging = "initialization"
output_dir = "{}"

[scene]
kind = "ply"
scene = "{}"
trajectory = "{}"

[camera]
width = 48
height = 36
fov_x_deg = 70.0

[backend]
kind = "oracle_noise"
sigma_rot_rad = 0.005
sigma_dir_rad = 0.005
seed = 2
"#,
        dir.join("out").display(),
        dir.join("scene.ply").display(),
        dir.join("trajectory.json").display()
    );
    std::fs::write(&cfg_path, cfg).unwrap();
    let out = bin().args(["eval", "--config"]).arg(&cfg_path).output().unwrap();
    assert_status(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("initialization"), "stdout: {stdout}");
}

#[test]
fn localize_filters_to_requested_query() {
    let dir = temp_dir("localize_one");
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(&cfg_path, tiny_config(&dir.join("out"))).unwrap();
    let out = bin()
        .args(["localize", "--config"])
        .arg(&cfg_path)
        .args(["--query", "1", "--threads", "1"])
        .output()
        .unwrap();
    assert_status(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("query   1"), "stdout: {stdout}");
    assert!(!stdout.contains("query   0"), "stdout: {stdout}");
}

#[test]
fn build_db_reports_entry_count() {
    let dir = temp_dir("build_db");
    let synth = bin()
        .args(["synth", "--seed", "6", "--primitives", "250", "--max-query-pngs", "0", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_status(&synth, 0);
    let out = bin()
        .args(["build-db", "--stride", "12", "--width", "48", "--height", "36", "--scene"])
        .arg(dir.join("scene.ply"))
        .arg("--trajectory")
        .arg(dir.join("trajectory.json"))
        .arg("--out")
        .arg(dir.join("poses.db"))
        .output()
        .unwrap();
    assert_status(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    // 90 poses at stride 12 -> 8 references -> 8 + 7 augmented entries.
    assert!(stdout.contains("15 entries from 8 references"), "stdout: {stdout}");
    assert!(dir.join("poses.db").exists());
}

#[test]
fn ablate_dbaug_prints_both_arms() {
    let dir = temp_dir("ablate_dbaug");
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(&cfg_path, tiny_config(&dir.join("out"))).unwrap();
    let out = bin()
        .args(["ablate", "--what", "dbaug", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_status(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("augmented") && stdout.contains("plain"), "stdout: {stdout}");
    assert!(stdout.contains("mean top-1 center distance"), "stdout: {stdout}");
}

#[test]
fn grad_check_small_case_passes_and_prints_components() {
    let out = bin()
        .args([
            "grad-check",
            "--seed",
            "7",
            "--cases",
            "1",
            "--primitives",
            "80",
            "--width",
            "32",
            "--height",
            "32",
        ])
        .output()
        .unwrap();
    assert_status(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in ["rot_x", "rot_y", "rot_z", "trans_x", "trans_y", "trans_z"] {
        assert!(stdout.contains(name), "missing {name} in: {stdout}");
    }
    assert!(stdout.contains("max relative error"));
}

#[test]
fn trace_plot_renders_csv_to_svg() {
    let dir = temp_dir("trace_plot");
    let csv = dir.join("curve.csv");
    std::fs::write(&csv, "iteration,loss,pass\n0,1.0,0.0\n1,0.5,0.4\n2,0.2,0.9\n").unwrap();
    let svg_path = dir.join("curve.svg");
    let out = bin()
        .args(["trace-plot", "--input"])
        .arg(&csv)
        .arg("--output")
        .arg(&svg_path)
        .output()
        .unwrap();
    assert_status(&out, 0);
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("polyline"));
    assert!(svg.contains("loss") && svg.contains("pass"));

    let bad = bin()
        .args(["trace-plot", "--input"])
        .arg(dir.join("missing.csv"))
        .arg("--output")
        .arg(dir.join("x.svg"))
        .output()
        .unwrap();
    assert_status(&bad, 1);
}
