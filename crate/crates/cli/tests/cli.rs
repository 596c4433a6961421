use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tetra-recon"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok_json(args: &[&str], cwd: &Path) -> Value {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn data(name: &str) -> String {
    format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn help_lists_every_command_and_flag() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "init-shell",
        "fit-geometry",
        "fit-texture",
        "extract-mesh",
        "render",
        "synth-scene",
        "eval",
        "compose-prompt",
        "schema",
    ] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    for flag in [
        "--config",
        "--seed",
        "--out",
        "--threads",
        "--resolution",
        "--score-provider",
        "--scores",
        "--record-scores",
        "--gaussian-target",
        "--paper-scale",
        "--precision",
    ] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn prompts_match_golden_file() {
    let golden = std::fs::read_to_string(data("prompts.golden")).unwrap();
    let attrs = data("attrs.json");
    let cwd = std::env::temp_dir();
    let mut n = 0;
    for line in golden.lines().filter(|l| !l.is_empty()) {
        let (key, expected) = line.split_once('\t').unwrap();
        let parts: Vec<&str> = key.split(' ').collect();
        let mut args = vec!["compose-prompt", "--attrs", attrs.as_str(), "--view", parts[0]];
        if parts[1] == "1" {
            args.push("--face");
        }
        if parts[2] == "1" {
            args.push("--normal");
        }
        let v = ok_json(&args, &cwd);
        assert_eq!(v["prompt"], expected, "{key}");
        assert_eq!(v["command"], "compose-prompt");
        n += 1;
    }
    assert_eq!(n, 16);
}

#[test]
fn synthetic_truth_evaluates_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    ok_json(&["synth-scene", "--shape", "capsule", "--resolution", "32", "--out", "scene"], dir.path());
    let v = ok_json(&["eval", "--recon", "scene/gt.obj", "--truth", "scene/gt.obj", "--samples", "2000"], dir.path());
    assert_eq!(v["chamfer"], 0.0);
    assert_eq!(v["p2s"], 0.0);
    assert_eq!(v["normal_error"], 0.0);
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(run(&["no-such-command"], p).status.code(), Some(1));
    assert_eq!(run(&["eval", "--bogus-flag"], p).status.code(), Some(1));

    ok_json(&["synth-scene", "--resolution", "32", "--out", "scene"], p);
    let missing = run(&["fit-geometry", "--scene", "scene", "--config", "absent.json", "--out", "run"], p);
    assert_eq!(missing.status.code(), Some(1), "{}", String::from_utf8_lossy(&missing.stderr));
    std::fs::write(p.join("bad.json"), r#"{"not_a_field": 1}"#).unwrap();
    let bad = run(&["fit-geometry", "--scene", "scene", "--config", "bad.json", "--out", "run"], p);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(run(&["synth-scene", "--shape", "torus", "--out", "s2"], p).status.code(), Some(1));

    let absent_mesh = run(&["eval", "--recon", "nothing.obj", "--truth", "scene/gt.obj"], p);
    assert_eq!(absent_mesh.status.code(), Some(2));
    assert_eq!(run(&["fit-geometry", "--scene", "no_scene", "--out", "run"], p).status.code(), Some(2));
}

#[test]
fn schema_command_matches_shipped_schema() {
    let shipped = format!("{}/../../schema/run_config.schema.json", env!("CARGO_MANIFEST_DIR"));
    let shipped: Value = serde_json::from_str(&std::fs::read_to_string(shipped).unwrap()).unwrap();
    let printed = ok_json(&["schema"], &std::env::temp_dir());
    assert_eq!(printed, shipped);
}

#[test]
fn tiny_end_to_end_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let config = r#"{
        "t_coarse": 2, "t_fine": 2, "t_texture": 3, "t_cd": 1, "resolution": 32,
        "init": {"samples": 5000, "fit": {"iterations": 150}}
    }"#;
    std::fs::write(p.join("tiny.json"), config).unwrap();
    ok_json(&["synth-scene", "--resolution", "32", "--out", "scene"], p);

    let geo = ok_json(&["fit-geometry", "--scene", "scene", "--config", "tiny.json", "--out", "run"], p);
    assert_eq!(geo["iterations"], 4);
    assert!(p.join("run/meshes/geometry.obj").is_file());
    assert!(p.join("run/manifest.json").is_file());
    let log = std::fs::read_to_string(p.join("run/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);

    ok_json(&["extract-mesh", "--run", "run"], p);
    let tex = ok_json(&["fit-texture", "--scene", "scene", "--out", "run"], p);
    assert_eq!(tex["command"], "fit-texture");
    assert!(p.join("run/checkpoints/texture.field").is_file());

    ok_json(
        &["render", "--mesh", "run/meshes/geometry.obj", "--mode", "albedo", "--run", "run", "--out", "albedo.png"],
        p,
    );
    assert!(p.join("albedo.png").is_file());
    let v = ok_json(&["eval", "--recon", "run/meshes/geometry.obj", "--truth", "scene/gt.obj", "--samples", "2000"], p);
    assert!(v["chamfer"].as_f64().unwrap() > 0.0);
}
