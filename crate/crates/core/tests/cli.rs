use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use umbra::image::{save_mask_png, save_rgb_png, save_shadow_png, GrayImage, Mask, RgbImage};

const CUBE: &str =
    "v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\nv -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n\
f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n";

fn umbra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_umbra"))
        .args(args)
        .env_remove("UMBRA_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn error_record(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is a json record")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dry_run_tracks_plans_the_full_grid_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");
    let out = stdout_json(&umbra(&["tracks", "--dry-run", "--out", s(&root)]));
    let tracks = out["plan"]["tracks"].as_array().unwrap();
    let entries: Vec<u64> = tracks
        .iter()
        .map(|t| t["entries"].as_u64().unwrap())
        .collect();
    assert_eq!(entries, [150, 270, 135]);
    assert_eq!(tracks[1]["grid"].as_array().unwrap().len(), 18);
    assert!(!root.exists());
}

#[test]
fn dry_run_sweep_counts_every_cell() {
    let out = stdout_json(&umbra(&[
        "sweep",
        "--dry-run",
        "--objectives",
        "eps,sample,v,rf",
        "--steps",
        "1,2,4,8,20",
        "--seeds",
        "10",
    ]));
    assert_eq!(out["plan"]["cells"], 4 * 5 * 3 * 4);
    assert_eq!(out["plan"]["ablation"]["seeds"], 10);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"version": 1, "seed": 5, "grid": 4}"#).unwrap();
    let out = stdout_json(&umbra(&[
        "forge",
        "--dry-run",
        "--config",
        s(&cfg),
        "--seed",
        "7",
    ]));
    assert_eq!(out["config"]["seed"], 7);
    assert_eq!(out["config"]["grid"], 4);
}

#[test]
fn bad_configs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    for text in [
        r#"{"version": 1, "sede": 5}"#,
        r#"{"version": 2}"#,
        r#"{"version": 1, "resolution": 2}"#,
    ] {
        std::fs::write(&cfg, text).unwrap();
        let out = umbra(&["forge", "--dry-run", "--config", s(&cfg)]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert_eq!(error_record(&out)["error"]["kind"], "usage");
    }
    let out = umbra(&["forge", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["kind"], "usage");
}

#[test]
fn missing_inputs_and_runtime_failures_exit_differently() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");
    let out = umbra(&["render", "--out", s(&root)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["command"], "render");
    let out = umbra(&["train", "--out", s(&root)]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::create_dir_all(&root).unwrap();
    std::fs::write(root.join("train.jsonl"), "not json\n").unwrap();
    let out = umbra(&["train", "--out", s(&root)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"]["kind"], "runtime");

    let out = Command::new(env!("CARGO_BIN_EXE_umbra"))
        .args(["forge", "--dry-run"])
        .env("UMBRA_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("cube.obj");
    std::fs::write(&mesh, CUBE).unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let root = dir.path().join(run);
        let out = stdout_json(&umbra(&[
            "render",
            "--theta",
            "30",
            "--phi",
            "0",
            "--size",
            "2",
            "--mesh",
            s(&mesh),
            "--resolution",
            "24",
            "--grid",
            "3",
            "--seed",
            "4",
            "--out",
            s(&root),
        ]));
        let paths = &out["result"];
        let read = |k: &str| std::fs::read(paths[k].as_str().unwrap()).unwrap();
        files.push([read("preview"), read("mask"), read("shadow"), read("meta")]);
    }
    assert_eq!(files[0], files[1]);
    let meta: Value = serde_json::from_slice(&files[0][3]).unwrap();
    assert_eq!(meta["mesh"], "cube");
}

#[test]
fn composite_writes_under_the_root() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (6, 4);
    let object = dir.path().join("object.png");
    let mask = dir.path().join("mask.png");
    let shadow = dir.path().join("shadow.png");
    let background = dir.path().join("background.png");
    save_rgb_png(&RgbImage::filled(w, h, [1.0, 0.0, 0.0]), &object).unwrap();
    save_mask_png(&Mask::new(w, h), &mask).unwrap();
    save_shadow_png(&GrayImage::filled(w, h, 1.0), &shadow).unwrap();
    save_rgb_png(&RgbImage::filled(w, h, [1.0, 1.0, 1.0]), &background).unwrap();
    let root = dir.path().join("out");
    let out = stdout_json(&umbra(&[
        "composite",
        "--object",
        s(&object),
        "--mask",
        s(&mask),
        "--shadow",
        s(&shadow),
        "--background",
        s(&background),
        "--intensity",
        "1",
        "--out",
        s(&root),
    ]));
    let path = out["result"]["output"].as_str().unwrap();
    assert!(Path::new(path).starts_with(&root));
    let img = umbra::image::load_rgb_png(Path::new(path)).unwrap();
    assert!(img.data.iter().all(|p| *p == [0.0, 0.0, 0.0]));
}

#[test]
fn forge_tracks_train_sample_eval_sweep_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");
    let common = [
        "--out",
        s(&root),
        "--resolution",
        "8",
        "--grid",
        "1",
        "--base-channels",
        "8",
        "--channel-mults",
        "1,2",
        "--embed-dim",
        "16",
        "--batch",
        "2",
        "--iterations",
        "2",
        "--steps",
        "1",
        "--seeds",
        "1",
    ];
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        stdout_json(&umbra(&args))
    };
    let forged = run("forge", &["--count", "6", "--primitives", "3"]);
    assert_eq!(forged["result"]["entries"], 6);
    let tracks = run("tracks", &["--track-meshes", "1,1,1"]);
    let entries: Vec<u64> = tracks["result"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["entries"].as_u64().unwrap())
        .collect();
    assert_eq!(entries, [3, 18, 9]);
    let trained = run("train", &[]);
    assert_eq!(trained["result"]["step"], 2);
    let sampled = run("sample", &["--tracks", "1"]);
    assert_eq!(sampled["result"][0]["maps"], 3);
    assert!(root.join("samples/track1/0000002.shadow.png").exists());
    let eval = run("eval", &[]);
    assert_eq!(eval["result"]["rows"].as_array().unwrap().len(), 3 * 4);
    let sweep = run("sweep", &["--objectives", "rf,eps"]);
    assert_eq!(sweep["result"]["cells"], 2 * 3 * 4);
    assert!(root.join("reports/sweep/cells.csv").exists());
}
