use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = "\
scale = desk
seed = 3
contacts = 3
rollouts = 2
training_sizes = 3, 6
query_poses = 1
repeats = 1
test_object = cube 0.2
test_object = cylinder 0.1 0.2
env_samples = 300
query_particles = 50
candidates = 3
seeds = 8
iterations = 5
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pushxfer")).args(args).output().unwrap()
}

fn ok_json(out: Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn err_json(out: Output) -> Value {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(v["message"].is_string());
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let models = dir.path().join("models");
    let reports = dir.path().join("reports");

    let t = ok_json(run(&["train", "--config", s(&cfg), "--out", s(&models)]));
    assert_eq!(t["seed"], 3);
    assert!(models.join("manifest.json").exists());
    assert!(t["training_pushes"].as_u64().unwrap() > 0);

    let e = ok_json(run(&["evaluate", "--models", s(&models), "--out", s(&reports), "--size", "6"]));
    let r = &e["results"][0];
    assert_eq!(r["training_size"], 6);
    assert!(r["totals"]["baseline"]["n"].as_u64().is_some());
    let csv = reports.join("pushes-6.csv");
    let summary = fs::read_to_string(reports.join("summary-6.json")).unwrap();

    // recomputing from the per-push rows reproduces the summary byte for byte
    let again = dir.path().join("again");
    let rep = run(&["report", "--input", s(&csv), "--out", s(&again)]);
    assert!(rep.status.success());
    assert!(String::from_utf8_lossy(&rep.stdout).contains("mean d_norm"));
    assert_eq!(fs::read_to_string(again.join("summary-6.json")).unwrap(), summary);

    let p = ok_json(run(&[
        "predict", "--models", s(&models), "--object", "cylinder 0.1 0.2", "--action", "linear", "--predictor", "baseline,ro",
    ]));
    let preds = &p["actions"][0]["predictions"];
    assert_eq!(preds[0]["predictor"], "baseline");
    assert_eq!(preds[1]["predictor"], "ro");
    assert_eq!(p["actions"].as_array().unwrap().len(), 1);
}

#[test]
fn gen_shapes_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let shapes = dir.path().join("shapes.cfg");
    fs::write(&shapes, "shape = cylinder 0.1 0.2\n").unwrap();
    let g = ok_json(run(&["gen-shapes", "--config", s(&shapes), "--seed", "1", "--out", s(dir.path())]));
    let file = dir.path().join(g["shapes"][0]["file"].as_str().unwrap());
    assert!(file.exists());

    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let models = dir.path().join("models");
    ok_json(run(&["train", "--config", s(&cfg), "--out", s(&models)]));
    let density = dir.path().join("q.json");
    let front = models.join("contact-front.json");
    let args = [
        "query", "--config", s(&cfg), "--model", s(&front), "--cloud", s(&file), "--samples", "4",
        "--link", "front", "--density-out", s(&density),
    ];
    let q = ok_json(run(&args));
    assert_eq!(q["samples"].as_array().unwrap().len(), 4);
    assert!(density.exists());
    // same seed, same samples
    assert_eq!(ok_json(run(&args)), q);
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let e = err_json(run(&["evaluate", "--models", s(&dir.path().join("missing")), "--out", s(dir.path())]));
    assert_eq!(e["error"], "io");

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "contacts = 0\n").unwrap();
    assert_eq!(err_json(run(&["train", "--config", s(&bad), "--out", s(dir.path())]))["error"], "config");

    fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(err_json(run(&["train", "--config", s(&bad), "--out", s(dir.path())]))["error"], "config");

    assert_eq!(err_json(run(&["train", "--scale", "huge", "--out", s(dir.path())]))["error"], "usage");
    assert_eq!(err_json(run(&["frobnicate"]))["error"], "usage");
    assert!(run(&["--help"]).status.success());
}
