use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const DATA: &str = "glyphs:C=5,m=12,seed=2";

fn hzr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hzr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hzr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sample_arch_is_deterministic() {
    let a = ok(&["sample-arch", "--seed", "7", "--classes", "100"]);
    let b = ok(&["sample-arch", "--seed", "7", "--classes", "100"]);
    assert_eq!(a, b);
    let spec: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(spec["num_classes"], 100);
    assert_ne!(a, ok(&["sample-arch", "--seed", "8", "--classes", "100"]));
}

#[test]
fn describe_lists_input_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, ok(&["sample-arch", "--seed", "1", "--classes", "10", "--space", "desk"])).unwrap();

    let text = ok(&["describe", "--spec", s(&spec)]);
    assert!(text.starts_with("Input"), "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("48×48×1"), "{text}");

    let v = json(&["describe", "--spec", s(&spec), "--json"]);
    let params = v["params"]["total"].as_u64().unwrap();
    assert_eq!(v["footprint_bytes"].as_u64().unwrap(), 4 * params);
    assert_eq!(v["rows"][0]["input"]["height"], 48);
}

#[test]
fn train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let config = dir.path().join("config.json");
    let model = dir.path().join("m.hzr");
    let metrics = dir.path().join("metrics.csv");
    std::fs::write(&spec, ok(&["sample-arch", "--seed", "3", "--classes", "5", "--space", "desk"])).unwrap();
    std::fs::write(&config, r#"{"epochs": 1, "batch_size": 16, "seed": 4}"#).unwrap();

    let trained = json(&[
        "train", "--spec", s(&spec), "--data", DATA, "--config", s(&config), "--out", s(&model), "--metrics",
        s(&metrics), "--json",
    ]);
    assert_eq!(trained["outcome"]["metrics"].as_array().unwrap().len(), 1);
    assert!(std::fs::read_to_string(&metrics).unwrap().starts_with("epoch,"));
    let again = dir.path().join("again.hzr");
    ok(&["train", "--spec", s(&spec), "--data", DATA, "--config", s(&config), "--out", s(&again)]);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&again).unwrap());

    let report = json(&["eval", "--model", s(&model), "--data", DATA, "--json"]);
    assert_eq!(report, trained["test"]);
    assert!(report["cr1"].as_f64().unwrap() <= report["cr4"].as_f64().unwrap());
    assert!(ok(&["eval", "--model", s(&model), "--data", DATA]).contains("CR(4)"));

    let strokes = dir.path().join("a.json");
    std::fs::write(&strokes, r#"{"strokes": [[[0, 0], [10, 10]], [[0, 10], [10, 0]]]}"#).unwrap();
    let names = dir.path().join("names.txt");
    std::fs::write(&names, "alpha\nbeta\ngamma\ndelta\nepsilon\n").unwrap();
    let out = json(&["infer", "--model", s(&model), "--input", s(&strokes), "--names", s(&names), "--json"]);
    let c = out["candidates"].as_array().unwrap();
    assert_eq!(c.len(), 4);
    assert!(c[0]["name"].is_string());
    assert!(c.windows(2).all(|w| w[0]["score"].as_f64() >= w[1]["score"].as_f64()));

    let raw = dir.path().join("img.raw");
    std::fs::write(&raw, vec![0u8; 2304]).unwrap();
    let out = json(&["infer", "--model", s(&model), "--input", s(&raw), "--k", "2", "--json"]);
    assert_eq!(out["candidates"].as_array().unwrap().len(), 2);

    std::fs::write(&raw, vec![0u8; 100]).unwrap();
    let out = hzr(&["infer", "--model", s(&model), "--input", s(&raw)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected 2304 bytes"));
}

#[test]
fn learning_curve_and_trials() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let config = dir.path().join("config.json");
    std::fs::write(&spec, ok(&["sample-arch", "--seed", "3", "--classes", "5", "--space", "desk"])).unwrap();
    std::fs::write(&config, r#"{"epochs": 1, "batch_size": 16}"#).unwrap();

    let curve = json(&[
        "learning-curve", "--spec", s(&spec), "--data", DATA, "--fractions", "0.5,1.0", "--config", s(&config), "--json",
    ]);
    let points = curve["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    assert!(points[0]["train_size"].as_u64() < points[1]["train_size"].as_u64());

    let out = dir.path().join("trials.jsonl");
    let v = json(&[
        "trials", "--count", "2", "--space", "desk", "--data", DATA, "--config", s(&config), "--out", s(&out), "--json",
    ]);
    assert_eq!(v["summary"]["trials"], 2);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2);
}

#[test]
fn usage_errors_exit_2_runtime_errors_exit_1() {
    for args in [&["frobnicate"][..], &["sample-arch", "--seed", "x", "--classes", "3"], &["describe", "--bogus"], &[]] {
        let out = hzr(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let out = hzr(&["eval", "--model", "/nonexistent/m.hzr", "--data", DATA]);
    assert_eq!(out.status.code(), Some(1));
    let out = hzr(&["serve", "--model", "/nonexistent/m.hzr", "--port", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(ok(&["--help"]).contains("sample-arch"));
}
