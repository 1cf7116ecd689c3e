use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "scenario": "wired",
  "flows_per_algorithm": 3,
  "duration": 3,
  "seed": 5,
  "preprocess": {"interval": 0.005, "alpha": 0.3, "window": 200, "train_stride": 100, "test_stride": 200},
  "model": {"architecture": {"kind": "lstm", "steps": 20, "input_width": 1, "lstm_units": [6], "dense": [6], "output": 6}},
  "train": {"epochs": 1, "batch_size": 16, "learning_rate": 0.001}
}"#;

fn ccid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccid"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = ccid(args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn simulate_build_train_evaluate_identify() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = config(d, TINY);
    let traces = d.join("traces");
    let data = d.join("data");
    let model = d.join("model.ckpt");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&traces)]);
    assert!(traces.join("manifest.json").exists());
    ok(&["build-dataset", "--traces", s(&traces), "--out", s(&data)]);
    for f in ["train.ccds", "test.ccds", "stats.json", "split.json", "config.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    ok(&["train", "--dataset", s(&data), "--out", s(&model)]);
    assert!(model.exists());
    let log = fs::read_to_string(d.join("model.epochs.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let report = d.join("report");
    let text = ok(&[
        "evaluate",
        "--checkpoint",
        s(&model),
        "--dataset",
        s(&data.join("test.ccds")),
        "--out",
        s(&report),
    ]);
    assert!(text.to_lowercase().contains("accuracy"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert!(json["metrics"]["accuracy"].is_number(), "{json}");
    assert!(report.join("confusion.csv").exists());

    let trace = fs::read_dir(&traces)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let out = ok(&["identify", "--checkpoint", s(&model), "--trace", s(&trace), "--json"]);
    let id: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(id["label"].is_string());
}

#[test]
fn same_seed_gives_identical_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), TINY);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&b)]);
    let read = |d: &Path| fs::read(d.join("manifest.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let c = tmp.path().join("c");
    ok(&["simulate", "--config", s(&cfg), "--seed", "6", "--out", s(&c)]);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn invalid_config_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = TINY.replace(
        r#""seed": 5,"#,
        r#""seed": 5, "grid": {"rate_mbps": [10, 5], "rtt_ms": [40, 100], "buffer": {"unit": "bdp", "range": [0.5, 2]}, "rlc_packets": [100, 700], "random_loss": [0, 0], "core_rate_mbps": 100, "core_buffer": 1000},"#,
    );
    let cfg = config(tmp.path(), &bad);
    let o = ccid(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("t"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.rate_mbps"));

    let o = ccid(&["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let o = ccid(&["simulate", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = ccid(&["build-dataset", "--traces", s(&empty), "--out", s(&tmp.path().join("d"))]);
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());

    let junk = tmp.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint at all").unwrap();
    let o = ccid(&["identify", "--checkpoint", s(&junk), "--trace", s(&junk)]);
    assert_eq!(o.status.code(), Some(1));
}
