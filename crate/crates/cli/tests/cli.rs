use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/demo").join(name)
}

fn ragbias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ragbias")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn run_writes_reports() {
    let out = tempfile::tempdir().unwrap();
    let cfg = demo("full.toml");
    let o = ragbias(&["run", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--k", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    for f in ["scw_bias.csv", "bold.csv", "holistic.csv", "correlation.csv", "faithfulness.csv"] {
        assert!(out.path().join("reports").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["stages"]["report"].is_object());

    let again = ragbias(&["run", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--k", "3"]);
    assert!(text(&again).contains("cached"));
}

#[test]
fn condition_and_seed_flags_apply() {
    let out = tempfile::tempdir().unwrap();
    let cfg = demo("scw_replay.toml");
    let o = ragbias(&[
        "eval", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(),
        "--condition", "before_rag", "--condition", "before_rag_cot", "--seed", "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let rows = std::fs::read_to_string(out.path().join("eval/scw.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 40);
}

#[test]
fn missing_prerequisite_exits_2() {
    let out = tempfile::tempdir().unwrap();
    let cfg = demo("scw_replay.toml");
    let o = ragbias(&["eval", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("index"));
}

#[test]
fn config_errors_exit_1() {
    let o = ragbias(&["run", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    let cfg = demo("full.toml");
    let o = ragbias(&["run", "--config", cfg.to_str().unwrap(), "--k", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    let o = ragbias(&["run", "--config", cfg.to_str().unwrap(), "--condition", "sometimes"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}

#[test]
fn item_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("empty_mock.json");
    std::fs::write(&fixture, "{}").unwrap();
    let cfg = demo("scw_replay.toml");
    let o = ragbias(&[
        "eval", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap(),
        "--condition", "before_rag", "--mock-fixtures", fixture.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
}
