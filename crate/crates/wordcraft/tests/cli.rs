use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wordcraft"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn read_toml(path: &Path) -> toml::Value {
    toml::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_data_reports_bundled_counts() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(dir.path(), &["--run-dir", "r", "validate-data"]);
    assert_eq!(v["entities"], 93);
    assert_eq!(v["recipes"], 52);
    assert_eq!(v["self_pair_recipes"], 1);
}

#[test]
fn split_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["--run-dir", "r", "split", "--ratio", "0.8", "--seed", "7", "--out", out];
    let a = ok_json(dir.path(), &args("a.json"));
    ok_json(dir.path(), &args("b.json"));
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    assert_eq!(a["train"], 41);
    assert_eq!(a["test"], 11);
    let other = ok_json(dir.path(), &["--run-dir", "r", "split", "--ratio", "0.8", "--seed", "8", "--out", "c.json"]);
    assert_eq!(other["train"], 41);
    assert_ne!(read("a.json"), read("c.json"));
}

#[test]
fn settings_follow_file_then_set_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[split]\nseed = 3\ntrain_ratio = 0.5\n\n[kg]\nrank = 6\n").unwrap();
    let base = ["--config", "run.toml", "--run-dir", "r"];

    ok_json(dir.path(), &[&base[..], &["split"]].concat());
    let cfg = read_toml(&dir.path().join("r/config.toml"));
    assert_eq!(cfg["split"]["seed"].as_integer(), Some(3));
    assert_eq!(cfg["split"]["train_ratio"].as_float(), Some(0.5));
    assert_eq!(cfg["kg"]["rank"].as_integer(), Some(6));
    assert_eq!(cfg["kg"]["epochs"].as_integer(), Some(200));

    ok_json(dir.path(), &[&base[..], &["--set", "split.seed=5", "split"]].concat());
    assert_eq!(read_toml(&dir.path().join("r/config.toml"))["split"]["seed"].as_integer(), Some(5));

    ok_json(dir.path(), &[&base[..], &["--set", "split.seed=5", "split", "--seed", "7"]].concat());
    let cfg = read_toml(&dir.path().join("r/config.toml"));
    assert_eq!(cfg["split"]["seed"].as_integer(), Some(7));
    assert_eq!(cfg["split"]["train_ratio"].as_float(), Some(0.5));
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["split", "--no-such-flag"][..],
        &["--recipes", "missing.json", "validate-data"],
        &["--config", "missing.toml", "split"],
        &["--set", "split.bogus=1", "split"],
        &["--set", "no_equals_sign", "split"],
        &["split", "--ratio", "1.5"],
        &["--run-dir", "r", "eval", "--policy", "agent"],
    ] {
        let out = run(dir.path(), args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty(), "{args:?} should explain itself");
    }
    fs::write(dir.path().join("broken.json"), "{\"entities\": [\"a\"], \"recipes\": [{\"result\": \"b\", \"ingredients\": [\"a\", \"a\"]}]}").unwrap();
    assert!(!run(dir.path(), &["--recipes", "broken.json", "validate-data"]).status.success());
}

#[test]
fn train_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let kg = ok_json(d, &["--run-dir", "r", "train-kg", "--epochs", "20", "--rank", "8"]);
    assert!(kg["final_loss"].as_f64().unwrap() < kg["initial_loss"].as_f64().unwrap());
    assert_eq!(fs::read_to_string(d.join("r/kg_loss.jsonl")).unwrap().lines().count(), 20);

    let oracle = ok_json(d, &["--run-dir", "r", "eval", "--policy", "oracle", "--tasks", "50", "--partition", "test"]);
    assert_eq!(oracle["success_rate"], 1.0);
    ok_json(d, &["--run-dir", "r", "eval", "--policy", "kg-greedy", "--kg-mode", "full", "--tasks", "50"]);

    let trained = ok_json(
        d,
        &[
            "--run-dir", "r", "train-agent", "--steps", "2000", "--envs", "16", "--features", "random", "--dim", "8",
            "--kg-mode", "full", "--log-interval", "1000", "--eval-tasks", "10", "--set", "agent.key_dim=8",
            "--set", "agent.value_dim=8", "--set", "agent.hidden_dim=8",
        ],
    );
    assert!(trained.is_object());
    assert!(fs::read_to_string(d.join("r/metrics.jsonl")).unwrap().lines().count() >= 2);
    let a = ok_json(d, &["--run-dir", "r", "eval", "--policy", "agent", "--tasks", "30", "--features", "random", "--dim", "8"]);
    let b = ok_json(d, &["--run-dir", "r", "eval", "--policy", "agent", "--tasks", "30", "--features", "random", "--dim", "8"]);
    assert_eq!(a, b);
    let csv = fs::read_to_string(d.join("r/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);

    let out = run(d, &["--run-dir", "r", "plot", "--input", "r/metrics.jsonl=full", "--metric", "return"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(d.join("r/plot.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn bench_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(dir.path(), &["--run-dir", "r", "bench", "--envs", "8", "--seconds", "0.2"]);
    assert!(v["steps_per_second"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("r/bench.json").exists());
}
