mod common;

use common::{code, run, small_run};

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&[])), 1);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run(dir.path(), "");
    let out_dir = dir.path().join("o");

    let bad_key = run(&["train", "--config", s(&config), "--out", s(&out_dir), "--set", "bogus=1"]);
    assert_eq!(code(&bad_key), 1);
    let missing = run(&["train", "--config", s(&config), "--out", s(&out_dir), "--dataset", "/nonexistent.csv"]);
    assert_eq!(code(&missing), 2);
    let blowup = run(&["train", "--config", s(&config), "--out", s(&out_dir), "--set", "learning_rate=1e300"]);
    assert_eq!(code(&blowup), 3);
    assert!(String::from_utf8_lossy(&blowup.stderr).contains("parameter norm"));
}

#[test]
fn train_then_use_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run(dir.path(), "");
    let before = std::fs::read(dir.path().join("data.csv")).unwrap();
    let runs = dir.path().join("runs/a1");

    let out = run(&["train", "--config", s(&config), "--out", s(&runs)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.ckpt", "history.csv", "config.json", "adjacency.txt", "metrics.csv", "metrics.json"] {
        assert!(runs.join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(runs.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let ck = runs.join("checkpoint.ckpt");

    let forecast = dir.path().join("f.csv");
    let out = run(&["predict", "--checkpoint", s(&ck), "--horizon", "12", "--out", s(&forecast)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&forecast).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("window,step,node,channel,predicted,actual"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let max_step = rows.iter().map(|r| r[1].parse::<usize>().unwrap()).max().unwrap();
    assert_eq!(max_step, 12);
    assert_eq!(rows.len() % (12 * 3 * 2), 0);
    assert!(rows.iter().all(|r| r.len() == 6 && !r[5].is_empty()));
    assert!(dir.path().join("f.config.json").exists());

    let eval = dir.path().join("eval");
    assert_eq!(code(&run(&["evaluate", "--checkpoint", s(&ck), "--out", s(&eval)])), 0);
    assert!(std::fs::read_to_string(eval.join("metrics.csv")).unwrap().starts_with("metric,horizon,value\n"));
    assert!(eval.join("config.json").exists());

    let cong = dir.path().join("cong");
    assert_eq!(code(&run(&["congestion", "--checkpoint", s(&ck), "--out", s(&cong)])), 0);
    assert_eq!(std::fs::read_to_string(cong.join("congestion.csv")).unwrap().lines().count(), 9);

    let acc = dir.path().join("acc");
    let out = run(&["accumulate", "--checkpoint", s(&ck), "--out", s(&acc), "--block", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(acc.join("accumulation.csv").exists());

    assert_eq!(std::fs::read(dir.path().join("data.csv")).unwrap(), before);
}

#[test]
fn seed_variable_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run(dir.path(), r#", "seed": 4"#);
    let out_dir = dir.path().join("g");
    let out = common::bin()
        .args(["build-graph", "--config", s(&config), "--out", s(&out_dir)])
        .env("NETSIGHT_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 77);
    assert!(out_dir.join("adjacency.txt").exists());
}

#[test]
fn sweeps_and_ablations_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run(dir.path(), r#", "max_epochs": 1"#);
    let ab = dir.path().join("ab");
    let out = run(&["ablate", "--config", s(&config), "--out", s(&ab), "--variants", "full,no_pooling"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(ab.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("\nno_pooling,"));

    let sw = dir.path().join("sw");
    let out = run(&["sweep-p", "--config", s(&config), "--out", s(&sw), "--p", "30,60"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(sw.join("sweep.csv")).unwrap().lines().count(), 3);

    assert_eq!(code(&run(&["ablate", "--config", s(&config), "--out", s(&ab), "--variants", "nope"])), 1);
}
