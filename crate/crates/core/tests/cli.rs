use std::path::Path;
use std::process::{Command, Output};

fn pgdro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgdro")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_exits_one_naming_the_path() {
    let out = pgdro(&["sweep", "--config", "/no/such/table1.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/table1.toml"));
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let out = pgdro(&["sweep", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_config_value_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "task = \"classification\"\nmethods = [\"nope\"]\n").unwrap();
    let out = pgdro(&["sweep", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_classification_preset_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = pgdro(&["gen", "--preset", "paper-classification", "--seeds", "1", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    let m: toml::Value = toml::from_str(&manifest).unwrap();
    assert_eq!(m["config"]["generator"]["num_classes"].as_integer(), Some(8));
    assert_eq!(m["config"]["generator"]["shift"]["dirichlet_target"].as_float(), Some(0.15));

    let text = std::fs::read_to_string(dir.path().join("dataset_L1_s0.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# d=10,C=8"));
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 13);
    let hash = m["config_hash"].as_str().unwrap();
    let count = |split: &str| text.lines().filter(|l| l.starts_with(&format!("{hash},{split},"))).count();
    assert_eq!(count("source"), 6000);
    assert_eq!(count("test"), 3000);
    let support = count("support");
    assert!((3 * 8..=8 * 8).contains(&support), "{support} supports");
}

#[test]
fn smoke_sweep_writes_cells_aggregate_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = pgdro(&["sweep", "--preset", "smoke", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for m in ["erm", "ot", "pgdro"] {
        assert!(dir.path().join(format!("cells/L1_{m}_s0.csv")).exists());
    }
    let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert!(agg.starts_with("config_hash,"));
    let manifest: toml::Value =
        toml::from_str(&std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap()).unwrap();
    let hash = manifest["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 16);
    assert!(agg.lines().skip(1).all(|l| l.starts_with(hash)));
    assert!(manifest["version"].as_str().unwrap().starts_with("pgdro "));
    assert!(manifest["wall_time_s"].as_float().unwrap() >= 0.0);
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let train = dir.path().join("train");
    let eval = dir.path().join("eval");
    assert_eq!(pgdro(&["gen", "--preset", "smoke", "--out", path(&gen)]).status.code(), Some(0));
    let out = pgdro(&["train", "--preset", "smoke", "--method", "erm", "--out", path(&train)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = pgdro(&[
        "eval",
        "--head",
        path(&train.join("heads/erm_L1_s0.json")),
        "--data",
        path(&gen.join("dataset_L1_s0.csv")),
        "--out",
        path(&eval),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    // The held-out metrics of `train` and `eval` agree for a plain head.
    let metrics = std::fs::read_to_string(train.join("metrics.csv")).unwrap();
    let evaluated = std::fs::read_to_string(eval.join("eval.csv")).unwrap();
    let train_acc = metrics.lines().nth(1).unwrap().split(',').nth(4).unwrap().to_string();
    let eval_acc = evaluated.lines().nth(1).unwrap().split(',').nth(2).unwrap().to_string();
    assert_eq!(train_acc, eval_acc);
}
