use std::path::Path;
use std::process::{Command, Output};

fn hapm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hapm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hapm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn json(path: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A small synthetic dataset (fewer records than the defaults keeps debug runs quick).
fn synth(dir: &Path) -> String {
    let cfg = p(dir, "synth.toml");
    std::fs::write(&cfg, "seed = 7\ntrain_per_grade = 12\nval_per_grade = 4\ntest_per_grade = 4\n").unwrap();
    let data = p(dir, "data");
    ok(&["synth", "--config", &cfg, "--out", &data]);
    data
}

#[test]
fn synth_writes_valid_manifests_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let summary = ok(&[
        "validate",
        "--embeddings",
        &format!("{data}/embeddings.json"),
        "--prompts",
        &format!("{data}/prompts.json"),
    ]);
    assert!(summary.contains("\"records\": 100"), "{summary}");
    assert!(summary.contains("\"diff_pairs\": 20"), "{summary}");
    let splits = json(&format!("{data}/splits.json"));
    assert_eq!(splits["train"].as_array().unwrap().len(), 60);
    assert_eq!(splits["test"].as_array().unwrap().len(), 20);

    let again = p(dir.path(), "again");
    ok(&["synth", "--config", &p(dir.path(), "synth.toml"), "--out", &again]);
    for f in ["embeddings.bin", "embeddings.json", "prompts.bin", "prompts.json", "splits.json"] {
        assert_eq!(
            std::fs::read(format!("{data}/{f}")).unwrap(),
            std::fs::read(format!("{again}/{f}")).unwrap(),
            "{f} differs between runs"
        );
    }
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let train = format!("{data}/train.json");
    let test = format!("{data}/test.json");
    let prompts = format!("{data}/prompts.json");

    let anchors = p(dir.path(), "anchors.json");
    ok(&["select-anchors", "--embeddings", &train, "--alpha", "3", "--out", &anchors]);
    let sel = json(&anchors);
    assert_eq!(sel["alpha"], 3);
    assert_eq!(sel["grades"].as_array().unwrap().len(), 5);
    assert!(sel["grades"][0]["anchors"][0]["score"].as_f64().unwrap() >= 0.0);

    let gate = p(dir.path(), "gate.json");
    ok(&[
        "gate", "--prompts", &prompts, "--anchors", &train, "--selection", &anchors, "--n-div", "4", "--out", &gate,
    ]);
    let g = json(&gate);
    assert_eq!(g["selected"].as_array().unwrap().len(), 4);
    assert_eq!(g["all_scores"].as_array().unwrap().len(), 20);

    let conf = p(dir.path(), "confusion.csv");
    ok(&["confusion", "--prompts", &prompts, "--out", &conf]);
    let text = std::fs::read_to_string(&conf).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.starts_with("grade,0,1,2,3,4"));

    let cfg = p(dir.path(), "train.toml");
    std::fs::write(&cfg, "epochs = 2\nlearning_rate = 0.001\nbatch_size = 16\n").unwrap();
    let model = p(dir.path(), "model.json");
    let report = p(dir.path(), "report.json");
    ok(&[
        "train", "--config", &cfg, "--embeddings", &train, "--prompts", &prompts, "--anchors", &anchors, "--out",
        &model, "--report", &report,
    ]);
    assert_eq!(json(&report)["epochs"].as_array().unwrap().len(), 2);

    let eval = p(dir.path(), "eval.json");
    ok(&["eval", "--embeddings", &test, "--checkpoint", &model, "--out", &eval]);
    let e = json(&eval);
    let acc = e["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let total: u64 = e["confusion"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 20);

    let via_splits = p(dir.path(), "eval_splits.json");
    ok(&[
        "eval", "--embeddings", &format!("{data}/embeddings.json"), "--splits", &format!("{data}/splits.json"),
        "--split", "test", "--checkpoint", &model, "--out", &via_splits,
    ]);
    assert_eq!(json(&via_splits), e);

    let preds = p(dir.path(), "preds.jsonl");
    ok(&["infer", "--embeddings", &test, "--checkpoint", &model, "--out", &preds]);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 20);
    assert_eq!(lines[0]["similarities"].as_array().unwrap().len(), 5);

    let corr = p(dir.path(), "corr.csv");
    ok(&["analyze", "--checkpoint", &model, "--what", "correlation", "--out", &corr]);
    // header + 2 stages x 5 grades x 8 x 8 entries
    assert_eq!(std::fs::read_to_string(&corr).unwrap().lines().count(), 1 + 2 * 5 * 64);

    let desc = p(dir.path(), "desc.csv");
    ok(&["analyze", "--checkpoint", &model, "--what", "descriptors", "--embeddings", &test, "--out", &desc]);
    let text = std::fs::read_to_string(&desc).unwrap();
    assert_eq!(text.lines().count(), 1 + 20 * 5);
    for line in text.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }
}

#[test]
fn train_without_validation_uses_holdout() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let train = format!("{data}/train.json");
    let anchors = p(dir.path(), "anchors.json");
    ok(&["select-anchors", "--embeddings", &train, "--out", &anchors]);
    let cfg = p(dir.path(), "train.toml");
    std::fs::write(&cfg, "epochs = 1\n").unwrap();
    let out = ok(&[
        "train", "--config", &cfg, "--embeddings", &train, "--prompts", &format!("{data}/prompts.json"), "--anchors",
        &anchors, "--out", &p(dir.path(), "model.json"),
    ]);
    assert!(out.contains("best epoch"), "{out}");
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = hapm(&["select-anchors", "--embeddings", &p(dir.path(), "nope.json"), "--out", &p(dir.path(), "a.json")]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.json"));

    let data = synth(dir.path());
    let bad_cfg = p(dir.path(), "bad.toml");
    std::fs::write(&bad_cfg, "epochs = 2\nmomentum = 0.9\n").unwrap();
    let anchors = p(dir.path(), "anchors.json");
    ok(&["select-anchors", "--embeddings", &format!("{data}/train.json"), "--out", &anchors]);
    let out = hapm(&[
        "train", "--config", &bad_cfg, "--embeddings", &format!("{data}/train.json"), "--prompts",
        &format!("{data}/prompts.json"), "--anchors", &anchors, "--out", &p(dir.path(), "m.json"),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("momentum"));

    let blob = format!("{data}/test.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    let out = hapm(&["validate", "--embeddings", &format!("{data}/test.json")]);
    assert!(!out.status.success());
}
