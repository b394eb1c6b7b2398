use std::path::Path;
use std::process::{Command, Output};

fn dmr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmr"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DMR_ONTOLOGY")
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dmr(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(dmr(&["validate"], dir.path()).status.code(), Some(2));
    assert_eq!(dmr(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("good.dmr"),
        "(v1 / OrderIntent\n   :order-item (v2 / pizza || Pizza))\n\n(v1 / ThankYouIntent)\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("bad.dmr"), "(v1 / OrderIntent :order-item (v2 / pizza || Pizza :address (v3 / home || Address)))\n").unwrap();

    let ok = dmr(&["validate", "good.dmr"], dir.path());
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("2 graphs, 0 invalid"));

    let bad = dmr(&["--json", "validate", "bad.dmr"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&stdout(&bad)).unwrap();
    assert_eq!(report["results"][0]["violations"][0]["code"], "bad-edge-label");
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&bad.stderr).trim()).unwrap();
    assert_eq!(err["error"], "domain");

    assert_eq!(dmr(&["validate", "missing.dmr"], dir.path()).status.code(), Some(1));
}

#[test]
fn custom_ontology_from_env() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.ont"), "Intent <- AskIntent\nEntity <- Thing\nAskIntent.about -> Thing\n").unwrap();
    std::fs::write(dir.path().join("g.dmr"), "(v1 / AskIntent :about (v2 / lamp || Thing))\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dmr"))
        .args(["validate", "g.dmr"])
        .current_dir(dir.path())
        .env("DMR_ONTOLOGY", "tiny.ont")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(dmr(&["validate", "g.dmr"], dir.path()).status.code(), Some(1));
}

#[test]
fn corpus_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(dmr(&["synth", "--dialogues", "12", "--out", "c.jsonl"], d).status.success());

    let stats = dmr(&["stats", "--corpus", "c.jsonl"], d);
    assert!(stats.status.success());
    assert!(stdout(&stats).contains("Utterance for NLU"));

    assert!(dmr(&["export-seq2seq", "--corpus", "c.jsonl", "--context-size", "2", "--out", "pairs.tsv"], d).status.success());
    let pairs = std::fs::read_to_string(d.join("pairs.tsv")).unwrap();
    let targets: String = pairs.lines().map(|l| l.split('\t').nth(1).unwrap().to_string() + "\n").collect();
    assert!(pairs.lines().all(|l| l.starts_with("customer: ") || l.starts_with("agent: ")));
    std::fs::write(d.join("lin.txt"), &targets).unwrap();

    let same = dmr(&["--json", "score", "--gold", "lin.txt", "--pred", "lin.txt", "--format", "linearized"], d);
    assert!(same.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&same)).unwrap();
    assert_eq!(v["report"]["exact_match_rate"], 1.0);
    assert_eq!(v["smatch"]["f1"], 1.0);

    let broken: String = targets.lines().map(|l| l.replacen(") )", ")", 1) + "\n").collect();
    std::fs::write(d.join("broken.txt"), broken).unwrap();
    let repaired = dmr(&["--json", "score", "--gold", "lin.txt", "--pred", "broken.txt", "--format", "linearized"], d);
    assert!(repaired.status.success());

    let rule = dmr(&["coref-eval", "--corpus", "c.jsonl", "--model", "rule", "--split", "all"], d);
    assert!(rule.status.success());
    assert!(stdout(&rule).starts_with("accuracy "));

    let train = dmr(&["train-coref", "--corpus", "c.jsonl", "--out", "m.json", "--epochs", "1", "--hidden", "4", "--dim", "8"], d);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let eval = dmr(&["--json", "coref-eval", "--corpus", "c.jsonl", "--model", "m.json", "--dim", "8"], d);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));

    let graph = dmr(&["export-dgraph", "--corpus", "c.jsonl", "--dialogue", "synth-0000"], d);
    assert!(graph.status.success());
    let g: serde_json::Value = serde_json::from_str(&stdout(&graph)).unwrap();
    assert!(!g["nodes"].as_array().unwrap().is_empty());
    assert_eq!(dmr(&["export-dgraph", "--corpus", "c.jsonl", "--dialogue", "nope"], d).status.code(), Some(1));
}

#[test]
fn serve_reports_missing_store_directory() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dmr(&["synth", "--dialogues", "2", "--out", "c.jsonl"], dir.path()).status.success());
    let out = dmr(&["serve", "--corpus", "c.jsonl", "--store", "no/such/dir/s.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
