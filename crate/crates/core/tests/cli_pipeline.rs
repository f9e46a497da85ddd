use std::path::Path;
use std::process::Command;

use ithp::io::{load_dataset, load_model, model_to_json};
use ithp::trainer::{empirical_rates, init_params};
use ithp::{ModelConfig, Split, Variant};

fn ithp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ithp")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ithp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--kernel", "exp", "--num-seqs", "12", "--T", "5", "--seed", "4", "--out", p(&data)]);
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "spec.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let ds = load_dataset(&data, None).unwrap();
    assert_eq!(ds.len(), 12);
    assert_eq!(ds.split(Split::Test).len(), 3);
    let report: serde_json::Value = serde_json::from_str(&ok(&["stats", "--data", p(&data)])).unwrap();
    assert_eq!(report["num_types"], 2);
    assert_eq!(report["splits"].as_array().unwrap().len(), 3);
    assert!(report["producer"].as_str().unwrap().starts_with("ithp stats"));
}

#[test]
fn zero_epochs_saves_init_params() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.json");
    ok(&["simulate", "--kernel", "half-sine", "--num-seqs", "8", "--T", "10", "--seed", "1", "--out", p(&data)]);
    ok(&[
        "train", "--data", p(&data), "--variant", "ex-ithp", "--M", "4", "--epochs", "0", "--seed", "9", "--out",
        p(&model),
    ]);
    let ds = load_dataset(&data, None).unwrap();
    let cfg = ModelConfig::new(4, 2, Variant::ExIthp);
    let init = init_params(&cfg, &empirical_rates(&ds.split(Split::Train), 2), 9).unwrap();
    assert_eq!(std::fs::read_to_string(&model).unwrap(), model_to_json(&cfg, &init));
    assert_eq!(load_model(&model).unwrap(), (cfg, init));
}

#[test]
fn usage_errors_exit_1_with_usage() {
    let out = ithp(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert!(err.lines().last().unwrap().starts_with("error: kind=usage"));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"T\": 1.0, \"K\": 1, \"events\": []}\nnot json\n").unwrap();
    let out = ithp(&["stats", "--data", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn exports_have_headers() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("m.json");
    ok(&["simulate", "--num-seqs", "8", "--T", "5", "--out", p(&data)]);
    ok(&["train", "--data", p(&data), "--M", "4", "--epochs", "1", "--out", p(&model)]);
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, serde_json::to_string(&ithp::HawkesSpec::reference_exponential()).unwrap()).unwrap();
    let exports: [(&str, Vec<&str>); 4] = [
        ("k.csv", vec!["recover-kernel", "--source", "0", "--target", "1", "--split", "train"]),
        ("h.csv", vec!["heatmap", "--split", "train", "--steps", "4"]),
        ("a.csv", vec!["attention-map", "--seq-index", "0", "--split", "train"]),
        ("t.csv", vec!["intensity-trace", "--seq-index", "0", "--split", "train", "--true-spec", p(&spec)]),
    ];
    for (name, args) in exports {
        let out = dir.path().join(name);
        let mut full = args.clone();
        full.extend(["--model", p(&model), "--data", p(&data), "--out", p(&out)]);
        ok(&full);
        let text = std::fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with(&format!("# ithp {}", args[0])));
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert!(header.chars().next().unwrap().is_alphabetic(), "{name}: {header}");
    }
    let metrics: serde_json::Value = serde_json::from_str(&ok(&[
        "eval", "--model", p(&model), "--data", p(&data), "--metrics", "tll,acc",
    ]))
    .unwrap();
    assert!(metrics["tll"].as_f64().unwrap().is_finite());
    let acc = metrics["acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}
