use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use abcprune::arch::{count_channels, count_flops, count_params, load_architecture};
use abcprune::fitness::{SyntheticEvaluator, SyntheticParams};
use abcprune::space::{PrunedStructure, SearchSpace};
use serde_json::{json, Value};

fn descriptor(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../descriptors/{name}.json"))
}

fn abcprune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abcprune"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("run abcprune")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, value.to_string()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A three-dimension chain of fc layers: bases 30/20/10 at alpha 0.5 give
/// 5 x 5 x 5 structures.
fn synthetic_config(dir: &Path, target: [usize; 3], seed: u64) -> PathBuf {
    let arch = dir.join("chain.json");
    std::fs::write(
        &arch,
        json!({
            "name": "chain",
            "input": {"h": 1, "w": 1, "c": 4},
            "num_classes": 2,
            "layers": [
                {"name": "a", "kind": "fc", "predecessors": [], "out_channels": 30, "prunable": true},
                {"name": "b", "kind": "fc", "out_channels": 20, "prunable": true},
                {"name": "c", "kind": "fc", "out_channels": 10, "prunable": true},
                {"name": "out", "kind": "fc", "out_channels": 2}
            ]
        })
        .to_string(),
    )
    .unwrap();
    write_config(
        dir,
        &json!({
            "arch": "chain.json",
            "alpha": 0.5,
            "cycles": 20,
            "seed": seed,
            "synthetic": {"target": target, "weights": [1.0, std::f64::consts::SQRT_2, 3f64.sqrt() - 1.0]},
            "out_dir": "out"
        }),
    )
}

#[test]
fn cost_reports_vgg_baseline() {
    let o = abcprune(&["cost", "--arch", descriptor("vgg16-cifar").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("channels:     4224"), "{text}");
    let json: Value = serde_json::from_str(&text[text.find('{').unwrap()..]).unwrap();
    assert_eq!(json["channels"], 4224);
}

#[test]
fn cost_of_the_baseline_structure_prunes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = load_architecture(descriptor("resnet56-cifar")).unwrap();
    let s = dir.path().join("s.json");
    std::fs::write(&s, serde_json::to_string(&spec.base_channels()).unwrap()).unwrap();
    let o = abcprune(&[
        "cost",
        "--arch",
        descriptor("resnet56-cifar").to_str().unwrap(),
        "--structure",
        s.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let json: Value = serde_json::from_str(&text[text.find('{').unwrap()..]).unwrap();
    for key in ["channels", "flops", "params"] {
        assert_eq!(json["pruned_percent"][key], 0.0);
    }
    assert!(json["layers"].as_array().unwrap().iter().all(|r| r["pruned_percent"] == 0.0));
}

#[test]
fn cost_accepts_a_layer_width_map() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.json");
    std::fs::write(&s, r#"{"layers": {"fc1": 32, "fc3": 16}}"#).unwrap();
    let o = abcprune(&[
        "cost",
        "--arch",
        descriptor("mlp-blobs").to_str().unwrap(),
        "--structure",
        s.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let json: Value = serde_json::from_str(&text[text.find('{').unwrap()..]).unwrap();
    assert_eq!(json["structure"], json!([32, 64, 16]));
}

#[test]
fn cost_rejects_bad_inputs_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name": "x", "input": {"h": 1, "w": 1, "c": 1}, "num_classes": 2, "layers": []}"#).unwrap();
    assert_eq!(abcprune(&["cost", "--arch", bad.to_str().unwrap()]).status.code(), Some(1));

    let s = dir.path().join("s.json");
    std::fs::write(&s, "[999, 1, 1]").unwrap();
    let o = abcprune(&[
        "cost",
        "--arch",
        descriptor("mlp-blobs").to_str().unwrap(),
        "--structure",
        s.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synthetic_search_finds_the_enumerated_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path(), [12, 4, 3], 4);
    let o = abcprune(&["search", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let spec = load_architecture(dir.path().join("chain.json")).unwrap();
    let space = SearchSpace::build(&spec, 0.5).unwrap();
    let eval = SyntheticEvaluator::new(
        &space,
        &SyntheticParams {
            target: PrunedStructure::new(vec![12, 4, 3]),
            sharpness: 0.5,
            weights: Some(vec![1.0, std::f64::consts::SQRT_2, 3f64.sqrt() - 1.0]),
        },
    )
    .unwrap();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for &a in space.candidates(0) {
        for &b in space.candidates(1) {
            for &c in space.candidates(2) {
                let f = eval.fitness(&PrunedStructure::new(vec![a, b, c]));
                if f > best.0 {
                    best = (f, vec![a, b, c]);
                }
            }
        }
    }
    let written = read_json(&dir.path().join("out/best.json"));
    assert_eq!(written["structure"], json!(best.1));
    assert_eq!(written["config"]["cycles"], 20);
    assert!(dir.path().join("out/history.jsonl").is_file());
}

#[test]
fn report_percentages_match_recomputed_costs() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path(), [6, 8, 2], 1);
    assert!(abcprune(&["search", "--config", config.to_str().unwrap()]).status.success());
    let report = read_json(&dir.path().join("out/report.json"));
    let spec = load_architecture(dir.path().join("chain.json")).unwrap();
    let s: PrunedStructure = serde_json::from_value(report["structure"].clone()).unwrap();
    let pct = |base: u64, kept: u64| ((100.0 * (1.0 - kept as f64 / base as f64)) * 100.0).round() / 100.0;
    let checks = [
        ("channels", count_channels(&spec, None).unwrap(), count_channels(&spec, Some(&s)).unwrap()),
        ("flops", count_flops(&spec, None).unwrap(), count_flops(&spec, Some(&s)).unwrap()),
        ("params", count_params(&spec, None).unwrap(), count_params(&spec, Some(&s)).unwrap()),
    ];
    for (key, base, kept) in checks {
        assert_eq!(report["baseline"][key], base);
        assert_eq!(report["pruned"][key], kept);
        assert_eq!(report["pruned_percent"][key].as_f64().unwrap(), pct(base, kept), "{key}");
    }
}

#[test]
fn two_evaluators_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &json!({
            "arch": descriptor("mlp-blobs"),
            "toy": {},
            "external": {"command": "true"}
        }),
    );
    let o = abcprune(&["search", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exactly one evaluator"), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path(), [12, 4, 3], 4);
    let out = dir.path().join("elsewhere");
    let o = abcprune(&[
        "search",
        "--config",
        config.to_str().unwrap(),
        "--cycles",
        "3",
        "--population",
        "4",
        "--max-trials",
        "1",
        "--seed",
        "77",
        "--out-dir",
        out.to_str().unwrap(),
        "--parallel-eval",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let best = read_json(&out.join("best.json"));
    assert_eq!(best["config"]["cycles"], 3);
    assert_eq!(best["config"]["population"], 4);
    assert_eq!(best["config"]["max_trials"], 1);
    assert_eq!(best["config"]["seed"], 77);
}

#[test]
fn search_without_config_uses_flags_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = abcprune(&[
        "search",
        "--arch",
        descriptor("mlp-blobs").to_str().unwrap(),
        "--evaluator",
        "toy",
        "--alpha",
        "0.5",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("report.json"));
    assert!(report["fitness"]["fine_tuned_accuracy"].as_f64().unwrap() > 0.5);
    assert_eq!(report["fitness"]["warm_start"], true);
}

#[test]
fn invalid_alpha_is_exit_1() {
    let o = abcprune(&[
        "search",
        "--arch",
        descriptor("mlp-blobs").to_str().unwrap(),
        "--evaluator",
        "toy",
        "--alpha",
        "0.55",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fatal_evaluator_failure_is_exit_2_and_keeps_partial_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cmd = format!("{} --exit-after 1", env!("CARGO_BIN_EXE_stub-evaluator"));
    let o = abcprune(&[
        "search",
        "--arch",
        descriptor("mlp-blobs").to_str().unwrap(),
        "--external-cmd",
        &cmd,
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let history = std::fs::read_to_string(out.join("history.jsonl")).unwrap();
    // start, init 0, best-update, failed init 1
    assert_eq!(history.lines().count(), 4, "{history}");
    assert!(!out.join("best.json").exists());
    let r = abcprune(&["replay", out.join("history.jsonl").to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stdout(&r).contains("stopped during initialisation"));
}

#[test]
fn unwritable_output_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let config = synthetic_config(dir.path(), [12, 4, 3], 4);
    let o = abcprune(&[
        "search",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn replay_accepts_search_output_and_flags_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path(), [6, 8, 2], 5);
    assert!(abcprune(&["search", "--config", config.to_str().unwrap()]).status.success());
    let history = dir.path().join("out/history.jsonl");
    let ok = abcprune(&["replay", history.to_str().unwrap()]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(stdout(&ok).starts_with("consistent:"));

    // lower the last best-update below its predecessor
    let text = std::fs::read_to_string(&history).unwrap();
    let mut lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let idx: Vec<usize> = (0..lines.len()).filter(|&i| lines[i]["event"] == "best-update").collect();
    assert!(idx.len() >= 2, "need two best-updates to tamper with");
    let last = *idx.last().unwrap();
    lines[last]["fitness"] = json!(0.0);
    let tampered = dir.path().join("tampered.jsonl");
    let body: String = lines.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(&tampered, body).unwrap();
    let bad = abcprune(&["replay", tampered.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains(&format!(":{}:", last + 1)), "{}", stderr(&bad));
}

#[test]
fn replay_of_empty_file_is_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("h.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = abcprune(&["replay", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
}

#[test]
fn repeated_search_gives_identical_history() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_config(dir.path(), [6, 8, 2], 9);
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = abcprune(&["search", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success());
        runs.push(std::fs::read(out.join("history.jsonl")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
}
