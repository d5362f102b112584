use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn glp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glp")).args(args).output().expect("run glp")
}

fn glp_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glp")).args(args).env(key, value).output().expect("run glp")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

fn synth(dir: &Path, seed: &str) {
    let out = glp(&["synth", "--out", dir.to_str().unwrap(), "--seed", seed, "--users", "6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    json(&out.stderr)["error"].as_str().unwrap().to_string()
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "9");
    synth(&b, "9");
    for file in ["features.csv", "predictions.csv", "structure.csv", "board_labels.csv", "incidence.csv"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn evaluate_reports_every_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, "1");
    let report = tmp.path().join("report.json");
    let out = glp(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--mode",
        "initial,lp,glp",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&std::fs::read(&report).unwrap());
    for mode in ["initial", "lp", "glp"] {
        let ndcg = v[mode]["ndcg"]["mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&ndcg), "{mode}");
        assert_eq!(v[mode]["per_user"].as_array().unwrap().len(), 6);
        assert_eq!(v[mode]["recall_at_k"].as_object().unwrap().len(), 8);
        assert!(v[mode]["per_user"][0]["profile"]["c0"].is_number());
    }
}

#[test]
fn precomputed_affinity_matches_learned() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, "2");
    let g = tmp.path().join("g.json");
    let d = data.to_str().unwrap();
    assert!(glp(&["affinity", "--data", d, "--out", g.to_str().unwrap()]).status.success());
    let g_json = json(&std::fs::read(&g).unwrap());
    assert_eq!(g_json["categories"].as_array().unwrap().len(), 8);
    let col: f64 = (0..8).map(|i| g_json["normalized"][format!("c{i}")]["c3"].as_f64().unwrap()).sum();
    assert!((col - 1.0).abs() < 1e-12);

    let learned = glp(&["propagate", "--data", d]);
    let supplied = glp(&["propagate", "--data", d, "--affinity", g.to_str().unwrap()]);
    assert!(learned.status.success() && supplied.status.success());
    assert_eq!(learned.stdout, supplied.stdout);
}

#[test]
fn propagate_single_user_with_profiles() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, "4");
    let (labels, profiles) = (tmp.path().join("labels.csv"), tmp.path().join("profiles.json"));
    let out = glp(&[
        "propagate",
        "--data",
        data.to_str().unwrap(),
        "--user",
        "u002",
        "--mode",
        "lp",
        "--out",
        labels.to_str().unwrap(),
        "--profiles",
        profiles.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&labels).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "user_id,image_id,c0,c1,c2,c3,c4,c5,c6,c7");
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "u002");
        let sum: f64 = fields[2..].iter().map(|f| f.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
    let p = json(&std::fs::read(&profiles).unwrap());
    assert_eq!(p.as_object().unwrap().len(), 1);
    let total: f64 = p["u002"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, "5");
    let d = data.to_str().unwrap();
    let one = glp_env(&["propagate", "--data", d], "GLP_THREADS", "1");
    let four = glp_env(&["propagate", "--data", d], "GLP_THREADS", "4");
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(error_kind(&glp_env(&["propagate", "--data", d], "GLP_THREADS", "0")), "UsageError");
}

#[test]
fn distances_and_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, "6");
    let d = data.to_str().unwrap();
    let out = glp(&["distances", "--data", d]);
    assert!(out.status.success());
    let v = json(&out.stdout);
    assert_eq!(v["categories"].as_array().unwrap().len(), 8);
    assert!(v["board_tighter"].as_u64().unwrap() * 10 >= v["measured"].as_u64().unwrap() * 9);

    let out = glp(&["oracle", "--data", d, "--steps", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out.stdout);
    assert!(v["max_deviation"].as_f64().unwrap() <= 1e-10);
    assert!(v["bound_excess"].as_f64().unwrap() <= 0.0);
    assert_eq!(v["users"].as_array().unwrap().len(), 6);
}

#[test]
fn errors_are_json_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    assert_eq!(error_kind(&glp(&["evaluate", "--data", missing.to_str().unwrap()])), "UsageError");
    assert_eq!(error_kind(&glp(&["evaluate", "--mode", "best", "--data", "."])), "UsageError");
    assert_eq!(error_kind(&glp(&["frobnicate"])), "UsageError");

    let data = tmp.path().join("d");
    synth(&data, "7");
    std::fs::remove_file(data.join("incidence.csv")).unwrap();
    let d = data.to_str().unwrap();
    assert_eq!(error_kind(&glp(&["propagate", "--data", d])), "MissingAffinity");
    assert!(glp(&["propagate", "--data", d, "--include-eval-users"]).status.success());
    assert!(glp(&["propagate", "--data", d, "--mode", "initial"]).status.success());
    assert_eq!(
        error_kind(&glp(&["propagate", "--data", d, "--user", "nobody", "--mode", "lp"])),
        "DanglingReference"
    );

    let features = data.join("features.csv");
    let text = std::fs::read_to_string(&features).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[2].split(',').map(String::from).collect();
    fields[1] = "NaN".into();
    lines[2] = fields.join(",");
    std::fs::write(&features, lines.join("\n")).unwrap();
    let out = glp(&["evaluate", "--data", d, "--mode", "initial"]);
    assert_eq!(error_kind(&out), "ParseError");
    let err = json(&out.stderr);
    assert_eq!(err["line"], 3);
    assert!(err["file"].as_str().unwrap().ends_with("features.csv"));
}

#[test]
fn help_and_version_succeed() {
    assert!(glp(&["--help"]).status.success());
    assert!(glp(&["--version"]).status.success());
}
