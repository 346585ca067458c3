use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn fedtrade(args: &[&str], env_data_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedtrade"));
    cmd.args(args).env_remove("FEDTRADE_DATA_DIR");
    if let Some(d) = env_data_dir {
        cmd.env("FEDTRADE_DATA_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn experiment(extra: serde_json::Value) -> serde_json::Value {
    let mut v = json!({
        "federation": {"task": "classification", "samples_per_client": [30, 30, 30, 30], "height": 8, "width": 8,
                        "delta_style": 0.5, "delta_content": 0.5},
        "model": {"arch": "mlp_bn", "hidden": [8, 8]},
        "strategy": {"name": "fedavg"},
        "rounds": 3,
        "lr": 0.1,
        "batch_size": 16
    });
    for (k, val) in extra.as_object().unwrap() {
        v[k] = val.clone();
    }
    v
}

fn write_json(path: &Path, v: &serde_json::Value) -> String {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_writes_a_loadable_federation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(&tmp.path().join("exp.json"), &experiment(json!({})));
    let out = tmp.path().join("data");
    let o = fedtrade(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("manifest.json").exists());
    fedtrade_core::synthdata::load_federation(&out).unwrap();

    let o = fedtrade(&["generate", "--config", &cfg], None);
    assert_eq!(code(&o), 2);

    let cache = tmp.path().join("cache");
    let o = fedtrade(&["generate", "--config", &cfg], Some(&cache));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = stdout(&o).trim().to_string();
    assert!(Path::new(&dir).starts_with(&cache));
    assert!(Path::new(&dir).join("manifest.json").exists());
}

#[test]
fn generate_refuses_to_overwrite_foreign_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(&tmp.path().join("exp.json"), &experiment(json!({})));
    let out = tmp.path().join("mine");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("notes.txt"), "keep me").unwrap();
    let o = fedtrade(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_ne!(code(&o), 0);
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "keep me");
}

#[test]
fn run_writes_results_and_uses_the_dataset_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(&tmp.path().join("exp.json"), &experiment(json!({"harmonize": {"kind": "hist_sri"}})));
    let cache = tmp.path().join("cache");
    let mut csvs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("run{i}"));
        let o = fedtrade(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], Some(&cache));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        for f in ["results.csv", "results.json", "rounds.jsonl", "manifest.json"] {
            assert!(out.join(f).exists(), "{f} missing");
        }
        let csv = fs::read_to_string(out.join("results.csv")).unwrap();
        assert!(csv.starts_with("method,client,metric,value\n"));
        assert_eq!(csv.lines().count(), 1 + 4 * 6);
        assert_eq!(fs::read_to_string(out.join("rounds.jsonl")).unwrap().lines().count(), 3);
        csvs.push(csv);
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
}

#[test]
fn run_with_several_seeds_writes_one_directory_each() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(&tmp.path().join("exp.json"), &experiment(json!({})));
    let out = tmp.path().join("runs");
    let o = fedtrade(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "1,2"], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("seed-1/results.csv").exists());
    assert!(out.join("seed-2/results.csv").exists());
}

#[test]
fn invalid_configs_exit_with_code_2_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut bad = experiment(json!({}));
    bad["federation"]["delta_style"] = json!(1.5);
    let cfg = write_json(&tmp.path().join("bad.json"), &bad);
    let o = fedtrade(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("delta_style"), "{}", stderr(&o));

    let mut typo = experiment(json!({}));
    typo["lerning_rate"] = json!(0.1);
    let cfg = write_json(&tmp.path().join("typo.json"), &typo);
    let o = fedtrade(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lerning_rate") && stderr(&o).contains("line"), "{}", stderr(&o));

    let knob = experiment(json!({"strategy": {"name": "fedavg", "mu": 0.1}}));
    let cfg = write_json(&tmp.path().join("knob.json"), &knob);
    let o = fedtrade(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mu"), "{}", stderr(&o));

    let o = fedtrade(&["--jobs", "0", "run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_files_exit_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let o = fedtrade(&["run", "--config", missing.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()], None);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn divergence_exits_with_code_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        &tmp.path().join("adam.json"),
        &experiment(json!({"strategy": {"name": "fedadam", "eta": 10.0}, "rounds": 40})),
    );
    let out = tmp.path().join("out");
    let o = fedtrade(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("round"));
}

fn sweep_config(methods: serde_json::Value) -> serde_json::Value {
    json!({
        "base": experiment(json!({})),
        "cells": [
            {"name": "style", "delta_style": 0.8, "delta_content": 0.0},
            {"name": "content", "delta_style": 0.0, "delta_content": 0.8}
        ],
        "methods": methods,
        "seeds": [0, 1]
    })
}

#[test]
fn sweep_runs_the_grid_resumes_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(
        &tmp.path().join("sweep.json"),
        &sweep_config(json!([
            {"strategy": null, "baseline": "fedavg_local"},
            {"harmonize": {"kind": "adain"}},
            {"strategy": {"name": "fedper"}}
        ])),
    );
    let out = tmp.path().join("sweep");
    let o = fedtrade(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("12 runs executed, 0 reused"), "{}", stdout(&o));
    assert_eq!(fs::read_dir(out.join("runs")).unwrap().count(), 12);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("cell,method,client,metric,mean,std,seeds\n"));

    let o = fedtrade(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--resume"], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("0 runs executed, 12 reused"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap(), summary);

    // a run interrupted before its manifest was written is redone
    let victim = fs::read_dir(out.join("runs")).unwrap().next().unwrap().unwrap().path();
    fs::remove_file(victim.join("manifest.json")).unwrap();
    fs::write(victim.join("results.csv"), "truncated").unwrap();
    let o = fedtrade(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--resume"], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("1 runs executed, 11 reused"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap(), summary);

    let report_dir = tmp.path().join("report");
    let o = fedtrade(&["report", out.to_str().unwrap(), "--out", report_dir.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    for needle in ["style", "content", "adain", "fedper", "fedavg_local", "Mean"] {
        assert!(text.contains(needle), "report lacks {needle}:\n{text}");
    }
    let md = fs::read_to_string(report_dir.join("report.md")).unwrap();
    assert!(md.contains("| ") && md.contains("**"));
    assert!(report_dir.join("report.txt").exists());
}

#[test]
fn sweep_with_a_failing_run_exits_with_code_5() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sweep = sweep_config(json!([{"strategy": {"name": "fedavg"}}, {"strategy": {"name": "fedadam", "eta": 10.0}}]));
    sweep["base"]["rounds"] = json!(40);
    let cfg = write_json(&tmp.path().join("sweep.json"), &sweep);
    let out = tmp.path().join("sweep");
    let o = fedtrade(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "0"], None);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(out.join("summary.csv").exists());
}

#[test]
fn report_marks_ties_and_rejects_foreign_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("cell,method,client,metric,mean,std,seeds\n");
    for (method, v) in [("a", 0.8), ("b", 0.8), ("c", 0.5)] {
        for client in ["0", "1"] {
            csv.push_str(&format!("cell1,{method},{client},kappa,{v},0.01,3\n"));
        }
    }
    let path = tmp.path().join("summary.csv");
    fs::write(&path, csv).unwrap();
    let o = fedtrade(&["report", path.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let marked = |m: &str| text.lines().find(|l| l.trim_start().starts_with(m)).is_some_and(|l| l.contains('*'));
    assert!(marked("a") && marked("b") && !marked("c"), "{text}");

    let foreign = tmp.path().join("foreign.csv");
    fs::write(&foreign, "x,y\n1,2\n").unwrap();
    let o = fedtrade(&["report", foreign.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
}
