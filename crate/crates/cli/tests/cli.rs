use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn model(dir: &Path) {
    write(dir, "model.json", r#"{ "alpha": 1.0, "dim": 2, "x_max": 1000.0, "family": { "kind": "flat" } }"#);
}

fn geo(config: &Path, seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_geo"));
    c.args(["run", "--config"]).arg(config).args(["--jobs", "2"]).env_remove("GEO_SEED");
    if let Some(s) = seed {
        c.env("GEO_SEED", s);
    }
    c.output().unwrap()
}

fn summary(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out").join(format!("{name}.json"))).unwrap()).unwrap()
}

fn assert_schema(v: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/summary.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    assert!(compiled.is_valid(v), "{v}");
}

fn batch(experiments: &str) -> String {
    format!(r#"{{ "seed": 5, "output_dir": "out", "experiments": [{experiments}] }}"#)
}

#[test]
fn exit_time_config_reports_half_slope() {
    let dir = tempfile::tempdir().unwrap();
    model(dir.path());
    let cfg = write(dir.path(), "exp.json", &batch(r#"{ "name": "et", "kind": "exit_time", "metric": "model.json", "ladder": { "k_min": 4, "k_max": 12 } }"#));
    let out = geo(&cfg, None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path(), "et");
    assert_schema(&s);
    assert_eq!(s["pass"], true);
    assert!((s["fitted_values"]["slope"].as_f64().unwrap() - 0.5).abs() < 1e-6);
    assert_eq!(s["expected_values"]["slope"], 0.5);
    assert!(dir.path().join("out/et.csv").exists() && dir.path().join("out/et.log").exists());
}

#[test]
fn empty_ladder_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    model(dir.path());
    let cfg = write(dir.path(), "exp.json", &batch(r#"{ "name": "et", "kind": "exit_time", "metric": "model.json", "ladder": { "k_min": 9, "k_max": 4 } }"#));
    assert_eq!(geo(&cfg, None).status.code(), Some(3));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_metric_and_bad_seed_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.json", &batch(r#"{ "name": "et", "kind": "exit_time", "metric": "nope.json", "ladder": { "k_min": 4, "k_max": 8 } }"#));
    assert_eq!(geo(&cfg, None).status.code(), Some(3));
    model(dir.path());
    let cfg = write(dir.path(), "ok.json", &batch(r#"{ "name": "le", "kind": "lane_emden_profile", "n_poly": 1.0 }"#));
    assert_eq!(geo(&cfg, Some("minus one")).status.code(), Some(3));
    assert_eq!(geo(&dir.path().join("absent.json"), None).status.code(), Some(3));
}

#[test]
fn same_seed_gives_identical_csv_and_env_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    model(dir.path());
    let cfg = write(
        dir.path(),
        "exp.json",
        &batch(r#"{ "name": "inj", "kind": "xray_injectivity", "metric": "model.json", "basis": { "x": [0.2, 1.2], "y": [-0.5, 0.5], "nx": 3, "ny": 3 }, "rays": 40, "resamples": 2, "band": 0.5 }"#),
    );
    let csv = dir.path().join("out/inj.csv");
    assert!(geo(&cfg, None).status.code().is_some_and(|c| c == 0 || c == 2));
    let first = std::fs::read(&csv).unwrap();
    geo(&cfg, None);
    assert_eq!(first, std::fs::read(&csv).unwrap());
    assert_eq!(summary(dir.path(), "inj")["seed"], 5);
    geo(&cfg, Some("11"));
    let s = summary(dir.path(), "inj");
    assert_schema(&s);
    assert_eq!(s["seed"], 11);
    assert_ne!(first, std::fs::read(&csv).unwrap());
}

#[test]
fn failures_and_module_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    model(dir.path());
    let cfg = write(
        dir.path(),
        "exp.json",
        &batch(
            r#"{ "name": "le", "kind": "lane_emden_profile", "n_poly": 1.0 },
               { "name": "short", "kind": "spectrum_rate", "metric": "model.json", "ladder": { "k_min": 4, "k_max": 8 }, "k": 1, "cells": 200 }"#,
        ),
    );
    let out = geo(&cfg, None);
    assert_eq!(out.status.code(), Some(2));
    let le = summary(dir.path(), "le");
    assert_eq!(le["pass"], true);
    let s = summary(dir.path(), "short");
    assert_schema(&s);
    assert_schema(&le);
    assert_eq!(s["pass"], false);
    assert!(s["error"].as_str().unwrap().contains("usable points"));
    assert!(s["table"].is_null());
}
