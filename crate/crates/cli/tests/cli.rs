use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use snapflow::data::{SynthKind, SyntheticSpec};
use snapflow::train::TrainConfig;
use snapflow::ModelBundle;
use tempfile::TempDir;

fn snapflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snapflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = snapflow(args);
    assert!(
        out.status.success(),
        "snapflow {} failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn write(&self, name: &str, text: &str) -> String {
        std::fs::write(self.path(name), text).unwrap();
        self.arg(name)
    }

    /// Synthesizes a drift dataset into `<name>/data.csv` and returns that path.
    fn dataset(&self, name: &str, timepoints: usize, genes: usize) -> String {
        let mut spec = SyntheticSpec::new(SynthKind::DriftGaussian, 2, timepoints, 30, 0.3, 5);
        spec.genes = Some(genes);
        let config = self.write(&format!("{name}.json"), &serde_json::to_string(&spec).unwrap());
        ok(&["synth", "--config", &config, "--out", &self.arg(name)]);
        self.arg(&format!("{name}/data.csv"))
    }

    fn tiny_config(&self, edit: impl FnOnce(&mut TrainConfig)) -> String {
        let mut cfg = TrainConfig::default();
        cfg.max_steps = 10;
        cfg.e_warm = 4;
        cfg.k_ot = 5;
        cfg.batch_size = 16;
        cfg.vae_epochs = 2;
        cfg.model.latent = 3;
        cfg.model.vae_hidden = 8;
        cfg.model.field_hidden = 8;
        cfg.model.time_dim = 4;
        edit(&mut cfg);
        self.write("train.json", &cfg.to_json().unwrap())
    }
}

fn vae_params(path: &Path) -> Vec<(String, Vec<f64>)> {
    let m = ModelBundle::load(path).unwrap();
    m.params
        .iter()
        .filter(|(name, _)| name.starts_with("vae."))
        .map(|(name, t)| (name.to_string(), t.data().to_vec()))
        .collect()
}

#[test]
fn shipped_default_config_matches_built_in_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    assert_eq!(TrainConfig::load(&path).unwrap(), TrainConfig::default());
    let desk = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    TrainConfig::load(&desk).unwrap().validate().unwrap();
}

#[test]
fn synth_is_deterministic_per_seed() {
    let ws = Workspace::new();
    let spec = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/drift.json");
    let spec = spec.to_str().unwrap();
    for (out, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        ok(&["synth", "--config", spec, "--out", &ws.arg(out), "--seed", seed]);
    }
    let read = |d: &str| std::fs::read(ws.path(d).join("data.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn unknown_generator_kind_fails() {
    let ws = Workspace::new();
    let config = ws.write(
        "spec.json",
        r#"{"kind": "spiral", "dim": 2, "timepoints": 3, "cells": 10, "noise": 0.1, "seed": 0}"#,
    );
    let out = snapflow(&["synth", "--config", &config, "--out", &ws.arg("out")]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("spiral"), "{}", stderr(&out));
}

#[test]
fn missing_config_key_is_named() {
    let ws = Workspace::new();
    let data = ws.dataset("data", 3, 4);
    let mut value: serde_json::Value = serde_json::from_str(&TrainConfig::default().to_json().unwrap()).unwrap();
    value.as_object_mut().unwrap().remove("lambda_ot");
    let config = ws.write("bad.json", &value.to_string());
    let out = snapflow(&["train", "--config", &config, "--data", &data, "--out", &ws.arg("run")]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("lambda_ot"), "{}", stderr(&out));
}

#[test]
fn zero_cells_is_a_usage_error() {
    let out = snapflow(&["predict", "--checkpoint", "m.json", "--data", "d.csv", "--times", "1", "--n", "0", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn train_predict_and_project() {
    let ws = Workspace::new();
    let data = ws.dataset("data", 4, 5);
    let config = ws.tiny_config(|_| {});
    ok(&["train", "--config", &config, "--data", &data, "--out", &ws.arg("run")]);
    for file in ["model.json", "train_log.csv", "manifest.json"] {
        assert!(ws.path("run").join(file).exists(), "{file} missing");
    }
    let log = std::fs::read_to_string(ws.path("run/train_log.csv")).unwrap();
    assert!(log.starts_with("step,phase,"));

    let model = ws.arg("run/model.json");
    ok(&[
        "predict",
        "--checkpoint",
        &model,
        "--data",
        &data,
        "--times",
        "0.0,4.5,11.0",
        "--n",
        "7",
        "--out",
        &ws.arg("pred"),
        "--emit-projection",
    ]);
    for t in ["0", "4.5", "11"] {
        let text = std::fs::read_to_string(ws.path("pred").join(format!("pred_t{t}.csv"))).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with("time")).collect();
        assert_eq!(rows.len(), 7, "t={t}");
        assert_eq!(rows[0].split(',').count(), 6);
    }
    let proj = std::fs::read_to_string(ws.path("pred/projection.csv")).unwrap();
    assert_eq!(proj.lines().next().unwrap(), "x,y,time,source");
    assert_eq!(proj.lines().filter(|l| l.ends_with(",pred")).count(), 21);

    let early = snapflow(&["predict", "--checkpoint", &model, "--data", &data, "--times", "-1", "--n", "3", "--out", &ws.arg("p2")]);
    assert!(!early.status.success());
}

#[test]
fn multi_holdout_split_trains_and_evaluates() {
    let ws = Workspace::new();
    let data = ws.dataset("data", 12, 4);
    let split = ws.write("split.json", r#"{"interp": [4, 6, 8], "extrap": [10, 11]}"#);
    let config = ws.tiny_config(|_| {});
    ok(&["train", "--config", &config, "--data", &data, "--split", &split, "--out", &ws.arg("run")]);
    ok(&[
        "evaluate",
        "--checkpoint",
        &ws.arg("run/model.json"),
        "--data",
        &data,
        "--split",
        &split,
        "--out",
        &ws.arg("eval"),
    ]);
    let report = std::fs::read_to_string(ws.path("eval/report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).collect();
    // five holdouts plus one mean row per task
    assert_eq!(rows.len(), 7, "{report}");
    assert_eq!(rows.iter().filter(|r| r.contains(",extrap,")).count(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["split"]["train_times"], serde_json::json!([0.0, 1.0, 2.0, 3.0, 5.0, 7.0, 9.0]));
}

#[test]
fn gene_count_mismatch_is_rejected() {
    let ws = Workspace::new();
    let data = ws.dataset("data", 3, 5);
    let other = ws.dataset("other", 3, 4);
    let config = ws.tiny_config(|_| {});
    ok(&["train", "--config", &config, "--data", &data, "--out", &ws.arg("run")]);
    let model = ws.arg("run/model.json");
    let out = snapflow(&["predict", "--checkpoint", &model, "--data", &other, "--times", "1", "--n", "3", "--out", &ws.arg("p")]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("genes"), "{}", stderr(&out));
    let split = ws.write("split.json", r#"{"interp": [1], "extrap": []}"#);
    let out = snapflow(&["evaluate", "--checkpoint", &model, "--data", &other, "--split", &split, "--out", &ws.arg("e")]);
    assert!(!out.status.success());
}

#[test]
fn freeze_vae_keeps_vae_fixed_during_training() {
    let ws = Workspace::new();
    let data = ws.dataset("data", 4, 5);
    let config = ws.tiny_config(|c| c.checkpoint_every = 5);
    for (run, extra) in [("frozen", Some("--freeze-vae")), ("joint", None)] {
        let out = ws.arg(run);
        let mut args = vec!["train", "--config", &config, "--data", &data, "--out", &out];
        args.extend(extra);
        ok(&args);
    }
    let ckpt = |run: &str, step: usize| ws.path(run).join(format!("checkpoints/step_{step}.json"));
    assert_eq!(vae_params(&ckpt("frozen", 5)), vae_params(&ckpt("frozen", 10)));
    assert_ne!(vae_params(&ckpt("joint", 5)), vae_params(&ckpt("joint", 10)));
}
