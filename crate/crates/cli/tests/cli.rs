use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn ctsurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctsurv"))
        .args(args)
        .env("CTSURV_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run-manifest.json")).unwrap()).unwrap()
}

/// A simulated trial plus a matching fit config.
struct Study {
    dir: TempDir,
}

impl Study {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let sim = dir.path().join("sim");
        let out = ctsurv(&["simulate", "--n-subjects", "200", "--seed", "11", "--out", s(&sim)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut props = String::from("site,date,variant,proportion\n");
        for site in ["GA", "NY", "WA"] {
            props.push_str(&format!("{site},2021-03-01,all,1\n"));
        }
        fs::write(dir.path().join("variants.csv"), props).unwrap();
        let config = r#"{
  "model": {
    "variants": ["all"],
    "grid": {"origin": "2021-01-01", "start": "2021-03-01", "end": "2022-06-30", "interval_length_days": 28}
  },
  "sampler": {"n_chains": 2, "n_iterations": 300, "seed": 5},
  "contrasts": [{"parameter": "gamma[all]", "delta_x": 1.0}]
}"#;
        fs::write(dir.path().join("cfg.json"), config).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn fit(&self, out: &str, extra: &[&str]) -> Output {
        let data = self.path("sim/participants.csv");
        let curve = self.path("sim/curve.csv");
        let variants = self.path("variants.csv");
        let config = self.path("cfg.json");
        let out = self.path(out);
        let mut args = vec![
            "fit",
            "--data",
            s(&data),
            "--curve",
            s(&curve),
            "--variants",
            s(&variants),
            "--config",
            s(&config),
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        ctsurv(&args)
    }
}

#[test]
fn fit_writes_the_output_contract() {
    let study = Study::new();
    let out = study.fit("fit", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = study.path("fit");
    let draws = header(&dir.join("draws.csv"));
    assert!(draws.starts_with("chain,iteration,log_h_ref[GA],"), "{draws}");
    assert!(draws.contains(",gamma[all],beta[z]"));
    assert_eq!(
        header(&dir.join("summary.csv")),
        "parameter,mean,sd,q2.5,q50,q97.5,rhat,ess"
    );
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(summary.contains("\nRRR[gamma[all];dx=1],"));
    // 2 chains of 150 kept draws
    assert_eq!(fs::read_to_string(dir.join("draws.csv")).unwrap().lines().count(), 301);

    let m = manifest(&dir);
    assert_eq!(m["command"], "fit");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
    for input in ["config", "data", "curve", "variants"] {
        assert_eq!(m["inputs"][input].as_str().unwrap().len(), 64, "{input}");
    }
}

#[test]
fn equal_manifests_give_identical_outputs() {
    let study = Study::new();
    assert!(study.fit("a", &[]).status.success());
    assert!(study.fit("b", &["--threads", "1"]).status.success());
    assert_eq!(manifest(&study.path("a")), manifest(&study.path("b")));
    for f in ["draws.csv", "summary.csv", "priors.json"] {
        assert_eq!(
            fs::read(study.path("a").join(f)).unwrap(),
            fs::read(study.path("b").join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(study.fit("c", &["--seed", "6"]).status.success());
    assert_ne!(manifest(&study.path("a"))["seed"], manifest(&study.path("c"))["seed"]);
}

#[test]
fn unconverged_fit_exits_2_with_a_listing() {
    let study = Study::new();
    let out = study.fit("short", &["--iterations", "12", "--require-converged"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("R-hat"), "{err}");
    // outputs are still written for inspection
    assert!(study.path("short/draws.csv").is_file());
}

/// Draws where `b` has chain means one sd apart, so its R-hat sits well above 1.05.
fn shifted_draws(path: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut text = String::from("chain,iteration,a,b\n");
    for chain in 0..4 {
        for it in 0..500 {
            let a: f64 = rng.random::<f64>() - 0.5;
            let b: f64 = rng.random::<f64>() - 0.5 + 0.3 * chain as f64;
            text.push_str(&format!("{chain},{it},{a},{b}\n"));
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn summarize_gate_enforces_rhat_below_1_05() {
    let dir = tempfile::tempdir().unwrap();
    let draws = dir.path().join("draws.csv");
    shifted_draws(&draws);
    let out_dir = dir.path().join("sum");
    let plain = ctsurv(&["summarize", "--draws", s(&draws), "--out", s(&out_dir)]);
    assert!(plain.status.success());
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let rhat = |name: &str| -> f64 {
        let line = summary.lines().find(|l| l.starts_with(&format!("{name},"))).unwrap();
        line.split(',').nth(6).unwrap().parse().unwrap()
    };
    assert!(rhat("a") < 1.05);
    assert!(rhat("b") > 1.1);

    let gated = ctsurv(&[
        "summarize",
        "--draws",
        s(&draws),
        "--require-converged",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(gated.status.code(), Some(2));
    let err = String::from_utf8_lossy(&gated.stderr);
    assert!(err.contains("b (R-hat") && !err.contains("a (R-hat"), "{err}");
}

#[test]
fn validation_problems_are_all_reported_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    fs::write(
        &config,
        r#"{"model": {"threshold_mode": "fixed_llod", "grid": {"origin": "2021-01-01", "start": "2021-03-01", "end": "2021-02-01", "interval_length_days": 14}},
            "prior": {"coefficient_sd": 1.0},
            "io": {"data": "missing.csv", "curve": "missing-curve.csv"}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = ctsurv(&["fit", "--config", s(&config), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("missing.csv") && err.contains("missing-curve.csv"),
        "{err}"
    );
    assert!(
        err.contains("coefficient_sd") && err.contains("grid") && err.contains("x_llod"),
        "{err}"
    );
    assert!(!out_dir.join("draws.csv").exists());
}

#[test]
fn schema_errors_name_the_row() {
    let study = Study::new();
    let data = study.path("sim/participants.csv");
    let mut text = fs::read_to_string(&data).unwrap();
    text.push_str("pbad,GA,2021-04-01,event,not-a-date,,all,0,1\n");
    fs::write(&data, text).unwrap();
    let out = study.fit("bad", &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 202") && err.contains("date_lower"), "{err}");
}

#[test]
fn unknown_flags_exit_1() {
    let out = ctsurv(&["fit", "--config", "x.json", "--out", "o", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let out = ctsurv(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(ctsurv(&["--help"]).status.success());
}

#[test]
fn prior_build_and_ppc_round_trip() {
    let study = Study::new();
    assert!(study.fit("fit", &[]).status.success());
    let data = study.path("sim/participants.csv");
    let curve = study.path("sim/curve.csv");
    let variants = study.path("variants.csv");
    let config = study.path("cfg.json");

    let pb = study.path("pb");
    let out = ctsurv(&[
        "prior-build",
        "--config",
        s(&config),
        "--data",
        s(&data),
        "--curve",
        s(&curve),
        "--variants",
        s(&variants),
        "--out",
        s(&pb),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(pb.join("priors.json")).unwrap(),
        fs::read(study.path("fit/priors.json")).unwrap()
    );

    let ppc = study.path("ppc");
    let draws = study.path("fit/draws.csv");
    let out = ctsurv(&[
        "ppc",
        "--config",
        s(&config),
        "--data",
        s(&data),
        "--variants",
        s(&variants),
        "--priors",
        s(&pb.join("priors.json")),
        "--draws",
        s(&draws),
        "--eval-days",
        "60,180",
        "--n-draws",
        "25",
        "--out",
        s(&ppc),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(ppc.join("ppc.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("draw,eval_day,predicted_cuminc,observed_cuminc"));
    assert_eq!(lines.count(), 50);
}

#[test]
fn replicate_writes_cells() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.json");
    fs::write(
        &config,
        r#"{"trial": {"interval_length_days": 60},
            "sample_sizes": [120],
            "n_replications": 2,
            "cells": [{"kind": "correct", "sd": 0.25}, {"kind": "misspecified", "sd": 2.5}],
            "sampler": {"n_chains": 2, "n_iterations": 200}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("rep");
    let out = ctsurv(&["replicate", "--config", s(&config), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cells = fs::read_to_string(out_dir.join("cells.csv")).unwrap();
    let mut lines = cells.lines();
    assert_eq!(
        lines.next(),
        Some("N,prior,prior_sd,misspecified,param,bias,coverage,n_reps,n_failures")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows
        .iter()
        .any(|r| r.starts_with("120,misspecified,2.5,true,gamma[all],")));
    assert!(out_dir.join("fits.csv").is_file());
    assert_eq!(manifest(&out_dir)["command"], "replicate");
}
