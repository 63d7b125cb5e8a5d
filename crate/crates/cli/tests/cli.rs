use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use spectra_dx::pipeline::PatchRect;
use spectra_dx::{FeatureMatrix, Grid};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectra-dx")).args(args).output().unwrap()
}

fn cli_ok(args: &[&str]) -> Output {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_noise_null_and_spike() {
    let dir = tempfile::tempdir().unwrap();
    let null = dir.path().join("null");
    cli_ok(&["simulate", "--n", "2000", "--p", "500", "--trials", "20", "--seed", "7", "--out", s(&null)]);
    let reports = fs::read_to_string(null.join("reports.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), 20);
    let summary = json(&null.join("summary.json"));
    assert!(summary["mean_sas"].as_f64().unwrap() <= 0.05);
    let hist = fs::read_to_string(null.join("esd_histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 51);

    let spiked = dir.path().join("spiked");
    cli_ok(&["simulate", "--n", "2000", "--p", "500", "--trials", "5", "--spike", "4.0", "--seed", "7", "--out", s(&spiked)]);
    assert_eq!(json(&spiked.join("summary.json"))["detection_rate"], 1.0);
}

#[test]
fn simulate_without_n_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["simulate", "--p", "10", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing field `n`") && err.contains("Usage: spectra-dx simulate"), "{err}");
}

#[test]
fn flags_override_config_file_and_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"n": 100, "p": 20, "trials": 3, "seed": 1}"#).unwrap();
    let out = dir.path().join("out");
    cli_ok(&["simulate", "--config", s(&cfg), "--trials", "2", "--seed", "9", "--out", s(&out)]);
    let echoed = json(&out.join("config.json"));
    assert_eq!((echoed["n"].as_u64(), echoed["trials"].as_u64(), echoed["seed"].as_u64()), (Some(100), Some(2), Some(9)));
    assert_eq!(echoed["bins"], 50);
    assert_eq!(fs::read_to_string(out.join("reports.jsonl")).unwrap().lines().count(), 2);

    fs::write(&cfg, r#"{"n": 100, "p": 20, "bogus": 1}"#).unwrap();
    assert_eq!(code(&cli(&["simulate", "--config", s(&cfg), "--out", s(&out)])), 2);
}

#[test]
fn bad_thread_setting_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spectra-dx"))
        .args(["simulate", "--n", "20", "--p", "4", "--out", s(dir.path())])
        .env("SPECTRA_DX_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn sas_on_noise_fixture() {
    let out = cli_ok(&["sas", "--input", s(&fixture("noise_400x100.csv"))]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["sas"].as_f64().unwrap() <= 0.05);
    assert_eq!(report["n_samples"], 400);
    assert!((report["lambda_plus"].as_f64().unwrap() - 2.25).abs() < 1e-12);
}

#[test]
fn binary_and_csv_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let f = FeatureMatrix::read(&fixture("noise_400x100.csv")).unwrap();
    let bin = dir.path().join("noise.bin");
    f.write_binary(&bin).unwrap();
    let a = cli_ok(&["sas", "--input", s(&fixture("noise_400x100.csv"))]).stdout;
    let b = cli_ok(&["sas", "--input", s(&bin)]).stdout;
    assert_eq!(a, b);

    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() - 5]).unwrap();
    assert_eq!(code(&cli(&["sas", "--input", s(&bin)])), 2);
}

#[test]
fn sas_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let nan = dir.path().join("nan.csv");
    fs::write(&nan, "f0,f1\n1,2\nNaN,3\n4,5\n").unwrap();
    assert_eq!(code(&cli(&["sas", "--input", s(&nan)])), 3);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "f0,f1\n1,2\n3\n").unwrap();
    assert_eq!(code(&cli(&["sas", "--input", s(&bad)])), 2);
    assert_eq!(code(&cli(&["sas", "--input", s(&dir.path().join("missing.csv"))])), 2);
}

#[test]
fn diagnose_bundled_fixtures() {
    let model = fixture("classifier.json");
    for (kind, label) in [("healthy", 0), ("diseased", 1)] {
        let out = cli_ok(&[
            "diagnose",
            "--image",
            s(&fixture(&format!("{kind}_image.pgm"))),
            "--mask",
            s(&fixture(&format!("{kind}_mask.pgm"))),
            "--model",
            s(&model),
        ]);
        let d: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(d["label"], label, "{kind}: {d}");
        for key in ["probability", "sas", "lambda_plus", "outliers", "n_patches"] {
            assert!(d.get(key).is_some(), "{key}");
        }
    }
}

#[test]
fn diagnose_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.pgm");
    Grid::filled(100, 100, 1.0).write_pgm(&small).unwrap();
    let args = |mask: &Path| {
        cli(&[
            "diagnose",
            "--image",
            s(&fixture("healthy_image.pgm")),
            "--mask",
            s(mask),
            "--model",
            s(&fixture("classifier.json")),
        ])
    };
    assert_eq!(code(&args(&small)), 2);
    let tiny = dir.path().join("tiny.pgm");
    PatchRect { row: 3, col: 3, rows: 1, cols: 1 }.to_mask(224, 16).write_pgm(&tiny).unwrap();
    let out = args(&tiny);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("region too small"));
}

#[test]
fn eval_cls_reproduces_confusion_fixture() {
    let dir = tempfile::tempdir().unwrap();
    cli_ok(&["eval-cls", "--data", s(&fixture("fig_s1_scores.csv")), "--out", s(dir.path())]);
    let m = json(&dir.path().join("metrics.json"));
    assert!((m["f1"].as_f64().unwrap() - 0.7962).abs() < 1e-3);
    assert!((m["accuracy"].as_f64().unwrap() - 0.9033).abs() < 1e-3);
    assert_eq!(m["counts"]["fn"], 138);
    assert!(fs::read_to_string(dir.path().join("roc.csv")).unwrap().starts_with("x,y\n"));
    assert!(dir.path().join("pr.csv").exists());
}

#[test]
fn eval_cls_perfect_and_degenerate_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let perfect = dir.path().join("perfect.csv");
    fs::write(&perfect, "prob,label\n0.9,1\n0.8,1\n0.2,0\n0.1,0\n").unwrap();
    let out = dir.path().join("out");
    cli_ok(&["eval-cls", "--data", s(&perfect), "--out", s(&out)]);
    let m = json(&out.join("metrics.json"));
    assert_eq!((m["roc_auc"].as_f64(), m["average_precision"].as_f64()), (Some(1.0), Some(1.0)));

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&cli(&["eval-cls", "--data", s(&empty), "--out", s(&out)])), 2);
    let single = dir.path().join("single.csv");
    fs::write(&single, "prob,label\n0.9,1\n0.4,1\n").unwrap();
    assert_eq!(code(&cli(&["eval-cls", "--data", s(&single), "--out", s(&out)])), 2);
}

#[test]
fn synthetic_cases_train_a_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    cli_ok(&["synth-dx", "--n", "40", "--seed", "3", "--out", s(&syn)]);
    let manifest = json(&syn.join("manifest.json"));
    assert_eq!(manifest.as_array().unwrap().len(), 40);
    assert_eq!(manifest.as_array().unwrap().iter().filter(|c| c["label"] == 1).count(), 8);
    let cls = dir.path().join("cls");
    cli_ok(&["train-cls", "--data", s(&syn.join("scores.csv")), "--out", s(&cls)]);
    let ev = dir.path().join("ev");
    cli_ok(&["eval-cls", "--data", s(&cls.join("train_probs.csv")), "--out", s(&ev)]);
    assert!(json(&ev.join("metrics.json"))["roc_auc"].as_f64().unwrap() >= 0.95);

    // the stored case must diagnose the way its score says
    let case = &manifest[4];
    let out = cli_ok(&[
        "diagnose",
        "--image",
        s(&syn.join(case["image"].as_str().unwrap())),
        "--mask",
        s(&syn.join(case["mask"].as_str().unwrap())),
        "--model",
        s(&cls.join("classifier.json")),
    ]);
    let d: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(d["sas"], case["sas"]);
}

#[test]
fn flow_loop_small() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    cli_ok(&["flow", "gen-corpus", "--n-train", "10", "--n-test", "4", "--size", "20", "--seed", "7", "--out", s(&corpus)]);
    let manifest = json(&corpus.join("manifest.json"));
    assert_eq!(manifest["test"].as_array().unwrap().len(), 4);

    let frozen = dir.path().join("frozen");
    cli_ok(&["flow", "train", "--corpus", s(&corpus), "--lr", "0", "--steps", "5", "--out", s(&frozen)]);
    let summary = json(&frozen.join("train_summary.json"));
    assert_eq!(summary["checksum"], summary["init_checksum"]);

    let model = dir.path().join("model");
    cli_ok(&["flow", "train", "--corpus", s(&corpus), "--steps", "30", "--out", s(&model)]);
    let curve = fs::read_to_string(model.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 31);
    assert!(model.join("model.bin").exists() && model.join("model.json").exists());

    let refined = dir.path().join("refined");
    cli_ok(&["flow", "refine", "--corpus", s(&corpus), "--model", s(&model), "--steps", "10", "--out", s(&refined)]);
    assert_eq!(json(&refined.join("config.json"))["steps"], 10);
    let eval = dir.path().join("eval");
    cli_ok(&["flow", "eval", "--corpus", s(&corpus), "--refined", s(&refined), "--out", s(&eval)]);
    let report = json(&eval.join("eval.json"));
    assert_eq!(report["n_pairs"], 4);
    assert!(report["mean_refined_dice"].is_number() && report["mean_coarse_dice"].is_number());

    // corrupt one pair's ground truth to a different size
    let gt = corpus.join(manifest["test"][0]["gt"].as_str().unwrap());
    Grid::zeros(10, 10).write_pgm(&gt).unwrap();
    assert_eq!(code(&cli(&["flow", "eval", "--corpus", s(&corpus), "--out", s(&eval)])), 2);
    assert_eq!(code(&cli(&["flow", "eval", "--corpus", s(&dir.path().join("nope")), "--out", s(&eval)])), 2);
}
