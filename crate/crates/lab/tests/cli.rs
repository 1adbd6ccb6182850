use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use vluci::vluci::{VluciConfig, VluciModel};
use vluci_lab::checkpoint::{self, CheckpointHeader};
use vluci_lab::commands::sidecar_paths;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vluci-lab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = lab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path, json: &str) -> String {
    let path = dir.join("spec.in.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{"synth": {"n_samples": 2000}, "vluci": {"mc_samples": 1}}"#;

#[test]
fn gen_is_byte_identical_for_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), SMALL);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    ok(&["gen", "--spec", &spec, "--out", s(&a)]);
    ok(&["gen", "--spec", &spec, "--out", s(&b)]);
    ok(&["gen", "--spec", &spec, "--out", s(&c), "--seed", "9"]);
    for name in ["observational.csv", "ground_truth.csv", "ground_truth.json", "spec.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let obs = fs::read_to_string(a.join("observational.csv")).unwrap();
    assert_ne!(obs, fs::read_to_string(c.join("observational.csv")).unwrap());
    let lines: Vec<&str> = obs.lines().collect();
    assert_eq!(lines.len(), 2001);
    assert_eq!(lines[0].split(',').count(), 8 + 2);
}

#[test]
fn training_never_needs_the_sidecars_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), SMALL);
    let data = tmp.path().join("data");
    ok(&["gen", "--spec", &spec, "--out", s(&data)]);
    for p in sidecar_paths(&data) {
        fs::remove_file(p).unwrap();
    }
    let (m1, m2) = (tmp.path().join("m1"), tmp.path().join("m2"));
    let start = Instant::now();
    ok(&["train", "--spec", &spec, "--data", s(&data), "--out", s(&m1)]);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "training took {elapsed:.1} s");
    ok(&["train", "--spec", &spec, "--data", s(&data), "--out", s(&m2)]);
    assert_eq!(fs::read(m1.join("model.vlck")).unwrap(), fs::read(m2.join("model.vlck")).unwrap());
    let loss = fs::read_to_string(m1.join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,l_tX,l_yX,l_kl,l_recT,l_recY,total\n"));
    assert_eq!(loss.lines().count(), 1 + VluciConfig::default().epochs);

    let eval = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", s(&m1.join("model.vlck")), "--data", s(&data), "--out", s(&eval)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("eval.json")).unwrap()).unwrap();
    assert!(report["recovery_corr"].is_null());
    assert!(report["direct_t_corr"].is_null());
    assert!(report["mean_kl"].as_f64().unwrap() >= 0.0);
    let band = fs::read_to_string(eval.join("band.csv")).unwrap();
    assert!(band.lines().nth(1).unwrap().split(',').nth(1).unwrap().is_empty());
}

#[test]
fn zero_weight_checkpoint_recovers_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), r#"{"synth": {"n_samples": 500}}"#);
    let data = tmp.path().join("data");
    ok(&["gen", "--spec", &spec, "--out", s(&data)]);
    let cfg = VluciConfig::default();
    let mut model = VluciModel::zeroed(&cfg, 8).unwrap();
    model.mark_trained();
    let ck = tmp.path().join("zero.vlck");
    checkpoint::save(&ck, &model, &CheckpointHeader { config: cfg, trained: true, split_seed: 0 }).unwrap();
    let eval = tmp.path().join("eval");
    let out = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&eval)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rows                  100"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("eval.json")).unwrap()).unwrap();
    assert!(report["recovery_corr"].as_f64().unwrap().abs() < 1e-9);
    assert_eq!(report["mean_kl"].as_f64().unwrap(), 0.0);
    let band = fs::read_to_string(eval.join("band.csv")).unwrap();
    assert_eq!(band.lines().next().unwrap(), "index,cu_true,mu,mu_minus_3sd,mu_plus_3sd");
    assert!(band.lines().nth(1).unwrap().ends_with(",0,-3,3"));
}

#[test]
fn experiment_smoke_run_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        r#"{"synth": {"n_samples": 600}, "vluci": {"epochs": 5}, "n_repeats": 2,
            "estimators": [{"kind": "t_learner", "epochs": 5}, {"kind": "ipw", "epochs": 5}]}"#,
    );
    let out = tmp.path().join("exp");
    ok(&["experiment", "--spec", &spec, "--out", s(&out), "--seed", "3"]);
    let aggregate = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let cells: Vec<&str> = aggregate.lines().skip(1).collect();
    assert_eq!(cells.len(), 2 * 2 * 2);
    assert!(cells.iter().all(|c| c.split(',').nth(3) == Some("2")));

    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    let t_raw_test: Vec<f64> = runs
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[0] == "t_learner" && f[2] == "false")
        .map(|f| f[4].parse().unwrap())
        .collect();
    let seeds: Vec<&str> = runs.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert!(seeds.iter().all(|&s| s == "3" || s == "4"));
    let cell: Vec<&str> =
        cells.iter().find(|c| c.starts_with("t_learner,false,test,")).unwrap().split(',').collect();
    let mean = t_raw_test.iter().sum::<f64>() / t_raw_test.len() as f64;
    assert!((cell[4].parse::<f64>().unwrap() - mean).abs() < 1e-12);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["provenance"]["seeds"], serde_json::json!([3, 4]));
    assert_eq!(report["repeats"].as_array().unwrap().len(), 2);
    let table = fs::read_to_string(out.join("table.md")).unwrap();
    assert_eq!(table.lines().count(), 2 + 2);

    let parallel = tmp.path().join("par");
    ok(&["experiment", "--spec", &spec, "--out", s(&parallel), "--seed", "3", "--parallel", "2"]);
    assert_eq!(fs::read(out.join("report.json")).unwrap(), fs::read(parallel.join("report.json")).unwrap());
}

#[test]
fn diagnose_reports_both_raw_values() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), r#"{"synth": {"n_samples": 400}, "vluci": {"epochs": 3}}"#);
    let out = tmp.path().join("diag");
    let stdout = ok(&["diagnose", "--spec", &spec, "--out", s(&out), "--repeats", "2"]).stdout;
    let text = String::from_utf8_lossy(&stdout);
    assert!(text.contains("mean KL, confounded") && text.contains("mean KL, no confounder"), "{text}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("diagnose.json")).unwrap()).unwrap();
    let pairs = report["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    assert!(pairs.iter().all(|p| p["kl_confounded"].is_f64() && p["kl_unconfounded"].is_f64()));
    assert_eq!(report["threshold"].as_f64(), Some(0.05));
    assert!(report["verdict_confounded"].is_string());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_spec(tmp.path(), r#"{"n_repeats": 0}"#);
    let out = lab(&["experiment", "--spec", &bad, "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_repeats"));

    let unknown = write_spec(tmp.path(), r#"{"synth": {"n_samplez": 10}}"#);
    assert_eq!(lab(&["gen", "--spec", &unknown, "--out", s(&tmp.path().join("y"))]).status.code(), Some(2));

    let out = lab(&["train", "--data", s(&tmp.path().join("nowhere")), "--out", s(&tmp.path().join("z"))]);
    assert_eq!(out.status.code(), Some(3));

    let data = tmp.path().join("huge");
    fs::create_dir_all(&data).unwrap();
    let mut csv = String::from("x_0,t,y\n");
    for i in 0..40 {
        let y = if i % 4 == 3 { "1e300".to_string() } else { format!("{}", i as f64 * 0.01) };
        csv += &format!("{},{},{y}\n", i as f64 / 40.0, i % 2);
    }
    fs::write(data.join("observational.csv"), csv).unwrap();
    let spec = write_spec(tmp.path(), r#"{"vluci": {"epochs": 2}}"#);
    let out = lab(&["train", "--spec", &spec, "--data", s(&data), "--out", s(&tmp.path().join("w"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("l_yX"));
}
