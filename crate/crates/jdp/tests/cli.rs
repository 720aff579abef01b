use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jdp::io::{cohort_csv, load_cohort_dir};
use jdp::manifest::RunManifest;
use jdp_core::simgen::{generate_scenario, GeneratorMode, ScenarioConfig};
use serde_json::Value;

fn jdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jdp")).args(args).env_remove("JDP_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_cohort(dir: &Path, n: usize, seed: u64) {
    let c = generate_scenario(&ScenarioConfig::scenario1().with_n(n), seed, GeneratorMode::ClosedForm).unwrap().cohort;
    let (l, sv) = cohort_csv(&c);
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("longitudinal.csv"), l).unwrap();
    fs::write(dir.join("survival.csv"), sv).unwrap();
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_a_reproducible_cohort() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = jdp(&["simulate", "--preset", "scenario1", "--seed", "7", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let cohort = load_cohort_dir(&a).unwrap();
    assert_eq!(cohort.len(), 2000);
    for f in ["longitudinal.csv", "survival.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = manifest(&a);
    assert_eq!((m.command.as_str(), m.master_seed), ("simulate", 7));
    assert_eq!(m.config_digest, manifest(&b).config_digest);
    assert_eq!(m.outputs.len(), 3);
    let head = fs::read_to_string(a.join("survival.csv")).unwrap();
    assert!(head.starts_with("subject_id,observed_time,event,w1,w2\n"));
}

#[test]
fn seed_comes_from_the_environment_unless_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.json");
    fs::write(&cfg, r#"{"preset": "scenario2", "n": 40, "seed": 3}"#).unwrap();
    let run = |env: Option<&str>, extra: &[&str], out: &PathBuf| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_jdp"));
        c.args(["simulate", "--config", s(&cfg), "--out", s(out)]).args(extra).env_remove("JDP_SEED");
        if let Some(v) = env {
            c.env("JDP_SEED", v);
        }
        let o = c.output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        manifest(out).master_seed
    };
    assert_eq!(run(None, &[], &tmp.path().join("x")), 3);
    assert_eq!(run(Some("11"), &[], &tmp.path().join("y")), 11);
    assert_eq!(run(Some("11"), &["--seed", "5"], &tmp.path().join("z")), 5);
    assert_eq!(load_cohort_dir(&tmp.path().join("x")).unwrap().len(), 40);
}

#[test]
fn malformed_config_exits_with_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{\n  \"n\": 10,\n  nope\n}\n").unwrap();
    let out = tmp.path().join("out");
    let o = jdp(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(!out.exists());

    fs::write(&cfg, r#"{"event": {"lambda": -1.0}}"#).unwrap();
    assert_eq!(code(&jdp(&["simulate", "--config", s(&cfg), "--out", s(&out)])), 1);
    fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    assert_eq!(code(&jdp(&["simulate", "--config", s(&cfg), "--out", s(&out)])), 1);
}

#[test]
fn tune_smoke_run_and_missing_input() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_cohort(&data, 60, 4);
    let out = tmp.path().join("tune");
    let args = [
        "tune", "--cohort", s(&data), "--out", s(&out), "--mp-grid", "0.5,1.0", "--folds", "2", "--repeats", "1",
        "--iterations", "300", "--burnin", "100", "--chains", "1", "--n-mc", "50", "--workers", "2",
    ];
    let o = jdp(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("selected M_p = 1"), "{stdout}");
    let csv = fs::read_to_string(out.join("tuning_report.csv")).unwrap();
    // |grid| * K * W rows plus the header
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let report: Value = serde_json::from_slice(&fs::read(out.join("tuning_report.json")).unwrap()).unwrap();
    // 15-subject personalized fits are below the joint model's minimum
    assert_eq!(report["entries"][0]["mean"], Value::Null);
    assert_eq!(report["entries"][0]["unreliable"], Value::Bool(true));

    fs::remove_file(data.join("survival.csv")).unwrap();
    let out2 = tmp.path().join("tune2");
    let o = jdp(&["tune", "--cohort", s(&data), "--out", s(&out2)]);
    assert_eq!(code(&o), 1);
    assert!(!out2.exists());
}

#[test]
fn all_infeasible_grid_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_cohort(&data, 40, 9);
    let out = tmp.path().join("out");
    let o = jdp(&[
        "tune", "--cohort", s(&data), "--out", s(&out), "--mp-grid", "0.5", "--folds", "2", "--repeats", "1",
        "--iterations", "200", "--burnin", "100", "--chains", "1",
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn fit_then_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_cohort(&data, 80, 12);
    let fit_dir = tmp.path().join("fit");
    let o = jdp(&["fit", "--cohort", s(&data), "--out", s(&fit_dir), "--iterations", "400", "--burnin", "200", "--chains", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit_path = fit_dir.join("fit.json");

    let subject = tmp.path().join("subject.json");
    fs::write(
        &subject,
        r#"{"subject_id": "new", "observed_time": 6.0, "covariates": {"w1": 0.3, "w2": -0.5},
            "measurements": [{"time": 0.0, "value": -1.3}, {"time": 0.5, "value": -1.1}, {"time": 1.0, "value": -1.0},
                             {"time": 2.0, "value": 0.2}]}"#,
    )
    .unwrap();
    let pred = tmp.path().join("pred");
    let o = jdp(&["predict", "--fit", s(&fit_path), "--subject", s(&subject), "--t", "1", "--u", "1", "--out", s(&pred)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p: Value = serde_json::from_slice(&fs::read(pred.join("prediction.json")).unwrap()).unwrap();
    assert_eq!(p["pi_hat"], Value::from(1.0));
    for key in ["subject_id", "t", "u", "pi_hat", "mc_std_error", "extrapolated"] {
        assert!(p.get(key).is_some(), "{key}");
    }

    let o = jdp(&["predict", "--fit", s(&fit_path), "--subject", s(&subject), "--t", "1", "--u", "4", "--out", s(&pred)]);
    assert_eq!(code(&o), 0);
    let p: Value = serde_json::from_slice(&fs::read(pred.join("prediction.json")).unwrap()).unwrap();
    let pi = p["pi_hat"].as_f64().unwrap();
    assert!((0.0..1.0).contains(&pi), "{pi}");

    fs::write(
        &subject,
        r#"{"subject_id": "gone", "observed_time": 0.7, "covariates": {"w1": 0.0, "w2": 0.0},
            "measurements": [{"time": 0.0, "value": -1.3}]}"#,
    )
    .unwrap();
    let gone = tmp.path().join("gone");
    let o = jdp(&["predict", "--fit", s(&fit_path), "--subject", s(&subject), "--t", "1", "--u", "4", "--out", s(&gone)]);
    assert_eq!(code(&o), 4);
    assert!(!gone.exists());
}

#[test]
fn similarity_filtered_prediction_records_the_subpopulation() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_cohort(&data, 100, 21);
    let subject = tmp.path().join("subject.json");
    fs::write(
        &subject,
        r#"{"subject_id": "idx", "covariates": {"w1": -0.4, "w2": 1.2},
            "measurements": [{"time": 0.0, "value": -1.5}, {"time": 0.5, "value": -1.2}, {"time": 1.0, "value": -1.1}]}"#,
    )
    .unwrap();
    let mut sizes = Vec::new();
    for mp in ["0.4", "1.0"] {
        let out = tmp.path().join(format!("mp{mp}"));
        let o = jdp(&[
            "predict", "--cohort", s(&data), "--subject", s(&subject), "--mp", mp, "--t", "1", "--u", "3",
            "--iterations", "300", "--burnin", "100", "--chains", "1", "--n-mc", "50", "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        sizes.push(manifest(&out).details["subpopulation_size"].as_u64().unwrap());
    }
    assert_eq!(sizes, vec![40, 100]);
}

#[test]
fn score_reproduces_hand_computed_brier() {
    let tmp = tempfile::tempdir().unwrap();
    let preds = tmp.path().join("p.csv");
    fs::write(&preds, "subject_id,observed_time,event,pi_u_given_t,pi_u_given_tj\nA,5,0,0.7,\nB,2,1,0.5,\n").unwrap();
    let out = tmp.path().join("out");
    let o = jdp(&["score", "--predictions", s(&preds), "--t", "1", "--u", "4", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&fs::read(out.join("score.json")).unwrap()).unwrap();
    assert!((r["estimate"]["value"].as_f64().unwrap() - 0.17).abs() < 1e-15);
    assert_eq!(r["estimate"]["at_risk_count"], Value::from(2));

    fs::write(&preds, "subject_id,observed_time,event,pi_u_given_t,pi_u_given_tj\nA,5,0,x,\n").unwrap();
    assert_eq!(code(&jdp(&["score", "--predictions", s(&preds), "--t", "1", "--u", "4", "--out", s(&out)])), 1);
}
