use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_gustpp");

fn gustpp(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

/// Small but complete: every method, shrunken ensembles and forests.
const SMALL: &str = r#"{
  "scenario": {"n_stations": 10, "n_years": 3, "lead_times": [6, 12], "truth": "nonlinear", "day_stride": 2},
  "qrf": {"n_trees": 100},
  "idr": {"n_subsamples": 10},
  "nn": {"ensemble_size": 2, "train": {"epochs": 30}},
  "importance_repeats": 2
}"#;

fn list(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn full_pipeline_writes_every_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = gustpp(&["run", "--config", &cfg, "--out", "out"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = tmp.path().join("out");
    assert_eq!(
        list(&root.join("reports")),
        [
            "best_method.csv",
            "calibration.csv",
            "case_scores.csv",
            "dm_summary.csv",
            "dm_tests.csv",
            "importance.csv",
            "rank_histograms.csv",
            "scores.csv",
            "summary.csv"
        ]
    );
    assert_eq!(list(&root.join("forecasts")).len(), 10);
    let models = list(&root.join("models"));
    assert_eq!(models.len(), 9, "{models:?}");
    assert!(models.contains(&"qrf.jsonl".to_string()));
    assert_eq!(list(&root.join("logs").join("hen")).len(), 4);

    let scores = fs::read_to_string(root.join("reports/scores.csv")).unwrap();
    assert!(scores.starts_with("method,station_id,lead_time,score_name,value\n"));
    for m in ["epc", "raw", "emos", "mbm", "idr", "emos-gb", "qrf", "drn", "bqn", "hen"] {
        assert!(scores.contains(&format!("\n{m},1,6,CRPS,")), "no CRPS row for {m}");
    }
    let dm = fs::read_to_string(root.join("reports/dm_tests.csv")).unwrap();
    assert!(dm.starts_with("station,lead,method_a,method_b,t,p,rejected\n"));
    // 45 method pairs over 20 station/lead pairs
    assert_eq!(dm.lines().count(), 1 + 45 * 20);
    let log = fs::read_to_string(root.join("logs/drn/lead_6_member_0.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss\n"));
    let q = fs::read_to_string(root.join("forecasts/emos.csv")).unwrap();
    let header: Vec<&str> = q.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 4 + 125);
    assert_eq!(header[128], "q125");
}

#[test]
fn method_filter_writes_only_selected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = gustpp(&["run", "--config", &cfg, "--methods", "emos", "--out", "out"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = tmp.path().join("out");
    assert_eq!(list(&root.join("models")), ["emos.json"]);
    assert_eq!(list(&root.join("forecasts")), ["emos.csv"]);
    assert!(!root.join("logs").exists());
    let cases = fs::read_to_string(root.join("reports/case_scores.csv")).unwrap();
    assert!(cases.lines().skip(1).all(|l| l.starts_with("emos,")));
    let dm = fs::read_to_string(root.join("reports/dm_tests.csv")).unwrap();
    assert_eq!(dm.lines().count(), 1);
}

#[test]
fn same_seed_gives_identical_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    for (dir, jobs) in [("a", "1"), ("b", "0")] {
        let out = gustpp(
            &["run", "--config", &cfg, "--methods", "raw,emos,qrf,drn", "--seed", "7", "--jobs", jobs, "--out", dir],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["scores.csv", "case_scores.csv", "dm_tests.csv", "calibration.csv", "importance.csv"] {
        let a = fs::read(tmp.path().join("a/reports").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b/reports").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    let out = gustpp(&["generate", "--config", &cfg, "--seed", "8", "--out", "c"], tmp.path());
    assert!(out.status.success());
    let a = fs::read(tmp.path().join("a/data/cases.csv")).unwrap();
    let c = fs::read(tmp.path().join("c/data/cases.csv")).unwrap();
    assert!(a != c, "a different seed should draw different data");
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| gustpp(args, tmp.path()).status.code();
    assert_eq!(code(&["train", "--methods", "emos,foo"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    let bad = write_config(tmp.path(), r#"{"methds": ["emos"]}"#);
    assert_eq!(code(&["train", "--config", &bad]), Some(2));
    assert_eq!(code(&["train", "--methods", "emos", "--out", "nowhere"]), Some(3));
    fs::create_dir_all(tmp.path().join("broken/data")).unwrap();
    fs::write(tmp.path().join("broken/data/cases.csv"), "station_id,date\n1,notadate\n").unwrap();
    assert_eq!(code(&["evaluate", "--methods", "emos", "--out", "broken"]), Some(3));
    assert_eq!(code(&["--help"]), Some(0));
}
