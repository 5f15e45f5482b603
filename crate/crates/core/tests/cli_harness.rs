//! End-to-end checks of the experiment harness and the `ensemble-search` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ensemble_search::data::{load_dataset, DataSource};
use ensemble_search::harness::{self, AggregateSummary, ExperimentConfig, RunSummary};
use ensemble_search::Error;

const SMOKE_LIMIT: Duration = Duration::from_secs(10);

fn config_text(name: &str, repeat: usize, dataset_seed: u64) -> String {
    format!(
        r#"
name = "{name}"
repeat = {repeat}

[dataset]
format = "synthetic"
kind = "spirals"
train = 120
test = 60
classes = 3
noise = 0.1
seed = {dataset_seed}

[run]
iterations = 2
steps_per_iteration = 40
log_every = 10

[generator]
kind = "dynamic"
start_arch = "1@4"
depth_increment = 1
width_increment = 2
"#
    )
}

fn write(dir: &Path, file: &str, text: &str) -> PathBuf {
    let p = dir.join(file);
    fs::write(&p, text).unwrap();
    p
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ensemble-search"))
}

#[test]
fn run_then_evaluate_reproduces_test_metrics_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&config_text("roundtrip", 1, 3)).unwrap();
    let summaries = harness::cmd_run(&cfg, Some(dir.path())).unwrap();
    let run = harness::run_dir(dir.path(), "roundtrip", 0);
    for f in [
        harness::MANIFEST,
        harness::SUMMARY,
        harness::TIMING,
        harness::METRICS,
        harness::CONFIG_COPY,
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let eval = harness::cmd_evaluate(&run.join(harness::MANIFEST), None).unwrap();
    assert_eq!(Some(eval.test_error), summaries[0].test_error);
    assert_eq!(Some(eval.test_loss), summaries[0].test_loss);
    assert_eq!(eval.weights.len(), summaries[0].members.len());
}

#[test]
fn metrics_log_has_iteration_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&config_text("metrics", 1, 3)).unwrap();
    harness::cmd_run(&cfg, Some(dir.path())).unwrap();
    let log = fs::read_to_string(harness::run_dir(dir.path(), "metrics", 0).join(harness::METRICS)).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let iterations = records.iter().filter(|r| r["record"] == "iteration").count();
    assert_eq!(iterations, 2);
    assert!(records.iter().any(|r| r["record"] == "step"));
}

#[test]
fn binary_run_evaluate_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "exp.toml", &config_text("cli", 1, 4));
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = harness::run_dir(&out, "cli", 0).join(harness::MANIFEST);
    let eval_path = dir.path().join("eval.json");
    let status = bin()
        .args(["evaluate", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(&eval_path)
        .status()
        .unwrap();
    assert!(status.success());
    let eval: harness::Evaluation = harness::read_json(&eval_path).unwrap();
    let summary: RunSummary = harness::read_json(&manifest.with_file_name(harness::SUMMARY)).unwrap();
    assert_eq!(Some(eval.test_error), summary.test_error);
    let report = dir.path().join("report");
    let status = bin()
        .arg("report")
        .arg(&out)
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(report.join(harness::REPORT_MD).is_file());
    assert!(report.join(harness::TRAJECTORY_SVG).is_file());
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = config_text("bad", 1, 1).replace("iterations = 2", "iteratons = 2");
    let cfg_path = write(dir.path(), "bad.toml", &text);
    let out = bin().args(["run", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteratons"));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn repeat_writes_one_directory_per_seed_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse(&config_text("rep", 3, 2)).unwrap();
    cfg.seed = 10;
    harness::cmd_run(&cfg, Some(dir.path())).unwrap();
    for s in 10..13 {
        assert!(harness::run_dir(dir.path(), "rep", s).join(harness::SUMMARY).is_file());
    }
    let agg: AggregateSummary = harness::read_json(&dir.path().join("rep").join(harness::SUMMARY)).unwrap();
    assert_eq!(agg.seeds, [10, 11, 12]);
    let (mean, std) = harness::mean_std(&agg.test_errors);
    assert_eq!(agg.mean_test_error, mean);
    assert_eq!(agg.std_test_error, std);
    assert!(agg.std_test_error.is_some());
}

#[test]
fn report_groups_configs_into_rows() {
    let dir = tempfile::tempdir().unwrap();
    for (name, repeat) in [("first", 2), ("second", 1)] {
        let cfg = ExperimentConfig::parse(&config_text(name, repeat, 5)).unwrap();
        harness::cmd_run(&cfg, Some(dir.path())).unwrap();
    }
    let rows = harness::cmd_report(&[dir.path().to_path_buf()], &dir.path().join("report")).unwrap();
    assert_eq!(rows.len(), 2);
    let table = harness::render_table(&rows);
    assert!(table.contains("first") && table.contains("second"), "{table}");
    let svg = fs::read_to_string(dir.path().join("report").join(harness::TRAJECTORY_SVG)).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn report_rejects_empty_input_and_mixed_datasets() {
    let empty = tempfile::tempdir().unwrap();
    assert!(harness::cmd_report(&[empty.path().to_path_buf()], &empty.path().join("r")).is_err());

    let dir = tempfile::tempdir().unwrap();
    for (name, data_seed) in [("a", 1), ("b", 2)] {
        let cfg = ExperimentConfig::parse(&config_text(name, 1, data_seed)).unwrap();
        harness::cmd_run(&cfg, Some(dir.path())).unwrap();
    }
    let err = harness::cmd_report(&[dir.path().to_path_buf()], &dir.path().join("r")).unwrap_err();
    assert!(err.to_string().contains("dataset"), "{err}");
}

#[test]
fn report_skips_incomplete_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&config_text("partial", 2, 1)).unwrap();
    harness::cmd_run(&cfg, Some(dir.path())).unwrap();
    fs::remove_file(harness::run_dir(dir.path(), "partial", 1).join(harness::SUMMARY)).unwrap();
    let runs = harness::collect_runs(dir.path()).unwrap();
    assert_eq!(runs.len(), 1);
    let rows = harness::cmd_report(&[dir.path().to_path_buf()], &dir.path().join("r")).unwrap();
    assert_eq!(rows[0].test_errors().len(), 1);
}

#[test]
fn evaluate_detects_missing_and_tampered_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&config_text("ckpt", 1, 6)).unwrap();
    harness::cmd_run(&cfg, Some(dir.path())).unwrap();
    let run = harness::run_dir(dir.path(), "ckpt", 0);
    let manifest = run.join(harness::MANIFEST);
    let ckpt = run.join("checkpoints").join("member-01.ckpt");

    let mut bytes = fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    fs::write(&ckpt, &bytes).unwrap();
    match harness::cmd_evaluate(&manifest, None) {
        Err(Error::Checksum { member, .. }) => assert_eq!(member, 1),
        other => panic!("expected checksum error, got {other:?}"),
    }
    let out = bin().args(["evaluate", "--manifest"]).arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("member 1"));

    fs::remove_file(&ckpt).unwrap();
    let err = harness::cmd_evaluate(&manifest, None).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
    assert!(err.to_string().contains("member-01.ckpt"), "{err}");
}

fn csv_source(dir: &Path, train: &str, test: &str) -> DataSource {
    DataSource::Csv {
        train: write(dir, "train.csv", train),
        test: write(dir, "test.csv", test),
        classes: None,
        image: None,
    }
}

#[test]
fn csv_loading_cases() {
    let dir = tempfile::tempdir().unwrap();
    let ok = csv_source(
        dir.path(),
        "label,x,y\n0,0.1,0.2\n1,0.3,0.4\n2,0.5,0.6\n1,0.7,0.8\n",
        "0,1,1\n2,2,2\n",
    );
    let data = load_dataset(&ok).unwrap();
    assert_eq!((data.train.len(), data.test.len(), data.task.classes), (4, 2, 3));

    let empty = csv_source(dir.path(), "", "0,1,1\n");
    assert!(matches!(load_dataset(&empty), Err(Error::Parse { .. })));

    let DataSource::Csv { train, test, .. } = csv_source(dir.path(), "0,1,1\n1,2,2\n3,0,0\n", "0,1,1\n") else {
        unreachable!()
    };
    let bad_label = DataSource::Csv {
        train,
        test,
        classes: Some(3),
        image: None,
    };
    match load_dataset(&bad_label) {
        Err(Error::LabelOutOfRange {
            row, label, classes, ..
        }) => assert_eq!((row, label, classes), (3, 3, 3)),
        other => panic!("expected label error, got {other:?}"),
    }
}

#[test]
fn minimal_config_finishes_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
name = "smoke"

[dataset]
format = "synthetic"
kind = "gaussians"
train = 60
test = 30
classes = 2
noise = 0.3
seed = 1

[run]
iterations = 1
steps_per_iteration = 100

[generator]
kind = "constant"
constant_arch = "1@4"
"#;
    let cfg_path = write(dir.path(), "smoke.toml", text);
    let t = Instant::now();
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(t.elapsed() < SMOKE_LIMIT, "took {:?}", t.elapsed());
    assert!(String::from_utf8_lossy(&out.stdout).contains("smoke seed 0"));
}
