use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use noodle_core::datagen::load_features_csv;
use noodle_core::eval::EvalReport;
use serde_json::json;

fn noodle(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noodle"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("NOODLE_OUT")
        .env_remove("NOODLE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = noodle(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn tiny_spec() -> serde_json::Value {
    json!({
        "schema_version": 1,
        "dataset": {"synthetic": {
            "num_classes": 4, "dim": 8,
            "train_per_class": 50, "val_per_class": 20, "test_per_class": 20,
            "ood": [{"mode": "far_cluster", "n": 40}, {"mode": "uniform_shell", "n": 40}]
        }},
        "noise": {"kind": "symmetric", "rate": 0.2},
        "train": {"epochs": 3, "hidden_widths": [16], "latent_dim": 16},
        "methods": [{"name": "noodle", "loss_kind": "cm", "lambda": 0.001, "score": "knn", "k": 10}],
        "seeds": [4]
    })
}

fn write_spec(dir: &Path, spec: &serde_json::Value) -> PathBuf {
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    path
}

fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn default_gen_data_writes_four_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let stdout = ok(&["gen-data"], &out);
    assert_eq!(stdout.lines().count(), 4);
    let expected = [("train.csv", 2000), ("val.csv", 400), ("test.csv", 800), ("ood_far_cluster.csv", 500)];
    for (name, rows) in expected {
        assert_eq!(csv_rows(&out.join(name)), rows, "{name}");
    }
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 4);
}

#[test]
fn gen_data_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-data", "--seed", "11"], &a);
    ok(&["gen-data", "--seed", "11"], &b);
    for name in ["train.csv", "val.csv", "test.csv", "ood_far_cluster.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
    let c = dir.path().join("c");
    ok(&["gen-data", "--seed", "12"], &c);
    assert_ne!(std::fs::read(a.join("train.csv")).unwrap(), std::fs::read(c.join("train.csv")).unwrap());
}

#[test]
fn noise_rate_flag_controls_flip_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let spec = json!({"dataset": {"synthetic": {
        "num_classes": 10, "dim": 2, "train_per_class": 5000,
        "val_per_class": 1, "test_per_class": 1, "ood": [{"mode": "far_cluster", "n": 1}]
    }}});
    let cfg = write_spec(dir.path(), &spec);
    let out = dir.path().join("d");
    ok(&["gen-data", "--config", cfg.to_str().unwrap(), "--noise-rate", "0.4"], &out);
    let train = load_features_csv(&out.join("train.csv"), Some(10)).unwrap();
    assert_eq!(train.len(), 50_000);
    assert!((train.noise_fraction() - 0.4).abs() <= 0.01, "{}", train.noise_fraction());
}

#[test]
fn zero_epochs_writes_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_spec(dir.path(), &tiny_spec());
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    ok(&["gen-data", "--config", c], &out);
    ok(&["train", "--config", c, "--epochs", "0"], &out);
    assert_eq!(std::fs::read_to_string(out.join("loss_trace.csv")).unwrap(), "epoch,mean_loss\n");
    for f in ["checkpoint.json", "store.json", "store.csv", "run.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    ok(&["eval", "--config", c], &out);
}

#[test]
fn toy_training_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = json!({"dataset": {"synthetic": {"num_classes": 4, "train_per_class": 50}}, "train": {"epochs": 5}});
    let cfg = write_spec(dir.path(), &spec);
    let c = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-data", "--config", c], &a);
    ok(&["gen-data", "--config", c], &b);
    let start = Instant::now();
    let first = ok(&["train", "--config", c], &a);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    let second = ok(&["train", "--config", c], &b);
    assert_eq!(first, second);
    assert_eq!(
        std::fs::read(a.join("checkpoint.json")).unwrap(),
        std::fs::read(b.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn unknown_config_keys_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec();
    spec["train"]["learning_rate"] = json!(0.1);
    spec["extra"] = json!(true);
    let cfg = write_spec(dir.path(), &spec);
    let o = noodle(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("train.learning_rate") && err.contains("extra"), "{err}");
}

#[test]
fn divergence_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec();
    spec["train"]["lr"] = json!(1e300);
    let cfg = write_spec(dir.path(), &spec);
    let c = cfg.to_str().unwrap();
    ok(&["gen-data", "--config", c], dir.path());
    let o = noodle(&["train", "--config", c], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn missing_artifacts_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["train", "eval"] {
        let o = noodle(&[cmd], &dir.path().join("empty"));
        assert_eq!(o.status.code(), Some(2), "{cmd}");
    }
    assert_eq!(noodle(&["train", "--loss", "mse"], dir.path()).status.code(), Some(2));
    assert_eq!(noodle(&["experiment"], dir.path()).status.code(), Some(2));
}

#[test]
fn eval_reports_each_ood_set_and_an_average() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_spec(dir.path(), &tiny_spec());
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    ok(&["gen-data", "--config", c], &out);
    ok(&["train", "--config", c], &out);
    let stdout = ok(&["eval", "--config", c, "--score", "mahalanobis"], &out);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "method,ood_dataset,fpr95,auroc,id_accuracy,seed");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("noodle,far_cluster,"));
    assert!(lines[2].starts_with("noodle,uniform_shell,"));
    assert!(lines[3].starts_with("noodle,Average,"));
    assert_eq!(std::fs::read_to_string(out.join("report.csv")).unwrap(), stdout);

    let report = EvalReport::load(&out.join("report.json")).unwrap();
    report.verify().unwrap();
    assert_eq!(report.score_kind, "mahalanobis");
    assert_eq!(report.id_scores.len(), 80);
    assert!(report.val_threshold.is_some());
}

#[test]
fn ood_equal_to_test_set_is_indistinguishable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let gen_cfg = write_spec(dir.path(), &tiny_spec());
    ok(&["gen-data", "--config", gen_cfg.to_str().unwrap()], &data);
    let mut spec = tiny_spec();
    spec["dataset"] = json!({"csv": {
        "train": data.join("train.csv"),
        "val": data.join("val.csv"),
        "test": data.join("test.csv"),
        "ood": [{"name": "same", "path": data.join("test.csv")}]
    }});
    let cfg = write_spec(dir.path(), &spec);
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--config", c], &out);
    ok(&["eval", "--config", c], &out);
    let report = EvalReport::load(&out.join("report.json")).unwrap();
    assert!((report.datasets[0].auroc - 0.5).abs() <= 0.05, "{}", report.datasets[0].auroc);
}

#[test]
fn experiment_matches_manual_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_spec(dir.path(), &tiny_spec());
    let c = cfg.to_str().unwrap();
    let manual = dir.path().join("manual");
    ok(&["gen-data", "--config", c], &manual);
    ok(&["train", "--config", c], &manual);
    ok(&["eval", "--config", c], &manual);
    let sweep = dir.path().join("sweep");
    ok(&["experiment", "--config", c, "--threads", "1"], &sweep);

    let chained = EvalReport::load(&manual.join("report.json")).unwrap();
    let cell = EvalReport::load(&sweep.join("cells").join("noodle_seed4.json")).unwrap();
    assert_eq!(chained, cell);
}

#[test]
fn experiment_tables_methods_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec();
    spec["noise"]["rate"] = json!(0.4);
    spec["seeds"] = json!([0, 1, 2, 3, 4]);
    spec["methods"] = json!([
        {"name": "ce_knn", "loss_kind": "ce", "lambda": 0.0, "score": "knn", "k": 10},
        {"name": "noodle", "loss_kind": "cm", "lambda": 0.001, "score": "knn", "k": 10}
    ]);
    let cfg = write_spec(dir.path(), &spec);
    let out = dir.path().join("x");
    let stdout = ok(&["experiment", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(stdout.lines().count(), 3);
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(table, stdout);
    assert!(table.lines().nth(1).unwrap().starts_with("ce_knn,5,0,"));
    assert!(table.lines().nth(2).unwrap().starts_with("noodle,5,0,"));
    assert!(out.join("comparison.json").is_file());
    assert_eq!(std::fs::read_dir(out.join("cells")).unwrap().count(), 10);
}

#[test]
fn lambda_grid_is_enumerated() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec();
    spec["train"]["epochs"] = json!(1);
    let grid = [0.0001, 0.0005, 0.001, 0.005, 0.1];
    spec["methods"] = grid
        .iter()
        .map(|l| json!({"name": format!("lambda_{l}"), "lambda": l}))
        .collect();
    let cfg = write_spec(dir.path(), &spec);
    let out = dir.path().join("grid");
    let stdout = ok(&["experiment", "--config", cfg.to_str().unwrap()], &out);
    let names: Vec<&str> = stdout.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["lambda_0.0001", "lambda_0.0005", "lambda_0.001", "lambda_0.005", "lambda_0.1"]);
}

#[test]
fn out_dir_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env_out");
    let o = Command::new(env!("CARGO_BIN_EXE_noodle"))
        .arg("gen-data")
        .env("NOODLE_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("train.csv").is_file());
}
