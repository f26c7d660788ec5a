use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mibench_core::datagen::{read_embedding_file, DatasetManifest};
use mibench_core::harness::{read_summary_json, write_summary_json};
use serde_json::{json, Value};

fn mibench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mibench"))
        .args(args)
        .env_remove("MIBENCH_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn gaussian_suite(out: &Path) -> Value {
    json!({
        "schema_version": 1,
        "dataset": {"family": "gaussian", "dim": 3},
        "critics": [{"kind": "separable", "hidden_dim": 16, "embed_dim": 8}],
        "estimators": ["dv"],
        "batch_size": 16,
        "schedule": [
            {"mi_bits": 2.0, "steps": 20}, {"mi_bits": 4.0, "steps": 20},
            {"mi_bits": 6.0, "steps": 20}, {"mi_bits": 8.0, "steps": 20},
            {"mi_bits": 10.0, "steps": 20}
        ],
        "output": {"dir": out}
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_image_manifest_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "img.json",
        &json!({
            "schema_version": 1,
            "dataset": {"family": "image", "grid": 2, "side": 16},
            "data": {"synthetic_digits_per_class": 50},
            "generate": {"rows": 20}
        }),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mibench(&["generate", "--config", s(&cfg), "--out", s(out), "--seed", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let m = DatasetManifest::read(a.join("manifest.json")).unwrap();
    assert!((m.true_mi_bits - 4.0).abs() < 1e-12);
    assert_eq!(m.seed, 3);
    for f in ["x.bin", "y.bin", "manifest.json", "class_bits_x.csv", "class_bits_y.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let x = read_embedding_file(a.join("x.bin")).unwrap();
    assert_eq!(x.shape(), (20, 256));
}

#[test]
fn generate_rejects_bad_beta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        &json!({"schema_version": 1, "dataset": {"family": "image", "beta": 0.6}}),
    );
    let o = mibench(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beta must lie in [0, 0.5]"), "{}", stderr(&o));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn generate_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "emb.json",
        &json!({
            "schema_version": 1,
            "dataset": {"family": "embedding", "sources": 2, "segment_dim": 8},
            "generate": {"rows": 5}
        }),
    );
    let out = dir.path().join("e");
    let o = mibench(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_embedding_file(out.join("y.bin")).unwrap().shape(), (5, 16));
    let m = DatasetManifest::read(out.join("manifest.json")).unwrap();
    assert_eq!(m.sources, Some(2));
    assert!((m.true_mi_bits - 2.0).abs() < 1e-12);
}

#[test]
fn run_dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let cfg = write_config(dir.path(), "g.json", &gaussian_suite(&out));
    let o = mibench(&["run", "--config", s(&cfg), "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("level 4: 10 bits x 20 steps"), "{text}");
    assert!(!out.exists());
}

#[test]
fn run_writes_five_level_summary_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let cfg = write_config(dir.path(), "g.json", &gaussian_suite(&out));
    let o = mibench(&["run", "--config", s(&cfg), "--set", "estimators=[\"dv\",\"nwj\"]", "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut summaries: Vec<PathBuf> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".summary.json"))
        .collect();
    summaries.sort();
    assert_eq!(summaries.len(), 2);
    let doc = read_summary_json(&summaries[0]).unwrap();
    assert_eq!(doc.slices.len(), 5);
    let levels: Vec<f64> = doc.slices.iter().map(|s| s.bits.true_mi.round()).collect();
    assert_eq!(levels, vec![2.0, 4.0, 6.0, 8.0, 10.0]);

    let csv_path = summaries[0].to_string_lossy().replace(".summary.json", ".csv");
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with(&format!("# mibench config_hash={} seed=0", doc.config_hash)));
    assert_eq!(csv.lines().count(), 2 + 100);

    // Single bundle: one row per level.
    let rep = dir.path().join("rep1");
    let o = mibench(&["report", s(&summaries[0]), "--out", s(&rep)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(rep.join("mse_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 5);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",*")));

    // Two estimators: exactly one best mark per level; a missing input is tolerated.
    let rep = dir.path().join("rep2");
    let o = mibench(&["report", s(&out), s(&dir.path().join("nope.json")), "--out", s(&rep)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("nope.json"));
    let table = fs::read_to_string(rep.join("mse_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 10);
    assert_eq!(table.lines().filter(|l| l.ends_with(",*")).count(), 5);
    let plot = fs::read_to_string(rep.join("ratio_plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 10);
    assert!(plot.starts_with("dataset,estimator,critic,config_hash,true_mi_bits,ratio"));
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.json", &gaussian_suite(&dir.path().join("unused")));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(mibench(&["run", "--config", s(&cfg), "--out", s(out)]).status.success());
    }
    let names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
    }
}

#[test]
fn report_refusals() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(mibench(&["report", s(&empty), "--out", s(&dir.path().join("r"))]).status.code(), Some(2));
    assert_eq!(mibench(&["report"]).status.code(), Some(2));

    let out = dir.path().join("runs");
    let mut suite = gaussian_suite(&out);
    suite["schedule"] = json!([{"mi_bits": 1.0, "steps": 5}]);
    let cfg = write_config(dir.path(), "g.json", &suite);
    assert!(mibench(&["run", "--config", s(&cfg)]).status.success());
    let summary = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(".summary.json"))
        .unwrap();
    let mut doc = read_summary_json(&summary).unwrap();
    doc.schema_version = 99;
    let other = dir.path().join("other.summary.json");
    write_summary_json(&other, &doc).unwrap();
    let o = mibench(&["report", s(&summary), s(&other), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schema version"));
}

#[test]
fn numeric_abort_exits_3_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut suite = gaussian_suite(&dir.path().join("runs"));
    suite["estimators"] = json!(["nwj"]);
    suite["lr"] = json!(1e6);
    suite["schedule"] = json!([{"mi_bits": 2.0, "steps": 500}]);
    let cfg = write_config(dir.path(), "g.json", &suite);
    let o = mibench(&["run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("run aborted at step"));
}

#[test]
fn validate_command() {
    let dir = tempfile::tempdir().unwrap();
    let mut suite = gaussian_suite(&dir.path().join("runs"));
    suite["critics"] = json!([{"kind": "joint"}, {"kind": "bilinear"}]);
    suite["estimators"] = json!(["dv", "nwj", "infonce", "js", "mine", "smile-1", "smile-inf"]);
    let cfg = write_config(dir.path(), "g.json", &suite);
    let o = mibench(&["validate", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok: 14 run(s)"));

    suite["typo"] = json!(true);
    let bad = write_config(dir.path(), "bad.json", &suite);
    let o = mibench(&["validate", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("typo"));

    let o = mibench(&["validate", "--config", s(&cfg), "--set", "batch_size=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batch_size"));

    let o = mibench(&["validate", "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn image_run_without_idx_uses_synthetic_bank() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "img.json",
        &json!({
            "schema_version": 1,
            "dataset": {"family": "image", "grid": 1, "side": 8, "eta": 0.5},
            "critics": [{"kind": "separable", "hidden_dim": 8, "embed_dim": 4}],
            "estimators": ["mine"],
            "batch_size": 8,
            "schedule": [{"mi_bits": 1.0, "steps": 3}],
            "data": {"synthetic_digits_per_class": 5, "synthetic_backgrounds": 2},
            "output": {"dir": dir.path().join("o")}
        }),
    );
    let o = mibench(&["run", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let other = write_config(
        dir.path(),
        "classes.json",
        &json!({"schema_version": 1, "dataset": {"family": "image", "class_pair": [3, 7]}}),
    );
    let o = mibench(&["generate", "--config", s(&other), "--out", s(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(2));
}
