use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn part(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_part"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(tasks: usize) -> Value {
    json!({
        "seed": 3,
        "mode": "parallel",
        "norm_mode": "shared",
        "grid": {"layers": 3, "modules": 4, "path_width": 2, "d_in": 5, "d_hid": 6},
        "train": {"epochs": 2, "batch_size": 16, "batch_set_size": 2, "lr0": 0.01},
        "tasks": (0..tasks).map(|_| json!({"kind": "synthetic", "classes": 3, "n_per_class": 25, "margin": 3.0})).collect::<Vec<_>>(),
        "analysis": {"samples": 12}
    })
}

fn write_config(dir: &Path, name: &str, value: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, value.to_string()).unwrap();
    p.to_string_lossy().into_owned()
}

fn report_without_wallclock(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["wallclock_s"] = json!(0);
    v
}

#[test]
fn single_task_run_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(1);
    cfg["mode"] = json!("single");
    cfg.as_object_mut().unwrap().remove("analysis");
    let c = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("run");
    let o = part(&["train", "--config", &c, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("epoch   1"));
    let report = report_without_wallclock(&out.join("report.json"));
    assert_eq!(report["tasks"].as_array().unwrap().len(), 1);
    assert_eq!(report["tasks"][0]["slice"], json!([0, 3]));
    assert_eq!(report["mode"], json!("single"));
    for key in ["config_hash", "seed", "epochs", "final", "wallclock_s"] {
        assert!(report.get(key).is_some(), "{key}");
    }
}

#[test]
fn repeated_runs_match_and_compare_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "c.json", &config(2));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = part(&["train", "--config", &c, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        report_without_wallclock(&a.join("report.json")),
        report_without_wallclock(&b.join("report.json"))
    );
    assert_eq!(
        fs::read(a.join("model.ckpt")).unwrap(),
        fs::read(b.join("model.ckpt")).unwrap()
    );
    assert!(a.join("analysis/heatmap_layer3.csv").is_file());

    let o = part(&[
        "compare",
        a.join("report.json").to_str().unwrap(),
        b.join("report.json").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let table: Value =
        serde_json::from_str(&fs::read_to_string(b.join("compare.json")).unwrap()).unwrap();
    assert_eq!(table["mean_delta"], json!(0.0));

    // sequential through the mode override
    let s = dir.path().join("s");
    let o = part(&[
        "train",
        "--mode",
        "sequential",
        "--config",
        &c,
        "--out",
        s.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let seq = report_without_wallclock(&s.join("report.json"));
    assert_eq!(seq["mode"], json!("sequential"));
    assert_ne!(
        seq["config_hash"],
        report_without_wallclock(&a.join("report.json"))["config_hash"]
    );
}

#[test]
fn compare_rejects_different_task_lists() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ca = write_config(dir.path(), "a.json", &config(2));
    let cb = write_config(dir.path(), "b.json", &config(3));
    assert!(
        part(&["train", "--config", &ca, "--out", a.to_str().unwrap()])
            .status
            .success()
    );
    assert!(
        part(&["train", "--config", &cb, "--out", b.to_str().unwrap()])
            .status
            .success()
    );
    let o = part(&[
        "compare",
        a.join("report.json").to_str().unwrap(),
        b.join("report.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("different task lists"));
}

#[test]
fn invalid_config_exits_2_with_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(2);
    cfg["grid"]["path_width"] = json!(9);
    let c = write_config(dir.path(), "bad.json", &cfg);
    let o = part(&[
        "train",
        "--config",
        &c,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.path_width"));

    let c = write_config(
        dir.path(),
        "unknown.json",
        &json!({"seed": 1, "surprise": true}),
    );
    assert_eq!(
        part(&["profile-sharing", "--config", &c]).status.code(),
        Some(2)
    );
}

#[test]
fn numeric_blow_up_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(1);
    cfg.as_object_mut().unwrap().remove("analysis");
    cfg["train"]["lr0"] = json!(1e305);
    cfg["train"]["epochs"] = json!(3);
    let c = write_config(dir.path(), "c.json", &cfg);
    let o = part(&[
        "train",
        "--config",
        &c,
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn gen_data_feeds_a_csv_config_and_analysis_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(2);
    cfg["grid"]["modules"] = json!(4);
    cfg["paths"] = json!({"kind": "controlled", "setup": "layer 3"});
    let c = write_config(dir.path(), "c.json", &cfg);
    let data = dir.path().join("data");
    let o = part(&["gen-data", "--config", &c, "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("task1_val.csv").is_file());

    let mut csv_cfg = cfg.clone();
    csv_cfg["tasks"] = json!([
        {"kind": "csv", "train": "data/task0_train.csv", "val": "data/task0_val.csv", "classes": 3},
        {"kind": "csv", "train": "data/task1_train.csv", "val": "data/task1_val.csv", "classes": 3}
    ]);
    let c2 = write_config(dir.path(), "csv.json", &csv_cfg);
    let run = dir.path().join("run");
    assert!(
        part(&["train", "--config", &c2, "--out", run.to_str().unwrap()])
            .status
            .success()
    );
    let ckpt = run.join("model.ckpt");

    let o = part(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--config", &c2]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);

    let o = part(&["analyze", "--ckpt", ckpt.to_str().unwrap(), "--config", &c2]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let heat = fs::read_to_string(run.join("analysis/heatmap_layer3.csv")).unwrap();
    assert!(
        heat.starts_with("entry,t0:m0*,t0:m1*,t1:m0*,t1:m1*"),
        "{heat}"
    );
    let layer1 = fs::read_to_string(run.join("analysis/heatmap_layer1.csv")).unwrap();
    assert!(!layer1.contains('*'));

    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] = b'X';
    fs::write(&ckpt, bytes).unwrap();
    let o = part(&["analyze", "--ckpt", ckpt.to_str().unwrap(), "--config", &c2]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn profile_sharing_prints_every_bin() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(3);
    cfg["analysis"]["sharing_trials"] = json!(20);
    let c = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("sharing.json");
    let o = part(&[
        "profile-sharing",
        "--config",
        &c,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 5);
    let v: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["trials"], json!(20));
}
