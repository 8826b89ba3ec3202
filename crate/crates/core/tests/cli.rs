mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::*;

fn mtsbench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtsbench"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MTSBENCH_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_csv(path: &Path, header: bool) {
    let values = seasonal_series(600, 3, 24, 0.2, 1);
    let mut text = String::new();
    if header {
        text.push_str("date,a,b,c\n");
    }
    for (t, row) in values.rows().into_iter().enumerate() {
        if header {
            text.push_str(&format!("{t},"));
        }
        text.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

#[test]
fn train_evaluate_report_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_csv(&root.join("toy.csv"), true);
    fs::write(
        root.join("linear.cfg"),
        "dataset.path = toy.csv\ndataset.skip_columns = 1\nhistory = 48\nhorizon = 12\nmodel.kind = linear\nrun_name = lin\n",
    )
    .unwrap();
    fs::write(
        root.join("dlinear.cfg"),
        "dataset.path = toy.csv\ndataset.skip_columns = 1\nhistory = 48\nhorizon = 12\nmodel.kind = dlinear\nrun_name = dlin\n",
    )
    .unwrap();

    for cfg in ["linear.cfg", "dlinear.cfg"] {
        let out = mtsbench(&["train", cfg, "--has-header", "--output-dir", "runs"], root);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(root.join("runs/lin/result.json").is_file());

    let eval = mtsbench(&["evaluate", "runs/lin"], root);
    assert!(eval.status.success());
    let reprinted: serde_json::Value = serde_json::from_str(&stdout(&eval)).unwrap();
    let stored: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("runs/lin/result.json")).unwrap()).unwrap();
    assert_eq!(reprinted, stored["test_metrics"]);
    assert!(eval.stderr.is_empty());

    fs::write(
        root.join("manifest.json"),
        r#"[{"path": "runs/lin", "model": "Linear"}, {"path": "runs/dlin", "model": "DLinear"}]"#,
    )
    .unwrap();
    let md = stdout(&mtsbench(&["report", "manifest.json"], root));
    assert_eq!(md.lines().count(), 4, "{md}");
    assert!(md.contains("| Linear |") && md.contains("**"));

    let json = mtsbench(&["report", "manifest.json", "--format", "json"], root);
    fs::write(root.join("table.json"), &json.stdout).unwrap();
    let again = stdout(&mtsbench(&["report", "table.json", "--format", "markdown"], root));
    assert_eq!(again, md);

    let csv = stdout(&mtsbench(&["report", "manifest.json", "--format", "csv"], root));
    let table: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    let mae = table["rows"][0]["cells"][0]["metrics"][0][1].as_f64().unwrap();
    let csv_mae: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(mae, csv_mae);

    fs::write(root.join("reported.csv"), "metric,reported\nmae,1.0\nwape,5.0\n").unwrap();
    let gap = mtsbench(&["gap", "reported.csv", "--result", "runs/lin"], root);
    assert!(gap.status.success());
    assert!(stdout(&gap).contains("| MAE |"));
}

#[test]
fn env_overrides_config_file_and_flags_override_env() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_csv(&root.join("toy.csv"), false);
    fs::write(root.join("c.cfg"), "dataset.path = toy.csv\nhistory = 24\nhorizon = 6\nseed = 1\nrun_name = r\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mtsbench"))
        .args(["train", "c.cfg", "--seed", "9", "--output-dir", "o"])
        .env("MTSBENCH_HISTORY", "36")
        .env("MTSBENCH_SEED", "5")
        .current_dir(root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("o/r/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["model"]["history"], 36);
    assert_eq!(cfg["seed"], 9);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(mtsbench(&["train", "missing.cfg"], root).status.code(), Some(2));
    assert_eq!(mtsbench(&["bogus"], root).status.code(), Some(2));

    fs::write(root.join("bad.csv"), "1,2\n3,oops\n").unwrap();
    fs::write(root.join("bad.cfg"), "dataset.path = bad.csv\n").unwrap();
    let out = mtsbench(&["train", "bad.cfg"], root);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
    assert!(!root.join("runs").exists());

    write_csv(&root.join("toy.csv"), false);
    fs::write(
        root.join("boom.cfg"),
        "dataset.path = toy.csv\nhistory = 24\nhorizon = 6\ntrain.method = sgd\ntrain.lr = 1e6\ntrain.epochs = 3\n",
    )
    .unwrap();
    let out = mtsbench(&["train", "boom.cfg"], root);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!root.join("runs").exists() || fs::read_dir(root.join("runs")).unwrap().next().is_none());
}

#[test]
fn profile_command() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("one.csv"), (0..400).map(|t| format!("{}\n", (t % 7) as f64)).collect::<String>()).unwrap();
    let out = mtsbench(&["profile", "one.csv", "--json"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v[0]["r1"], 0.0);
    assert_eq!(v[0]["r2"], 0.0);

    let out = mtsbench(&["profile", "one.csv", "--output-dir", "prof"], root);
    assert!(stdout(&out).starts_with("dataset"));
    assert!(root.join("prof/profile_one.json").is_file());

    let out = mtsbench(&["profile", "one.csv", "--e-u", "0.3", "--e-l", "0.5"], root);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gap_command_with_inline_values() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("g.csv"), "label,metric,reported,reproduced\nx,mae,3,3\ny,mae,0,2\n").unwrap();
    let out = stdout(&mtsbench(&["gap", "g.csv"], root));
    assert!(out.contains("| 0.00% |"), "{out}");
    assert!(out.contains("ERROR"), "{out}");
}
