mod common;

use std::collections::BTreeMap;
use std::fs;

use serde_json::{json, Value};
use tempfile::tempdir;

use common::{error_line, ok, read_csv, small_pipeline, spitzkit, synth_config, train_config};

#[test]
fn synth_writes_cohort_bags_and_manifest() {
    let dir = tempdir().unwrap();
    ok(
        dir.path(),
        &["synth", "--seed", "4"],
        Some(&synth_config(10, 4)),
    );
    let cohort = fs::read_to_string(dir.path().join("cohort.jsonl")).unwrap();
    assert_eq!(cohort.lines().count(), 10);
    let manifest: BTreeMap<String, Value> =
        serde_json::from_slice(&fs::read(dir.path().join("bags/manifest.json")).unwrap()).unwrap();
    assert!(manifest.len() >= 10);
    for (id, entry) in &manifest {
        assert!(
            dir.path().join("bags").join(format!("{id}.spzb")).is_file(),
            "{id}"
        );
        assert_eq!(entry["dim"], 16);
    }
    let run_manifest: Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifests/synth.json")).unwrap())
            .unwrap();
    assert_eq!(run_manifest["seed"], 4);
    let outputs = run_manifest["outputs"].as_array().unwrap();
    assert!(outputs
        .iter()
        .any(|o| o["path"] == "cohort.jsonl" && o["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    for d in [&a, &b] {
        ok(
            d.path(),
            &["synth", "--seed", "9"],
            Some(&synth_config(12, 0)),
        );
        ok(d.path(), &["split", "--seed", "9"], None);
    }
    for rel in ["cohort.jsonl", "split.json", "bags/manifest.json"] {
        assert_eq!(
            fs::read(a.path().join(rel)).unwrap(),
            fs::read(b.path().join(rel)).unwrap(),
            "{rel}"
        );
    }
    let c = tempdir().unwrap();
    ok(
        c.path(),
        &["synth", "--seed", "10"],
        Some(&synth_config(12, 0)),
    );
    assert_ne!(
        fs::read(a.path().join("cohort.jsonl")).unwrap(),
        fs::read(c.path().join("cohort.jsonl")).unwrap()
    );
}

#[test]
fn missing_config_field_is_named() {
    let dir = tempdir().unwrap();
    let mut cfg = synth_config(10, 1);
    cfg["cohort"]
        .as_object_mut()
        .unwrap()
        .remove("aberration_probs");
    let out = spitzkit(dir.path(), &["synth"], Some(&cfg));
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["exit_code"], 2);
    assert_eq!(e["field"], "aberration_probs");
}

#[test]
fn unknown_config_keys_and_missing_files_are_config_errors() {
    let dir = tempdir().unwrap();
    let out = spitzkit(dir.path(), &["synth"], Some(&json!({"cohrot": {}})));
    assert_eq!(out.status.code(), Some(2));
    let out = spitzkit(
        dir.path(),
        &["synth", "--config", "/nonexistent/cfg.json"],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = spitzkit(dir.path(), &["split"], None);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "missing_artifact");
}

#[test]
fn input_and_output_directories_can_differ() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    ok(
        a.path(),
        &["synth", "--seed", "2"],
        Some(&synth_config(30, 2)),
    );
    let out = common::bin()
        .args(["split", "--seed", "2", "--input"])
        .arg(a.path())
        .arg("--out")
        .arg(b.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(b.path().join("split.json").is_file());
    assert!(!a.path().join("split.json").exists());
}

#[test]
fn missing_bag_file_exits_3_with_its_id() {
    let dir = tempdir().unwrap();
    ok(
        dir.path(),
        &["synth", "--seed", "3"],
        Some(&synth_config(40, 3)),
    );
    ok(dir.path(), &["split", "--seed", "3"], None);
    let split: Value =
        serde_json::from_slice(&fs::read(dir.path().join("split.json")).unwrap()).unwrap();
    let victim_case = split["folds"][1][0].as_str().unwrap().to_string();
    let manifest: BTreeMap<String, Value> =
        serde_json::from_slice(&fs::read(dir.path().join("bags/manifest.json")).unwrap()).unwrap();
    let (bag_id, _) = manifest
        .iter()
        .find(|(_, e)| e["case_id"] == victim_case.as_str())
        .unwrap();
    fs::remove_file(dir.path().join("bags").join(format!("{bag_id}.spzb"))).unwrap();

    let out = spitzkit(
        dir.path(),
        &["train", "--task", "lineage", "--fold", "0"],
        Some(&train_config()),
    );
    assert_eq!(out.status.code(), Some(3));
    let e = error_line(&out);
    assert_eq!(e["bag_id"], bag_id.as_str());
    assert_eq!(e["error"], "missing_artifact");
}

#[test]
fn out_of_range_fold_is_a_config_error() {
    let dir = tempdir().unwrap();
    ok(dir.path(), &["synth"], Some(&synth_config(30, 0)));
    ok(dir.path(), &["split"], None);
    let out = spitzkit(
        dir.path(),
        &["train", "--task", "lineage", "--fold", "7"],
        Some(&train_config()),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"]
        .as_str()
        .unwrap()
        .contains("fold 7"));
}

#[test]
fn separable_pipeline_evaluates_reports_and_rejects_mismatched_checkpoints() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    small_pipeline(d, 80, 5, "lineage");

    let (header, rows) = read_csv(&d.join("metrics/lineage.csv"));
    assert_eq!(
        header,
        [
            "task",
            "model",
            "slide_kind",
            "metric",
            "class",
            "point",
            "lo",
            "hi"
        ]
    );
    let acc: Vec<f64> = rows
        .iter()
        .filter(|r| r[1] == "mil" && r[3] == "accuracy")
        .map(|r| r[5].parse().unwrap())
        .collect();
    assert!(!acc.is_empty());
    assert!(acc.iter().all(|a| *a >= 0.95), "mil accuracy {acc:?}");
    for r in &rows {
        let (p, lo, hi): (f64, f64, f64) = (
            r[5].parse().unwrap(),
            r[6].parse().unwrap(),
            r[7].parse().unwrap(),
        );
        assert!(lo <= p + 1e-12 && p <= hi + 1e-12, "{r:?}");
    }

    let (header, preds) = read_csv(&d.join("predictions/lineage.csv"));
    assert_eq!(
        header,
        [
            "model",
            "slide_kind",
            "case_id",
            "label",
            "predicted",
            "p_SPITZ",
            "p_CONVENTIONAL_MELANOMA"
        ]
    );
    for r in &preds {
        let s: f64 = r[5].parse::<f64>().unwrap() + r[6].parse::<f64>().unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert!(preds.iter().any(|r| r[0] == "clinical" && r[1] == "ANY"));
    assert!(preds.iter().any(|r| r[0] == "fusion"));

    ok(d, &["tune-threshold", "--task", "lineage"], None);
    let t: Value =
        serde_json::from_slice(&fs::read(d.join("thresholds/lineage.json")).unwrap()).unwrap();
    assert_eq!(t["folds"].as_array().unwrap().len(), 5);

    ok(d, &["report"], None);
    let (header, tests) = read_csv(&d.join("report/tests.csv"));
    assert_eq!(header[..4], ["task", "slide_kind", "test", "model_a"]);
    assert!(tests.iter().any(|r| r[2] == "mcnemar"));
    assert!(fs::read_to_string(d.join("report/summary.md"))
        .unwrap()
        .contains("lineage"));

    // Two-class checkpoints cannot stand in for the four-class task.
    fs::create_dir_all(d.join("checkpoints/aberration")).unwrap();
    for k in 0..5 {
        fs::copy(
            d.join(format!("checkpoints/lineage/fold{k}.spzm")),
            d.join(format!("checkpoints/aberration/fold{k}.spzm")),
        )
        .unwrap();
    }
    let out = spitzkit(d, &["evaluate", "--task", "aberration"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"]
        .as_str()
        .unwrap()
        .contains("classes"));

    let out = spitzkit(d, &["tune-threshold", "--task", "aberration"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_case_trace_matches_hand_count() {
    let dir = tempdir().unwrap();
    let cfg = json!({
        "workflow": {"iterations": 1, "cases_per_iteration": 1},
        "strategies": ["ai/parallel"],
        "population": {"kind": "DISTRIBUTION", "probs": [0.0, 0.0, 0.0, 1.0]},
        "recommender": {"kind": "PERFECT"},
        "trace": true,
    });
    ok(dir.path(), &["simulate", "--seed", "1"], Some(&cfg));
    let (header, rows) = read_csv(&dir.path().join("simulation_trace.csv"));
    assert_eq!(
        header,
        ["iteration", "strategy", "cost", "tat", "examinations"]
    );
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r[1], "ai/parallel");
    let nums: Vec<f64> = r[2..].iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(nums, [1000.0, 10.0, 2.0]);

    let (_, summary) = read_csv(&dir.path().join("simulation.csv"));
    assert_eq!(summary.len(), 3);
}

#[test]
fn simulate_rejects_bad_strategies_and_recommenders() {
    let dir = tempdir().unwrap();
    let small = json!({"iterations": 2, "cases_per_iteration": 2});
    for cfg in [
        json!({"workflow": small, "recommender": {"kind": "ORACLE"}}),
        json!({"workflow": small, "strategies": ["baseline/sequential_predicted"]}),
        json!({"workflow": small, "strategies": ["ai/diagonal"]}),
        json!({"workflow": {"threshold": 1.5}}),
        json!({"workflow": small, "population": {"kind": "DISTRIBUTION", "probs": [0.5, 0.5, 0.5, 0.5]}}),
    ] {
        let out = spitzkit(dir.path(), &["simulate"], Some(&cfg));
        assert_eq!(
            out.status.code(),
            Some(2),
            "{cfg}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert_eq!(error_line(&out)["error"], "config");
    }
    assert!(!dir.path().join("simulation.csv").exists());
}

#[test]
fn report_needs_some_input_and_summarizes_simulation() {
    let dir = tempdir().unwrap();
    let out = spitzkit(dir.path(), &["report"], None);
    assert_eq!(out.status.code(), Some(3));
    ok(
        dir.path(),
        &["simulate"],
        Some(&json!({"workflow": {"iterations": 20}})),
    );
    ok(dir.path(), &["report"], None);
    let md = fs::read_to_string(dir.path().join("report/summary.md")).unwrap();
    assert!(md.contains("baseline/parallel"));
}
