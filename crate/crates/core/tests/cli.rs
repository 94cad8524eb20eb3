use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bayes_fusion::data::{write_matrix_dataset, Manifest, SourceBatch};
use bayes_fusion::dists::Discrete;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayes-fusion"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = bin(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&["synth", "--seed", "7", "--out", out, "--instances", "50"], tmp.path());
    }
    ok(&["synth", "--seed", "8", "--out", "c", "--instances", "50"], tmp.path());
    let a = dir_contents(&tmp.path().join("a"));
    assert_eq!(a, dir_contents(&tmp.path().join("b")));
    assert_ne!(a, dir_contents(&tmp.path().join("c")));
    assert!(a.iter().any(|(n, _)| n == "ground_truth.json"));
}

/// Two well separated clusters on one feature.
fn separable(dir: &Path) {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for i in 0..40 {
        let class = i % 2;
        let x = if class == 0 {
            -3.0 - (i as f64) * 0.05
        } else {
            3.0 + (i as f64) * 0.05
        };
        rows.push(vec![x]);
        targets.push(Discrete::point_mass(2, class));
    }
    let b = SourceBatch::from_rows("s", rows).with_targets(targets);
    write_matrix_dataset(dir, &Manifest::generic(std::slice::from_ref(&b), 2, 0), &[b]).unwrap();
}

#[test]
fn train_then_evaluate_on_separable_data() {
    let tmp = tempfile::tempdir().unwrap();
    separable(&tmp.path().join("data"));
    ok(
        &["train", "--data", "data", "--out", "model", "--context-radius", "0"],
        tmp.path(),
    );
    for f in ["config.json", "pipeline.json", "posterior.json"] {
        assert!(tmp.path().join("model").join(f).is_file(), "missing {f}");
    }
    ok(
        &["predict", "--model", "model", "--data", "data", "--out", "pred.csv"],
        tmp.path(),
    );
    let csv = fs::read_to_string(tmp.path().join("pred.csv")).unwrap();
    assert!(csv.starts_with("t,class_0,class_1\n"));
    assert_eq!(csv.lines().count(), 41);
    ok(
        &[
            "evaluate",
            "--data",
            "data",
            "--predictions",
            "pred.csv",
            "--out",
            "report.json",
        ],
        tmp.path(),
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    let brier = report["brier"].as_f64().unwrap();
    assert!(brier < 0.1, "brier {brier}");
}

#[test]
fn model_against_itself_has_zero_log_bayes_factor() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        &[
            "synth",
            "--seed",
            "1",
            "--out",
            "d",
            "--instances",
            "60",
            "--dims",
            "2,2",
        ],
        tmp.path(),
    );
    ok(
        &["train", "--data", "d", "--out", "m", "--architecture", "fused_additive"],
        tmp.path(),
    );
    ok(&["compare", "--models", "m", "m", "--out", "bf.json"], tmp.path());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("bf.json")).unwrap()).unwrap();
    let m = &v["log_bayes_factors"];
    for i in 0..2 {
        for j in 0..2 {
            assert_eq!(m[i][j].as_f64().unwrap(), 0.0);
        }
    }
}

#[test]
fn stacked_predictions_carry_location_columns() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        &[
            "synth",
            "--seed",
            "2",
            "--out",
            "d",
            "--instances",
            "60",
            "--mode",
            "stacked",
            "--classes",
            "4",
            "--locations",
            "3",
            "--dims",
            "2,2",
        ],
        tmp.path(),
    );
    ok(
        &[
            "train",
            "--data",
            "d",
            "--out",
            "m",
            "--architecture",
            "stacked",
            "--location-sources",
            "source0",
            "--activity-sources",
            "source1",
        ],
        tmp.path(),
    );
    ok(
        &["predict", "--model", "m", "--data", "d", "--out", "p.csv"],
        tmp.path(),
    );
    let csv = fs::read_to_string(tmp.path().join("p.csv")).unwrap();
    assert!(csv.starts_with("t,class_0,class_1,class_2,class_3,loc_0,loc_1,loc_2\n"));
}

#[test]
fn bad_input_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["train", "--bogus"], tmp.path()).status.code(), Some(1));
    assert_eq!(
        bin(&["train", "--data", "missing", "--out", "m"], tmp.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        bin(&["synth", "--out", "d", "--classes", "1"], tmp.path())
            .status
            .code(),
        Some(1)
    );
    let err = bin(&["train", "--data", "missing", "--out", "m"], tmp.path()).stderr;
    assert_eq!(String::from_utf8_lossy(&err).trim().lines().count(), 1);
    assert_eq!(bin(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn non_convergence_exits_with_two_and_still_writes() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        &[
            "synth",
            "--seed",
            "3",
            "--out",
            "d",
            "--instances",
            "80",
            "--dims",
            "3,3",
        ],
        tmp.path(),
    );
    let out = bin(
        &[
            "train",
            "--data",
            "d",
            "--out",
            "m",
            "--architecture",
            "fused_additive",
            "--engine-max-iters",
            "1",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(tmp.path().join("m/posterior.json").is_file());
}

#[test]
fn raw_sensor_directories_are_accepted() {
    use bayes_fusion::data::{write_dataset, AccelSample, Annotation, PirEvent, RawDataset, Tier, ACTIVITIES};
    let tmp = tempfile::tempdir().unwrap();
    let mut raw = RawDataset {
        pir: Vec::new(),
        accel: Vec::new(),
        rssi: Vec::new(),
        video: Vec::new(),
        annotations: Vec::new(),
    };
    for s in 0..6 {
        let t = s as f64;
        raw.pir.push(PirEvent {
            start: t,
            end: t + 0.5,
            room: if s < 3 { 0 } else { 1 },
        });
        for k in 0..4 {
            raw.accel.push(AccelSample {
                t: t + k as f64 * 0.25,
                xyz: [(s % 2) as f64, 0.1 * k as f64, 1.0],
            });
        }
    }
    let label = |name: &str| ACTIVITIES.iter().position(|a| *a == name).unwrap();
    raw.annotations.push(vec![
        Annotation {
            start: 0.0,
            end: 3.0,
            tier: Tier::Activity,
            label: label("walk"),
        },
        Annotation {
            start: 3.0,
            end: 6.0,
            tier: Tier::Activity,
            label: label("standing"),
        },
    ]);
    write_dataset(&tmp.path().join("raw"), &raw).unwrap();
    ok(
        &[
            "train",
            "--data",
            "raw",
            "--out",
            "m",
            "--sources",
            "pir,accel",
            "--architecture",
            "concat_bpm",
        ],
        tmp.path(),
    );
    ok(
        &["predict", "--model", "m", "--data", "raw", "--out", "p.csv"],
        tmp.path(),
    );
    let csv = fs::read_to_string(tmp.path().join("p.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("t,ascent_stairs,"));
}
