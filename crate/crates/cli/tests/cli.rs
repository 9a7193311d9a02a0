use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dynaseg::io::{write_meta, write_trajectory};
use dynaseg::metrics::Report;
use dynaseg::{CameraIntrinsics, Pose, SequenceMeta, Trajectory};
use nalgebra::{UnitQuaternion, Vector3};

fn dynaseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynaseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = dynaseg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_sequence(dir: &Path) -> SequenceMeta {
    let meta = SequenceMeta {
        sequence_id: "walk".into(),
        image_width: 64,
        image_height: 48,
        fps: 30.0,
        frame_count: 30,
        intrinsics: CameraIntrinsics::new(50.0, 50.0, 32.0, 24.0).unwrap(),
        scene: None,
    };
    std::fs::create_dir_all(dir).unwrap();
    write_meta(&meta, dir.join("meta.txt")).unwrap();
    let poses = (0..30)
        .map(|f| {
            let t = f as f64 / 30.0;
            Pose::new(
                t,
                Vector3::new(t, (2.0 * t).sin(), 0.3 * t * t),
                UnitQuaternion::from_euler_angles(0.0, 0.2 * t, 0.0),
            )
        })
        .collect();
    write_trajectory(
        &Trajectory::new(poses).unwrap(),
        dir.join("groundtruth.txt"),
    )
    .unwrap();
    meta
}

fn error_kind(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    v["error"]["kind"].as_str().unwrap().to_owned()
}

#[test]
fn detect_without_features_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("walk");
    small_sequence(&seq);
    let out = dynaseg(&[
        "detect",
        "--meta",
        s(&seq.join("meta.txt")),
        "--out",
        s(&tmp.path().join("f.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dynaseg(&[
        "--set",
        "no_such_key=1",
        "evaluate",
        "--tests",
        s(tmp.path()),
        "--estimates",
        s(tmp.path()),
        "--out",
        s(&tmp.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_input_is_a_stage_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("walk");
    small_sequence(&seq);
    let bad = tmp.path().join("features.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    let out = dynaseg(&[
        "merge-runs",
        "--seq",
        s(&seq),
        "--features",
        s(&bad),
        "--out",
        s(&tmp.path().join("m.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "failure");
}

#[test]
fn evaluating_ground_truth_gives_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("walk");
    small_sequence(&seq);
    let est = tmp.path().join("est/walk/copy");
    std::fs::create_dir_all(&est).unwrap();
    std::fs::copy(seq.join("groundtruth.txt"), est.join("run_00.txt")).unwrap();
    let report_path = tmp.path().join("report.json");
    ok(&[
        "evaluate",
        "--tests",
        s(tmp.path()),
        "--estimates",
        s(&tmp.path().join("est")),
        "--out",
        s(&report_path),
    ]);
    let report: Report = serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    let eval = &report.systems[0].sequences[0];
    assert!(eval.ate_rmse.unwrap() < 1e-9);
    assert!(eval.success);
    assert_eq!(report.systems[0].success_rate, 1.0);
}

/// Runs every stage command by hand on the same inputs as `pipeline`.
fn compose(example: &Path, test: &Path, test_id: &str, runs: usize, out: &Path) -> PathBuf {
    let work = out.join("stages");
    let merged = work.join("merged.jsonl");
    let flagged = work.join("flagged.jsonl");
    let masks = work.join("masks.jsonl");
    ok(&[
        "--jobs",
        "1",
        "merge-runs",
        "--seq",
        s(example),
        "--out",
        s(&merged),
    ]);
    ok(&[
        "detect",
        "--seq",
        s(example),
        "--merged",
        s(&merged),
        "--out",
        s(&flagged),
    ]);
    ok(&[
        "build-masks",
        "--seq",
        s(example),
        "--merged",
        s(&merged),
        "--flagged",
        s(&flagged),
        "--out",
        s(&masks),
        "--export",
        s(&work.join("export")),
    ]);
    let est = out.join("estimates").join(test_id);
    for run in 0..runs {
        let features = test.join(format!("features_run_{run:02}.jsonl"));
        let kept = work.join(format!("filtered_{run:02}.jsonl"));
        let name = format!("run_{run:02}.txt");
        ok(&[
            "filter",
            "--seq",
            s(test),
            "--features",
            s(&features),
            "--masks",
            s(&masks),
            "--out",
            s(&kept),
        ]);
        ok(&[
            "track",
            "--seq",
            s(test),
            "--features",
            s(&features),
            "--out",
            s(&est.join("unfiltered").join(&name)),
        ]);
        ok(&[
            "track",
            "--seq",
            s(test),
            "--features",
            s(&kept),
            "--out",
            s(&est.join("filtered").join(&name)),
        ]);
    }
    let report = out.join("report.json");
    ok(&[
        "evaluate",
        "--tests",
        s(test),
        "--estimates",
        s(&out.join("estimates")),
        "--out",
        s(&report),
    ]);
    report
}

#[test]
fn pipeline_matches_the_composed_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let (tests, examples) = (tmp.path().join("tests"), tmp.path().join("examples"));
    let runs = 6;
    ok(&[
        "simulate",
        "--preset",
        "hard",
        "--seed",
        "2",
        "--runs",
        &runs.to_string(),
        "--frames",
        "280",
        "--out",
        s(&tests),
        "--twin-out",
        s(&examples),
    ]);
    let test = tests.join("hard-0002");
    let example = examples.join("hard-0002-example");

    let report = tmp.path().join("pipeline/report.json");
    let work = tmp.path().join("pipeline/work");
    ok(&[
        "pipeline",
        "--examples",
        s(&examples),
        "--tests",
        s(&tests),
        "--out",
        s(&report),
        "--work",
        s(&work),
    ]);
    let composed = compose(
        &example,
        &test,
        "hard-0002",
        runs,
        &tmp.path().join("composed"),
    );

    let bytes = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(bytes(&report), bytes(&composed));
    let stage_dir = tmp.path().join("composed/stages");
    for name in ["merged.jsonl", "flagged.jsonl", "masks.jsonl"] {
        assert_eq!(
            bytes(&work.join("examples/hard-0002-example").join(name)),
            bytes(&stage_dir.join(name)),
            "{name}"
        );
    }
    assert!(stage_dir.join("export/object_01/manifest.json").is_file());

    let parsed: Report = serde_json::from_slice(&bytes(&report)).unwrap();
    let ate = |name: &str| {
        parsed
            .systems
            .iter()
            .find(|s| s.system == name)
            .unwrap()
            .sequences[0]
            .ate_rmse
            .unwrap()
    };
    assert!(ate("filtered") < 0.01, "filtered ATE {}", ate("filtered"));
    assert!(ate("unfiltered") > 5.0 * ate("filtered"));

    // Same inputs, same bytes.
    let again = tmp.path().join("again.json");
    ok(&[
        "--jobs",
        "1",
        "pipeline",
        "--examples",
        s(&examples),
        "--tests",
        s(&tests),
        "--out",
        s(&again),
    ]);
    assert_eq!(bytes(&report), bytes(&again));
}
