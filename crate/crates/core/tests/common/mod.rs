//! Strategies and round-trip checks shared by the property and acceptance
//! tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use dynaseg::detector::{read_flagged, write_flagged, WindowCounts};
use dynaseg::io::{
    format_meta, format_trajectory, parse_meta, parse_trajectory, read_landmarks, read_masks,
    write_feature_records, write_landmarks, write_masks, FeatureReader,
};
use dynaseg::{
    merge_runs, BBox, BinaryMask, CameraIntrinsics, FeatureRecord, FeatureStatus, MaskSequence,
    MergeConfig, MergedFeatureMap, PipelineConfig, Pose, SequenceMeta, Trajectory, WindowScore,
};
use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub const CASES: u32 = 500;

pub fn meta_strategy() -> impl Strategy<Value = SequenceMeta> {
    (
        "[a-z0-9_-]{1,12}",
        1u32..2000,
        1u32..2000,
        0.5f64..240.0,
        1u32..5000,
        (
            1.0f64..5000.0,
            1.0f64..5000.0,
            -100.0f64..3000.0,
            -100.0f64..3000.0,
        ),
        proptest::option::of("[a-z0-9-]{1,10}"),
    )
        .prop_map(
            |(id, w, h, fps, frames, (fx, fy, cx, cy), scene)| SequenceMeta {
                sequence_id: id,
                image_width: w,
                image_height: h,
                fps,
                frame_count: frames,
                intrinsics: CameraIntrinsics { fx, fy, cx, cy },
                scene,
            },
        )
}

/// A small sequence plus records inside it.
pub fn records_strategy() -> impl Strategy<Value = (SequenceMeta, Vec<FeatureRecord>)> {
    (8u32..300, 8u32..300, 1u32..40).prop_flat_map(|(w, h, frames)| {
        let meta = SequenceMeta {
            sequence_id: "p".into(),
            image_width: w,
            image_height: h,
            fps: 30.0,
            frame_count: frames,
            intrinsics: CameraIntrinsics::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0)
                .unwrap(),
            scene: None,
        };
        let rec = (
            0..frames,
            0.0..w as f64,
            0.0..h as f64,
            any::<bool>(),
            0u32..10,
            proptest::option::of(any::<u64>()),
        )
            .prop_map(|(frame, x, y, out, run, track)| FeatureRecord {
                frame,
                x,
                y,
                status: if out {
                    FeatureStatus::Outlier
                } else {
                    FeatureStatus::Inlier
                },
                run,
                track,
            });
        (Just(meta), proptest::collection::vec(rec, 0..200))
    })
}

pub fn trajectory_strategy() -> impl Strategy<Value = Trajectory> {
    let pose = (
        0.0f64..0.5,
        proptest::array::uniform3(-100.0f64..100.0),
        proptest::array::uniform4(-1.0f64..1.0),
    );
    (0.0f64..1e4, proptest::collection::vec(pose, 0..60)).prop_map(|(t0, raw)| {
        let mut t = t0;
        let poses = raw
            .into_iter()
            .map(|(dt, p, q)| {
                t += dt + 1e-3;
                let q = Quaternion::new(q[3], q[0], q[1], q[2]);
                let rot = UnitQuaternion::try_new(q, 1e-6).unwrap_or_else(UnitQuaternion::identity);
                Pose::new(t, Vector3::from(p), rot)
            })
            .collect();
        Trajectory::new(poses).unwrap()
    })
}

pub fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1u32..40, 1u32..40, 0.0f64..1.0).prop_flat_map(|(w, h, density)| {
        proptest::collection::vec(proptest::bool::weighted(density), (w * h) as usize)
            .prop_map(move |px| BinaryMask::from_pixels(w, h, px).unwrap())
    })
}

/// Masks of one or two objects over a few frames of a small sequence.
pub fn mask_sequences_strategy() -> impl Strategy<Value = (SequenceMeta, Vec<MaskSequence>)> {
    (1u32..30, 1u32..30, 1u32..12).prop_flat_map(|(w, h, frames)| {
        let meta = SequenceMeta {
            sequence_id: "m".into(),
            image_width: w,
            image_height: h,
            fps: 30.0,
            frame_count: frames,
            intrinsics: CameraIntrinsics::new(10.0, 10.0, 0.0, 0.0).unwrap(),
            scene: None,
        };
        let n = (w * h) as usize;
        let frame_masks = proptest::collection::btree_map(
            0..frames,
            proptest::collection::vec(any::<bool>(), n),
            0..frames as usize + 1,
        );
        let objects = proptest::collection::vec(frame_masks, 1..3);
        (Just(meta), objects).prop_map(move |(meta, objects)| {
            let seqs = objects
                .into_iter()
                .enumerate()
                .map(|(i, frames)| {
                    let mut seq = MaskSequence::new("m", i as u32 + 1, w, h);
                    for (f, px) in frames {
                        seq.insert(f, &BinaryMask::from_pixels(w, h, px).unwrap())
                            .unwrap();
                    }
                    seq
                })
                .collect();
            (meta, seqs)
        })
    })
}

pub fn config_strategy() -> impl Strategy<Value = PipelineConfig> {
    (
        (1u32..64, 0.0f64..=1.0),
        (
            1u32..100,
            proptest::collection::vec(0u32..500, 1..6),
            1u32..10,
            0.001f64..0.999,
            0.001f64..10.0,
            0.0f64..100.0,
            0.0f64..=1.0,
        ),
        (1u32..100, 0.001f64..=1.0, 0u32..100, 0u32..200, 1u32..20),
        (
            0.0f64..1.0,
            0.0f64..=1.0,
            0.001f64..10.0,
            1u32..50,
            proptest::option::of(0.0f64..1.0),
        ),
    )
        .prop_map(|(m, d, k, e)| {
            let mut c = PipelineConfig::default();
            (c.merge.cell_size, c.merge.min_run_fraction) = m;
            let (stride, sizes, gap, s_max, eps, mwf, mvf) = d;
            c.detector.stride = stride;
            c.detector.window_sizes = sizes.into_iter().map(|s| s + stride).collect();
            c.detector.frame_gap = gap;
            c.detector.s_max = s_max;
            c.detector.epsilon = eps;
            c.detector.min_window_features = mwf;
            c.detector.min_visible_fraction = mvf;
            (
                c.masks.k,
                c.masks.refine_density_threshold,
                c.masks.dilation_radius,
                c.masks.search_margin,
                c.masks.max_empty_frames,
            ) = k;
            (
                c.metrics.tau,
                c.metrics.delta_r_max,
                c.metrics.l_max,
                c.metrics.runs,
                c.metrics.assoc_tolerance,
            ) = e;
            c
        })
}

pub fn flagged_strategy() -> impl Strategy<Value = Vec<WindowScore>> {
    let one = (
        0u32..1000,
        0.0f64..1000.0,
        0.0f64..1000.0,
        1.0f64..400.0,
        1.0f64..400.0,
        0.0f64..1.0,
    )
        .prop_map(|(frame, x, y, w, h, s)| {
            let bbox = BBox::new(frame, x, y, x + w, y + h).unwrap();
            WindowScore {
                frame,
                bbox,
                warped: bbox,
                score: s,
                counts: WindowCounts::default(),
            }
        });
    proptest::collection::vec(one, 0..40)
}

pub fn landmarks_strategy() -> impl Strategy<Value = BTreeMap<u64, Point3<f64>>> {
    proptest::collection::btree_map(
        any::<u64>(),
        proptest::array::uniform3(-1e6f64..1e6).prop_map(Point3::from),
        0..80,
    )
}

fn fail(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

pub fn rle_round_trip(mask: &BinaryMask) -> Result<(), TestCaseError> {
    let rle = mask.encode();
    prop_assert_eq!(rle.foreground(), mask.count() as u64);
    let back = rle.decode(mask.width(), mask.height()).map_err(fail)?;
    prop_assert_eq!(&back, mask);
    Ok(())
}

pub fn meta_round_trip(meta: &SequenceMeta) -> Result<(), TestCaseError> {
    let text = format_meta(meta);
    let back = parse_meta(&text, Path::new("meta.txt")).map_err(fail)?;
    prop_assert_eq!(&back, meta);
    Ok(())
}

pub fn trajectory_round_trip(traj: &Trajectory) -> Result<(), TestCaseError> {
    let text = format_trajectory(traj);
    let back = parse_trajectory(&text, Path::new("traj.txt")).map_err(fail)?;
    prop_assert_eq!(&back.poses, &traj.poses);
    Ok(())
}

pub fn features_round_trip(
    meta: &SequenceMeta,
    recs: &[FeatureRecord],
) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("f.jsonl");
    write_feature_records(&path, recs).map_err(fail)?;
    let back: Vec<FeatureRecord> = FeatureReader::open(&path, meta)
        .map_err(fail)?
        .collect::<dynaseg::Result<_>>()
        .map_err(fail)?;
    prop_assert_eq!(back.as_slice(), recs);
    Ok(())
}

pub fn masks_round_trip(meta: &SequenceMeta, seqs: &[MaskSequence]) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("m.jsonl");
    write_masks(&path, seqs).map_err(fail)?;
    let back = read_masks(&path, meta).map_err(fail)?;
    let nonempty: Vec<&MaskSequence> = seqs.iter().filter(|s| !s.is_empty()).collect();
    prop_assert_eq!(back.len(), nonempty.len());
    for (b, s) in back.iter().zip(nonempty) {
        prop_assert_eq!(b, s);
    }
    Ok(())
}

pub fn config_round_trip(cfg: &PipelineConfig) -> Result<(), TestCaseError> {
    let text = cfg.to_text();
    let back = PipelineConfig::parse(&text, Path::new("c.conf")).map_err(fail)?;
    prop_assert_eq!(&back, cfg);
    Ok(())
}

pub fn merged_map_round_trip(
    meta: &SequenceMeta,
    recs: &[FeatureRecord],
) -> Result<(), TestCaseError> {
    let mut runs: Vec<Vec<FeatureRecord>> = vec![Vec::new(); 3];
    for r in recs {
        runs[r.run as usize % 3].push(*r);
    }
    let cfg = MergeConfig {
        cell_size: 8,
        min_run_fraction: 0.0,
    };
    let map = merge_runs(&runs, meta, &cfg).map_err(fail)?;
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("map.jsonl");
    map.write_jsonl(&path).map_err(fail)?;
    let back = MergedFeatureMap::read_jsonl(&path, meta).map_err(fail)?;
    prop_assert_eq!(back, map);
    Ok(())
}

pub fn flagged_round_trip(flagged: &[WindowScore]) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("w.jsonl");
    write_flagged(&path, flagged).map_err(fail)?;
    let back = read_flagged(&path).map_err(fail)?;
    prop_assert_eq!(back.as_slice(), flagged);
    Ok(())
}

pub fn landmarks_round_trip(lm: &BTreeMap<u64, Point3<f64>>) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("l.jsonl");
    write_landmarks(&path, lm).map_err(fail)?;
    let back = read_landmarks(&path).map_err(fail)?;
    prop_assert_eq!(&back, lm);
    Ok(())
}

fn check<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Option<(String, String)> {
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .err()
        .map(|e| (name.to_string(), e.to_string()))
}

/// Runs every round-trip check on `CASES` generated inputs each, returning
/// the failing formats with their minimal counterexample.
pub fn run_all_round_trips() -> Vec<(String, String)> {
    [
        check("rle", mask_strategy(), |m| rle_round_trip(&m)),
        check("meta", meta_strategy(), |m| meta_round_trip(&m)),
        check("trajectory", trajectory_strategy(), |t| {
            trajectory_round_trip(&t)
        }),
        check("features", records_strategy(), |(m, r)| {
            features_round_trip(&m, &r)
        }),
        check("masks", mask_sequences_strategy(), |(m, s)| {
            masks_round_trip(&m, &s)
        }),
        check("config", config_strategy(), |c| config_round_trip(&c)),
        check("merged map", records_strategy(), |(m, r)| {
            merged_map_round_trip(&m, &r)
        }),
        check("flagged", flagged_strategy(), |f| flagged_round_trip(&f)),
        check("landmarks", landmarks_strategy(), |l| {
            landmarks_round_trip(&l)
        }),
    ]
    .into_iter()
    .flatten()
    .collect()
}

/// Number of formats covered by [`run_all_round_trips`].
pub const ROUND_TRIP_FORMATS: usize = 9;
