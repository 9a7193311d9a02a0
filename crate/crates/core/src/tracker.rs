//! Reference dominant-motion estimator: per-frame camera pose from 2D-3D
//! correspondences by RANSAC over a known landmark map.
//!
//! The estimator follows whichever rigid motion explains the most features,
//! so a moving object that outnumbers the background drags the estimate with
//! it.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{
    Isometry3, Matrix6, Point3, Translation3, UnitQuaternion, Vector2, Vector3, Vector6,
};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CameraIntrinsics, FeatureRecord, Pose, SequenceMeta, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Inlier reprojection gate in pixels.
    pub gate: f64,
    /// Frames with fewer inliers are lost.
    pub min_inliers: usize,
    pub iterations: usize,
    pub sample_size: usize,
    pub seed: u64,
    /// A track unseen for more frames than this is treated as a new point.
    pub reacquire_gap: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate: 2.0,
            min_inliers: 20,
            iterations: 64,
            sample_size: 6,
            seed: 0,
            reacquire_gap: 10,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate.is_finite() && self.gate > 0.0) {
            return Err(Error::Config(format!(
                "gate must be > 0, got {}",
                self.gate
            )));
        }
        if self.sample_size < 3 {
            return Err(Error::Config(format!(
                "sample_size must be >= 3, got {}",
                self.sample_size
            )));
        }
        if self.min_inliers < self.sample_size {
            return Err(Error::Config(format!(
                "min_inliers {} below sample_size {}",
                self.min_inliers, self.sample_size
            )));
        }
        Ok(())
    }
}

/// One 2D-3D correspondence.
#[derive(Debug, Clone, Copy)]
struct Match {
    pixel: Vector2<f64>,
    point: Vector3<f64>,
    track: u64,
}

/// World-to-camera transform `T`; residuals are `project(T * X) - x`.
fn residual(k: &CameraIntrinsics, t: &Isometry3<f64>, m: &Match) -> Option<Vector2<f64>> {
    let p = t.transform_point(&Point3::from(m.point)).coords;
    k.project(&p)
        .map(|(u, v)| Vector2::new(u - m.pixel.x, v - m.pixel.y))
}

fn inliers(k: &CameraIntrinsics, t: &Isometry3<f64>, matches: &[Match], gate: f64) -> Vec<usize> {
    let g2 = gate * gate;
    (0..matches.len())
        .filter(|&i| residual(k, t, &matches[i]).is_some_and(|r| r.norm_squared() <= g2))
        .collect()
}

/// Damped Gauss-Newton on the left-multiplied se(3) increment.
fn refine(
    k: &CameraIntrinsics,
    mut t: Isometry3<f64>,
    matches: &[Match],
    subset: &[usize],
    steps: usize,
) -> Isometry3<f64> {
    for _ in 0..steps {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for &i in subset {
            let m = &matches[i];
            let p = t.transform_point(&Point3::from(m.point)).coords;
            if p.z <= 1e-6 {
                continue;
            }
            let r = Vector2::new(
                k.fx * p.x / p.z + k.cx - m.pixel.x,
                k.fy * p.y / p.z + k.cy - m.pixel.y,
            );
            let iz = 1.0 / p.z;
            let jp = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * p.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * p.y * iz * iz,
            );
            // d(p)/d(omega, v) = [-[p]x | I]
            let skew = p.cross_matrix();
            let mut jd = nalgebra::Matrix3x6::<f64>::zeros();
            jd.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew));
            jd.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&nalgebra::Matrix3::identity());
            let j = jp * jd;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        for d in 0..6 {
            h[(d, d)] *= 1.0 + 1e-6;
            h[(d, d)] += 1e-9;
        }
        let Some(delta) = h.cholesky().map(|c| -c.solve(&g)) else {
            break;
        };
        if !delta.iter().all(|v| v.is_finite()) {
            break;
        }
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let step = Isometry3::from_parts(
            Translation3::from(v),
            UnitQuaternion::from_scaled_axis(omega),
        );
        t = step * t;
        if delta.norm() < 1e-10 {
            break;
        }
    }
    t
}

/// Pose of one frame, `None` when fewer than `min_inliers` agree.
fn estimate_frame(
    k: &CameraIntrinsics,
    prior: &Isometry3<f64>,
    matches: &[Match],
    cfg: &TrackerConfig,
    rng: &mut ChaCha8Rng,
) -> Option<(Isometry3<f64>, Vec<usize>)> {
    if matches.len() < cfg.min_inliers {
        return None;
    }
    let mut best = inliers(k, prior, matches, cfg.gate);
    let mut best_pose = *prior;
    for _ in 0..cfg.iterations {
        let subset = sample(rng, matches.len(), cfg.sample_size).into_vec();
        let hypothesis = refine(k, *prior, matches, &subset, 8);
        let support = inliers(k, &hypothesis, matches, cfg.gate);
        if support.len() > best.len() {
            best = support;
            best_pose = hypothesis;
        }
    }
    if best.len() < cfg.sample_size {
        return None;
    }
    let pose = refine(k, best_pose, matches, &best, 10);
    let support = inliers(k, &pose, matches, cfg.gate);
    (support.len() >= cfg.min_inliers).then_some((pose, support))
}

/// Estimate of one frame.
#[derive(Debug, Clone)]
pub struct FrameEstimate {
    pub frame: u32,
    /// Camera-to-world pose, `None` when the frame is lost.
    pub pose: Option<Pose>,
    /// Track ids of the features consistent with the pose.
    pub inliers: Vec<u64>,
}

/// Estimates every frame of `meta` from the records of a single run.
/// `initial` is the camera-to-world pose used as the first prior. Lost frames
/// keep the previous prior.
///
/// A track that reappears after more than `reacquire_gap` frames, or first
/// appears that late, does not vote on its frame's pose; it is re-anchored on
/// the estimated ray at its previous depth instead.
pub fn track_frames(
    records: &[FeatureRecord],
    landmarks: &BTreeMap<u64, Point3<f64>>,
    meta: &SequenceMeta,
    initial: &Pose,
    cfg: &TrackerConfig,
) -> Result<Vec<FrameEstimate>> {
    cfg.validate()?;
    let mut by_frame: Vec<Vec<(Vector2<f64>, u64)>> = vec![Vec::new(); meta.frame_count as usize];
    for r in records {
        let Some(track) = r.track.filter(|id| landmarks.contains_key(id)) else {
            continue;
        };
        let Some(slot) = by_frame.get_mut(r.frame as usize) else {
            return Err(Error::FrameOutOfRange {
                frame: r.frame,
                frames: meta.frame_count,
            });
        };
        slot.push((Vector2::new(r.x, r.y), track));
    }
    let k = &meta.intrinsics;
    let k_inv = k.inverse_matrix();
    let mut points: HashMap<u64, Vector3<f64>> =
        landmarks.iter().map(|(&id, p)| (id, p.coords)).collect();
    let mut last_seen: HashMap<u64, u32> = HashMap::new();
    let mut prior = initial.to_isometry().inverse();
    let mut out = Vec::with_capacity(by_frame.len());
    for (frame, observed) in by_frame.iter().enumerate() {
        let frame = frame as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let (matches, reacquired): (Vec<Match>, Vec<Match>) = observed
            .iter()
            .map(|&(pixel, track)| Match {
                pixel,
                point: points[&track],
                track,
            })
            .partition(|m| {
                let seen = last_seen.get(&m.track).copied().unwrap_or(0);
                frame - seen <= cfg.reacquire_gap
            });
        let estimate = match estimate_frame(k, &prior, &matches, cfg, &mut rng) {
            Some((pose, support)) => {
                prior = pose;
                let to_world = pose.inverse();
                for m in &reacquired {
                    let depth = pose.transform_point(&Point3::from(m.point)).z;
                    if depth > 1e-6 {
                        let ray = k_inv * Vector3::new(m.pixel.x, m.pixel.y, 1.0);
                        points.insert(
                            m.track,
                            to_world.transform_point(&Point3::from(ray * depth)).coords,
                        );
                    }
                }
                for &(_, track) in observed {
                    last_seen.insert(track, frame);
                }
                FrameEstimate {
                    frame,
                    pose: Some(Pose::from_isometry(meta.frame_time(frame), &to_world)),
                    inliers: support.iter().map(|&i| matches[i].track).collect(),
                }
            }
            None => FrameEstimate {
                frame,
                pose: None,
                inliers: Vec::new(),
            },
        };
        out.push(estimate);
    }
    Ok(out)
}

/// Camera trajectory over the tracked frames of `meta`; see [`track_frames`].
pub fn track_camera(
    records: &[FeatureRecord],
    landmarks: &BTreeMap<u64, Point3<f64>>,
    meta: &SequenceMeta,
    initial: &Pose,
    cfg: &TrackerConfig,
) -> Result<Trajectory> {
    let poses: Vec<Pose> = track_frames(records, landmarks, meta, initial, cfg)?
        .into_iter()
        .filter_map(|e| e.pose)
        .collect();
    let tracked = poses.len() as u32;
    Trajectory::with_counts(poses, tracked, meta.frame_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FeatureStatus;

    fn meta(frames: u32) -> SequenceMeta {
        SequenceMeta {
            sequence_id: "t".into(),
            image_width: 640,
            image_height: 480,
            fps: 30.0,
            frame_count: frames,
            intrinsics: CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap(),
            scene: None,
        }
    }

    fn grid_points(offset: u64, z: f64, n: usize) -> BTreeMap<u64, Point3<f64>> {
        (0..n)
            .map(|i| {
                let (a, b) = ((i % 10) as f64, (i / 10) as f64);
                (
                    offset + i as u64,
                    Point3::new(
                        -1.0 + 0.2 * a,
                        -0.8 + 0.2 * b,
                        z + 0.4 * ((i * 7) % 11) as f64,
                    ),
                )
            })
            .collect()
    }

    fn observe(
        m: &SequenceMeta,
        cam: &[Isometry3<f64>],
        lm: &BTreeMap<u64, Point3<f64>>,
        shift: impl Fn(u32, u64) -> Vector3<f64>,
    ) -> Vec<FeatureRecord> {
        let mut out = Vec::new();
        for (f, c) in cam.iter().enumerate() {
            for (&id, p) in lm {
                let q = c.inverse_transform_point(&(p + shift(f as u32, id))).coords;
                if let Some((x, y)) = m.intrinsics.project(&q) {
                    if x >= 0.0 && y >= 0.0 && x < 640.0 && y < 480.0 {
                        out.push(
                            FeatureRecord::new(f as u32, x, y, FeatureStatus::Inlier, 0)
                                .with_track(id),
                        );
                    }
                }
            }
        }
        out
    }

    fn path(frames: u32) -> Vec<Isometry3<f64>> {
        (0..frames)
            .map(|f| {
                let t = f as f64 * 0.01;
                Isometry3::from_parts(
                    Translation3::new(t, 0.5 * t, 0.2 * t),
                    UnitQuaternion::from_euler_angles(0.0, 0.3 * t, 0.0),
                )
            })
            .collect()
    }

    #[test]
    fn clean_correspondences_recover_the_path() {
        let m = meta(20);
        let cam = path(20);
        let lm = grid_points(0, 4.0, 80);
        let recs = observe(&m, &cam, &lm, |_, _| Vector3::zeros());
        let traj = track_camera(
            &recs,
            &lm,
            &m,
            &Pose::identity(0.0),
            &TrackerConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.tracked_frames, 20);
        for (p, c) in traj.poses.iter().zip(&cam) {
            assert!((p.translation - c.translation.vector).norm() < 1e-6);
            assert!(p.rotation.angle_to(&c.rotation) < 1e-6);
        }
    }

    #[test]
    fn majority_motion_wins() {
        let m = meta(15);
        let cam = path(15);
        let mut lm = grid_points(0, 4.0, 40);
        lm.extend(grid_points(1000, 3.0, 80));
        let d = |f: u32| Vector3::new(if f > 0 { 0.3 } else { 0.0 }, 0.0, 0.0);
        let recs = observe(&m, &cam, &lm, |f, id| {
            if id >= 1000 {
                d(f)
            } else {
                Vector3::zeros()
            }
        });
        let traj = track_camera(
            &recs,
            &lm,
            &m,
            &Pose::identity(0.0),
            &TrackerConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.tracked_frames, 15);
        for (f, (p, c)) in traj.poses.iter().zip(&cam).enumerate() {
            let want = c.translation.vector - d(f as u32);
            assert!((p.translation - want).norm() < 1e-6, "frame {f}");
        }
        let bg: BTreeMap<_, _> = lm
            .iter()
            .filter(|(&id, _)| id < 1000)
            .map(|(a, b)| (*a, *b))
            .collect();
        let kept: Vec<_> = recs
            .iter()
            .filter(|r| r.track.unwrap() < 1000)
            .cloned()
            .collect();
        let traj = track_camera(
            &kept,
            &bg,
            &m,
            &Pose::identity(0.0),
            &TrackerConfig::default(),
        )
        .unwrap();
        for (p, c) in traj.poses.iter().zip(&cam) {
            assert!((p.translation - c.translation.vector).norm() < 1e-6);
        }
    }

    #[test]
    fn displaced_tracks_are_reacquired_not_followed() {
        let m = meta(40);
        let cam = path(40);
        let mut lm = grid_points(0, 4.0, 40);
        lm.extend(grid_points(1000, 3.0, 80));
        // The majority group vanishes for 20 frames and comes back moved.
        let recs: Vec<FeatureRecord> = observe(&m, &cam, &lm, |f, id| {
            if id >= 1000 && f >= 25 {
                Vector3::new(0.3, 0.0, 0.0)
            } else {
                Vector3::zeros()
            }
        })
        .into_iter()
        .filter(|r| !(r.track.unwrap() >= 1000 && (5..25).contains(&r.frame)))
        .collect();
        let run = |gap| {
            let cfg = TrackerConfig {
                reacquire_gap: gap,
                ..TrackerConfig::default()
            };
            track_camera(&recs, &lm, &m, &Pose::identity(0.0), &cfg).unwrap()
        };
        let traj = run(10);
        assert_eq!(traj.tracked_frames, 40);
        for (f, (p, c)) in traj.poses.iter().zip(&cam).enumerate() {
            // re-anchored depths are approximate, so a small drift remains
            assert!(
                (p.translation - c.translation.vector).norm() < 5e-3,
                "frame {f}"
            );
        }
        let stale = run(u32::MAX);
        let err = (stale.poses[30].translation - cam[30].translation.vector).norm();
        assert!(err > 0.1, "stale map error {err}");
    }

    #[test]
    fn too_few_matches_lose_the_frame() {
        let m = meta(3);
        let cam = path(3);
        let lm = grid_points(0, 4.0, 10);
        let recs = observe(&m, &cam, &lm, |_, _| Vector3::zeros());
        let traj = track_camera(
            &recs,
            &lm,
            &m,
            &Pose::identity(0.0),
            &TrackerConfig::default(),
        )
        .unwrap();
        assert_eq!((traj.tracked_frames, traj.total_frames), (0, 3));
        assert!(traj.poses.is_empty());
    }
}
