use std::f64::consts::TAU;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ObjectMotion, ScenarioConfig};
use crate::types::CameraIntrinsics;

/// Room extents (m): walls, ceiling (-y) and floor (+y), back and front.
const ROOM_MIN: [f64; 3] = [-4.0, -2.0, -3.0];
const ROOM_MAX: [f64; 3] = [4.0, 1.5, 7.0];
pub(crate) const MIN_DEPTH: f64 = 0.05;

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn yaw_pitch(yaw: f64, pitch: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw)
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), pitch)
}

/// Motion progress in seconds at `frame`, frozen outside the motion interval.
pub(crate) fn motion_time(cfg: &ScenarioConfig, frame: u32) -> f64 {
    let f = frame.clamp(cfg.object_motion_start, cfg.object_motion_stop);
    (f - cfg.object_motion_start) as f64 / cfg.fps
}

/// Camera-to-world pose of every frame: a smooth sum of sinusoids starting
/// at the identity, plus an optional drift while the object moves.
pub(crate) fn camera_path(cfg: &ScenarioConfig) -> Vec<Isometry3<f64>> {
    if cfg.static_camera {
        return vec![Isometry3::identity(); cfg.frame_count as usize];
    }
    let mut r = rng(cfg.seed, 2);
    let phase: Vec<f64> = (0..5).map(|_| r.random_range(0.0..TAU)).collect();
    let wave =
        |amp: f64, period: f64, p: f64, t: f64| amp * ((TAU * t / period + p).sin() - p.sin());
    (0..cfg.frame_count)
        .map(|f| {
            let t = f as f64 / cfg.fps;
            let mut pos = Vector3::new(
                wave(0.15, 11.0, phase[0], t),
                wave(0.03, 4.7, phase[1], t),
                wave(0.10, 13.0, phase[2], t),
            );
            let mut yaw = wave(3f64.to_radians(), 9.0, phase[3], t);
            let pitch = wave(1.5f64.to_radians(), 7.0, phase[4], t);
            if let Some((v, w)) = cfg.camera_drift {
                let tau = motion_time(cfg, f);
                pos += v * tau;
                yaw += w * tau;
            }
            Isometry3::from_parts(Translation3::from(pos), yaw_pitch(yaw, pitch))
        })
        .collect()
}

/// Object-to-world pose of every frame.
pub(crate) fn object_path(cfg: &ScenarioConfig, camera: &[Isometry3<f64>]) -> Vec<Isometry3<f64>> {
    let start = cfg.object_motion_start as usize;
    let initial = match cfg.object_motion {
        ObjectMotion::Linear { .. } => camera[0] * Translation3::from(cfg.object_center),
        ObjectMotion::CameraLocked => camera[start] * Translation3::from(cfg.object_center),
    };
    (0..cfg.frame_count)
        .map(|f| match cfg.object_motion {
            ObjectMotion::Linear { velocity, yaw_rate } => {
                let tau = motion_time(cfg, f);
                Isometry3::from_parts(
                    Translation3::from(initial.translation.vector + velocity * tau),
                    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw_rate * tau)
                        * initial.rotation,
                )
            }
            ObjectMotion::CameraLocked => {
                let g = f.clamp(cfg.object_motion_start, cfg.object_motion_stop) as usize;
                camera[g] * camera[start].inverse() * initial
            }
        })
        .collect()
}

pub(crate) fn object_moves(cfg: &ScenarioConfig) -> bool {
    match cfg.object_motion {
        ObjectMotion::Linear { velocity, yaw_rate } => velocity.norm() > 0.0 || yaw_rate != 0.0,
        ObjectMotion::CameraLocked => true,
    }
}

/// First intersection of a ray from inside the room with its boundary.
fn hit_room(origin: &Vector3<f64>, dir: &Vector3<f64>) -> Vector3<f64> {
    let mut t = f64::INFINITY;
    for i in 0..3 {
        if dir[i] > 1e-12 {
            t = t.min((ROOM_MAX[i] - origin[i]) / dir[i]);
        } else if dir[i] < -1e-12 {
            t = t.min((ROOM_MIN[i] - origin[i]) / dir[i]);
        }
    }
    origin + dir * t
}

pub(crate) fn project(
    k: &CameraIntrinsics,
    cam_inv: &Isometry3<f64>,
    world: &Point3<f64>,
    width: u32,
    height: u32,
) -> Option<(f64, f64)> {
    let pc = cam_inv * world;
    if pc.z <= MIN_DEPTH {
        return None;
    }
    let (u, v) = k.project(&pc.coords)?;
    (u >= 0.0 && v >= 0.0 && u < width as f64 && v < height as f64).then_some((u, v))
}

/// Background points on the room walls, seen from random frames through
/// random pixels, so their image density is roughly uniform. The count is
/// scaled until about `n_features` are visible per frame.
pub(crate) fn background_points(
    cfg: &ScenarioConfig,
    camera: &[Isometry3<f64>],
) -> Vec<Point3<f64>> {
    let mut r = rng(cfg.seed, 3 + ((cfg.n_features as u64) << 8));
    let k = cfg.intrinsics;
    let mut sample = |n: usize, out: &mut Vec<Point3<f64>>| {
        for _ in 0..n {
            let f = r.random_range(0..camera.len());
            let u = r.random_range(0.0..cfg.image_width as f64);
            let v = r.random_range(0.0..cfg.image_height as f64);
            let dir = camera[f].rotation * Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
            out.push(Point3::from(hit_room(&camera[f].translation.vector, &dir)));
        }
    };
    let target = cfg.n_features as usize;
    let mut pts = Vec::with_capacity(target * 2);
    sample(target, &mut pts);
    let probes: Vec<usize> = (0..12).map(|i| i * (camera.len() - 1) / 11).collect();
    let seen: usize = probes
        .iter()
        .map(|&f| {
            let inv = camera[f].inverse();
            pts.iter()
                .filter(|p| project(&k, &inv, p, cfg.image_width, cfg.image_height).is_some())
                .count()
        })
        .sum();
    let mean = seen as f64 / probes.len() as f64;
    if mean > 0.0 && mean < target as f64 {
        let extra = (target as f64 * (target as f64 / mean - 1.0)).round() as usize;
        sample(extra, &mut pts);
    }
    pts
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SurfacePoint {
    pub local: Point3<f64>,
    pub normal: Vector3<f64>,
}

/// Points uniformly spread over the cuboid surface.
pub(crate) fn object_points(cfg: &ScenarioConfig) -> Vec<SurfacePoint> {
    let mut r = rng(cfg.seed, 4);
    let h = cfg.object_size / 2.0;
    let areas = [h.y * h.z, h.x * h.z, h.x * h.y];
    let total: f64 = areas.iter().sum::<f64>();
    (0..cfg.n_object_points)
        .map(|_| {
            let pick = r.random_range(0.0..total);
            let axis = if pick < areas[0] {
                0
            } else if pick < areas[0] + areas[1] {
                1
            } else {
                2
            };
            let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut p = Vector3::zeros();
            for i in 0..3 {
                p[i] = if i == axis {
                    sign * h[i]
                } else {
                    r.random_range(-h[i]..h[i])
                };
            }
            let mut normal = Vector3::zeros();
            normal[axis] = sign;
            SurfacePoint {
                local: Point3::from(p),
                normal,
            }
        })
        .collect()
}

pub(crate) fn cuboid_corners(size: &Vector3<f64>) -> [Point3<f64>; 8] {
    let h = size / 2.0;
    let mut out = [Point3::origin(); 8];
    for (i, c) in out.iter_mut().enumerate() {
        *c = Point3::new(
            if i & 1 == 0 { -h.x } else { h.x },
            if i & 2 == 0 { -h.y } else { h.y },
            if i & 4 == 0 { -h.z } else { h.z },
        );
    }
    out
}

/// True when the segment from `a` to `b` (object-local coordinates) passes
/// through the box of half extents `h` before reaching `b`.
pub(crate) fn segment_hits_box(a: &Point3<f64>, b: &Point3<f64>, h: &Vector3<f64>) -> bool {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64 - 1e-9);
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if a[i] < -h[i] || a[i] > h[i] {
                return false;
            }
            continue;
        }
        let (mut lo, mut hi) = ((-h[i] - a[i]) / d[i], (h[i] - a[i]) / d[i]);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Convex hull (counter-clockwise in image coordinates) by monotone chain.
pub(crate) fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Horizontal extent of a convex polygon at height `y`.
pub(crate) fn polygon_span(poly: &[(f64, f64)], y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a.1 <= y && y <= b.1) || (b.1 <= y && y <= a.1) {
            let x = if (b.1 - a.1).abs() < 1e-12 {
                lo = lo.min(a.0.min(b.0));
                hi = hi.max(a.0.max(b.0));
                continue;
            } else {
                a.0 + (y - a.1) * (b.0 - a.0) / (b.1 - a.1)
            };
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    (lo <= hi).then_some((lo, hi))
}
