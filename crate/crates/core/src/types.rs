//! Domain types shared by every stage of the pipeline.

use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether the SLAM back end accepted (inlier) or rejected (outlier) a 2D-3D match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureStatus {
    #[serde(rename = "in")]
    Inlier,
    #[serde(rename = "out")]
    Outlier,
}

/// One keypoint observation emitted by a SLAM run.
///
/// `track` is an optional landmark identifier. SLAM front ends that expose
/// map point ids fill it in; it is only needed by the reference tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub frame: u32,
    pub x: f64,
    pub y: f64,
    pub status: FeatureStatus,
    pub run: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<u64>,
}

impl FeatureRecord {
    pub fn new(frame: u32, x: f64, y: f64, status: FeatureStatus, run: u32) -> Self {
        Self {
            frame,
            x,
            y,
            status,
            run,
            track: None,
        }
    }

    pub fn with_track(mut self, track: u64) -> Self {
        self.track = Some(track);
        self
    }

    /// Checks the record against the sequence resolution and length.
    pub fn validate(&self, meta: &SequenceMeta) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite()) {
            return Err(Error::validation(
                "feature record",
                format!(
                    "frame {} run {}: non-finite coordinate",
                    self.frame, self.run
                ),
            ));
        }
        if self.x < 0.0
            || self.y < 0.0
            || self.x >= meta.image_width as f64
            || self.y >= meta.image_height as f64
        {
            return Err(Error::validation(
                "feature record",
                format!(
                    "frame {} run {}: ({}, {}) outside {}x{} image",
                    self.frame, self.run, self.x, self.y, meta.image_width, meta.image_height
                ),
            ));
        }
        if self.frame >= meta.frame_count {
            return Err(Error::validation(
                "feature record",
                format!(
                    "frame {} beyond sequence length {}",
                    self.frame, meta.frame_count
                ),
            ));
        }
        Ok(())
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::validation(
                "intrinsics",
                format!("fx={} fy={} must be positive", self.fx, self.fy),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a point given in camera coordinates. `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 1e-9 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Recording parameters of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub sequence_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub fps: f64,
    pub frame_count: u32,
    pub intrinsics: CameraIntrinsics,
    /// Groups sequences that show the same scene. Masks learned on example
    /// sequences are applied to test sequences sharing this key.
    pub scene: Option<String>,
}

impl SequenceMeta {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_id.is_empty() || self.sequence_id.chars().any(char::is_whitespace) {
            return Err(Error::validation(
                "sequence meta",
                format!("bad sequence id {:?}", self.sequence_id),
            ));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::validation("sequence meta", "image size must be > 0"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::validation("sequence meta", "fps must be > 0"));
        }
        if self.frame_count == 0 {
            return Err(Error::validation(
                "sequence meta",
                "frame count must be > 0",
            ));
        }
        self.intrinsics.validate()
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn frame_time(&self, frame: u32) -> f64 {
        frame as f64 / self.fps
    }

    pub fn scene_key(&self) -> &str {
        self.scene.as_deref().unwrap_or(&self.sequence_id)
    }
}

/// A timestamped camera-to-world pose. The quaternion is stored unit-norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub timestamp: f64,
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(timestamp: f64, translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            timestamp,
            translation,
            rotation,
        }
    }

    pub fn identity(timestamp: f64) -> Self {
        Self::new(timestamp, Vector3::zeros(), UnitQuaternion::identity())
    }

    /// Builds a pose from quaternion components in x, y, z, w order.
    ///
    /// Components within 1e-3 of unit norm are renormalized; anything further
    /// off is rejected.
    pub fn from_xyzw(timestamp: f64, t: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
            return Err(Error::validation(
                "pose",
                format!("quaternion norm {norm} at t={timestamp} is not unit"),
            ));
        }
        let rotation = if (norm - 1.0).abs() > 1e-12 {
            UnitQuaternion::from_quaternion(quat)
        } else {
            UnitQuaternion::new_unchecked(quat)
        };
        Ok(Self::new(timestamp, Vector3::from(t), rotation))
    }

    pub fn from_isometry(timestamp: f64, iso: &Isometry3<f64>) -> Self {
        Self::new(timestamp, iso.translation.vector, iso.rotation)
    }

    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    /// Camera-to-world transform.
    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    /// World-to-camera rotation matrix.
    pub fn world_to_camera_rotation(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().matrix().transpose()
    }
}

/// Estimated or ground-truth camera trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub tracked_frames: u32,
    pub total_frames: u32,
}

impl Trajectory {
    /// A trajectory whose tracked/total counts both equal the pose count.
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        let n = poses.len() as u32;
        Self::with_counts(poses, n, n)
    }

    pub fn with_counts(poses: Vec<Pose>, tracked_frames: u32, total_frames: u32) -> Result<Self> {
        let traj = Self {
            poses,
            tracked_frames,
            total_frames,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.poses.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(Error::validation(
                    "trajectory",
                    format!(
                        "timestamps not strictly increasing ({} then {})",
                        w[0].timestamp, w[1].timestamp
                    ),
                ));
            }
        }
        if self.tracked_frames > self.total_frames {
            return Err(Error::validation(
                "trajectory",
                format!(
                    "tracked frames {} exceed total {}",
                    self.tracked_frames, self.total_frames
                ),
            ));
        }
        for p in &self.poses {
            if (p.rotation.quaternion().norm() - 1.0).abs() > 1e-6 {
                return Err(Error::validation("trajectory", "non-unit quaternion"));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    /// Nearest pose to `timestamp`, if one lies within `tolerance` seconds.
    pub fn nearest(&self, timestamp: f64, tolerance: f64) -> Option<&Pose> {
        if self.poses.is_empty() {
            return None;
        }
        let idx = self.poses.partition_point(|p| p.timestamp < timestamp);
        let mut best: Option<&Pose> = None;
        for i in [idx.wrapping_sub(1), idx] {
            if let Some(p) = self.poses.get(i) {
                let d = (p.timestamp - timestamp).abs();
                if d <= tolerance && best.is_none_or(|b| d < (b.timestamp - timestamp).abs()) {
                    best = Some(p);
                }
            }
        }
        best
    }

    /// Pose associated with a frame index: nearest timestamp within half a
    /// frame period.
    pub fn pose_for_frame(&self, frame: u32, fps: f64) -> Option<&Pose> {
        let period = 1.0 / fps;
        self.nearest(frame as f64 * period, 0.5 * period + 1e-9)
    }
}

/// Axis-aligned pixel box `[x0, x1) x [y0, y1)` on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub frame: u32,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(frame: u32, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = Self {
            frame,
            x0,
            y0,
            x1,
            y1,
        };
        if !(x0 < x1 && y0 < y1) || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::validation(
                "box",
                format!("[{x0}, {y0}, {x1}, {y1}] is empty or non-finite"),
            ));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// True when the two boxes share a region of positive area.
    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn hull(&self, other: &BBox) -> BBox {
        BBox {
            frame: self.frame,
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn expand(&self, margin: f64) -> BBox {
        BBox {
            frame: self.frame,
            x0: self.x0 - margin,
            y0: self.y0 - margin,
            x1: self.x1 + margin,
            y1: self.y1 + margin,
        }
    }

    /// Intersection with the image rectangle, `None` if nothing remains.
    pub fn clip(&self, width: u32, height: u32) -> Option<BBox> {
        let b = BBox {
            frame: self.frame,
            x0: self.x0.max(0.0),
            y0: self.y0.max(0.0),
            x1: self.x1.min(width as f64),
            y1: self.y1.min(height as f64),
        };
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_pose_respects_tolerance() {
        let poses = (0..5).map(|i| Pose::identity(i as f64 * 0.1)).collect();
        let traj = Trajectory::new(poses).unwrap();
        assert_eq!(traj.nearest(0.21, 0.05).unwrap().timestamp, 0.2);
        assert_eq!(traj.nearest(0.26, 0.05).unwrap().timestamp, 3.0 * 0.1);
        assert!(traj.nearest(0.75, 0.05).is_none());
        assert!(traj.pose_for_frame(3, 10.0).is_some());
        assert!(traj.pose_for_frame(9, 10.0).is_none());
    }

    #[test]
    fn quaternion_tolerance() {
        assert!(Pose::from_xyzw(0.0, [0.0; 3], [0.0, 0.0, 0.0, 1.0005]).is_ok());
        assert!(Pose::from_xyzw(0.0, [0.0; 3], [0.0, 0.0, 0.0, 1.01]).is_err());
        let p = Pose::from_xyzw(0.0, [0.0; 3], [0.0, 0.0, 0.0, 1.0005]).unwrap();
        assert!((p.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_rejects_bad_counts_and_order() {
        let poses = vec![Pose::identity(1.0), Pose::identity(0.5)];
        assert!(Trajectory::new(poses).is_err());
        assert!(Trajectory::with_counts(vec![Pose::identity(0.0)], 2, 1).is_err());
    }

    #[test]
    fn box_overlap_is_strict() {
        let a = BBox::new(0, 0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BBox::new(0, 10.0, 0.0, 20.0, 10.0).unwrap();
        assert!(!a.overlaps(&b));
        let c = BBox::new(0, 5.0, 5.0, 15.0, 15.0).unwrap();
        assert!(a.overlaps(&c));
        assert!((a.iou(&c) - 25.0 / 175.0).abs() < 1e-12);
        assert!(BBox::new(0, 1.0, 0.0, 1.0, 2.0).is_err());
    }
}
