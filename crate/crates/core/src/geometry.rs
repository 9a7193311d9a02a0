//! Rotation-only motion compensation and similarity alignment.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::types::{BBox, CameraIntrinsics, Trajectory};

/// Relative camera rotation taking bearing vectors of one frame into another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationDelta(Matrix3<f64>);

impl RotationDelta {
    /// Wraps a matrix after checking orthonormality and orientation.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::validation(
                "rotation",
                format!("orthonormality error {ortho:e}, det {det}"),
            ));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }
}

/// Relative rotation between two frames of a trajectory.
///
/// With R(f) the world-to-camera rotation of frame f, returns
/// `R(to) * R(from)^T`, which maps a bearing observed in `from` into the
/// camera frame of `to`. Poses are associated to frames by nearest
/// timestamp within half a frame period.
pub fn rotation_between(traj: &Trajectory, from: u32, to: u32, fps: f64) -> Result<RotationDelta> {
    let p = traj
        .pose_for_frame(from, fps)
        .ok_or(Error::TrajectoryGap { frame: from })?;
    let q = traj
        .pose_for_frame(to, fps)
        .ok_or(Error::TrajectoryGap { frame: to })?;
    let r_from = p.world_to_camera_rotation();
    let r_to = q.world_to_camera_rotation();
    let m = r_to * r_from.transpose();
    // re-orthonormalize accumulated float error from quaternion conversion
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    RotationDelta::new(u * vt)
}

/// Planar projective transform in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.determinant().abs() < 1e-12 {
            return Err(Error::validation("homography", "singular matrix"));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Maps a pixel; `None` when it lands on or behind the line at infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let v = self.0 * Vector3::new(x, y, 1.0);
        (v.z > 1e-12).then(|| (v.x / v.z, v.y / v.z))
    }
}

/// `H = K * dR * K^-1`: the image motion induced by a pure camera rotation.
/// Camera translation is ignored.
pub fn compensation_homography(k: &CameraIntrinsics, dr: &RotationDelta) -> Homography {
    Homography(k.matrix() * dr.matrix() * k.inverse_matrix())
}

/// A box mapped through a homography and clipped to the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedBox {
    pub bbox: BBox,
    /// Share of the unclipped warped hull that lies inside the image.
    pub visible_fraction: f64,
}

/// Maps the four corners of `bbox`, takes their axis-aligned hull and clips
/// it to the image. `None` when the hull misses the image entirely or a
/// corner maps to infinity.
pub fn warp_box(h: &Homography, bbox: &BBox, width: u32, height: u32) -> Option<WarpedBox> {
    let corners = [
        (bbox.x0, bbox.y0),
        (bbox.x1, bbox.y0),
        (bbox.x0, bbox.y1),
        (bbox.x1, bbox.y1),
    ];
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (x, y) in corners {
        let (u, v) = h.apply(x, y)?;
        x0 = x0.min(u);
        y0 = y0.min(v);
        x1 = x1.max(u);
        y1 = y1.max(v);
    }
    let hull = BBox {
        frame: bbox.frame,
        x0,
        y0,
        x1,
        y1,
    };
    if hull.area() <= 0.0 {
        return None;
    }
    let clipped = hull.clip(width, height)?;
    Some(WarpedBox {
        visible_fraction: clipped.area() / hull.area(),
        bbox: clipped,
    })
}

/// Similarity transform `x -> s * R * x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }
}

/// Closed-form least-squares similarity aligning `est` onto `reference`
/// (Umeyama), minimizing `sum |ref_i - (s R est_i + t)|^2`.
pub fn umeyama_sim3(est: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<Sim3> {
    if est.len() != reference.len() {
        return Err(Error::validation(
            "alignment",
            format!("{} vs {} points", est.len(), reference.len()),
        ));
    }
    if est.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 point pairs, got {}",
            est.len()
        )));
    }
    let n = est.len() as f64;
    let mu_e = est.iter().sum::<Vector3<f64>>() / n;
    let mu_r = reference.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    let mut var_r = 0.0;
    for (e, r) in est.iter().zip(reference) {
        let de = e - mu_e;
        let dr = r - mu_r;
        cov += dr * de.transpose();
        var_e += de.norm_squared();
        var_r += dr.norm_squared();
    }
    cov /= n;
    var_e /= n;
    var_r /= n;
    if var_e <= f64::EPSILON || var_r <= f64::EPSILON {
        return Err(Error::Degenerate("point set has no spread".into()));
    }

    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    // sort-independent rank check: the two largest singular values must be
    // significant relative to the point spread
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    let tol = 1e-10 * (var_e * var_r).sqrt();
    if sorted[1] <= tol {
        return Err(Error::Degenerate(
            "cross-covariance has rank < 2 (collinear points)".into(),
        ));
    }

    let mut s = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        // flip the axis of the smallest singular value
        let min_idx = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap();
        s[(min_idx, min_idx)] = -1.0;
    }
    let rotation = u * s * vt;
    let trace_ds = (0..3).map(|i| sv[i] * s[(i, i)]).sum::<f64>();
    let scale = trace_ds / var_e;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Degenerate(format!("non-positive scale {scale}")));
    }
    let translation = mu_r - scale * rotation * mu_e;
    Ok(Sim3 {
        scale,
        rotation,
        translation,
    })
}

/// Root-mean-square residual of `reference - sim(est)`.
pub fn alignment_rmse(sim: &Sim3, est: &[Vector3<f64>], reference: &[Vector3<f64>]) -> f64 {
    let sum: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (r - sim.apply(e)).norm_squared())
        .sum();
    (sum / est.len().max(1) as f64).sqrt()
}
