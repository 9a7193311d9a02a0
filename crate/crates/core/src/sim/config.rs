use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CameraIntrinsics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    Static,
    Easy,
    Hard,
    VeryHard,
    StaticCamera,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Static,
        Preset::Easy,
        Preset::Hard,
        Preset::VeryHard,
        Preset::StaticCamera,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Static => "static",
            Preset::Easy => "easy",
            Preset::Hard => "hard",
            Preset::VeryHard => "very-hard",
            Preset::StaticCamera => "static-camera",
        }
    }

    /// Presets that share a scene differ only in background density.
    fn scene_name(self) -> &'static str {
        match self {
            Preset::Static => "still-box",
            Preset::Easy | Preset::Hard => "moving-box",
            Preset::VeryHard => "carried-board",
            Preset::StaticCamera => "tripod",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', ' '], "-");
        match norm.as_str() {
            "static" => Ok(Preset::Static),
            "easy" => Ok(Preset::Easy),
            "hard" => Ok(Preset::Hard),
            "very-hard" | "veryhard" => Ok(Preset::VeryHard),
            "static-camera" | "staticcamera" => Ok(Preset::StaticCamera),
            _ => Err(Error::Config(format!(
                "unknown preset `{s}` (static, easy, hard, very-hard, static-camera)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectMotion {
    /// Constant world velocity (m/s) and yaw rate (rad/s) while moving.
    Linear {
        velocity: Vector3<f64>,
        yaw_rate: f64,
    },
    /// Rigidly attached to the camera while moving.
    CameraLocked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Target number of visible background features per frame.
    pub n_features: u32,
    pub n_object_points: u32,
    /// The object moves between these frames.
    pub object_motion_start: u32,
    pub object_motion_stop: u32,
    pub image_width: u32,
    pub image_height: u32,
    pub intrinsics: CameraIntrinsics,
    pub fps: f64,
    pub frame_count: u32,
    pub reprojection_gate: f64,
    pub jitter_sigma: f64,
    pub dropout: f64,
    /// Spurious outliers per frame and run, as a fraction of `n_features`.
    pub phantom_rate: f64,
    /// Cuboid edge lengths (m).
    pub object_size: Vector3<f64>,
    /// Initial object center in the first camera frame (m).
    pub object_center: Vector3<f64>,
    pub object_motion: ObjectMotion,
    /// Extra camera velocity (m/s) and yaw rate (rad/s) while the object moves.
    pub camera_drift: Option<(Vector3<f64>, f64)>,
    pub static_camera: bool,
    /// Background target of the training twin.
    pub example_features: u32,
    /// Frame-aligned copy with a dense background, used as a training example.
    pub example: bool,
}

pub const DENSE_BACKGROUND: u32 = 3000;

impl ScenarioConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let mut cfg = Self {
            preset,
            seed,
            n_features: DENSE_BACKGROUND,
            n_object_points: 1100,
            object_motion_start: 200,
            object_motion_stop: 260,
            image_width: 1280,
            image_height: 720,
            intrinsics: CameraIntrinsics {
                fx: 700.0,
                fy: 700.0,
                cx: 640.0,
                cy: 360.0,
            },
            fps: 30.0,
            frame_count: 600,
            reprojection_gate: 2.0,
            jitter_sigma: 0.3,
            dropout: 0.05,
            phantom_rate: 0.001,
            object_size: Vector3::new(0.5, 0.5, 0.5),
            object_center: Vector3::new(-0.5, 0.2, 2.0),
            object_motion: ObjectMotion::Linear {
                velocity: Vector3::new(0.5, 0.0, 0.0),
                yaw_rate: 15f64.to_radians(),
            },
            camera_drift: None,
            static_camera: false,
            example_features: DENSE_BACKGROUND,
            example: false,
        };
        match preset {
            Preset::Static => {
                cfg.object_size = Vector3::new(0.3, 0.3, 0.3);
                cfg.object_center = Vector3::new(0.15, 0.15, 0.8);
                cfg.n_object_points = 500;
                cfg.object_motion = ObjectMotion::Linear {
                    velocity: Vector3::zeros(),
                    yaw_rate: 0.0,
                };
            }
            Preset::Easy => {}
            Preset::Hard => cfg.n_features = 250,
            Preset::VeryHard => {
                cfg.n_features = 500;
                cfg.n_object_points = 8000;
                cfg.example_features = 20000;
                cfg.object_size = Vector3::new(1.6, 0.6, 0.05);
                cfg.object_center = Vector3::new(0.0, 0.23, 0.7);
                cfg.object_motion = ObjectMotion::CameraLocked;
                cfg.camera_drift = Some((Vector3::new(0.2, 0.0, 0.0), 10f64.to_radians()));
            }
            Preset::StaticCamera => {
                cfg.n_features = 250;
                cfg.n_object_points = 2500;
                cfg.static_camera = true;
                cfg.object_size = Vector3::new(0.5, 0.5, 0.5);
                cfg.object_center = Vector3::new(-0.3, 0.1, 1.5);
                cfg.object_motion = ObjectMotion::Linear {
                    velocity: Vector3::new(0.3, 0.0, 0.0),
                    yaw_rate: 10f64.to_radians(),
                };
            }
        }
        // seed-dependent placement and timing, shared by every preset
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        cfg.object_center.x += rng.random_range(-0.1..0.1);
        cfg.object_center.y += rng.random_range(-0.05..0.05);
        let shift: i64 = rng.random_range(-10..=10);
        let duration = cfg.object_motion_stop - cfg.object_motion_start;
        cfg.object_motion_start = (cfg.object_motion_start as i64 + shift) as u32;
        cfg.object_motion_stop = cfg.object_motion_start + duration;
        cfg
    }

    /// The same scene and camera path with a dense background.
    pub fn training_twin(&self) -> Self {
        Self {
            n_features: self.n_features.max(self.example_features),
            example: true,
            ..self.clone()
        }
    }

    pub fn scene_key(&self) -> String {
        format!("{}-{:04}", self.preset.scene_name(), self.seed)
    }

    pub fn sequence_id(&self) -> String {
        let base = format!("{}-{:04}", self.preset.name(), self.seed);
        if self.example {
            format!("{base}-example")
        } else {
            base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::validation("scenario", msg));
        self.intrinsics.validate()?;
        if self.n_features == 0 {
            return bad("n_features must be > 0".into());
        }
        if self.n_object_points == 0 {
            return bad("n_object_points must be > 0".into());
        }
        if self.image_width == 0 || self.image_height == 0 || self.frame_count < 2 {
            return bad("image size and frame count must be positive".into());
        }
        if !(self.fps > 0.0) {
            return bad(format!("fps {} <= 0", self.fps));
        }
        if self.object_motion_start > self.object_motion_stop
            || self.object_motion_stop >= self.frame_count
        {
            return bad(format!(
                "motion frames {}..{} outside 0..{}",
                self.object_motion_start, self.object_motion_stop, self.frame_count
            ));
        }
        if !(self.reprojection_gate > 0.0) || !(self.jitter_sigma >= 0.0) {
            return bad("gate must be > 0 and jitter >= 0".into());
        }
        if 3.0 * self.jitter_sigma >= self.reprojection_gate {
            return bad("jitter bound reaches the reprojection gate".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.phantom_rate) {
            return bad("dropout must be in [0, 1), phantom_rate in [0, 1]".into());
        }
        if self.object_size.iter().any(|&s| !(s > 0.0)) || self.object_center.z <= 0.1 {
            return bad("object must have positive size and lie in front of the camera".into());
        }
        Ok(())
    }
}
