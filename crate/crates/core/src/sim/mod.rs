//! Synthetic scenes with a moving cuboid in a box-shaped room, producing
//! multi-run inlier/outlier feature streams and their ground truth.

mod config;
mod scene;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{Isometry3, Point3};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

pub use config::{ObjectMotion, Preset, ScenarioConfig, DENSE_BACKGROUND};
use scene::{
    camera_path, convex_hull, cuboid_corners, object_moves, object_path, polygon_span, project,
    rng, segment_hits_box, SurfacePoint, MIN_DEPTH,
};

use crate::error::{Error, Result};
use crate::io::{
    write_feature_records, write_landmarks, write_masks, write_meta, write_trajectory,
};
use crate::mask::{MaskSequence, Rle};
use crate::merge::{MergeBuilder, MergeConfig, MergedFeatureMap};
use crate::types::{BBox, FeatureRecord, FeatureStatus, Pose, SequenceMeta, Trajectory};

/// Track ids at or above this value belong to the object.
pub const OBJECT_TRACK_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointClass {
    Background,
    Object,
    /// Spurious detection without a landmark.
    Phantom,
}

pub fn point_class(record: &FeatureRecord) -> PointClass {
    match record.track {
        None => PointClass::Phantom,
        Some(t) if t >= OBJECT_TRACK_BASE => PointClass::Object,
        Some(_) => PointClass::Background,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame: u32,
    #[serde(rename = "box")]
    pub object_box: Option<BBox>,
    /// The object moved since the previous frame.
    pub moving: bool,
    /// The dominant motion in view is the object's.
    pub inverted: bool,
    pub object_visible: u32,
    pub background_visible: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub trajectory: Trajectory,
    pub frames: Vec<FrameTruth>,
    pub masks: MaskSequence,
}

impl GroundTruth {
    pub fn motion_frames(&self) -> impl Iterator<Item = u32> + '_ {
        self.frames.iter().filter(|f| f.moving).map(|f| f.frame)
    }

    pub fn motion_onset(&self) -> Option<u32> {
        self.motion_frames().next()
    }
}

/// Noise-free observation of one landmark on one frame.
struct Sighting {
    track: u64,
    uv: (f64, f64),
    /// Where the dominant motion model expects it; `None` if nowhere in view.
    expected: Option<(f64, f64)>,
}

/// Landmark index and its pixel position.
type Projected = (usize, (f64, f64));

pub struct Scenario {
    cfg: ScenarioConfig,
    meta: SequenceMeta,
    camera: Vec<Isometry3<f64>>,
    camera_inv: Vec<Isometry3<f64>>,
    object: Vec<Isometry3<f64>>,
    background: Vec<Point3<f64>>,
    surface: Vec<SurfacePoint>,
    /// Frame the object-following pose is referenced to, on inverted frames.
    reference: Vec<Option<u32>>,
    truth: GroundTruth,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let meta = SequenceMeta {
            sequence_id: cfg.sequence_id(),
            image_width: cfg.image_width,
            image_height: cfg.image_height,
            fps: cfg.fps,
            frame_count: cfg.frame_count,
            intrinsics: cfg.intrinsics,
            scene: Some(cfg.scene_key()),
        };
        let camera = camera_path(&cfg);
        let camera_inv = camera.iter().map(|c| c.inverse()).collect();
        let object = object_path(&cfg, &camera);
        let background = scene::background_points(&cfg, &camera);
        let surface = scene::object_points(&cfg);
        let mut s = Self {
            meta,
            camera,
            camera_inv,
            object,
            background,
            surface,
            reference: vec![None; cfg.frame_count as usize],
            truth: GroundTruth {
                trajectory: Trajectory::new(vec![])?,
                frames: vec![],
                masks: MaskSequence::new("", 1, 0, 0),
            },
            cfg,
        };
        s.truth = s.build_truth()?;
        Ok(s)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn meta(&self) -> &SequenceMeta {
        &self.meta
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    /// Merged map of `runs` runs, generating one run at a time.
    pub fn merge(&self, runs: u32, cfg: &MergeConfig) -> Result<MergedFeatureMap> {
        let mut builder = MergeBuilder::new(&self.meta, cfg.cell_size);
        for run in 0..runs {
            builder.add_run(&self.run_records(run))?;
        }
        builder.finish(cfg)
    }

    /// Object-to-world pose of every frame.
    pub fn object_poses(&self) -> &[Isometry3<f64>] {
        &self.object
    }

    fn moving(&self, frame: u32) -> bool {
        object_moves(&self.cfg)
            && frame > self.cfg.object_motion_start
            && frame <= self.cfg.object_motion_stop
    }

    fn project(&self, frame: u32, p: &Point3<f64>) -> Option<(f64, f64)> {
        project(
            &self.cfg.intrinsics,
            &self.camera_inv[frame as usize],
            p,
            self.cfg.image_width,
            self.cfg.image_height,
        )
    }

    /// Projected object outline, if every corner is in front of the camera.
    fn outline(&self, frame: u32) -> Option<Vec<(f64, f64)>> {
        let f = frame as usize;
        let mut pts = Vec::with_capacity(8);
        for c in cuboid_corners(&self.cfg.object_size) {
            let pc = self.camera_inv[f] * (self.object[f] * c);
            if pc.z <= MIN_DEPTH {
                return None;
            }
            pts.push(self.cfg.intrinsics.project(&pc.coords)?);
        }
        Some(convex_hull(pts))
    }

    /// Visible background and object landmarks with their image positions.
    fn visible(&self, frame: u32) -> (Vec<Projected>, Vec<Projected>) {
        let f = frame as usize;
        let obj = &self.object[f];
        let obj_inv = obj.inverse();
        let eye = Point3::from(self.camera[f].translation.vector);
        let eye_local = obj_inv * eye;
        let half = self.cfg.object_size / 2.0;
        let outline = self.outline(frame);
        let bounds = outline.as_ref().map(|poly| {
            poly.iter().fold(
                (
                    f64::INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::NEG_INFINITY,
                ),
                |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
            )
        });
        let occluded = |p: &Point3<f64>, uv: (f64, f64)| match bounds {
            Some((x0, y0, x1, y1)) if uv.0 >= x0 && uv.0 <= x1 && uv.1 >= y0 && uv.1 <= y1 => {
                segment_hits_box(&eye_local, &(obj_inv * p), &half)
            }
            Some(_) => false,
            // an object straddling the camera plane hides whatever it crosses
            None => segment_hits_box(&eye_local, &(obj_inv * p), &half),
        };
        let background = self
            .background
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let uv = self.project(frame, p)?;
                (!occluded(p, uv)).then_some((i, uv))
            })
            .collect();
        let object = self
            .surface
            .iter()
            .enumerate()
            .filter_map(|(i, sp)| {
                let local_to_eye = eye_local - sp.local;
                if local_to_eye.dot(&sp.normal) <= 0.0 {
                    return None;
                }
                Some((i, self.project(frame, &(obj * sp.local))?))
            })
            .collect();
        (background, object)
    }

    fn build_truth(&mut self) -> Result<GroundTruth> {
        let (w, h) = (self.cfg.image_width, self.cfg.image_height);
        let mut frames = Vec::with_capacity(self.cfg.frame_count as usize);
        let mut masks = MaskSequence::new(self.meta.sequence_id.clone(), 1, w, h);
        let mut last_aligned = 0u32;
        for frame in 0..self.cfg.frame_count {
            let (bg, obj) = self.visible(frame);
            let moving = self.moving(frame);
            let inverted = moving && obj.len() > bg.len();
            if inverted {
                self.reference[frame as usize] = Some(last_aligned);
            } else {
                last_aligned = frame;
            }
            let outline = self.outline(frame);
            let object_box = outline.as_ref().and_then(|poly| {
                let (x0, y0, x1, y1) = poly.iter().fold(
                    (
                        f64::INFINITY,
                        f64::INFINITY,
                        f64::NEG_INFINITY,
                        f64::NEG_INFINITY,
                    ),
                    |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
                );
                BBox::new(
                    frame,
                    x0.floor() - 1.0,
                    y0.floor() - 1.0,
                    x1.ceil() + 1.0,
                    y1.ceil() + 1.0,
                )
                .ok()?
                .clip(w, h)
            });
            if let Some(poly) = &outline {
                let rle = rasterize_polygon(poly, w, h);
                if rle.foreground() > 0 {
                    masks.frames.insert(frame, rle);
                }
            }
            frames.push(FrameTruth {
                frame,
                object_box,
                moving,
                inverted,
                object_visible: obj.len() as u32,
                background_visible: bg.len() as u32,
            });
        }
        let poses = self
            .camera
            .iter()
            .enumerate()
            .map(|(f, c)| Pose::from_isometry(f as f64 / self.cfg.fps, c))
            .collect();
        Ok(GroundTruth {
            trajectory: Trajectory::new(poses)?,
            frames,
            masks,
        })
    }

    /// Sightings with the position predicted by the dominant motion model.
    fn sightings(&self, frame: u32) -> Vec<Sighting> {
        let f = frame as usize;
        let (bg, obj) = self.visible(frame);
        let mut out = Vec::with_capacity(bg.len() + obj.len());
        // object-following pose: the camera believes the object has not moved
        let follow = self.reference[f].map(|r| self.object[f] * self.object[r as usize].inverse());
        for (i, uv) in bg {
            let expected = match &follow {
                Some(m) => self.project(frame, &(m * self.background[i])),
                None => Some(uv),
            };
            out.push(Sighting {
                track: i as u64,
                uv,
                expected,
            });
        }
        for (i, uv) in obj {
            let expected = if follow.is_none() && self.moving(frame) {
                self.project(frame, &(self.object[f - 1] * self.surface[i].local))
            } else {
                Some(uv)
            };
            out.push(Sighting {
                track: OBJECT_TRACK_BASE + i as u64,
                uv,
                expected,
            });
        }
        out
    }

    /// Feature records of one run: jittered sightings labeled against the
    /// dominant model, random dropout, and a few phantom outliers.
    pub fn run_records(&self, run: u32) -> Vec<FeatureRecord> {
        let cfg = &self.cfg;
        let mut r = rng(
            cfg.seed,
            ((cfg.n_features as u64) << 20) | (1 << 16) | run as u64,
        );
        let noise = Normal::new(0.0, cfg.jitter_sigma.max(1e-12)).expect("finite sigma");
        let bound = 3.0 * cfg.jitter_sigma;
        let phantoms = Poisson::new((cfg.phantom_rate * cfg.n_features as f64).max(1e-9))
            .expect("positive rate");
        let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
        let mut out = Vec::new();
        for frame in 0..cfg.frame_count {
            for s in self.sightings(frame) {
                if r.random::<f64>() < cfg.dropout {
                    continue;
                }
                let mut jitter = || loop {
                    let d: f64 = noise.sample(&mut r);
                    if cfg.jitter_sigma == 0.0 {
                        break 0.0;
                    }
                    if d.abs() <= bound {
                        break d;
                    }
                };
                let (x, y) = (s.uv.0 + jitter(), s.uv.1 + jitter());
                if !(x >= 0.0 && y >= 0.0 && x < w && y < h) {
                    continue;
                }
                let inlier = s
                    .expected
                    .is_some_and(|(ex, ey)| (x - ex).hypot(y - ey) <= cfg.reprojection_gate);
                let status = if inlier {
                    FeatureStatus::Inlier
                } else {
                    FeatureStatus::Outlier
                };
                out.push(FeatureRecord::new(frame, x, y, status, run).with_track(s.track));
            }
            let n = phantoms.sample(&mut r) as u32;
            for _ in 0..n {
                let x = r.random_range(0.0..w);
                let y = r.random_range(0.0..h);
                out.push(FeatureRecord::new(frame, x, y, FeatureStatus::Outlier, run));
            }
        }
        out
    }

    /// Landmark positions: background points and object points as placed
    /// on the first frame.
    pub fn landmarks(&self) -> BTreeMap<u64, Point3<f64>> {
        let mut out: BTreeMap<u64, Point3<f64>> = self
            .background
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u64, *p))
            .collect();
        out.extend(
            self.surface
                .iter()
                .enumerate()
                .map(|(i, sp)| (OBJECT_TRACK_BASE + i as u64, self.object[0] * sp.local)),
        );
        out
    }

    /// Writes every file of the sequence into `dir`.
    pub fn emit(&self, dir: impl AsRef<Path>, runs: u32) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_meta(&self.meta, dir.join(files::META))?;
        write_trajectory(&self.truth.trajectory, dir.join(files::GROUNDTRUTH))?;
        write_masks(dir.join(files::GT_MASKS), [&self.truth.masks])?;
        write_landmarks(dir.join(files::LANDMARKS), &self.landmarks())?;
        write_frame_truth(dir.join(files::GT_FRAMES), &self.truth.frames)?;
        for run in 0..runs {
            write_feature_records(dir.join(files::features(run)), &self.run_records(run))?;
        }
        Ok(())
    }
}

/// File names of a sequence directory.
pub mod files {
    pub const META: &str = "meta.txt";
    pub const GROUNDTRUTH: &str = "groundtruth.txt";
    pub const GT_MASKS: &str = "gt_masks.jsonl";
    pub const GT_FRAMES: &str = "gt_frames.jsonl";
    pub const LANDMARKS: &str = "landmarks.jsonl";

    pub fn features(run: u32) -> String {
        format!("features_run_{run:02}.jsonl")
    }

    /// Run index of a feature file name.
    pub fn feature_run(name: &str) -> Option<u32> {
        name.strip_prefix("features_run_")?
            .strip_suffix(".jsonl")?
            .parse()
            .ok()
    }
}

fn write_frame_truth(path: impl AsRef<Path>, frames: &[FrameTruth]) -> Result<()> {
    let path = path.as_ref();
    let mut text = Vec::new();
    for f in frames {
        serde_json::to_writer(&mut text, f)?;
        text.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&text).map_err(|e| Error::io(path, e))
}

/// Pixels whose centers fall inside a convex polygon.
fn rasterize_polygon(poly: &[(f64, f64)], width: u32, height: u32) -> Rle {
    let mut runs: Vec<u32> = Vec::new();
    let mut first = None;
    let mut current = false;
    let mut push = |value: bool, len: u32| {
        if len == 0 {
            return;
        }
        if first.is_none() {
            first = Some(value);
            current = value;
            runs.push(len);
        } else if value == current {
            *runs.last_mut().expect("nonempty") += len;
        } else {
            current = value;
            runs.push(len);
        }
    };
    for y in 0..height {
        let span = polygon_span(poly, y as f64 + 0.5).and_then(|(lo, hi)| {
            let a = (lo - 0.5).ceil().max(0.0);
            let b = (hi - 0.5).floor().min(width as f64 - 1.0);
            (a <= b).then_some((a as u32, b as u32 + 1))
        });
        match span {
            Some((a, b)) => {
                push(false, a);
                push(true, b - a);
                push(false, width - b);
            }
            None => push(false, width),
        }
    }
    Rle {
        first: first.unwrap_or(false) as u8,
        runs,
    }
}

/// Generated runs, ground truth and sequence metadata of one scenario.
pub struct Generated {
    pub runs: Vec<Vec<FeatureRecord>>,
    pub truth: GroundTruth,
    pub meta: SequenceMeta,
    pub landmarks: BTreeMap<u64, Point3<f64>>,
    /// Object-to-world pose of every frame.
    pub object: Vec<Isometry3<f64>>,
}

pub fn generate(cfg: ScenarioConfig, runs: u32) -> Result<Generated> {
    let scenario = Scenario::new(cfg)?;
    Ok(Generated {
        runs: (0..runs).map(|r| scenario.run_records(r)).collect(),
        truth: scenario.truth.clone(),
        meta: scenario.meta.clone(),
        landmarks: scenario.landmarks(),
        object: scenario.object.clone(),
    })
}
