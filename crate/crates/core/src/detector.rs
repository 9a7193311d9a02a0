//! Multi-scale sliding-window scan for sudden outlier clusters.
//!
//! A window `w` on frame `t` is compared with the window `w'` covering the
//! same physical location on frame `t + gap` (found by warping `w` with the
//! rotation-only compensation homography). The outlier score
//!
//! ```text
//! S = ((out_w + eps) / (in_w + eps)) / ((out_w' + eps) / (in_w' + eps))
//! ```
//!
//! drops when inliers inside the window turn into outliers, and a window is
//! flagged when `S < s_max`. Flags are attributed to frame `t`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compensation_homography, rotation_between, warp_box};
use crate::merge::{FrameIntegral, MergedFeatureMap};
use crate::types::{BBox, CameraIntrinsics, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub window_sizes: Vec<u32>,
    pub stride: u32,
    pub frame_gap: u32,
    pub s_max: f64,
    pub epsilon: f64,
    /// Both windows need at least this many features per run.
    pub min_window_features: f64,
    /// Warped windows keeping less than this share of their area in the
    /// image are skipped.
    pub min_visible_fraction: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_sizes: vec![100, 200, 300, 400],
            stride: 50,
            frame_gap: 3,
            s_max: 0.15,
            epsilon: 0.5,
            min_window_features: 10.0,
            min_visible_fraction: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be > 0".into()));
        }
        if self.window_sizes.is_empty() || self.window_sizes.iter().any(|&s| s < self.stride) {
            return Err(Error::Config("window sizes must be >= stride".into()));
        }
        if self.frame_gap < 1 {
            return Err(Error::Config("frame_gap must be >= 1".into()));
        }
        if !(self.s_max > 0.0 && self.s_max < 1.0) {
            return Err(Error::Config("s_max must be in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.min_visible_fraction) || self.min_window_features < 0.0 {
            return Err(Error::Config("bad window guard".into()));
        }
        Ok(())
    }
}

/// Observation counts of a window pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub in_w: u64,
    pub out_w: u64,
    pub in_wp: u64,
    pub out_wp: u64,
}

/// Ratio of the outlier/inlier balance before and after the frame gap.
pub fn outlier_score(c: &WindowCounts, epsilon: f64) -> f64 {
    let before = (c.out_w as f64 + epsilon) / (c.in_w as f64 + epsilon);
    let after = (c.out_wp as f64 + epsilon) / (c.in_wp as f64 + epsilon);
    before / after
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowScore {
    pub frame: u32,
    pub bbox: BBox,
    /// The compensated window on frame `frame + gap`.
    pub warped: BBox,
    pub score: f64,
    pub counts: WindowCounts,
}

impl WindowScore {
    pub fn is_flagged(&self, cfg: &DetectorConfig) -> bool {
        self.score < cfg.s_max
    }

    /// Minimum-feature guard on both windows, in features per run.
    pub fn has_support(&self, cfg: &DetectorConfig, total_runs: u32) -> bool {
        let runs = total_runs.max(1) as f64;
        let w = (self.counts.in_w + self.counts.out_w) as f64 / runs;
        let wp = (self.counts.in_wp + self.counts.out_wp) as f64 / runs;
        w >= cfg.min_window_features && wp >= cfg.min_window_features
    }
}

/// Why a window could not be scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skip {
    OffImage,
    TrajectoryGap,
    FrameRange,
}

/// Scores one window anchored on frame `t`.
pub fn score_window(
    map: &MergedFeatureMap,
    traj: &Trajectory,
    k: &CameraIntrinsics,
    fps: f64,
    t: u32,
    bbox: &BBox,
    cfg: &DetectorConfig,
) -> std::result::Result<WindowScore, Skip> {
    let later = t + cfg.frame_gap;
    if later >= map.frame_count() {
        return Err(Skip::FrameRange);
    }
    let dr = rotation_between(traj, t, later, fps).map_err(|_| Skip::TrajectoryGap)?;
    let h = compensation_homography(k, &dr);
    let (w, hgt) = image_size(map);
    let warped = warp_box(&h, bbox, w, hgt)
        .filter(|wb| wb.visible_fraction >= cfg.min_visible_fraction)
        .ok_or(Skip::OffImage)?;
    let (in_w, out_w) = map.window_counts(t, bbox).map_err(|_| Skip::FrameRange)?;
    let (in_wp, out_wp) = map
        .window_counts(later, &warped.bbox)
        .map_err(|_| Skip::FrameRange)?;
    let counts = WindowCounts {
        in_w,
        out_w,
        in_wp,
        out_wp,
    };
    Ok(WindowScore {
        frame: t,
        bbox: *bbox,
        warped: BBox {
            frame: later,
            ..warped.bbox
        },
        score: outlier_score(&counts, cfg.epsilon),
        counts,
    })
}

fn image_size(map: &MergedFeatureMap) -> (u32, u32) {
    let g = map.grid();
    (g.width, g.height)
}

/// Stride-aligned windows fully inside the image, ordered by (size, y, x).
pub fn enumerate_windows(frame: u32, width: u32, height: u32, cfg: &DetectorConfig) -> Vec<BBox> {
    let mut out = Vec::new();
    for &s in &cfg.window_sizes {
        if s > width || s > height {
            continue;
        }
        let mut y = 0;
        while y + s <= height {
            let mut x = 0;
            while x + s <= width {
                out.push(BBox {
                    frame,
                    x0: x as f64,
                    y0: y as f64,
                    x1: (x + s) as f64,
                    y1: (y + s) as f64,
                });
                x += cfg.stride;
            }
            y += cfg.stride;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ScanStats {
    pub frames: u64,
    pub windows: u64,
    pub scored: u64,
    pub skipped_off_image: u64,
    pub skipped_trajectory_gap: u64,
    pub skipped_low_support: u64,
    pub flagged: u64,
}

impl ScanStats {
    fn add(mut self, o: ScanStats) -> Self {
        self.frames += o.frames;
        self.windows += o.windows;
        self.scored += o.scored;
        self.skipped_off_image += o.skipped_off_image;
        self.skipped_trajectory_gap += o.skipped_trajectory_gap;
        self.skipped_low_support += o.skipped_low_support;
        self.flagged += o.flagged;
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScanResult {
    /// Flagged windows in (frame, size, y, x) order.
    pub flagged: Vec<WindowScore>,
    pub stats: ScanStats,
}

/// Scans every frame `t` in `[0, frames - gap)`, every window size and
/// every stride-aligned position, returning windows with `S < s_max` whose
/// two windows both pass the minimum-feature guard.
pub fn scan_sequence(
    map: &MergedFeatureMap,
    traj: &Trajectory,
    k: &CameraIntrinsics,
    fps: f64,
    cfg: &DetectorConfig,
) -> Result<ScanResult> {
    cfg.validate()?;
    let (width, height) = image_size(map);
    let frames = map.frame_count();
    if frames <= cfg.frame_gap {
        return Ok(ScanResult::default());
    }
    let per_frame: Vec<(Vec<WindowScore>, ScanStats)> = (0..frames - cfg.frame_gap)
        .into_par_iter()
        .map(|t| scan_frame(map, traj, k, fps, width, height, t, cfg))
        .collect::<Result<_>>()?;
    let mut result = ScanResult::default();
    for (flagged, stats) in per_frame {
        result.flagged.extend(flagged);
        result.stats = result.stats.add(stats);
    }
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn scan_frame(
    map: &MergedFeatureMap,
    traj: &Trajectory,
    k: &CameraIntrinsics,
    fps: f64,
    width: u32,
    height: u32,
    t: u32,
    cfg: &DetectorConfig,
) -> Result<(Vec<WindowScore>, ScanStats)> {
    let later = t + cfg.frame_gap;
    let windows = enumerate_windows(t, width, height, cfg);
    let mut stats = ScanStats {
        frames: 1,
        windows: windows.len() as u64,
        ..Default::default()
    };
    let h = match rotation_between(traj, t, later, fps) {
        Ok(dr) => compensation_homography(k, &dr),
        Err(_) => {
            stats.skipped_trajectory_gap = stats.windows;
            return Ok((Vec::new(), stats));
        }
    };
    let now: FrameIntegral = map.integral(t)?;
    let next: FrameIntegral = map.integral(later)?;
    let mut flagged = Vec::new();
    for bbox in windows {
        let Some(warped) = warp_box(&h, &bbox, width, height)
            .filter(|wb| wb.visible_fraction >= cfg.min_visible_fraction)
        else {
            stats.skipped_off_image += 1;
            continue;
        };
        let (in_w, out_w) = now.counts(&bbox);
        let (in_wp, out_wp) = next.counts(&warped.bbox);
        let counts = WindowCounts {
            in_w,
            out_w,
            in_wp,
            out_wp,
        };
        let ws = WindowScore {
            frame: t,
            bbox,
            warped: BBox {
                frame: later,
                ..warped.bbox
            },
            score: outlier_score(&counts, cfg.epsilon),
            counts,
        };
        if !ws.has_support(cfg, map.total_runs()) {
            stats.skipped_low_support += 1;
            continue;
        }
        stats.scored += 1;
        if ws.is_flagged(cfg) {
            stats.flagged += 1;
            flagged.push(ws);
        }
    }
    Ok((flagged, stats))
}

#[derive(Serialize, Deserialize)]
struct FlagLine {
    frame: u32,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(rename = "S")]
    score: f64,
}

pub fn write_flagged(path: impl AsRef<Path>, flagged: &[WindowScore]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for ws in flagged {
        serde_json::to_writer(
            &mut buf,
            &FlagLine {
                frame: ws.frame,
                bbox: ws.bbox.as_array(),
                score: ws.score,
            },
        )?;
        buf.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Reads flagged windows. Only frame, box and score are stored on disk.
pub fn read_flagged(path: impl AsRef<Path>) -> Result<Vec<WindowScore>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fl: FlagLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let [x0, y0, x1, y1] = fl.bbox;
        let bbox = BBox::new(fl.frame, x0, y0, x1, y1).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(WindowScore {
            frame: fl.frame,
            bbox,
            warped: bbox,
            score: fl.score,
            counts: WindowCounts::default(),
        });
    }
    Ok(out)
}
