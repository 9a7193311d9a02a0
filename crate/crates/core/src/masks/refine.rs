use std::collections::{BTreeMap, VecDeque};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::merge::MergedFeatureMap;
use crate::types::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskGenConfig {
    pub k: u32,
    pub refine_density_threshold: f64,
    pub dilation_radius: u32,
    pub search_margin: u32,
    /// Consecutive empty frames after which propagation stops.
    pub max_empty_frames: u32,
}

impl Default for MaskGenConfig {
    fn default() -> Self {
        Self {
            k: 15,
            refine_density_threshold: 0.25,
            dilation_radius: 10,
            search_margin: 30,
            max_empty_frames: 5,
        }
    }
}

impl MaskGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::validation("mask config", "k must be >= 1"));
        }
        if !(self.refine_density_threshold > 0.0 && self.refine_density_threshold <= 1.0) {
            return Err(Error::validation(
                "mask config",
                format!(
                    "refine_density_threshold {} outside (0, 1]",
                    self.refine_density_threshold
                ),
            ));
        }
        if self.max_empty_frames < 1 {
            return Err(Error::validation(
                "mask config",
                "max_empty_frames must be >= 1",
            ));
        }
        Ok(())
    }

    /// Frames `[t-k, t+k]` clipped to the sequence.
    pub fn interval(&self, frame: u32, frame_count: u32) -> RangeInclusive<u32> {
        frame.saturating_sub(self.k)
            ..=(frame.saturating_add(self.k)).min(frame_count.saturating_sub(1))
    }
}

/// Per cell (center inside `region`), the number of runs that reported an
/// outlier there, summed over `frames`.
pub fn accumulate_outliers(
    map: &MergedFeatureMap,
    frames: RangeInclusive<u32>,
    region: &BBox,
) -> Result<BTreeMap<u32, u64>> {
    let grid = map.grid();
    let (xs, ys) = grid.cell_range(region);
    let mut acc = BTreeMap::new();
    if xs.is_empty() || ys.is_empty() {
        return Ok(acc);
    }
    for f in frames {
        let cells = map.frame(f)?;
        for y in ys.clone() {
            let row = y * grid.cols;
            for (&idx, c) in cells.range(row + xs.start..row + xs.end) {
                if c.outlier_runs > 0 {
                    *acc.entry(idx).or_insert(0) += c.outlier_runs as u64;
                }
            }
        }
    }
    Ok(acc)
}

/// Integer pixel span `[lo, hi)` covering `[a, b)` within `[0, n)`.
fn span(a: f64, b: f64, n: u32) -> (u32, u32) {
    let lo = a.floor().max(0.0).min(n as f64) as u32;
    let hi = b.ceil().max(0.0).min(n as f64) as u32;
    (lo, hi)
}

/// Paints dense cells clipped to `region`, dilates them and keeps the largest
/// 4-connected component. Returns an empty mask when no cell qualifies.
pub fn rasterize_dense_cells(
    map: &MergedFeatureMap,
    cells: &BTreeMap<u32, u64>,
    region: &BBox,
    cfg: &MaskGenConfig,
) -> BinaryMask {
    let grid = map.grid();
    let (width, height) = (grid.width, grid.height);
    let mut out = BinaryMask::new(width, height);
    let Some(max) = cells.values().copied().max().filter(|&m| m > 0) else {
        return out;
    };
    let Some(region) = region.clip(width, height) else {
        return out;
    };
    let threshold = cfg.refine_density_threshold * max as f64;
    let r = cfg.dilation_radius as f64;

    let (ox, ox1) = span(region.x0 - r, region.x1 + r, width);
    let (oy, oy1) = span(region.y0 - r, region.y1 + r, height);
    let (lw, lh) = ((ox1 - ox) as usize, (oy1 - oy) as usize);
    let mut local = vec![false; lw * lh];

    let cs = grid.cell_size as f64;
    for (&idx, &count) in cells {
        if (count as f64) < threshold {
            continue;
        }
        let (cx, cy) = grid.cell_xy(idx);
        let rx0 = (cx as f64 * cs).max(region.x0);
        let rx1 = ((cx + 1) as f64 * cs).min(region.x1);
        let ry0 = (cy as f64 * cs).max(region.y0);
        let ry1 = ((cy + 1) as f64 * cs).min(region.y1);
        if rx0 >= rx1 || ry0 >= ry1 {
            continue;
        }
        let (px0, px1) = span(rx0 - r, rx1 + r, width);
        let (py0, py1) = span(ry0 - r, ry1 + r, height);
        for py in py0.max(oy)..py1.min(oy1) {
            let c_y = py as f64 + 0.5;
            let dy = (ry0 - c_y).max(c_y - ry1).max(0.0);
            for px in px0.max(ox)..px1.min(ox1) {
                let c_x = px as f64 + 0.5;
                let dx = (rx0 - c_x).max(c_x - rx1).max(0.0);
                if dx * dx + dy * dy <= r * r {
                    local[(py - oy) as usize * lw + (px - ox) as usize] = true;
                }
            }
        }
    }

    let Some(component) = largest_component(&local, lw, lh) else {
        return out;
    };
    let mut filled = vec![false; lw * lh];
    for i in component {
        filled[i] = true;
    }
    fill_holes(&mut filled, lw, lh);
    for (i, _) in filled.iter().enumerate().filter(|(_, &p)| p) {
        out.set(ox + (i % lw) as u32, oy + (i / lw) as u32, true);
    }
    out
}

/// Sets every background pixel not 4-connected to the raster border.
pub fn fill_holes(pixels: &mut [bool], width: usize, height: usize) {
    let mut outside = vec![false; pixels.len()];
    let mut queue = VecDeque::new();
    for i in 0..pixels.len() {
        let (x, y) = (i % width, i / width);
        let border = x == 0 || y == 0 || x + 1 == width || y + 1 == height;
        if border && !pixels[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % width, i / width);
        let mut visit = |j: usize| {
            if !pixels[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < width {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - width);
        }
        if y + 1 < height {
            visit(i + width);
        }
    }
    for (p, o) in pixels.iter_mut().zip(outside) {
        *p = !o;
    }
}

/// Pixel indices of the largest 4-connected foreground component; ties keep
/// the component found first in row-major order.
pub fn largest_component(pixels: &[bool], width: usize, height: usize) -> Option<Vec<usize>> {
    let mut seen = vec![false; pixels.len()];
    let mut best: Option<Vec<usize>> = None;
    let mut queue = VecDeque::new();
    for start in 0..pixels.len() {
        if !pixels[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if pixels[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        if best.as_ref().is_none_or(|b| comp.len() > b.len()) {
            best = Some(comp);
        }
    }
    best
}

/// Default refiner: dense outlier cells of `frames` inside `region`.
pub fn geometric_refine(
    map: &MergedFeatureMap,
    frames: RangeInclusive<u32>,
    region: &BBox,
    cfg: &MaskGenConfig,
) -> Result<BinaryMask> {
    let cells = accumulate_outliers(map, frames, region)?;
    Ok(rasterize_dense_cells(map, &cells, region, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::{merge_runs, MergeConfig};
    use crate::types::{CameraIntrinsics, FeatureRecord, FeatureStatus, SequenceMeta};

    fn meta(frames: u32) -> SequenceMeta {
        SequenceMeta {
            sequence_id: "t".into(),
            image_width: 320,
            image_height: 240,
            fps: 30.0,
            frame_count: frames,
            intrinsics: CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0).unwrap(),
            scene: None,
        }
    }

    /// One outlier per `step` px inside `[x0,x0+side) x [y0,y0+side)` on every frame.
    fn blob(frames: u32, x0: f64, y0: f64, side: f64, step: f64) -> Vec<FeatureRecord> {
        let mut out = Vec::new();
        for f in 0..frames {
            let mut y = y0 + 0.5 * step;
            while y < y0 + side {
                let mut x = x0 + 0.5 * step;
                while x < x0 + side {
                    out.push(FeatureRecord::new(f, x, y, FeatureStatus::Outlier, 0));
                    x += step;
                }
                y += step;
            }
        }
        out
    }

    #[test]
    fn dense_blob_is_covered_and_contained() {
        let m = meta(5);
        let recs = blob(5, 104.0, 64.0, 48.0, 2.0);
        let map = merge_runs(&[recs], &m, &MergeConfig::default()).unwrap();
        let cfg = MaskGenConfig::default();
        let bbox = BBox::new(2, 80.0, 40.0, 180.0, 140.0).unwrap();
        let mask = geometric_refine(&map, cfg.interval(2, 5), &bbox, &cfg).unwrap();
        let mut covered = 0;
        for y in 64..112 {
            for x in 104..152 {
                covered += mask.get(x, y) as usize;
            }
        }
        assert!(covered as f64 >= 0.8 * 48.0 * 48.0);
        let grown = bbox.expand(cfg.dilation_radius as f64);
        for y in 0..240 {
            for x in 0..320 {
                if mask.get(x, y) {
                    assert!(grown.contains_point(x as f64 + 0.5, y as f64 + 0.5));
                }
            }
        }
    }

    #[test]
    fn sparse_blob_is_dropped_by_density_and_component_rule() {
        let m = meta(3);
        let mut recs = blob(3, 40.0, 40.0, 32.0, 2.0);
        recs.extend(blob(3, 200.0, 40.0, 32.0, 8.0 * 10f64.sqrt()));
        let map = merge_runs(&[recs], &m, &MergeConfig::default()).unwrap();
        let cfg = MaskGenConfig::default();
        let bbox = BBox::new(1, 0.0, 0.0, 320.0, 240.0).unwrap();
        let mask = geometric_refine(&map, cfg.interval(1, 3), &bbox, &cfg).unwrap();
        assert!(mask.get(56, 56));
        assert_eq!(
            mask.count_in_box(&BBox::new(0, 190.0, 0.0, 320.0, 240.0).unwrap()),
            0
        );
    }

    #[test]
    fn no_outliers_gives_empty_mask() {
        let m = meta(3);
        let recs = vec![FeatureRecord::new(1, 50.0, 50.0, FeatureStatus::Inlier, 0)];
        let map = merge_runs(&[recs], &m, &MergeConfig::default()).unwrap();
        let cfg = MaskGenConfig::default();
        let bbox = BBox::new(1, 0.0, 0.0, 100.0, 100.0).unwrap();
        assert!(geometric_refine(&map, 0..=2, &bbox, &cfg)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn component_tie_keeps_first() {
        let px = vec![true, false, true, false];
        assert_eq!(largest_component(&px, 4, 1), Some(vec![0]));
        assert_eq!(largest_component(&[false; 4], 2, 2), None);
    }

    #[test]
    fn enclosed_holes_are_filled() {
        #[rustfmt::skip]
        let mut px = vec![
            false, true,  true,  true,  false,
            false, true,  false, true,  false,
            false, true,  true,  false, false,
            false, false, false, false, false,
        ];
        fill_holes(&mut px, 5, 4);
        assert!(px[7]);
        assert!(!px[13]);
        assert_eq!(px.iter().filter(|&&p| p).count(), 8);
    }

    #[test]
    fn interval_is_clipped() {
        let cfg = MaskGenConfig::default();
        assert_eq!(cfg.interval(3, 100), 0..=18);
        assert_eq!(cfg.interval(95, 100), 80..=99);
    }
}
