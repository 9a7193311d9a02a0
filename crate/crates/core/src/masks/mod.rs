//! From flagged windows to per-object mask sequences.

mod boxes;
mod export;
mod plugin;
mod propagate;
mod refine;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use boxes::{merge_boxes, merge_frame_boxes};
pub use export::{export_training_set, mask_file_name, Manifest, ManifestEntry, MANIFEST_FILE};
pub use plugin::{
    ExternalPlugin, FrameWindow, GeometricSegmenter, GeometricTracker, SegmenterPlugin,
    TrackerPlugin,
};
pub use propagate::propagate_mask;
pub use refine::{
    accumulate_outliers, geometric_refine, largest_component, rasterize_dense_cells, MaskGenConfig,
};

use crate::detector::WindowScore;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskSequence};
use crate::merge::MergedFeatureMap;
use crate::types::BBox;

/// Refines one merged box over `[t-k, t+k]`. `None` drops the box.
pub fn refine_box(
    map: &MergedFeatureMap,
    sequence_id: &str,
    bbox: &BBox,
    cfg: &MaskGenConfig,
    segmenter: &dyn SegmenterPlugin,
) -> Result<Option<BinaryMask>> {
    cfg.validate()?;
    if bbox.frame >= map.frame_count() {
        return Err(Error::FrameOutOfRange {
            frame: bbox.frame,
            frames: map.frame_count(),
        });
    }
    let window = FrameWindow {
        map,
        sequence_id,
        frames: cfg.interval(bbox.frame, map.frame_count()),
        target: bbox.frame,
    };
    let mask = segmenter.refine(&window, bbox)?;
    plugin::check_shape(&mask, &window)?;
    if mask.is_empty() {
        return Ok(None);
    }
    if mask.count_in_box(bbox) == 0 {
        return Err(Error::Plugin(format!(
            "mask for frame {} does not intersect its box",
            bbox.frame
        )));
    }
    Ok(Some(mask))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskBuildStats {
    pub merged_boxes: u64,
    pub covered_boxes: u64,
    pub dropped_boxes: u64,
    pub objects: u64,
}

/// Merges, refines and propagates flagged windows in frame order. A merged
/// box is skipped when an earlier object's mask touches the box on its frame
/// or touches its refined mask within `[t-k, t+k]`.
pub fn build_masks(
    map: &MergedFeatureMap,
    sequence_id: &str,
    flagged: &[WindowScore],
    cfg: &MaskGenConfig,
    segmenter: &dyn SegmenterPlugin,
    tracker: &dyn TrackerPlugin,
) -> Result<(Vec<MaskSequence>, MaskBuildStats)> {
    let grid = map.grid();
    let boxes = merge_boxes(flagged);
    let mut stats = MaskBuildStats {
        merged_boxes: boxes.len() as u64,
        ..Default::default()
    };
    let mut objects: Vec<MaskSequence> = Vec::new();
    let mut union = MaskSequence::new(sequence_id, 0, grid.width, grid.height);
    for bbox in &boxes {
        if let Some(existing) = union.mask(bbox.frame)? {
            if existing.count_in_box(bbox) > 0 {
                stats.covered_boxes += 1;
                continue;
            }
        }
        let Some(seed) = refine_box(map, sequence_id, bbox, cfg, segmenter)? else {
            stats.dropped_boxes += 1;
            continue;
        };
        if touches(&union, &seed, cfg.interval(bbox.frame, map.frame_count()))? {
            stats.covered_boxes += 1;
            continue;
        }
        let id = objects.len() as u32 + 1;
        let seq = propagate_mask(map, sequence_id, &seed, bbox.frame, id, cfg, tracker)?;
        if seq.is_empty() {
            stats.dropped_boxes += 1;
            continue;
        }
        union = superimpose(&[union, seq.clone()])?;
        objects.push(seq);
    }
    stats.objects = objects.len() as u64;
    Ok((objects, stats))
}

/// True when `mask` shares a pixel with `seq` on any frame of `frames`.
fn touches(
    seq: &MaskSequence,
    mask: &BinaryMask,
    frames: std::ops::RangeInclusive<u32>,
) -> Result<bool> {
    let Some(bbox) = mask.bounding_box(0) else {
        return Ok(false);
    };
    for (_, rle) in seq.frames.range(frames) {
        if rle.foreground() == 0 {
            continue;
        }
        let m = rle.decode(seq.width, seq.height)?;
        if m.count_in_box(&bbox) > 0 && m.intersection_count(mask) > 0 {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Pixelwise OR of mask sequences of one sequence. The result has object id 0.
pub fn superimpose(masks: &[MaskSequence]) -> Result<MaskSequence> {
    let first = masks
        .first()
        .ok_or_else(|| Error::validation("superimpose", "no mask sequences"))?;
    for m in masks {
        if m.width != first.width || m.height != first.height {
            return Err(Error::validation(
                "superimpose",
                format!(
                    "resolution {}x{} differs from {}x{}",
                    m.width, m.height, first.width, first.height
                ),
            ));
        }
        if m.sequence_id != first.sequence_id {
            return Err(Error::validation(
                "superimpose",
                format!(
                    "sequence {} differs from {}",
                    m.sequence_id, first.sequence_id
                ),
            ));
        }
    }
    let frames: Vec<u32> = masks
        .iter()
        .flat_map(|m| m.frames.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (w, h) = (first.width, first.height);
    let encoded = frames
        .par_iter()
        .map(|&f| {
            let mut acc = BinaryMask::new(w, h);
            for m in masks {
                if let Some(rle) = m.frames.get(&f) {
                    acc.or_assign(&rle.decode(w, h)?)?;
                }
            }
            Ok((f, acc.encode()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = MaskSequence::new(first.sequence_id.clone(), 0, w, h);
    out.frames.extend(encoded);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::{merge_runs, MergeConfig};
    use crate::types::{CameraIntrinsics, FeatureRecord, FeatureStatus, SequenceMeta};

    fn meta(frames: u32) -> SequenceMeta {
        SequenceMeta {
            sequence_id: "s".into(),
            image_width: 160,
            image_height: 120,
            fps: 30.0,
            frame_count: frames,
            intrinsics: CameraIntrinsics::new(100.0, 100.0, 80.0, 60.0).unwrap(),
            scene: None,
        }
    }

    /// A 16x16 outlier square whose left edge is at `x(frame)`, on `frames`.
    fn moving_square(frames: std::ops::Range<u32>, x: impl Fn(u32) -> f64) -> Vec<FeatureRecord> {
        let mut out = Vec::new();
        for f in frames {
            for i in 0..8 {
                for j in 0..8 {
                    let px = x(f) + 1.0 + 2.0 * i as f64;
                    let py = 40.0 + 1.0 + 2.0 * j as f64;
                    if px < 160.0 {
                        out.push(FeatureRecord::new(f, px, py, FeatureStatus::Outlier, 0));
                    }
                }
            }
        }
        out
    }

    fn seq_with(frames: &[(u32, BinaryMask)]) -> MaskSequence {
        let mut s = MaskSequence::new("s", 3, 4, 4);
        for (f, m) in frames {
            s.insert(*f, m).unwrap();
        }
        s
    }

    fn mask(bits: u16) -> BinaryMask {
        BinaryMask::from_pixels(4, 4, (0..16).map(|i| bits >> i & 1 == 1).collect()).unwrap()
    }

    #[test]
    fn stationary_object_is_tracked_on_every_frame() {
        let m = meta(20);
        let map = merge_runs(
            &[moving_square(0..20, |_| 60.0)],
            &m,
            &MergeConfig::default(),
        )
        .unwrap();
        let cfg = MaskGenConfig::default();
        let seed_box = BBox::new(10, 56.0, 36.0, 80.0, 60.0).unwrap();
        let seed = refine_box(&map, "s", &seed_box, &cfg, &GeometricSegmenter::default())
            .unwrap()
            .unwrap();
        let seq =
            propagate_mask(&map, "s", &seed, 10, 1, &cfg, &GeometricTracker::default()).unwrap();
        assert_eq!(
            seq.frames.keys().copied().collect::<Vec<_>>(),
            (0..20).collect::<Vec<_>>()
        );
        assert!(seq.frames.values().all(|r| r.foreground() > 0));
    }

    #[test]
    fn exiting_object_stops_within_five_frames() {
        let m = meta(40);
        // leaves the 160 px image at frame 13
        let map = merge_runs(
            &[moving_square(0..40, |f| 40.0 + 10.0 * f as f64)],
            &m,
            &MergeConfig::default(),
        )
        .unwrap();
        let cfg = MaskGenConfig::default();
        let mut seed = BinaryMask::new(160, 120);
        for y in 40..56 {
            for x in 40..56 {
                seed.set(x, y, true);
            }
        }
        let seq =
            propagate_mask(&map, "s", &seed, 0, 1, &cfg, &GeometricTracker::default()).unwrap();
        let last = *seq.frames.keys().last().unwrap();
        assert!((11..=13 + 5).contains(&last), "last frame {last}");
        assert!(seq.frames.values().all(|r| r.foreground() > 0));
    }

    #[test]
    fn seed_on_last_frame_goes_backward_only() {
        let m = meta(10);
        let map = merge_runs(
            &[moving_square(0..10, |_| 60.0)],
            &m,
            &MergeConfig::default(),
        )
        .unwrap();
        let cfg = MaskGenConfig::default();
        let mut seed = BinaryMask::new(160, 120);
        seed.set(65, 45, true);
        let seq =
            propagate_mask(&map, "s", &seed, 9, 1, &cfg, &GeometricTracker::default()).unwrap();
        assert_eq!(*seq.frames.keys().last().unwrap(), 9);
        assert_eq!(*seq.frames.keys().next().unwrap(), 0);
    }

    #[test]
    fn empty_seed_rejected() {
        let m = meta(3);
        let map = merge_runs(
            &[moving_square(0..3, |_| 60.0)],
            &m,
            &MergeConfig::default(),
        )
        .unwrap();
        let cfg = MaskGenConfig::default();
        let seed = BinaryMask::new(160, 120);
        assert!(
            propagate_mask(&map, "s", &seed, 1, 1, &cfg, &GeometricTracker::default()).is_err()
        );
    }

    #[test]
    fn superimpose_counts() {
        let a = seq_with(&[(0, mask(0b0000_0000_0000_1111))]);
        let b = seq_with(&[(0, mask(0b0000_0000_0011_1100)), (2, mask(1))]);
        let u = superimpose(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(u.object_id, 0);
        assert_eq!(u.frames[&0].foreground(), 4 + 4 - 2);
        assert_eq!(u.frames[&2].foreground(), 1);
        let single = superimpose(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.frames, a.frames);
    }

    #[test]
    fn superimpose_rejects_mismatch() {
        let a = seq_with(&[]);
        let b = MaskSequence::new("s", 1, 5, 4);
        assert!(superimpose(&[a.clone(), b]).is_err());
        assert!(superimpose(&[]).is_err());
        let c = MaskSequence::new("other", 1, 4, 4);
        assert!(superimpose(&[a, c]).is_err());
    }

    struct OutsideBox;
    impl SegmenterPlugin for OutsideBox {
        fn refine(&self, w: &FrameWindow<'_>, _b: &BBox) -> Result<BinaryMask> {
            let mut m = BinaryMask::new(w.width(), w.height());
            m.set(0, 0, true);
            Ok(m)
        }
    }

    #[test]
    fn plugin_contract_is_enforced() {
        let m = meta(3);
        let map = merge_runs(
            &[moving_square(0..3, |_| 60.0)],
            &m,
            &MergeConfig::default(),
        )
        .unwrap();
        let b = BBox::new(1, 50.0, 30.0, 90.0, 70.0).unwrap();
        let err = refine_box(&map, "s", &b, &MaskGenConfig::default(), &OutsideBox).unwrap_err();
        assert!(matches!(err, Error::Plugin(_)));
    }
}
