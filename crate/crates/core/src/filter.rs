//! Removal of keypoints that fall on masked pixels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskSequence};
use crate::types::FeatureRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub frame: u32,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filtered<T> {
    pub kept: T,
    /// Set when the frame had no mask and everything passed through.
    pub unmasked: bool,
}

/// Keeps keypoints whose pixel `(floor(x), floor(y))` is background.
pub fn filter_keypoints(kps: &KeypointSet, mask: Option<&BinaryMask>) -> Filtered<KeypointSet> {
    let Some(mask) = mask else {
        return Filtered {
            kept: kps.clone(),
            unmasked: true,
        };
    };
    Filtered {
        kept: KeypointSet {
            frame: kps.frame,
            points: kps
                .points
                .iter()
                .copied()
                .filter(|&(x, y)| !mask.contains(x, y))
                .collect(),
        },
        unmasked: false,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input: u64,
    pub removed: u64,
    pub unmasked_frames: u64,
}

/// Filters a record stream frame by frame against a mask sequence.
pub fn filter_records(
    records: &[FeatureRecord],
    masks: &MaskSequence,
) -> Result<(Vec<FeatureRecord>, FilterStats)> {
    let mut decoded: BTreeMap<u32, Option<BinaryMask>> = BTreeMap::new();
    let mut stats = FilterStats::default();
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        stats.input += 1;
        let mask = match decoded.get(&r.frame) {
            Some(m) => m,
            None => {
                let m = masks.mask(r.frame)?;
                if m.is_none() {
                    stats.unmasked_frames += 1;
                }
                if decoded.len() > 8 {
                    decoded.pop_first();
                }
                decoded.entry(r.frame).or_insert(m)
            }
        };
        match mask {
            Some(m) if m.contains(r.x, r.y) => stats.removed += 1,
            _ => kept.push(*r),
        }
    }
    Ok((kept, stats))
}

/// Checks that a mask sequence matches an image size.
pub fn check_mask_size(masks: &MaskSequence, width: u32, height: u32) -> Result<()> {
    if masks.width != width || masks.height != height {
        return Err(Error::validation(
            "masks",
            format!(
                "{}x{} masks for a {width}x{height} sequence",
                masks.width, masks.height
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FeatureStatus;

    fn half_plane() -> BinaryMask {
        let mut m = BinaryMask::new(1280, 4);
        for y in 0..4 {
            for x in 0..640 {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn half_plane_keeps_right_side() {
        let kps = KeypointSet {
            frame: 0,
            points: vec![(100.0, 1.0), (900.0, 2.0)],
        };
        let out = filter_keypoints(&kps, Some(&half_plane()));
        assert_eq!(out.kept.points, vec![(900.0, 2.0)]);
        assert!(!out.unmasked);
    }

    #[test]
    fn empty_full_and_missing_masks() {
        let kps = KeypointSet {
            frame: 0,
            points: vec![(1.5, 1.5), (3.2, 0.1)],
        };
        let empty = BinaryMask::new(4, 4);
        assert_eq!(filter_keypoints(&kps, Some(&empty)).kept, kps);
        let full = BinaryMask::from_pixels(4, 4, vec![true; 16]).unwrap();
        assert!(filter_keypoints(&kps, Some(&full)).kept.points.is_empty());
        let missing = filter_keypoints(&kps, None);
        assert!(missing.unmasked);
        assert_eq!(missing.kept, kps);
    }

    #[test]
    fn records_follow_their_frame_mask() {
        let mut seq = MaskSequence::new("s", 0, 1280, 4);
        seq.insert(1, &half_plane()).unwrap();
        let recs = vec![
            FeatureRecord::new(0, 100.0, 1.0, FeatureStatus::Inlier, 0),
            FeatureRecord::new(1, 100.0, 1.0, FeatureStatus::Inlier, 0),
            FeatureRecord::new(1, 700.0, 1.0, FeatureStatus::Outlier, 0),
        ];
        let (kept, stats) = filter_records(&recs, &seq).unwrap();
        assert_eq!(kept, vec![recs[0], recs[2]]);
        assert_eq!(stats.removed, 1);
        assert_eq!(stats.unmasked_frames, 1);
    }
}
