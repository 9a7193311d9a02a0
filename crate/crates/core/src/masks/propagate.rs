use super::plugin::{check_shape, FrameWindow, TrackerPlugin};
use super::refine::MaskGenConfig;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskSequence};
use crate::merge::MergedFeatureMap;

fn step(
    map: &MergedFeatureMap,
    sequence_id: &str,
    previous: &BinaryMask,
    frame: u32,
    tracker: &dyn TrackerPlugin,
) -> Result<BinaryMask> {
    let window = FrameWindow {
        map,
        sequence_id,
        frames: frame..=frame,
        target: frame,
    };
    let mask = tracker.track(previous, &window)?;
    check_shape(&mask, &window)?;
    Ok(mask)
}

/// Tracks a seed mask through neighbouring frames in both directions.
///
/// A direction stops after `max_empty_frames` consecutive misses; misses
/// between two hits are kept as empty masks so coverage stays contiguous.
pub fn propagate_mask(
    map: &MergedFeatureMap,
    sequence_id: &str,
    seed: &BinaryMask,
    seed_frame: u32,
    object_id: u32,
    cfg: &MaskGenConfig,
    tracker: &dyn TrackerPlugin,
) -> Result<MaskSequence> {
    cfg.validate()?;
    if seed.is_empty() {
        return Err(Error::validation("seed mask", "empty"));
    }
    let grid = map.grid();
    if seed.width() != grid.width || seed.height() != grid.height {
        return Err(Error::validation(
            "seed mask",
            format!(
                "{}x{} on a {}x{} sequence",
                seed.width(),
                seed.height(),
                grid.width,
                grid.height
            ),
        ));
    }
    if seed_frame >= map.frame_count() {
        return Err(Error::FrameOutOfRange {
            frame: seed_frame,
            frames: map.frame_count(),
        });
    }

    let mut out = MaskSequence::new(sequence_id, object_id, grid.width, grid.height);
    let at_seed = step(map, sequence_id, seed, seed_frame, tracker)?;
    let seed_hit = !at_seed.is_empty();
    let start = if seed_hit {
        out.insert(seed_frame, &at_seed)?;
        at_seed
    } else {
        seed.clone()
    };

    let forward: Box<dyn Iterator<Item = u32>> = Box::new(seed_frame + 1..map.frame_count());
    let backward: Box<dyn Iterator<Item = u32>> = Box::new((0..seed_frame).rev());
    for frames in [forward, backward] {
        let mut previous = start.clone();
        let mut pending: Vec<u32> = if seed_hit { vec![] } else { vec![seed_frame] };
        for frame in frames {
            let mask = step(map, sequence_id, &previous, frame, tracker)?;
            if mask.is_empty() {
                pending.push(frame);
                if pending.len() as u32 >= cfg.max_empty_frames {
                    break;
                }
                continue;
            }
            let empty = BinaryMask::new(grid.width, grid.height);
            for f in pending.drain(..) {
                out.insert(f, &empty)?;
            }
            out.insert(frame, &mask)?;
            previous = mask;
        }
    }
    Ok(out)
}
