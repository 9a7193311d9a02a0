use std::collections::BTreeMap;

use crate::detector::WindowScore;
use crate::types::BBox;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Replaces every connected group of overlapping boxes with its hull,
/// repeating until no two output boxes overlap.
pub fn merge_frame_boxes(boxes: &[BBox]) -> Vec<BBox> {
    let mut current: Vec<BBox> = boxes.to_vec();
    loop {
        let n = current.len();
        let mut parent: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in i + 1..n {
                if current[i].overlaps(&current[j]) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut groups: BTreeMap<usize, BBox> = BTreeMap::new();
        for (i, b) in current.iter().enumerate() {
            let root = find(&mut parent, i);
            groups
                .entry(root)
                .and_modify(|h| *h = h.hull(b))
                .or_insert(*b);
        }
        let merged: Vec<BBox> = groups.into_values().collect();
        if merged.len() == n {
            let mut out = merged;
            out.sort_by(|a, b| a.y0.total_cmp(&b.y0).then(a.x0.total_cmp(&b.x0)));
            return out;
        }
        current = merged;
    }
}

/// Merges the flagged windows of each frame. Output is ordered by frame.
pub fn merge_boxes(flagged: &[WindowScore]) -> Vec<BBox> {
    let mut by_frame: BTreeMap<u32, Vec<BBox>> = BTreeMap::new();
    for ws in flagged {
        by_frame.entry(ws.frame).or_default().push(ws.bbox);
    }
    by_frame
        .values()
        .flat_map(|boxes| merge_frame_boxes(boxes))
        .collect()
}
