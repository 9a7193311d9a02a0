//! Readers and writers for the on-disk formats.
//!
//! * feature records: JSON lines `{"frame","x","y","status":"in"|"out","run"[,"track"]}`
//! * trajectories: TUM text, `timestamp tx ty tz qx qy qz qw`
//! * masks: JSON lines `{"frame","object","rle":[..],"first":0|1}`, PGM export
//! * sequence meta: flat `key = value`
//! * landmarks: JSON lines `{"track","x","y","z"}`

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskSequence, Rle};
use crate::types::{CameraIntrinsics, FeatureRecord, Pose, SequenceMeta, Trajectory};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Streams feature records from a JSON-lines file, validating each one.
pub struct FeatureReader<'a> {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    meta: &'a SequenceMeta,
}

impl<'a> FeatureReader<'a> {
    pub fn open(path: impl AsRef<Path>, meta: &'a SequenceMeta) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let lines = open(&path)?.lines();
        Ok(Self {
            path,
            lines,
            line_no: 0,
            meta,
        })
    }
}

impl Iterator for FeatureReader<'_> {
    type Item = Result<FeatureRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            let rec: FeatureRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => return Some(Err(parse_err(&self.path, self.line_no, e.to_string()))),
            };
            if let Err(e) = rec.validate(self.meta) {
                return Some(Err(parse_err(&self.path, self.line_no, e.to_string())));
            }
            return Some(Ok(rec));
        }
    }
}

/// Reads every record of a feature file, grouped by frame.
pub fn read_feature_records(
    path: impl AsRef<Path>,
    meta: &SequenceMeta,
) -> Result<BTreeMap<u32, Vec<FeatureRecord>>> {
    let mut grouped: BTreeMap<u32, Vec<FeatureRecord>> = BTreeMap::new();
    for rec in FeatureReader::open(path, meta)? {
        let rec = rec?;
        grouped.entry(rec.frame).or_default().push(rec);
    }
    Ok(grouped)
}

pub fn write_feature_records<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a FeatureRecord>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses TUM trajectory text. Tracked/total frame counts are both set to
/// the pose count; callers that know the sequence length adjust them.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let mut poses: Vec<Pose> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, line_no, format!("bad number: {e}")))?;
        if fields.len() != 8 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, line_no, "non-finite value"));
        }
        let pose = Pose::from_xyzw(
            fields[0],
            [fields[1], fields[2], fields[3]],
            [fields[4], fields[5], fields[6], fields[7]],
        )
        .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        if let Some(prev) = poses.last() {
            if pose.timestamp <= prev.timestamp {
                return Err(parse_err(
                    path,
                    line_no,
                    format!(
                        "timestamp {} does not follow {}",
                        pose.timestamp, prev.timestamp
                    ),
                ));
            }
        }
        poses.push(pose);
    }
    Trajectory::new(poses)
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in &traj.poses {
        let q = p.quaternion_xyzw();
        let t = &p.translation;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            p.timestamp, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        ));
    }
    out
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_all(format_trajectory(traj).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parses a flat `key = value` file into ordered pairs, skipping `#` comments.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, i + 1, "expected `key = value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

pub fn read_meta(path: impl AsRef<Path>) -> Result<SequenceMeta> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_meta(&text, path)
}

pub fn parse_meta(text: &str, path: &Path) -> Result<SequenceMeta> {
    let mut id = None;
    let mut scene = None;
    let mut nums: BTreeMap<&'static str, f64> = BTreeMap::new();
    const NUMERIC: [&str; 8] = ["width", "height", "fps", "frames", "fx", "fy", "cx", "cy"];
    for (k, v, line) in parse_key_values(text, path)? {
        match k.as_str() {
            "id" => id = Some(v),
            "scene" => scene = Some(v),
            other => {
                let key = NUMERIC
                    .iter()
                    .find(|n| **n == other)
                    .ok_or_else(|| parse_err(path, line, format!("unknown key `{other}`")))?;
                let val: f64 = v
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("`{other}` is not a number")))?;
                nums.insert(key, val);
            }
        }
    }
    let get = |k: &str| {
        nums.get(k)
            .copied()
            .ok_or_else(|| parse_err(path, 0, format!("missing key `{k}`")))
    };
    let as_count = |k: &str| -> Result<u32> {
        let v = get(k)?;
        if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
            return Err(parse_err(
                path,
                0,
                format!("`{k}` must be a non-negative integer"),
            ));
        }
        Ok(v as u32)
    };
    let meta = SequenceMeta {
        sequence_id: id.ok_or_else(|| parse_err(path, 0, "missing key `id`"))?,
        image_width: as_count("width")?,
        image_height: as_count("height")?,
        fps: get("fps")?,
        frame_count: as_count("frames")?,
        intrinsics: CameraIntrinsics {
            fx: get("fx")?,
            fy: get("fy")?,
            cx: get("cx")?,
            cy: get("cy")?,
        },
        scene,
    };
    meta.validate()?;
    Ok(meta)
}

pub fn format_meta(meta: &SequenceMeta) -> String {
    let k = &meta.intrinsics;
    let mut s = format!(
        "id = {}\nwidth = {}\nheight = {}\nfps = {}\nframes = {}\nfx = {}\nfy = {}\ncx = {}\ncy = {}\n",
        meta.sequence_id,
        meta.image_width,
        meta.image_height,
        meta.fps,
        meta.frame_count,
        k.fx,
        k.fy,
        k.cx,
        k.cy
    );
    if let Some(scene) = &meta.scene {
        s.push_str(&format!("scene = {scene}\n"));
    }
    s
}

pub fn write_meta(meta: &SequenceMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_meta(meta)).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct MaskLine {
    frame: u32,
    object: u32,
    rle: Vec<u32>,
    first: u8,
}

/// Reads a mask JSON-lines file into one sequence per object id.
pub fn read_masks(path: impl AsRef<Path>, meta: &SequenceMeta) -> Result<Vec<MaskSequence>> {
    let path = path.as_ref();
    let mut by_object: BTreeMap<u32, MaskSequence> = BTreeMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ml: MaskLine =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        if ml.frame >= meta.frame_count {
            return Err(parse_err(
                path,
                i + 1,
                format!("frame {} beyond sequence length", ml.frame),
            ));
        }
        let rle = Rle {
            first: ml.first,
            runs: ml.rle,
        };
        rle.validate(meta.image_width, meta.image_height)
            .map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let seq = by_object.entry(ml.object).or_insert_with(|| {
            MaskSequence::new(
                meta.sequence_id.clone(),
                ml.object,
                meta.image_width,
                meta.image_height,
            )
        });
        if seq.frames.insert(ml.frame, rle).is_some() {
            return Err(parse_err(
                path,
                i + 1,
                format!("duplicate mask for object {} frame {}", ml.object, ml.frame),
            ));
        }
    }
    Ok(by_object.into_values().collect())
}

pub fn write_masks<'a>(
    path: impl AsRef<Path>,
    masks: impl IntoIterator<Item = &'a MaskSequence>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for seq in masks {
        for (&frame, rle) in &seq.frames {
            let line = MaskLine {
                frame,
                object: seq.object_id,
                rle: rle.runs.clone(),
                first: rle.first,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Binary PGM (P5), maxval 255, foreground 255.
pub fn encode_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.pixels().iter().map(|&p| if p { 255u8 } else { 0 }));
    out
}

pub fn write_pgm(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub track: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Landmark {
    pub fn point(&self) -> Point3<f64> {
        Point3::new(self.x, self.y, self.z)
    }
}

pub fn read_landmarks(path: impl AsRef<Path>) -> Result<BTreeMap<u64, Point3<f64>>> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lm: Landmark =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        if out.insert(lm.track, lm.point()).is_some() {
            return Err(parse_err(
                path,
                i + 1,
                format!("duplicate track {}", lm.track),
            ));
        }
    }
    Ok(out)
}

pub fn write_landmarks(
    path: impl AsRef<Path>,
    landmarks: &BTreeMap<u64, Point3<f64>>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for (&track, p) in landmarks {
        serde_json::to_writer(
            &mut w,
            &Landmark {
                track,
                x: p.x,
                y: p.y,
                z: p.z,
            },
        )?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
