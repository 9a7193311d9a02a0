use std::io::Write;
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::refine::{geometric_refine, MaskGenConfig};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Rle};
use crate::merge::MergedFeatureMap;
use crate::types::BBox;

/// The frames a plugin call may look at.
#[derive(Debug, Clone)]
pub struct FrameWindow<'a> {
    pub map: &'a MergedFeatureMap,
    pub sequence_id: &'a str,
    pub frames: RangeInclusive<u32>,
    /// Frame the returned mask belongs to.
    pub target: u32,
}

impl FrameWindow<'_> {
    pub fn width(&self) -> u32 {
        self.map.grid().width
    }

    pub fn height(&self) -> u32 {
        self.map.grid().height
    }
}

/// Produces one mask for a merged box. An empty mask drops the box.
pub trait SegmenterPlugin: Sync {
    fn refine(&self, window: &FrameWindow<'_>, bbox: &BBox) -> Result<BinaryMask>;
}

/// Carries a mask from one frame to the next. An empty mask is a miss.
pub trait TrackerPlugin: Sync {
    fn track(&self, previous: &BinaryMask, next: &FrameWindow<'_>) -> Result<BinaryMask>;
}

#[derive(Debug, Clone, Default)]
pub struct GeometricSegmenter {
    pub cfg: MaskGenConfig,
}

impl SegmenterPlugin for GeometricSegmenter {
    fn refine(&self, window: &FrameWindow<'_>, bbox: &BBox) -> Result<BinaryMask> {
        geometric_refine(window.map, window.frames.clone(), bbox, &self.cfg)
    }
}

/// Re-runs the refiner on the target frame around the previous mask.
#[derive(Debug, Clone, Default)]
pub struct GeometricTracker {
    pub cfg: MaskGenConfig,
}

impl TrackerPlugin for GeometricTracker {
    fn track(&self, previous: &BinaryMask, next: &FrameWindow<'_>) -> Result<BinaryMask> {
        let Some(bbox) = previous.bounding_box(next.target) else {
            return Ok(BinaryMask::new(next.width(), next.height()));
        };
        let region = bbox.expand(self.cfg.search_margin as f64);
        geometric_refine(next.map, next.target..=next.target, &region, &self.cfg)
    }
}

pub(crate) fn check_shape(mask: &BinaryMask, window: &FrameWindow<'_>) -> Result<()> {
    if mask.width() != window.width() || mask.height() != window.height() {
        return Err(Error::Plugin(format!(
            "returned a {}x{} mask for a {}x{} sequence",
            mask.width(),
            mask.height(),
            window.width(),
            window.height()
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum PluginRequest<'a> {
    Refine {
        sequence: &'a str,
        width: u32,
        height: u32,
        frames: [u32; 2],
        target: u32,
        #[serde(rename = "box")]
        bbox: [f64; 4],
    },
    Track {
        sequence: &'a str,
        width: u32,
        height: u32,
        frames: [u32; 2],
        target: u32,
        previous: RleRef<'a>,
    },
}

#[derive(Debug, Serialize)]
struct RleRef<'a> {
    first: u8,
    rle: &'a [u32],
}

#[derive(Debug, Deserialize)]
struct PluginResponse {
    first: u8,
    rle: Vec<u32>,
}

/// A segmenter/tracker implemented by an external executable. The request is
/// one JSON object on stdin; the reply is `{"first":0|1,"rle":[...]}` on stdout.
#[derive(Debug, Clone)]
pub struct ExternalPlugin {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ExternalPlugin {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    /// Splits a shell-like command line on whitespace.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Plugin("empty plugin command".into()))?;
        Ok(Self::new(program, parts.map(str::to_owned).collect()))
    }

    fn call(&self, request: &PluginRequest<'_>, width: u32, height: u32) -> Result<BinaryMask> {
        let payload = serde_json::to_vec(request)?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Plugin(format!("{}: {e}", self.program.display())))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin
                .write_all(&payload)
                .and_then(|_| stdin.write_all(b"\n"))
                .map_err(|e| Error::Plugin(format!("writing request: {e}")))?;
        }
        let output = child
            .wait_with_output()
            .map_err(|e| Error::Plugin(format!("{}: {e}", self.program.display())))?;
        if !output.status.success() {
            return Err(Error::Plugin(format!(
                "{} exited with {}",
                self.program.display(),
                output.status
            )));
        }
        let reply: PluginResponse = serde_json::from_slice(&output.stdout)
            .map_err(|e| Error::Plugin(format!("bad reply: {e}")))?;
        Rle {
            first: reply.first,
            runs: reply.rle,
        }
        .decode(width, height)
        .map_err(|e| Error::Plugin(e.to_string()))
    }
}

impl SegmenterPlugin for ExternalPlugin {
    fn refine(&self, window: &FrameWindow<'_>, bbox: &BBox) -> Result<BinaryMask> {
        let req = PluginRequest::Refine {
            sequence: window.sequence_id,
            width: window.width(),
            height: window.height(),
            frames: [*window.frames.start(), *window.frames.end()],
            target: window.target,
            bbox: bbox.as_array(),
        };
        self.call(&req, window.width(), window.height())
    }
}

impl TrackerPlugin for ExternalPlugin {
    fn track(&self, previous: &BinaryMask, next: &FrameWindow<'_>) -> Result<BinaryMask> {
        let rle = previous.encode();
        let req = PluginRequest::Track {
            sequence: next.sequence_id,
            width: next.width(),
            height: next.height(),
            frames: [*next.frames.start(), *next.frames.end()],
            target: next.target,
            previous: RleRef {
                first: rle.first,
                rle: &rle.runs,
            },
        };
        self.call(&req, next.width(), next.height())
    }
}
