//! Binary rasters, their run-length encoding, and per-frame mask sequences.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BBox;

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    pixels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::validation(
                "mask",
                format!("{} pixels for a {width}x{height} raster", pixels.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = value;
    }

    /// Membership of a continuous coordinate, using the pixel it falls in.
    /// Coordinates outside the raster are background.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        if !(x >= 0.0 && y >= 0.0) {
            return false;
        }
        let (px, py) = (x.floor() as u64, y.floor() as u64);
        px < self.width as u64 && py < self.height as u64 && self.get(px as u32, py as u32)
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn or_assign(&mut self, other: &BinaryMask) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::validation(
                "mask",
                format!(
                    "shape mismatch {}x{} vs {}x{}",
                    self.width, self.height, other.width, other.height
                ),
            ));
        }
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            *a |= *b;
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// Tight pixel bounding box of the foreground, `None` when empty.
    pub fn bounding_box(&self, frame: u32) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        for y in 0..self.height {
            let row = &self.pixels[(y * self.width) as usize..((y + 1) * self.width) as usize];
            if let Some(first) = row.iter().position(|&p| p) {
                let last = row.iter().rposition(|&p| p).unwrap_or(first);
                x0 = x0.min(first as u32);
                x1 = x1.max(last as u32 + 1);
                y0 = y0.min(y);
                y1 = y + 1;
            }
        }
        (x0 != u32::MAX).then_some(BBox {
            frame,
            x0: x0 as f64,
            y0: y0 as f64,
            x1: x1 as f64,
            y1: y1 as f64,
        })
    }

    /// Number of foreground pixels inside `bbox`.
    pub fn count_in_box(&self, bbox: &BBox) -> usize {
        let Some(b) = bbox.clip(self.width, self.height) else {
            return 0;
        };
        let (x0, x1) = (b.x0.floor() as u32, (b.x1.ceil() as u32).min(self.width));
        let (y0, y1) = (b.y0.floor() as u32, (b.y1.ceil() as u32).min(self.height));
        let mut n = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                n += self.get(x, y) as usize;
            }
        }
        n
    }

    pub fn encode(&self) -> Rle {
        Rle::encode(self)
    }
}

/// Run-length encoding of a raster in row-major order.
///
/// Runs alternate between values, starting with `first`; every run is
/// strictly positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub first: u8,
    pub runs: Vec<u32>,
}

impl Rle {
    pub fn encode(mask: &BinaryMask) -> Self {
        let mut runs = Vec::new();
        let first = mask.pixels.first().copied().unwrap_or(false);
        let mut current = first;
        let mut len = 0u32;
        for &p in &mask.pixels {
            if p == current {
                len += 1;
            } else {
                runs.push(len);
                current = p;
                len = 1;
            }
        }
        if len > 0 {
            runs.push(len);
        }
        Rle {
            first: first as u8,
            runs,
        }
    }

    /// An all-background encoding.
    pub fn empty(width: u32, height: u32) -> Self {
        Rle {
            first: 0,
            runs: vec![width * height],
        }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        if self.first > 1 {
            return Err(Error::validation(
                "rle",
                format!("first={} not 0|1", self.first),
            ));
        }
        if self.runs.contains(&0) {
            return Err(Error::validation("rle", "zero-length run"));
        }
        let total: u64 = self.runs.iter().map(|&r| r as u64).sum();
        let expected = width as u64 * height as u64;
        if total != expected {
            return Err(Error::validation(
                "rle",
                format!("runs sum to {total}, expected {expected} ({width}x{height})"),
            ));
        }
        Ok(())
    }

    pub fn decode(&self, width: u32, height: u32) -> Result<BinaryMask> {
        self.validate(width, height)?;
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        let mut value = self.first == 1;
        for &r in &self.runs {
            pixels.extend(std::iter::repeat_n(value, r as usize));
            value = !value;
        }
        BinaryMask::from_pixels(width, height, pixels)
    }

    /// Foreground pixel count without decoding.
    pub fn foreground(&self) -> u64 {
        let skip = if self.first == 1 { 0 } else { 1 };
        self.runs
            .iter()
            .skip(skip)
            .step_by(2)
            .map(|&r| r as u64)
            .sum()
    }
}

/// Per-frame masks of one object (or of the union of objects, id 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    pub sequence_id: String,
    pub object_id: u32,
    pub width: u32,
    pub height: u32,
    pub frames: BTreeMap<u32, Rle>,
}

impl MaskSequence {
    pub fn new(sequence_id: impl Into<String>, object_id: u32, width: u32, height: u32) -> Self {
        Self {
            sequence_id: sequence_id.into(),
            object_id,
            width,
            height,
            frames: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, frame: u32, mask: &BinaryMask) -> Result<()> {
        if mask.width() != self.width || mask.height() != self.height {
            return Err(Error::validation(
                "mask sequence",
                format!(
                    "frame {frame}: {}x{} mask in a {}x{} sequence",
                    mask.width(),
                    mask.height(),
                    self.width,
                    self.height
                ),
            ));
        }
        self.frames.insert(frame, mask.encode());
        Ok(())
    }

    pub fn mask(&self, frame: u32) -> Result<Option<BinaryMask>> {
        self.frames
            .get(&frame)
            .map(|rle| rle.decode(self.width, self.height))
            .transpose()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
