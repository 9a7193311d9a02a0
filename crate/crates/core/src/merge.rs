//! Accumulation of inlier/outlier observations from several SLAM runs on a
//! per-frame quantized grid, with removal of rarely observed cells.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BBox, FeatureRecord, FeatureStatus, SequenceMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Grid cell edge in pixels.
    pub cell_size: u32,
    /// A cell/status survives when seen in at least `ceil(fraction * runs)` runs.
    pub min_run_fraction: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            cell_size: 8,
            min_run_fraction: 0.3,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size < 1 {
            return Err(Error::Config("cell_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_run_fraction) {
            return Err(Error::Config("min_run_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn min_runs(&self, total_runs: u32) -> u32 {
        // guard against 0.3 * 10 = 3.0000000000000004
        let raw = self.min_run_fraction * total_runs as f64;
        (raw - 1e-9).ceil().max(0.0) as u32
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub inlier_obs: u32,
    pub outlier_obs: u32,
    pub inlier_runs: u32,
    pub outlier_runs: u32,
}

impl CellCounts {
    fn is_zero(&self) -> bool {
        self.inlier_obs == 0 && self.outlier_obs == 0
    }
}

/// Grid geometry shared by builders and maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub width: u32,
    pub height: u32,
    pub cell_size: u32,
    pub cols: u32,
    pub rows: u32,
}

impl Grid {
    pub fn new(width: u32, height: u32, cell_size: u32) -> Self {
        Self {
            width,
            height,
            cell_size,
            cols: width.div_ceil(cell_size),
            rows: height.div_ceil(cell_size),
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> u32 {
        let cs = self.cell_size as f64;
        let cx = ((x / cs).floor() as u32).min(self.cols - 1);
        let cy = ((y / cs).floor() as u32).min(self.rows - 1);
        cy * self.cols + cx
    }

    pub fn cell_xy(&self, idx: u32) -> (u32, u32) {
        (idx % self.cols, idx / self.cols)
    }

    pub fn cell_center(&self, idx: u32) -> (f64, f64) {
        let (cx, cy) = self.cell_xy(idx);
        let cs = self.cell_size as f64;
        ((cx as f64 + 0.5) * cs, (cy as f64 + 0.5) * cs)
    }

    /// Half-open index ranges of cells whose centers lie in `[x0,x1) x [y0,y1)`.
    /// A box reaching the image border also takes the partial border cells.
    pub fn cell_range(&self, b: &BBox) -> (std::ops::Range<u32>, std::ops::Range<u32>) {
        let cs = self.cell_size as f64;
        let lo = |v: f64, n: u32| ((v / cs - 0.5).ceil().max(0.0) as u32).min(n);
        let hi = |v: f64, n: u32, edge: u32| if v >= edge as f64 { n } else { lo(v, n) };
        (
            lo(b.x0, self.cols)..hi(b.x1, self.cols, self.width),
            lo(b.y0, self.rows)..hi(b.y1, self.rows, self.height),
        )
    }
}

type FrameCells = HashMap<u32, CellCounts>;

/// Incremental, order-independent merge of runs. Partial builders over
/// disjoint run sets combine with [`MergeBuilder::combine`].
#[derive(Debug, Clone)]
pub struct MergeBuilder {
    grid: Grid,
    frame_count: u32,
    frames: Vec<FrameCells>,
    total_runs: u32,
}

impl MergeBuilder {
    pub fn new(meta: &SequenceMeta, cell_size: u32) -> Self {
        Self {
            grid: Grid::new(meta.image_width, meta.image_height, cell_size.max(1)),
            frame_count: meta.frame_count,
            frames: vec![FrameCells::new(); meta.frame_count as usize],
            total_runs: 0,
        }
    }

    /// Adds one run. Every record must already be validated against the meta.
    pub fn add_run<'a>(
        &mut self,
        records: impl IntoIterator<Item = &'a FeatureRecord>,
    ) -> Result<()> {
        let mut partial: Vec<HashMap<u32, (u32, u32)>> = Vec::new();
        for r in records {
            if r.frame >= self.frame_count {
                return Err(Error::FrameOutOfRange {
                    frame: r.frame,
                    frames: self.frame_count,
                });
            }
            if partial.is_empty() {
                partial = vec![HashMap::new(); self.frame_count as usize];
            }
            let cell = self.grid.cell_of(r.x, r.y);
            let e = partial[r.frame as usize].entry(cell).or_default();
            match r.status {
                FeatureStatus::Inlier => e.0 += 1,
                FeatureStatus::Outlier => e.1 += 1,
            }
        }
        for (frame, cells) in partial.into_iter().enumerate() {
            let target = &mut self.frames[frame];
            for (cell, (n_in, n_out)) in cells {
                let c = target.entry(cell).or_default();
                c.inlier_obs += n_in;
                c.outlier_obs += n_out;
                c.inlier_runs += (n_in > 0) as u32;
                c.outlier_runs += (n_out > 0) as u32;
            }
        }
        self.total_runs += 1;
        Ok(())
    }

    /// Sums two builders covering disjoint runs of the same sequence.
    pub fn combine(mut self, other: MergeBuilder) -> Result<Self> {
        if self.grid != other.grid || self.frame_count != other.frame_count {
            return Err(Error::validation("merge", "builders cover different grids"));
        }
        for (mine, theirs) in self.frames.iter_mut().zip(other.frames) {
            for (cell, c) in theirs {
                let e = mine.entry(cell).or_default();
                e.inlier_obs += c.inlier_obs;
                e.outlier_obs += c.outlier_obs;
                e.inlier_runs += c.inlier_runs;
                e.outlier_runs += c.outlier_runs;
            }
        }
        self.total_runs += other.total_runs;
        Ok(self)
    }

    pub fn finish(self, cfg: &MergeConfig) -> Result<MergedFeatureMap> {
        cfg.validate()?;
        if self.total_runs == 0 {
            return Err(Error::validation("merge", "no runs to merge"));
        }
        let min_runs = cfg.min_runs(self.total_runs);
        let frames = self
            .frames
            .into_iter()
            .map(|cells| {
                let mut out: BTreeMap<u32, CellCounts> = BTreeMap::new();
                for (cell, mut c) in cells {
                    if c.inlier_runs < min_runs {
                        c.inlier_obs = 0;
                        c.inlier_runs = 0;
                    }
                    if c.outlier_runs < min_runs {
                        c.outlier_obs = 0;
                        c.outlier_runs = 0;
                    }
                    if !c.is_zero() {
                        out.insert(cell, c);
                    }
                }
                out
            })
            .collect();
        Ok(MergedFeatureMap {
            grid: self.grid,
            total_runs: self.total_runs,
            frames,
        })
    }
}

/// Per-frame grid of filtered inlier/outlier observation counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedFeatureMap {
    grid: Grid,
    total_runs: u32,
    frames: Vec<BTreeMap<u32, CellCounts>>,
}

/// Merges runs of one sequence. Each inner slice is one run.
pub fn merge_runs(
    runs: &[Vec<FeatureRecord>],
    meta: &SequenceMeta,
    cfg: &MergeConfig,
) -> Result<MergedFeatureMap> {
    cfg.validate()?;
    if runs.is_empty() {
        return Err(Error::validation("merge", "no runs to merge"));
    }
    let mut builder = MergeBuilder::new(meta, cfg.cell_size);
    for run in runs {
        for r in run {
            r.validate(meta)?;
        }
        builder.add_run(run)?;
    }
    builder.finish(cfg)
}

impl MergedFeatureMap {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn total_runs(&self) -> u32 {
        self.total_runs
    }

    pub fn frame_count(&self) -> u32 {
        self.frames.len() as u32
    }

    /// Nonzero cells of a frame, keyed by row-major cell index.
    pub fn frame(&self, frame: u32) -> Result<&BTreeMap<u32, CellCounts>> {
        self.frames
            .get(frame as usize)
            .ok_or(Error::FrameOutOfRange {
                frame,
                frames: self.frame_count(),
            })
    }

    /// Inlier and outlier totals over cells whose centers lie in `bbox`.
    pub fn window_counts(&self, frame: u32, bbox: &BBox) -> Result<(u64, u64)> {
        let cells = self.frame(frame)?;
        let (xs, ys) = self.grid.cell_range(bbox);
        let (mut n_in, mut n_out) = (0u64, 0u64);
        if xs.is_empty() || ys.is_empty() {
            return Ok((0, 0));
        }
        for y in ys {
            let row = y * self.grid.cols;
            for (_, c) in cells.range(row + xs.start..row + xs.end) {
                n_in += c.inlier_obs as u64;
                n_out += c.outlier_obs as u64;
            }
        }
        Ok((n_in, n_out))
    }

    /// Summed-area table for constant-time window queries on one frame.
    pub fn integral(&self, frame: u32) -> Result<FrameIntegral> {
        let cells = self.frame(frame)?;
        let (cols, rows) = (self.grid.cols as usize, self.grid.rows as usize);
        let stride = cols + 1;
        let mut inl = vec![0u64; stride * (rows + 1)];
        let mut out = vec![0u64; stride * (rows + 1)];
        for (&idx, c) in cells {
            let (cx, cy) = self.grid.cell_xy(idx);
            let at = (cy as usize + 1) * stride + cx as usize + 1;
            inl[at] = c.inlier_obs as u64;
            out[at] = c.outlier_obs as u64;
        }
        for y in 1..=rows {
            for x in 1..=cols {
                let i = y * stride + x;
                inl[i] += inl[i - 1] + inl[i - stride] - inl[i - stride - 1];
                out[i] += out[i - 1] + out[i - stride] - out[i - stride - 1];
            }
        }
        Ok(FrameIntegral {
            grid: self.grid,
            inlier: inl,
            outlier: out,
        })
    }

    /// Writes nonzero cells as JSON lines, preceded by a header record.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let header = MapHeader {
            cell_size: self.grid.cell_size,
            cols: self.grid.cols,
            rows: self.grid.rows,
            frames: self.frame_count(),
            total_runs: self.total_runs,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        for (frame, cells) in self.frames.iter().enumerate() {
            for (&idx, c) in cells {
                let (cx, cy) = self.grid.cell_xy(idx);
                let line = CellLine {
                    frame: frame as u32,
                    cell: [cx, cy],
                    r#in: c.inlier_obs,
                    out: c.outlier_obs,
                    runs_in: c.inlier_runs,
                    runs_out: c.outlier_runs,
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>, meta: &SequenceMeta) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines().enumerate();
        let bad = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let header: MapHeader = match lines.next() {
            Some((_, Ok(l))) => serde_json::from_str(&l).map_err(|e| bad(1, e.to_string()))?,
            Some((_, Err(e))) => return Err(Error::io(path, e)),
            None => return Err(bad(1, "missing header".into())),
        };
        let grid = Grid::new(meta.image_width, meta.image_height, header.cell_size.max(1));
        if grid.cols != header.cols || grid.rows != header.rows || header.frames != meta.frame_count
        {
            return Err(bad(1, "header does not match sequence meta".into()));
        }
        let mut frames = vec![BTreeMap::new(); header.frames as usize];
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let c: CellLine = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
            if c.frame >= header.frames || c.cell[0] >= grid.cols || c.cell[1] >= grid.rows {
                return Err(bad(i + 1, "cell outside grid".into()));
            }
            if c.runs_in > header.total_runs || c.runs_out > header.total_runs {
                return Err(bad(i + 1, "runs_seen exceeds total runs".into()));
            }
            frames[c.frame as usize].insert(
                c.cell[1] * grid.cols + c.cell[0],
                CellCounts {
                    inlier_obs: c.r#in,
                    outlier_obs: c.out,
                    inlier_runs: c.runs_in,
                    outlier_runs: c.runs_out,
                },
            );
        }
        Ok(Self {
            grid,
            total_runs: header.total_runs,
            frames,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MapHeader {
    cell_size: u32,
    cols: u32,
    rows: u32,
    frames: u32,
    total_runs: u32,
}

#[derive(Serialize, Deserialize)]
struct CellLine {
    frame: u32,
    cell: [u32; 2],
    r#in: u32,
    out: u32,
    runs_in: u32,
    runs_out: u32,
}

/// Summed-area tables of one frame's inlier and outlier counts.
#[derive(Debug, Clone)]
pub struct FrameIntegral {
    grid: Grid,
    inlier: Vec<u64>,
    outlier: Vec<u64>,
}

impl FrameIntegral {
    pub fn counts(&self, bbox: &BBox) -> (u64, u64) {
        let (xs, ys) = self.grid.cell_range(bbox);
        if xs.is_empty() || ys.is_empty() {
            return (0, 0);
        }
        let stride = self.grid.cols as usize + 1;
        let (x0, x1, y0, y1) = (
            xs.start as usize,
            xs.end as usize,
            ys.start as usize,
            ys.end as usize,
        );
        let sum = |t: &[u64]| {
            t[y1 * stride + x1] + t[y0 * stride + x0] - t[y0 * stride + x1] - t[y1 * stride + x0]
        };
        (sum(&self.inlier), sum(&self.outlier))
    }
}
