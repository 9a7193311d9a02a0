//! Sequence directory layout.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dynaseg::io::read_meta;
use dynaseg::sim::files;
use dynaseg::SequenceMeta;

/// A directory holding one sequence: meta, ground truth, landmarks and one
/// feature file per run.
#[derive(Debug, Clone)]
pub struct SequenceDir {
    pub path: PathBuf,
    pub meta: SequenceMeta,
}

impl SequenceDir {
    pub fn open(path: &Path) -> Result<Self> {
        let meta = read_meta(path.join(files::META))
            .with_context(|| format!("reading sequence {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            meta,
        })
    }

    pub fn id(&self) -> &str {
        &self.meta.sequence_id
    }

    pub fn groundtruth(&self) -> PathBuf {
        self.path.join(files::GROUNDTRUTH)
    }

    pub fn landmarks(&self) -> PathBuf {
        self.path.join(files::LANDMARKS)
    }

    /// Feature files in run order.
    pub fn feature_files(&self) -> Result<Vec<PathBuf>> {
        let mut runs = Vec::new();
        for entry in std::fs::read_dir(&self.path)
            .with_context(|| format!("listing {}", self.path.display()))?
        {
            let entry = entry?;
            if let Some(run) = entry.file_name().to_str().and_then(files::feature_run) {
                runs.push((run, entry.path()));
            }
        }
        runs.sort();
        Ok(runs.into_iter().map(|(_, p)| p).collect())
    }
}

/// `dir` itself when it holds a sequence, otherwise its sequence
/// subdirectories in name order.
pub fn discover(dir: &Path) -> Result<Vec<SequenceDir>> {
    if dir.join(files::META).is_file() {
        return Ok(vec![SequenceDir::open(dir)?]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(files::META).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|p| SequenceDir::open(p)).collect()
}

pub fn run_file_name(run: usize) -> String {
    format!("run_{run:02}.txt")
}
