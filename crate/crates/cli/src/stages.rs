//! Pipeline stages shared by the single-stage commands and `pipeline`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dynaseg::detector::WindowScore;
use dynaseg::io::{read_masks, read_trajectory, FeatureReader};
use dynaseg::masks::{
    export_training_set, ExternalPlugin, GeometricSegmenter, GeometricTracker, SegmenterPlugin,
    TrackerPlugin,
};
use dynaseg::merge::MergeBuilder;
use dynaseg::metrics::{evaluate, Report, RunResult, SequenceRuns, SystemRuns};
use dynaseg::{
    build_masks, filter_records, scan_sequence, superimpose, track_camera, FeatureRecord,
    MaskSequence, MergedFeatureMap, PipelineConfig, SequenceMeta, TrackerConfig, Trajectory,
};
use rayon::prelude::*;

use crate::layout::{run_file_name, SequenceDir};

pub fn read_records(path: &Path, meta: &SequenceMeta) -> Result<Vec<FeatureRecord>> {
    FeatureReader::open(path, meta)?
        .collect::<dynaseg::Result<Vec<_>>>()
        .with_context(|| format!("reading {}", path.display()))
}

/// Merges feature files, one run per file, reading one file at a time.
pub fn merge(
    meta: &SequenceMeta,
    files: &[PathBuf],
    cfg: &PipelineConfig,
) -> Result<MergedFeatureMap> {
    let mut builder = MergeBuilder::new(meta, cfg.merge.cell_size);
    for f in files {
        builder.add_run(&read_records(f, meta)?)?;
        log::debug!("merged {}", f.display());
    }
    Ok(builder.finish(&cfg.merge)?)
}

pub fn detect(
    map: &MergedFeatureMap,
    meta: &SequenceMeta,
    traj: &Trajectory,
    cfg: &PipelineConfig,
) -> Result<Vec<WindowScore>> {
    let result = scan_sequence(map, traj, &meta.intrinsics, meta.fps, &cfg.detector)?;
    log::info!("{}: {:?}", meta.sequence_id, result.stats);
    Ok(result.flagged)
}

pub struct Plugins {
    pub segmenter: Box<dyn SegmenterPlugin>,
    pub tracker: Box<dyn TrackerPlugin>,
}

impl Plugins {
    pub fn new(
        cfg: &PipelineConfig,
        segmenter: Option<&str>,
        tracker: Option<&str>,
    ) -> Result<Self> {
        let segmenter: Box<dyn SegmenterPlugin> = match segmenter {
            Some(cmd) => Box::new(ExternalPlugin::from_command_line(cmd)?),
            None => Box::new(GeometricSegmenter {
                cfg: cfg.masks.clone(),
            }),
        };
        let tracker: Box<dyn TrackerPlugin> = match tracker {
            Some(cmd) => Box::new(ExternalPlugin::from_command_line(cmd)?),
            None => Box::new(GeometricTracker {
                cfg: cfg.masks.clone(),
            }),
        };
        Ok(Self { segmenter, tracker })
    }
}

pub fn build(
    map: &MergedFeatureMap,
    meta: &SequenceMeta,
    flagged: &[WindowScore],
    cfg: &PipelineConfig,
    plugins: &Plugins,
) -> Result<Vec<MaskSequence>> {
    let (objects, stats) = build_masks(
        map,
        &meta.sequence_id,
        flagged,
        &cfg.masks,
        plugins.segmenter.as_ref(),
        plugins.tracker.as_ref(),
    )?;
    log::info!("{}: {:?}", meta.sequence_id, stats);
    Ok(objects)
}

/// Writes each object's masks as PGM images under `dir/object_NN`.
pub fn export(objects: &[MaskSequence], meta: &SequenceMeta, dir: &Path) -> Result<()> {
    for obj in objects {
        export_training_set(obj, meta, dir.join(format!("object_{:02}", obj.object_id)))?;
    }
    Ok(())
}

/// Union of every object in the mask files, relabeled for `meta`.
pub fn load_union(files: &[PathBuf], meta: &SequenceMeta) -> Result<Option<MaskSequence>> {
    let mut all = Vec::new();
    for f in files {
        all.extend(read_masks(f, meta).with_context(|| format!("reading {}", f.display()))?);
    }
    if all.is_empty() {
        return Ok(None);
    }
    Ok(Some(superimpose(&all)?))
}

pub fn filter(
    records: &[FeatureRecord],
    union: Option<&MaskSequence>,
) -> Result<Vec<FeatureRecord>> {
    match union {
        Some(masks) => {
            let (kept, stats) = filter_records(records, masks)?;
            log::info!("{stats:?}");
            Ok(kept)
        }
        None => Ok(records.to_vec()),
    }
}

pub fn track(
    records: &[FeatureRecord],
    meta: &SequenceMeta,
    landmarks: &Path,
    groundtruth: &Path,
) -> Result<Trajectory> {
    let landmarks = dynaseg::io::read_landmarks(landmarks)?;
    let gt = read_trajectory(groundtruth)?;
    let Some(initial) = gt.poses.first() else {
        bail!("{} has no poses", groundtruth.display());
    };
    Ok(track_camera(
        records,
        &landmarks,
        meta,
        initial,
        &TrackerConfig::default(),
    )?)
}

/// Reads `estimates/<sequence>/<system>/run_NN.txt` for every test sequence.
pub fn evaluate_dirs(
    tests: &[SequenceDir],
    estimates: &Path,
    cfg: &PipelineConfig,
) -> Result<Report> {
    let tol_cfg = &cfg.metrics;
    let inputs = tests
        .par_iter()
        .map(|seq| {
            let meta = &seq.meta;
            let gt = read_trajectory(seq.groundtruth())?;
            let r_gt = gt.len() as f64 / meta.frame_count as f64;
            let root = estimates.join(seq.id());
            let mut systems: BTreeMap<String, Vec<RunResult>> = BTreeMap::new();
            let listing = std::fs::read_dir(&root)
                .with_context(|| format!("listing estimates {}", root.display()))?;
            for entry in listing {
                let entry = entry?;
                if !entry.path().is_dir() {
                    continue;
                }
                let system = entry.file_name().to_string_lossy().into_owned();
                let mut runs = Vec::new();
                for run in 0.. {
                    let path = entry.path().join(run_file_name(run));
                    if !path.is_file() {
                        break;
                    }
                    let est = read_trajectory(&path)?;
                    let tracked = est.len() as u32;
                    let est = Trajectory::with_counts(est.poses, tracked, meta.frame_count)?;
                    runs.push(RunResult {
                        ate: dynaseg::ate_rmse(&est, &gt, tol_cfg.tolerance(meta.fps)),
                        tracking_rate: dynaseg::metrics::tracking_rate(&est)?,
                    });
                }
                if runs.is_empty() {
                    bail!("no run files under {}", entry.path().display());
                }
                systems.insert(system, runs);
            }
            Ok(SequenceRuns {
                sequence: seq.id().to_owned(),
                r_gt,
                systems: systems
                    .into_iter()
                    .map(|(system, runs)| SystemRuns { system, runs })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate(&inputs, &cfg.metrics)?)
}

pub fn write_report(path: &Path, report: &Report) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}
