mod layout;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dynaseg::detector::{read_flagged, write_flagged};
use dynaseg::io::{read_trajectory, write_feature_records, write_masks, write_trajectory};
use dynaseg::sim::{Preset, Scenario, ScenarioConfig};
use dynaseg::{MergedFeatureMap, PipelineConfig, SequenceMeta};
use rayon::prelude::*;
use serde::Serialize;

use layout::{discover, run_file_name, SequenceDir};

#[derive(Parser)]
#[command(
    name = "dynaseg",
    version,
    about = "Dynamic object masks from SLAM inlier/outlier streams"
)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override, `key=value`; may repeat and wins over the file.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence with ground truth.
    Simulate(SimulateArgs),
    /// Merge per-run feature files into per-cell counts.
    MergeRuns(MergeArgs),
    /// Flag windows whose outlier share jumps.
    Detect(DetectArgs),
    /// Turn flagged windows into per-object mask sequences.
    BuildMasks(BuildMasksArgs),
    /// Drop features that fall on masked pixels.
    Filter(FilterArgs),
    /// Estimate camera poses from features and a landmark map.
    Track(TrackArgs),
    /// Score estimated trajectories against ground truth.
    Evaluate(EvaluateArgs),
    /// Build masks on example sequences, then filter, track and evaluate test sequences.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    preset: Preset,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    runs: u32,
    /// Output root; the sequence goes to `<out>/<sequence id>`.
    #[arg(long)]
    out: PathBuf,
    /// Shorten the sequence to this many frames.
    #[arg(long)]
    frames: Option<u32>,
    /// Also write the dense-background example twin under this root.
    #[arg(long)]
    twin_out: Option<PathBuf>,
}

#[derive(Args)]
struct SeqArgs {
    /// Sequence directory; supplies defaults for the other inputs.
    #[arg(long)]
    seq: Option<PathBuf>,
    /// Sequence meta file.
    #[arg(long)]
    meta: Option<PathBuf>,
}

impl SeqArgs {
    fn meta(&self) -> Result<SequenceMeta> {
        let path = match (&self.meta, &self.seq) {
            (Some(m), _) => m.clone(),
            (None, Some(dir)) => dir.join(dynaseg::sim::files::META),
            (None, None) => return Err(usage("--meta or --seq is required")),
        };
        Ok(dynaseg::io::read_meta(&path)?)
    }

    fn path_or_seq(&self, explicit: &Option<PathBuf>, name: &str, flag: &str) -> Result<PathBuf> {
        match (explicit, &self.seq) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(name)),
            (None, None) => Err(usage(format!("{flag} or --seq is required"))),
        }
    }

    fn features(&self, explicit: &[PathBuf]) -> Result<Vec<PathBuf>> {
        if !explicit.is_empty() {
            return Ok(explicit.to_vec());
        }
        match &self.seq {
            Some(dir) => SequenceDir::open(dir)?.feature_files(),
            None => Ok(Vec::new()),
        }
    }
}

#[derive(Args)]
struct MergeArgs {
    #[command(flatten)]
    seq: SeqArgs,
    /// Feature files, one per run.
    #[arg(long, num_args = 1..)]
    features: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    seq: SeqArgs,
    /// Merged map from `merge-runs`.
    #[arg(long, conflicts_with = "features")]
    merged: Option<PathBuf>,
    /// Feature files to merge first.
    #[arg(long, num_args = 1..)]
    features: Vec<PathBuf>,
    /// Camera trajectory used to compensate rotation.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildMasksArgs {
    #[command(flatten)]
    seq: SeqArgs,
    #[arg(long)]
    merged: PathBuf,
    #[arg(long)]
    flagged: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// External segmenter command reading JSON requests on stdin.
    #[arg(long)]
    segmenter: Option<String>,
    /// External tracker command reading JSON requests on stdin.
    #[arg(long)]
    tracker: Option<String>,
    /// Also write PGM masks and a manifest per object here.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    seq: SeqArgs,
    #[arg(long)]
    features: PathBuf,
    /// Mask files; all objects are combined.
    #[arg(long, num_args = 1.., required = true)]
    masks: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    seq: SeqArgs,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Trajectory whose first pose starts the tracker.
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Test sequence directory or a directory of them.
    #[arg(long)]
    tests: PathBuf,
    /// Root holding `<sequence>/<system>/run_NN.txt`.
    #[arg(long)]
    estimates: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    tests: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Intermediate outputs; defaults to `<out>.work`.
    #[arg(long)]
    work: Option<PathBuf>,
    #[arg(long)]
    segmenter: Option<String>,
    #[arg(long)]
    tracker: Option<String>,
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    stage: &'a str,
    kind: &'a str,
    message: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DYNASEG_LOG", "warn")).init();
    let cli = Cli::parse();
    let stage = stage_name(&cli.command);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let is_usage = e.downcast_ref::<UsageError>().is_some() || missing_input(&e);
            let record = ErrorRecord {
                stage,
                kind: if is_usage { "usage" } else { "failure" },
                message: format!("{e:#}"),
            };
            eprintln!("{}", serde_json::json!({ "error": record }));
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}

/// A required input file or directory does not exist.
fn missing_input(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::NotFound)
    })
}

fn stage_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Simulate(_) => "simulate",
        Command::MergeRuns(_) => "merge-runs",
        Command::Detect(_) => "detect",
        Command::BuildMasks(_) => "build-masks",
        Command::Filter(_) => "filter",
        Command::Track(_) => "track",
        Command::Evaluate(_) => "evaluate",
        Command::Pipeline(_) => "pipeline",
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path).map_err(|e| usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)
        .map_err(|e| usage(e.to_string()))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .context("starting worker pool")?;
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::MergeRuns(a) => merge_runs(a, &cfg),
        Command::Detect(a) => detect(a, &cfg),
        Command::BuildMasks(a) => build_masks(a, &cfg),
        Command::Filter(a) => filter(a),
        Command::Track(a) => track(a),
        Command::Evaluate(a) => evaluate(a, &cfg),
        Command::Pipeline(a) => pipeline(a, &cfg),
    }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut sc = ScenarioConfig::preset(a.preset, a.seed);
    if let Some(frames) = a.frames {
        sc.frame_count = frames;
    }
    sc.validate().map_err(|e| usage(e.to_string()))?;
    let mut targets = vec![(sc.clone(), a.out.clone())];
    if let Some(dir) = &a.twin_out {
        targets.push((sc.training_twin(), dir.clone()));
    }
    for (cfg, root) in targets {
        let dir = root.join(cfg.sequence_id());
        Scenario::new(cfg)?.emit(&dir, a.runs)?;
        log::info!("wrote {}", dir.display());
    }
    Ok(())
}

fn merge_runs(a: &MergeArgs, cfg: &PipelineConfig) -> Result<()> {
    let meta = a.seq.meta()?;
    let files = a.seq.features(&a.features)?;
    if files.is_empty() {
        return Err(usage("no feature files"));
    }
    stages::ensure_parent(&a.out)?;
    stages::merge(&meta, &files, cfg)?.write_jsonl(&a.out)?;
    Ok(())
}

fn detect(a: &DetectArgs, cfg: &PipelineConfig) -> Result<()> {
    let meta = a.seq.meta()?;
    let map = match &a.merged {
        Some(path) => MergedFeatureMap::read_jsonl(path, &meta)?,
        None => {
            let files = a.seq.features(&a.features)?;
            if files.is_empty() {
                return Err(usage("no feature files"));
            }
            stages::merge(&meta, &files, cfg)?
        }
    };
    let traj_path = a.seq.path_or_seq(
        &a.trajectory,
        dynaseg::sim::files::GROUNDTRUTH,
        "--trajectory",
    )?;
    let traj = read_trajectory(&traj_path)?;
    let flagged = stages::detect(&map, &meta, &traj, cfg)?;
    stages::ensure_parent(&a.out)?;
    write_flagged(&a.out, &flagged)?;
    Ok(())
}

fn build_masks(a: &BuildMasksArgs, cfg: &PipelineConfig) -> Result<()> {
    let meta = a.seq.meta()?;
    let map = MergedFeatureMap::read_jsonl(&a.merged, &meta)?;
    let flagged = read_flagged(&a.flagged)?;
    let plugins = stages::Plugins::new(cfg, a.segmenter.as_deref(), a.tracker.as_deref())?;
    let objects = stages::build(&map, &meta, &flagged, cfg, &plugins)?;
    stages::ensure_parent(&a.out)?;
    write_masks(&a.out, &objects)?;
    if let Some(dir) = &a.export {
        stages::export(&objects, &meta, dir)?;
    }
    Ok(())
}

fn filter(a: &FilterArgs) -> Result<()> {
    let meta = a.seq.meta()?;
    let records = stages::read_records(&a.features, &meta)?;
    let union = stages::load_union(&a.masks, &meta)?;
    let kept = stages::filter(&records, union.as_ref())?;
    stages::ensure_parent(&a.out)?;
    write_feature_records(&a.out, &kept)?;
    Ok(())
}

fn track(a: &TrackArgs) -> Result<()> {
    let meta = a.seq.meta()?;
    let landmarks =
        a.seq
            .path_or_seq(&a.landmarks, dynaseg::sim::files::LANDMARKS, "--landmarks")?;
    let gt = a.seq.path_or_seq(
        &a.groundtruth,
        dynaseg::sim::files::GROUNDTRUTH,
        "--groundtruth",
    )?;
    let records = stages::read_records(&a.features, &meta)?;
    let traj = stages::track(&records, &meta, &landmarks, &gt)?;
    stages::ensure_parent(&a.out)?;
    write_trajectory(&traj, &a.out)?;
    Ok(())
}

fn sequences(dir: &Path) -> Result<Vec<SequenceDir>> {
    let found = discover(dir)?;
    if found.is_empty() {
        return Err(usage(format!("no sequences under {}", dir.display())));
    }
    Ok(found)
}

fn evaluate(a: &EvaluateArgs, cfg: &PipelineConfig) -> Result<()> {
    let tests = sequences(&a.tests)?;
    let report = stages::evaluate_dirs(&tests, &a.estimates, cfg)?;
    stages::write_report(&a.out, &report)
}

pub const UNFILTERED: &str = "unfiltered";
pub const FILTERED: &str = "filtered";

fn pipeline(a: &PipelineArgs, cfg: &PipelineConfig) -> Result<()> {
    let examples = sequences(&a.examples)?;
    let tests = sequences(&a.tests)?;
    let work = a.work.clone().unwrap_or_else(|| {
        let mut w = a.out.clone().into_os_string();
        w.push(".work");
        PathBuf::from(w)
    });
    let plugins = stages::Plugins::new(cfg, a.segmenter.as_deref(), a.tracker.as_deref())?;

    let mut masks_by_scene: std::collections::BTreeMap<String, Vec<PathBuf>> = Default::default();
    for ex in &examples {
        let dir = work.join("examples").join(ex.id());
        std::fs::create_dir_all(&dir)?;
        let files = ex.feature_files()?;
        if files.is_empty() {
            return Err(usage(format!("no feature files in {}", ex.path.display())));
        }
        let map = stages::merge(&ex.meta, &files, cfg).context("merge-runs")?;
        map.write_jsonl(dir.join("merged.jsonl"))?;
        let traj = read_trajectory(ex.groundtruth())?;
        let flagged = stages::detect(&map, &ex.meta, &traj, cfg).context("detect")?;
        write_flagged(dir.join("flagged.jsonl"), &flagged)?;
        let objects =
            stages::build(&map, &ex.meta, &flagged, cfg, &plugins).context("build-masks")?;
        let masks = dir.join("masks.jsonl");
        write_masks(&masks, &objects)?;
        masks_by_scene
            .entry(ex.meta.scene_key().to_owned())
            .or_default()
            .push(masks);
    }

    for test in &tests {
        let mask_files = masks_by_scene
            .get(test.meta.scene_key())
            .cloned()
            .unwrap_or_default();
        if mask_files.is_empty() {
            log::warn!("{}: no example sequence shares its scene", test.id());
        }
        let union = stages::load_union(&mask_files, &test.meta).context("filter")?;
        let root = work.join("estimates").join(test.id());
        for system in [UNFILTERED, FILTERED] {
            std::fs::create_dir_all(root.join(system))?;
        }
        test.feature_files()?
            .par_iter()
            .enumerate()
            .try_for_each(|(run, path)| -> Result<()> {
                let records = stages::read_records(path, &test.meta)?;
                let kept = stages::filter(&records, union.as_ref()).context("filter")?;
                for (system, recs) in [(UNFILTERED, &records), (FILTERED, &kept)] {
                    let traj =
                        stages::track(recs, &test.meta, &test.landmarks(), &test.groundtruth())
                            .context("track")?;
                    write_trajectory(&traj, root.join(system).join(run_file_name(run)))?;
                }
                Ok(())
            })?;
    }

    let report = stages::evaluate_dirs(&tests, &work.join("estimates"), cfg).context("evaluate")?;
    stages::write_report(&a.out, &report)
}
