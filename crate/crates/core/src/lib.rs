//! Localizing dynamic objects from the inlier/outlier streams of visual SLAM
//! runs, filtering them out, and scoring SLAM robustness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod detector;
pub mod error;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod mask;
pub mod masks;
pub mod merge;
pub mod metrics;
pub mod sim;
pub mod tracker;
pub mod types;

pub use config::PipelineConfig;
pub use detector::{scan_sequence, score_window, DetectorConfig, ScanResult, WindowScore};
pub use error::{Error, Result};
pub use filter::{filter_keypoints, filter_records, KeypointSet};
pub use geometry::{umeyama_sim3, Sim3};
pub use mask::{BinaryMask, MaskSequence, Rle};
pub use masks::{build_masks, superimpose, MaskGenConfig};
pub use merge::{merge_runs, MergeConfig, MergedFeatureMap};
pub use metrics::{ate_rmse, MetricsConfig, SequenceEval};
pub use tracker::{track_camera, track_frames, FrameEstimate, TrackerConfig};
pub use types::{
    BBox, CameraIntrinsics, FeatureRecord, FeatureStatus, Pose, SequenceMeta, Trajectory,
};
