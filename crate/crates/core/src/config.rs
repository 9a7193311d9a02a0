//! Pipeline configuration read from a flat `key = value` file.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::io::parse_key_values;
use crate::masks::MaskGenConfig;
use crate::merge::MergeConfig;
use crate::metrics::MetricsConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub merge: MergeConfig,
    pub detector: DetectorConfig,
    pub masks: MaskGenConfig,
    pub metrics: MetricsConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "cell_size",
        "min_run_fraction",
        "window_sizes",
        "stride",
        "frame_gap",
        "s_max",
        "epsilon",
        "min_window_features",
        "min_visible_fraction",
        "k",
        "refine_density_threshold",
        "dilation_radius",
        "search_margin",
        "max_empty_frames",
        "tau",
        "delta_r_max",
        "l_max",
        "runs",
        "assoc_tolerance",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "cell_size" => self.merge.cell_size = parse(key, v)?,
            "min_run_fraction" => self.merge.min_run_fraction = parse(key, v)?,
            "window_sizes" => {
                self.detector.window_sizes = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "stride" => self.detector.stride = parse(key, v)?,
            "frame_gap" => self.detector.frame_gap = parse(key, v)?,
            "s_max" => self.detector.s_max = parse(key, v)?,
            "epsilon" => self.detector.epsilon = parse(key, v)?,
            "min_window_features" => self.detector.min_window_features = parse(key, v)?,
            "min_visible_fraction" => self.detector.min_visible_fraction = parse(key, v)?,
            "k" => self.masks.k = parse(key, v)?,
            "refine_density_threshold" => self.masks.refine_density_threshold = parse(key, v)?,
            "dilation_radius" => self.masks.dilation_radius = parse(key, v)?,
            "search_margin" => self.masks.search_margin = parse(key, v)?,
            "max_empty_frames" => self.masks.max_empty_frames = parse(key, v)?,
            "tau" => self.metrics.tau = parse(key, v)?,
            "delta_r_max" => self.metrics.delta_r_max = parse(key, v)?,
            "l_max" => self.metrics.l_max = parse(key, v)?,
            "runs" => self.metrics.runs = parse(key, v)?,
            "assoc_tolerance" => {
                self.metrics.assoc_tolerance = match v {
                    "" | "auto" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` strings in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.as_ref().split_once('=').ok_or_else(|| {
                Error::Config(format!("override `{}` is not key=value", o.as_ref()))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v, line) in parse_key_values(text, path)? {
            cfg.set(&k, &v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.merge.validate()?;
        self.detector.validate()?;
        self.masks.validate()?;
        self.metrics.validate()
    }

    /// Every key with its current value, in `KEYS` order.
    pub fn to_text(&self) -> String {
        let d = &self.detector;
        let sizes: Vec<String> = d.window_sizes.iter().map(u32::to_string).collect();
        let tol = self
            .metrics
            .assoc_tolerance
            .map_or_else(|| "auto".to_string(), |t| t.to_string());
        let values = [
            self.merge.cell_size.to_string(),
            self.merge.min_run_fraction.to_string(),
            sizes.join(","),
            d.stride.to_string(),
            d.frame_gap.to_string(),
            d.s_max.to_string(),
            d.epsilon.to_string(),
            d.min_window_features.to_string(),
            d.min_visible_fraction.to_string(),
            self.masks.k.to_string(),
            self.masks.refine_density_threshold.to_string(),
            self.masks.dilation_radius.to_string(),
            self.masks.search_margin.to_string(),
            self.masks.max_empty_frames.to_string(),
            self.metrics.tau.to_string(),
            self.metrics.delta_r_max.to_string(),
            self.metrics.l_max.to_string(),
            self.metrics.runs.to_string(),
            tol,
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
