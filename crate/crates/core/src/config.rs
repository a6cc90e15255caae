use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{KernelShape, StructuringElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMapMode {
    /// The last cascade mask as a 0/1 map.
    Binary,
    /// Weighted mix of the last mask and the anomaly map, min-max normalized.
    Blended,
}

impl std::str::FromStr for OutputMapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(OutputMapMode::Binary),
            "blended" => Ok(OutputMapMode::Blended),
            other => Err(Error::config(
                "output_map_mode",
                format!("unknown mode `{other}` (expected binary or blended)"),
            )),
        }
    }
}

/// Every knob of a pipeline run.
///
/// `min_spacing` is expressed in pixels of a `working_resolution`-sized
/// square frame; the pipeline rescales it to the grid it actually operates on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub extreme_threshold: f64,
    pub k_positive: usize,
    pub k_negative: usize,
    pub min_spacing: f64,
    pub kernel: StructuringElement,
    pub cascade_depth: u8,
    pub working_resolution: u32,
    pub output_map_mode: OutputMapMode,
    pub blend_weight: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            extreme_threshold: 0.5,
            k_positive: 3,
            k_negative: 3,
            min_spacing: 400.0,
            kernel: StructuringElement {
                shape: KernelShape::Ellipse,
                size: (25, 25),
            },
            cascade_depth: 3,
            working_resolution: 1024,
            output_map_mode: OutputMapMode::Binary,
            blend_weight: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let config: PipelineConfig = serde_json::from_str(s)?;
        config.validate()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_json_str(&text)
    }

    /// Checks every invariant and returns the normalized config: odd kernel
    /// extents and a blend weight clamped into `[0, 1]`.
    pub fn validate(self) -> Result<Self> {
        let t = self.extreme_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::config(
                "extreme_threshold",
                format!("must lie in (0, 1), got {t}"),
            ));
        }
        if self.k_positive < 1 {
            return Err(Error::config("k_positive", "must be >= 1"));
        }
        if !(self.min_spacing >= 0.0 && self.min_spacing.is_finite()) {
            return Err(Error::config(
                "min_spacing",
                format!("must be a finite value >= 0, got {}", self.min_spacing),
            ));
        }
        if !(1..=3).contains(&self.cascade_depth) {
            return Err(Error::config(
                "cascade_depth",
                format!("must be 1, 2 or 3, got {}", self.cascade_depth),
            ));
        }
        if self.working_resolution < 64 {
            return Err(Error::config(
                "working_resolution",
                format!("must be >= 64, got {}", self.working_resolution),
            ));
        }
        if !self.blend_weight.is_finite() {
            return Err(Error::config("blend_weight", "must be finite"));
        }
        Ok(PipelineConfig {
            kernel: self.kernel.normalized()?,
            blend_weight: self.blend_weight.clamp(0.0, 1.0),
            ..self
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
