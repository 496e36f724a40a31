//! Run configuration shared by every command.

use super::FormatError;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Knobs of the pipeline. The defaults follow the method's published
/// operating point: lambda 2/3, gamma 0.3, loss weights (0.5, 0.25, 0.25);
/// the scale ratio has no published value and defaults to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Proposal squaring scale ratio.
    pub r: f64,
    /// Calibration exponent.
    pub lambda: f64,
    /// Confidence fusion exponent.
    pub gamma: f64,
    pub w_o: f64,
    pub w_b: f64,
    pub w_g: f64,
    /// Encoder input resolution; block partitioning also uses this side.
    #[serde(rename = "R")]
    pub resolution: u32,
    pub nms_iou: f64,
    pub score_threshold: f64,
    pub max_per_image: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            r: 1.0,
            lambda: 2.0 / 3.0,
            gamma: 0.3,
            w_o: 0.5,
            w_b: 0.25,
            w_g: 0.25,
            resolution: 32,
            nms_iou: 0.5,
            score_threshold: 0.0,
            max_per_image: 100,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), FormatError> {
        let bad = |msg: String| Err(FormatError::Config(msg));
        if self.r <= 0.0 || self.r.is_nan() {
            return bad(format!("r must be positive, got {}", self.r));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda must lie in (0, 1), got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.w_o < 0.0 || self.w_b < 0.0 || self.w_g < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return bad(format!("nms_iou must lie in (0, 1), got {}", self.nms_iou));
        }
        if self.score_threshold < 0.0 {
            return bad("score_threshold must be non-negative".into());
        }
        if self.max_per_image == 0 {
            return bad("max_per_image must be at least 1".into());
        }
        if self.resolution == 0 {
            return bad("R must be at least 1".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        super::atomic_write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}
