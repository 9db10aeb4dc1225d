//! Run configuration: one JSON document covering the simulator, feature
//! synthesis, pooling, jitter, training and evaluation knobs.
//!
//! Unknown keys are rejected everywhere. Every field has a default, so `{}`
//! is a valid config. Precedence for the seed: the `TSRA_SEED` environment
//! variable beats the `--seed` flag, which beats the file.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use tsra::align::AlignTrainConfig;
use tsra::evaluation::DeviationThresholds;
use tsra::jitter::JitterConfig;
use tsra::pipeline::{MsMode, PipelineConfig, PoolConfig};
use tsra::simulator::{FeatureConfig, SceneConfig};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct JitterSection {
    pub enabled: bool,
    /// Jittered variants per positive sample.
    pub copies: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_w: f64,
    pub sigma_h: f64,
    pub sigma_theta: f64,
}

impl Default for JitterSection {
    fn default() -> Self {
        let j = JitterConfig::default();
        Self {
            enabled: true,
            copies: 3,
            sigma_x: j.sigma_x,
            sigma_y: j.sigma_y,
            sigma_w: j.sigma_w,
            sigma_h: j.sigma_h,
            sigma_theta: j.sigma_theta,
        }
    }
}

impl JitterSection {
    pub fn to_config(&self, seed: u64) -> JitterConfig {
        JitterConfig {
            sigma_x: self.sigma_x,
            sigma_y: self.sigma_y,
            sigma_w: self.sigma_w,
            sigma_h: self.sigma_h,
            sigma_theta: self.sigma_theta,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub use_ms: bool,
    pub extend_factor: f64,
    pub negative_fraction: f64,
    pub dark_threshold: f64,
    pub holdout_fraction: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            use_ms: true,
            extend_factor: p.extend_factor,
            negative_fraction: p.negative_fraction,
            dark_threshold: p.dark_threshold,
            holdout_fraction: p.holdout_fraction,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub iou_thresh: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { iou_thresh: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Scenes generated by `simulate`.
    pub scenes: Option<u64>,
    pub scene: SceneConfig,
    pub features: FeatureConfig,
    pub pooling: PoolConfig,
    pub pipeline: PipelineSection,
    pub jitter: JitterSection,
    pub train: AlignTrainConfig,
    pub stats: DeviationThresholds,
    pub eval: EvalSection,
}

pub const DEFAULT_SCENES: u64 = 20;

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("cannot parse config {}", p.display()))
            }
        }
    }

    /// Resolves the effective seed: `TSRA_SEED` env > `--seed` flag > file >
    /// scene default.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let seed = match std::env::var("TSRA_SEED") {
            Ok(text) => Some(
                text.parse::<u64>()
                    .with_context(|| format!("TSRA_SEED is not a u64: {text:?}"))?,
            ),
            Err(std::env::VarError::NotPresent) => None,
            Err(e) => return Err(e).context("TSRA_SEED is not unicode"),
        };
        let seed = seed
            .or(flag)
            .or(self.seed)
            .unwrap_or(self.scene.seed);
        self.seed = Some(seed);
        self.scene.seed = seed;
        self.train.seed = seed;
        Ok(seed)
    }

    pub fn pipeline_config(&self, use_ms: bool) -> PipelineConfig {
        PipelineConfig {
            pool: self.pooling,
            features: self.features.clone(),
            ms: if use_ms { MsMode::Select } else { MsMode::AlwaysIr },
            extend_factor: self.pipeline.extend_factor,
            negative_fraction: self.pipeline.negative_fraction,
            dark_threshold: self.pipeline.dark_threshold,
            holdout_fraction: self.pipeline.holdout_fraction,
        }
    }

    /// Pretty JSON echo (trailing newline) written into output directories.
    pub fn echo_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
