//! Pipeline configuration: one JSON document covering every stage.
//!
//! Every field has the default its stage documents; unknown keys are
//! rejected. The matching weights may be left null to be derived from
//! `beta` and the slice step at run time; [`PipelineConfig::resolve`]
//! produces the concrete values, which are echoed into every report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use toothbox_core::detect::NoiseModel;
use toothbox_core::divide::DivisionConfig;
use toothbox_core::evaluate::EvalConfig;
use toothbox_core::reconstruct::{MatchConfig, W2_EPSILON};
use toothbox_core::{derive_seed, CoreError};

use crate::volume_io::read_json;
use crate::IoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; stages derive their own streams from it.
    pub seed: u64,
    pub slicing: SlicingConfig,
    pub matching: MatchingConfig,
    pub division: DivisionConfig,
    pub noise: NoiseConfig,
    pub evaluation: EvalConfig,
    /// Worker cap for stages that can fan out (division of independent
    /// flagged volumes).
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            slicing: SlicingConfig::default(),
            matching: MatchingConfig::default(),
            division: DivisionConfig::default(),
            noise: NoiseConfig::default(),
            evaluation: EvalConfig::default(),
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicingConfig {
    /// Spacing between sampled axial slices, mm.
    pub interval_mm: f64,
    /// Fraction of the profile's range a slice must reach to belong to the
    /// tooth slab.
    pub fraction: f64,
}

impl Default for SlicingConfig {
    fn default() -> Self {
        Self { interval_mm: 1.4, fraction: 0.9 }
    }
}

/// Matching parameters with optional weights; `None` derives the default
/// calibration from `beta` and the slice step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub beta: f64,
    pub gamma_mm: Option<f64>,
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    pub w3: Option<f64>,
    pub max_skipped_slices: u32,
    pub min_detections: usize,
    pub min_height_mm: f64,
    pub context_margin_mm: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma_mm: None,
            w1: None,
            w2: None,
            w3: None,
            max_skipped_slices: 2,
            min_detections: 3,
            min_height_mm: 2.8,
            context_margin_mm: 1.0,
        }
    }
}

impl MatchingConfig {
    pub fn resolve(&self, step_mm: f64) -> MatchConfig {
        let beta = self.beta;
        let gamma = self.gamma_mm.unwrap_or(step_mm);
        MatchConfig {
            beta,
            gamma_mm: gamma,
            w1: self.w1.unwrap_or(beta / (4.0 * gamma)),
            w2: self.w2.unwrap_or(beta * (1.0 + W2_EPSILON)),
            w3: self.w3.unwrap_or(0.2 * beta),
            max_skipped_slices: self.max_skipped_slices,
            min_detections: self.min_detections,
            min_height_mm: self.min_height_mm,
            context_margin_mm: self.context_margin_mm,
        }
    }
}

/// Noise channels for the synthetic detector; the seed comes from the root
/// config seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub dropout: f64,
    pub label_confusion: f64,
    pub center_jitter: f64,
    pub size_jitter: f64,
    pub spurious_rate: f64,
}

impl NoiseConfig {
    pub fn to_model(&self, seed: u64) -> NoiseModel {
        NoiseModel {
            dropout: self.dropout,
            label_confusion: self.label_confusion,
            center_jitter: self.center_jitter,
            size_jitter: self.size_jitter,
            spurious_rate: self.spurious_rate,
            seed,
        }
    }
}

/// Fully resolved configuration as used by a run; embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub slicing: SlicingConfig,
    pub slice_step_mm: f64,
    pub matching: MatchConfig,
    pub division: DivisionConfig,
    pub noise: NoiseModel,
    pub evaluation: EvalConfig,
    pub threads: usize,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        use toothbox_core::CoreError::BadConfig;
        self.noise.to_model(0).validate()?;
        let bad = |msg: &str| Err(BadConfig(msg.into()));
        if !self.slicing.interval_mm.is_finite() || self.slicing.interval_mm <= 0.0 {
            return bad("slicing.interval_mm must be positive");
        }
        if !self.slicing.fraction.is_finite()
            || self.slicing.fraction <= 0.0
            || self.slicing.fraction > 1.0
        {
            return bad("slicing.fraction must be in (0, 1]");
        }
        if !self.matching.beta.is_finite() || self.matching.beta <= 0.0 {
            return bad("matching.beta must be positive");
        }
        if self.division.size_flag_factor <= 1.0 {
            return bad("division.size_flag_factor must exceed 1");
        }
        if !self.division.band_fraction.is_finite()
            || self.division.band_fraction <= 0.0
            || self.division.band_fraction > 1.0
        {
            return bad("division.band_fraction must be in (0, 1]");
        }
        if self.threads == 0 {
            return bad("threads must be >= 1");
        }
        Ok(())
    }

    /// Resolves every derived value for a concrete slice step.
    pub fn resolve(&self, step_mm: f64) -> ResolvedConfig {
        ResolvedConfig {
            seed: self.seed,
            slicing: self.slicing.clone(),
            slice_step_mm: step_mm,
            matching: self.matching.resolve(step_mm),
            division: self.division.clone(),
            noise: self.noise.to_model(derive_seed(self.seed, 1)),
            evaluation: self.evaluation.clone(),
            threads: self.threads,
        }
    }
}
