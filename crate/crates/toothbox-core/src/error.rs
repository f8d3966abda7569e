//! Error type shared by the core algorithms.

use alloc::string::String;

/// Errors produced by the core pipeline stages.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoreError {
    /// A tooth class outside 1..=8.
    #[error("tooth class {0} is outside the supported range 1..=8")]
    LabelRange(u8),
    /// Volume construction with inconsistent dims, spacing, or payload.
    #[error("invalid volume: {0}")]
    BadVolume(String),
    /// A phantom spec that violates its invariants.
    #[error("invalid phantom spec: {0}")]
    BadPhantom(String),
    /// A noise model with probabilities or deviations out of range.
    #[error("invalid noise model: {0}")]
    BadNoise(String),
    /// A pipeline configuration value out of range.
    #[error("invalid config: {0}")]
    BadConfig(String),
    /// The confinement band of a division seam is too thin to hold a path.
    #[error("division band is empty: box is only {height} voxel(s) tall")]
    BandTooThin { height: usize },
    /// A division surface that leaves one side of the split without voxels.
    #[error("division surface leaves the {side} side empty")]
    EmptySplit { side: &'static str },
    /// A division surface whose footprint does not cover the box to split.
    #[error("division surface footprint does not match the box footprint")]
    SurfaceMismatch,
    /// Detection rate is undefined without ground-truth teeth.
    #[error("detection rate is undefined for zero ground-truth teeth")]
    NoTeeth,
}
