//! Tooth slab selection and axial slice sampling.
//!
//! The dentition occupies a contiguous vertical region of the scan. It is
//! located by projecting the volume onto the vertical axis (mean density per
//! axial slice) and keeping the maximal contiguous window around the global
//! maximum whose values stay in the top part of the profile's range.
//! Detection then runs on equispaced slices inside that window.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::volume::VoxelVolume;

/// Mean density per axial slice, `z = 0..nz-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxialProfile(Vec<f64>);

impl AxialProfile {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The selected vertical window plus its sampled slice indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slab {
    /// First slice of the window (inclusive).
    pub z_lo: usize,
    /// Last slice of the window (inclusive).
    pub z_hi: usize,
    /// Strictly increasing sampled indices within `[z_lo, z_hi]`.
    pub slices: Vec<usize>,
}

/// Projects the volume onto the vertical axis: one mean per axial slice.
pub fn axial_mean_profile(vol: &VoxelVolume) -> AxialProfile {
    let nz = vol.dims().2;
    AxialProfile((0..nz).map(|z| vol.slice_mean(z)).collect())
}

/// Selects the tooth window: the maximal contiguous run of slices around the
/// profile's global maximum whose values all reach the top `fraction` of the
/// min-max range. Returns the window as inclusive `(z_lo, z_hi)`.
///
/// With an all-equal profile every slice qualifies and the full range is
/// returned.
pub fn select_tooth_slab(profile: &AxialProfile, fraction: f64) -> (usize, usize) {
    let v = profile.values();
    assert!(!v.is_empty(), "profile must cover at least one slice");
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must be in (0, 1]");

    let mut min = v[0];
    let mut max = v[0];
    let mut argmax = 0;
    for (z, &x) in v.iter().enumerate() {
        if x < min {
            min = x;
        }
        if x > max {
            max = x;
            argmax = z;
        }
    }
    let threshold = min + (1.0 - fraction) * (max - min);

    let mut lo = argmax;
    while lo > 0 && v[lo - 1] >= threshold {
        lo -= 1;
    }
    let mut hi = argmax;
    while hi + 1 < v.len() && v[hi + 1] >= threshold {
        hi += 1;
    }
    (lo, hi)
}

/// Sampled slice indices `z_lo, z_lo + s, ...` up to `z_hi`, with the step
/// `s = max(1, round(interval_mm / sz_mm))` voxels. Always includes `z_lo`.
pub fn sample_slices(z_lo: usize, z_hi: usize, sz_mm: f64, interval_mm: f64) -> Vec<usize> {
    assert!(interval_mm > 0.0, "interval must be positive");
    assert!(sz_mm > 0.0, "slice spacing must be positive");
    let step = slice_step_voxels(sz_mm, interval_mm);
    (z_lo..=z_hi).step_by(step).collect()
}

/// The sampling step in voxels for a given z spacing, clamped to >= 1.
pub fn slice_step_voxels(sz_mm: f64, interval_mm: f64) -> usize {
    let step = libm::round(interval_mm / sz_mm);
    if step < 1.0 {
        1
    } else {
        step as usize
    }
}
