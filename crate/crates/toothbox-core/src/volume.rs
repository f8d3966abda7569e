//! The voxel volume type: a 3D density grid with physical spacing.
//!
//! Axis convention: `x` is lateral (sagittal index), `y` anterior-posterior,
//! `z` vertical (axial index, increasing toward the head). Data is laid out
//! x-fastest: `index = x + nx * (y + ny * z)`. Density values grow with
//! material density (air lowest, enamel highest).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;

/// 3D grid of signed 16-bit densities with millimeter spacing per axis.
///
/// Immutable after construction as far as the pipeline is concerned; the
/// mutating accessors exist for generators.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    dims: (usize, usize, usize),
    spacing: (f32, f32, f32),
    data: Vec<i16>,
}

impl VoxelVolume {
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f32, f32, f32),
        data: Vec<i16>,
    ) -> Result<Self, CoreError> {
        validate_header(dims, spacing)?;
        let expected = dims.0 * dims.1 * dims.2;
        if data.len() != expected {
            return Err(CoreError::BadVolume(format!(
                "payload holds {} voxels, dims {}x{}x{} require {}",
                data.len(),
                dims.0,
                dims.1,
                dims.2,
                expected
            )));
        }
        Ok(Self { dims, spacing, data })
    }

    /// Uniform volume filled with `value`.
    pub fn filled(
        dims: (usize, usize, usize),
        spacing: (f32, f32, f32),
        value: i16,
    ) -> Result<Self, CoreError> {
        validate_header(dims, spacing)?;
        let data = vec![value; dims.0 * dims.1 * dims.2];
        Ok(Self { dims, spacing, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f32, f32, f32) {
        self.spacing
    }

    /// Spacing as f64 for arithmetic.
    pub fn spacing_f64(&self) -> (f64, f64, f64) {
        (
            f64::from(self.spacing.0),
            f64::from(self.spacing.1),
            f64::from(self.spacing.2),
        )
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i16] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims.0 && y < self.dims.1 && z < self.dims.2);
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> i16 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: i16) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    /// Arithmetic mean of all voxels on axial slice `z`.
    pub fn slice_mean(&self, z: usize) -> f64 {
        let (nx, ny, _) = self.dims;
        let start = self.index(0, 0, z);
        let slice = &self.data[start..start + nx * ny];
        let sum: i64 = slice.iter().map(|&v| i64::from(v)).sum();
        sum as f64 / (nx * ny) as f64
    }
}

fn validate_header(dims: (usize, usize, usize), spacing: (f32, f32, f32)) -> Result<(), CoreError> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(CoreError::BadVolume(format!(
            "dims must all be >= 1, got {}x{}x{}",
            dims.0, dims.1, dims.2
        )));
    }
    for (name, s) in [("sx", spacing.0), ("sy", spacing.1), ("sz", spacing.2)] {
        if !s.is_finite() || s <= 0.0 {
            return Err(CoreError::BadVolume(format!(
                "spacing {name} must be positive and finite, got {s}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dims() {
        assert!(VoxelVolume::filled((0, 2, 2), (0.5, 0.5, 0.5), 0).is_err());
    }

    #[test]
    fn rejects_nonpositive_spacing() {
        assert!(VoxelVolume::filled((2, 2, 2), (0.5, -0.5, 0.5), 0).is_err());
        assert!(VoxelVolume::filled((2, 2, 2), (0.5, 0.0, 0.5), 0).is_err());
    }

    #[test]
    fn rejects_payload_length_mismatch() {
        assert!(VoxelVolume::new((2, 2, 2), (0.5, 0.5, 0.5), vec![0; 7]).is_err());
    }

    #[test]
    fn index_is_x_fastest() {
        let mut v = VoxelVolume::filled((2, 3, 4), (1.0, 1.0, 1.0), 0).unwrap();
        v.set(1, 2, 3, 9);
        assert_eq!(v.data()[1 + 2 * (2 + 3 * 3)], 9);
        assert_eq!(v.get(1, 2, 3), 9);
    }

    #[test]
    fn slice_mean_single_voxel_slices() {
        let v = VoxelVolume::new((1, 1, 3), (1.0, 1.0, 1.0), vec![0, 10, 20]).unwrap();
        assert_eq!(v.slice_mean(0), 0.0);
        assert_eq!(v.slice_mean(1), 10.0);
        assert_eq!(v.slice_mean(2), 20.0);
    }
}
