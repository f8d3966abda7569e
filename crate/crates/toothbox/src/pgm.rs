//! PGM (P5) slice export with box outlines, for eyeballing results.
//!
//! Densities are normalized to 0..=254 over the whole volume; box outlines
//! are drawn at the maximum gray value so they stand out on any slice.

use std::io::Write;
use std::path::Path;

use toothbox_core::reconstruct::Box3D;
use toothbox_core::volume::VoxelVolume;

use crate::IoError;

const OUTLINE: u8 = 255;

fn normalizer(vol: &VoxelVolume) -> impl Fn(i16) -> u8 {
    let min = vol.data().iter().copied().min().unwrap_or(0);
    let max = vol.data().iter().copied().max().unwrap_or(0);
    let range = f64::from(max) - f64::from(min);
    move |v: i16| {
        if range <= 0.0 {
            0
        } else {
            ((f64::from(v) - f64::from(min)) / range * 254.0) as u8
        }
    }
}

fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), IoError> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut out = Vec::with_capacity(pixels.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("in-memory write");
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| IoError::io(path, e))
}

fn draw_rect(
    pixels: &mut [u8],
    width: usize,
    height: usize,
    (x0, y0, x1, y1): (i32, i32, i32, i32),
) {
    // Half-open box: the outline hugs the covered pixels.
    let xa = x0.clamp(0, width as i32 - 1) as usize;
    let xb = (x1 - 1).clamp(0, width as i32 - 1) as usize;
    let ya = y0.clamp(0, height as i32 - 1) as usize;
    let yb = (y1 - 1).clamp(0, height as i32 - 1) as usize;
    for x in xa..=xb {
        pixels[ya * width + x] = OUTLINE;
        pixels[yb * width + x] = OUTLINE;
    }
    for y in ya..=yb {
        pixels[y * width + xa] = OUTLINE;
        pixels[y * width + xb] = OUTLINE;
    }
}

/// Writes axial slice `z` as `width = nx`, `height = ny`, overlaying every
/// box whose z range covers the slice.
pub fn export_axial_slice(
    vol: &VoxelVolume,
    z: usize,
    boxes: &[Box3D],
    path: &Path,
) -> Result<(), IoError> {
    let (nx, ny, nz) = vol.dims();
    assert!(z < nz, "axial index {z} out of range");
    let norm = normalizer(vol);
    let mut pixels = vec![0u8; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            pixels[y * nx + x] = norm(vol.get(x, y, z));
        }
    }
    for b in boxes {
        if (z as i32) >= b.vox.z_min && (z as i32) < b.vox.z_max {
            draw_rect(&mut pixels, nx, ny, (b.vox.x_min, b.vox.y_min, b.vox.x_max, b.vox.y_max));
        }
    }
    write_pgm(path, nx, ny, &pixels)
}

/// Writes sagittal slice `x` as `width = ny`, `height = nz` with the top of
/// the head at the top of the image, overlaying every box covering `x`.
pub fn export_sagittal_slice(
    vol: &VoxelVolume,
    x: usize,
    boxes: &[Box3D],
    path: &Path,
) -> Result<(), IoError> {
    let (nx, ny, nz) = vol.dims();
    assert!(x < nx, "sagittal index {x} out of range");
    let norm = normalizer(vol);
    let mut pixels = vec![0u8; ny * nz];
    for z in 0..nz {
        let row = nz - 1 - z; // z up
        for y in 0..ny {
            pixels[row * ny + y] = norm(vol.get(x, y, z));
        }
    }
    for b in boxes {
        if (x as i32) >= b.vox.x_min && (x as i32) < b.vox.x_max {
            let top = nz as i32 - b.vox.z_max;
            let bottom = nz as i32 - b.vox.z_min;
            draw_rect(&mut pixels, ny, nz, (b.vox.y_min, top, b.vox.y_max, bottom));
        }
    }
    write_pgm(path, ny, nz, &pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;
    use toothbox_core::detect::Label;
    use toothbox_core::geom::{Box3f, Box3i};

    #[test]
    fn axial_export_writes_valid_pgm_with_outline() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let mut vol = VoxelVolume::filled((16, 12, 4), (1.0, 1.0, 1.0), 0).unwrap();
        vol.set(5, 5, 2, 1000);
        let vox = Box3i::new(4, 4, 1, 8, 8, 4);
        let b = Box3D {
            id: 0,
            label: Label::new(1).unwrap(),
            fdi: None,
            mm: Box3f::from_vox(&vox, (1.0, 1.0, 1.0)),
            vox,
            detections: 3,
            divided_from: None,
        };
        export_axial_slice(&vol, 2, &[b], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n16 12\n255\n"));
        let pixels = &bytes[13..];
        assert_eq!(pixels.len(), 16 * 12);
        assert_eq!(pixels[4 * 16 + 4], OUTLINE); // box corner
        assert_eq!(pixels[5 * 16 + 5], 254); // the bright voxel, inside
    }

    #[test]
    fn sagittal_export_orients_z_up() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.pgm");
        let mut vol = VoxelVolume::filled((4, 6, 8), (1.0, 1.0, 1.0), 0).unwrap();
        vol.set(2, 3, 7, 500); // top slice
        export_sagittal_slice(&vol, 2, &[], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n6 8\n255\n"));
        let pixels = &bytes[11..];
        // z = 7 lands on image row 0
        assert_eq!(pixels[3], 254);
    }
}
