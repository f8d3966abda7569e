//! Division of fused occlusal counterparts.
//!
//! When the interocclusal space is too small, the reconstruction can merge
//! an upper tooth with the lower tooth it bites against into one oversized
//! volume. Those volumes are flagged by their vertical extent relative to
//! the scan's size distribution. A flagged volume is split by a division
//! surface computed on the voxel grid: within each sagittal slice of the
//! box a minimum-cost path (low density, near the expected aperture height,
//! smooth) is found by dynamic programming with each voxel connected to its
//! neighbors in the adjacent column; the per-slice seams are chained
//! left-to-right into a lattice that separates the two teeth.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::geom::{Box3f, Box3i};
use crate::reconstruct::Box3D;
use crate::volume::VoxelVolume;

/// Tuning of the flagging rule and the seam cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivisionConfig {
    /// A volume is flagged when its vertical extent exceeds this factor
    /// times the median extent.
    pub size_flag_factor: f64,
    /// Central vertical band of the box the seam is confined to.
    pub band_fraction: f64,
    /// Weight of the (normalized) voxel density under the seam.
    pub density_weight: f64,
    /// Weight of the quadratic prior pulling the seam toward the expected
    /// aperture height.
    pub midline_weight: f64,
    /// Weight of vertical steps along the seam.
    pub smoothness_weight: f64,
    /// Weight of deviations from the previous sagittal slice's seam.
    pub inter_slice_weight: f64,
    /// Hard bound on the seam height change between adjacent sagittal
    /// slices, voxels.
    pub inter_slice_step: i32,
}

impl Default for DivisionConfig {
    fn default() -> Self {
        // The quadratic midline prior scales with the band half-width, so
        // the band must stay narrow for the prior to beat voxel noise in
        // empty columns; a fused pair's aperture sits near the box center,
        // comfortably inside the central 30%. Smoothness keeps per-slice
        // seams flat against noise, and both stay far below the density
        // weight so real structure always wins.
        Self {
            size_flag_factor: 1.6,
            band_fraction: 0.3,
            density_weight: 1.0,
            midline_weight: 1.0,
            smoothness_weight: 0.4,
            inter_slice_weight: 0.5,
            inter_slice_step: 2,
        }
    }
}

/// A local minimum must dip by at least this fraction of the profile's
/// range to count as the interocclusal valley.
pub const VALLEY_MIN_PROMINENCE: f64 = 0.05;

/// Seam heights over a box footprint: one z per `(x, y)` column. The seam
/// row itself belongs to the lower side of the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionSurface {
    pub x_min: i32,
    pub y_min: i32,
    pub nx: usize,
    pub ny: usize,
    /// Absolute z voxel index per column, row-major in x then y.
    pub heights: Vec<i32>,
}

impl DivisionSurface {
    pub fn height(&self, x: i32, y: i32) -> i32 {
        let ix = (x - self.x_min) as usize;
        let iy = (y - self.y_min) as usize;
        debug_assert!(ix < self.nx && iy < self.ny);
        self.heights[ix * self.ny + iy]
    }

    /// Mean seam height in voxels.
    pub fn mean_height(&self) -> f64 {
        let sum: i64 = self.heights.iter().map(|&h| i64::from(h)).sum();
        sum as f64 / self.heights.len() as f64
    }
}

/// Flags volumes whose vertical extent deviates from the scan's size
/// distribution: extent > factor * median. With fewer than three volumes
/// the median is meaningless and extent > 2 * minimum is used instead.
pub fn flag_extents(extents_mm: &[f64], factor: f64) -> Vec<bool> {
    if extents_mm.is_empty() {
        return Vec::new();
    }
    let threshold = if extents_mm.len() < 3 {
        let min = extents_mm.iter().copied().fold(f64::INFINITY, f64::min);
        2.0 * min
    } else {
        let mut sorted = extents_mm.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
        };
        factor * median
    };
    extents_mm.iter().map(|&e| e > threshold).collect()
}

/// [`flag_extents`] over the vertical extents of reconstructed boxes.
pub fn flag_double(boxes: &[Box3D], factor: f64) -> Vec<bool> {
    let extents: Vec<f64> = boxes.iter().map(|b| b.mm.z_max - b.mm.z_min).collect();
    flag_extents(&extents, factor)
}

/// Mean density per axial slice restricted to the box footprint, plus the
/// expected split height `z0` (box-local row): the deepest adequately
/// prominent local minimum inside the central band, or the vertical
/// midpoint when no such valley exists.
pub fn vertical_density_profile(
    vol: &VoxelVolume,
    bx: &Box3i,
    band_fraction: f64,
) -> Result<(Vec<f64>, usize), CoreError> {
    let nz = (bx.z_max - bx.z_min) as usize;
    let (lo, hi) = band_bounds(nz, band_fraction)?;

    let mut profile = Vec::with_capacity(nz);
    for z in bx.z_min..bx.z_max {
        let mut sum = 0i64;
        let mut count = 0i64;
        for y in bx.y_min..bx.y_max {
            for x in bx.x_min..bx.x_max {
                sum += i64::from(vol.get(x as usize, y as usize, z as usize));
                count += 1;
            }
        }
        profile.push(sum as f64 / count as f64);
    }

    let v_min = profile.iter().copied().fold(f64::INFINITY, f64::min);
    let v_max = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = v_max - v_min;

    let mut z0: Option<(f64, f64, usize)> = None; // (value, prominence, row)
    if range > 0.0 {
        for i in lo.max(1)..=hi.min(nz - 2) {
            if profile[i] > profile[i - 1] || profile[i] > profile[i + 1] {
                continue;
            }
            let left_peak = profile[..i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let right_peak = profile[i + 1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let prominence = left_peak.min(right_peak) - profile[i];
            if prominence <= VALLEY_MIN_PROMINENCE * range {
                continue;
            }
            let better = match z0 {
                None => true,
                Some((val, prom, _)) => {
                    profile[i] < val || (profile[i] == val && prominence > prom)
                }
            };
            if better {
                z0 = Some((profile[i], prominence, i));
            }
        }
    }
    let z0 = z0.map_or(nz / 2, |(_, _, row)| row);
    Ok((profile, z0))
}

/// Inclusive band `[lo, hi]` of box-local rows the seam may use: the
/// central `fraction` of the box height. Boxes too thin to hold a band of
/// at least two rows are refused.
pub fn band_bounds(nz: usize, fraction: f64) -> Result<(usize, usize), CoreError> {
    debug_assert!(fraction > 0.0 && fraction <= 1.0);
    let center = (nz as f64 - 1.0) / 2.0;
    let half = fraction * nz as f64 / 2.0;
    let lo = libm::ceil(center - half).max(0.0) as usize;
    let hi = (libm::floor(center + half) as usize).min(nz.saturating_sub(1));
    if nz < 2 || hi < lo + 1 {
        return Err(CoreError::BandTooThin { height: nz });
    }
    Ok((lo, hi))
}

/// One sagittal slice of a flagged box: densities over (y, z), normalized
/// to `[0, 1]` over the whole box.
#[derive(Debug, Clone, PartialEq)]
pub struct SeamImage {
    pub ny: usize,
    pub nz: usize,
    /// Row-major in y then z: `data[y * nz + z]`.
    pub data: Vec<f64>,
}

impl SeamImage {
    #[inline]
    pub fn at(&self, y: usize, z: usize) -> f64 {
        self.data[y * self.nz + z]
    }
}

/// Optional coupling of a seam to the previous sagittal slice's seam.
pub struct SeamPrior<'a> {
    /// Previous seam, box-local rows, one per y.
    pub heights: &'a [usize],
    /// Soft penalty per voxel of deviation.
    pub weight: f64,
    /// Hard bound on the deviation.
    pub max_step: i32,
}

/// Minimum-cost seam through one sagittal slice, solved exactly by
/// column-by-column dynamic programming. The path pays, per column, the
/// normalized density under it, a quadratic penalty for straying from `z0`,
/// and a smoothness penalty per vertical step; steps are bounded by one
/// voxel per column and the path stays inside the band. Returns the
/// box-local seam heights and the optimal cost.
pub fn seam_in_sagittal_slice(
    img: &SeamImage,
    z0: usize,
    band: (usize, usize),
    cfg: &DivisionConfig,
    prior: Option<&SeamPrior<'_>>,
) -> Result<(Vec<usize>, f64), CoreError> {
    let (lo, hi) = band;
    if img.nz < 2 || hi < lo + 1 || hi >= img.nz {
        return Err(CoreError::BandTooThin { height: img.nz });
    }
    debug_assert!((lo..=hi).contains(&z0), "z0 must sit inside the band");
    let ny = img.ny;
    let half_width = (((hi - lo) as f64) / 2.0).max(1.0);

    let node_cost = |y: usize, z: usize| -> f64 {
        let dz = (z as f64 - z0 as f64) / half_width;
        let mut c = cfg.density_weight * img.at(y, z) + cfg.midline_weight * dz * dz;
        if let Some(p) = prior {
            c += p.weight * (z as f64 - p.heights[y] as f64).abs();
        }
        c
    };
    let in_window = |y: usize, z: usize| -> bool {
        match prior {
            None => true,
            Some(p) => {
                let d = z as i64 - p.heights[y] as i64;
                d.unsigned_abs() <= p.max_step as u64
            }
        }
    };

    let nstates = hi - lo + 1;
    let mut dp = vec![f64::INFINITY; ny * nstates];
    let mut parent = vec![usize::MAX; ny * nstates];

    for z in lo..=hi {
        if in_window(0, z) {
            dp[z - lo] = node_cost(0, z);
        }
    }
    for y in 1..ny {
        for z in lo..=hi {
            if !in_window(y, z) {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut best_prev = usize::MAX;
            for prev in z.saturating_sub(1)..=(z + 1).min(hi) {
                if prev < lo {
                    continue;
                }
                let base = dp[(y - 1) * nstates + (prev - lo)];
                if !base.is_finite() {
                    continue;
                }
                let step = if prev == z { 0.0 } else { cfg.smoothness_weight };
                let cand = base + step;
                if cand < best {
                    best = cand;
                    best_prev = prev;
                }
            }
            if best.is_finite() {
                dp[y * nstates + (z - lo)] = best + node_cost(y, z);
                parent[y * nstates + (z - lo)] = best_prev;
            }
        }
    }

    let mut end = usize::MAX;
    let mut best = f64::INFINITY;
    for z in lo..=hi {
        let c = dp[(ny - 1) * nstates + (z - lo)];
        if c < best {
            best = c;
            end = z;
        }
    }
    debug_assert!(best.is_finite(), "prior always leaves a feasible path");

    let mut seam = vec![0usize; ny];
    let mut z = end;
    for y in (0..ny).rev() {
        seam[y] = z;
        if y > 0 {
            z = parent[y * nstates + (z - lo)];
        }
    }
    Ok((seam, best))
}

/// Chains per-sagittal-slice seams over a flagged box into a division
/// surface, sweeping in increasing x with each slice's DP softly pulled
/// toward, and hard-bounded around, the previous slice's seam. The
/// resulting lattice therefore satisfies the surface invariants by
/// construction: vertical steps of at most one voxel along y and at most
/// `inter_slice_step` across x.
pub fn build_lattice(
    vol: &VoxelVolume,
    bx: &Box3i,
    z0: usize,
    cfg: &DivisionConfig,
) -> Result<DivisionSurface, CoreError> {
    let nz = (bx.z_max - bx.z_min) as usize;
    let ny = (bx.y_max - bx.y_min) as usize;
    let nx = (bx.x_max - bx.x_min) as usize;
    let band = band_bounds(nz, cfg.band_fraction)?;

    // Normalize densities to [0, 1] over the whole box.
    let mut d_min = f64::INFINITY;
    let mut d_max = f64::NEG_INFINITY;
    for z in bx.z_min..bx.z_max {
        for y in bx.y_min..bx.y_max {
            for x in bx.x_min..bx.x_max {
                let v = f64::from(vol.get(x as usize, y as usize, z as usize));
                d_min = d_min.min(v);
                d_max = d_max.max(v);
            }
        }
    }
    let scale = if d_max > d_min { 1.0 / (d_max - d_min) } else { 0.0 };

    let mut heights: Vec<i32> = Vec::with_capacity(nx * ny);
    let mut prev: Option<Vec<usize>> = None;
    for x in bx.x_min..bx.x_max {
        let mut data = Vec::with_capacity(ny * nz);
        for y in bx.y_min..bx.y_max {
            for z in bx.z_min..bx.z_max {
                let v = f64::from(vol.get(x as usize, y as usize, z as usize));
                data.push((v - d_min) * scale);
            }
        }
        let img = SeamImage { ny, nz, data };
        let prior_struct;
        let prior = match &prev {
            None => None,
            Some(p) => {
                prior_struct = SeamPrior {
                    heights: p,
                    weight: cfg.inter_slice_weight,
                    max_step: cfg.inter_slice_step,
                };
                Some(&prior_struct)
            }
        };
        let (seam, _) = seam_in_sagittal_slice(&img, z0, band, cfg, prior)?;
        heights.extend(seam.iter().map(|&r| bx.z_min + r as i32));
        prev = Some(seam);
    }

    Ok(DivisionSurface { x_min: bx.x_min, y_min: bx.y_min, nx, ny, heights })
}

/// Splits a fused box along a division surface: voxels strictly above the
/// seam go to the upper tooth, the rest to the lower one (a partition of
/// the parent). Both children inherit the parent's class label and record
/// its id; their boxes are the tight hulls of their voxel sets.
pub fn split_volume(
    parent: &Box3D,
    surface: &DivisionSurface,
    spacing: (f32, f32, f32),
    child_ids: (u32, u32),
) -> Result<(Box3D, Box3D), CoreError> {
    let bx = &parent.vox;
    if surface.x_min != bx.x_min
        || surface.y_min != bx.y_min
        || surface.nx != (bx.x_max - bx.x_min) as usize
        || surface.ny != (bx.y_max - bx.y_min) as usize
    {
        return Err(CoreError::SurfaceMismatch);
    }

    let mut upper: Option<Box3i> = None;
    let mut lower: Option<Box3i> = None;
    for x in bx.x_min..bx.x_max {
        for y in bx.y_min..bx.y_max {
            let h = surface.height(x, y).clamp(bx.z_min - 1, bx.z_max - 1);
            // Upper: z in (h, z_max); lower: z in [z_min, h].
            if h + 1 < bx.z_max {
                grow(&mut upper, x, y, h + 1, bx.z_max);
            }
            if h >= bx.z_min {
                grow(&mut lower, x, y, bx.z_min, h + 1);
            }
        }
    }
    let upper = upper.ok_or(CoreError::EmptySplit { side: "upper" })?;
    let lower = lower.ok_or(CoreError::EmptySplit { side: "lower" })?;

    let child = |id: u32, vox: Box3i| Box3D {
        id,
        label: parent.label,
        fdi: None,
        mm: Box3f::from_vox(&vox, spacing),
        vox,
        detections: parent.detections,
        divided_from: Some(parent.id),
    };
    Ok((child(child_ids.0, upper), child(child_ids.1, lower)))
}

fn grow(hull: &mut Option<Box3i>, x: i32, y: i32, z_min: i32, z_max: i32) {
    match hull {
        None => *hull = Some(Box3i::new(x, y, z_min, x + 1, y + 1, z_max)),
        Some(b) => {
            b.x_min = b.x_min.min(x);
            b.y_min = b.y_min.min(y);
            b.z_min = b.z_min.min(z_min);
            b.x_max = b.x_max.max(x + 1);
            b.y_max = b.y_max.max(y + 1);
            b.z_max = b.z_max.max(z_max);
        }
    }
}

#[cfg(test)]
pub mod oracle {
    //! Exhaustive seam search for small images, used by tests only.

    use super::{DivisionConfig, SeamImage, SeamPrior};

    /// Minimum seam cost by enumerating every band-confined path with
    /// vertical steps of at most one voxel. Exponential; keep `ny` small.
    pub fn best_seam_cost(
        img: &SeamImage,
        z0: usize,
        band: (usize, usize),
        cfg: &DivisionConfig,
        prior: Option<&SeamPrior<'_>>,
    ) -> f64 {
        let (lo, hi) = band;
        let half_width = (((hi - lo) as f64) / 2.0).max(1.0);
        let node = |y: usize, z: usize| {
            let dz = (z as f64 - z0 as f64) / half_width;
            let mut c = cfg.density_weight * img.at(y, z) + cfg.midline_weight * dz * dz;
            if let Some(p) = prior {
                c += p.weight * (z as f64 - p.heights[y] as f64).abs();
            }
            c
        };
        let feasible = |y: usize, z: usize| match prior {
            None => true,
            Some(p) => (z as i64 - p.heights[y] as i64).unsigned_abs() <= p.max_step as u64,
        };

        let mut best = f64::INFINITY;
        let mut stack: Vec<(usize, usize, f64)> = (lo..=hi)
            .filter(|&z| feasible(0, z))
            .map(|z| (0, z, node(0, z)))
            .collect();
        while let Some((y, z, cost)) = stack.pop() {
            if y + 1 == img.ny {
                best = best.min(cost);
                continue;
            }
            for nz in z.saturating_sub(1)..=(z + 1).min(hi) {
                if nz < lo || !feasible(y + 1, nz) {
                    continue;
                }
                let step = if nz == z { 0.0 } else { cfg.smoothness_weight };
                stack.push((y + 1, nz, cost + step + node(y + 1, nz)));
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Label;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxed(id: u32, z_min: f64, z_max: f64) -> Box3D {
        let vox = Box3i::new(0, 0, z_min as i32, 10, 10, z_max as i32);
        Box3D {
            id,
            label: Label::new(4).unwrap(),
            fdi: None,
            mm: Box3f { x_min: 0.0, y_min: 0.0, z_min, x_max: 10.0, y_max: 10.0, z_max },
            vox,
            detections: 5,
            divided_from: None,
        }
    }

    #[test]
    fn flags_only_the_outlier() {
        let flags = flag_extents(&[10.0, 10.0, 10.0, 24.0], 1.6);
        assert_eq!(flags, vec![false, false, false, true]);
    }

    #[test]
    fn uniform_extents_flag_nothing() {
        let flags = flag_extents(&[12.0, 12.0, 12.0, 12.0], 1.6);
        assert!(flags.iter().all(|&f| !f));
    }

    #[test]
    fn few_volumes_use_min_rule() {
        assert_eq!(flag_extents(&[10.0, 24.0], 1.6), vec![false, true]);
        assert_eq!(flag_extents(&[10.0], 1.6), vec![false]);
    }

    #[test]
    fn flag_double_reads_mm_extents() {
        let boxes = vec![boxed(0, 0.0, 10.0), boxed(1, 0.0, 10.0), boxed(2, 0.0, 10.0), boxed(3, 0.0, 24.0)];
        assert_eq!(flag_double(&boxes, 1.6), vec![false, false, false, true]);
    }

    fn column_volume(profile: &[i16]) -> VoxelVolume {
        // 4x4 footprint, given per-slice density
        let nz = profile.len();
        let mut v = VoxelVolume::filled((4, 4, nz), (1.0, 1.0, 1.0), 0).unwrap();
        for (z, &d) in profile.iter().enumerate() {
            for y in 0..4 {
                for x in 0..4 {
                    v.set(x, y, z, d);
                }
            }
        }
        v
    }

    #[test]
    fn profile_matches_brute_force_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut v = VoxelVolume::filled((6, 5, 8), (1.0, 1.0, 1.0), 0).unwrap();
        for z in 0..8 {
            for y in 0..5 {
                for x in 0..6 {
                    v.set(x, y, z, rng.random_range(0..1000));
                }
            }
        }
        let bx = Box3i::new(1, 1, 0, 5, 4, 8);
        let (profile, _) = vertical_density_profile(&v, &bx, 0.8).unwrap();
        for (i, z) in (0..8).enumerate() {
            let mut sum = 0f64;
            for y in 1..4 {
                for x in 1..5 {
                    sum += f64::from(v.get(x, y, z));
                }
            }
            assert!((profile[i] - sum / 12.0).abs() < 1e-9);
        }
    }

    #[test]
    fn valley_found_between_two_peaks() {
        let profile = [100, 800, 900, 850, 120, 40, 130, 860, 880, 820, 90, 0];
        let v = column_volume(&profile);
        let bx = Box3i::new(0, 0, 0, 4, 4, 12);
        let (_, z0) = vertical_density_profile(&v, &bx, 0.8).unwrap();
        assert_eq!(z0, 5, "valley sits at the density minimum");
    }

    #[test]
    fn uniform_column_falls_back_to_midpoint() {
        let v = column_volume(&[500; 10]);
        let bx = Box3i::new(0, 0, 0, 4, 4, 10);
        let (_, z0) = vertical_density_profile(&v, &bx, 0.6).unwrap();
        assert_eq!(z0, 5);
    }

    #[test]
    fn band_too_thin_is_refused() {
        assert!(band_bounds(1, 0.6).is_err());
        assert!(band_bounds(10, 0.6).is_ok());
    }

    fn flat_image(ny: usize, nz: usize, value: f64) -> SeamImage {
        SeamImage { ny, nz, data: vec![value; ny * nz] }
    }

    #[test]
    fn seam_on_flat_image_is_straight_at_z0() {
        let img = flat_image(12, 20, 0.0);
        let cfg = DivisionConfig::default();
        let (seam, _) = seam_in_sagittal_slice(&img, 8, (4, 15), &cfg, None).unwrap();
        assert!(seam.iter().all(|&z| z == 8));
    }

    #[test]
    fn seam_follows_a_low_density_channel() {
        // High density everywhere except a one-voxel channel at z = z0 + 3.
        let mut img = flat_image(10, 10, 1.0);
        let channel = 7usize;
        for y in 0..10 {
            img.data[y * 10 + channel] = 0.0;
        }
        let cfg = DivisionConfig::default();
        let band = (2, 9);
        let (seam, cost) = seam_in_sagittal_slice(&img, 4, band, &cfg, None).unwrap();
        // All columns on the channel except possibly the approach.
        assert!(seam.iter().filter(|&&z| z == channel).count() >= 8, "{seam:?}");
        let brute = oracle::best_seam_cost(&img, 4, band, &cfg, None);
        assert!((cost - brute).abs() < 1e-9);
    }

    #[test]
    fn dp_matches_exhaustive_search_on_small_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = DivisionConfig::default();
        for _ in 0..200 {
            let ny = rng.random_range(2..=8);
            let nz = rng.random_range(4..=8);
            let img = SeamImage {
                ny,
                nz,
                data: (0..ny * nz).map(|_| rng.random_range(0.0..1.0)).collect(),
            };
            let band = band_bounds(nz, 0.8).unwrap();
            let z0 = rng.random_range(band.0..=band.1);
            let (_, cost) = seam_in_sagittal_slice(&img, z0, band, &cfg, None).unwrap();
            let brute = oracle::best_seam_cost(&img, z0, band, &cfg, None);
            assert!(
                (cost - brute).abs() < 1e-9,
                "dp {cost} vs brute {brute} on ny={ny} nz={nz}"
            );
        }
    }

    #[test]
    fn raising_midline_weight_never_increases_deviation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let ny = 8;
            let nz = 12;
            let img = SeamImage {
                ny,
                nz,
                data: (0..ny * nz).map(|_| rng.random_range(0.0..1.0)).collect(),
            };
            let band = band_bounds(nz, 0.8).unwrap();
            let z0 = (band.0 + band.1) / 2;
            let weak = DivisionConfig { midline_weight: 0.05, ..DivisionConfig::default() };
            let strong = DivisionConfig { midline_weight: 0.8, ..weak.clone() };
            let dev = |cfg: &DivisionConfig| {
                let (seam, _) = seam_in_sagittal_slice(&img, z0, band, cfg, None).unwrap();
                seam.iter().map(|&z| (z as f64 - z0 as f64).abs()).sum::<f64>() / ny as f64
            };
            assert!(dev(&strong) <= dev(&weak) + 1e-9);
        }
    }

    #[test]
    fn seam_confined_to_band_with_unit_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = DivisionConfig::default();
        for _ in 0..100 {
            let ny = rng.random_range(2..=10);
            let nz = rng.random_range(4..=16);
            let img = SeamImage {
                ny,
                nz,
                data: (0..ny * nz).map(|_| rng.random_range(0.0..1.0)).collect(),
            };
            let band = band_bounds(nz, 0.6).unwrap();
            let z0 = rng.random_range(band.0..=band.1);
            let (seam, _) = seam_in_sagittal_slice(&img, z0, band, &cfg, None).unwrap();
            assert!(seam.iter().all(|&z| (band.0..=band.1).contains(&z)));
            for w in seam.windows(2) {
                assert!(w[0].abs_diff(w[1]) <= 1);
            }
        }
    }

    fn fused_pair_volume(gap_rows: i32, nz: usize) -> (VoxelVolume, Box3i) {
        // Two dense blocks separated by a low-density aperture.
        let (nx, ny) = (8usize, 9usize);
        let mut v = VoxelVolume::filled((nx, ny, nz), (1.0, 1.0, 1.0), 0).unwrap();
        let mid = nz as i32 / 2;
        for z in 0..nz as i32 {
            let in_gap = (z - mid).abs() < gap_rows;
            for y in 1..ny - 1 {
                for x in 1..nx - 1 {
                    if !in_gap {
                        v.set(x, y, z as usize, 1500);
                    }
                }
            }
        }
        (v, Box3i::new(0, 0, 0, nx as i32, ny as i32, nz as i32))
    }

    #[test]
    fn lattice_identical_slices_identical_seams() {
        let (v, bx) = fused_pair_volume(2, 20);
        let cfg = DivisionConfig::default();
        let (_, z0) = vertical_density_profile(&v, &bx, cfg.band_fraction).unwrap();
        let surface = build_lattice(&v, &bx, z0, &cfg).unwrap();
        let first: Vec<i32> = (0..surface.ny as i32).map(|y| surface.height(0, y)).collect();
        for x in 1..surface.nx as i32 {
            for y in 0..surface.ny as i32 {
                assert_eq!(surface.height(x, y), first[y as usize]);
            }
        }
    }

    #[test]
    fn single_slice_box_lattice_equals_its_seam() {
        let (v, bx) = fused_pair_volume(2, 20);
        let thin = Box3i::new(3, 0, 0, 4, bx.y_max, bx.z_max);
        let cfg = DivisionConfig::default();
        let (_, z0) = vertical_density_profile(&v, &thin, cfg.band_fraction).unwrap();
        let surface = build_lattice(&v, &thin, z0, &cfg).unwrap();
        assert_eq!(surface.nx, 1);
        // Reproduce the single seam directly and compare.
        let nz = (thin.z_max - thin.z_min) as usize;
        let ny = (thin.y_max - thin.y_min) as usize;
        let mut d_min = f64::INFINITY;
        let mut d_max = f64::NEG_INFINITY;
        let mut data = Vec::new();
        for y in 0..ny {
            for z in 0..nz {
                let val = f64::from(v.get(3, y, z));
                d_min = d_min.min(val);
                d_max = d_max.max(val);
                data.push(val);
            }
        }
        let scale = 1.0 / (d_max - d_min);
        for val in &mut data {
            *val = (*val - d_min) * scale;
        }
        let img = SeamImage { ny, nz, data };
        let band = band_bounds(nz, cfg.band_fraction).unwrap();
        let (seam, _) = seam_in_sagittal_slice(&img, z0, band, &cfg, None).unwrap();
        for (y, &r) in seam.iter().enumerate() {
            assert_eq!(surface.height(3, y as i32), r as i32);
        }
    }

    #[test]
    fn lattice_respects_inter_slice_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut v = VoxelVolume::filled((10, 8, 16), (1.0, 1.0, 1.0), 0).unwrap();
        for z in 0..16 {
            for y in 0..8 {
                for x in 0..10 {
                    v.set(x, y, z, rng.random_range(0..1800));
                }
            }
        }
        let bx = Box3i::new(0, 0, 0, 10, 8, 16);
        let cfg = DivisionConfig::default();
        let (_, z0) = vertical_density_profile(&v, &bx, cfg.band_fraction).unwrap();
        let s = build_lattice(&v, &bx, z0, &cfg).unwrap();
        for x in 0..s.nx as i32 {
            for y in 0..s.ny as i32 {
                if y + 1 < s.ny as i32 {
                    assert!((s.height(x, y) - s.height(x, y + 1)).abs() <= 1);
                }
                if x + 1 < s.nx as i32 {
                    assert!((s.height(x, y) - s.height(x + 1, y)).abs() <= cfg.inter_slice_step);
                }
            }
        }
    }

    #[test]
    fn lattice_tracks_a_tilted_gap_plane() {
        // Gap plane z = 10 + 0.25 * x: within the inter-slice step.
        let (nx, ny, nz) = (12usize, 8usize, 22usize);
        let mut v = VoxelVolume::filled((nx, ny, nz), (1.0, 1.0, 1.0), 0).unwrap();
        for x in 0..nx {
            let plane = 10.0 + 0.25 * x as f64;
            for z in 0..nz {
                let dist = (z as f64 + 0.5) - plane;
                if dist.abs() > 1.2 {
                    for y in 0..ny {
                        v.set(x, y, z, 1600);
                    }
                }
            }
        }
        let bx = Box3i::new(0, 0, 0, nx as i32, ny as i32, nz as i32);
        let cfg = DivisionConfig::default();
        let (_, z0) = vertical_density_profile(&v, &bx, cfg.band_fraction).unwrap();
        let s = build_lattice(&v, &bx, z0, &cfg).unwrap();
        let mut err = 0.0;
        for x in 0..nx {
            let plane_row = 10.0 + 0.25 * x as f64 - 0.5; // row whose center sits on the plane
            for y in 0..ny {
                err += (f64::from(s.height(x as i32, y as i32)) - plane_row).abs();
            }
        }
        err /= (nx * ny) as f64;
        assert!(err <= 1.0, "mean lattice error {err} exceeds one voxel");
    }

    #[test]
    fn split_flat_surface_partitions_the_parent() {
        let parent = boxed(7, 0.0, 20.0);
        let surface = DivisionSurface {
            x_min: 0,
            y_min: 0,
            nx: 10,
            ny: 10,
            heights: vec![9; 100],
        };
        let (up, low) = split_volume(&parent, &surface, (1.0, 1.0, 1.0), (8, 9)).unwrap();
        assert_eq!(up.vox, Box3i::new(0, 0, 10, 10, 10, 20));
        assert_eq!(low.vox, Box3i::new(0, 0, 0, 10, 10, 10));
        assert_eq!(up.divided_from, Some(7));
        assert_eq!(low.divided_from, Some(7));
        assert_eq!(up.label, parent.label);
        // Partition: every parent voxel is on exactly one side.
        for z in 0..20 {
            for y in 0..10 {
                for x in 0..10 {
                    let in_up = up.vox.contains(x, y, z);
                    let in_low = low.vox.contains(x, y, z);
                    assert!(in_up ^ in_low, "voxel ({x},{y},{z})");
                }
            }
        }
    }

    #[test]
    fn split_partition_for_varying_surfaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let parent = boxed(1, 0.0, 16.0);
            // A smooth random surface within the parent's z range.
            let mut heights = vec![0i32; 100];
            let mut h = rng.random_range(4..12);
            for x in 0..10 {
                h = (h + rng.random_range(-1..=1)).clamp(2, 13);
                let mut hy = h;
                for y in 0..10 {
                    hy = (hy + rng.random_range(-1..=1)).clamp(2, 13);
                    heights[x * 10 + y] = hy;
                }
            }
            let surface = DivisionSurface { x_min: 0, y_min: 0, nx: 10, ny: 10, heights };
            let (up, low) = split_volume(&parent, &surface, (1.0, 1.0, 1.0), (2, 3)).unwrap();
            let mut assigned = 0i64;
            for z in 0..16 {
                for y in 0..10 {
                    for x in 0..10 {
                        let above = z > surface.height(x, y);
                        let in_up = up.vox.contains(x, y, z);
                        let in_low = low.vox.contains(x, y, z);
                        // Hulls may overlap, but the assignment rule itself
                        // is a partition and each side's hull must contain
                        // its voxels.
                        if above {
                            assert!(in_up);
                        } else {
                            assert!(in_low);
                        }
                        assigned += 1;
                    }
                }
            }
            assert_eq!(assigned, parent.vox.volume());
        }
    }

    #[test]
    fn split_rejects_empty_side() {
        let parent = boxed(7, 0.0, 20.0);
        let surface = DivisionSurface {
            x_min: 0,
            y_min: 0,
            nx: 10,
            ny: 10,
            heights: vec![19; 100], // everything below or at the seam
        };
        assert_eq!(
            split_volume(&parent, &surface, (1.0, 1.0, 1.0), (8, 9)),
            Err(CoreError::EmptySplit { side: "upper" })
        );
    }

    #[test]
    fn split_rejects_mismatched_footprint() {
        let parent = boxed(7, 0.0, 20.0);
        let surface = DivisionSurface { x_min: 0, y_min: 0, nx: 4, ny: 4, heights: vec![5; 16] };
        assert_eq!(
            split_volume(&parent, &surface, (1.0, 1.0, 1.0), (8, 9)),
            Err(CoreError::SurfaceMismatch)
        );
    }

    #[test]
    fn seam_avoids_density_on_a_real_gap() {
        let (v, bx) = fused_pair_volume(2, 24);
        let cfg = DivisionConfig::default();
        let (_, z0) = vertical_density_profile(&v, &bx, cfg.band_fraction).unwrap();
        let s = build_lattice(&v, &bx, z0, &cfg).unwrap();
        // Mean density under the seam must not exceed the box's 10th
        // percentile density.
        let mut all: Vec<i16> = Vec::new();
        for z in 0..24 {
            for y in 0..9 {
                for x in 0..8 {
                    all.push(v.get(x, y, z));
                }
            }
        }
        all.sort_unstable();
        let p10 = f64::from(all[all.len() / 10]);
        let mut under = 0.0;
        for x in 0..s.nx as i32 {
            for y in 0..s.ny as i32 {
                under += f64::from(v.get(x as usize, y as usize, s.height(x, y) as usize));
            }
        }
        under /= (s.nx * s.ny) as f64;
        assert!(under <= p10, "seam mean density {under} above p10 {p10}");
    }
}
