//! Synthetic dental phantoms with exact ground truth.
//!
//! A phantom renders each tooth as a vertically stacked crown frustum plus
//! root cone of configurable density inside a uniform background, optionally
//! with a posterior bone-like support plate (so the axial density profile
//! stays high across the whole dentition, as it does in real scans) and
//! additive voxel noise. Upper teeth hang from the maxillary occlusal plane,
//! lower teeth rise to the mandibular one; the interocclusal gap parameter
//! sets the clearance between those planes and may be negative to force
//! fused occlusal counterparts.
//!
//! Ground truth is the tight voxel bounding box of every rendered tooth,
//! which makes the phantoms usable as oracles for matching, flagging, and
//! seam division.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::Label;
use crate::error::CoreError;
use crate::geom::Box3i;
use crate::volume::VoxelVolume;

/// Which jaw a tooth belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Upper,
    Lower,
}

/// One synthetic tooth: a crown frustum (tapering toward the bite) stacked
/// on a root cone, extruded from the arch's occlusal plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToothSpec {
    pub label: Label,
    /// Axial position of the tooth axis, millimeters.
    pub center_mm: (f64, f64),
    pub crown_radius_mm: f64,
    pub root_radius_mm: f64,
    /// Total crown + root height.
    pub height_mm: f64,
    pub density: i16,
    /// Per-tooth deviation of the occlusal tip from the arch plane,
    /// millimeters toward the opposing jaw when positive.
    #[serde(default)]
    pub occlusal_offset_mm: f64,
}

/// Full phantom description. Deterministic for a fixed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: (usize, usize, usize),
    pub spacing_mm: (f32, f32, f32),
    pub maxilla: Vec<ToothSpec>,
    pub mandible: Vec<ToothSpec>,
    /// Vertical clearance between the two occlusal planes; zero or negative
    /// forces vertically overlapping counterparts.
    pub interocclusal_gap_mm: f64,
    pub background_density: i16,
    /// Density of the posterior support plate; 0 disables it. The plate
    /// spans the vertical range of the teeth only.
    pub scaffold_density: i16,
    /// Additive uniform voxel noise in `[-amplitude, amplitude]`.
    pub noise_amplitude: i16,
    pub seed: u64,
}

/// Ground truth for one rendered tooth: tight voxel bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTooth {
    pub id: u32,
    pub label: Label,
    pub fdi: Option<u8>,
    pub box_vox: Box3i,
    pub arch: Arch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub teeth: Vec<GtTooth>,
    /// Clearance the phantom was built with, when known.
    pub interocclusal_gap_mm: Option<f64>,
    /// Height of the mid-occlusal plane, millimeters.
    pub occlusal_plane_z_mm: Option<f64>,
}

/// Fraction of the tooth height taken by the crown.
const CROWN_FRACTION: f64 = 0.45;
/// Crown radius at the occlusal tip relative to the cervical radius; slim
/// enough that the per-slice mass dips toward the bite even when two tips
/// meet there.
const TIP_TAPER: f64 = 0.35;
/// Depth of the posterior plate as a fraction of the volume's y extent.
const PLATE_DEPTH_FRACTION: f64 = 0.10;

impl PhantomSpec {
    /// Physical volume extents in millimeters.
    pub fn extent_mm(&self) -> (f64, f64, f64) {
        (
            self.dims.0 as f64 * f64::from(self.spacing_mm.0),
            self.dims.1 as f64 * f64::from(self.spacing_mm.1),
            self.dims.2 as f64 * f64::from(self.spacing_mm.2),
        )
    }

    /// Height of the mid-occlusal plane (the volume's vertical center).
    pub fn occlusal_plane_z_mm(&self) -> f64 {
        self.extent_mm().2 / 2.0
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.dims.0 == 0 || self.dims.1 == 0 || self.dims.2 == 0 {
            return Err(CoreError::BadPhantom("dims must all be >= 1".into()));
        }
        for s in [self.spacing_mm.0, self.spacing_mm.1, self.spacing_mm.2] {
            if !s.is_finite() || s <= 0.0 {
                return Err(CoreError::BadPhantom(format!("spacing must be positive, got {s}")));
            }
        }
        if self.noise_amplitude < 0 {
            return Err(CoreError::BadPhantom("noise amplitude must be >= 0".into()));
        }
        for (arch, teeth) in [(Arch::Upper, &self.maxilla), (Arch::Lower, &self.mandible)] {
            if teeth.len() > 16 {
                return Err(CoreError::BadPhantom(format!(
                    "{arch:?} arch holds {} teeth, at most 16 allowed",
                    teeth.len()
                )));
            }
            for (i, t) in teeth.iter().enumerate() {
                self.validate_tooth(arch, i, t)?;
            }
        }
        Ok(())
    }

    fn validate_tooth(&self, arch: Arch, i: usize, t: &ToothSpec) -> Result<(), CoreError> {
        let where_ = |msg: String| CoreError::BadPhantom(format!("{arch:?} tooth {i}: {msg}"));
        if t.height_mm <= 0.0 || t.crown_radius_mm <= 0.0 || t.root_radius_mm <= 0.0 {
            return Err(where_("height and radii must be positive".into()));
        }
        if !t.height_mm.is_finite() || !t.crown_radius_mm.is_finite() || !t.root_radius_mm.is_finite()
        {
            return Err(where_("height and radii must be finite".into()));
        }
        let (lx, ly, lz) = self.extent_mm();
        let r = t.crown_radius_mm.max(t.root_radius_mm);
        if t.center_mm.0 - r < 0.0
            || t.center_mm.0 + r > lx
            || t.center_mm.1 - r < 0.0
            || t.center_mm.1 + r > ly
        {
            return Err(where_(format!(
                "axial footprint around ({}, {}) does not fit the volume",
                t.center_mm.0, t.center_mm.1
            )));
        }
        let (z0, z1) = tooth_span_mm(self, arch, t);
        if z0 < 0.0 || z1 > lz {
            return Err(where_(format!("vertical span [{z0:.1}, {z1:.1}] mm exceeds the volume")));
        }
        Ok(())
    }
}

/// Vertical span `[low, high)` of a tooth in millimeters.
fn tooth_span_mm(spec: &PhantomSpec, arch: Arch, t: &ToothSpec) -> (f64, f64) {
    let z_occ = spec.occlusal_plane_z_mm();
    let half_gap = spec.interocclusal_gap_mm / 2.0;
    match arch {
        Arch::Upper => {
            let tip = z_occ + half_gap - t.occlusal_offset_mm;
            (tip, tip + t.height_mm)
        }
        Arch::Lower => {
            let tip = z_occ - half_gap + t.occlusal_offset_mm;
            (tip - t.height_mm, tip)
        }
    }
}

/// Tooth radius at height `z_mm`, or `None` outside the tooth. `dist_to_tip`
/// is measured from the occlusal tip toward the root apex.
fn tooth_radius_at(t: &ToothSpec, dist_to_tip: f64, radius_floor: f64) -> Option<f64> {
    if dist_to_tip < 0.0 || dist_to_tip >= t.height_mm {
        return None;
    }
    let crown_h = CROWN_FRACTION * t.height_mm;
    let r = if dist_to_tip < crown_h {
        t.crown_radius_mm * (TIP_TAPER + (1.0 - TIP_TAPER) * dist_to_tip / crown_h)
    } else {
        let u = (dist_to_tip - crown_h) / (t.height_mm - crown_h);
        t.root_radius_mm * (1.0 - u)
    };
    Some(r.max(radius_floor))
}

/// Renders a phantom. Deterministic: identical specs produce identical
/// volume bytes and ground truth.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(VoxelVolume, GroundTruth), CoreError> {
    spec.validate()?;
    let mut vol = VoxelVolume::filled(spec.dims, spec.spacing_mm, spec.background_density)
        .map_err(|e| CoreError::BadPhantom(format!("{e}")))?;
    let (sx, sy, _) = vol.spacing_f64();
    // A radius floor slightly above half the diagonal voxel pitch keeps
    // every in-span row painted, so ground-truth boxes track the analytic
    // span to within one voxel.
    let radius_floor = 0.75 * sx.max(sy);

    let mut teeth: Vec<GtTooth> = Vec::new();
    let mut z_range_mm: Option<(f64, f64)> = None;
    let mut next_id = 0u32;

    let plane = spec.occlusal_plane_z_mm();
    for (arch, list) in [(Arch::Upper, &spec.maxilla), (Arch::Lower, &spec.mandible)] {
        for t in list {
            let (z0, z1) = tooth_span_mm(spec, arch, t);
            // A tip reaching past the occlusal plane (negative gap) only
            // grazes it: the part beyond the plane renders as a thin
            // contact spike, since solid teeth cannot interpenetrate. The
            // crown taper then starts at the plane.
            let taper_origin = match arch {
                Arch::Upper => z0.max(plane.min(z1)),
                Arch::Lower => z1.min(plane.max(z0)),
            };
            z_range_mm = Some(match z_range_mm {
                None => (z0, z1),
                Some((a, b)) => (a.min(z0), b.max(z1)),
            });
            let bounds = rasterize_tooth(&mut vol, t, arch, (z0, z1), taper_origin, radius_floor);
            let Some(box_vox) = bounds else {
                return Err(CoreError::BadPhantom(format!(
                    "{arch:?} tooth at ({}, {}) rendered no voxels",
                    t.center_mm.0, t.center_mm.1
                )));
            };
            teeth.push(GtTooth { id: next_id, label: t.label, fdi: None, box_vox, arch });
            next_id += 1;
        }
    }

    if spec.scaffold_density > spec.background_density {
        if let Some((z0, z1)) = z_range_mm {
            paint_plate(&mut vol, spec.scaffold_density, z0, z1);
        }
    }

    if spec.noise_amplitude > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let a = i32::from(spec.noise_amplitude);
        for v in vol.data_mut() {
            let n = rng.random_range(-a..=a);
            *v = (i32::from(*v) + n).clamp(i32::from(i16::MIN), i32::from(i16::MAX)) as i16;
        }
    }

    // FDI codes from the construction geometry: quadrant by arch and by the
    // side of the mid-sagittal plane (x below center is the patient's
    // right); ties fall to the left quadrants.
    let mid_x_vox = spec.dims.0 as f64 / 2.0;
    for t in &mut teeth {
        let cx = (f64::from(t.box_vox.x_min) + f64::from(t.box_vox.x_max)) / 2.0;
        let right = cx < mid_x_vox;
        let quadrant = match (t.arch, right) {
            (Arch::Upper, true) => 1,
            (Arch::Upper, false) => 2,
            (Arch::Lower, false) => 3,
            (Arch::Lower, true) => 4,
        };
        t.fdi = Some(t.label.fdi(quadrant));
    }

    Ok((
        vol,
        GroundTruth {
            teeth,
            interocclusal_gap_mm: Some(spec.interocclusal_gap_mm),
            occlusal_plane_z_mm: Some(spec.occlusal_plane_z_mm()),
        },
    ))
}

/// Paints one tooth and returns the tight voxel bounds of what was painted.
/// `span_mm` is the full vertical extent; rows between the analytic tip and
/// `taper_origin_mm` render at the floor radius (the contact spike of a
/// closed bite), the crown taper measuring its distance from the origin.
fn rasterize_tooth(
    vol: &mut VoxelVolume,
    t: &ToothSpec,
    arch: Arch,
    span_mm: (f64, f64),
    taper_origin_mm: f64,
    radius_floor: f64,
) -> Option<Box3i> {
    let (z0_mm, z1_mm) = span_mm;
    let (nx, ny, nz) = vol.dims();
    let (sx, sy, sz) = vol.spacing_f64();
    let r_max = t.crown_radius_mm.max(t.root_radius_mm).max(radius_floor);

    let x_lo = (((t.center_mm.0 - r_max) / sx) as usize).min(nx - 1);
    let x_hi = ((((t.center_mm.0 + r_max) / sx) as usize) + 1).min(nx);
    let y_lo = (((t.center_mm.1 - r_max) / sy) as usize).min(ny - 1);
    let y_hi = ((((t.center_mm.1 + r_max) / sy) as usize) + 1).min(ny);
    let z_lo = ((z0_mm / sz).max(0.0) as usize).min(nz - 1);
    let z_hi = (((z1_mm / sz) as usize) + 1).min(nz);

    let mut bounds: Option<(usize, usize, usize, usize, usize, usize)> = None;
    for z in z_lo..z_hi {
        let zc = (z as f64 + 0.5) * sz;
        let in_span = zc >= z0_mm && zc < z1_mm;
        if !in_span {
            continue;
        }
        let dist_to_origin = match arch {
            Arch::Upper => zc - taper_origin_mm,
            Arch::Lower => taper_origin_mm - zc,
        };
        let r = if dist_to_origin < 0.0 {
            Some(radius_floor) // contact spike past the occlusal plane
        } else {
            tooth_radius_at(t, dist_to_origin, radius_floor)
        };
        let Some(r) = r else {
            continue;
        };
        let r2 = r * r;
        for y in y_lo..y_hi {
            let dy = (y as f64 + 0.5) * sy - t.center_mm.1;
            for x in x_lo..x_hi {
                let dx = (x as f64 + 0.5) * sx - t.center_mm.0;
                if dx * dx + dy * dy <= r2 {
                    let v = vol.get(x, y, z);
                    vol.set(x, y, z, v.max(t.density));
                    bounds = Some(match bounds {
                        None => (x, x, y, y, z, z),
                        Some((x0, x1, y0, y1, zb0, zb1)) => {
                            (x0.min(x), x1.max(x), y0.min(y), y1.max(y), zb0.min(z), zb1.max(z))
                        }
                    });
                }
            }
        }
    }

    bounds.map(|(x0, x1, y0, y1, zb0, zb1)| {
        Box3i::new(
            x0 as i32,
            y0 as i32,
            zb0 as i32,
            x1 as i32 + 1,
            y1 as i32 + 1,
            zb1 as i32 + 1,
        )
    })
}

/// Bone-like plate along the posterior wall spanning the dentition's
/// vertical range; keeps the axial mean profile above the slab threshold
/// across the whole tooth region, interocclusal gap included.
fn paint_plate(vol: &mut VoxelVolume, density: i16, z0_mm: f64, z1_mm: f64) {
    let (nx, ny, nz) = vol.dims();
    let sz = vol.spacing_f64().2;
    let depth_vox = ((PLATE_DEPTH_FRACTION * ny as f64) as usize).max(1);
    let y_lo = ny - depth_vox;
    for z in 0..nz {
        let zc = (z as f64 + 0.5) * sz;
        if zc < z0_mm || zc >= z1_mm {
            continue;
        }
        for y in y_lo..ny {
            for x in 0..nx {
                let v = vol.get(x, y, z);
                vol.set(x, y, z, v.max(density));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Arch builders
// ---------------------------------------------------------------------------

/// Crown radius, root radius, and height per tooth class, millimeters.
/// Slightly scaled-down dentition so that full arches fit a 76.8 mm field.
const CLASS_GEOMETRY: [(f64, f64, f64); 8] = [
    (2.0, 1.2, 13.0), // first incisor
    (2.0, 1.2, 13.5), // second incisor
    (2.3, 1.4, 15.0), // canine
    (2.5, 1.5, 14.0), // first premolar
    (2.5, 1.5, 14.0), // second premolar
    (3.0, 1.9, 13.0), // first molar
    (3.0, 1.9, 12.5), // second molar
    (2.8, 1.8, 12.0), // third molar
];

/// Lateral clearance between neighboring crowns along the arch, millimeters.
const ARCH_TOOTH_CLEARANCE: f64 = 1.8;
/// Wider clearance for division phantoms: keeps neighboring crowns out of
/// the margin-padded box of a flagged pair, so the seam sees only the pair.
const DIVISION_TOOTH_CLEARANCE: f64 = 2.6;
const DEFAULT_DIMS: (usize, usize, usize) = (128, 128, 128);
const DEFAULT_SPACING: f32 = 0.6;
pub const TOOTH_DENSITY: i16 = 1800;
pub const BONE_DENSITY: i16 = 700;

struct ArchLayout {
    a: f64,
    b: f64,
    center: (f64, f64),
}

impl ArchLayout {
    fn standard(extent: (f64, f64, f64)) -> Self {
        Self {
            a: 0.33 * extent.0,
            b: 0.38 * extent.1,
            center: (extent.0 / 2.0, 0.52 * extent.1),
        }
    }

    /// Point on the arch at arc length `s` from the anterior midline;
    /// negative `s` is the patient's right (lower x).
    fn at_arc(&self, s: f64) -> (f64, f64) {
        let theta = self.angle_for_arc(libm::fabs(s)) * if s < 0.0 { -1.0 } else { 1.0 };
        (
            self.center.0 + self.a * libm::sin(theta),
            self.center.1 - self.b * libm::cos(theta),
        )
    }

    fn angle_for_arc(&self, s: f64) -> f64 {
        let mut theta = 0.0f64;
        let mut acc = 0.0f64;
        let dt = 1e-3;
        while acc < s && theta < 1.8 {
            let dx = self.a * libm::cos(theta);
            let dy = self.b * libm::sin(theta);
            acc += libm::sqrt(dx * dx + dy * dy) * dt;
            theta += dt;
        }
        theta
    }
}

/// Slot positions along the arch for `count` teeth, alternating right/left
/// from the midline outward. Returns `(arc_s, class)` pairs.
fn arch_slots(count: usize, clearance: f64) -> Vec<(f64, u8)> {
    assert!(count <= 14, "arch builder places at most 14 teeth per arch");
    let mut out = Vec::with_capacity(count);
    let mut s_right = clearance / 2.0;
    let mut s_left = clearance / 2.0;
    for i in 0..count {
        let right = i % 2 == 0;
        let position = i / 2 + 1;
        let class = (position as u8).min(8);
        let w = 2.0 * CLASS_GEOMETRY[usize::from(class) - 1].0;
        let s = if right { &mut s_right } else { &mut s_left };
        let center = *s + w / 2.0;
        *s += w + clearance;
        out.push((if right { -center } else { center }, class));
    }
    out
}

fn tooth_at_slot(
    layout: &ArchLayout,
    slot: (f64, u8),
    rng: &mut ChaCha8Rng,
    shared_height: Option<f64>,
) -> ToothSpec {
    let (s, class) = slot;
    let (crown_r, root_r, height) = CLASS_GEOMETRY[usize::from(class) - 1];
    let scale = 1.0 + 0.08 * (rng.random_range(0.0..1.0) - 0.5);
    let height = shared_height.unwrap_or_else(|| height * (1.0 + 0.12 * (rng.random_range(0.0..1.0) - 0.5)));
    let (cx, cy) = layout.at_arc(s);
    ToothSpec {
        label: Label::new(class).expect("class in 1..=8"),
        center_mm: (cx, cy),
        crown_radius_mm: crown_r * scale,
        root_radius_mm: root_r * scale,
        height_mm: height,
        density: TOOTH_DENSITY,
        occlusal_offset_mm: 0.0,
    }
}

impl PhantomSpec {
    /// Two full arches of `upper` and `lower` teeth placed along a standard
    /// elliptic arch, vertically aligned so that same-slot teeth are
    /// occlusal counterparts. Tooth sizes vary mildly with the seed; tips
    /// sit exactly on their occlusal plane, so `gap_mm` is the exact
    /// clearance of every aligned pair.
    pub fn arches(upper: usize, lower: usize, gap_mm: f64, seed: u64) -> Self {
        let mut spec = Self {
            dims: DEFAULT_DIMS,
            spacing_mm: (DEFAULT_SPACING, DEFAULT_SPACING, DEFAULT_SPACING),
            maxilla: Vec::new(),
            mandible: Vec::new(),
            interocclusal_gap_mm: gap_mm,
            background_density: 0,
            scaffold_density: BONE_DENSITY,
            noise_amplitude: 30,
            seed,
        };
        let layout = ArchLayout::standard(spec.extent_mm());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in arch_slots(upper, ARCH_TOOTH_CLEARANCE) {
            spec.maxilla.push(tooth_at_slot(&layout, slot, &mut rng, None));
        }
        for slot in arch_slots(lower, ARCH_TOOTH_CLEARANCE) {
            spec.mandible.push(tooth_at_slot(&layout, slot, &mut rng, None));
        }
        spec
    }

    /// A phantom tailored to division tests: the first `pairs` arch slots
    /// hold vertically aligned upper/lower counterparts of equal height
    /// (these fuse when `gap_mm` is small), the next `singles` slots hold a
    /// single tooth alternating between the arches (these keep the size
    /// distribution anchored at single-tooth extents). Slots alternate
    /// sides, so the single teeth of one arch also alternate along each
    /// side and their boxes stay clear of each other.
    pub fn division_phantom(pairs: usize, singles: usize, gap_mm: f64, seed: u64) -> Self {
        let mut spec = Self::arches(0, 0, gap_mm, seed);
        let layout = ArchLayout::standard(spec.extent_mm());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = arch_slots(pairs + singles, DIVISION_TOOTH_CLEARANCE);
        for (i, slot) in slots.into_iter().enumerate() {
            if i < pairs {
                // Pairs sit at the front slots and get canine-like lengths:
                // they are the longest teeth in a real mouth, and the long
                // extent both clears the flagging threshold and keeps one
                // voxel row a small fraction of the tooth box.
                let height = 24.0 * (1.0 + 0.04 * (rng.random_range(0.0..1.0) - 0.5));
                spec.maxilla.push(tooth_at_slot(&layout, slot, &mut rng, Some(height)));
                spec.mandible.push(tooth_at_slot(&layout, slot, &mut rng, Some(height)));
            } else if (i / 2) % 2 == 0 {
                // Position parity, not slot parity: neighbors within one
                // side of one arch would otherwise sit box to box.
                spec.maxilla.push(tooth_at_slot(&layout, slot, &mut rng, None));
            } else {
                spec.mandible.push(tooth_at_slot(&layout, slot, &mut rng, None));
            }
        }
        spec
    }
}
