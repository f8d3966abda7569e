//! The detection contract and a synthetic detector.
//!
//! Upstream, a single-stage object detector evaluates each sampled axial
//! slice and emits labeled 2D boxes; eight classes cover tooth types without
//! distinguishing jaw or side. That model is out of scope here: this module
//! fixes its output contract and provides [`synth_detect`], which derives
//! detections from phantom ground truth and perturbs them with a
//! configurable noise model.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::geom::Box2i;
use crate::phantom::GroundTruth;

/// Tooth class, 1..=8: first incisor, second incisor, canine, first
/// premolar, second premolar, first molar, second molar, third molar.
///
/// Each class covers the four same-type teeth across quadrants; e.g. class 1
/// stands for FDI codes 11, 21, 31 and 41.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Label(u8);

impl Label {
    pub const COUNT: usize = 8;

    pub fn new(class: u8) -> Result<Self, CoreError> {
        if (1..=8).contains(&class) {
            Ok(Self(class))
        } else {
            Err(CoreError::LabelRange(class))
        }
    }

    pub fn class(self) -> u8 {
        self.0
    }

    /// Zero-based index for histogram arrays.
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }

    /// FDI two-digit code of this class in the given quadrant (1..=4).
    pub fn fdi(self, quadrant: u8) -> u8 {
        debug_assert!((1..=4).contains(&quadrant));
        quadrant * 10 + self.0
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            1 => "first incisor",
            2 => "second incisor",
            3 => "canine",
            4 => "first premolar",
            5 => "second premolar",
            6 => "first molar",
            7 => "second molar",
            _ => "third molar",
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = CoreError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Label::new(v)
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.0
    }
}

/// One labeled 2D box on one axial slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub slice: usize,
    pub rect: Box2i,
    pub label: Label,
    pub confidence: f64,
}

/// Perturbations applied to synthetic detections, mimicking the failure
/// modes of a real detector. All enabled channels draw from one stream
/// seeded by `seed`, so a fixed seed fixes the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Probability of dropping a true detection.
    pub dropout: f64,
    /// Probability of replacing the true label with a uniformly random
    /// other class.
    pub label_confusion: f64,
    /// Standard deviation of the box-center jitter, in voxels.
    pub center_jitter: f64,
    /// Standard deviation of the box-size jitter, in voxels.
    pub size_jitter: f64,
    /// Expected number of spurious boxes per slice (Poisson).
    pub spurious_rate: f64,
    pub seed: u64,
}

impl NoiseModel {
    /// A noise-free model: detections equal the ground-truth cross-sections.
    pub fn none(seed: u64) -> Self {
        Self {
            dropout: 0.0,
            label_confusion: 0.0,
            center_jitter: 0.0,
            size_jitter: 0.0,
            spurious_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for (name, p) in [("dropout", self.dropout), ("label_confusion", self.label_confusion)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::BadNoise(format!(
                    "{name} must be a probability in [0, 1], got {p}"
                )));
            }
        }
        for (name, s) in [
            ("center_jitter", self.center_jitter),
            ("size_jitter", self.size_jitter),
            ("spurious_rate", self.spurious_rate),
        ] {
            if !s.is_finite() || s < 0.0 {
                return Err(CoreError::BadNoise(format!(
                    "{name} must be finite and >= 0, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Derives detections from ground truth on the sampled slices and applies
/// noise, per candidate, in the order dropout, label confusion, jitter;
/// spurious boxes are appended per slice afterwards. `plane_dims` is the
/// axial plane size `(nx, ny)` used to clamp and place boxes.
///
/// Cross-sections overlapping on the same slice merge into one candidate
/// the way a real detector sees interpenetrating occlusal counterparts as
/// one blob; the merged box is the union, labeled by the larger
/// contributor. For teeth with vertical clearance the output is exactly
/// one box per tooth and intersected slice.
pub fn synth_detect(
    gt: &GroundTruth,
    slices: &[usize],
    plane_dims: (usize, usize),
    noise: &NoiseModel,
) -> Result<BTreeMap<usize, Vec<Detection2D>>, CoreError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let center_jitter = Normal::new(0.0, noise.center_jitter)
        .map_err(|_| CoreError::BadNoise(format!("center_jitter {}", noise.center_jitter)))?;
    let size_jitter = Normal::new(0.0, noise.size_jitter)
        .map_err(|_| CoreError::BadNoise(format!("size_jitter {}", noise.size_jitter)))?;

    let (nx, ny) = (plane_dims.0 as i32, plane_dims.1 as i32);
    let mut out: BTreeMap<usize, Vec<Detection2D>> = BTreeMap::new();

    let mut sorted_slices: Vec<usize> = slices.to_vec();
    sorted_slices.sort_unstable();
    sorted_slices.dedup();

    for &z in &sorted_slices {
        let mut candidates: Vec<(Box2i, Label)> = Vec::new();
        for tooth in &gt.teeth {
            let b = &tooth.box_vox;
            if (z as i32) < b.z_min || (z as i32) >= b.z_max {
                continue;
            }
            // The cross-section of the ground-truth box on this slice.
            candidates.push((Box2i::new(b.x_min, b.y_min, b.x_max, b.y_max), tooth.label));
        }
        merge_overlapping(&mut candidates);

        let mut dets: Vec<Detection2D> = Vec::new();
        for (rect, label) in candidates {
            if noise.dropout > 0.0 && rng.random_bool(noise.dropout) {
                continue;
            }

            let mut label = label;
            if noise.label_confusion > 0.0 && rng.random_bool(noise.label_confusion) {
                // Uniform over the seven other classes.
                let mut pick = rng.random_range(1..=7u8);
                if pick >= label.class() {
                    pick += 1;
                }
                label = Label::new(pick).expect("pick stays in 1..=8");
            }

            let rect = jitter_rect(&rect, &mut rng, &center_jitter, &size_jitter, nx, ny);
            let confidence = 1.0 - 0.02 * rng.random_range(0.0..1.0);
            dets.push(Detection2D { slice: z, rect, label, confidence });
        }

        if noise.spurious_rate > 0.0 {
            let poisson = Poisson::new(noise.spurious_rate)
                .map_err(|_| CoreError::BadNoise(format!("spurious_rate {}", noise.spurious_rate)))?;
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                if let Some(d) = spurious_detection(gt, z, &mut rng, nx, ny) {
                    dets.push(d);
                }
            }
        }

        if !dets.is_empty() {
            out.insert(z, dets);
        }
    }
    Ok(out)
}

/// Collapses overlapping boxes into their union until all candidates are
/// pairwise disjoint; the label of the larger area survives.
fn merge_overlapping(candidates: &mut Vec<(Box2i, Label)>) {
    loop {
        let mut merged = false;
        'outer: for i in 0..candidates.len() {
            for j in (i + 1)..candidates.len() {
                if candidates[i].0.intersection_area(&candidates[j].0) > 0 {
                    let (a, la) = candidates[i];
                    let (b, lb) = candidates.remove(j);
                    let union = Box2i::new(
                        a.x_min.min(b.x_min),
                        a.y_min.min(b.y_min),
                        a.x_max.max(b.x_max),
                        a.y_max.max(b.y_max),
                    );
                    let label = if b.area() > a.area() { lb } else { la };
                    candidates[i] = (union, label);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            return;
        }
    }
}

fn jitter_rect(
    rect: &Box2i,
    rng: &mut ChaCha8Rng,
    center: &Normal<f64>,
    size: &Normal<f64>,
    nx: i32,
    ny: i32,
) -> Box2i {
    let (cx, cy) = rect.center();
    let cx = cx + center.sample(rng);
    let cy = cy + center.sample(rng);
    let w = (f64::from(rect.width()) + size.sample(rng)).max(1.0);
    let h = (f64::from(rect.height()) + size.sample(rng)).max(1.0);
    clamp_rect(cx, cy, w, h, nx, ny)
}

/// A fake box modeling structures mistaken for teeth: uniform position on
/// the plane, size drawn from the ground-truth box size distribution,
/// uniform random label.
fn spurious_detection(
    gt: &GroundTruth,
    z: usize,
    rng: &mut ChaCha8Rng,
    nx: i32,
    ny: i32,
) -> Option<Detection2D> {
    let (w, h) = if gt.teeth.is_empty() {
        (6.0, 6.0)
    } else {
        let t = &gt.teeth[rng.random_range(0..gt.teeth.len())];
        let b = &t.box_vox;
        (f64::from(b.x_max - b.x_min), f64::from(b.y_max - b.y_min))
    };
    let cx = rng.random_range(0.0..f64::from(nx));
    let cy = rng.random_range(0.0..f64::from(ny));
    let label = Label::new(rng.random_range(1..=8u8)).expect("in range");
    let confidence = 1.0 - 0.02 * rng.random_range(0.0..1.0);
    let rect = clamp_rect(cx, cy, w, h, nx, ny);
    rect.is_valid().then_some(Detection2D { slice: z, rect, label, confidence })
}

fn clamp_rect(cx: f64, cy: f64, w: f64, h: f64, nx: i32, ny: i32) -> Box2i {
    let x_min = libm::round(cx - w / 2.0) as i32;
    let y_min = libm::round(cy - h / 2.0) as i32;
    let x_max = x_min + (libm::round(w) as i32).max(1);
    let y_max = y_min + (libm::round(h) as i32).max(1);
    // Shift into the plane rather than shrink, so sizes survive clamping
    // whenever they fit.
    let (x_min, x_max) = shift_into(x_min, x_max, nx);
    let (y_min, y_max) = shift_into(y_min, y_max, ny);
    Box2i::new(x_min, y_min, x_max, y_max)
}

fn shift_into(min: i32, max: i32, bound: i32) -> (i32, i32) {
    let mut min = min;
    let mut max = max;
    if max > bound {
        min -= max - bound;
        max = bound;
    }
    if min < 0 {
        max = (max - min).min(bound);
        min = 0;
    }
    (min, max)
}
