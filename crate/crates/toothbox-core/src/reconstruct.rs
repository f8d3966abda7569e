//! Slice-by-slice reconstruction of 3D tooth volumes from 2D detections.
//!
//! Traversal starts at the top axial slice carrying detections and walks
//! down. Every detection on the first such slice seeds an active track; on
//! each following slice the detections are matched against the active
//! tracks by minimum-cost assignment over the match quality
//!
//! ```text
//! q(t, b) = w1 * d(t, b) * h(t, b)        vertical distance, gated
//!         + w2 * (1 - IoU(t, b))          axial overlap with the last match
//!         + w3 * (1 - f_label(t, b))      label agreement with the track
//! ```
//!
//! where `h` zeroes the distance term within the proximity bound `gamma`
//! and `f_label` is the fraction of the track's matches sharing the
//! candidate's label. Pairs with `q > beta` are forbidden. Unmatched
//! detections seed new tracks; tracks that miss `max_skipped_slices`
//! consecutive slices close and accept no further matches — that closure,
//! not the cost, is what rejects matches across more than one missed slice
//! under the default calibration. Tracks with too few detections or too
//! little vertical span are discarded as noise. Gaps left by the sparse
//! slice sampling are filled by linear interpolation, and each surviving
//! track becomes an axis-aligned labeled box with a configurable context
//! margin.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assign::{solve_assignment, CostMatrix, FORBIDDEN};
use crate::detect::{Detection2D, Label};
use crate::geom::{lerp, Box2f, Box2i, Box3f, Box3i};

/// Calibration of the matching cost and track lifecycle.
///
/// The default calibration for a slice step `s` (in mm) is
/// `beta = 1`, `gamma = s`, `w1 = beta / (4 * gamma)`,
/// `w2 = beta * (1 + 1e-6)`, `w3 = 0.2 * beta`: a perfect adjacent match
/// scores 0, one skipped slice costs `beta / 2`, a pure label mismatch
/// `0.2 * beta`, and a pair without axial overlap always exceeds `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Maximum allowed match cost.
    pub beta: f64,
    /// Proximity bound below which the distance term vanishes, mm.
    pub gamma_mm: f64,
    /// Weight of the gated vertical-distance term, per mm.
    pub w1: f64,
    /// Weight of the axial overlap term.
    pub w2: f64,
    /// Weight of the label-agreement term.
    pub w3: f64,
    /// Consecutive slices a track may miss before it closes.
    pub max_skipped_slices: u32,
    /// Minimum matches for a track to count as a tooth.
    pub min_detections: usize,
    /// Minimum vertical span between first and last match, mm.
    pub min_height_mm: f64,
    /// Context padding applied to the final boxes, mm per axis.
    pub context_margin_mm: f64,
}

/// Margin by which `w2` exceeds `beta`, so zero axial overlap is always
/// rejected even when every other term vanishes.
pub const W2_EPSILON: f64 = 1e-6;

impl MatchConfig {
    /// Default calibration for a given slice step.
    pub fn for_step(step_mm: f64) -> Self {
        Self::with_beta(1.0, step_mm)
    }

    /// Default calibration at an explicit cost scale. Only ratios matter.
    pub fn with_beta(beta: f64, step_mm: f64) -> Self {
        let gamma = step_mm;
        Self {
            beta,
            gamma_mm: gamma,
            w1: beta / (4.0 * gamma),
            w2: beta * (1.0 + W2_EPSILON),
            w3: 0.2 * beta,
            max_skipped_slices: 2,
            min_detections: 3,
            min_height_mm: 2.8,
            context_margin_mm: 1.0,
        }
    }
}

/// Distance gate: zero within the proximity bound, one beyond it.
pub fn step_gate(d_mm: f64, gamma_mm: f64) -> f64 {
    debug_assert!(d_mm >= 0.0 && gamma_mm > 0.0);
    if d_mm <= gamma_mm {
        0.0
    } else {
        1.0
    }
}

/// One matched detection inside a track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub slice: usize,
    pub rect: Box2i,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackState {
    Active,
    Closed,
}

/// A tooth volume under (or after) construction: the ordered collection of
/// matched 2D boxes plus its label histogram and lifecycle state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToothVolume {
    pub id: u32,
    /// Matches in traversal order (top-down), at most one per slice.
    pub matches: Vec<MatchEntry>,
    /// Count of matches per class, index = class - 1.
    pub label_histogram: [u32; Label::COUNT],
    pub state: TrackState,
    /// Majority label, set at closure.
    pub final_label: Option<Label>,
    /// Consecutive processed slices without a match.
    pub slices_since_last_match: u32,
}

impl ToothVolume {
    fn seed(id: u32, det: &Detection2D) -> Self {
        let mut t = Self {
            id,
            matches: Vec::new(),
            label_histogram: [0; Label::COUNT],
            state: TrackState::Active,
            final_label: None,
            slices_since_last_match: 0,
        };
        t.push_match(det);
        t
    }

    fn push_match(&mut self, det: &Detection2D) {
        debug_assert!(self.state == TrackState::Active);
        debug_assert!(self.matches.last().map(|m| m.slice) != Some(det.slice));
        self.matches.push(MatchEntry { slice: det.slice, rect: det.rect, label: det.label });
        self.label_histogram[det.label.index()] += 1;
        self.slices_since_last_match = 0;
    }

    /// Fraction of this track's matches labeled `label`.
    pub fn label_fraction(&self, label: Label) -> f64 {
        let total: u32 = self.label_histogram.iter().sum();
        if total == 0 {
            0.0
        } else {
            f64::from(self.label_histogram[label.index()]) / f64::from(total)
        }
    }

    /// First and last matched slice indices.
    pub fn slice_span(&self) -> (usize, usize) {
        let lo = self.matches.iter().map(|m| m.slice).min().expect("track has matches");
        let hi = self.matches.iter().map(|m| m.slice).max().expect("track has matches");
        (lo, hi)
    }

    /// Vertical span between first and last matched slice, mm.
    pub fn height_mm(&self, sz_mm: f64) -> f64 {
        let (lo, hi) = self.slice_span();
        (hi - lo) as f64 * sz_mm
    }
}

/// Match quality `q(t, b)` between an active track and a candidate
/// detection; lower is better, `q > beta` must be rejected by the caller.
/// `sz_mm` converts slice indices to millimeters.
pub fn match_cost(t: &ToothVolume, det: &Detection2D, cfg: &MatchConfig, sz_mm: f64) -> f64 {
    let last = t.matches.last().expect("active track has at least one match");
    let d_mm = (last.slice as f64 - det.slice as f64).abs() * sz_mm;
    let distance_term = if step_gate(d_mm, cfg.gamma_mm) == 0.0 {
        0.0
    } else {
        cfg.w1 * d_mm
    };
    let overlap_term = cfg.w2 * (1.0 - crate::geom::iou(&last.rect, &det.rect));
    let label_term = cfg.w3 * (1.0 - t.label_fraction(det.label));
    distance_term + overlap_term + label_term
}

/// Runs the full lifecycle over the sampled slices (`slices` lists every
/// slice the detector looked at, detections or not; slices present only in
/// `dets` are traversed too). Returns the surviving tooth volumes, closed,
/// labeled, and sorted by id; discarded noise tracks are dropped.
pub fn reconstruct(
    dets: &BTreeMap<usize, Vec<Detection2D>>,
    slices: &[usize],
    sz_mm: f64,
    cfg: &MatchConfig,
) -> Vec<ToothVolume> {
    // Traversal axis: every observed slice, top-down.
    let mut axis: Vec<usize> = slices.iter().copied().chain(dets.keys().copied()).collect();
    axis.sort_unstable();
    axis.dedup();
    axis.reverse();

    let mut active: Vec<ToothVolume> = Vec::new();
    let mut done: Vec<ToothVolume> = Vec::new();
    let mut next_id = 0u32;
    let mut seen_any = false;

    for &z in &axis {
        let mut slice_dets: Vec<Detection2D> =
            dets.get(&z).map(|v| v.to_vec()).unwrap_or_default();
        if !seen_any && slice_dets.is_empty() {
            continue; // above the first detection, nothing to track yet
        }
        seen_any = true;

        // Within-slice order must not matter: canonicalize before matching.
        slice_dets.sort_unstable_by_key(|d| (d.rect, d.label.class()));

        let costs = CostMatrix::from_fn(active.len(), slice_dets.len(), |i, j| {
            let q = match_cost(&active[i], &slice_dets[j], cfg, sz_mm);
            if q > cfg.beta {
                FORBIDDEN
            } else {
                q
            }
        });
        let pairs = solve_assignment(&costs);

        let mut row_matched = alloc::vec![false; active.len()];
        let mut col_matched = alloc::vec![false; slice_dets.len()];
        for &(i, j) in &pairs {
            active[i].push_match(&slice_dets[j]);
            row_matched[i] = true;
            col_matched[j] = true;
        }

        for (j, det) in slice_dets.iter().enumerate() {
            if !col_matched[j] {
                active.push(ToothVolume::seed(next_id, det));
                next_id += 1;
                row_matched.push(true); // just seeded, counts as matched here
            }
        }

        // Tracks that have now missed max_skipped_slices consecutive slices
        // are fully reconstructed and accept no further matches. A limit of
        // zero still lets a track live while it matches every slice.
        let mut still_active = Vec::with_capacity(active.len());
        for (i, mut t) in active.into_iter().enumerate() {
            if !row_matched[i] {
                t.slices_since_last_match += 1;
            }
            if t.slices_since_last_match >= cfg.max_skipped_slices.max(1) {
                t.state = TrackState::Closed;
                done.push(t);
            } else {
                still_active.push(t);
            }
        }
        active = still_active;
    }

    for mut t in active {
        t.state = TrackState::Closed;
        done.push(t);
    }

    let mut valid: Vec<ToothVolume> = done
        .into_iter()
        .filter(|t| t.matches.len() >= cfg.min_detections && t.height_mm(sz_mm) >= cfg.min_height_mm)
        .collect();
    for t in &mut valid {
        t.final_label = Some(finalize_label(t));
    }
    valid.sort_unstable_by_key(|t| t.id);
    valid
}

/// Majority label of a track. Ties go to the label with the longest
/// consecutive run of matches, then to the lowest class id.
pub fn finalize_label(t: &ToothVolume) -> Label {
    debug_assert!(!t.matches.is_empty());
    let top = *t.label_histogram.iter().max().expect("histogram is nonempty");

    let mut best: Option<(u32, u8)> = None; // (run length, class), class ascending
    for class in 1..=Label::COUNT as u8 {
        let label = Label::new(class).expect("in range");
        if t.label_histogram[label.index()] != top {
            continue;
        }
        let mut longest = 0u32;
        let mut run = 0u32;
        for m in &t.matches {
            if m.label == label {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
        match best {
            Some((len, _)) if len >= longest => {}
            _ => best = Some((longest, class)),
        }
    }
    Label::new(best.expect("some class attains the maximum").1).expect("in range")
}

/// Fills the gaps the sparse sampling left inside a track: every integer
/// slice between consecutive matches receives a box whose coordinates are
/// linearly interpolated by slice index; matched slices keep their boxes
/// verbatim. A single-match track yields just its own box.
pub fn interpolate_volume(t: &ToothVolume) -> Vec<(usize, Box2f)> {
    let mut matches = t.matches.clone();
    matches.sort_unstable_by_key(|m| m.slice);

    let mut out: Vec<(usize, Box2f)> = Vec::new();
    for w in matches.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        out.push((a.slice, Box2f::from(a.rect)));
        let gap = b.slice - a.slice;
        for z in (a.slice + 1)..b.slice {
            let s = (z - a.slice) as f64 / gap as f64;
            out.push((
                z,
                Box2f {
                    x_min: lerp(f64::from(a.rect.x_min), f64::from(b.rect.x_min), s),
                    y_min: lerp(f64::from(a.rect.y_min), f64::from(b.rect.y_min), s),
                    x_max: lerp(f64::from(a.rect.x_max), f64::from(b.rect.x_max), s),
                    y_max: lerp(f64::from(a.rect.y_max), f64::from(b.rect.y_max), s),
                },
            ));
        }
    }
    if let Some(last) = matches.last() {
        out.push((last.slice, Box2f::from(last.rect)));
    }
    out
}

/// Final labeled 3D bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub id: u32,
    pub label: Label,
    pub fdi: Option<u8>,
    /// Voxel bounds, half-open.
    pub vox: Box3i,
    /// Millimeter bounds.
    pub mm: Box3f,
    /// Number of 2D detections backing this box.
    pub detections: usize,
    /// Id of the fused box this one was divided from, if any.
    pub divided_from: Option<u32>,
}

/// Axis-aligned hull of a track's (interpolated) boxes, padded by the
/// context margin and clamped to the volume bounds.
pub fn bounding_box_3d(
    t: &ToothVolume,
    cfg: &MatchConfig,
    dims: (usize, usize, usize),
    spacing: (f32, f32, f32),
) -> Box3D {
    debug_assert!(!t.matches.is_empty());
    let mut x_min = i32::MAX;
    let mut y_min = i32::MAX;
    let mut x_max = i32::MIN;
    let mut y_max = i32::MIN;
    for m in &t.matches {
        x_min = x_min.min(m.rect.x_min);
        y_min = y_min.min(m.rect.y_min);
        x_max = x_max.max(m.rect.x_max);
        y_max = y_max.max(m.rect.y_max);
    }
    let (z_lo, z_hi) = t.slice_span();

    let pad = |margin_mm: f64, s: f32| libm::ceil(margin_mm / f64::from(s)) as i32;
    let (px, py, pz) = (
        pad(cfg.context_margin_mm, spacing.0),
        pad(cfg.context_margin_mm, spacing.1),
        pad(cfg.context_margin_mm, spacing.2),
    );

    let vox = Box3i::new(
        (x_min - px).max(0),
        (y_min - py).max(0),
        (z_lo as i32 - pz).max(0),
        (x_max + px).min(dims.0 as i32),
        (y_max + py).min(dims.1 as i32),
        (z_hi as i32 + 1 + pz).min(dims.2 as i32),
    );
    Box3D {
        id: t.id,
        label: t.final_label.unwrap_or_else(|| finalize_label(t)),
        fdi: None,
        mm: Box3f::from_vox(&vox, spacing),
        vox,
        detections: t.matches.len(),
        divided_from: None,
    }
}

/// Fills in FDI codes from box centroids: upper/lower from the occlusal
/// split height, patient right/left from the mid-sagittal plane (median of
/// the centroids' x). Centroids exactly on a plane resolve toward the
/// lower, respectively left, quadrants.
pub fn assign_fdi(boxes: &mut [Box3D], occlusal_z_vox: f64) {
    if boxes.is_empty() {
        return;
    }
    let mut xs: Vec<f64> = boxes.iter().map(|b| b.vox.center().0).collect();
    xs.sort_unstable_by(f64::total_cmp);
    let mid_x = if xs.len() % 2 == 1 {
        xs[xs.len() / 2]
    } else {
        (xs[xs.len() / 2 - 1] + xs[xs.len() / 2]) / 2.0
    };

    for b in boxes {
        let (cx, _, cz) = b.vox.center();
        let upper = cz > occlusal_z_vox;
        let right = cx < mid_x;
        let quadrant = match (upper, right) {
            (true, true) => 1,
            (true, false) => 2,
            (false, false) => 3,
            (false, true) => 4,
        };
        b.fdi = Some(b.label.fdi(quadrant));
    }
}
