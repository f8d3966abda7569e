//! Outcome taxonomies against ground truth.
//!
//! Predicted boxes are matched to ground-truth teeth by voxel coverage:
//! a one-to-one assignment on `1 - coverage` settles the primary matches,
//! and ground-truth teeth left over fall back to the prediction covering
//! them best, which is how a fused box ends up holding two teeth. The
//! pre-division taxonomy (single tooth / double tooth / not detected) and
//! the post-division one (good / bad / double / not detected) then follow
//! from coverage thresholds, since the phantoms carry exact truth in place
//! of expert judgment.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assign::{solve_assignment, CostMatrix, FORBIDDEN};
use crate::error::CoreError;
use crate::geom::iou3;
use crate::phantom::GroundTruth;
use crate::reconstruct::Box3D;

/// Thresholds that operationalize the outcome categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fraction of a tooth's box a prediction must cover to count as
    /// containing it.
    pub coverage_threshold: f64,
    /// Below this coverage a prediction does not see the tooth at all.
    pub presence_threshold: f64,
    /// Maximum tolerated fraction of a *different* tooth's box inside a
    /// prediction that still counts as a clean single-tooth volume.
    pub contamination_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            coverage_threshold: 0.95,
            presence_threshold: 0.05,
            contamination_threshold: 0.05,
        }
    }
}

/// Which prediction each ground-truth tooth landed in, plus the spurious
/// predictions that saw no tooth at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    /// Index into the prediction list, per ground-truth tooth.
    pub gt_to_pred: Vec<Option<usize>>,
    /// Predictions covering less than the presence threshold of every
    /// tooth.
    pub false_positives: Vec<usize>,
}

fn coverage(gt: &crate::geom::Box3i, pred: &crate::geom::Box3i) -> f64 {
    let vol = gt.volume();
    if vol == 0 {
        return 0.0;
    }
    gt.intersection_volume(pred) as f64 / vol as f64
}

/// Maps ground-truth teeth to predictions. The assignment solver settles
/// one-to-one matches on `1 - coverage`; teeth it could not seat fall back
/// to their best-covering prediction (ties by 3D IoU, then lowest index),
/// which may already hold another tooth.
pub fn match_pred_to_gt(preds: &[Box3D], gt: &GroundTruth, cfg: &EvalConfig) -> Correspondence {
    let n_gt = gt.teeth.len();
    let costs = CostMatrix::from_fn(n_gt, preds.len(), |i, j| {
        let cov = coverage(&gt.teeth[i].box_vox, &preds[j].vox);
        if cov < cfg.presence_threshold {
            FORBIDDEN
        } else {
            1.0 - cov
        }
    });

    let mut gt_to_pred: Vec<Option<usize>> = vec![None; n_gt];
    for (i, j) in solve_assignment(&costs) {
        gt_to_pred[i] = Some(j);
    }
    for (i, slot) in gt_to_pred.iter_mut().enumerate() {
        if slot.is_some() {
            continue;
        }
        let mut best: Option<(f64, f64, usize)> = None; // (coverage, iou, pred)
        for (j, p) in preds.iter().enumerate() {
            let cov = coverage(&gt.teeth[i].box_vox, &p.vox);
            if cov < cfg.presence_threshold {
                continue;
            }
            let tie = iou3(&gt.teeth[i].box_vox, &p.vox);
            let better = match best {
                None => true,
                Some((bc, bt, _)) => cov > bc || (cov == bc && tie > bt),
            };
            if better {
                best = Some((cov, tie, j));
            }
        }
        *slot = best.map(|(_, _, j)| j);
    }

    let false_positives = (0..preds.len())
        .filter(|&j| {
            gt.teeth
                .iter()
                .all(|t| coverage(&t.box_vox, &preds[j].vox) < cfg.presence_threshold)
        })
        .collect();

    Correspondence { gt_to_pred, false_positives }
}

/// Counts before the division stage (Table-4-style).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PreDivisionCounts {
    pub single_tooth: usize,
    pub double_tooth: usize,
    pub not_detected: usize,
}

impl PreDivisionCounts {
    pub fn total(&self) -> usize {
        self.single_tooth + self.double_tooth + self.not_detected
    }
}

/// Counts after the division stage (Table-5-style).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PostDivisionCounts {
    pub good_reconstruction: usize,
    pub bad_reconstruction: usize,
    pub double_tooth: usize,
    pub not_detected: usize,
}

impl PostDivisionCounts {
    pub fn total(&self) -> usize {
        self.good_reconstruction + self.bad_reconstruction + self.double_tooth + self.not_detected
    }
}

fn shared_counts(preds_len: usize, corr: &Correspondence) -> Vec<usize> {
    let mut counts = vec![0usize; preds_len];
    for p in corr.gt_to_pred.iter().flatten() {
        counts[*p] += 1;
    }
    counts
}

/// Categorizes every ground-truth tooth before division: `single_tooth`
/// when a prediction sees the tooth and holds no second one, `double_tooth`
/// when two or more teeth share one prediction, `not_detected` when no
/// prediction reaches the presence threshold.
///
/// This table estimates how often the division stage is needed, not how
/// well the boxes fit; coverage quality is judged by the post-division
/// taxonomy.
pub fn categorize_pre_division(
    preds: &[Box3D],
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> PreDivisionCounts {
    let corr = match_pred_to_gt(preds, gt, cfg);
    let shared = shared_counts(preds.len(), &corr);
    let mut counts = PreDivisionCounts::default();
    for assigned in &corr.gt_to_pred {
        match *assigned {
            None => counts.not_detected += 1,
            Some(p) if shared[p] >= 2 => counts.double_tooth += 1,
            Some(_) => counts.single_tooth += 1,
        }
    }
    counts
}

/// Categorizes every ground-truth tooth after division. A sole prediction
/// is a `good_reconstruction` when it covers the tooth at the coverage
/// threshold and intrudes on no other tooth beyond the contamination
/// threshold; covered-but-clipped teeth are `bad_reconstruction`; a
/// prediction still holding a substantial part of a second tooth counts as
/// `double_tooth`.
pub fn categorize_post_division(
    preds: &[Box3D],
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> PostDivisionCounts {
    let corr = match_pred_to_gt(preds, gt, cfg);
    let shared = shared_counts(preds.len(), &corr);
    let mut counts = PostDivisionCounts::default();
    for (i, assigned) in corr.gt_to_pred.iter().enumerate() {
        match *assigned {
            None => counts.not_detected += 1,
            Some(p) if shared[p] >= 2 => counts.double_tooth += 1,
            Some(p) => {
                let cov = coverage(&gt.teeth[i].box_vox, &preds[p].vox);
                let contaminated = gt
                    .teeth
                    .iter()
                    .enumerate()
                    .any(|(k, other)| {
                        k != i && coverage(&other.box_vox, &preds[p].vox) > cfg.contamination_threshold
                    });
                if contaminated {
                    counts.double_tooth += 1;
                } else if cov >= cfg.coverage_threshold {
                    counts.good_reconstruction += 1;
                } else {
                    counts.bad_reconstruction += 1;
                }
            }
        }
    }
    counts
}

/// Fraction of ground-truth teeth the pipeline saw at all.
pub fn detection_rate(total_teeth: usize, not_detected: usize) -> Result<f64, CoreError> {
    if total_teeth == 0 {
        return Err(CoreError::NoTeeth);
    }
    debug_assert!(not_detected <= total_teeth);
    Ok((total_teeth - not_detected) as f64 / total_teeth as f64)
}

/// Full evaluation of one scan: taxonomy before and after division, plus
/// detection rate and false-positive count (both measured pre-division).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub pre_division: PreDivisionCounts,
    pub post_division: PostDivisionCounts,
    pub detection_rate: f64,
    pub false_positives: usize,
}

pub fn evaluate_scan(
    preds_pre: &[Box3D],
    preds_post: &[Box3D],
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> Result<OutcomeReport, CoreError> {
    let pre = categorize_pre_division(preds_pre, gt, cfg);
    let post = categorize_post_division(preds_post, gt, cfg);
    let corr = match_pred_to_gt(preds_pre, gt, cfg);
    Ok(OutcomeReport {
        pre_division: pre,
        post_division: post,
        detection_rate: detection_rate(gt.teeth.len(), post.not_detected)?,
        false_positives: corr.false_positives.len(),
    })
}
