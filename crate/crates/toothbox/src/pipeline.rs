//! End-to-end pipeline: slab selection, detection (loaded or synthetic),
//! reconstruction, flagging and division, evaluation, artifact output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use toothbox_core::derive_seed;
use toothbox_core::detect::{synth_detect, Detection2D};
use toothbox_core::divide::{
    build_lattice, flag_double, split_volume, vertical_density_profile, DivisionConfig,
    DivisionSurface,
};
use toothbox_core::evaluate::{evaluate_scan, OutcomeReport};
use toothbox_core::phantom::GroundTruth;
use toothbox_core::reconstruct::{assign_fdi, bounding_box_3d, reconstruct, Box3D, ToothVolume};
use toothbox_core::slab::{axial_mean_profile, sample_slices, select_tooth_slab, slice_step_voxels, Slab};
use toothbox_core::volume::VoxelVolume;

use crate::boxes_io::save_boxes;
use crate::config::{PipelineConfig, ResolvedConfig};
use crate::detections_io::{load_detections, save_detections};
use crate::volume_io::{load_ground_truth, load_volume, write_json};

/// Where the 2D detections come from.
pub enum DetectionsSource<'a> {
    /// Pre-computed detections (the real detector's output contract).
    Provided(&'a BTreeMap<usize, Vec<Detection2D>>),
    /// Derive them from ground truth with the configured noise model.
    Synthetic(&'a GroundTruth),
}

/// A flagged volume the division stage could not split, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Irreducible {
    pub id: u32,
    pub reason: String,
}

/// Everything one scan produces.
pub struct ScanOutput {
    pub slab: Slab,
    pub slice_step_mm: f64,
    pub detections: BTreeMap<usize, Vec<Detection2D>>,
    pub volumes: Vec<ToothVolume>,
    /// Boxes before division, FDI assigned.
    pub boxes_pre: Vec<Box3D>,
    /// Final boxes after division.
    pub boxes: Vec<Box3D>,
    /// Parent ids that were successfully divided.
    pub divided: Vec<u32>,
    pub irreducible: Vec<Irreducible>,
    pub surfaces: Vec<(u32, DivisionSurface)>,
    pub outcome: Option<OutcomeReport>,
}

/// Runs the pipeline in memory on one volume.
pub fn run_scan(
    vol: &VoxelVolume,
    source: DetectionsSource<'_>,
    gt: Option<&GroundTruth>,
    config: &PipelineConfig,
) -> Result<ScanOutput> {
    config.validate().context("stage config")?;
    let (nx, ny, nz) = vol.dims();
    let sz_mm = vol.spacing_f64().2;

    // Slab selection and slice sampling.
    let profile = axial_mean_profile(vol);
    let (z_lo, z_hi) = select_tooth_slab(&profile, config.slicing.fraction);
    let slices = sample_slices(z_lo, z_hi, sz_mm, config.slicing.interval_mm);
    let slab = Slab { z_lo, z_hi, slices: slices.clone() };
    let step_mm = slice_step_voxels(sz_mm, config.slicing.interval_mm) as f64 * sz_mm;

    // Detections.
    let detections: BTreeMap<usize, Vec<Detection2D>> = match source {
        DetectionsSource::Provided(map) => {
            for (&slice, list) in map {
                if slice >= nz {
                    bail!("stage detect: slice {slice} outside volume of {nz} slices");
                }
                for d in list {
                    if !d.rect.is_valid() {
                        bail!("stage detect: degenerate box on slice {slice}");
                    }
                }
            }
            map.clone()
        }
        DetectionsSource::Synthetic(gt) => {
            let noise = config.noise.to_model(derive_seed(config.seed, 1));
            synth_detect(gt, &slices, (nx, ny), &noise).context("stage detect")?
        }
    };

    // Reconstruction.
    let match_cfg = config.matching.resolve(step_mm);
    let volumes = reconstruct(&detections, &slices, sz_mm, &match_cfg);
    let mut boxes_pre: Vec<Box3D> = volumes
        .iter()
        .map(|t| bounding_box_3d(t, &match_cfg, (nx, ny, nz), vol.spacing()))
        .collect();
    let slab_mid = (z_lo + z_hi) as f64 / 2.0;
    assign_fdi(&mut boxes_pre, slab_mid);

    // Division of flagged volumes.
    let division = divide_boxes(vol, &boxes_pre, &config.division, config.threads)
        .context("stage divide")?;
    let mut boxes = division.boxes;

    // Re-derive FDI with the occlusal estimate the division surfaces give.
    let occlusal_z = if division.surfaces.is_empty() {
        slab_mid
    } else {
        division.surfaces.iter().map(|(_, s)| s.mean_height()).sum::<f64>()
            / division.surfaces.len() as f64
    };
    assign_fdi(&mut boxes, occlusal_z);

    // Evaluation when ground truth is on hand.
    let outcome = match gt {
        Some(gt) => {
            Some(evaluate_scan(&boxes_pre, &boxes, gt, &config.evaluation).context("stage evaluate")?)
        }
        None => None,
    };

    Ok(ScanOutput {
        slab,
        slice_step_mm: step_mm,
        detections,
        volumes,
        boxes_pre,
        boxes,
        divided: division.divided,
        irreducible: division.irreducible,
        surfaces: division.surfaces,
        outcome,
    })
}

/// Result of the division stage over a whole box list.
pub struct DivisionOutput {
    pub boxes: Vec<Box3D>,
    pub divided: Vec<u32>,
    pub irreducible: Vec<Irreducible>,
    pub surfaces: Vec<(u32, DivisionSurface)>,
}

/// Flags oversized boxes and splits each along its division surface.
/// Distinct flagged boxes are independent; up to `threads` of them are
/// processed in parallel. Output order and ids are deterministic.
pub fn divide_boxes(
    vol: &VoxelVolume,
    boxes: &[Box3D],
    cfg: &DivisionConfig,
    threads: usize,
) -> Result<DivisionOutput> {
    let flags = flag_double(boxes, cfg.size_flag_factor);
    let flagged: Vec<usize> = (0..boxes.len()).filter(|&i| flags[i]).collect();

    type SplitResult = std::result::Result<(DivisionSurface, Box3D, Box3D), String>;
    let mut results: Vec<Option<SplitResult>> = (0..flagged.len()).map(|_| None).collect();

    let workers = threads.max(1).min(flagged.len());
    let next_id = boxes.iter().map(|b| b.id + 1).max().unwrap_or(0);
    let spacing = vol.spacing();

    if !flagged.is_empty() {
        let chunk_size = flagged.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (chunk_index, chunk) in flagged.chunks(chunk_size).enumerate() {
                let chunk: Vec<usize> = chunk.to_vec();
                let boxes_ref = &boxes;
                handles.push((chunk_index, scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|&i| split_one(vol, &boxes_ref[i], cfg, spacing))
                        .collect::<Vec<SplitResult>>()
                })));
            }
            for (chunk_index, handle) in handles {
                let chunk_results = handle.join().expect("division worker panicked");
                for (offset, r) in chunk_results.into_iter().enumerate() {
                    results[chunk_index * chunk_size + offset] = Some(r);
                }
            }
        });
    }

    // Stitch: unflagged boxes pass through, divided parents are replaced by
    // their children carrying fresh consecutive ids.
    let mut out: Vec<Box3D> = Vec::with_capacity(boxes.len() + flagged.len());
    let mut divided = Vec::new();
    let mut irreducible = Vec::new();
    let mut surfaces = Vec::new();
    let mut id_counter = next_id;

    let mut by_index: BTreeMap<usize, SplitResult> = BTreeMap::new();
    for (k, &i) in flagged.iter().enumerate() {
        by_index.insert(i, results[k].take().expect("worker result present"));
    }

    for (i, b) in boxes.iter().enumerate() {
        match by_index.remove(&i) {
            None => out.push(b.clone()),
            Some(Ok((surface, mut upper, mut lower))) => {
                upper.id = id_counter;
                lower.id = id_counter + 1;
                id_counter += 2;
                divided.push(b.id);
                surfaces.push((b.id, surface));
                out.push(upper);
                out.push(lower);
            }
            Some(Err(reason)) => {
                irreducible.push(Irreducible { id: b.id, reason });
                out.push(b.clone());
            }
        }
    }

    Ok(DivisionOutput { boxes: out, divided, irreducible, surfaces })
}

fn split_one(
    vol: &VoxelVolume,
    parent: &Box3D,
    cfg: &DivisionConfig,
    spacing: (f32, f32, f32),
) -> std::result::Result<(DivisionSurface, Box3D, Box3D), String> {
    let (nx, ny, nz) = vol.dims();
    let b = &parent.vox;
    if !b.is_valid()
        || b.x_min < 0
        || b.y_min < 0
        || b.z_min < 0
        || b.x_max > nx as i32
        || b.y_max > ny as i32
        || b.z_max > nz as i32
    {
        return Err(format!("box {b:?} exceeds the volume bounds {nx}x{ny}x{nz}"));
    }
    let (_, z0) =
        vertical_density_profile(vol, &parent.vox, cfg.band_fraction).map_err(|e| e.to_string())?;
    let surface = build_lattice(vol, &parent.vox, z0, cfg).map_err(|e| e.to_string())?;
    // Ids are provisional; the caller reassigns them deterministically.
    let (upper, lower) = split_volume(parent, &surface, spacing, (u32::MAX - 1, u32::MAX))
        .map_err(|e| e.to_string())?;
    Ok((surface, upper, lower))
}

/// Report of one pipeline run; everything needed to reproduce and audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ResolvedConfig,
    pub slab: Slab,
    pub slice_step_mm: f64,
    pub detections: usize,
    pub tooth_volumes: usize,
    pub boxes: usize,
    pub divided: Vec<u32>,
    pub irreducible: Vec<Irreducible>,
    pub outcome: Option<OutcomeReport>,
}

/// File-level arguments of an end-to-end run.
pub struct RunArgs<'a> {
    pub volume: &'a Path,
    /// Detections file; `None` with `synthetic` derives them from `gt`.
    pub detections: Option<&'a Path>,
    pub synthetic: bool,
    pub gt: Option<&'a Path>,
    pub out_dir: &'a Path,
    pub config: PipelineConfig,
}

/// Runs end to end from files to files: writes `boxes.json` and
/// `report.json` (plus `detections.jsonl` when synthesizing) into the
/// output directory. On any stage failure the partially written artifacts
/// are removed.
pub fn run_pipeline(args: &RunArgs<'_>) -> Result<RunReport> {
    let mut written: Vec<PathBuf> = Vec::new();
    let result = run_pipeline_inner(args, &mut written);
    if result.is_err() {
        for path in written {
            let _ = std::fs::remove_file(path);
        }
    }
    result
}

fn run_pipeline_inner(args: &RunArgs<'_>, written: &mut Vec<PathBuf>) -> Result<RunReport> {
    let vol = load_volume(args.volume).context("stage load-volume")?;
    let gt = match args.gt {
        Some(path) => Some(load_ground_truth(path).context("stage load-gt")?),
        None => None,
    };

    let provided = match (args.detections, args.synthetic) {
        (Some(path), false) => Some(load_detections(path).context("stage load-detections")?),
        (None, true) => None,
        (Some(_), true) => bail!("stage detect: pass either a detections file or --synthetic"),
        (None, false) => bail!("stage detect: need a detections file or --synthetic with ground truth"),
    };
    let source = match &provided {
        Some(map) => DetectionsSource::Provided(map),
        None => DetectionsSource::Synthetic(
            gt.as_ref()
                .context("stage detect: --synthetic requires ground truth")?,
        ),
    };

    let scan = run_scan(&vol, source, gt.as_ref(), &args.config)?;

    std::fs::create_dir_all(args.out_dir)
        .with_context(|| format!("stage output: creating {}", args.out_dir.display()))?;

    if provided.is_none() {
        let det_path = args.out_dir.join("detections.jsonl");
        save_detections(&scan.detections, &det_path).context("stage output")?;
        written.push(det_path);
    }

    let boxes_path = args.out_dir.join("boxes.json");
    save_boxes(&scan.boxes, &boxes_path).context("stage output")?;
    written.push(boxes_path);

    let report = RunReport {
        config: args.config.resolve(scan.slice_step_mm),
        slab: scan.slab.clone(),
        slice_step_mm: scan.slice_step_mm,
        detections: scan.detections.values().map(Vec::len).sum(),
        tooth_volumes: scan.volumes.len(),
        boxes: scan.boxes.len(),
        divided: scan.divided.clone(),
        irreducible: scan.irreducible.clone(),
        outcome: scan.outcome.clone(),
    };
    let report_path = args.out_dir.join("report.json");
    write_json(&report_path, &report).context("stage output")?;
    written.push(report_path);

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;
    use toothbox_core::phantom::{generate_phantom, PhantomSpec};

    #[test]
    fn clean_phantom_end_to_end_counts_match() {
        let spec = PhantomSpec::arches(5, 5, 3.0, 21);
        let (vol, gt) = generate_phantom(&spec).unwrap();
        let config = PipelineConfig::default();
        let scan =
            run_scan(&vol, DetectionsSource::Synthetic(&gt), Some(&gt), &config).unwrap();
        assert_eq!(scan.boxes.len(), gt.teeth.len());
        let outcome = scan.outcome.unwrap();
        assert_eq!(outcome.pre_division.single_tooth, gt.teeth.len());
        assert_eq!(outcome.detection_rate, 1.0);
        assert_eq!(outcome.false_positives, 0);
    }

    #[test]
    fn symmetric_phantom_reproduces_fdi_codes() {
        use toothbox_core::evaluate::{match_pred_to_gt, EvalConfig};
        // Even per-arch counts keep the arch mirror-symmetric, so no box
        // centroid lands exactly on the mid-sagittal plane.
        let spec = PhantomSpec::arches(8, 8, 3.0, 13);
        let (vol, gt) = generate_phantom(&spec).unwrap();
        let scan = run_scan(
            &vol,
            DetectionsSource::Synthetic(&gt),
            Some(&gt),
            &PipelineConfig::default(),
        )
        .unwrap();
        let corr = match_pred_to_gt(&scan.boxes, &gt, &EvalConfig::default());
        for (t, p) in gt.teeth.iter().zip(&corr.gt_to_pred) {
            let p = p.expect("every tooth mapped");
            assert_eq!(scan.boxes[p].fdi, t.fdi, "tooth {}", t.id);
        }
    }

    #[test]
    fn fused_pair_is_divided_end_to_end() {
        let spec = PhantomSpec::division_phantom(2, 7, 0.0, 33);
        let (vol, gt) = generate_phantom(&spec).unwrap();
        let config = PipelineConfig::default();
        let scan =
            run_scan(&vol, DetectionsSource::Synthetic(&gt), Some(&gt), &config).unwrap();
        assert_eq!(scan.divided.len(), 2, "both fused pairs must divide");
        assert_eq!(scan.boxes.len(), gt.teeth.len());
        let outcome = scan.outcome.unwrap();
        assert_eq!(outcome.pre_division.double_tooth, 4);
        assert_eq!(outcome.post_division.double_tooth, 0);
        assert_eq!(outcome.post_division.good_reconstruction, 11);
    }

    #[test]
    fn multithreaded_division_is_deterministic() {
        let spec = PhantomSpec::division_phantom(3, 7, 0.0, 5);
        let (vol, gt) = generate_phantom(&spec).unwrap();
        let mut config = PipelineConfig::default();
        let a = run_scan(&vol, DetectionsSource::Synthetic(&gt), Some(&gt), &config)
            .unwrap();
        config.threads = 4;
        let b = run_scan(&vol, DetectionsSource::Synthetic(&gt), Some(&gt), &config)
            .unwrap();
        assert_eq!(a.boxes, b.boxes);
        assert_eq!(a.divided, b.divided);
    }

    #[test]
    fn pipeline_files_round_trip_and_cleanup() {
        use crate::volume_io::{save_ground_truth, save_volume};
        let dir = tempdir().unwrap();
        let spec = PhantomSpec::arches(4, 4, 3.0, 9);
        let (vol, gt) = generate_phantom(&spec).unwrap();
        let vol_path = dir.path().join("v.cbct");
        let gt_path = dir.path().join("gt.json");
        save_volume(&vol, &vol_path).unwrap();
        save_ground_truth(&gt, &gt_path).unwrap();

        let out_dir = dir.path().join("out");
        let report = run_pipeline(&RunArgs {
            volume: &vol_path,
            detections: None,
            synthetic: true,
            gt: Some(&gt_path),
            out_dir: &out_dir,
            config: PipelineConfig::default(),
        })
        .unwrap();
        assert_eq!(report.boxes, 8);
        assert!(out_dir.join("boxes.json").exists());
        assert!(out_dir.join("report.json").exists());

        // A missing volume must fail with the stage name and leave nothing.
        let out_dir2 = dir.path().join("out2");
        let err = run_pipeline(&RunArgs {
            volume: &dir.path().join("nope.cbct"),
            detections: None,
            synthetic: true,
            gt: Some(&gt_path),
            out_dir: &out_dir2,
            config: PipelineConfig::default(),
        })
        .unwrap_err();
        assert!(format!("{err:#}").contains("stage load-volume"));
        assert!(!out_dir2.join("boxes.json").exists());
    }
}
