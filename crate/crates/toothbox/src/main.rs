//! The `toothbox` binary: phantom generation, slicing, synthetic detection,
//! reconstruction, division, evaluation, an end-to-end `run`, and PGM slice
//! export.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use toothbox::boxes_io::{load_boxes, merge_divided, save_boxes};
use toothbox::config::PipelineConfig;
use toothbox::detections_io::{load_detections, save_detections};
use toothbox::pgm::{export_axial_slice, export_sagittal_slice};
use toothbox::pipeline::{divide_boxes, run_pipeline, run_scan, DetectionsSource, RunArgs};
use toothbox::volume_io::{
    load_ground_truth, load_phantom_spec, load_volume, save_ground_truth, save_phantom_spec,
    save_volume, write_json,
};

use toothbox_core::derive_seed;
use toothbox_core::detect::synth_detect;
use toothbox_core::evaluate::{evaluate_scan, OutcomeReport};
use toothbox_core::phantom::{generate_phantom, GroundTruth, PhantomSpec};
use toothbox_core::reconstruct::assign_fdi;
use toothbox_core::slab::{axial_mean_profile, sample_slices, select_tooth_slab, Slab};

#[derive(Parser)]
#[command(
    name = "toothbox",
    version,
    about = "Reconstructs labeled 3D tooth bounding boxes from per-slice 2D detections over a CBCT-style volume"
)]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true, env = "TOOTHBOX_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dental phantom volume with ground truth.
    Phantom(PhantomCmd),
    /// Select the tooth slab and print the sampled slice indices.
    Slice(SliceCmd),
    /// Derive noisy detections from ground truth (stands in for the 2D detector).
    DetectSynthetic(DetectCmd),
    /// Reconstruct labeled 3D boxes from per-slice detections.
    Reconstruct(ReconstructCmd),
    /// Flag fused counterpart volumes and split them along division surfaces.
    Divide(DivideCmd),
    /// Score boxes against ground truth, before and after division.
    Evaluate(EvaluateCmd),
    /// Run the whole pipeline end to end.
    Run(RunCmd),
    /// Write axial or sagittal slices as PGM images with box outlines.
    ExportSlices(ExportCmd),
}

#[derive(Args)]
struct PhantomCmd {
    /// Phantom spec (JSON); alternative to the builder flags below.
    #[arg(long, conflicts_with_all = ["upper", "lower", "fused_pairs", "singles"])]
    spec: Option<PathBuf>,
    /// Teeth in the upper arch (builder mode).
    #[arg(long, default_value_t = 10)]
    upper: usize,
    /// Teeth in the lower arch (builder mode).
    #[arg(long, default_value_t = 10)]
    lower: usize,
    /// Build a division phantom with this many fused upper/lower pairs.
    #[arg(long, conflicts_with_all = ["upper", "lower"])]
    fused_pairs: Option<usize>,
    /// Single teeth accompanying the fused pairs.
    #[arg(long, default_value_t = 8, requires = "fused_pairs")]
    singles: usize,
    /// Interocclusal gap in millimeters; zero or negative fuses counterparts.
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    gap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_volume: PathBuf,
    #[arg(long)]
    out_gt: PathBuf,
    /// Also write the (generated) spec for reproducibility.
    #[arg(long)]
    out_spec: Option<PathBuf>,
}

#[derive(Args)]
struct SliceCmd {
    #[arg(long)]
    volume: PathBuf,
    /// Spacing between sampled axial slices, mm.
    #[arg(long)]
    interval_mm: Option<f64>,
    /// Profile-range fraction defining the slab.
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Args)]
struct DetectCmd {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReconstructCmd {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Match cost threshold (the cost scale).
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    interval_mm: Option<f64>,
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Args)]
struct DivideCmd {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Vertical-extent factor over the median that flags a volume.
    #[arg(long)]
    flag_factor: Option<f64>,
    /// Dump the division surfaces as JSON for inspection.
    #[arg(long)]
    emit_surface: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvaluateCmd {
    /// Ground truth file(s); repeat for multi-scan tables.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// Boxes file(s), zipped with --gt.
    #[arg(long, required = true)]
    boxes: Vec<PathBuf>,
    /// Coverage threshold for a good reconstruction.
    #[arg(long)]
    coverage: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunCmd {
    #[arg(long)]
    volume: PathBuf,
    /// Detections file; omit with --synthetic to derive them from --gt.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Synthesize detections from ground truth with the configured noise.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Plane {
    Axial,
    Sagittal,
}

#[derive(Args)]
struct ExportCmd {
    #[arg(long)]
    volume: PathBuf,
    /// Overlay these boxes as outlines.
    #[arg(long)]
    boxes: Option<PathBuf>,
    #[arg(long, value_enum)]
    plane: Plane,
    /// Slice indices; defaults to the middle slice.
    #[arg(long)]
    index: Vec<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::Phantom(cmd) => cmd_phantom(cmd),
        Command::Slice(cmd) => cmd_slice(cmd, config),
        Command::DetectSynthetic(cmd) => cmd_detect(cmd, config),
        Command::Reconstruct(cmd) => cmd_reconstruct(cmd, config),
        Command::Divide(cmd) => cmd_divide(cmd, config),
        Command::Evaluate(cmd) => cmd_evaluate(cmd, config),
        Command::Run(cmd) => cmd_run(cmd, config),
        Command::ExportSlices(cmd) => cmd_export(cmd),
    }
}

fn cmd_phantom(cmd: PhantomCmd) -> Result<()> {
    let spec = match (&cmd.spec, cmd.fused_pairs) {
        (Some(path), _) => load_phantom_spec(path)?,
        (None, Some(pairs)) => PhantomSpec::division_phantom(pairs, cmd.singles, cmd.gap, cmd.seed),
        (None, None) => PhantomSpec::arches(cmd.upper, cmd.lower, cmd.gap, cmd.seed),
    };
    let (vol, gt) = generate_phantom(&spec)?;
    save_volume(&vol, &cmd.out_volume)?;
    save_ground_truth(&gt, &cmd.out_gt)?;
    if let Some(path) = &cmd.out_spec {
        save_phantom_spec(&spec, path)?;
    }
    eprintln!(
        "phantom: {} teeth, volume {}x{}x{} -> {}",
        gt.teeth.len(),
        vol.dims().0,
        vol.dims().1,
        vol.dims().2,
        cmd.out_volume.display()
    );
    Ok(())
}

fn slab_of(vol: &toothbox_core::volume::VoxelVolume, config: &PipelineConfig) -> Slab {
    let profile = axial_mean_profile(vol);
    let (z_lo, z_hi) = select_tooth_slab(&profile, config.slicing.fraction);
    let slices = sample_slices(z_lo, z_hi, vol.spacing_f64().2, config.slicing.interval_mm);
    Slab { z_lo, z_hi, slices }
}

fn cmd_slice(cmd: SliceCmd, mut config: PipelineConfig) -> Result<()> {
    if let Some(v) = cmd.interval_mm {
        config.slicing.interval_mm = v;
    }
    if let Some(v) = cmd.fraction {
        config.slicing.fraction = v;
    }
    config.validate()?;
    let vol = load_volume(&cmd.volume)?;
    let slab = slab_of(&vol, &config);
    println!("{}", serde_json::to_string_pretty(&slab)?);
    Ok(())
}

fn cmd_detect(cmd: DetectCmd, mut config: PipelineConfig) -> Result<()> {
    if let Some(seed) = cmd.seed {
        config.seed = seed;
    }
    config.validate()?;
    let vol = load_volume(&cmd.volume)?;
    let gt = load_ground_truth(&cmd.gt)?;
    let slab = slab_of(&vol, &config);
    let noise = config.noise.to_model(derive_seed(config.seed, 1));
    let dets = synth_detect(&gt, &slab.slices, (vol.dims().0, vol.dims().1), &noise)?;
    save_detections(&dets, &cmd.out)?;
    eprintln!(
        "detect-synthetic: {} detections on {} slices -> {}",
        dets.values().map(Vec::len).sum::<usize>(),
        dets.len(),
        cmd.out.display()
    );
    Ok(())
}

fn cmd_reconstruct(cmd: ReconstructCmd, mut config: PipelineConfig) -> Result<()> {
    if let Some(beta) = cmd.beta {
        config.matching.beta = beta;
    }
    if let Some(v) = cmd.interval_mm {
        config.slicing.interval_mm = v;
    }
    if let Some(v) = cmd.fraction {
        config.slicing.fraction = v;
    }
    let vol = load_volume(&cmd.volume)?;
    let dets = load_detections(&cmd.detections)?;
    // Reconstruction only: skip the division stage by flagging nothing.
    let mut cfg = config.clone();
    cfg.division.size_flag_factor = f64::INFINITY;
    let scan = run_scan(&vol, DetectionsSource::Provided(&dets), None, &cfg)?;
    save_boxes(&scan.boxes_pre, &cmd.out)?;
    eprintln!(
        "reconstruct: {} tooth volumes from {} detections -> {}",
        scan.boxes_pre.len(),
        scan.detections.values().map(Vec::len).sum::<usize>(),
        cmd.out.display()
    );
    Ok(())
}

fn cmd_divide(cmd: DivideCmd, mut config: PipelineConfig) -> Result<()> {
    if let Some(f) = cmd.flag_factor {
        config.division.size_flag_factor = f;
    }
    if let Some(t) = cmd.threads {
        config.threads = t;
    }
    config.validate()?;
    let vol = load_volume(&cmd.volume)?;
    let boxes = load_boxes(&cmd.boxes)?;
    let division = divide_boxes(&vol, &boxes, &config.division, config.threads)?;

    let mut out_boxes = division.boxes;
    let occlusal_z = if division.surfaces.is_empty() {
        let slab = slab_of(&vol, &config);
        (slab.z_lo + slab.z_hi) as f64 / 2.0
    } else {
        division.surfaces.iter().map(|(_, s)| s.mean_height()).sum::<f64>()
            / division.surfaces.len() as f64
    };
    assign_fdi(&mut out_boxes, occlusal_z);
    save_boxes(&out_boxes, &cmd.out)?;

    if let Some(path) = &cmd.emit_surface {
        #[derive(serde::Serialize)]
        struct SurfaceDump<'a> {
            parent_id: u32,
            surface: &'a toothbox_core::divide::DivisionSurface,
        }
        let dump: Vec<SurfaceDump> = division
            .surfaces
            .iter()
            .map(|(id, s)| SurfaceDump { parent_id: *id, surface: s })
            .collect();
        write_json(path, &dump)?;
    }
    for irr in &division.irreducible {
        eprintln!("divide: box {} kept whole: {}", irr.id, irr.reason);
    }
    eprintln!(
        "divide: {} of {} boxes divided -> {}",
        division.divided.len(),
        boxes.len(),
        cmd.out.display()
    );
    Ok(())
}

fn cmd_evaluate(cmd: EvaluateCmd, mut config: PipelineConfig) -> Result<()> {
    if let Some(c) = cmd.coverage {
        config.evaluation.coverage_threshold = c;
    }
    config.validate()?;
    if cmd.gt.len() != cmd.boxes.len() {
        bail!("--gt and --boxes must be passed the same number of times");
    }

    let mut scans: Vec<(GroundTruth, OutcomeReport)> = Vec::new();
    for (gt_path, boxes_path) in cmd.gt.iter().zip(&cmd.boxes) {
        let gt = load_ground_truth(gt_path)?;
        let boxes = load_boxes(boxes_path)?;
        let pre = merge_divided(&boxes);
        let report = evaluate_scan(&pre, &boxes, &gt, &config.evaluation)?;
        scans.push((gt, report));
    }

    print_outcome_table(&scans);

    let json = if scans.len() == 1 {
        serde_json::to_string_pretty(&scans[0].1)?
    } else {
        let reports: Vec<&OutcomeReport> = scans.iter().map(|(_, r)| r).collect();
        serde_json::to_string_pretty(&reports)?
    };
    match &cmd.out {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

/// Two-column outcome table in the style of the clinical result tables:
/// scans with occlusal clearance (positive gap) against scans without.
fn print_outcome_table(scans: &[(GroundTruth, OutcomeReport)]) {
    let mut with = (OutcomeAgg::default(), 0usize);
    let mut without = (OutcomeAgg::default(), 0usize);
    for (gt, report) in scans {
        let has_clearance = gt.interocclusal_gap_mm.is_none_or(|g| g > 0.0);
        let slot = if has_clearance { &mut with } else { &mut without };
        slot.0.add(report);
        slot.1 += 1;
    }
    let header = format!(
        "{:<20} {:>24} {:>24}",
        "", "with occl. clearance", "without occl. clearance"
    );
    eprintln!("{header}");
    eprintln!("{:-<70}", "");
    type RowGetter = fn(&OutcomeAgg) -> usize;
    let rows: [(&str, RowGetter); 7] = [
        ("single tooth (pre)", |a| a.pre_single),
        ("double tooth (pre)", |a| a.pre_double),
        ("not detected (pre)", |a| a.pre_missed),
        ("good reconstruction", |a| a.post_good),
        ("bad reconstruction", |a| a.post_bad),
        ("double tooth", |a| a.post_double),
        ("not detected", |a| a.post_missed),
    ];
    for (name, get) in rows {
        eprintln!("{:<20} {:>24} {:>24}", name, get(&with.0), get(&without.0));
    }
    eprintln!(
        "{:<20} {:>24} {:>24}",
        "scans", with.1, without.1
    );
}

#[derive(Default)]
struct OutcomeAgg {
    pre_single: usize,
    pre_double: usize,
    pre_missed: usize,
    post_good: usize,
    post_bad: usize,
    post_double: usize,
    post_missed: usize,
}

impl OutcomeAgg {
    fn add(&mut self, r: &OutcomeReport) {
        self.pre_single += r.pre_division.single_tooth;
        self.pre_double += r.pre_division.double_tooth;
        self.pre_missed += r.pre_division.not_detected;
        self.post_good += r.post_division.good_reconstruction;
        self.post_bad += r.post_division.bad_reconstruction;
        self.post_double += r.post_division.double_tooth;
        self.post_missed += r.post_division.not_detected;
    }
}

fn cmd_run(cmd: RunCmd, mut config: PipelineConfig) -> Result<()> {
    if let Some(seed) = cmd.seed {
        config.seed = seed;
    }
    if let Some(threads) = cmd.threads {
        config.threads = threads;
    }
    let report = run_pipeline(&RunArgs {
        volume: &cmd.volume,
        detections: cmd.detections.as_deref(),
        synthetic: cmd.synthetic,
        gt: cmd.gt.as_deref(),
        out_dir: &cmd.out_dir,
        config,
    })?;
    eprintln!(
        "run: {} boxes ({} divided) -> {}",
        report.boxes,
        report.divided.len(),
        cmd.out_dir.display()
    );
    if let Some(outcome) = &report.outcome {
        eprintln!(
            "run: detection rate {:.4}, pre {}/{}/{}, post {}/{}/{}/{}",
            outcome.detection_rate,
            outcome.pre_division.single_tooth,
            outcome.pre_division.double_tooth,
            outcome.pre_division.not_detected,
            outcome.post_division.good_reconstruction,
            outcome.post_division.bad_reconstruction,
            outcome.post_division.double_tooth,
            outcome.post_division.not_detected,
        );
    }
    Ok(())
}

fn cmd_export(cmd: ExportCmd) -> Result<()> {
    let vol = load_volume(&cmd.volume)?;
    let boxes = match &cmd.boxes {
        Some(path) => load_boxes(path)?,
        None => Vec::new(),
    };
    std::fs::create_dir_all(&cmd.out_dir)
        .with_context(|| format!("creating {}", cmd.out_dir.display()))?;
    let (nx, _, nz) = vol.dims();
    let indices = if cmd.index.is_empty() {
        vec![match cmd.plane {
            Plane::Axial => nz / 2,
            Plane::Sagittal => nx / 2,
        }]
    } else {
        cmd.index.clone()
    };
    for &i in &indices {
        let (prefix, bound) = match cmd.plane {
            Plane::Axial => ("axial", nz),
            Plane::Sagittal => ("sagittal", nx),
        };
        if i >= bound {
            bail!("{prefix} index {i} out of range (volume has {bound})");
        }
        let path = cmd.out_dir.join(format!("{prefix}_{i:04}.pgm"));
        match cmd.plane {
            Plane::Axial => export_axial_slice(&vol, i, &boxes, &path)?,
            Plane::Sagittal => export_sagittal_slice(&vol, i, &boxes, &path)?,
        }
        eprintln!("export-slices: wrote {}", path.display());
    }
    Ok(())
}
