use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lod2recon::pipeline::{MaskInput, PipelineInputs, StageToggles};
use lod2recon::raster_io::{self, RoadNetwork};
use lod2recon::scene::{input_digest, load_catalog};
use lod2recon::segmentation::{connected_components, fuse_segmentations};
use lod2recon::{Config, Error};

#[derive(Parser)]
#[command(name = "lod2recon", version, about = "LoD-2 building reconstruction from DSM, orthophoto and segmentation masks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full reconstruction pipeline.
    Reconstruct(ReconstructArgs),
    /// Fuse a primary mask with secondary instance detections.
    FuseMasks(FuseArgs),
    /// Score a catalog against reference mask and height rasters.
    Evaluate(EvaluateArgs),
    /// Render a synthetic scene description into input and reference files.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ReconstructArgs {
    /// DSM (ESRI ASCII grid).
    #[arg(long)]
    dsm: PathBuf,
    /// Orthophoto (PPM P6 with world file).
    #[arg(long)]
    ortho: PathBuf,
    /// Binary building mask (PGM P5 with world file), or a three-class
    /// map (ESRI ASCII grid) with --three-class.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    three_class: bool,
    /// Secondary detections (ESRI ASCII grid of instance labels).
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Road network (JSON polylines).
    #[arg(long)]
    roads: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Configuration overrides, JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_intermediate: bool,
    #[arg(long)]
    fuse: bool,
    #[arg(long)]
    watershed: bool,
    #[arg(long)]
    osm: bool,
    #[arg(long)]
    no_gc_orientation: bool,
    #[arg(long)]
    no_gc_type: bool,
    #[arg(long)]
    no_merge: bool,
    #[arg(long)]
    no_circular: bool,
    #[arg(long)]
    no_irregular: bool,
}

#[derive(Args)]
struct FuseArgs {
    /// Primary binary mask (PGM P5 with world file).
    #[arg(long)]
    mask: PathBuf,
    /// Secondary detections (ESRI ASCII grid of instance labels).
    #[arg(long)]
    detections: PathBuf,
    /// Output fused mask path (PGM P5).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted scene catalog (JSON).
    #[arg(long)]
    catalog: PathBuf,
    /// Reference mask (PGM P5 with world file).
    #[arg(long)]
    ref_mask: PathBuf,
    /// Reference height (ESRI ASCII grid).
    #[arg(long)]
    ref_height: PathBuf,
    /// Output directory for report.json / report.csv.
    #[arg(long)]
    out: PathBuf,
    /// 3D height tolerance, meters.
    #[arg(long, default_value_t = 2.0)]
    tol: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (JSON).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, Error> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Config::from_json(&text)
        }
    }
}

fn read_labels(path: &PathBuf) -> Result<lod2recon::grid::Grid<u32>, Error> {
    let g = raster_io::read_ascii_grid(path)?;
    raster_io::to_label_grid(&g, path)
}

fn run_reconstruct(a: &ReconstructArgs) -> Result<(), Error> {
    let cfg = load_config(&a.config)?;
    let dsm = raster_io::read_ascii_grid(&a.dsm)?;
    let ortho = raster_io::read_ppm(&a.ortho)?;
    let mask = if a.three_class {
        MaskInput::ThreeClass(read_labels(&a.mask)?)
    } else {
        MaskInput::Binary(raster_io::read_pgm(&a.mask)?)
    };
    let detections = match &a.detections {
        Some(p) => {
            let grid = read_labels(p)?;
            let count = grid.data.iter().copied().max().unwrap_or(0);
            Some(lod2recon::segmentation::InstanceMap { grid, count })
        }
        None => None,
    };
    let roads = match &a.roads {
        Some(p) => Some(RoadNetwork::read(p)?),
        None => None,
    };
    let toggles = StageToggles {
        fuse: a.fuse,
        watershed: a.watershed,
        osm: a.osm,
        gc_orientation: !a.no_gc_orientation,
        gc_type: !a.no_gc_type,
        merge: !a.no_merge,
        circular: !a.no_circular,
        irregular: !a.no_irregular,
    };
    let inputs = PipelineInputs { dsm, ortho, mask, detections, roads };
    let (mut scene, inter) = lod2recon::pipeline::reconstruct(&inputs, &toggles, &cfg)?;
    for (name, path) in [("dsm", &a.dsm), ("ortho", &a.ortho), ("mask", &a.mask)] {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        scene.provenance.inputs.push((name.to_string(), input_digest(&bytes)));
    }
    lod2recon::pipeline::write_artifacts(&scene, &inter, &a.out, a.no_intermediate)?;
    println!("reconstructed {} buildings -> {}", scene.buildings.len(), a.out.display());
    Ok(())
}

fn run_fuse(a: &FuseArgs) -> Result<(), Error> {
    let cfg = load_config(&a.config)?;
    let mask = raster_io::read_pgm(&a.mask)?;
    let grid = read_labels(&a.detections)?;
    let detections = {
        let count = grid.data.iter().copied().max().unwrap_or(0);
        lod2recon::segmentation::InstanceMap { grid, count }
    };
    let fused = fuse_segmentations(&mask, &detections, &cfg)?;
    raster_io::write_pgm(&fused, &a.out)?;
    let instances = connected_components(&fused);
    println!("fused mask has {} instances -> {}", instances.count, a.out.display());
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs) -> Result<(), Error> {
    let scene = load_catalog(&a.catalog)?;
    let ref_mask = raster_io::read_pgm(&a.ref_mask)?;
    let mut ref_height = raster_io::read_ascii_grid(&a.ref_height)?;
    if ref_height.nodata.is_none() {
        ref_height.nodata = Some(-9999.0);
    }
    let report = lod2recon::metrics::evaluate(&scene, &ref_mask, &ref_height, a.tol)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    lod2recon::metrics::write_report_json(&report, &a.out.join("report.json"))?;
    lod2recon::metrics::write_report_csv(&report, &a.out.join("report.csv"))?;
    println!(
        "IOU2 {:.4}  IOU3 {:.4}  RMSE {:.3} m ({} buildings)",
        report.scene_iou2,
        report.scene_iou3,
        report.scene_rmse_m,
        report.buildings.len()
    );
    Ok(())
}

fn run_synth(a: &SynthArgs) -> Result<(), Error> {
    let desc = lod2recon::synth::load_scene(&a.scene)?;
    let out = lod2recon::synth::synth_to_dir(&desc, &a.out)?;
    println!(
        "rendered {} buildings onto {}x{} -> {}",
        out.scene.buildings.len(),
        desc.width,
        desc.height,
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Reconstruct(a) => run_reconstruct(a),
        Command::FuseMasks(a) => run_fuse(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Stage { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
