//! LoD-2 building model reconstruction from satellite-derived DSMs,
//! orthophotos and building segmentation masks.
//!
//! The pipeline vectorizes building instances into regularized polygons,
//! decomposes them into oriented rectangles, refines orientations and roof
//! types with multi-label graph cuts, fits parametric roof primitives
//! (plus circular primitives and an irregular-mesh fallback), and evaluates
//! the result with 2D/3D intersection-over-union.

pub mod circular;
pub mod config;
pub mod decompose;
pub mod error;
pub mod geom;
pub mod graphcut;
pub mod grid;
pub mod labeling;
pub mod metrics;
pub mod pipeline;
pub mod polygonize;
pub mod raster_io;
pub mod rooffit;
pub mod scene;
pub mod segmentation;
pub mod synth;

pub use config::Config;
pub use error::{Error, Result};

/// Scalar type used throughout the pipeline.
pub type Coord = f64;
/// World-space point with the pipeline scalar type.
pub type Point = geom::Point2<Coord>;
/// Infinite world-space line.
pub type Line = geom::Line2<Coord>;

use std::path::Path;

use grid::Grid;
use raster_io::RasterKind;

/// Raster holder for the kinds of inputs the pipeline consumes.
#[derive(Debug, Clone)]
pub enum Raster {
    Height(Grid<f64>),
    Rgb(Grid<u8>),
    Mask(Grid<u8>),
    Labels(Grid<u32>),
}

/// Read a raster file in the declared format for its kind:
/// DSM/instances as ESRI ASCII grids, orthophotos as PPM (P6) with a world
/// file, binary masks as PGM (P5) with a world file.
pub fn read_raster(path: &Path, kind: RasterKind) -> Result<Raster> {
    match kind {
        RasterKind::Dsm => Ok(Raster::Height(raster_io::read_ascii_grid(path)?)),
        RasterKind::Instances => {
            let g = raster_io::read_ascii_grid(path)?;
            Ok(Raster::Labels(raster_io::to_label_grid(&g, path)?))
        }
        RasterKind::Ortho => Ok(Raster::Rgb(raster_io::read_ppm(path)?)),
        RasterKind::Mask => Ok(Raster::Mask(raster_io::read_pgm(path)?)),
    }
}

/// Write a raster back in the format implied by its kind.
pub fn write_raster(raster: &Raster, path: &Path) -> Result<()> {
    match raster {
        Raster::Height(g) => raster_io::write_ascii_grid(g, path),
        Raster::Labels(g) => raster_io::write_ascii_grid(&raster_io::grid_to_f64(g), path),
        Raster::Rgb(g) => raster_io::write_ppm(g, path),
        Raster::Mask(g) => raster_io::write_pgm(g, path),
    }
}
