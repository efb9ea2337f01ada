//! Deterministic synthetic-scene generator: renders DSM, orthophoto, masks
//! and a ground-truth catalog from a JSON scene description.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circular::{CircleModel, CircularRoofParams, CircularRoofType};
use crate::decompose::Rect;
use crate::error::{Error, Result};
use crate::grid::{GeoTransform, Grid};
use crate::rooffit::{RoofModel, RoofType};
use crate::scene::{
    building_height_at, export_catalog, Building, BuildingModel, SceneModel,
};
use crate::Point;

fn default_pixel_size() -> f64 {
    0.5
}

fn default_background() -> [u8; 3] {
    [70, 72, 68]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthScene {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_pixel_size")]
    pub pixel_size: f64,
    #[serde(default)]
    pub origin: [f64; 2],
    #[serde(default)]
    pub terrain_z: f64,
    /// DSM noise sigma in meters.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Orthophoto noise sigma in digital numbers.
    #[serde(default)]
    pub color_noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_background")]
    pub background: [u8; 3],
    pub buildings: Vec<SynthBuilding>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthBuilding {
    Rect {
        #[serde(rename = "type")]
        roof_type: String,
        center: [f64; 2],
        length: f64,
        width: f64,
        orientation: f64,
        z_ridge: f64,
        z_eave: f64,
        #[serde(default)]
        hipl: f64,
        #[serde(default)]
        hipw: f64,
        color: [u8; 3],
    },
    Circle {
        #[serde(rename = "type")]
        roof_type: String,
        center: [f64; 2],
        radius: f64,
        /// Type parameters: flat [z_roof, -], cone [z_apex, z_eave],
        /// sphere [z_center_offset, sphere_radius].
        params: [f64; 2],
        color: [u8; 3],
    },
}

impl SynthBuilding {
    fn color(&self) -> [u8; 3] {
        match self {
            SynthBuilding::Rect { color, .. } | SynthBuilding::Circle { color, .. } => *color,
        }
    }
}

pub fn load_scene(path: &Path) -> Result<SynthScene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn roof_type_by_name(name: &str) -> Result<RoofType> {
    RoofType::ALL
        .into_iter()
        .find(|t| t.name() == name)
        .ok_or_else(|| Error::Invalid(format!("unknown roof type '{name}'")))
}

/// Ground-truth scene model for a description; building ids are 1-based
/// description order.
pub fn to_scene_model(desc: &SynthScene) -> Result<SceneModel> {
    let t = transform_of(desc);
    let mut scene = SceneModel::new(t);
    for (i, b) in desc.buildings.iter().enumerate() {
        let id = i as u32 + 1;
        let model = match b {
            SynthBuilding::Rect {
                roof_type,
                center,
                length,
                width,
                orientation,
                z_ridge,
                z_eave,
                hipl,
                hipw,
                color,
            } => {
                let rt = roof_type_by_name(roof_type)?;
                BuildingModel::Rectangular(RoofModel {
                    roof_type: rt,
                    rect: Rect {
                        center: Point::new(center[0], center[1]),
                        length: *length,
                        width: *width,
                        orientation: *orientation,
                        mean_color: color.map(f64::from),
                        color_std: [0.0; 3],
                        mean_height: (*z_ridge + *z_eave) / 2.0,
                        parent_instance: id,
                    },
                    footprint: None,
                    z_ridge: *z_ridge,
                    z_eave: *z_eave,
                    hipl: *hipl,
                    hipw: *hipw,
                    terrain_z: desc.terrain_z,
                    fit_rmse: 0.0,
                })
            }
            SynthBuilding::Circle { roof_type, center, radius, params, .. } => {
                let (rt, pr) = match roof_type.as_str() {
                    "flat" => (
                        CircularRoofType::Flat,
                        CircularRoofParams::Flat { z_roof: params[0] },
                    ),
                    "cone" => (
                        CircularRoofType::Cone,
                        CircularRoofParams::Cone { z_apex: params[0], z_eave: params[1] },
                    ),
                    "sphere" => (
                        CircularRoofType::Sphere,
                        CircularRoofParams::Sphere {
                            z_center_offset: params[0],
                            sphere_radius: params[1],
                        },
                    ),
                    other => {
                        return Err(Error::Invalid(format!("unknown circular type '{other}'")))
                    }
                };
                BuildingModel::Circular(CircleModel {
                    center: Point::new(center[0], center[1]),
                    radius: *radius,
                    inner_radius: None,
                    arc: (0.0, TAU),
                    roof_type: rt,
                    params: pr,
                    terrain_z: desc.terrain_z,
                    fit_residual: 0.0,
                })
            }
        };
        scene.buildings.push(Building { id, model });
    }
    Ok(scene)
}

pub fn transform_of(desc: &SynthScene) -> GeoTransform {
    GeoTransform::new(desc.origin[0], desc.origin[1], desc.pixel_size, -desc.pixel_size)
}

/// Rendered rasters plus the ground-truth scene.
#[derive(Debug, Clone)]
pub struct SynthOutputs {
    pub dsm: Grid<f64>,
    pub ortho: Grid<u8>,
    pub mask: Grid<u8>,
    pub instances: Grid<u32>,
    pub ref_mask: Grid<u8>,
    pub ref_height: Grid<f64>,
    pub scene: SceneModel,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on two uniforms; one draw per call keeps the stream layout
    // obvious and deterministic
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Render a description. Fails if any two buildings cover a common pixel.
pub fn render(desc: &SynthScene) -> Result<SynthOutputs> {
    if desc.pixel_size <= 0.0 {
        return Err(Error::Invalid("pixel_size must be positive".into()));
    }
    let scene = to_scene_model(desc)?;
    let t = transform_of(desc);
    let (w, h) = (desc.width, desc.height);
    let mut dsm = Grid::filled(w, h, 1, desc.terrain_z, t.clone());
    let mut ortho = Grid::filled(w, h, 3, 0u8, t.clone());
    let mut mask = Grid::filled(w, h, 1, 0u8, t.clone());
    let mut instances = Grid::filled(w, h, 1, 0u32, t.clone());
    for b in 0..3 {
        for i in 0..w * h {
            ortho.data[i * 3 + b] = desc.background[b];
        }
    }
    for (bi, b) in scene.buildings.iter().enumerate() {
        let color = desc.buildings[bi].color();
        for r in 0..h {
            for c in 0..w {
                let p = t.pixel_center(c, r);
                if let Some(z) = building_height_at(&b.model, p) {
                    let prev = instances.get(c, r, 0);
                    if prev != 0 {
                        return Err(Error::Invalid(format!(
                            "buildings {prev} and {} overlap at pixel ({c}, {r})",
                            b.id
                        )));
                    }
                    instances.set(c, r, 0, b.id);
                    mask.set(c, r, 0, 1);
                    dsm.set(c, r, 0, z);
                    for k in 0..3 {
                        ortho.set(c, r, k, color[k]);
                    }
                }
            }
        }
    }
    let (ref_mask, ref_height) = crate::scene::rasterize_scene(&scene, &t, w, h);
    let mut rng = ChaCha8Rng::seed_from_u64(desc.seed);
    if desc.noise_sigma > 0.0 {
        for v in dsm.data.iter_mut() {
            *v += desc.noise_sigma * gaussian(&mut rng);
        }
    }
    if desc.color_noise > 0.0 {
        for v in ortho.data.iter_mut() {
            let nv = *v as f64 + desc.color_noise * gaussian(&mut rng);
            *v = nv.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(SynthOutputs { dsm, ortho, mask, instances, ref_mask, ref_height, scene })
}

/// Render and write every artifact into `dir`:
/// dsm.asc, ortho.ppm(+.wld), mask.pgm(+.wld), instances.asc,
/// ref_mask.pgm, ref_height.asc, ref_catalog.json.
pub fn synth_to_dir(desc: &SynthScene, dir: &Path) -> Result<SynthOutputs> {
    let out = render(desc)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::raster_io::write_ascii_grid(&out.dsm, &dir.join("dsm.asc"))?;
    crate::raster_io::write_ppm(&out.ortho, &dir.join("ortho.ppm"))?;
    crate::raster_io::write_pgm(&out.mask, &dir.join("mask.pgm"))?;
    crate::raster_io::write_ascii_grid(
        &crate::raster_io::grid_to_f64(&out.instances),
        &dir.join("instances.asc"),
    )?;
    crate::raster_io::write_pgm(&out.ref_mask, &dir.join("ref_mask.pgm"))?;
    crate::raster_io::write_ascii_grid(&out.ref_height, &dir.join("ref_height.asc"))?;
    export_catalog(&out.scene, &dir.join("ref_catalog.json"))?;
    Ok(out)
}
