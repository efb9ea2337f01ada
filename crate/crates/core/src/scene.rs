//! Scene assembly: fitted models tagged with stable ids, analytic
//! rasterization for evaluation, and OBJ / JSON-catalog export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circular::{CircleModel, CircularRoofParams, CircularRoofType};
use crate::decompose::Rect;
use crate::error::{Error, Result};
use crate::geom::polygon_area;
use crate::grid::{GeoTransform, Grid};
use crate::rooffit::{roof_height, Mesh, RoofModel, RoofType};
use crate::Point;

pub const CATALOG_SCHEMA: &str = "lod2-catalog/1";

/// Height value marking background pixels in rasterized height grids.
pub const HEIGHT_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, PartialEq)]
pub enum BuildingModel {
    Rectangular(RoofModel),
    Circular(CircleModel),
    Irregular(Mesh),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub id: u32,
    pub model: BuildingModel,
}

/// What produced the scene: serialized config plus input digests, enough to
/// reproduce the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_json: String,
    /// (input name, sha256 hex digest).
    pub inputs: Vec<(String, String)>,
}

pub fn input_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub buildings: Vec<Building>,
    pub transform: GeoTransform,
    pub provenance: Provenance,
}

impl SceneModel {
    pub fn new(transform: GeoTransform) -> Self {
        SceneModel {
            buildings: Vec::new(),
            transform,
            provenance: Provenance::default(),
        }
    }
}

/// Roof height of a building at a world point, `None` outside its
/// footprint.
pub fn building_height_at(model: &BuildingModel, p: Point) -> Option<f64> {
    match model {
        BuildingModel::Rectangular(m) => roof_height(m, p),
        BuildingModel::Circular(c) => c.height_at(p),
        BuildingModel::Irregular(mesh) => mesh_height_at(mesh, p),
    }
}

/// Height of the mesh surface above a point: max interpolated z over the
/// triangles whose 2D projection contains it.
pub fn mesh_height_at(mesh: &Mesh, p: Point) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in &mesh.faces {
        let a = mesh.vertices[f[0]];
        let b = mesh.vertices[f[1]];
        let c = mesh.vertices[f[2]];
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if det.abs() < 1e-12 {
            continue;
        }
        let l1 = ((p.x - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p.y - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p.y - a[1]) - (p.x - a[0]) * (b[1] - a[1])) / det;
        let l0 = 1.0 - l1 - l2;
        if l0 < -1e-9 || l1 < -1e-9 || l2 < -1e-9 {
            continue;
        }
        let z = l0 * a[2] + l1 * b[2] + l2 * c[2];
        best = Some(best.map_or(z, |v: f64| v.max(z)));
    }
    best
}

fn push_vert(mesh: &mut Mesh, p: Point, z: f64) -> usize {
    mesh.vertices.push([p.x, p.y, z]);
    mesh.vertices.len() - 1
}

fn push_tri(mesh: &mut Mesh, a: usize, b: usize, c: usize) {
    mesh.faces.push([a, b, c]);
}

fn push_quad(mesh: &mut Mesh, a: usize, b: usize, c: usize, d: usize) {
    push_tri(mesh, a, b, c);
    push_tri(mesh, a, c, d);
}

/// Ear-clipping triangulation of a simple polygon; returns index triples
/// into `poly`. Input winding may be either; output follows input order.
fn triangulate_polygon(poly: &[Point]) -> Vec<[usize; 3]> {
    let n = poly.len();
    if n < 3 {
        return Vec::new();
    }
    let ccw = polygon_area(poly) >= 0.0;
    let cross = |o: Point, a: Point, b: Point| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut idx: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    let mut guard = 0;
    while idx.len() > 3 && guard < n * n {
        guard += 1;
        let m = idx.len();
        let mut clipped = false;
        for k in 0..m {
            let (i0, i1, i2) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let c = cross(poly[i0], poly[i1], poly[i2]);
            let convex = if ccw { c > 1e-12 } else { c < -1e-12 };
            if !convex {
                continue;
            }
            let ear = idx.iter().all(|&j| {
                if j == i0 || j == i1 || j == i2 {
                    return true;
                }
                !point_in_triangle(poly[j], poly[i0], poly[i1], poly[i2])
            });
            if ear {
                out.push([i0, i1, i2]);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            break;
        }
    }
    if idx.len() == 3 {
        out.push([idx[0], idx[1], idx[2]]);
    }
    out
}

fn point_in_triangle(p: Point, a: Point, b: Point, c: Point) -> bool {
    let s = |o: Point, a: Point, b: Point| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let d0 = s(a, b, p);
    let d1 = s(b, c, p);
    let d2 = s(c, a, p);
    (d0 >= -1e-12 && d1 >= -1e-12 && d2 >= -1e-12)
        || (d0 <= 1e-12 && d1 <= 1e-12 && d2 <= 1e-12)
}

/// Watertight prism mesh for a rectangular roof model: type-specific roof
/// faces, vertical walls to `terrain_z`, and a floor.
pub fn rectangular_to_mesh(m: &RoofModel) -> Mesh {
    if m.footprint.is_some() {
        return footprint_to_mesh(m);
    }
    let r = &m.rect;
    let l2 = r.length / 2.0;
    let w2 = r.width / 2.0;
    let (zr, ze, fz) = (m.z_ridge, m.z_eave, m.terrain_z);
    let mut mesh = Mesh::default();
    // eave ring, CCW in local coordinates
    let ring = [(-l2, -w2), (l2, -w2), (l2, w2), (-l2, w2)];
    let top: Vec<usize> = ring
        .iter()
        .map(|&(u, v)| push_vert(&mut mesh, r.local_to_world(u, v), ze))
        .collect();
    let bot: Vec<usize> = ring
        .iter()
        .map(|&(u, v)| push_vert(&mut mesh, r.local_to_world(u, v), fz))
        .collect();
    let (a, b, c, d) = (top[0], top[1], top[2], top[3]);
    match m.roof_type {
        RoofType::Flat => {
            push_quad(&mut mesh, a, b, c, d);
            for k in 0..4 {
                let j = (k + 1) % 4;
                push_quad(&mut mesh, bot[k], bot[j], top[j], top[k]);
            }
        }
        RoofType::Gable => {
            let r0 = push_vert(&mut mesh, r.local_to_world(-l2, 0.0), zr);
            let r1 = push_vert(&mut mesh, r.local_to_world(l2, 0.0), zr);
            push_quad(&mut mesh, a, b, r1, r0);
            push_quad(&mut mesh, c, d, r0, r1);
            // eave-side walls
            push_quad(&mut mesh, bot[0], bot[1], b, a);
            push_quad(&mut mesh, bot[2], bot[3], d, c);
            // gable-end pentagons
            push_tri(&mut mesh, bot[1], bot[2], c);
            push_tri(&mut mesh, bot[1], c, r1);
            push_tri(&mut mesh, bot[1], r1, b);
            push_tri(&mut mesh, bot[3], bot[0], a);
            push_tri(&mut mesh, bot[3], a, r0);
            push_tri(&mut mesh, bot[3], r0, d);
        }
        RoofType::Hip => {
            let r0 = push_vert(&mut mesh, r.local_to_world(-(l2 - m.hipl), 0.0), zr);
            let r1 = push_vert(&mut mesh, r.local_to_world(l2 - m.hipl, 0.0), zr);
            push_quad(&mut mesh, a, b, r1, r0);
            push_quad(&mut mesh, c, d, r0, r1);
            push_tri(&mut mesh, b, c, r1);
            push_tri(&mut mesh, d, a, r0);
            for k in 0..4 {
                let j = (k + 1) % 4;
                push_quad(&mut mesh, bot[k], bot[j], top[j], top[k]);
            }
        }
        RoofType::Pyramid => {
            let apex = push_vert(&mut mesh, r.local_to_world(0.0, 0.0), zr);
            for k in 0..4 {
                let j = (k + 1) % 4;
                push_tri(&mut mesh, top[k], top[j], apex);
                push_quad(&mut mesh, bot[k], bot[j], top[j], top[k]);
            }
        }
        RoofType::Mansard => {
            let pl = l2 - m.hipl;
            let pw = w2 - m.hipw;
            let plat: Vec<usize> = [(-pl, -pw), (pl, -pw), (pl, pw), (-pl, pw)]
                .iter()
                .map(|&(u, v)| push_vert(&mut mesh, r.local_to_world(u, v), zr))
                .collect();
            push_quad(&mut mesh, plat[0], plat[1], plat[2], plat[3]);
            for k in 0..4 {
                let j = (k + 1) % 4;
                push_quad(&mut mesh, top[k], top[j], plat[j], plat[k]);
                push_quad(&mut mesh, bot[k], bot[j], top[j], top[k]);
            }
        }
    }
    push_quad(&mut mesh, bot[3], bot[2], bot[1], bot[0]);
    mesh
}

/// Merged rectilinear footprints: roof triangulated over the outline with
/// analytic vertex heights, straight walls and a floor. Interior ridge
/// lines are not inserted; rasterization stays analytic regardless.
fn footprint_to_mesh(m: &RoofModel) -> Mesh {
    let poly = m.footprint_polygon();
    let n = poly.len();
    let mut mesh = Mesh::default();
    let top: Vec<usize> = poly
        .iter()
        .map(|&p| {
            let z = roof_height(m, p).unwrap_or(m.z_eave);
            push_vert(&mut mesh, p, z)
        })
        .collect();
    let bot: Vec<usize> = poly
        .iter()
        .map(|&p| push_vert(&mut mesh, p, m.terrain_z))
        .collect();
    for t in triangulate_polygon(&poly) {
        push_tri(&mut mesh, top[t[0]], top[t[1]], top[t[2]]);
    }
    for k in 0..n {
        let j = (k + 1) % n;
        push_quad(&mut mesh, bot[k], bot[j], top[j], top[k]);
    }
    for t in triangulate_polygon(&poly) {
        push_tri(&mut mesh, bot[t[2]], bot[t[1]], bot[t[0]]);
    }
    mesh
}

/// Roof surface height of a circular model at distance `d` from the
/// center, without the footprint test.
fn circular_z(c: &CircleModel, d: f64) -> f64 {
    match c.params {
        CircularRoofParams::Flat { z_roof } => z_roof,
        CircularRoofParams::Cone { z_apex, z_eave } => {
            z_apex + (z_eave - z_apex) * (d / c.radius)
        }
        CircularRoofParams::Sphere { z_center_offset, sphere_radius } => {
            z_center_offset + (sphere_radius * sphere_radius - d * d).max(0.0).sqrt()
        }
    }
}

/// Discretize a circular model into a prism mesh with `n_segments` arc
/// segments; rings get an inner wall, sectors two radial side walls.
pub fn circular_to_mesh(c: &CircleModel, n_segments: usize) -> Mesh {
    assert!(n_segments >= 8, "need at least 8 segments");
    let n = n_segments;
    let (s, e) = c.arc;
    let span = e - s;
    let full = span >= std::f64::consts::TAU - 1e-9;
    let ring_pts = if full { n } else { n + 1 };
    let at = |k: usize, rad: f64| {
        let ang = s + span * k as f64 / n as f64;
        Point::new(c.center.x + rad * ang.cos(), c.center.y + rad * ang.sin())
    };
    let mut mesh = Mesh::default();
    let fz = c.terrain_z;
    let outer_top: Vec<usize> = (0..ring_pts)
        .map(|k| push_vert(&mut mesh, at(k, c.radius), circular_z(c, c.radius)))
        .collect();
    let outer_bot: Vec<usize> = (0..ring_pts)
        .map(|k| push_vert(&mut mesh, at(k, c.radius), fz))
        .collect();
    let seg = |k: usize| if full { (k, (k + 1) % n) } else { (k, k + 1) };
    match c.inner_radius {
        None => {
            let ctr_top = push_vert(&mut mesh, c.center, circular_z(c, 0.0));
            let ctr_bot = push_vert(&mut mesh, c.center, fz);
            for k in 0..n {
                let (i, j) = seg(k);
                push_tri(&mut mesh, ctr_top, outer_top[i], outer_top[j]);
                push_quad(&mut mesh, outer_bot[i], outer_bot[j], outer_top[j], outer_top[i]);
                push_tri(&mut mesh, ctr_bot, outer_bot[j], outer_bot[i]);
            }
            if !full {
                push_quad(&mut mesh, ctr_bot, outer_bot[0], outer_top[0], ctr_top);
                push_quad(&mut mesh, ctr_top, outer_top[n], outer_bot[n], ctr_bot);
            }
        }
        Some(ri) => {
            let inner_top: Vec<usize> = (0..ring_pts)
                .map(|k| push_vert(&mut mesh, at(k, ri), circular_z(c, ri)))
                .collect();
            let inner_bot: Vec<usize> = (0..ring_pts)
                .map(|k| push_vert(&mut mesh, at(k, ri), fz))
                .collect();
            for k in 0..n {
                let (i, j) = seg(k);
                push_quad(&mut mesh, inner_top[i], outer_top[i], outer_top[j], inner_top[j]);
                push_quad(&mut mesh, outer_bot[i], outer_bot[j], outer_top[j], outer_top[i]);
                push_quad(&mut mesh, inner_bot[j], inner_bot[i], inner_top[i], inner_top[j]);
                push_quad(&mut mesh, inner_bot[i], inner_bot[j], outer_bot[j], outer_bot[i]);
            }
            if !full {
                push_quad(&mut mesh, inner_bot[0], outer_bot[0], outer_top[0], inner_top[0]);
                push_quad(&mut mesh, inner_top[n], outer_top[n], outer_bot[n], inner_bot[n]);
            }
        }
    }
    mesh
}

pub fn building_mesh(b: &Building, n_segments: usize) -> Mesh {
    match &b.model {
        BuildingModel::Rectangular(m) => rectangular_to_mesh(m),
        BuildingModel::Circular(c) => circular_to_mesh(c, n_segments),
        BuildingModel::Irregular(mesh) => mesh.clone(),
    }
}

/// Rasterize the scene onto a grid: pixel-center footprint test, analytic
/// heights, overlaps resolved by max height. Returns (mask, height) with
/// background height [`HEIGHT_NODATA`].
pub fn rasterize_scene(
    s: &SceneModel,
    like: &GeoTransform,
    width: usize,
    height: usize,
) -> (Grid<u8>, Grid<f64>) {
    let mut mask = Grid::filled(width, height, 1, 0u8, like.clone());
    let mut hgt = Grid::filled(width, height, 1, HEIGHT_NODATA, like.clone());
    hgt.nodata = Some(HEIGHT_NODATA);
    for b in &s.buildings {
        let (min, max) = building_bbox(&b.model);
        let (c0, r0) = like.world_to_pixel(Point::new(min.x, max.y));
        let (c1, r1) = like.world_to_pixel(Point::new(max.x, min.y));
        let c0 = (c0.floor().max(0.0)) as usize;
        let r0 = (r0.floor().max(0.0)) as usize;
        let c1 = (c1.ceil().min(width as f64)) as usize;
        let r1 = (r1.ceil().min(height as f64)) as usize;
        for r in r0..r1 {
            for c in c0..c1 {
                let p = like.pixel_center(c, r);
                if let Some(z) = building_height_at(&b.model, p) {
                    let cur = hgt.get(c, r, 0);
                    if cur == HEIGHT_NODATA || z > cur {
                        hgt.set(c, r, 0, z);
                    }
                    mask.set(c, r, 0, 1);
                }
            }
        }
    }
    (mask, hgt)
}

fn building_bbox(model: &BuildingModel) -> (Point, Point) {
    let mut min = Point::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut upd = |x: f64, y: f64| {
        min.x = min.x.min(x);
        min.y = min.y.min(y);
        max.x = max.x.max(x);
        max.y = max.y.max(y);
    };
    match model {
        BuildingModel::Rectangular(m) => {
            for p in m.footprint_polygon() {
                upd(p.x, p.y);
            }
        }
        BuildingModel::Circular(c) => {
            upd(c.center.x - c.radius, c.center.y - c.radius);
            upd(c.center.x + c.radius, c.center.y + c.radius);
        }
        BuildingModel::Irregular(mesh) => {
            for v in &mesh.vertices {
                upd(v[0], v[1]);
            }
        }
    }
    (min, max)
}

/// Wavefront OBJ export: `v`/`f`/`g` records, one `g building_<id>` group
/// per building, coordinates printed at 1e-4 precision.
pub fn export_obj(s: &SceneModel, path: &Path, n_segments: usize) -> Result<()> {
    let mut out = String::from("# lod2recon scene\n");
    let mut base = 1usize;
    for b in &s.buildings {
        let mesh = building_mesh(b, n_segments);
        writeln!(out, "g building_{}", b.id).unwrap();
        for v in &mesh.vertices {
            writeln!(out, "v {:.4} {:.4} {:.4}", v[0], v[1], v[2]).unwrap();
        }
        for f in &mesh.faces {
            writeln!(out, "f {} {} {}", base + f[0], base + f[1], base + f[2]).unwrap();
        }
        base += mesh.vertices.len();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Re-import an exported OBJ: groups with global vertex indices rebased to
/// per-group meshes.
pub fn import_obj(path: &Path) -> Result<Vec<(String, Mesh)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut groups: Vec<(String, Mesh)> = Vec::new();
    let mut all_verts: Vec<[f64; 3]> = Vec::new();
    let mut group_start = 0usize;
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("g") => {
                let name = it.next().unwrap_or("").to_string();
                group_start = all_verts.len();
                groups.push((name, Mesh::default()));
            }
            Some("v") => {
                let mut c = [0.0f64; 3];
                for k in 0..3 {
                    c[k] = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::format(path, format!("bad vertex, line {}", ln + 1)))?;
                }
                all_verts.push(c);
                if let Some((_, m)) = groups.last_mut() {
                    m.vertices.push(c);
                }
            }
            Some("f") => {
                let (_, m) = groups
                    .last_mut()
                    .ok_or_else(|| Error::format(path, format!("face before group, line {}", ln + 1)))?;
                let mut f = [0usize; 3];
                for k in 0..3 {
                    let idx: usize = it
                        .next()
                        .and_then(|t| t.split('/').next())
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::format(path, format!("bad face, line {}", ln + 1)))?;
                    f[k] = idx - 1 - group_start;
                }
                m.faces.push(f);
            }
            _ => {}
        }
    }
    Ok(groups)
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    schema: String,
    transform: TransformRec,
    provenance: Provenance,
    buildings: Vec<BuildingRec>,
}

#[derive(Serialize, Deserialize)]
struct TransformRec {
    origin_x: f64,
    origin_y: f64,
    pixel_size_x: f64,
    pixel_size_y: f64,
    crs: String,
}

#[derive(Serialize, Deserialize)]
struct BuildingRec {
    id: u32,
    #[serde(flatten)]
    body: BodyRec,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BodyRec {
    Rectangular {
        #[serde(rename = "type")]
        roof_type: String,
        pose: [f64; 3],
        size: [f64; 2],
        z_ridge: f64,
        z_eave: f64,
        hipl: f64,
        hipw: f64,
        footprint: Option<Vec<[f64; 2]>>,
        mean_color: [f64; 3],
        color_std: [f64; 3],
        mean_height: f64,
        parent_instance: u32,
        terrain_z: f64,
        fit_rmse: f64,
    },
    Circular {
        #[serde(rename = "type")]
        roof_type: String,
        center: [f64; 2],
        radius: f64,
        inner_radius: Option<f64>,
        arc: [f64; 2],
        params: [f64; 2],
        terrain_z: f64,
        fit_residual: f64,
    },
    Irregular {
        vertices: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
    },
}

fn roof_type_from_name(name: &str) -> Result<RoofType> {
    RoofType::ALL
        .into_iter()
        .find(|t| t.name() == name)
        .ok_or_else(|| Error::Invalid(format!("unknown roof type '{name}'")))
}

fn body_rec(model: &BuildingModel) -> BodyRec {
    match model {
        BuildingModel::Rectangular(m) => BodyRec::Rectangular {
            roof_type: m.roof_type.name().to_string(),
            pose: [m.rect.center.x, m.rect.center.y, m.rect.orientation],
            size: [m.rect.length, m.rect.width],
            z_ridge: m.z_ridge,
            z_eave: m.z_eave,
            hipl: m.hipl,
            hipw: m.hipw,
            footprint: m
                .footprint
                .as_ref()
                .map(|p| p.iter().map(|q| [q.x, q.y]).collect()),
            mean_color: m.rect.mean_color,
            color_std: m.rect.color_std,
            mean_height: m.rect.mean_height,
            parent_instance: m.rect.parent_instance,
            terrain_z: m.terrain_z,
            fit_rmse: m.fit_rmse,
        },
        BuildingModel::Circular(c) => {
            let (name, params) = match c.params {
                CircularRoofParams::Flat { z_roof } => ("flat", [z_roof, 0.0]),
                CircularRoofParams::Cone { z_apex, z_eave } => ("cone", [z_apex, z_eave]),
                CircularRoofParams::Sphere { z_center_offset, sphere_radius } => {
                    ("sphere", [z_center_offset, sphere_radius])
                }
            };
            BodyRec::Circular {
                roof_type: name.to_string(),
                center: [c.center.x, c.center.y],
                radius: c.radius,
                inner_radius: c.inner_radius,
                arc: [c.arc.0, c.arc.1],
                params,
                terrain_z: c.terrain_z,
                fit_residual: c.fit_residual,
            }
        }
        BuildingModel::Irregular(mesh) => BodyRec::Irregular {
            vertices: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
        },
    }
}

fn body_model(body: BodyRec) -> Result<BuildingModel> {
    Ok(match body {
        BodyRec::Rectangular {
            roof_type,
            pose,
            size,
            z_ridge,
            z_eave,
            hipl,
            hipw,
            footprint,
            mean_color,
            color_std,
            mean_height,
            parent_instance,
            terrain_z,
            fit_rmse,
        } => BuildingModel::Rectangular(RoofModel {
            roof_type: roof_type_from_name(&roof_type)?,
            rect: Rect {
                center: Point::new(pose[0], pose[1]),
                length: size[0],
                width: size[1],
                orientation: pose[2],
                mean_color,
                color_std,
                mean_height,
                parent_instance,
            },
            footprint: footprint.map(|p| p.iter().map(|q| Point::new(q[0], q[1])).collect()),
            z_ridge,
            z_eave,
            hipl,
            hipw,
            terrain_z,
            fit_rmse,
        }),
        BodyRec::Circular {
            roof_type,
            center,
            radius,
            inner_radius,
            arc,
            params,
            terrain_z,
            fit_residual,
        } => {
            let (rt, pr) = match roof_type.as_str() {
                "flat" => (CircularRoofType::Flat, CircularRoofParams::Flat { z_roof: params[0] }),
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
                other => return Err(Error::Invalid(format!("unknown circular type '{other}'"))),
            };
            BuildingModel::Circular(CircleModel {
                center: Point::new(center[0], center[1]),
                radius,
                inner_radius,
                arc: (arc[0], arc[1]),
                roof_type: rt,
                params: pr,
                terrain_z,
                fit_residual,
            })
        }
        BodyRec::Irregular { vertices, faces } => {
            BuildingModel::Irregular(Mesh { vertices, faces })
        }
    })
}

pub fn catalog_json(s: &SceneModel) -> Result<String> {
    let file = CatalogFile {
        schema: CATALOG_SCHEMA.to_string(),
        transform: TransformRec {
            origin_x: s.transform.origin_x,
            origin_y: s.transform.origin_y,
            pixel_size_x: s.transform.pixel_size_x,
            pixel_size_y: s.transform.pixel_size_y,
            crs: s.transform.crs_tag.clone(),
        },
        provenance: s.provenance.clone(),
        buildings: s
            .buildings
            .iter()
            .map(|b| BuildingRec { id: b.id, body: body_rec(&b.model) })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    Ok(text)
}

pub fn export_catalog(s: &SceneModel, path: &Path) -> Result<()> {
    fs::write(path, catalog_json(s)?).map_err(|e| Error::io(path, e))
}

pub fn load_catalog(path: &Path) -> Result<SceneModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CatalogFile = serde_json::from_str(&text)?;
    if file.schema != CATALOG_SCHEMA {
        return Err(Error::format(
            path,
            format!("unsupported catalog schema '{}'", file.schema),
        ));
    }
    let mut t = GeoTransform::new(
        file.transform.origin_x,
        file.transform.origin_y,
        file.transform.pixel_size_x,
        file.transform.pixel_size_y,
    );
    t.crs_tag = file.transform.crs;
    let mut scene = SceneModel::new(t);
    scene.provenance = file.provenance;
    for rec in file.buildings {
        scene.buildings.push(Building { id: rec.id, model: body_model(rec.body)? });
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn rect(cx: f64, cy: f64, l: f64, w: f64, theta: f64) -> Rect {
        Rect {
            center: Point::new(cx, cy),
            length: l,
            width: w,
            orientation: theta,
            mean_color: [100.0, 110.0, 120.0],
            color_std: [4.0, 4.0, 4.0],
            mean_height: 10.0,
            parent_instance: 1,
        }
    }

    fn model(rt: RoofType, rect: Rect, zr: f64, ze: f64, hipl: f64, hipw: f64) -> RoofModel {
        RoofModel {
            roof_type: rt,
            rect,
            footprint: None,
            z_ridge: zr,
            z_eave: ze,
            hipl,
            hipw,
            terrain_z: 2.0,
            fit_rmse: 0.0,
        }
    }

    fn assert_watertight(mesh: &Mesh) {
        let mut edges: HashMap<(usize, usize), i64> = HashMap::new();
        for f in &mesh.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += if a < b { 1 } else { -1 };
            }
        }
        for (e, bal) in edges {
            assert_eq!(bal, 0, "unmatched edge {e:?}");
        }
    }

    #[test]
    fn flat_box_is_a_cuboid() {
        let m = model(RoofType::Flat, rect(0.0, 0.0, 10.0, 6.0, 0.0), 8.0, 8.0, 0.0, 0.0);
        let mesh = rectangular_to_mesh(&m);
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.faces.len(), 12);
        assert_watertight(&mesh);
    }

    #[test]
    fn prism_triangle_counts_per_type() {
        let r = rect(0.0, 0.0, 12.0, 8.0, 30.0);
        let cases = [
            (model(RoofType::Flat, r.clone(), 8.0, 8.0, 0.0, 0.0), 12),
            (model(RoofType::Gable, r.clone(), 9.0, 7.0, 0.0, 4.0), 16),
            (model(RoofType::Hip, r.clone(), 9.0, 7.0, 3.0, 4.0), 16),
            (model(RoofType::Pyramid, r.clone(), 9.0, 7.0, 6.0, 4.0), 14),
            (model(RoofType::Mansard, r.clone(), 9.0, 7.0, 3.0, 2.0), 20),
        ];
        for (m, count) in cases {
            let mesh = rectangular_to_mesh(&m);
            assert_eq!(mesh.faces.len(), count, "{}", m.roof_type.name());
            assert_watertight(&mesh);
            // every roof vertex lies on the analytic surface
            for v in &mesh.vertices {
                if v[2] > m.terrain_z + 1e-9 {
                    let z = roof_height(&m, Point::new(v[0], v[1])).unwrap();
                    assert!((z - v[2]).abs() < 1e-9, "{}: {v:?} vs {z}", m.roof_type.name());
                }
            }
        }
    }

    fn circle(rt: CircularRoofType, params: CircularRoofParams, arc: (f64, f64)) -> CircleModel {
        CircleModel {
            center: Point::new(5.0, -5.0),
            radius: 4.0,
            inner_radius: None,
            arc,
            roof_type: rt,
            params,
            terrain_z: 1.0,
            fit_residual: 0.0,
        }
    }

    #[test]
    fn circular_meshes_full_and_sector() {
        use std::f64::consts::TAU;
        let flat = circle(
            CircularRoofType::Flat,
            CircularRoofParams::Flat { z_roof: 6.0 },
            (0.0, TAU),
        );
        let prism = circular_to_mesh(&flat, 8);
        // octagonal prism: 8 roof + 16 wall + 8 floor triangles
        assert_eq!(prism.faces.len(), 32);
        assert_watertight(&prism);

        let cone = circle(
            CircularRoofType::Cone,
            CircularRoofParams::Cone { z_apex: 9.0, z_eave: 5.0 },
            (0.0, TAU),
        );
        let fan = circular_to_mesh(&cone, 64);
        assert_eq!(fan.faces.len(), 64 * 4);
        assert_watertight(&fan);

        let quarter = circle(
            CircularRoofType::Flat,
            CircularRoofParams::Flat { z_roof: 6.0 },
            (0.0, TAU / 4.0),
        );
        let sector = circular_to_mesh(&quarter, 8);
        // 8 segments x 4 + two radial side walls of 2 triangles
        assert_eq!(sector.faces.len(), 8 * 4 + 4);
        assert_watertight(&sector);
    }

    #[test]
    fn rasterize_empty_and_flat_box() {
        let t = GeoTransform::new(0.0, 0.0, 0.5, -0.5);
        let scene = SceneModel::new(t.clone());
        let (mask, _) = rasterize_scene(&scene, &t, 40, 40);
        assert!(mask.data.iter().all(|&v| v == 0));

        let mut scene = SceneModel::new(t.clone());
        let m = model(RoofType::Flat, rect(5.0, -5.0, 10.0, 10.0, 0.0), 8.0, 8.0, 0.0, 0.0);
        scene.buildings.push(Building { id: 1, model: BuildingModel::Rectangular(m) });
        let (mask, hgt) = rasterize_scene(&scene, &t, 40, 40);
        let on = mask.data.iter().filter(|&&v| v != 0).count();
        assert_eq!(on, 400);
        for r in 0..40 {
            for c in 0..40 {
                if mask.get(c, r, 0) != 0 {
                    assert_eq!(hgt.get(c, r, 0), 8.0);
                } else {
                    assert_eq!(hgt.get(c, r, 0), HEIGHT_NODATA);
                }
            }
        }
    }

    #[test]
    fn rasterize_matches_analytic_heights_and_max_overlap() {
        let t = GeoTransform::new(0.0, 0.0, 0.5, -0.5);
        let mut scene = SceneModel::new(t.clone());
        let g = model(RoofType::Gable, rect(8.0, -8.0, 12.0, 8.0, 25.0), 9.0, 6.0, 0.0, 4.0);
        let f = model(RoofType::Flat, rect(10.0, -8.0, 8.0, 8.0, 0.0), 12.0, 12.0, 0.0, 0.0);
        scene.buildings.push(Building { id: 1, model: BuildingModel::Rectangular(g.clone()) });
        scene.buildings.push(Building { id: 2, model: BuildingModel::Rectangular(f.clone()) });
        let (mask, hgt) = rasterize_scene(&scene, &t, 48, 48);
        for r in 0..48 {
            for c in 0..48 {
                let p = t.pixel_center(c, r);
                let want = match (roof_height(&g, p), roof_height(&f, p)) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                };
                match want {
                    Some(z) => {
                        assert_eq!(mask.get(c, r, 0), 1);
                        assert_eq!(hgt.get(c, r, 0), z);
                    }
                    None => assert_eq!(mask.get(c, r, 0), 0),
                }
            }
        }
    }

    #[test]
    fn mesh_height_interpolates() {
        let mesh = Mesh {
            vertices: vec![
                [0.0, 0.0, 4.0],
                [2.0, 0.0, 4.0],
                [2.0, 2.0, 8.0],
                [0.0, 2.0, 8.0],
            ],
            faces: vec![[0, 1, 2], [0, 2, 3]],
        };
        let z = mesh_height_at(&mesh, Point::new(1.0, 1.0)).unwrap();
        assert!((z - 6.0).abs() < 1e-12);
        assert_eq!(mesh_height_at(&mesh, Point::new(3.0, 1.0)), None);
    }

    fn two_building_scene() -> SceneModel {
        use std::f64::consts::TAU;
        let t = GeoTransform::new(100.0, 200.0, 0.5, -0.5);
        let mut scene = SceneModel::new(t);
        scene.provenance =
            Provenance { config_json: "{}".into(), inputs: vec![("dsm".into(), input_digest(b"x"))] };
        let m = model(RoofType::Hip, rect(110.0, 190.0, 14.0, 9.0, 40.0), 9.5, 7.0, 3.5, 4.5);
        scene.buildings.push(Building { id: 3, model: BuildingModel::Rectangular(m) });
        let c = CircleModel {
            center: Point::new(130.0, 180.0),
            radius: 5.0,
            inner_radius: Some(2.0),
            arc: (0.0, TAU),
            roof_type: CircularRoofType::Flat,
            params: CircularRoofParams::Flat { z_roof: 7.5 },
            terrain_z: 2.0,
            fit_residual: 0.1,
        };
        scene.buildings.push(Building { id: 7, model: BuildingModel::Circular(c) });
        scene
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.obj");

        let empty = SceneModel::new(GeoTransform::new(0.0, 0.0, 1.0, -1.0));
        export_obj(&empty, &path, 16).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with('#'));
        assert!(!text.contains("\nv ") && !text.contains("\nf "));

        let scene = two_building_scene();
        export_obj(&scene, &path, 16).unwrap();
        let groups = import_obj(&path).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0, "building_3");
        for (b, (_, back)) in scene.buildings.iter().zip(&groups) {
            let mesh = building_mesh(b, 16);
            assert_eq!(mesh.faces, back.faces);
            assert_eq!(mesh.vertices.len(), back.vertices.len());
            for (v, w) in mesh.vertices.iter().zip(&back.vertices) {
                for k in 0..3 {
                    assert!((v[k] - w[k]).abs() <= 5e-5 + 1e-12, "{v:?} vs {w:?}");
                }
            }
        }
    }

    #[test]
    fn catalog_round_trip_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.json");
        let mut scene = two_building_scene();
        scene.buildings.push(Building {
            id: 9,
            model: BuildingModel::Irregular(Mesh {
                vertices: vec![[0.0, 0.0, 3.0], [1.0, 0.0, 3.0], [0.0, 1.0, 3.0]],
                faces: vec![[0, 1, 2]],
            }),
        });
        export_catalog(&scene, &path).unwrap();
        let back = load_catalog(&path).unwrap();
        assert_eq!(back, scene);
        // re-export is byte-identical
        let first = std::fs::read(&path).unwrap();
        export_catalog(&back, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);

        let text = String::from_utf8(first).unwrap();
        assert!(text.contains("\"schema\": \"lod2-catalog/1\""));
        assert!(text.contains("inner_radius"));
        let bad = text.replace("lod2-catalog/1", "lod2-catalog/9");
        std::fs::write(&path, bad).unwrap();
        assert!(load_catalog(&path).is_err());
    }

    #[test]
    fn flat_catalog_record_has_equal_ridge_and_eave() {
        let m = model(RoofType::Flat, rect(0.0, 0.0, 10.0, 6.0, 0.0), 8.0, 8.0, 0.0, 0.0);
        let mut scene = SceneModel::new(GeoTransform::new(0.0, 0.0, 1.0, -1.0));
        scene.buildings.push(Building { id: 1, model: BuildingModel::Rectangular(m) });
        let text = catalog_json(&scene).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let b = &v["buildings"][0];
        assert_eq!(b["z_ridge"], b["z_eave"]);
        assert_eq!(b["kind"], "rectangular");
    }

    #[test]
    fn merged_footprint_mesh_is_watertight() {
        // L-shaped footprint
        let mut m = model(RoofType::Flat, rect(0.0, 0.0, 12.0, 8.0, 0.0), 8.0, 8.0, 0.0, 0.0);
        m.footprint = Some(vec![
            Point::new(-6.0, -4.0),
            Point::new(6.0, -4.0),
            Point::new(6.0, 0.0),
            Point::new(0.0, 0.0),
            Point::new(0.0, 4.0),
            Point::new(-6.0, 4.0),
        ]);
        let mesh = rectangular_to_mesh(&m);
        assert_watertight(&mesh);
        // 4 roof + 12 wall + 4 floor triangles
        assert_eq!(mesh.faces.len(), 20);
        let z = mesh_height_at(&mesh, Point::new(-3.0, 2.0)).unwrap();
        assert!((z - 8.0).abs() < 1e-9);
    }
}
