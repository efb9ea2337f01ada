//! End-to-end reconstruction: segmentation, polygonization, circular
//! detection, rectangle decomposition, graph-cut refinement, roof fitting
//! and scene assembly, with per-stage toggles.

use std::path::Path;

use crate::circular::detect_circle;
use crate::config::Config;
use crate::decompose::{
    decompose_pyramid, merge_rects, rect_features, refine_pixel_rect, PixelRect, Rect,
};
use crate::error::{Error, Result};
use crate::geom::fold180;
use crate::grid::{rotate_resample, Grid, Sampling};
use crate::labeling::{
    apply_orientation_labels, build_graph, build_orientation_problem, osm_align, solve_multilabel,
};
use crate::polygonize::{detect_lines, extract_polygon};
use crate::raster_io::RoadNetwork;
use crate::rooffit::{
    fit_model, irregular_fallback, merge_models, type_consistency, RoofModel,
};
use crate::scene::{rasterize_scene, Building, BuildingModel, SceneModel, HEIGHT_NODATA};
use crate::segmentation::{
    connected_components, fuse_segmentations, watershed_instances, InstanceMap, CLASS_BACKGROUND,
};

/// Building mask input: a binary mask or a {background, building,
/// separation line} class map.
#[derive(Debug, Clone)]
pub enum MaskInput {
    Binary(Grid<u8>),
    ThreeClass(Grid<u32>),
}

#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub dsm: Grid<f64>,
    pub ortho: Grid<u8>,
    pub mask: MaskInput,
    /// Secondary instance detections for segmentation fusion.
    pub detections: Option<InstanceMap>,
    pub roads: Option<RoadNetwork>,
}

/// Stage switches; the refinement combinations reproduce the
/// no-refinement / OSM / GC / OSM+GC ablations.
#[derive(Debug, Clone, Copy)]
pub struct StageToggles {
    pub fuse: bool,
    pub watershed: bool,
    pub gc_orientation: bool,
    pub osm: bool,
    pub gc_type: bool,
    pub merge: bool,
    pub circular: bool,
    pub irregular: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            fuse: false,
            watershed: false,
            gc_orientation: true,
            osm: false,
            gc_type: true,
            merge: true,
            circular: true,
            irregular: true,
        }
    }
}

/// Everything the run produced besides the scene itself.
#[derive(Debug, Clone)]
pub struct Intermediates {
    pub fused_mask: Option<Grid<u8>>,
    pub instances: InstanceMap,
    pub pred_mask: Grid<u8>,
    pub pred_height: Grid<f64>,
}

/// Instances too small to carry a building model, pixels.
const MIN_INSTANCE_PX: usize = 20;
/// Outer crop margin around an instance, pixels; covers the terrain ring
/// and merge dilation lookups.
const CROP_MARGIN_PX: usize = 24;

fn stage<T>(r: Result<T>, name: &str, building: u32) -> Result<T> {
    r.map_err(|e| e.in_stage(name, building))
}

pub fn reconstruct(
    inputs: &PipelineInputs,
    toggles: &StageToggles,
    cfg: &Config,
) -> Result<(SceneModel, Intermediates)> {
    cfg.validate()?;
    let dsm = &inputs.dsm;
    let ortho = &inputs.ortho;
    let mask_grid = match &inputs.mask {
        MaskInput::Binary(m) => {
            if !dsm.same_shape(m) {
                return Err(Error::TransformMismatch("dsm and mask differ".into()));
            }
            m.clone()
        }
        MaskInput::ThreeClass(tc) => {
            if !dsm.same_shape(tc) {
                return Err(Error::TransformMismatch("dsm and class map differ".into()));
            }
            let mut m = Grid::filled(tc.width, tc.height, 1, 0u8, tc.transform.clone());
            for i in 0..tc.width * tc.height {
                m.data[i] = (tc.data[i] != CLASS_BACKGROUND) as u8;
            }
            m
        }
    };
    if !dsm.same_shape(ortho) {
        return Err(Error::TransformMismatch("dsm and ortho differ".into()));
    }
    if toggles.osm && inputs.roads.is_none() {
        return Err(Error::Config("osm stage enabled but no road network given".into()));
    }
    if toggles.fuse && inputs.detections.is_none() {
        return Err(Error::Config("fuse stage enabled but no detections given".into()));
    }
    if toggles.watershed && !matches!(inputs.mask, MaskInput::ThreeClass(_)) {
        return Err(Error::Config("watershed stage needs a three-class map".into()));
    }

    let fused = if toggles.fuse {
        Some(fuse_segmentations(&mask_grid, inputs.detections.as_ref().unwrap(), cfg)?)
    } else {
        None
    };
    let working_mask = fused.as_ref().unwrap_or(&mask_grid);
    let instances = if toggles.watershed {
        match &inputs.mask {
            MaskInput::ThreeClass(tc) => watershed_instances(tc),
            MaskInput::Binary(_) => unreachable!("checked above"),
        }
    } else {
        connected_components(working_mask)
    };

    let image_lines = detect_lines(ortho);

    let mut circles: Vec<(u32, BuildingModel)> = Vec::new();
    let mut rects: Vec<Rect> = Vec::new();
    // (instance id, residual mask crop, dsm crop) kept for the fallback
    let mut crops: Vec<(u32, Grid<u8>, Grid<f64>)> = Vec::new();
    for id in 1..=instances.count {
        if instances.area(id) < MIN_INSTANCE_PX {
            continue;
        }
        let Some((c0, r0, c1, r1)) = instances.bbox(id) else {
            continue;
        };
        let c0 = c0.saturating_sub(CROP_MARGIN_PX);
        let r0 = r0.saturating_sub(CROP_MARGIN_PX);
        let c1 = (c1 + CROP_MARGIN_PX + 1).min(dsm.width);
        let r1 = (r1 + CROP_MARGIN_PX + 1).min(dsm.height);
        let (w, h) = (c1 - c0, r1 - r0);
        let full = instances.mask_of(id);
        let mut crop_mask = full.crop(c0, r0, w, h);
        let crop_dsm = dsm.crop(c0, r0, w, h);
        let crop_ortho = ortho.crop(c0, r0, w, h);

        if toggles.circular {
            let circle = stage(detect_circle(&crop_mask, &crop_dsm, cfg), "circular", id)?;
            if let Some(c) = circle {
                let ps = crop_mask.transform.pixel_size_x;
                for r in 0..crop_mask.height {
                    for col in 0..crop_mask.width {
                        let p = crop_mask.transform.pixel_center(col, r);
                        let d = p.dist(c.center);
                        let inside = d <= c.radius + ps
                            && c.inner_radius.map_or(true, |ri| d >= ri - ps)
                            && c.arc_contains(
                                (p.y - c.center.y).atan2(p.x - c.center.x),
                            );
                        if inside {
                            crop_mask.set(col, r, 0, 0);
                        }
                    }
                }
                circles.push((id, BuildingModel::Circular(c)));
            }
        }
        if crop_mask.data.iter().filter(|&&v| v != 0).count() >= MIN_INSTANCE_PX {
            let comps = connected_components(&crop_mask);
            let mut inst_rects: Vec<Rect> = Vec::new();
            for cid in 1..=comps.count {
                if comps.area(cid) < MIN_INSTANCE_PX {
                    continue;
                }
                let poly = stage(
                    extract_polygon(&comps, cid, &image_lines, cfg),
                    "polygonize",
                    id,
                )?;
                let part = stage(
                    decompose_pyramid(&poly, &crop_dsm, &crop_ortho, cfg),
                    "decompose",
                    id,
                )?;
                inst_rects.extend(part);
            }
            let mut inst_rects = stage(
                merge_rects(&inst_rects, &crop_dsm, &crop_ortho, cfg),
                "decompose",
                id,
            )?;
            for r in &mut inst_rects {
                r.parent_instance = id;
            }
            rects.extend(inst_rects);
        }
        crops.push((id, crop_mask, crop_dsm));
    }

    let graph = build_graph(&rects, cfg);
    if toggles.gc_orientation && !rects.is_empty() {
        let p = build_orientation_problem(&rects, &graph, cfg);
        let labels = solve_multilabel(&p);
        rects = apply_orientation_labels(&rects, &labels, cfg);
    }
    if toggles.osm {
        rects = osm_align(&rects, inputs.roads.as_ref().unwrap(), cfg);
    }
    resnap_rect_geometry(&mut rects, &crops, dsm, ortho);

    // a snapped rectangle can still overhang the mask by half a pixel per
    // edge, and those pixel centers hold terrain heights; blank everything
    // outside the mask so the fits only ever see roof samples
    let mut fit_dsm = dsm.clone();
    let nodata = fit_dsm.nodata.unwrap_or(HEIGHT_NODATA);
    fit_dsm.nodata = Some(nodata);
    for (z, &m) in fit_dsm.data.iter_mut().zip(&working_mask.data) {
        if m == 0 {
            *z = nodata;
        }
    }

    let mut models: Vec<RoofModel> = Vec::with_capacity(rects.len());
    for r in &rects {
        let mut m = stage(fit_model(r, &fit_dsm), "fit", r.parent_instance)?;
        // the masked grid has no ground left, so take terrain from the raw DSM
        if let Some(t) = crate::rooffit::terrain_height(r, dsm) {
            m.terrain_z = t;
        }
        models.push(m);
    }
    if toggles.gc_type && !models.is_empty() {
        models = stage(type_consistency(&models, &graph, &fit_dsm, cfg), "gc_type", 0)?;
    }
    if toggles.merge {
        models = merge_within_instances(models, &fit_dsm, cfg)?;
    }

    // assemble in instance order, circles first within an instance
    let mut scene = SceneModel::new(dsm.transform.clone());
    scene.provenance.config_json = serde_json::to_string(cfg)?;
    let mut next_id = 0u32;
    for (inst, crop_mask, crop_dsm) in &crops {
        let mut entries: Vec<BuildingModel> = circles
            .iter()
            .filter(|(i, _)| i == inst)
            .map(|(_, m)| m.clone())
            .collect();
        let inst_models: Vec<RoofModel> = models
            .iter()
            .filter(|m| m.rect.parent_instance == *inst)
            .cloned()
            .collect();
        let mut replaced = false;
        if toggles.irregular && !inst_models.is_empty() {
            let inst_rects: Vec<Rect> = inst_models.iter().map(|m| m.rect.clone()).collect();
            if let Some(mesh) = irregular_fallback(crop_mask, &inst_rects, crop_dsm, cfg) {
                entries.push(BuildingModel::Irregular(mesh));
                replaced = true;
            }
        }
        if !replaced {
            entries.extend(inst_models.into_iter().map(BuildingModel::Rectangular));
        }
        for model in entries {
            next_id += 1;
            scene.buildings.push(Building { id: next_id, model });
        }
    }

    let (pred_mask, pred_height) = rasterize_scene(&scene, &dsm.transform, dsm.width, dsm.height);
    Ok((
        scene,
        Intermediates { fused_mask: fused, instances, pred_mask, pred_height },
    ))
}

/// Re-derive every rectangle's extents against the full-resolution instance
/// mask in its final frame. Orientation refinement only relabels the angle,
/// and the coarse pyramid peel quantizes the edges; this snap moves them
/// back onto the mask boundary. Rectangles are processed largest first and
/// never grow over pixels an earlier one claimed.
fn resnap_rect_geometry(
    rects: &mut [Rect],
    crops: &[(u32, Grid<u8>, Grid<f64>)],
    dsm: &Grid<f64>,
    ortho: &Grid<u8>,
) {
    for (inst, crop_mask, _) in crops {
        let mut idxs: Vec<usize> =
            (0..rects.len()).filter(|&i| rects[i].parent_instance == *inst).collect();
        idxs.sort_by(|&a, &b| rects[b].area().total_cmp(&rects[a].area()).then(a.cmp(&b)));
        let mut done: Vec<Rect> = Vec::new();
        for &i in &idxs {
            let theta = rects[i].orientation;
            let pivot = rects[i].center;
            let Ok(rot) = rotate_resample(crop_mask, -theta, pivot, Sampling::Nearest) else {
                continue;
            };
            let ps = rot.transform.pixel_size_x;
            let (cc, rr) = rot.transform.world_to_pixel(pivot);
            let half_l = rects[i].length / ps / 2.0;
            let half_w = rects[i].width / ps / 2.0;
            let c0 = (cc - half_l).round().max(0.0) as usize;
            let r0 = (rr - half_w).round().max(0.0) as usize;
            let c1 = ((cc + half_l).round().max(0.0) as usize).min(rot.width);
            let r1 = ((rr + half_w).round().max(0.0) as usize).min(rot.height);
            if c1 <= c0 || r1 <= r0 {
                continue;
            }
            let mut fr = PixelRect { c0, r0, w: c1 - c0, h: r1 - r0 };
            let mut occupied = Grid::filled(rot.width, rot.height, 1, 0u8, rot.transform.clone());
            if !done.is_empty() {
                let rad = theta.to_radians();
                for r in 0..rot.height {
                    for c in 0..rot.width {
                        let p = rot.transform.pixel_center(c, r).rotate_around(pivot, rad);
                        if done.iter().any(|d| d.contains_world(p)) {
                            occupied.set(c, r, 0, 1);
                        }
                    }
                }
            }
            refine_pixel_rect(&mut fr, &rot, &occupied, &[-1, 1, -2, 2, -4, 4], 16);
            if fr.area() == 0 {
                continue;
            }
            let (el, er, et, eb) = subpixel_edges(&rot, &occupied, &fr);
            let (w_sub, h_sub) = (er - el, eb - et);
            if w_sub < 2.0 || h_sub < 2.0 {
                continue;
            }
            let center_rot =
                rot.transform.pixel_to_world((el + er) / 2.0, (et + eb) / 2.0);
            rects[i].center = center_rot.rotate_around(pivot, theta.to_radians());
            let (l_px, w_px, orientation) = if w_sub >= h_sub {
                (w_sub, h_sub, fold180(theta))
            } else {
                (h_sub, w_sub, fold180(theta + 90.0))
            };
            rects[i].length = l_px * ps;
            rects[i].width = w_px * ps;
            rects[i].orientation = orientation;
            rect_features(&mut rects[i], dsm, ortho);
            done.push(rects[i].clone());
        }
    }
}

/// Sub-pixel edge positions for an integer rectangle against a mask in its
/// own frame: each edge moves to where the accumulated coverage of the
/// nearby columns (rows) crosses the boundary, averaging out the staircase
/// left by rasterization. Returns (left, right, top, bottom) in pixel
/// coordinates.
fn subpixel_edges(mask: &Grid<u8>, occupied: &Grid<u8>, fr: &PixelRect) -> (f64, f64, f64, f64) {
    let on = |c: usize, r: usize| (mask.get(c, r, 0) != 0 && occupied.get(c, r, 0) == 0) as u32;
    let col_cov = |c: usize, r_lo: usize, r_hi: usize| -> f64 {
        (r_lo..r_hi).map(|r| on(c, r)).sum::<u32>() as f64 / (r_hi - r_lo) as f64
    };
    let row_cov = |r: usize, c_lo: usize, c_hi: usize| -> f64 {
        (c_lo..c_hi).map(|c| on(c, r)).sum::<u32>() as f64 / (c_hi - c_lo) as f64
    };
    // interior span perpendicular to the edge, so corners do not bleed in
    let (ri_lo, ri_hi) = (fr.r0 + 1, (fr.r0 + fr.h - 1).max(fr.r0 + 1));
    let (ci_lo, ci_hi) = (fr.c0 + 1, (fr.c0 + fr.w - 1).max(fr.c0 + 1));
    const WIN: usize = 2;
    let left = {
        let a = fr.c0.saturating_sub(WIN);
        let b = (fr.c0 + WIN).min(mask.width);
        b as f64 - (a..b).map(|c| col_cov(c, ri_lo, ri_hi)).sum::<f64>()
    };
    let right = {
        let a = (fr.c0 + fr.w).saturating_sub(WIN);
        let b = (fr.c0 + fr.w + WIN).min(mask.width);
        a as f64 + (a..b).map(|c| col_cov(c, ri_lo, ri_hi)).sum::<f64>()
    };
    let top = {
        let a = fr.r0.saturating_sub(WIN);
        let b = (fr.r0 + WIN).min(mask.height);
        b as f64 - (a..b).map(|r| row_cov(r, ci_lo, ci_hi)).sum::<f64>()
    };
    let bottom = {
        let a = (fr.r0 + fr.h).saturating_sub(WIN);
        let b = (fr.r0 + fr.h + WIN).min(mask.height);
        a as f64 + (a..b).map(|r| row_cov(r, ci_lo, ci_hi)).sum::<f64>()
    };
    (left, right, top, bottom)
}

/// Greedy model-level merging within each source instance: repeatedly
/// merge the largest mergeable pair until no pair qualifies.
fn merge_within_instances(
    mut models: Vec<RoofModel>,
    dsm: &Grid<f64>,
    cfg: &Config,
) -> Result<Vec<RoofModel>> {
    loop {
        let mut best: Option<(f64, usize, usize, RoofModel)> = None;
        for i in 0..models.len() {
            for j in i + 1..models.len() {
                if models[i].rect.parent_instance != models[j].rect.parent_instance {
                    continue;
                }
                // already-merged rectilinear footprints stay as they are
                if models[i].footprint.is_some() || models[j].footprint.is_some() {
                    continue;
                }
                let inst = models[i].rect.parent_instance;
                let merged = stage(merge_models(&models[i], &models[j], dsm, cfg), "merge", inst)?;
                if let Some(m) = merged {
                    let area = models[i].rect.area() + models[j].rect.area();
                    if best.as_ref().map_or(true, |(ba, ..)| area > *ba) {
                        best = Some((area, i, j, m));
                    }
                }
            }
        }
        let Some((_, i, j, m)) = best else {
            return Ok(models);
        };
        models.remove(j);
        models.remove(i);
        models.push(m);
    }
}

/// Run the pipeline and write artifacts into `dir`: model.obj and
/// catalog.json always; fused_mask.pgm, instances.asc, pred_mask.pgm and
/// pred_height.asc unless `no_intermediate`.
pub fn reconstruct_to_dir(
    inputs: &PipelineInputs,
    toggles: &StageToggles,
    cfg: &Config,
    dir: &Path,
    no_intermediate: bool,
) -> Result<(SceneModel, Intermediates)> {
    let (scene, inter) = reconstruct(inputs, toggles, cfg)?;
    write_artifacts(&scene, &inter, dir, no_intermediate)?;
    Ok((scene, inter))
}

pub fn write_artifacts(
    scene: &SceneModel,
    inter: &Intermediates,
    dir: &Path,
    no_intermediate: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::scene::export_obj(scene, &dir.join("model.obj"), 64)?;
    crate::scene::export_catalog(scene, &dir.join("catalog.json"))?;
    if !no_intermediate {
        if let Some(f) = &inter.fused_mask {
            crate::raster_io::write_pgm(f, &dir.join("fused_mask.pgm"))?;
        }
        crate::raster_io::write_ascii_grid(
            &crate::raster_io::grid_to_f64(&inter.instances.grid),
            &dir.join("instances.asc"),
        )?;
        crate::raster_io::write_pgm(&inter.pred_mask, &dir.join("pred_mask.pgm"))?;
        crate::raster_io::write_ascii_grid(&inter.pred_height, &dir.join("pred_height.asc"))?;
    }
    Ok(())
}
