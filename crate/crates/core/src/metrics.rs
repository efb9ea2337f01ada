//! 2D/3D intersection-over-union evaluation against reference mask and
//! height rasters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scene::{building_height_at, rasterize_scene, SceneModel};

/// Pixel confusion counts for one prediction/reference pair. `tp3` are the
/// true positives whose height error is within tolerance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tp3: u64,
}

fn check_aligned(a: &Grid<impl crate::grid::Cell>, b: &Grid<impl crate::grid::Cell>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::TransformMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// 2D counts only; `tp3` mirrors `tp`. Reference nodata pixels (mask value
/// equal to the mask's nodata) are excluded entirely.
pub fn confusion2(pred: &Grid<u8>, reference: &Grid<u8>) -> Result<ConfusionCounts> {
    check_aligned(pred, reference)?;
    let mut c = ConfusionCounts::default();
    for i in 0..pred.width * pred.height {
        let rv = reference.data[i * reference.bands];
        if reference.is_nodata(rv) {
            continue;
        }
        let p = pred.data[i * pred.bands] != 0;
        let r = rv != 0;
        match (p, r) {
            (true, true) => {
                c.tp += 1;
                c.tp3 += 1;
            }
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// Eq. for IOU2: TP / (TP + FP + FN); empty against empty is 1.
pub fn iou2(pred: &Grid<u8>, reference: &Grid<u8>) -> Result<f64> {
    let c = confusion2(pred, reference)?;
    Ok(iou_from(c.tp, c.fp, c.fn_))
}

fn iou_from(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        tp as f64 / denom as f64
    }
}

fn iou3_from(c: &ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp3 as f64 / denom as f64
    }
}

/// 2D + 3D counts: a true positive also counts toward `tp3` when
/// |pred_height - ref_height| <= tol_m. True positives over reference
/// height nodata are dropped from both tallies.
pub fn confusion3(
    pred_mask: &Grid<u8>,
    pred_height: &Grid<f64>,
    ref_mask: &Grid<u8>,
    ref_height: &Grid<f64>,
    tol_m: f64,
) -> Result<ConfusionCounts> {
    check_aligned(pred_mask, ref_mask)?;
    check_aligned(pred_mask, pred_height)?;
    check_aligned(pred_mask, ref_height)?;
    let mut c = ConfusionCounts::default();
    for i in 0..pred_mask.width * pred_mask.height {
        let rv = ref_mask.data[i * ref_mask.bands];
        if ref_mask.is_nodata(rv) {
            continue;
        }
        let p = pred_mask.data[i * pred_mask.bands] != 0;
        let r = rv != 0;
        match (p, r) {
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
            (true, true) => {
                let rz = ref_height.data[i * ref_height.bands];
                if ref_height.is_nodata(rz) {
                    continue;
                }
                c.tp += 1;
                let pz = pred_height.data[i * pred_height.bands];
                if (pz - rz).abs() <= tol_m {
                    c.tp3 += 1;
                }
            }
        }
    }
    Ok(c)
}

/// Eq. for IOU3: TP_3D / (TP + FP + FN) with the 2 m default height
/// tolerance, so true positives failing the height test count as errors;
/// empty against empty is 1.
pub fn iou3(
    pred_mask: &Grid<u8>,
    pred_height: &Grid<f64>,
    ref_mask: &Grid<u8>,
    ref_height: &Grid<f64>,
    tol_m: f64,
) -> Result<f64> {
    let c = confusion3(pred_mask, pred_height, ref_mask, ref_height, tol_m)?;
    Ok(iou3_from(&c))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildingEval {
    pub id: u32,
    pub iou2: f64,
    pub iou3: f64,
    /// Height RMSE over the building's true-positive pixels, meters.
    pub rmse_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene_iou2: f64,
    pub scene_iou3: f64,
    pub scene_rmse_m: f64,
    pub buildings: Vec<BuildingEval>,
}

/// Rasterize the scene onto the reference grid and score it, whole-scene
/// and per building. Per-building scores compare each building's own
/// rasterization against the reference restricted to its bounding pixels.
pub fn evaluate(
    scene: &SceneModel,
    ref_mask: &Grid<u8>,
    ref_height: &Grid<f64>,
    tol_m: f64,
) -> Result<EvalReport> {
    check_aligned(ref_mask, ref_height)?;
    let t = &ref_mask.transform;
    let (pm, ph) = rasterize_scene(scene, t, ref_mask.width, ref_mask.height);
    let scene_iou2 = iou2(&pm, ref_mask)?;
    let scene_iou3 = iou3(&pm, &ph, ref_mask, ref_height, tol_m)?;
    let scene_rmse_m = rmse_over_tp(&pm, &ph, ref_mask, ref_height);
    let mut buildings = Vec::new();
    for b in &scene.buildings {
        let mut c = ConfusionCounts::default();
        let mut sq = 0.0;
        let mut nsq = 0u64;
        for r in 0..ref_mask.height {
            for c_ in 0..ref_mask.width {
                let rv = ref_mask.get(c_, r, 0);
                if ref_mask.is_nodata(rv) {
                    continue;
                }
                let p = t.pixel_center(c_, r);
                let pz = building_height_at(&b.model, p);
                let rm = rv != 0;
                match (pz, rm) {
                    (Some(_), false) => c.fp += 1,
                    (None, true) => {
                        // only count misses near this building: reference
                        // pixels claimed by no prediction at all
                        if pm.get(c_, r, 0) == 0 && near_building(&b.model, p) {
                            c.fn_ += 1;
                        }
                    }
                    (None, false) => {}
                    (Some(z), true) => {
                        let rz = ref_height.get(c_, r, 0);
                        if ref_height.is_nodata(rz) {
                            continue;
                        }
                        c.tp += 1;
                        sq += (z - rz).powi(2);
                        nsq += 1;
                        if (z - rz).abs() <= tol_m {
                            c.tp3 += 1;
                        }
                    }
                }
            }
        }
        buildings.push(BuildingEval {
            id: b.id,
            iou2: iou_from(c.tp, c.fp, c.fn_),
            iou3: iou3_from(&c),
            rmse_m: if nsq == 0 { 0.0 } else { (sq / nsq as f64).sqrt() },
        });
    }
    Ok(EvalReport { scene_iou2, scene_iou3, scene_rmse_m, buildings })
}

fn near_building(model: &crate::scene::BuildingModel, p: crate::Point) -> bool {
    use crate::scene::BuildingModel;
    let margin = 3.0;
    match model {
        BuildingModel::Rectangular(m) => {
            let (u, v) = m.rect.world_to_local(p);
            u.abs() <= m.rect.length / 2.0 + margin && v.abs() <= m.rect.width / 2.0 + margin
        }
        BuildingModel::Circular(c) => p.dist(c.center) <= c.radius + margin,
        BuildingModel::Irregular(mesh) => mesh.vertices.iter().any(|v| {
            (v[0] - p.x).abs() <= margin && (v[1] - p.y).abs() <= margin
        }),
    }
}

fn rmse_over_tp(
    pred_mask: &Grid<u8>,
    pred_height: &Grid<f64>,
    ref_mask: &Grid<u8>,
    ref_height: &Grid<f64>,
) -> f64 {
    let mut sq = 0.0;
    let mut n = 0u64;
    for i in 0..pred_mask.width * pred_mask.height {
        let rv = ref_mask.data[i];
        if ref_mask.is_nodata(rv) || rv == 0 || pred_mask.data[i] == 0 {
            continue;
        }
        let rz = ref_height.data[i];
        if ref_height.is_nodata(rz) {
            continue;
        }
        sq += (pred_height.data[i] - rz).powi(2);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sq / n as f64).sqrt()
    }
}

pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("id,iou2,iou3,rmse_m\n");
    for b in &report.buildings {
        writeln!(out, "{},{:.6},{:.6},{:.6}", b.id, b.iou2, b.iou3, b.rmse_m).unwrap();
    }
    writeln!(
        out,
        "scene,{:.6},{:.6},{:.6}",
        report.scene_iou2, report.scene_iou3, report.scene_rmse_m
    )
    .unwrap();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GeoTransform;
    use rand::{Rng, SeedableRng};

    fn t() -> GeoTransform {
        GeoTransform::new(0.0, 0.0, 1.0, -1.0)
    }

    fn mask_from(bits: &[(usize, usize)], w: usize, h: usize) -> Grid<u8> {
        let mut g = Grid::filled(w, h, 1, 0u8, t());
        for &(c, r) in bits {
            g.set(c, r, 0, 1);
        }
        g
    }

    #[test]
    fn iou2_basic_cases() {
        let a = mask_from(&[(1, 1), (2, 1)], 8, 8);
        let empty = Grid::filled(8, 8, 1, 0u8, t());
        assert_eq!(iou2(&a, &a).unwrap(), 1.0);
        assert_eq!(iou2(&a, &empty).unwrap(), 0.0);
        assert_eq!(iou2(&empty, &empty).unwrap(), 1.0);
        let b = mask_from(&[(2, 1), (3, 1)], 8, 8);
        assert!((iou2(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou2_fifty_overlap_of_hundred() {
        let mut a = Grid::filled(20, 20, 1, 0u8, t());
        let mut b = Grid::filled(20, 20, 1, 0u8, t());
        // |A| = |B| = 100, overlap 50
        for r in 0..10 {
            for c in 0..10 {
                a.set(c, r, 0, 1);
                b.set(c + 5, r, 0, 1);
            }
        }
        assert!((iou2(&a, &b).unwrap() - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn iou2_symmetry_and_mismatch_error() {
        let a = mask_from(&[(0, 0), (1, 0), (2, 2)], 8, 8);
        let b = mask_from(&[(1, 0), (3, 3)], 8, 8);
        assert_eq!(iou2(&a, &b).unwrap(), iou2(&b, &a).unwrap());
        let other = Grid::filled(9, 8, 1, 0u8, t());
        assert!(matches!(iou2(&a, &other), Err(Error::TransformMismatch(_))));
    }

    fn heights(v: f64, w: usize, h: usize) -> Grid<f64> {
        Grid::filled(w, h, 1, v, t())
    }

    #[test]
    fn iou3_height_tolerance() {
        let m = mask_from(&[(0, 0), (1, 0), (2, 0), (3, 0)], 8, 8);
        let rh = heights(10.0, 8, 8);
        assert_eq!(iou3(&m, &heights(10.5, 8, 8), &m, &rh, 2.0).unwrap(), 1.0);
        assert_eq!(iou3(&m, &heights(13.0, 8, 8), &m, &rh, 2.0).unwrap(), 0.0);
        // half the TP pixels offset by 3 m
        let mut ph = heights(10.0, 8, 8);
        ph.set(0, 0, 0, 13.0);
        ph.set(1, 0, 0, 13.0);
        assert_eq!(iou3(&m, &ph, &m, &rh, 2.0).unwrap(), 0.5);
    }

    #[test]
    fn ref_nodata_excluded() {
        let mut rm = mask_from(&[(0, 0), (1, 0)], 4, 4);
        rm.nodata = Some(255);
        rm.set(2, 0, 0, 255);
        let pm = mask_from(&[(0, 0), (1, 0), (2, 0)], 4, 4);
        // pixel (2,0) is a reference void: not an FP
        assert_eq!(iou2(&pm, &rm).unwrap(), 1.0);

        let mut rh = heights(10.0, 4, 4);
        rh.nodata = Some(-9999.0);
        rh.set(1, 0, 0, -9999.0);
        let c = confusion3(&pm, &heights(10.0, 4, 4), &rm, &rh, 2.0).unwrap();
        assert_eq!((c.tp, c.tp3, c.fp, c.fn_), (1, 1, 0, 0));
    }

    /// Naive per-pixel oracle with explicit branching.
    fn oracle(
        pm: &Grid<u8>,
        ph: &Grid<f64>,
        rm: &Grid<u8>,
        rh: &Grid<f64>,
        tol: f64,
    ) -> (f64, f64) {
        let (mut tp, mut tp3, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for r in 0..pm.height {
            for c in 0..pm.width {
                let rv = rm.get(c, r, 0);
                if rm.is_nodata(rv) {
                    continue;
                }
                let p = pm.get(c, r, 0) != 0;
                let t = rv != 0;
                if p && t {
                    let rz = rh.get(c, r, 0);
                    if rh.is_nodata(rz) {
                        continue;
                    }
                    tp += 1;
                    if (ph.get(c, r, 0) - rz).abs() <= tol {
                        tp3 += 1;
                    }
                } else if p {
                    fp += 1;
                } else if t {
                    fn_ += 1;
                }
            }
        }
        let i2 = if tp + fp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fp + fn_) as f64 };
        let i3 = if tp + fp + fn_ == 0 { 1.0 } else { tp3 as f64 / (tp + fp + fn_) as f64 };
        (i2, i3)
    }

    #[test]
    fn matches_pixel_loop_oracle_and_infinite_tol() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let mut pm = Grid::filled(64, 64, 1, 0u8, t());
            let mut rm = Grid::filled(64, 64, 1, 0u8, t());
            let mut ph = Grid::filled(64, 64, 1, 0.0f64, t());
            let mut rh = Grid::filled(64, 64, 1, 0.0f64, t());
            rm.nodata = Some(255);
            rh.nodata = Some(-1.0);
            for i in 0..64 * 64 {
                pm.data[i] = rng.gen_bool(0.4) as u8;
                rm.data[i] = if rng.gen_bool(0.02) { 255 } else { rng.gen_bool(0.4) as u8 };
                ph.data[i] = rng.gen_range(0.0..20.0);
                rh.data[i] = if rng.gen_bool(0.02) { -1.0 } else { rng.gen_range(0.0..20.0) };
            }
            let (o2, o3) = oracle(&pm, &ph, &rm, &rh, 2.0);
            // confusion2 differs from the 3D path: it keeps TP pixels over
            // height voids, so compare iou2 on a void-free reference too
            assert_eq!(iou3(&pm, &ph, &rm, &rh, 2.0).unwrap(), o3);
            let mut rh2 = rh.clone();
            rh2.nodata = None;
            let (o2f, _) = oracle(&pm, &ph, &rm, &rh2, 2.0);
            assert_eq!(iou2(&pm, &rm).unwrap(), o2f);
            assert_eq!(iou3(&pm, &ph, &rm, &rh2, f64::INFINITY).unwrap(), o2f);
            let _ = o2;
        }
    }

    #[test]
    fn evaluate_self_is_perfect() {
        use crate::decompose::Rect;
        use crate::rooffit::{RoofModel, RoofType};
        use crate::scene::{Building, BuildingModel, SceneModel};
        let tr = t();
        let mut scene = SceneModel::new(tr.clone());
        let m = RoofModel {
            roof_type: RoofType::Gable,
            rect: Rect {
                center: crate::Point::new(16.0, -16.0),
                length: 14.0,
                width: 9.0,
                orientation: 20.0,
                mean_color: [0.0; 3],
                color_std: [0.0; 3],
                mean_height: 8.0,
                parent_instance: 1,
            },
            footprint: None,
            z_ridge: 9.0,
            z_eave: 7.0,
            hipl: 0.0,
            hipw: 4.5,
            terrain_z: 2.0,
            fit_rmse: 0.0,
        };
        scene.buildings.push(Building { id: 1, model: BuildingModel::Rectangular(m) });
        let (rm, rh) = crate::scene::rasterize_scene(&scene, &tr, 32, 32);
        let report = evaluate(&scene, &rm, &rh, 2.0).unwrap();
        assert_eq!(report.scene_iou2, 1.0);
        assert_eq!(report.scene_iou3, 1.0);
        assert_eq!(report.scene_rmse_m, 0.0);
        assert_eq!(report.buildings.len(), 1);
        assert_eq!(report.buildings[0].iou2, 1.0);
        assert_eq!(report.buildings[0].rmse_m, 0.0);

        // empty scene against the same reference scores 0
        let empty = SceneModel::new(tr.clone());
        let r0 = evaluate(&empty, &rm, &rh, 2.0).unwrap();
        assert_eq!(r0.scene_iou2, 0.0);
    }

    #[test]
    fn report_files_written() {
        let report = EvalReport {
            scene_iou2: 0.9,
            scene_iou3: 0.8,
            scene_rmse_m: 0.5,
            buildings: vec![BuildingEval { id: 4, iou2: 0.9, iou3: 0.8, rmse_m: 0.5 }],
        };
        let dir = tempfile::tempdir().unwrap();
        let jp = dir.path().join("report.json");
        let cp = dir.path().join("report.csv");
        write_report_json(&report, &jp).unwrap();
        write_report_csv(&report, &cp).unwrap();
        let back: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(&jp).unwrap()).unwrap();
        assert_eq!(back.buildings[0].id, 4);
        let csv = std::fs::read_to_string(&cp).unwrap();
        assert!(csv.starts_with("id,iou2,iou3,rmse_m\n4,"));
        assert!(csv.trim_end().ends_with("scene,0.900000,0.800000,0.500000"));
    }
}
