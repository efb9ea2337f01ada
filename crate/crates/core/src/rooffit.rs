//! Parametric roof fitting: exhaustive grid search over five primitive
//! types, graph-cut type consistency, model merging over rectilinear
//! footprint unions, and the irregular-mesh fallback.

use crate::config::Config;
use crate::decompose::{should_merge, Rect};
use crate::error::{Error, Result};
use crate::geom::{clamp01, fold_diff180, point_in_polygon};
use crate::graphcut::{solve_multilabel, GcProblem};
use crate::grid::Grid;
use crate::labeling::RectGraph;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoofType {
    Flat,
    Gable,
    Hip,
    Pyramid,
    Mansard,
}

impl RoofType {
    pub const ALL: [RoofType; 5] = [
        RoofType::Flat,
        RoofType::Gable,
        RoofType::Hip,
        RoofType::Pyramid,
        RoofType::Mansard,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap()
    }

    /// Number of free parameters in the exhaustive search.
    pub fn free_params(self) -> usize {
        match self {
            RoofType::Flat => 1,
            RoofType::Gable | RoofType::Pyramid => 2,
            RoofType::Hip => 3,
            RoofType::Mansard => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RoofType::Flat => "flat",
            RoofType::Gable => "gable",
            RoofType::Hip => "hip",
            RoofType::Pyramid => "pyramid",
            RoofType::Mansard => "mansard",
        }
    }
}

/// Fitted roof primitive over a rectangular (or merged rectilinear)
/// footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct RoofModel {
    pub roof_type: RoofType,
    /// Position/orientation and extents; the parametric frame of the roof.
    pub rect: Rect,
    /// Rectilinear outline replacing the rectangle footprint after merging,
    /// world coordinates.
    pub footprint: Option<Vec<Point>>,
    pub z_ridge: f64,
    pub z_eave: f64,
    pub hipl: f64,
    pub hipw: f64,
    pub terrain_z: f64,
    pub fit_rmse: f64,
}

impl RoofModel {
    pub fn footprint_polygon(&self) -> Vec<Point> {
        match &self.footprint {
            Some(p) => p.clone(),
            None => self.rect.corners().to_vec(),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        match &self.footprint {
            Some(poly) => point_in_polygon(p, poly),
            None => self.rect.contains_world(p),
        }
    }
}

fn ramp(d: f64, hip: f64) -> f64 {
    if hip <= 0.0 {
        0.0
    } else {
        clamp01(d / hip)
    }
}

/// Roof surface height at local coordinates (u along length, v along
/// width), without the footprint test.
fn height_local(u: f64, v: f64, length: f64, width: f64, zr: f64, ze: f64, hipl: f64, hipw: f64) -> f64 {
    let tv = ramp(v.abs() - (width / 2.0 - hipw), hipw);
    let tu = ramp(u.abs() - (length / 2.0 - hipl), hipl);
    let t = tv.max(tu);
    zr - (zr - ze) * t
}

/// Roof height at a world point, `None` outside the footprint.
pub fn roof_height(m: &RoofModel, p: Point) -> Option<f64> {
    if !m.contains(p) {
        return None;
    }
    let (u, v) = m.rect.world_to_local(p);
    Some(height_local(u, v, m.rect.length, m.rect.width, m.z_ridge, m.z_eave, m.hipl, m.hipw))
}

const MIN_FIT_PIXELS: usize = 10;
const TERRAIN_DILATE_PX: usize = 7;
const TERRAIN_RING_PX: usize = 5;
/// RMSE differences below this are ties, resolved by fewer free
/// parameters, then lower eave height.
pub const FIT_TIE_EPS: f64 = 1e-9;

/// DSM samples in the local frame of a rectangle, optionally gated by a
/// merged footprint polygon.
fn collect_samples(
    rect: &Rect,
    footprint: Option<&[Point]>,
    dsm: &Grid<f64>,
) -> Vec<(f64, f64, f64)> {
    let t = &dsm.transform;
    let mut cmin = f64::INFINITY;
    let mut cmax = f64::NEG_INFINITY;
    let mut rmin = f64::INFINITY;
    let mut rmax = f64::NEG_INFINITY;
    let corners: Vec<Point> = match footprint {
        Some(p) => p.to_vec(),
        None => rect.corners().to_vec(),
    };
    for p in &corners {
        let (c, r) = t.world_to_pixel(*p);
        cmin = cmin.min(c);
        cmax = cmax.max(c);
        rmin = rmin.min(r);
        rmax = rmax.max(r);
    }
    let c0 = (cmin.floor().max(0.0)) as usize;
    let r0 = (rmin.floor().max(0.0)) as usize;
    let c1 = (cmax.ceil().min(dsm.width as f64)) as usize;
    let r1 = (rmax.ceil().min(dsm.height as f64)) as usize;
    let mut out = Vec::new();
    for r in r0..r1 {
        for c in c0..c1 {
            let p = t.pixel_center(c, r);
            let inside = match footprint {
                Some(poly) => point_in_polygon(p, poly),
                None => rect.contains_world(p),
            };
            if !inside {
                continue;
            }
            let z = dsm.get(c, r, 0);
            if dsm.is_nodata(z) {
                continue;
            }
            let (u, v) = rect.world_to_local(p);
            out.push((u, v, z));
        }
    }
    out
}

/// Initial parameters per roof type: eave half a meter under the mean
/// height, ridge at the mean, hip lengths at a quarter of the extent where
/// they are free.
pub fn init_params(rect: &Rect, dsm: &Grid<f64>, roof_type: RoofType) -> Result<RoofModel> {
    let samples = collect_samples(rect, None, dsm);
    if samples.len() < MIN_FIT_PIXELS {
        return Err(Error::FitRejected(format!(
            "rectangle covers only {} valid DSM pixels",
            samples.len()
        )));
    }
    let mean_h = samples.iter().map(|s| s.2).sum::<f64>() / samples.len() as f64;
    let z_eave = mean_h - 0.5;
    let z_ridge = match roof_type {
        RoofType::Flat => z_eave,
        _ => mean_h,
    };
    let (hipl, hipw) = match roof_type {
        RoofType::Flat => (0.0, 0.0),
        RoofType::Gable => (0.0, rect.width / 2.0),
        RoofType::Hip => (rect.length / 4.0, rect.width / 2.0),
        RoofType::Pyramid => (rect.length / 2.0, rect.width / 2.0),
        RoofType::Mansard => (rect.length / 4.0, rect.width / 4.0),
    };
    let terrain_z = terrain_height(rect, dsm)
        .or_else(|| samples.iter().map(|s| s.2).min_by(f64::total_cmp))
        .unwrap();
    Ok(RoofModel {
        roof_type,
        rect: rect.clone(),
        footprint: None,
        z_ridge,
        z_eave,
        hipl,
        hipw,
        terrain_z,
        fit_rmse: f64::NAN,
    })
}

/// Minimum DSM height over a 5-px ring outside the dilated footprint.
pub(crate) fn terrain_height(rect: &Rect, dsm: &Grid<f64>) -> Option<f64> {
    let ps = dsm.transform.pixel_size_x;
    let inner_u = rect.length / 2.0 + TERRAIN_DILATE_PX as f64 * ps;
    let inner_v = rect.width / 2.0 + TERRAIN_DILATE_PX as f64 * ps;
    let outer_u = inner_u + TERRAIN_RING_PX as f64 * ps;
    let outer_v = inner_v + TERRAIN_RING_PX as f64 * ps;
    let t = &dsm.transform;
    let mut cmin = f64::INFINITY;
    let mut cmax = f64::NEG_INFINITY;
    let mut rmin = f64::INFINITY;
    let mut rmax = f64::NEG_INFINITY;
    for (su, sv) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let p = rect.local_to_world(su * outer_u, sv * outer_v);
        let (c, r) = t.world_to_pixel(p);
        cmin = cmin.min(c);
        cmax = cmax.max(c);
        rmin = rmin.min(r);
        rmax = rmax.max(r);
    }
    let c0 = cmin.floor().max(0.0) as usize;
    let r0 = rmin.floor().max(0.0) as usize;
    let c1 = (cmax.ceil().min(dsm.width as f64)).max(0.0) as usize;
    let r1 = (rmax.ceil().min(dsm.height as f64)).max(0.0) as usize;
    let mut best: Option<f64> = None;
    for r in r0..r1 {
        for c in c0..c1 {
            let p = t.pixel_center(c, r);
            let (u, v) = rect.world_to_local(p);
            let inside_outer = u.abs() <= outer_u && v.abs() <= outer_v;
            let inside_inner = u.abs() <= inner_u && v.abs() <= inner_v;
            if !inside_outer || inside_inner {
                continue;
            }
            let z = dsm.get(c, r, 0);
            if dsm.is_nodata(z) {
                continue;
            }
            best = Some(best.map_or(z, |b: f64| b.min(z)));
        }
    }
    best
}

/// Grid of values `center + step * k` covering `center +- half_range`,
/// clipped to `[lo, hi]`.
fn grid_values(center: f64, half_range: f64, step: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let v = center - half_range + k as f64 * step;
        if v > center + half_range + 1e-9 {
            break;
        }
        if v >= lo - 1e-9 && v <= hi + 1e-9 {
            out.push(v.clamp(lo, hi));
        }
        k += 1;
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    rmse: f64,
    roof_type: RoofType,
    z_eave: f64,
    z_ridge: f64,
    hipl: f64,
    hipw: f64,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    if a.rmse < b.rmse - FIT_TIE_EPS {
        return true;
    }
    if a.rmse > b.rmse + FIT_TIE_EPS {
        return false;
    }
    let ka = (a.roof_type.free_params(), a.z_eave, a.roof_type.index(), a.z_ridge, a.hipl, a.hipw);
    let kb = (b.roof_type.free_params(), b.z_eave, b.roof_type.index(), b.z_ridge, b.hipl, b.hipw);
    ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
}

/// Search one type's parameter grid. The error is quadratic in
/// (Z_ridge, Z_ridge - Z_eave) once the per-pixel ramp values are fixed,
/// so each hip combination is reduced to running sums and every height pair
/// costs O(1).
fn search_type(
    roof_type: RoofType,
    samples: &[(f64, f64, f64)],
    z_eave0: f64,
    length: f64,
    width: f64,
    best: &mut Option<Candidate>,
) {
    let n = samples.len() as f64;
    let hip_combos: Vec<(f64, f64)> = match roof_type {
        RoofType::Flat => vec![(0.0, 0.0)],
        RoofType::Gable => vec![(0.0, width / 2.0)],
        RoofType::Hip => grid_values(length / 4.0, length / 8.0, 0.4, 0.0, length / 2.0)
            .into_iter()
            .map(|l| (l, width / 2.0))
            .collect(),
        RoofType::Pyramid => vec![(length / 2.0, width / 2.0)],
        RoofType::Mansard => {
            let ls = grid_values(length / 4.0, length / 8.0, 0.4, 0.0, length / 2.0);
            let ws = grid_values(width / 4.0, width / 8.0, 0.4, 0.0, width / 2.0);
            let mut v = Vec::with_capacity(ls.len() * ws.len());
            for &l in &ls {
                for &w in &ws {
                    v.push((l, w));
                }
            }
            v
        }
    };
    let ze_grid = grid_values(z_eave0, 3.0, 0.2, f64::NEG_INFINITY, f64::INFINITY);
    for (hipl, hipw) in hip_combos {
        let mut st = 0.0;
        let mut stt = 0.0;
        let mut sz = 0.0;
        let mut szz = 0.0;
        let mut stz = 0.0;
        for &(u, v, z) in samples {
            let tv = ramp(v.abs() - (width / 2.0 - hipw), hipw);
            let tu = ramp(u.abs() - (length / 2.0 - hipl), hipl);
            let t = tv.max(tu);
            st += t;
            stt += t * t;
            sz += z;
            szz += z * z;
            stz += t * z;
        }
        // h_i = a - d * t_i with a = Z_ridge, d = Z_ridge - Z_eave
        let sse = |a: f64, d: f64| {
            n * a * a + d * d * stt + szz - 2.0 * a * d * st - 2.0 * a * sz + 2.0 * d * stz
        };
        for &ze in &ze_grid {
            if roof_type == RoofType::Flat {
                let cand = Candidate {
                    rmse: (sse(ze, 0.0).max(0.0) / n).sqrt(),
                    roof_type,
                    z_eave: ze,
                    z_ridge: ze,
                    hipl,
                    hipw,
                };
                if best.as_ref().map_or(true, |b| better(&cand, b)) {
                    *best = Some(cand);
                }
                continue;
            }
            for zr in grid_values(ze + 2.25, 1.75, 0.2, f64::NEG_INFINITY, f64::INFINITY) {
                let cand = Candidate {
                    rmse: (sse(zr, zr - ze).max(0.0) / n).sqrt(),
                    roof_type,
                    z_eave: ze,
                    z_ridge: zr,
                    hipl,
                    hipw,
                };
                if best.as_ref().map_or(true, |b| better(&cand, b)) {
                    *best = Some(cand);
                }
            }
        }
    }
}

fn fit_over(
    rect: &Rect,
    footprint: Option<&[Point]>,
    dsm: &Grid<f64>,
    types: &[RoofType],
    z_eave0_override: Option<f64>,
) -> Result<RoofModel> {
    let mut proto = init_params(rect, dsm, types[0])?;
    let samples = collect_samples(rect, footprint, dsm);
    if samples.len() < MIN_FIT_PIXELS {
        return Err(Error::FitRejected(format!(
            "footprint covers only {} valid DSM pixels",
            samples.len()
        )));
    }
    let z_eave0 = z_eave0_override.unwrap_or(proto.z_eave);
    let mut best: Option<Candidate> = None;
    for &t in types {
        search_type(t, &samples, z_eave0, rect.length, rect.width, &mut best);
    }
    let c = best.expect("non-empty search grid");
    proto.roof_type = c.roof_type;
    proto.z_eave = c.z_eave;
    proto.z_ridge = c.z_ridge;
    proto.hipl = c.hipl;
    proto.hipw = c.hipw;
    proto.fit_rmse = c.rmse;
    proto.footprint = footprint.map(|f| f.to_vec());
    Ok(proto)
}

/// Exhaustive search over all five types; global grid optimum with the
/// documented tie-break.
pub fn fit_model(rect: &Rect, dsm: &Grid<f64>) -> Result<RoofModel> {
    fit_over(rect, None, dsm, &RoofType::ALL, None)
}

/// Refit restricted to a single type (used after a type-consistency flip).
pub fn fit_model_typed(rect: &Rect, dsm: &Grid<f64>, roof_type: RoofType) -> Result<RoofModel> {
    fit_over(rect, None, dsm, &[roof_type], None)
}

/// Graph-cut roof-type consistency: flipping a node's type costs
/// 1 - e^{-1}, keeping it costs 0; smoothness pulls similar neighbors to a
/// common type; flipped nodes are refit under their new type.
pub fn type_consistency(
    models: &[RoofModel],
    graph: &RectGraph,
    dsm: &Grid<f64>,
    cfg: &Config,
) -> Result<Vec<RoofModel>> {
    let flip_cost = 1.0 - (-1.0f64).exp();
    let mut p = GcProblem::new(models.len(), RoofType::ALL.len());
    for (i, m) in models.iter().enumerate() {
        for (l, t) in RoofType::ALL.iter().enumerate() {
            p.set_data_cost(i, l, if *t == m.roof_type { 0.0 } else { flip_cost });
        }
    }
    for &(i, j, w) in &graph.edges {
        p.add_edge(i, j, cfg.gc_lambda * w);
    }
    let labels = solve_multilabel(&p);
    let mut out = Vec::with_capacity(models.len());
    for (m, &l) in models.iter().zip(&labels) {
        let new_type = RoofType::ALL[l];
        if new_type == m.roof_type {
            out.push(m.clone());
        } else {
            let mut refit = fit_model_typed(&m.rect, dsm, new_type)?;
            refit.terrain_z = m.terrain_z;
            out.push(refit);
        }
    }
    Ok(out)
}

/// Table 2.3 merge decision; `None` is the single Not-merge cell.
pub fn merge_type(a: RoofType, b: RoofType) -> Option<RoofType> {
    use RoofType::*;
    match (a, b) {
        (Pyramid, Pyramid) => None,
        (Mansard, _) | (_, Mansard) => Some(Mansard),
        (Pyramid, other) | (other, Pyramid) => Some(other),
        (x, y) if x == y => Some(x),
        (Flat, Gable) | (Gable, Flat) => Some(Gable),
        (Flat, Hip) | (Hip, Flat) => Some(Hip),
        (Gable, Hip) | (Hip, Gable) => Some(Hip),
        _ => unreachable!("merge matrix is total"),
    }
}

const MERGE_ORIENT_TOL_DEG: f64 = 10.0;

/// Rectilinear union of two near-axis-aligned rectangle footprints:
/// coordinates snapped onto a shared grid, covered cells traced into a
/// counter-clockwise polygon (L shapes give 6 vertices, T shapes 8).
pub fn merged_footprint(a: &RoofModel, b: &RoofModel, snap_tol: f64) -> Result<Vec<Point>> {
    let ra = &a.rect;
    let rb = &b.rect;
    let diff = fold_diff180(ra.orientation, rb.orientation);
    let diff90 = diff.min(90.0 - diff).abs();
    if diff90 > MERGE_ORIENT_TOL_DEG {
        return Err(Error::Invalid(format!(
            "footprint orientations differ by {diff:.1} degrees"
        )));
    }
    let phi = ra.orientation;
    let rad = (-phi).to_radians();
    let o = Point::new(0.0, 0.0);
    let box_of = |r: &Rect| -> ([f64; 2], [f64; 2]) {
        let c = r.center.rotate_around(o, rad);
        let swap = fold_diff180(r.orientation, phi) > 45.0;
        let (hx, hy) = if swap {
            (r.width / 2.0, r.length / 2.0)
        } else {
            (r.length / 2.0, r.width / 2.0)
        };
        ([c.x - hx, c.x + hx], [c.y - hy, c.y + hy])
    };
    let (ax, ay) = box_of(ra);
    let (bx, by) = box_of(rb);
    let snap = |vals: [f64; 4]| -> Vec<f64> {
        let mut v = vals.to_vec();
        v.sort_by(f64::total_cmp);
        let mut out: Vec<f64> = Vec::new();
        for x in v {
            match out.last() {
                Some(&last) if (x - last).abs() <= snap_tol => {}
                _ => out.push(x),
            }
        }
        out
    };
    let xs = snap([ax[0], ax[1], bx[0], bx[1]]);
    let ys = snap([ay[0], ay[1], by[0], by[1]]);
    let near = |v: f64, cuts: &[f64]| cuts.iter().copied().min_by(|p, q| {
        (v - p).abs().partial_cmp(&(v - q).abs()).unwrap()
    });
    let snapped = |iv: [f64; 2], cuts: &[f64]| [near(iv[0], cuts).unwrap(), near(iv[1], cuts).unwrap()];
    let sax = snapped(ax, &xs);
    let say = snapped(ay, &ys);
    let sbx = snapped(bx, &xs);
    let sby = snapped(by, &ys);
    // cell grid between cut lines; a cell belongs to the union if its
    // center is inside either snapped box
    let mut covered = vec![vec![false; xs.len().saturating_sub(1)]; ys.len().saturating_sub(1)];
    let mut any = false;
    for (yi, row) in covered.iter_mut().enumerate() {
        for (xi, cell) in row.iter_mut().enumerate() {
            let cx = (xs[xi] + xs[xi + 1]) / 2.0;
            let cy = (ys[yi] + ys[yi + 1]) / 2.0;
            let in_a = cx > sax[0] && cx < sax[1] && cy > say[0] && cy < say[1];
            let in_b = cx > sbx[0] && cx < sbx[1] && cy > sby[0] && cy < sby[1];
            *cell = in_a || in_b;
            any |= *cell;
        }
    }
    if !any {
        return Err(Error::Invalid("merged footprint is empty".into()));
    }
    // boundary edges with the interior on the left, chained into a loop
    let mut edges: std::collections::BTreeMap<(i64, i64), (i64, i64)> = Default::default();
    let key = |xi: usize, yi: usize| (xi as i64, yi as i64);
    let is_cov = |xi: i64, yi: i64| {
        yi >= 0
            && xi >= 0
            && (yi as usize) < covered.len()
            && (xi as usize) < covered[yi as usize].len()
            && covered[yi as usize][xi as usize]
    };
    for yi in 0..covered.len() {
        for xi in 0..covered[yi].len() {
            if !covered[yi][xi] {
                continue;
            }
            let (x, y) = (xi as i64, yi as i64);
            if !is_cov(x, y - 1) {
                edges.insert(key(xi, yi), key(xi + 1, yi));
            }
            if !is_cov(x + 1, y) {
                edges.insert(key(xi + 1, yi), key(xi + 1, yi + 1));
            }
            if !is_cov(x, y + 1) {
                edges.insert(key(xi + 1, yi + 1), key(xi, yi + 1));
            }
            if !is_cov(x - 1, y) {
                edges.insert(key(xi, yi + 1), key(xi, yi));
            }
        }
    }
    let start = *edges.keys().next().unwrap();
    let mut loop_nodes = vec![start];
    let mut cur = start;
    loop {
        let next = *edges
            .get(&cur)
            .ok_or_else(|| Error::Invalid("merged footprint is not simple".into()))?;
        if next == start {
            break;
        }
        if loop_nodes.len() > edges.len() {
            return Err(Error::Invalid("merged footprint trace did not close".into()));
        }
        loop_nodes.push(next);
        cur = next;
    }
    if loop_nodes.len() < edges.len() {
        return Err(Error::Invalid("merged footprint is disconnected".into()));
    }
    // collapse collinear runs and map back to world coordinates
    let mut poly = Vec::new();
    let n = loop_nodes.len();
    for i in 0..n {
        let prev = loop_nodes[(i + n - 1) % n];
        let here = loop_nodes[i];
        let next = loop_nodes[(i + 1) % n];
        let d0 = (here.0 - prev.0, here.1 - prev.1);
        let d1 = (next.0 - here.0, next.1 - here.1);
        if d0 != d1 {
            let p = Point::new(xs[here.0 as usize], ys[here.1 as usize]);
            poly.push(p.rotate_around(o, phi.to_radians()));
        }
    }
    Ok(poly)
}

/// Merge two adjacent models when Table 2.3 and the Eq. 2.2 criteria allow
/// it; `None` leaves the pair untouched.
pub fn merge_models(
    a: &RoofModel,
    b: &RoofModel,
    dsm: &Grid<f64>,
    cfg: &Config,
) -> Result<Option<RoofModel>> {
    let Some(target) = merge_type(a.roof_type, b.roof_type) else {
        return Ok(None);
    };
    match should_merge(&a.rect, &b.rect, dsm, cfg) {
        Ok(true) => {}
        Ok(false) | Err(_) => return Ok(None),
    }
    let ps = dsm.transform.pixel_size_x;
    let poly = match merged_footprint(a, b, cfg.edge_len_tol_px as f64 * ps) {
        Ok(p) => p,
        Err(_) => return Ok(None),
    };
    let larger = if a.rect.area() >= b.rect.area() { a } else { b };
    // bounding rectangle of the union in the larger constituent's frame
    let phi = larger.rect.orientation;
    let o = Point::new(0.0, 0.0);
    let rad = (-phi).to_radians();
    let mut x0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y0 = f64::INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for p in &poly {
        let q = p.rotate_around(o, rad);
        x0 = x0.min(q.x);
        x1 = x1.max(q.x);
        y0 = y0.min(q.y);
        y1 = y1.max(q.y);
    }
    let (ex, ey) = (x1 - x0, y1 - y0);
    let (length, width, orientation) = if ex >= ey {
        (ex, ey, phi)
    } else {
        (ey, ex, crate::geom::fold180(phi + 90.0))
    };
    let rect = Rect {
        center: Point::new((x0 + x1) / 2.0, (y0 + y1) / 2.0).rotate_around(o, phi.to_radians()),
        length,
        width,
        orientation,
        mean_color: larger.rect.mean_color,
        color_std: larger.rect.color_std,
        mean_height: larger.rect.mean_height,
        parent_instance: larger.rect.parent_instance,
    };
    let mut merged = fit_over(&rect, Some(&poly), dsm, &[target], Some(larger.z_eave))?;
    merged.terrain_z = a.terrain_z.min(b.terrain_z);
    Ok(Some(merged))
}

/// Triangle mesh in world coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

/// Irregular-segment fallback: when the rectangles explain the instance
/// mask poorly and the instance is large, triangulate the DSM over the mask
/// and decimate by grid vertex clustering.
pub fn irregular_fallback(
    mask: &Grid<u8>,
    rects: &[Rect],
    dsm: &Grid<f64>,
    cfg: &Config,
) -> Option<Mesh> {
    let mut inter = 0usize;
    let mut uni = 0usize;
    let mut area = 0usize;
    for r in 0..mask.height {
        for c in 0..mask.width {
            let in_mask = mask.get(c, r, 0) != 0;
            let p = mask.transform.pixel_center(c, r);
            let in_rect = rects.iter().any(|rc| rc.contains_world(p));
            if in_mask {
                area += 1;
            }
            if in_mask && in_rect {
                inter += 1;
            }
            if in_mask || in_rect {
                uni += 1;
            }
        }
    }
    let iou = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
    if iou >= cfg.irregular_iou || area <= cfg.irregular_area_px {
        return None;
    }
    // two triangles per cell of four valid masked pixel centers
    let mut vert_id = vec![usize::MAX; mask.width * mask.height];
    let mut mesh = Mesh::default();
    let vid = |c: usize, r: usize, mesh: &mut Mesh, vert_id: &mut Vec<usize>| {
        let k = r * mask.width + c;
        if vert_id[k] == usize::MAX {
            let p = mask.transform.pixel_center(c, r);
            vert_id[k] = mesh.vertices.len();
            mesh.vertices.push([p.x, p.y, dsm.get(c, r, 0)]);
        }
        vert_id[k]
    };
    let ok = |c: usize, r: usize| mask.get(c, r, 0) != 0 && !dsm.is_nodata(dsm.get(c, r, 0));
    for r in 0..mask.height.saturating_sub(1) {
        for c in 0..mask.width.saturating_sub(1) {
            if !(ok(c, r) && ok(c + 1, r) && ok(c, r + 1) && ok(c + 1, r + 1)) {
                continue;
            }
            let v00 = vid(c, r, &mut mesh, &mut vert_id);
            let v10 = vid(c + 1, r, &mut mesh, &mut vert_id);
            let v01 = vid(c, r + 1, &mut mesh, &mut vert_id);
            let v11 = vid(c + 1, r + 1, &mut mesh, &mut vert_id);
            mesh.faces.push([v00, v10, v11]);
            mesh.faces.push([v00, v11, v01]);
        }
    }
    if mesh.faces.is_empty() {
        return None;
    }
    let ps = mask.transform.pixel_size_x;
    let mut cell = 2.0 * ps;
    while mesh.faces.len() > cfg.max_faces {
        mesh = cluster_decimate(&mesh, cell);
        cell *= 2.0;
    }
    Some(mesh)
}

/// Grid vertex clustering: vertices in the same cell collapse to their
/// centroid; degenerate and duplicate faces are dropped.
fn cluster_decimate(mesh: &Mesh, cell: f64) -> Mesh {
    use std::collections::BTreeMap;
    let mut clusters: BTreeMap<(i64, i64), (usize, [f64; 3], usize)> = BTreeMap::new();
    let mut assign = vec![0usize; mesh.vertices.len()];
    for (i, v) in mesh.vertices.iter().enumerate() {
        let key = ((v[0] / cell).floor() as i64, (v[1] / cell).floor() as i64);
        let n = clusters.len();
        let e = clusters.entry(key).or_insert((n, [0.0; 3], 0));
        for k in 0..3 {
            e.1[k] += v[k];
        }
        e.2 += 1;
        assign[i] = e.0;
    }
    let mut out = Mesh::default();
    out.vertices = vec![[0.0; 3]; clusters.len()];
    for (_, (id, sum, cnt)) in clusters {
        out.vertices[id] = sum.map(|s| s / cnt as f64);
    }
    let mut seen = std::collections::BTreeSet::new();
    for f in &mesh.faces {
        let g = [assign[f[0]], assign[f[1]], assign[f[2]]];
        if g[0] == g[1] || g[1] == g[2] || g[0] == g[2] {
            continue;
        }
        let mut key = g;
        key.sort_unstable();
        if seen.insert(key) {
            out.faces.push(g);
        }
    }
    out
}
