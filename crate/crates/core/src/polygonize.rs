//! Vectorize building instances into regularized polygons: boundary trace,
//! Douglas-Peucker simplification, main-orientation snapping, and
//! image-line regularization.
//!
//! All vector data lives in world coordinates; pixel-denominated
//! thresholds are converted with the grid's pixel size at the call sites.

use std::collections::HashMap;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geom::{
    dist_point_segment, fold180, fold90, fold_diff180, polygon_area, segment_orientation,
};
use crate::grid::Grid;
use crate::segmentation::InstanceMap;
use crate::{Line, Point};

/// Regularized building outline with its dominant orthogonal directions.
#[derive(Debug, Clone)]
pub struct BuildingPolygon {
    /// Closed loop (counter-clockwise in world coordinates, no repeated
    /// endpoint, no consecutive duplicates).
    pub vertices: Vec<Point>,
    /// Angles in [0, 90), each standing for an orthogonal direction pair,
    /// sorted by supporting edge length (descending).
    pub main_orientations: Vec<f64>,
    pub source_instance: u32,
}

impl BuildingPolygon {
    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices).abs()
    }
}

/// Straight image feature used for footprint regularization.
#[derive(Debug, Clone, Copy)]
pub struct LineSegment {
    pub a: Point,
    pub b: Point,
    /// Degrees in [0, 180), world frame.
    pub orientation: f64,
    /// World units (meters).
    pub length: f64,
}

impl LineSegment {
    pub fn new(a: Point, b: Point) -> Self {
        LineSegment {
            a,
            b,
            orientation: segment_orientation(a, b),
            length: a.dist(b),
        }
    }

    pub fn midpoint(&self) -> Point {
        self.a.add(self.b).scale(0.5)
    }
}

// --------------------------------------------------------------- tracing

/// Trace the outer boundary of one instance as a closed loop of pixel
/// corners (crack following), returned counter-clockwise in world
/// coordinates. Interior holes are ignored.
pub fn trace_boundary(inst: &InstanceMap, id: u32) -> Result<Vec<Point>> {
    if id == 0 || id > inst.count {
        return Err(Error::Invalid(format!("unknown instance id {id}")));
    }
    let g = &inst.grid;
    let inside = |c: i64, r: i64| g.in_bounds(c, r) && g.get(c as usize, r as usize, 0) == id;

    // directed boundary edges with the instance on the right (image coords)
    // keyed by start corner
    let mut edges: HashMap<(i64, i64), Vec<(i64, i64)>> = HashMap::new();
    let mut found = false;
    for r in 0..g.height as i64 {
        for c in 0..g.width as i64 {
            if !inside(c, r) {
                continue;
            }
            found = true;
            if !inside(c, r - 1) {
                edges.entry((c, r)).or_default().push((c + 1, r));
            }
            if !inside(c + 1, r) {
                edges.entry((c + 1, r)).or_default().push((c + 1, r + 1));
            }
            if !inside(c, r + 1) {
                edges.entry((c + 1, r + 1)).or_default().push((c, r + 1));
            }
            if !inside(c - 1, r) {
                edges.entry((c, r + 1)).or_default().push((c, r));
            }
        }
    }
    if !found {
        return Err(Error::Invalid(format!("instance {id} has no pixels")));
    }

    // outer loop starts at the topmost-leftmost corner going east
    let start = *edges
        .keys()
        .min_by_key(|&&(c, r)| (r, c))
        .expect("non-empty edge set");
    let mut loop_px: Vec<(i64, i64)> = vec![start];
    let mut cur = start;
    let mut dir; // incoming direction of the current edge
    let first_next = {
        let outs = edges.get_mut(&cur).unwrap();
        let i = outs
            .iter()
            .position(|&(c, _)| c == cur.0 + 1)
            .expect("top-left corner must have an east edge");
        outs.swap_remove(i)
    };
    let mut next = first_next;
    loop {
        dir = (next.0 - cur.0, next.1 - cur.1);
        cur = next;
        if cur == start {
            break;
        }
        loop_px.push(cur);
        let outs = edges.get_mut(&cur).ok_or_else(|| {
            Error::Invalid(format!("boundary trace broke at corner {cur:?}"))
        })?;
        if outs.is_empty() {
            return Err(Error::Invalid(format!(
                "boundary trace broke at corner {cur:?}"
            )));
        }
        // prefer the sharpest right turn (image coords) to hug the component
        let turn_rank = |d: (i64, i64)| -> i32 {
            // rotate so incoming dir maps to east, rank right > straight > left
            let rel = (
                d.0 * dir.0 + d.1 * dir.1,   // dot
                -d.0 * dir.1 + d.1 * dir.0, // cross (image coords, y down)
            );
            match rel {
                (0, 1) => 0,  // right turn (towards inside-right)
                (1, 0) => 1,  // straight
                (0, -1) => 2, // left turn
                _ => 3,
            }
        };
        let i = (0..outs.len())
            .min_by_key(|&i| {
                let o = outs[i];
                turn_rank((o.0 - cur.0, o.1 - cur.1))
            })
            .unwrap();
        next = outs.swap_remove(i);
    }

    // collapse collinear runs along the lattice
    let mut pts: Vec<(i64, i64)> = Vec::with_capacity(loop_px.len());
    let n = loop_px.len();
    for i in 0..n {
        let prev = loop_px[(i + n - 1) % n];
        let here = loop_px[i];
        let next = loop_px[(i + 1) % n];
        let d1 = (here.0 - prev.0, here.1 - prev.1);
        let d2 = (next.0 - here.0, next.1 - here.1);
        if d1.0 * d2.1 - d1.1 * d2.0 != 0 {
            pts.push(here);
        }
    }

    let t = &g.transform;
    let mut world: Vec<Point> = pts
        .iter()
        .map(|&(c, r)| t.pixel_to_world(c as f64, r as f64))
        .collect();
    if polygon_area(&world) < 0.0 {
        world.reverse();
    }
    Ok(world)
}

// -------------------------------------------------------- simplification

fn dp_rec(pts: &[Point], eps: f64, keep: &mut Vec<bool>, lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let (a, b) = (pts[lo], pts[hi]);
    let mut worst = lo;
    let mut worst_d = -1.0;
    for i in lo + 1..hi {
        let d = dist_point_segment(pts[i], a, b);
        if d > worst_d {
            worst_d = d;
            worst = i;
        }
    }
    if worst_d > eps {
        keep[worst] = true;
        dp_rec(pts, eps, keep, lo, worst);
        dp_rec(pts, eps, keep, worst, hi);
    }
}

/// Douglas-Peucker simplification of an open polyline; endpoints are
/// always kept and every dropped point lies within `eps` of the output.
pub fn simplify_chain(pts: &[Point], eps: f64) -> Vec<Point> {
    if pts.len() <= 2 {
        return pts.to_vec();
    }
    let mut keep = vec![false; pts.len()];
    keep[0] = true;
    *keep.last_mut().unwrap() = true;
    dp_rec(pts, eps, &mut keep, 0, pts.len() - 1);
    pts.iter()
        .zip(&keep)
        .filter_map(|(p, &k)| k.then_some(*p))
        .collect()
}

/// Simplify a closed loop. The recursion anchors at vertex 0 and the
/// vertex farthest from it, both of which are preserved.
pub fn simplify_dp(loop_pts: &[Point], eps: f64) -> Result<Vec<Point>> {
    if loop_pts.len() < 3 || polygon_area(loop_pts).abs() < 1e-12 {
        return Err(Error::Invalid("degenerate loop (zero area)".into()));
    }
    let p0 = loop_pts[0];
    let far = (1..loop_pts.len())
        .max_by(|&i, &j| {
            loop_pts[i]
                .dist(p0)
                .partial_cmp(&loop_pts[j].dist(p0))
                .unwrap()
        })
        .unwrap();
    let mut chain1: Vec<Point> = loop_pts[0..=far].to_vec();
    let mut chain2: Vec<Point> = loop_pts[far..].to_vec();
    chain2.push(p0);
    let s1 = simplify_chain(&chain1, eps);
    let s2 = simplify_chain(&chain2, eps);
    chain1.clear();
    let mut out = s1;
    out.extend_from_slice(&s2[1..s2.len() - 1]);
    if out.len() < 3 {
        return Err(Error::Invalid("loop degenerated during simplification".into()));
    }
    Ok(out)
}

/// Max distance from any input point to the simplified closed loop
/// (test oracle for the deviation bound).
pub fn max_deviation(original: &[Point], simplified: &[Point]) -> f64 {
    let n = simplified.len();
    original
        .iter()
        .map(|&p| {
            (0..n)
                .map(|i| dist_point_segment(p, simplified[i], simplified[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

// ----------------------------------------------------- main orientations

/// Histogram edge orientations into 9 half-open 10-degree bins over
/// [0, 90) with orthogonal folding; bins whose summed edge length exceeds
/// `t_l` yield one orientation (length-weighted mean of folded angles),
/// sorted by supporting length descending.
pub fn main_orientations(vertices: &[Point], t_l: f64) -> Vec<f64> {
    let mut len_sum = [0.0f64; 9];
    let mut ang_sum = [0.0f64; 9];
    let n = vertices.len();
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let len = a.dist(b);
        if len <= 0.0 {
            continue;
        }
        let folded = fold90(segment_orientation(a, b));
        let bin = ((folded / 10.0).floor() as usize).min(8);
        len_sum[bin] += len;
        ang_sum[bin] += folded * len;
    }
    let mut picked: Vec<(f64, f64)> = (0..9)
        .filter(|&b| len_sum[b] > t_l)
        .map(|b| (len_sum[b], ang_sum[b] / len_sum[b]))
        .collect();
    picked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    picked.into_iter().map(|(_, ang)| ang).collect()
}

// ------------------------------------------------------- line adjustment

/// Rebuild a polygon from per-edge orientations: consecutive edges with
/// (nearly) the same assigned orientation merge into one line anchored at
/// their length-weighted midpoint, then consecutive lines intersect.
/// Returns `None` when the construction degenerates.
fn rebuild_with_angles(vertices: &[Point], angles: &[f64]) -> Option<Vec<Point>> {
    let n = vertices.len();
    debug_assert_eq!(angles.len(), n);
    // group consecutive parallel edges (cyclic)
    let mut groups: Vec<(f64, Point, f64)> = Vec::new(); // (angle, anchor, weight)
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let len = a.dist(b);
        let mid = a.add(b).scale(0.5);
        let ang = fold180(angles[i]);
        match groups.last_mut() {
            Some((ga, anchor, w)) if fold_diff180(*ga, ang) < 1e-6 => {
                let total = *w + len;
                *anchor = anchor.scale(*w / total).add(mid.scale(len / total));
                *w = total;
            }
            _ => groups.push((ang, mid, len)),
        }
    }
    // cyclic wrap: first and last group may be parallel
    if groups.len() >= 2 {
        let first = groups[0];
        let last = *groups.last().unwrap();
        if fold_diff180(first.0, last.0) < 1e-6 {
            let total = first.2 + last.2;
            let anchor = first
                .1
                .scale(first.2 / total)
                .add(last.1.scale(last.2 / total));
            groups[0] = (first.0, anchor, total);
            groups.pop();
        }
    }
    if groups.len() < 3 {
        return None;
    }
    let lines: Vec<Line> = groups
        .iter()
        .map(|&(ang, anchor, _)| Line::from_angle_deg(anchor, ang))
        .collect();
    let m = lines.len();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let prev = &lines[(i + m - 1) % m];
        out.push(prev.intersect(&lines[i])?);
    }
    Some(out)
}

/// Snap every edge to the closest main orientation (or its orthogonal
/// complement) and reconnect. Empty orientation list is the identity.
pub fn adjust_lines(vertices: &[Point], orientations: &[f64]) -> Vec<Point> {
    if orientations.is_empty() || vertices.len() < 3 {
        return vertices.to_vec();
    }
    let n = vertices.len();
    let mut angles = Vec::with_capacity(n);
    for i in 0..n {
        let theta = segment_orientation(vertices[i], vertices[(i + 1) % n]);
        let mut best = (f64::INFINITY, 0.0);
        for &o in orientations {
            for cand in [o, o + 90.0] {
                let d = fold_diff180(theta, cand);
                if d < best.0 {
                    best = (d, fold180(cand));
                }
            }
        }
        angles.push(best.1);
    }
    match rebuild_with_angles(vertices, &angles) {
        Some(out) if sane_rebuild(vertices, &out) => out,
        _ => vertices.to_vec(),
    }
}

fn sane_rebuild(original: &[Point], rebuilt: &[Point]) -> bool {
    let a0 = polygon_area(original).abs();
    let a1 = polygon_area(rebuilt).abs();
    a1 > 0.2 * a0 && a1 < 5.0 * a0 && rebuilt.iter().all(|p| p.x.is_finite() && p.y.is_finite())
}

/// Reset edges that have a detected image line within `dist_gate` (edge
/// midpoint to segment midpoint) and `angle_gate` degrees to that line's
/// orientation, then reconnect. Unmatched edges are unchanged.
pub fn regularize_with_image_lines(
    vertices: &[Point],
    segs: &[LineSegment],
    dist_gate: f64,
    angle_gate: f64,
) -> Vec<Point> {
    if segs.is_empty() || vertices.len() < 3 {
        return vertices.to_vec();
    }
    let n = vertices.len();
    let mut angles = Vec::with_capacity(n);
    let mut changed = false;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let theta = segment_orientation(a, b);
        let mid = a.add(b).scale(0.5);
        let mut assigned = theta;
        let mut best_d = f64::INFINITY;
        for s in segs {
            let d = mid.dist(s.midpoint());
            if d < dist_gate && d < best_d && fold_diff180(theta, s.orientation) < angle_gate {
                best_d = d;
                assigned = s.orientation;
            }
        }
        if assigned != theta {
            changed = true;
        }
        angles.push(assigned);
    }
    if !changed {
        return vertices.to_vec();
    }
    match rebuild_with_angles(vertices, &angles) {
        Some(out) if sane_rebuild(vertices, &out) => out,
        _ => vertices.to_vec(),
    }
}

// -------------------------------------------------------- line detection

/// Gradient-orientation region growing over an RGB grid, a lightweight
/// stand-in for the LSD detector: only the segment orientations are
/// consumed downstream, so no false-detection control is performed.
pub fn detect_lines(ortho: &Grid<u8>) -> Vec<LineSegment> {
    detect_lines_with(ortho, 5.0, 22.5, 10.0)
}

pub fn detect_lines_with(
    ortho: &Grid<u8>,
    mag_threshold: f64,
    angle_tol_deg: f64,
    min_len_px: f64,
) -> Vec<LineSegment> {
    assert_eq!(ortho.bands, 3, "detect_lines expects a 3-band grid");
    let (w, h) = (ortho.width, ortho.height);
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let gray: Vec<f64> = (0..w * h)
        .map(|i| {
            (ortho.data[i * 3].to_owned() as f64
                + ortho.data[i * 3 + 1] as f64
                + ortho.data[i * 3 + 2] as f64)
                / 3.0
        })
        .collect();
    let mut mag = vec![0.0f64; w * h];
    let mut ang = vec![0.0f64; w * h]; // level-line orientation, [0, 180)
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let gx = (gray[r * w + c + 1] - gray[r * w + c - 1]) / 2.0;
            let gy = (gray[(r + 1) * w + c] - gray[(r - 1) * w + c]) / 2.0;
            let m = (gx * gx + gy * gy).sqrt();
            mag[r * w + c] = m;
            if m > 0.0 {
                // level line is perpendicular to the gradient
                ang[r * w + c] = fold180(gy.atan2(gx).to_degrees() + 90.0);
            }
        }
    }
    let mut order: Vec<usize> = (0..w * h).filter(|&i| mag[i] > mag_threshold).collect();
    order.sort_by(|&a, &b| mag[b].partial_cmp(&mag[a]).unwrap().then(a.cmp(&b)));
    let mut used = vec![false; w * h];
    let mut segs = Vec::new();
    for &seed in &order {
        if used[seed] {
            continue;
        }
        // region growth on aligned level-line orientation
        let mut region = vec![seed];
        used[seed] = true;
        // axial mean direction tracked as a vector at doubled angle
        let mut sx = (2.0 * ang[seed].to_radians()).cos();
        let mut sy = (2.0 * ang[seed].to_radians()).sin();
        let mut qi = 0;
        while qi < region.len() {
            let cur = region[qi];
            qi += 1;
            let (cc, cr) = ((cur % w) as i64, (cur / w) as i64);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nc, nr) = (cc + dc, cr + dr);
                    if nc < 0 || nr < 0 || nc >= w as i64 || nr >= h as i64 {
                        continue;
                    }
                    let ni = nr as usize * w + nc as usize;
                    if used[ni] || mag[ni] <= mag_threshold {
                        continue;
                    }
                    let region_angle = 0.5 * sy.atan2(sx).to_degrees();
                    if fold_diff180(ang[ni], region_angle) < angle_tol_deg {
                        used[ni] = true;
                        region.push(ni);
                        sx += (2.0 * ang[ni].to_radians()).cos();
                        sy += (2.0 * ang[ni].to_radians()).sin();
                    }
                }
            }
        }
        if region.len() < 10 {
            continue;
        }
        // PCA fit in pixel coordinates
        let nf = region.len() as f64;
        let (mut mx, mut my) = (0.0, 0.0);
        for &i in &region {
            mx += (i % w) as f64;
            my += (i / w) as f64;
        }
        mx /= nf;
        my /= nf;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for &i in &region {
            let dx = (i % w) as f64 - mx;
            let dy = (i / w) as f64 - my;
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        // principal axis of the 2x2 covariance
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let (dx, dy) = (theta.cos(), theta.sin());
        let mut tmin = f64::INFINITY;
        let mut tmax = f64::NEG_INFINITY;
        for &i in &region {
            let t = ((i % w) as f64 - mx) * dx + ((i / w) as f64 - my) * dy;
            tmin = tmin.min(t);
            tmax = tmax.max(t);
        }
        if tmax - tmin < min_len_px {
            continue;
        }
        let t0 = ortho.transform.pixel_to_world(mx + 0.5 + tmin * dx, my + 0.5 + tmin * dy);
        let t1 = ortho.transform.pixel_to_world(mx + 0.5 + tmax * dx, my + 0.5 + tmax * dy);
        segs.push(LineSegment::new(t0, t1));
    }
    segs
}

// ------------------------------------------------------------- assembly

/// Full three-step polygon extraction for one instance.
pub fn extract_polygon(
    inst: &InstanceMap,
    id: u32,
    image_lines: &[LineSegment],
    cfg: &Config,
) -> Result<BuildingPolygon> {
    let ps = inst.grid.transform.pixel_size_x;
    let boundary = trace_boundary(inst, id)?;
    let simplified = simplify_dp(&boundary, cfg.dp_epsilon_px * ps)?;
    let orients = main_orientations(&simplified, cfg.t_l_px * ps);
    let adjusted = adjust_lines(&simplified, &orients);
    let regularized = regularize_with_image_lines(&adjusted, image_lines, 5.0 * ps, 10.0);
    let vertices = dedup_vertices(regularized);
    if vertices.len() < 3 {
        return Err(Error::Invalid(format!(
            "instance {id} degenerated during polygonization"
        )));
    }
    let orients = if orients.is_empty() {
        // fall back to the longest edge so downstream always has a frame
        let n = vertices.len();
        let longest = (0..n)
            .max_by(|&i, &j| {
                let li = vertices[i].dist(vertices[(i + 1) % n]);
                let lj = vertices[j].dist(vertices[(j + 1) % n]);
                li.partial_cmp(&lj).unwrap()
            })
            .unwrap();
        vec![fold90(segment_orientation(
            vertices[longest],
            vertices[(longest + 1) % n],
        ))]
    } else {
        orients
    };
    Ok(BuildingPolygon {
        vertices,
        main_orientations: orients,
        source_instance: id,
    })
}

fn dedup_vertices(mut pts: Vec<Point>) -> Vec<Point> {
    pts.dedup_by(|a, b| a.dist(*b) < 1e-9);
    if pts.len() >= 2 && pts[0].dist(*pts.last().unwrap()) < 1e-9 {
        pts.pop();
    }
    pts
}
