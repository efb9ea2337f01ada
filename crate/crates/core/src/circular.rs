//! Circular structure detection (perpendicular-bisector voting, radius
//! grouping, least-squares circle fit) and circular roof fitting over
//! radial height profiles.

use std::f64::consts::{PI, TAU};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CircularRoofType {
    Flat,
    Cone,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CircularRoofParams {
    Flat { z_roof: f64 },
    Cone { z_apex: f64, z_eave: f64 },
    Sphere { z_center_offset: f64, sphere_radius: f64 },
}

/// Detected circular primitive: circle geometry, optional inner radius for
/// rings and C shapes, arc coverage, and the fitted roof surface.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleModel {
    pub center: Point,
    /// Meters.
    pub radius: f64,
    pub inner_radius: Option<f64>,
    /// Radians, `end > start`, full circle = (0, 2*pi).
    pub arc: (f64, f64),
    pub roof_type: CircularRoofType,
    pub params: CircularRoofParams,
    pub terrain_z: f64,
    pub fit_residual: f64,
}

impl CircleModel {
    pub fn arc_contains(&self, azimuth: f64) -> bool {
        let (s, e) = self.arc;
        if e - s >= TAU - 1e-9 {
            return true;
        }
        let a = (azimuth - s).rem_euclid(TAU);
        a <= e - s + 1e-9
    }

    /// Roof surface height at a world point, `None` outside the footprint.
    pub fn height_at(&self, p: Point) -> Option<f64> {
        let d = p.dist(self.center);
        if d > self.radius {
            return None;
        }
        if let Some(inner) = self.inner_radius {
            if d < inner {
                return None;
            }
        }
        if !self.arc_contains((p.y - self.center.y).atan2(p.x - self.center.x)) {
            return None;
        }
        Some(match self.params {
            CircularRoofParams::Flat { z_roof } => z_roof,
            CircularRoofParams::Cone { z_apex, z_eave } => {
                z_apex + (z_eave - z_apex) * (d / self.radius)
            }
            CircularRoofParams::Sphere { z_center_offset, sphere_radius } => {
                z_center_offset + (sphere_radius * sphere_radius - d * d).max(0.0).sqrt()
            }
        })
    }
}

/// Height samples along one of the 8 radial directions, spaced one pixel
/// apart; distances in meters.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub azimuth_deg: f64,
    pub samples: Vec<(f64, f64)>,
    pub available: bool,
}

/// Candidate circle centers from perpendicular-bisector voting on a coarse
/// grid; `cell` is the coarse cell size in world units (4 pixels).
pub fn coarse_centers(keypoints: &[Point], cell: f64, cfg: &Config) -> Result<Vec<Point>> {
    if keypoints.len() < 4 {
        return Err(Error::Invalid(format!(
            "bisector voting needs at least 4 keypoints, got {}",
            keypoints.len()
        )));
    }
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in keypoints {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    min_x -= 2.0 * cell;
    min_y -= 2.0 * cell;
    max_x += 2.0 * cell;
    max_y += 2.0 * cell;
    let nx = ((max_x - min_x) / cell).ceil() as usize;
    let ny = ((max_y - min_y) / cell).ceil() as usize;
    let mut votes = vec![0u32; nx * ny];
    let diag = ((max_x - min_x).powi(2) + (max_y - min_y).powi(2)).sqrt();
    let n = keypoints.len();
    // coincident bisectors (opposite sides of a symmetric shape) count once
    let mut seen_lines = std::collections::BTreeSet::new();
    for i in 0..n {
        let a = keypoints[i];
        let b = keypoints[(i + 1) % n];
        let seg = b.sub(a);
        if seg.norm() < 1e-12 {
            continue;
        }
        let mid = a.add(b).scale(0.5);
        let dir = Point::new(-seg.y, seg.x).scale(1.0 / seg.norm());
        let angle = dir.y.atan2(dir.x).rem_euclid(std::f64::consts::PI);
        let normal = Point::new(-angle.sin(), angle.cos());
        let offset = mid.dot(normal);
        let key = ((angle / 1e-4).round() as i64, (offset / 1e-3).round() as i64);
        if !seen_lines.insert(key) {
            continue;
        }
        let mut touched = std::collections::BTreeSet::new();
        let step = cell / 3.0;
        let mut t = -diag;
        while t <= diag {
            let p = mid.add(dir.scale(t));
            let cx = ((p.x - min_x) / cell).floor();
            let cy = ((p.y - min_y) / cell).floor();
            if cx >= 0.0 && cy >= 0.0 && (cx as usize) < nx && (cy as usize) < ny {
                touched.insert((cx as usize, cy as usize));
            }
            t += step;
        }
        for (cx, cy) in touched {
            votes[cy * nx + cx] += 1;
        }
    }
    let threshold = cfg
        .circle_vote_min
        .max((cfg.circle_vote_frac * n as f64).ceil() as usize) as u32;
    let mut hits: Vec<(u32, usize)> = votes
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .map(|(i, &v)| (v, i))
        .collect();
    hits.sort_by_key(|&(v, i)| (std::cmp::Reverse(v), i));
    Ok(hits
        .into_iter()
        .map(|(_, i)| {
            Point::new(
                min_x + (i % nx) as f64 * cell + cell / 2.0,
                min_y + (i / nx) as f64 * cell + cell / 2.0,
            )
        })
        .collect())
}

/// Contiguous boundary run at a near-constant distance from a center.
#[derive(Debug, Clone)]
pub struct RadiusGroup {
    pub radius: f64,
    /// Keypoint indices supporting the group, boundary order.
    pub members: Vec<usize>,
    /// Member azimuths around the center, sorted ascending, radians.
    pub azimuths: Vec<f64>,
}

fn azimuth(center: Point, p: Point) -> f64 {
    (p.y - center.y).atan2(p.x - center.x).rem_euclid(TAU)
}

/// Angular span covered by sorted azimuths: full turn minus the largest
/// cyclic gap.
fn span_of(azimuths: &[f64]) -> f64 {
    if azimuths.len() < 2 {
        return 0.0;
    }
    TAU - max_gap(azimuths).0
}

/// (largest cyclic gap, index of the azimuth that opens it).
fn max_gap(sorted: &[f64]) -> (f64, usize) {
    let n = sorted.len();
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 0..n {
        let next = sorted[(i + 1) % n] + if i + 1 == n { TAU } else { 0.0 };
        let gap = next - sorted[i];
        if gap > best.0 {
            best = (gap, i);
        }
    }
    best
}

/// Split the boundary into runs whose center distance varies slowly;
/// each sufficiently long run becomes a radius group.
pub fn radius_groups(center: Point, keypoints: &[Point], cfg: &Config) -> Vec<RadiusGroup> {
    let n = keypoints.len();
    if n < 3 {
        return Vec::new();
    }
    let dist: Vec<f64> = keypoints.iter().map(|p| p.dist(center)).collect();
    // edge i joins keypoints i and i+1; smooth when the distance gradient
    // is small relative to the local radius
    let smooth: Vec<bool> = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            (dist[j] - dist[i]).abs() < cfg.circle_grad_tol * 0.5 * (dist[i] + dist[j])
        })
        .collect();
    if smooth.iter().all(|&s| s) {
        let azs = {
            let mut a: Vec<f64> = keypoints.iter().map(|p| azimuth(center, *p)).collect();
            a.sort_by(f64::total_cmp);
            a
        };
        return vec![RadiusGroup {
            radius: dist.iter().sum::<f64>() / n as f64,
            members: (0..n).collect(),
            azimuths: azs,
        }];
    }
    // walk runs of consecutive smooth edges, starting after a rough edge
    let mut groups = Vec::new();
    let mut start = (0..n).find(|&i| !smooth[i]).unwrap();
    let mut run: Vec<usize> = Vec::new();
    for k in 0..n {
        let i = (start + 1 + k) % n;
        run.push(i);
        let closes = !smooth[i];
        if closes {
            if run.len() >= 2 {
                let mut azs: Vec<f64> =
                    run.iter().map(|&m| azimuth(center, keypoints[m])).collect();
                azs.sort_by(f64::total_cmp);
                if span_of(&azs) >= PI / 2.0 {
                    groups.push(RadiusGroup {
                        radius: run.iter().map(|&m| dist[m]).sum::<f64>() / run.len() as f64,
                        members: run.clone(),
                        azimuths: azs,
                    });
                }
            }
            run.clear();
        }
    }
    let _ = &mut start;
    groups
}

/// Drop groups whose supporters cover less than a quarter turn or are
/// sporadically placed (any interior gap beyond the largest one exceeding
/// the gap threshold).
pub fn exclude_noncandidate(groups: Vec<RadiusGroup>, cfg: &Config) -> Vec<RadiusGroup> {
    let gap_limit = cfg.circle_gap_deg.to_radians();
    groups
        .into_iter()
        .filter(|g| {
            if g.azimuths.len() < 3 || span_of(&g.azimuths) < PI / 2.0 {
                return false;
            }
            let (big, big_i) = max_gap(&g.azimuths);
            let n = g.azimuths.len();
            for i in 0..n {
                if i == big_i {
                    continue;
                }
                let next = g.azimuths[(i + 1) % n] + if i + 1 == n { TAU } else { 0.0 };
                if next - g.azimuths[i] > gap_limit.min(big) {
                    return false;
                }
            }
            true
        })
        .collect()
}

/// Gauss-Newton minimization of Eq. 3.5's algebraic circle error from a
/// coarse initialization.
pub fn fit_circle_ls(points: &[Point], init: (Point, f64)) -> Result<(Point, f64)> {
    if points.len() < 3 {
        return Err(Error::Invalid("circle fit needs at least 3 points".into()));
    }
    let (mut c, mut r) = init;
    for _ in 0..100 {
        // normal equations for residuals e_i = |p_i - c|^2 - r^2
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jte = [0.0f64; 3];
        for p in points {
            let dx = p.x - c.x;
            let dy = p.y - c.y;
            let e = dx * dx + dy * dy - r * r;
            let row = [-2.0 * dx, -2.0 * dy, -2.0 * r];
            for a in 0..3 {
                for b in 0..3 {
                    jtj[a][b] += row[a] * row[b];
                }
                jte[a] += row[a] * e;
            }
        }
        let delta = solve3(&jtj, &[-jte[0], -jte[1], -jte[2]])
            .ok_or_else(|| Error::Singular("degenerate circle fit (collinear points?)".into()))?;
        c.x += delta[0];
        c.y += delta[1];
        r += delta[2];
        if !(c.x.is_finite() && c.y.is_finite() && r.is_finite()) {
            return Err(Error::FitRejected("circle fit diverged".into()));
        }
        if delta.iter().map(|d| d * d).sum::<f64>().sqrt() < 1e-6 {
            return Ok((c, r.abs()));
        }
    }
    Err(Error::FitRejected("circle fit did not converge in 100 iterations".into()))
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut out = [0.0; 3];
    for k in 0..3 {
        let mut m = *a;
        for r in 0..3 {
            m[r][k] = b[r];
        }
        out[k] = det(&m) / d;
    }
    Some(out)
}

/// Arc covered by the supporters: the largest azimuthal gap is the
/// complement; gaps under the threshold mean a full circle.
pub fn arc_range(center: Point, supporters: &[Point], cfg: &Config) -> (f64, f64) {
    let mut azs: Vec<f64> = supporters.iter().map(|p| azimuth(center, *p)).collect();
    azs.sort_by(f64::total_cmp);
    if azs.len() < 2 {
        return (0.0, TAU);
    }
    let (gap, gi) = max_gap(&azs);
    if gap < cfg.circle_gap_deg.to_radians() {
        return (0.0, TAU);
    }
    let start = azs[(gi + 1) % azs.len()];
    let end = azs[gi];
    let end = if end <= start { end + TAU } else { end };
    (start, end)
}

/// Sample the DSM outward from the circle center along 8 azimuths 45
/// degrees apart; a direction is available only inside the arc, and
/// sampling stops where the mask ends.
pub fn radial_profiles(
    circle: &CircleModel,
    dsm: &Grid<f64>,
    mask: &Grid<u8>,
) -> Result<Vec<RadialProfile>> {
    let (cc, cr) = dsm.transform.world_to_pixel(circle.center);
    if cc < 0.0 || cr < 0.0 || cc >= dsm.width as f64 || cr >= dsm.height as f64 {
        return Err(Error::Invalid("circle center outside the raster".into()));
    }
    let ps = dsm.transform.pixel_size_x;
    // interpolate heights from building pixels only: nearest-neighbor reads
    // jitter a sloped profile enough to fake curvature, and pixels past the
    // mask hold terrain
    let mut zgrid = dsm.clone();
    let nd = zgrid.nodata.unwrap_or(crate::scene::HEIGHT_NODATA);
    zgrid.nodata = Some(nd);
    for (z, &m) in zgrid.data.iter_mut().zip(&mask.data) {
        if m == 0 {
            *z = nd;
        }
    }
    let mut out = Vec::with_capacity(8);
    for k in 0..8 {
        let az_deg = 45.0 * k as f64;
        let az = az_deg.to_radians();
        let available = circle.arc_contains(az);
        let mut samples = Vec::new();
        if available {
            let dir = Point::new(az.cos(), az.sin());
            let max_d = circle.radius + 3.0 * ps;
            let mut d = ps;
            while d <= max_d {
                let p = circle.center.add(dir.scale(d));
                match mask.sample_nearest(p, 0) {
                    Some(m) if m != 0 => {}
                    _ => break,
                }
                if let Some(z) = zgrid.sample_bilinear(p, 0) {
                    samples.push((d, z));
                }
                d += ps;
            }
        }
        out.push(RadialProfile { azimuth_deg: az_deg, samples, available });
    }
    Ok(out)
}

const MIN_PROFILES: usize = 2;
const MIN_PROFILE_SAMPLES: usize = 5;

/// Pooled finite differences over the available profiles: low slope means
/// flat, low curvature means cone, otherwise sphere. Derivatives are per
/// pixel step, so thresholds are in m/px and m/px^2.
pub fn classify_circular_roof(profiles: &[RadialProfile], cfg: &Config) -> Result<CircularRoofType> {
    let usable: Vec<&RadialProfile> = profiles
        .iter()
        .filter(|p| p.available && p.samples.len() >= MIN_PROFILE_SAMPLES)
        .collect();
    if usable.len() < MIN_PROFILES {
        return Err(Error::FitRejected(format!(
            "only {} usable radial profiles",
            usable.len()
        )));
    }
    let mut slope_sum = 0.0;
    let mut slope_n = 0usize;
    let mut curv_sum = 0.0;
    let mut curv_n = 0usize;
    for p in &usable {
        let h: Vec<f64> = p.samples.iter().map(|s| s.1).collect();
        for w in h.windows(2) {
            slope_sum += (w[1] - w[0]).abs();
            slope_n += 1;
        }
        for w in h.windows(3) {
            curv_sum += (w[2] - 2.0 * w[1] + w[0]).abs();
            curv_n += 1;
        }
    }
    let mean_slope = slope_sum / slope_n.max(1) as f64;
    if mean_slope < cfg.circle_flat_slope {
        return Ok(CircularRoofType::Flat);
    }
    let mean_curv = curv_sum / curv_n.max(1) as f64;
    if mean_curv < cfg.circle_cone_curv {
        Ok(CircularRoofType::Cone)
    } else {
        Ok(CircularRoofType::Sphere)
    }
}

/// Deterministic consensus roof fit over the pooled (distance, height)
/// samples: exhaustive candidate enumeration replaces random sampling, the
/// best-supported candidate is refined by least squares on its inliers.
pub fn fit_circular_roof(
    profiles: &[RadialProfile],
    roof_type: CircularRoofType,
    radius_m: f64,
    cfg: &Config,
) -> Result<(CircularRoofParams, f64)> {
    let pts: Vec<(f64, f64)> = profiles
        .iter()
        .filter(|p| p.available)
        .flat_map(|p| p.samples.iter().copied())
        .collect();
    if pts.len() < MIN_PROFILE_SAMPLES {
        return Err(Error::FitRejected("too few samples for a circular roof fit".into()));
    }
    let band = cfg.ransac_band_m;
    let need = (cfg.ransac_min_inlier_frac * pts.len() as f64).ceil() as usize;
    let inliers_of = |pred: &dyn Fn(f64) -> f64| -> Vec<usize> {
        (0..pts.len())
            .filter(|&i| (pts[i].1 - pred(pts[i].0)).abs() <= band)
            .collect()
    };
    let rms = |idx: &[usize], pred: &dyn Fn(f64) -> f64| -> f64 {
        (idx.iter().map(|&i| (pts[i].1 - pred(pts[i].0)).powi(2)).sum::<f64>()
            / idx.len().max(1) as f64)
            .sqrt()
    };
    match roof_type {
        CircularRoofType::Flat => {
            let mut best: Option<(usize, f64)> = None; // (count, z)
            for &(_, z) in &pts {
                let count = pts.iter().filter(|p| (p.1 - z).abs() <= band).count();
                if best.map_or(true, |(bc, bz)| count > bc || (count == bc && z < bz)) {
                    best = Some((count, z));
                }
            }
            let (count, z0) = best.unwrap();
            if count < need {
                return Err(Error::FitRejected("flat circular fit under 50% inliers".into()));
            }
            let idx = inliers_of(&|_| z0);
            let z = idx.iter().map(|&i| pts[i].1).sum::<f64>() / idx.len() as f64;
            Ok((CircularRoofParams::Flat { z_roof: z }, rms(&idx, &|_| z)))
        }
        CircularRoofType::Cone => {
            let mut best: Option<(usize, usize, usize)> = None; // (count, i, j)
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    if (pts[j].0 - pts[i].0).abs() < 1e-9 {
                        continue;
                    }
                    let k = (pts[j].1 - pts[i].1) / (pts[j].0 - pts[i].0);
                    let b = pts[i].1 - k * pts[i].0;
                    let count = pts.iter().filter(|p| (p.1 - (k * p.0 + b)).abs() <= band).count();
                    if best.map_or(true, |(bc, _, _)| count > bc) {
                        best = Some((count, i, j));
                    }
                }
            }
            let (count, i, j) = best.ok_or_else(|| {
                Error::FitRejected("no line candidate for cone fit".into())
            })?;
            if count < need {
                return Err(Error::FitRejected("cone fit under 50% inliers".into()));
            }
            let k0 = (pts[j].1 - pts[i].1) / (pts[j].0 - pts[i].0);
            let b0 = pts[i].1 - k0 * pts[i].0;
            let idx = inliers_of(&|d| k0 * d + b0);
            // least-squares line refit on the inliers
            let n = idx.len() as f64;
            let sd: f64 = idx.iter().map(|&i| pts[i].0).sum();
            let sh: f64 = idx.iter().map(|&i| pts[i].1).sum();
            let sdd: f64 = idx.iter().map(|&i| pts[i].0 * pts[i].0).sum();
            let sdh: f64 = idx.iter().map(|&i| pts[i].0 * pts[i].1).sum();
            let denom = n * sdd - sd * sd;
            if denom.abs() < 1e-12 {
                return Err(Error::Singular("degenerate cone line fit".into()));
            }
            let k = (n * sdh - sd * sh) / denom;
            let b = (sh - k * sd) / n;
            let z_apex = b;
            let z_eave = z_apex + k * radius_m;
            Ok((
                CircularRoofParams::Cone { z_apex, z_eave },
                rms(&idx, &|d| k * d + b),
            ))
        }
        CircularRoofType::Sphere => {
            // cross-section circle centered on the axis: d^2 + (h-h0)^2 = R^2
            let mut best: Option<(usize, f64, f64)> = None; // (count, h0, rr)
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let (d1, h1) = pts[i];
                    let (d2, h2) = pts[j];
                    if (h1 - h2).abs() < 1e-9 {
                        continue;
                    }
                    let h0 = (h1 * h1 - h2 * h2 + d1 * d1 - d2 * d2) / (2.0 * (h1 - h2));
                    let rr = (d1 * d1 + (h1 - h0).powi(2)).sqrt();
                    if !(h0.is_finite() && rr.is_finite()) || rr <= 0.0 {
                        continue;
                    }
                    let pred = move |d: f64| h0 + (rr * rr - d * d).max(0.0).sqrt();
                    let count = pts.iter().filter(|p| (p.1 - pred(p.0)).abs() <= band).count();
                    if best.map_or(true, |(bc, _, _)| count > bc) {
                        best = Some((count, h0, rr));
                    }
                }
            }
            let (count, h0, rr) = best
                .ok_or_else(|| Error::FitRejected("no sphere candidate".into()))?;
            if count < need {
                return Err(Error::FitRejected("sphere fit under 50% inliers".into()));
            }
            let pred0 = |d: f64| h0 + (rr * rr - d * d).max(0.0).sqrt();
            let idx = inliers_of(&pred0);
            // Kasa-style linear refit: h^2 + d^2 = 2 h h0 + (R^2 - h0^2)
            let n = idx.len() as f64;
            let sh: f64 = idx.iter().map(|&i| pts[i].1).sum();
            let shh: f64 = idx.iter().map(|&i| pts[i].1 * pts[i].1).sum();
            let sy: f64 = idx.iter().map(|&i| pts[i].0.powi(2) + pts[i].1.powi(2)).sum();
            let shy: f64 = idx
                .iter()
                .map(|&i| pts[i].1 * (pts[i].0.powi(2) + pts[i].1.powi(2)))
                .sum();
            let denom = n * shh - sh * sh;
            let (h0f, rrf) = if denom.abs() < 1e-12 {
                (h0, rr)
            } else {
                let a = (n * shy - sh * sy) / denom; // 2 h0
                let b = (sy - a * sh) / n; // R^2 - h0^2
                let h0f = a / 2.0;
                let rsq = b + h0f * h0f;
                if rsq > 0.0 {
                    (h0f, rsq.sqrt())
                } else {
                    (h0, rr)
                }
            };
            let pred = |d: f64| h0f + (rrf * rrf - d * d).max(0.0).sqrt();
            Ok((
                CircularRoofParams::Sphere { z_center_offset: h0f, sphere_radius: rrf },
                rms(&idx, &pred),
            ))
        }
    }
}

/// Full per-instance circular detection: boundary keypoints, bisector
/// voting, radius grouping, least-squares refinement, arc and roof fitting.
/// `None` when the instance shows no circular structure.
pub const CIRCLE_DP_EPSILON_PX: f64 = 1.0;

pub fn detect_circle(
    inst_mask: &Grid<u8>,
    dsm: &Grid<f64>,
    cfg: &Config,
) -> Result<Option<CircleModel>> {
    use crate::segmentation::connected_components;

    let comp = connected_components(inst_mask);
    if comp.count == 0 {
        return Ok(None);
    }
    let boundary = match crate::polygonize::trace_boundary(&comp, 1) {
        Ok(b) => b,
        Err(_) => return Ok(None),
    };
    let ps = inst_mask.transform.pixel_size_x;
    // a 1-px epsilon keeps chords on an r >= 13 px circle under the 45
    // degree sporadic-gap rule; the coarser rectangle epsilon does not
    let eps = cfg.dp_epsilon_px.min(CIRCLE_DP_EPSILON_PX) * ps;
    let keypoints = match crate::polygonize::simplify_dp(&boundary, eps) {
        Ok(k) => k,
        Err(_) => return Ok(None),
    };
    if keypoints.len() < 4 {
        return Ok(None);
    }
    let candidates = coarse_centers(&keypoints, 4.0 * ps, cfg)?;
    for cand in candidates.into_iter().take(5) {
        let groups = exclude_noncandidate(radius_groups(cand, &keypoints, cfg), cfg);
        if groups.is_empty() {
            continue;
        }
        // outer group has the largest radius; a second group marks a ring
        let outer = groups
            .iter()
            .max_by(|a, b| a.radius.total_cmp(&b.radius))
            .unwrap();
        let supporters: Vec<Point> = outer.members.iter().map(|&i| keypoints[i]).collect();
        let Ok((center, radius)) = fit_circle_ls(&supporters, (cand, outer.radius)) else {
            continue;
        };
        let resid = supporters
            .iter()
            .map(|p| (p.dist(center) - radius).abs())
            .sum::<f64>()
            / supporters.len() as f64;
        if resid > cfg.circle_fit_resid_px * ps {
            continue;
        }
        let arc = arc_range(center, &supporters, cfg);
        if arc.1 - arc.0 <= PI / 2.0 {
            continue;
        }
        let inner_radius = groups
            .iter()
            .filter(|g| g.radius < radius - 2.0 * ps)
            .map(|g| g.radius)
            .min_by(f64::total_cmp);
        let mut model = CircleModel {
            center,
            radius,
            inner_radius,
            arc,
            roof_type: CircularRoofType::Flat,
            params: CircularRoofParams::Flat { z_roof: 0.0 },
            terrain_z: 0.0,
            fit_residual: f64::NAN,
        };
        let profiles = match radial_profiles(&model, dsm, inst_mask) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let Ok(rt) = classify_circular_roof(&profiles, cfg) else {
            continue;
        };
        let Ok((params, residual)) = fit_circular_roof(&profiles, rt, radius, cfg) else {
            continue;
        };
        model.roof_type = rt;
        model.params = params;
        model.fit_residual = residual;
        model.terrain_z = circle_terrain(&model, dsm);
        return Ok(Some(model));
    }
    Ok(None)
}

/// Minimum DSM over a thin ring just outside the circle.
fn circle_terrain(m: &CircleModel, dsm: &Grid<f64>) -> f64 {
    let ps = dsm.transform.pixel_size_x;
    let r0 = m.radius + 2.0 * ps;
    let r1 = m.radius + 7.0 * ps;
    let mut best = f64::INFINITY;
    let steps = 64;
    for k in 0..steps {
        let a = TAU * k as f64 / steps as f64;
        for t in 0..5 {
            let d = r0 + (r1 - r0) * t as f64 / 4.0;
            let p = m.center.add(Point::new(a.cos(), a.sin()).scale(d));
            if let Some(z) = dsm.sample_nearest(p, 0) {
                if !dsm.is_nodata(z) {
                    best = best.min(z);
                }
            }
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}
