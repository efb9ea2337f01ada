//! Grid-pyramid decomposition of regularized footprints into oriented
//! building rectangles, plus the Eq. 2.2 merge step that undoes
//! over-segmentation.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geom::{fold180, fold_diff180, point_in_polygon};
use crate::grid::{rotate_resample, Grid, Sampling};
use crate::polygonize::BuildingPolygon;
use crate::Point;

/// Axis-aligned rectangle in pixel coordinates, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub c0: usize,
    pub r0: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn c1(&self) -> usize {
        self.c0 + self.w
    }

    pub fn r1(&self) -> usize {
        self.r0 + self.h
    }
}

/// Oriented building rectangle with the per-rectangle features used by the
/// orientation refinement and the merge test.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    /// World-space center.
    pub center: Point,
    /// Extent along the orientation axis, meters; `length >= width`.
    pub length: f64,
    pub width: f64,
    /// Degrees in [0, 180), direction of the length axis.
    pub orientation: f64,
    pub mean_color: [f64; 3],
    pub color_std: [f64; 3],
    pub mean_height: f64,
    pub parent_instance: u32,
}

impl Rect {
    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    fn axes(&self) -> (Point, Point) {
        let a = self.orientation.to_radians();
        (
            Point::new(a.cos(), a.sin()),
            Point::new(-a.sin(), a.cos()),
        )
    }

    /// World point of local rectangle coordinates, u along the length axis.
    pub fn local_to_world(&self, u: f64, v: f64) -> Point {
        let (ua, va) = self.axes();
        self.center.add(ua.scale(u)).add(va.scale(v))
    }

    pub fn world_to_local(&self, p: Point) -> (f64, f64) {
        let (ua, va) = self.axes();
        let d = p.sub(self.center);
        (d.dot(ua), d.dot(va))
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Point; 4] {
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [
            self.local_to_world(-hl, -hw),
            self.local_to_world(hl, -hw),
            self.local_to_world(hl, hw),
            self.local_to_world(-hl, hw),
        ]
    }

    pub fn contains_world(&self, p: Point) -> bool {
        let (u, v) = self.world_to_local(p);
        u.abs() <= self.length / 2.0 && v.abs() <= self.width / 2.0
    }
}

/// Largest axis-aligned rectangle of ones; ties broken by smaller top-left
/// row, then column. Histogram-of-heights sweep, O(width * height).
pub fn max_inner_rect(mask: &Grid<u8>) -> Result<PixelRect> {
    let (w, h) = (mask.width, mask.height);
    let mut heights = vec![0usize; w];
    let mut best: Option<PixelRect> = None;
    let consider = |cand: PixelRect, best: &mut Option<PixelRect>| {
        if cand.area() == 0 {
            return;
        }
        let better = match best {
            None => true,
            Some(b) => {
                (cand.area(), std::cmp::Reverse(cand.r0), std::cmp::Reverse(cand.c0))
                    > (b.area(), std::cmp::Reverse(b.r0), std::cmp::Reverse(b.c0))
            }
        };
        if better {
            *best = Some(cand);
        }
    };
    for r in 0..h {
        for c in 0..w {
            heights[c] = if mask.get(c, r, 0) != 0 { heights[c] + 1 } else { 0 };
        }
        // stack of (start column, height), heights strictly increasing
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for c in 0..=w {
            let cur = if c < w { heights[c] } else { 0 };
            let mut start = c;
            while let Some(&(s, hh)) = stack.last() {
                if hh <= cur {
                    break;
                }
                stack.pop();
                consider(
                    PixelRect { c0: s, r0: r + 1 - hh, w: c - s, h: hh },
                    &mut best,
                );
                start = s;
            }
            if cur > 0 && stack.last().map_or(true, |&(_, hh)| hh < cur) {
                stack.push((start, cur));
            }
        }
    }
    best.ok_or_else(|| Error::Invalid("max_inner_rect on empty mask".into()))
}

/// Brute-force oracle for [`max_inner_rect`]: grows every top-left corner,
/// same tie-break. Quadratic in the mask area; for tests.
pub fn max_inner_rect_brute(mask: &Grid<u8>) -> Result<PixelRect> {
    let (w, h) = (mask.width, mask.height);
    let mut best: Option<PixelRect> = None;
    for r0 in 0..h {
        for c0 in 0..w {
            if mask.get(c0, r0, 0) == 0 {
                continue;
            }
            let mut max_w = w - c0;
            for hh in 1..=(h - r0) {
                let r = r0 + hh - 1;
                let mut ww = 0;
                while ww < max_w && mask.get(c0 + ww, r, 0) != 0 {
                    ww += 1;
                }
                max_w = ww;
                if max_w == 0 {
                    break;
                }
                let cand = PixelRect { c0, r0, w: max_w, h: hh };
                let better = match &best {
                    None => true,
                    Some(b) => cand.area() > b.area(),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
    }
    best.ok_or_else(|| Error::Invalid("max_inner_rect on empty mask".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SepAxis {
    /// Separator along a column index (splits the x axis).
    Col,
    /// Separator along a row index (splits the y axis).
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Separator {
    pub axis: SepAxis,
    pub index: usize,
}

const COLOR_BUFFER_PX: usize = 3;

/// Candidate split lines: rows/columns whose mean DSM gradient magnitude
/// exceeds the threshold, thinned by non-maximum suppression, and confirmed
/// by a color difference between 3-px buffers on both sides.
pub fn candidate_separators(
    dsm: &Grid<f64>,
    ortho: &Grid<u8>,
    mask: &Grid<u8>,
    cfg: &Config,
) -> Vec<Separator> {
    let mut out = Vec::new();
    for axis in [SepAxis::Col, SepAxis::Row] {
        let n = match axis {
            SepAxis::Col => dsm.width,
            SepAxis::Row => dsm.height,
        };
        if n < 3 {
            continue;
        }
        let m = match axis {
            SepAxis::Col => dsm.height,
            SepAxis::Row => dsm.width,
        };
        let at = |i: usize, j: usize| match axis {
            SepAxis::Col => (i, j),
            SepAxis::Row => (j, i),
        };
        let mut score = vec![0.0f64; n];
        for i in 1..n - 1 {
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for j in 0..m {
                let (c, r) = at(i, j);
                if mask.get(c, r, 0) == 0 {
                    continue;
                }
                let (cp, rp) = at(i + 1, j);
                let (cm, rm) = at(i - 1, j);
                if mask.get(cm, rm, 0) == 0 || mask.get(cp, rp, 0) == 0 {
                    continue;
                }
                let a = dsm.get(cm, rm, 0);
                let b = dsm.get(cp, rp, 0);
                if dsm.is_nodata(a) || dsm.is_nodata(b) {
                    continue;
                }
                sum += ((b - a) / 2.0).abs();
                cnt += 1;
            }
            if cnt > 0 {
                score[i] = sum / cnt as f64;
            }
        }
        let half = cfg.nms_window_px / 2;
        for i in 1..n - 1 {
            if score[i] <= cfg.dsm_grad_m {
                continue;
            }
            // non-maximum suppression: strictly beat earlier peers, not be
            // beaten by later ones (ties resolve to the first index)
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let mut keep = true;
            for k in lo..=hi {
                if (k < i && score[k] >= score[i]) || (k > i && score[k] > score[i]) {
                    keep = false;
                    break;
                }
            }
            if !keep {
                continue;
            }
            if i < COLOR_BUFFER_PX || i + COLOR_BUFFER_PX >= n {
                continue;
            }
            let side_mean = |range: std::ops::RangeInclusive<usize>| -> Option<[f64; 3]> {
                let mut sum = [0.0f64; 3];
                let mut cnt = 0usize;
                for k in range {
                    for j in 0..m {
                        let (c, r) = at(k, j);
                        if mask.get(c, r, 0) == 0 {
                            continue;
                        }
                        for b in 0..3 {
                            sum[b] += ortho.get(c, r, b) as f64;
                        }
                        cnt += 1;
                    }
                }
                if cnt == 0 {
                    return None;
                }
                Some(sum.map(|s| s / cnt as f64))
            };
            let (Some(left), Some(right)) = (
                side_mean(i - COLOR_BUFFER_PX..=i - 1),
                side_mean(i + 1..=i + COLOR_BUFFER_PX),
            ) else {
                continue;
            };
            let diff = (0..3)
                .map(|b| (left[b] - right[b]).powi(2))
                .sum::<f64>()
                .sqrt();
            if diff > cfg.t_d {
                out.push(Separator { axis, index: i });
            }
        }
    }
    out
}

const MIN_RESIDUAL_PX: usize = 10;
const REFINE_PX: i64 = 2;

/// One 2x pyramid step. Coarse cells average only the masked children so
/// boundary cells do not blend building and ground values; the coarse mask
/// is the 2x2 majority.
fn downsample_level(
    dsm: &Grid<f64>,
    ortho: &Grid<u8>,
    mask: &Grid<u8>,
) -> (Grid<f64>, Grid<u8>, Grid<u8>) {
    let (w, h) = (((mask.width + 1) / 2).max(1), ((mask.height + 1) / 2).max(1));
    let mut t = mask.transform.clone();
    t.pixel_size_x *= 2.0;
    t.pixel_size_y *= 2.0;
    let mut out_mask = Grid::filled(w, h, 1, 0u8, t.clone());
    let mut out_dsm = Grid::filled(w, h, 1, dsm.nodata.unwrap_or(0.0), t.clone());
    out_dsm.nodata = dsm.nodata;
    let mut out_ortho = Grid::filled(w, h, ortho.bands, 0u8, t);
    for r in 0..h {
        for c in 0..w {
            let mut children = Vec::with_capacity(4);
            let mut masked = 0usize;
            for (dc, dr) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (cc, rr) = (2 * c + dc, 2 * r + dr);
                if cc < mask.width && rr < mask.height {
                    let m = mask.get(cc, rr, 0) != 0;
                    children.push((cc, rr, m));
                    masked += m as usize;
                }
            }
            if masked >= 2 {
                out_mask.set(c, r, 0, 1);
            }
            let use_masked = masked > 0;
            let mut zsum = 0.0;
            let mut zcnt = 0usize;
            let mut csum = vec![0.0f64; ortho.bands];
            let mut ccnt = 0usize;
            for &(cc, rr, m) in &children {
                if use_masked && !m {
                    continue;
                }
                let z = dsm.get(cc, rr, 0);
                if !dsm.is_nodata(z) {
                    zsum += z;
                    zcnt += 1;
                }
                for b in 0..ortho.bands {
                    csum[b] += ortho.get(cc, rr, b) as f64;
                }
                ccnt += 1;
            }
            if zcnt > 0 {
                out_dsm.set(c, r, 0, zsum / zcnt as f64);
            }
            if ccnt > 0 {
                for b in 0..ortho.bands {
                    out_ortho.set(c, r, b, (csum[b] / ccnt as f64).round() as u8);
                }
            }
        }
    }
    (out_dsm, out_ortho, out_mask)
}

/// Per-rectangle appearance/height features, sampled from the source
/// rasters on a pixel-pitch lattice over the rectangle.
pub fn rect_features(rect: &mut Rect, dsm: &Grid<f64>, ortho: &Grid<u8>) {
    let ps = dsm.transform.pixel_size_x;
    let nu = (rect.length / ps).round().max(1.0) as usize;
    let nv = (rect.width / ps).round().max(1.0) as usize;
    let mut csum = [0.0f64; 3];
    let mut csq = [0.0f64; 3];
    let mut ccnt = 0usize;
    let mut hsum = 0.0;
    let mut hcnt = 0usize;
    for iv in 0..nv {
        let v = -rect.width / 2.0 + (iv as f64 + 0.5) * rect.width / nv as f64;
        for iu in 0..nu {
            let u = -rect.length / 2.0 + (iu as f64 + 0.5) * rect.length / nu as f64;
            let p = rect.local_to_world(u, v);
            if let Some(z) = dsm.sample_nearest(p, 0) {
                if !dsm.is_nodata(z) {
                    hsum += z;
                    hcnt += 1;
                }
            }
            if let Some(r0) = ortho.sample_nearest(p, 0) {
                let g0 = ortho.sample_nearest(p, 1).unwrap_or(r0);
                let b0 = ortho.sample_nearest(p, 2).unwrap_or(r0);
                for (b, val) in [r0, g0, b0].iter().enumerate() {
                    csum[b] += *val as f64;
                    csq[b] += (*val as f64).powi(2);
                }
                ccnt += 1;
            }
        }
    }
    if hcnt > 0 {
        rect.mean_height = hsum / hcnt as f64;
    }
    if ccnt > 0 {
        for b in 0..3 {
            let mean = csum[b] / ccnt as f64;
            rect.mean_color[b] = mean;
            rect.color_std[b] = (csq[b] / ccnt as f64 - mean * mean).max(0.0).sqrt();
        }
    }
}

/// Decompose one regularized footprint into oriented rectangles: rotate to
/// the main orientation, peel maximum inner rectangles at the top pyramid
/// level between candidate separators, project down and refine edges +-2 px
/// against the full-resolution mask.
pub fn decompose_pyramid(
    poly: &BuildingPolygon,
    dsm: &Grid<f64>,
    ortho: &Grid<u8>,
    cfg: &Config,
) -> Result<Vec<Rect>> {
    let theta = *poly
        .main_orientations
        .first()
        .ok_or_else(|| Error::Invalid("polygon has no main orientation".into()))?;
    if poly.vertices.len() < 3 {
        return Err(Error::Invalid("degenerate polygon".into()));
    }
    let pivot = {
        let mut s = Point::new(0.0, 0.0);
        for v in &poly.vertices {
            s = s.add(*v);
        }
        s.scale(1.0 / poly.vertices.len() as f64)
    };
    // crop the rasters around the footprint before rotating
    let margin = 2 * cfg.dilation_px as i64;
    let (mut c0, mut c1, mut r0, mut r1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
    for v in &poly.vertices {
        let (pc, pr) = dsm.transform.world_to_pixel(*v);
        c0 = c0.min(pc.floor() as i64);
        c1 = c1.max(pc.ceil() as i64);
        r0 = r0.min(pr.floor() as i64);
        r1 = r1.max(pr.ceil() as i64);
    }
    let c0 = (c0 - margin).clamp(0, dsm.width as i64) as usize;
    let r0 = (r0 - margin).clamp(0, dsm.height as i64) as usize;
    let c1 = (c1 + margin).clamp(0, dsm.width as i64) as usize;
    let r1 = (r1 + margin).clamp(0, dsm.height as i64) as usize;
    if c1 <= c0 || r1 <= r0 {
        return Ok(Vec::new());
    }
    let dsm_c = dsm.crop(c0, r0, c1 - c0, r1 - r0);
    let ortho_c = ortho.crop(c0, r0, c1 - c0, r1 - r0);
    let rot_dsm = rotate_resample(&dsm_c, -theta, pivot, Sampling::Bilinear)?;
    let rot_ortho = rotate_resample(&ortho_c, -theta, pivot, Sampling::Bilinear)?;
    let rad = (-theta).to_radians();
    let verts_rot: Vec<Point> = poly
        .vertices
        .iter()
        .map(|v| v.rotate_around(pivot, rad))
        .collect();
    let mut mask = Grid::filled(rot_dsm.width, rot_dsm.height, 1, 0u8, rot_dsm.transform.clone());
    for r in 0..mask.height {
        for c in 0..mask.width {
            if point_in_polygon(mask.transform.pixel_center(c, r), &verts_rot) {
                mask.set(c, r, 0, 1);
            }
        }
    }
    // pyramid: top level at 1 / 2^(levels-1) resolution
    let mut top_mask = mask.clone();
    let mut top_dsm = rot_dsm;
    let mut top_ortho = rot_ortho;
    for _ in 1..cfg.pyramid_levels {
        (top_dsm, top_ortho, top_mask) = downsample_level(&top_dsm, &top_ortho, &top_mask);
    }
    let scale = 1usize << (cfg.pyramid_levels - 1);
    for sep in candidate_separators(&top_dsm, &top_ortho, &top_mask, cfg) {
        match sep.axis {
            SepAxis::Col => {
                for r in 0..top_mask.height {
                    top_mask.set(sep.index, r, 0, 0);
                }
            }
            SepAxis::Row => {
                for c in 0..top_mask.width {
                    top_mask.set(c, sep.index, 0, 0);
                }
            }
        }
    }
    // peel maximum inner rectangles until the residue is negligible
    let mut peeled: Vec<PixelRect> = Vec::new();
    let mut residual = (0..top_mask.height)
        .flat_map(|r| (0..top_mask.width).map(move |c| (c, r)))
        .filter(|&(c, r)| top_mask.get(c, r, 0) != 0)
        .count();
    while residual >= MIN_RESIDUAL_PX {
        let pr = max_inner_rect(&top_mask)?;
        for r in pr.r0..pr.r1() {
            for c in pr.c0..pr.c1() {
                top_mask.set(c, r, 0, 0);
            }
        }
        residual -= pr.area();
        // slivers from rasterization raggedness are residue, not parts
        if pr.area() >= MIN_RESIDUAL_PX && pr.w.min(pr.h) >= 2 {
            peeled.push(pr);
        }
    }
    // project to full resolution, largest first, refine edges against the
    // full-resolution mask without ever claiming an occupied pixel
    peeled.sort_by_key(|p| (std::cmp::Reverse(p.area()), p.r0, p.c0));
    let mut occupied = Grid::filled(mask.width, mask.height, 1, 0u8, mask.transform.clone());
    let mut out = Vec::new();
    for pr in peeled {
        let mut fr = PixelRect {
            c0: (pr.c0 * scale).min(mask.width),
            r0: (pr.r0 * scale).min(mask.height),
            w: 0,
            h: 0,
        };
        fr.w = (pr.c1() * scale).min(mask.width) - fr.c0;
        fr.h = (pr.r1() * scale).min(mask.height) - fr.r0;
        if fr.area() == 0 {
            continue;
        }
        refine_rect(&mut fr, &mask, &occupied);
        if fr.area() == 0 {
            continue;
        }
        for r in fr.r0..fr.r1() {
            for c in fr.c0..fr.c1() {
                occupied.set(c, r, 0, 1);
            }
        }
        let ps = mask.transform.pixel_size_x;
        let center_rot = mask
            .transform
            .pixel_to_world(fr.c0 as f64 + fr.w as f64 / 2.0, fr.r0 as f64 + fr.h as f64 / 2.0);
        let center = center_rot.rotate_around(pivot, theta.to_radians());
        let (len_px, wid_px, orientation) = if fr.w >= fr.h {
            (fr.w, fr.h, fold180(theta))
        } else {
            (fr.h, fr.w, fold180(theta + 90.0))
        };
        let mut rect = Rect {
            center,
            length: len_px as f64 * ps,
            width: wid_px as f64 * ps,
            orientation,
            mean_color: [0.0; 3],
            color_std: [0.0; 3],
            mean_height: 0.0,
            parent_instance: poly.source_instance,
        };
        rect_features(&mut rect, dsm, ortho);
        out.push(rect);
    }
    Ok(out)
}

/// Nudge each rectangle edge by up to +-2 px to maximize mask coverage,
/// never growing over pixels another rectangle already owns.
fn refine_rect(fr: &mut PixelRect, mask: &Grid<u8>, occupied: &Grid<u8>) {
    refine_pixel_rect(fr, mask, occupied, &[-1, 1, -REFINE_PX, REFINE_PX], 1);
}

/// Edge-wise coverage maximization over the given per-edge offsets,
/// repeated up to `max_passes` times or until a pass changes nothing.
pub(crate) fn refine_pixel_rect(
    fr: &mut PixelRect,
    mask: &Grid<u8>,
    occupied: &Grid<u8>,
    offsets: &[i64],
    max_passes: usize,
) {
    let score = |pr: &PixelRect, base: &PixelRect| -> Option<i64> {
        let mut s = 0i64;
        for r in pr.r0..pr.r1() {
            for c in pr.c0..pr.c1() {
                let owned = base.c0 <= c && c < base.c1() && base.r0 <= r && r < base.r1();
                if !owned && occupied.get(c, r, 0) != 0 {
                    return None;
                }
                s += if mask.get(c, r, 0) != 0 { 1 } else { -1 };
            }
        }
        Some(s)
    };
    for _ in 0..max_passes {
        let before = *fr;
        for edge in 0..4 {
            let base = *fr;
            let mut best = base;
            let mut best_score = match score(&base, &base) {
                Some(s) => s,
                None => return,
            };
            for &off in offsets {
                let mut cand = base;
                let ok = match edge {
                    0 => shift_lo(&mut cand.c0, &mut cand.w, off),
                    1 => grow_hi(&mut cand.w, off, mask.width, cand.c0),
                    2 => shift_lo(&mut cand.r0, &mut cand.h, off),
                    _ => grow_hi(&mut cand.h, off, mask.height, cand.r0),
                };
                if !ok {
                    continue;
                }
                if let Some(s) = score(&cand, &base) {
                    if s > best_score {
                        best_score = s;
                        best = cand;
                    }
                }
            }
            *fr = best;
        }
        if *fr == before {
            return;
        }
    }
}

/// Move the low edge by `off` (negative grows outward); false if degenerate.
fn shift_lo(lo: &mut usize, extent: &mut usize, off: i64) -> bool {
    let new_lo = *lo as i64 + off;
    let new_ext = *extent as i64 - off;
    if new_lo < 0 || new_ext <= 0 {
        return false;
    }
    *lo = new_lo as usize;
    *extent = new_ext as usize;
    true
}

fn grow_hi(extent: &mut usize, off: i64, limit: usize, lo: usize) -> bool {
    let new_ext = *extent as i64 + off;
    if new_ext <= 0 || lo as i64 + new_ext > limit as i64 {
        return false;
    }
    *extent = new_ext as usize;
    true
}

const MERGE_ANGLE_TOL_DEG: f64 = 1.0;

/// Axis-aligned intervals of two rectangles in a shared local frame, when
/// their orientations agree modulo 90 degrees.
struct FramePair {
    ax: [f64; 2],
    ay: [f64; 2],
    bx: [f64; 2],
    by: [f64; 2],
    /// Frame angle, degrees.
    phi: f64,
}

fn shared_frame(a: &Rect, b: &Rect) -> Option<FramePair> {
    let diff = fold_diff180(a.orientation, b.orientation);
    let (bh_x, bh_y) = if diff < MERGE_ANGLE_TOL_DEG {
        (b.length / 2.0, b.width / 2.0)
    } else if diff > 90.0 - MERGE_ANGLE_TOL_DEG {
        (b.width / 2.0, b.length / 2.0)
    } else {
        return None;
    };
    let phi = a.orientation;
    let rad = (-phi).to_radians();
    let o = Point::new(0.0, 0.0);
    let ca = a.center.rotate_around(o, rad);
    let cb = b.center.rotate_around(o, rad);
    Some(FramePair {
        ax: [ca.x - a.length / 2.0, ca.x + a.length / 2.0],
        ay: [ca.y - a.width / 2.0, ca.y + a.width / 2.0],
        bx: [cb.x - bh_x, cb.x + bh_x],
        by: [cb.y - bh_y, cb.y + bh_y],
        phi,
    })
}

enum MergeAxis {
    AlongX,
    AlongY,
}

/// Adjacency of the merge precondition: 7-px dilations meet across a shared
/// edge whose endpoints align within 5 px, so the union is a rectangle.
fn adjacency(a: &Rect, b: &Rect, ps: f64, cfg: &Config) -> Option<(FramePair, MergeAxis)> {
    let f = shared_frame(a, b)?;
    let tol = cfg.edge_len_tol_px as f64 * ps;
    let reach = 2.0 * cfg.dilation_px as f64 * ps;
    let gap_x = (f.bx[0] - f.ax[1]).max(f.ax[0] - f.bx[1]);
    let gap_y = (f.by[0] - f.ay[1]).max(f.ay[0] - f.by[1]);
    let y_match = (f.ay[0] - f.by[0]).abs() < tol && (f.ay[1] - f.by[1]).abs() < tol;
    let x_match = (f.ax[0] - f.bx[0]).abs() < tol && (f.ax[1] - f.bx[1]).abs() < tol;
    if y_match && gap_x > -tol && gap_x <= reach && gap_y <= 0.0 {
        return Some((f, MergeAxis::AlongX));
    }
    if x_match && gap_y > -tol && gap_y <= reach && gap_x <= 0.0 {
        return Some((f, MergeAxis::AlongY));
    }
    None
}

/// Eq. 2.2 merge test over an adjacent pair: mean colors within t_d, mean
/// heights within t_h1, and no DSM jump above t_h2 across the shared edge.
pub fn should_merge(a: &Rect, b: &Rect, dsm: &Grid<f64>, cfg: &Config) -> Result<bool> {
    let ps = dsm.transform.pixel_size_x;
    let (f, axis) = adjacency(a, b, ps, cfg)
        .ok_or_else(|| Error::Invalid("should_merge on non-adjacent rectangles".into()))?;
    let dc = (0..3)
        .map(|k| (a.mean_color[k] - b.mean_color[k]).powi(2))
        .sum::<f64>()
        .sqrt();
    if dc >= cfg.t_d {
        return Ok(false);
    }
    if (a.mean_height - b.mean_height).abs() >= cfg.t_h1_m {
        return Ok(false);
    }
    // max height jump across the shared edge, inside the dilation buffer
    let rad = f.phi.to_radians();
    let o = Point::new(0.0, 0.0);
    let to_world = |x: f64, y: f64| Point::new(x, y).rotate_around(o, rad);
    let (edge, t0, t1, along_x) = match axis {
        MergeAxis::AlongX => {
            let (lo, hi) = if f.ax[1] <= f.bx[0] {
                (f.ax[1], f.bx[0])
            } else {
                (f.bx[1], f.ax[0])
            };
            ((lo + hi) / 2.0, f.ay[0].max(f.by[0]), f.ay[1].min(f.by[1]), true)
        }
        MergeAxis::AlongY => {
            let (lo, hi) = if f.ay[1] <= f.by[0] {
                (f.ay[1], f.by[0])
            } else {
                (f.by[1], f.ay[0])
            };
            ((lo + hi) / 2.0, f.ax[0].max(f.bx[0]), f.ax[1].min(f.bx[1]), false)
        }
    };
    let steps = (((t1 - t0) / ps).floor() as usize).max(1);
    let mut max_jump = 0.0f64;
    for i in 0..steps {
        let t = t0 + (i as f64 + 0.5) * (t1 - t0) / steps as f64;
        let mut side = [None::<f64>, None::<f64>];
        for (si, sign) in [(-1.0f64), 1.0].iter().enumerate() {
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for k in 1..=cfg.dilation_px {
                let s = edge + sign * k as f64 * ps;
                let p = if along_x { to_world(s, t) } else { to_world(t, s) };
                if let Some(z) = dsm.sample_nearest(p, 0) {
                    if !dsm.is_nodata(z) {
                        sum += z;
                        cnt += 1;
                    }
                }
            }
            if cnt > 0 {
                side[si] = Some(sum / cnt as f64);
            }
        }
        if let (Some(lo), Some(hi)) = (side[0], side[1]) {
            max_jump = max_jump.max((hi - lo).abs());
        }
    }
    Ok(max_jump < cfg.t_h2_m)
}

/// Greedily merge adjacent mergeable pairs, largest combined area first,
/// until no pair passes Eq. 2.2; merged features are resampled from pixels.
pub fn merge_rects(
    rects: &[Rect],
    dsm: &Grid<f64>,
    ortho: &Grid<u8>,
    cfg: &Config,
) -> Result<Vec<Rect>> {
    let mut rects = rects.to_vec();
    let ps = dsm.transform.pixel_size_x;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..rects.len() {
            for j in i + 1..rects.len() {
                if adjacency(&rects[i], &rects[j], ps, cfg).is_none() {
                    continue;
                }
                if !should_merge(&rects[i], &rects[j], dsm, cfg)? {
                    continue;
                }
                let area = rects[i].area() + rects[j].area();
                if best.map_or(true, |(ba, _, _)| area > ba) {
                    best = Some((area, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else {
            return Ok(rects);
        };
        let (f, _) = adjacency(&rects[i], &rects[j], ps, cfg).unwrap();
        let x0 = f.ax[0].min(f.bx[0]);
        let x1 = f.ax[1].max(f.bx[1]);
        let y0 = f.ay[0].min(f.by[0]);
        let y1 = f.ay[1].max(f.by[1]);
        let rad = f.phi.to_radians();
        let center = Point::new((x0 + x1) / 2.0, (y0 + y1) / 2.0)
            .rotate_around(Point::new(0.0, 0.0), rad);
        let (ex, ey) = (x1 - x0, y1 - y0);
        let (length, width, orientation) = if ex >= ey {
            (ex, ey, fold180(f.phi))
        } else {
            (ey, ex, fold180(f.phi + 90.0))
        };
        let mut merged = Rect {
            center,
            length,
            width,
            orientation,
            mean_color: [0.0; 3],
            color_std: [0.0; 3],
            mean_height: 0.0,
            parent_instance: rects[i].parent_instance,
        };
        rect_features(&mut merged, dsm, ortho);
        rects.remove(j);
        rects.remove(i);
        rects.push(merged);
    }
}
