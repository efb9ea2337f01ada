//! From raw segmentation rasters to clean per-building instance maps:
//! connected components, semantic/instance fusion, and watershed instance
//! extraction from 3-class maps.

use std::collections::BinaryHeap;
use std::cmp::Reverse;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Dense per-building instance labels: 0 = background, 1..count = buildings.
#[derive(Debug, Clone)]
pub struct InstanceMap {
    pub grid: Grid<u32>,
    pub count: u32,
}

impl InstanceMap {
    /// Pixel count of one instance.
    pub fn area(&self, id: u32) -> usize {
        self.grid.data.iter().filter(|&&v| v == id).count()
    }

    /// Inclusive pixel bounding box (c0, r0, c1, r1) of one instance.
    pub fn bbox(&self, id: u32) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.grid.height {
            for c in 0..self.grid.width {
                if self.grid.get(c, r, 0) == id {
                    bb = Some(match bb {
                        None => (c, r, c, r),
                        Some((c0, r0, c1, r1)) => (c0.min(c), r0.min(r), c1.max(c), r1.max(r)),
                    });
                }
            }
        }
        bb
    }

    /// Binary mask (255 inside) of one instance.
    pub fn mask_of(&self, id: u32) -> Grid<u8> {
        let mut m = Grid::filled(
            self.grid.width,
            self.grid.height,
            1,
            0u8,
            self.grid.transform.clone(),
        );
        for i in 0..self.grid.data.len() {
            if self.grid.data[i] == id {
                m.data[i] = 255;
            }
        }
        m
    }
}

const NEIGH4: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

/// Label 4-connected components of a binary mask in row-major first-seen
/// order, so the labeling is deterministic.
pub fn connected_components(mask: &Grid<u8>) -> InstanceMap {
    let (w, h) = (mask.width, mask.height);
    let mut labels = Grid::filled(w, h, 1, 0u32, mask.transform.clone());
    let mut next = 0u32;
    let mut stack = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if mask.get(c, r, 0) == 0 || labels.get(c, r, 0) != 0 {
                continue;
            }
            next += 1;
            labels.set(c, r, 0, next);
            stack.push((c, r));
            while let Some((cc, cr)) = stack.pop() {
                for (dc, dr) in NEIGH4 {
                    let (nc, nr) = (cc as i64 + dc, cr as i64 + dr);
                    if mask.in_bounds(nc, nr) {
                        let (nc, nr) = (nc as usize, nr as usize);
                        if mask.get(nc, nr, 0) != 0 && labels.get(nc, nr, 0) == 0 {
                            labels.set(nc, nr, 0, next);
                            stack.push((nc, nr));
                        }
                    }
                }
            }
        }
    }
    InstanceMap {
        grid: labels,
        count: next,
    }
}

/// Per-instance fusion statistics; `w = area_class / area_bbox^2`.
#[derive(Debug, Clone, Copy)]
pub struct SegmentStats {
    pub id: u32,
    pub area_class: usize,
    pub area_bbox: usize,
    pub w: f64,
}

/// Decision weight of a bounding box.
pub fn fusion_weight(id: u32, area_class: usize, area_bbox: usize) -> Result<SegmentStats> {
    if area_bbox == 0 {
        return Err(Error::Invalid("zero-area bounding box".into()));
    }
    Ok(SegmentStats {
        id,
        area_class,
        area_bbox,
        w: area_class as f64 / (area_bbox as f64 * area_bbox as f64),
    })
}

/// Segmentation-level fusion: detections whose decision weight exceeds
/// `cfg.t_w` override the primary mask inside their bounding box.
pub fn fuse_segmentations(
    primary_mask: &Grid<u8>,
    detections: &InstanceMap,
    cfg: &Config,
) -> Result<Grid<u8>> {
    if !primary_mask.same_shape(&detections.grid) {
        return Err(Error::TransformMismatch(
            "primary mask and detections are not aligned".into(),
        ));
    }
    let mut out = primary_mask.clone();
    for id in 1..=detections.count {
        let Some((c0, r0, c1, r1)) = detections.bbox(id) else {
            continue;
        };
        let area_bbox = (c1 - c0 + 1) * (r1 - r0 + 1);
        let mut area_class = 0usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                if detections.grid.get(c, r, 0) == id {
                    area_class += 1;
                }
            }
        }
        let stats = fusion_weight(id, area_class, area_bbox)?;
        if stats.w > cfg.t_w {
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let v = if detections.grid.get(c, r, 0) == id { 255 } else { 0 };
                    out.set(c, r, 0, v);
                }
            }
        }
    }
    Ok(out)
}

/// Class labels of the 3-class map consumed by `watershed_instances`.
pub const CLASS_BACKGROUND: u32 = 0;
pub const CLASS_BUILDING: u32 = 1;
pub const CLASS_SEPARATION: u32 = 2;

/// Extract building instances from a {background, building, separation
/// line} map by marker-based flooding. Seeds are building pixels eroded
/// away from separation lines (radius 1); flooding is confined to the
/// building + line mask with deterministic (distance, row-major index)
/// priority order.
pub fn watershed_instances(three_class: &Grid<u32>) -> InstanceMap {
    let (w, h) = (three_class.width, three_class.height);
    let in_mask = |c: usize, r: usize| three_class.get(c, r, 0) != CLASS_BACKGROUND;

    // seeds: building pixels with no separation-line pixel in the 8-neighborhood
    let mut seed = Grid::filled(w, h, 1, 0u8, three_class.transform.clone());
    for r in 0..h {
        for c in 0..w {
            if three_class.get(c, r, 0) != CLASS_BUILDING {
                continue;
            }
            let mut near_line = false;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                    if three_class.in_bounds(nc, nr)
                        && three_class.get(nc as usize, nr as usize, 0) == CLASS_SEPARATION
                    {
                        near_line = true;
                    }
                }
            }
            if !near_line {
                seed.set(c, r, 0, 255);
            }
        }
    }
    let basins = connected_components(&seed);

    let mut labels = basins.grid.clone();
    let mut heap: BinaryHeap<Reverse<(u64, u64)>> = BinaryHeap::new();
    for r in 0..h {
        for c in 0..w {
            if labels.get(c, r, 0) != 0 {
                heap.push(Reverse((0, (r * w + c) as u64)));
            }
        }
    }
    let mut dist = vec![u64::MAX; w * h];
    for r in 0..h {
        for c in 0..w {
            if labels.get(c, r, 0) != 0 {
                dist[r * w + c] = 0;
            }
        }
    }
    while let Some(Reverse((d, idx))) = heap.pop() {
        let (c, r) = ((idx as usize) % w, (idx as usize) / w);
        if d > dist[r * w + c] {
            continue;
        }
        let id = labels.get(c, r, 0);
        for (dc, dr) in NEIGH4 {
            let (nc, nr) = (c as i64 + dc, r as i64 + dr);
            if !three_class.in_bounds(nc, nr) {
                continue;
            }
            let (nc, nr) = (nc as usize, nr as usize);
            if !in_mask(nc, nr) || labels.get(nc, nr, 0) != 0 {
                continue;
            }
            let nd = d + 1;
            if nd < dist[nr * w + nc] {
                dist[nr * w + nc] = nd;
                labels.set(nc, nr, 0, id);
                heap.push(Reverse((nd, (nr * w + nc) as u64)));
            }
        }
    }

    // compact ids to a dense 1..n range (some seeds may have been empty)
    let mut remap = vec![0u32; basins.count as usize + 1];
    let mut next = 0u32;
    for v in labels.data.iter() {
        let v = *v as usize;
        if v != 0 && remap[v] == 0 {
            next += 1;
            remap[v] = next;
        }
    }
    for v in labels.data.iter_mut() {
        *v = remap[*v as usize];
    }
    InstanceMap {
        grid: labels,
        count: next,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GeoTransform;

    fn mask_from(rows: &[&str]) -> Grid<u8> {
        let h = rows.len();
        let w = rows[0].len();
        let mut g = Grid::filled(w, h, 1, 0u8, GeoTransform::new(0.0, h as f64, 1.0, -1.0));
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                if ch != '.' {
                    g.set(c, r, 0, 255);
                }
            }
        }
        g
    }

    fn three_class_from(rows: &[&str]) -> Grid<u32> {
        let h = rows.len();
        let w = rows[0].len();
        let mut g = Grid::filled(w, h, 1, 0u32, GeoTransform::new(0.0, h as f64, 1.0, -1.0));
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                let v = match ch {
                    '.' => 0,
                    'b' => 1,
                    's' => 2,
                    _ => panic!("bad char"),
                };
                g.set(c, r, 0, v);
            }
        }
        g
    }

    #[test]
    fn components_empty_mask() {
        let m = mask_from(&["....", "....", "...."]);
        assert_eq!(connected_components(&m).count, 0);
    }

    #[test]
    fn components_two_squares() {
        let m = mask_from(&[
            "xxx..xxx",
            "xxx..xxx",
            "xxx..xxx",
        ]);
        let inst = connected_components(&m);
        assert_eq!(inst.count, 2);
        assert_eq!(inst.area(1), 9);
        assert_eq!(inst.area(2), 9);
    }

    #[test]
    fn components_diagonal_not_connected() {
        // enumerate all 2x2 neighborhoods with two diagonal pixels set
        for pattern in [["x.", ".x"], [".x", "x."]] {
            let m = mask_from(&pattern.map(|s| s));
            assert_eq!(connected_components(&m).count, 2, "{pattern:?}");
        }
        // edge-adjacent pairs stay one component
        for pattern in [["xx", ".."], ["x.", "x."]] {
            let m = mask_from(&pattern.map(|s| s));
            assert_eq!(connected_components(&m).count, 1);
        }
    }

    #[test]
    fn fusion_weight_hand_values() {
        // bbox 10x10, 50 masked pixels
        let s = fusion_weight(1, 50, 100).unwrap();
        assert!((s.w - 0.005).abs() < 1e-15);
        // fully filled a x a box
        let s = fusion_weight(1, 36, 36).unwrap();
        assert!((s.w - 1.0 / 36.0).abs() < 1e-15);
        // empty
        let s = fusion_weight(1, 0, 100).unwrap();
        assert_eq!(s.w, 0.0);
        assert!(fusion_weight(1, 0, 0).is_err());
    }

    #[test]
    fn fusion_override_above_threshold() {
        // primary: empty; detection: 5x4 blob in a 5x4 bbox -> w = 20/400 = 0.05 < 0.15
        // and a small 2x2 full blob -> w = 4/16 = 0.25 > 0.15 -> overrides
        let primary = mask_from(&["......", "......", "......", "......"]);
        let det = mask_from(&["xx....", "xx....", "......", "......"]);
        let inst = connected_components(&det);
        let cfg = Config::default();
        let fused = fuse_segmentations(&primary, &inst, &cfg).unwrap();
        assert_eq!(fused.get(0, 0, 0), 255);
        assert_eq!(fused.get(1, 1, 0), 255);
        assert_eq!(fused.get(3, 3, 0), 0);
    }

    #[test]
    fn fusion_below_threshold_keeps_primary() {
        let primary = mask_from(&["xxxxxxxxxx", "xxxxxxxxxx"]);
        // sparse detection: w small
        let det = mask_from(&["x.........", ".........x"]);
        let inst = connected_components(&det);
        // treat the two pixels as one instance bbox? they are separate instances,
        // each 1x1 fully-filled: w = 1 > t_w, so they override their 1x1 boxes.
        // Build a genuinely sparse single instance instead:
        let det2 = mask_from(&["x..x......", ".........."]);
        let mut inst2 = connected_components(&det2);
        // merge ids to a single sparse instance spanning a 4x1 bbox: w = 2/16
        for v in inst2.grid.data.iter_mut() {
            if *v == 2 {
                *v = 1;
            }
        }
        inst2.count = 1;
        let cfg = Config::default();
        let fused = fuse_segmentations(&primary, &inst2, &cfg).unwrap();
        assert_eq!(fused, primary);
        let _ = inst;
    }

    #[test]
    fn fusion_no_detections_is_identity_and_idempotent() {
        let primary = mask_from(&["xx..", "xx.."]);
        let empty = connected_components(&mask_from(&["....", "...."]));
        let cfg = Config::default();
        let fused = fuse_segmentations(&primary, &empty, &cfg).unwrap();
        assert_eq!(fused, primary);

        let det = connected_components(&mask_from(&["...x", "...x"]));
        let once = fuse_segmentations(&primary, &det, &cfg).unwrap();
        let twice = fuse_segmentations(&once, &det, &cfg).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn watershed_split_by_line() {
        let g = three_class_from(&[
            "bbbsbbb",
            "bbbsbbb",
            "bbbsbbb",
        ]);
        let inst = watershed_instances(&g);
        assert_eq!(inst.count, 2);
        // partition: every non-background pixel assigned
        for r in 0..3 {
            for c in 0..7 {
                assert_eq!(inst.grid.get(c, r, 0) != 0, g.get(c, r, 0) != 0);
            }
        }
        // both sides distinct
        assert_ne!(inst.grid.get(0, 0, 0), inst.grid.get(6, 0, 0));
    }

    #[test]
    fn watershed_no_lines_equals_components() {
        let g = three_class_from(&[
            "bb..bb",
            "bb..bb",
        ]);
        let inst = watershed_instances(&g);
        assert_eq!(inst.count, 2);
    }

    #[test]
    fn watershed_all_background() {
        let g = three_class_from(&["....", "...."]);
        assert_eq!(watershed_instances(&g).count, 0);
    }

    #[test]
    fn watershed_matches_flood_fill_oracle() {
        // two blobs split by a 1-px separation line; oracle: components of
        // the building class alone must match the watershed partition count
        let g = three_class_from(&[
            "bbbbsbbbb",
            "bbbbsbbbb",
            "bbbbsbbbb",
            "bbbbsbbbb",
        ]);
        let inst = watershed_instances(&g);
        let building_only = mask_from(&[
            "xxxx.xxxx",
            "xxxx.xxxx",
            "xxxx.xxxx",
            "xxxx.xxxx",
        ]);
        let oracle = connected_components(&building_only);
        assert_eq!(inst.count, oracle.count);
        // building pixels keep the oracle's partition (ids may differ)
        for r in 0..4 {
            for c in 0..9 {
                if building_only.get(c, r, 0) != 0 {
                    let a = inst.grid.get(c, r, 0);
                    let b = oracle.grid.get(c, r, 0);
                    assert_eq!(a == inst.grid.get(0, 0, 0), b == oracle.grid.get(0, 0, 0));
                }
            }
        }
    }
}
