//! Orientation refinement over the rectangle adjacency graph: exponential
//! feature affinities, the multi-label orientation problem, and the optional
//! road-vector alignment pass.

use crate::config::Config;
use crate::decompose::Rect;
use crate::geom::{dist_point_segment, fold180, fold_diff180, segment_orientation};
use crate::graphcut::GcProblem;
use crate::raster_io::RoadNetwork;

pub use crate::graphcut::solve_multilabel;

/// Neighbor rule for the rectangle graph: centers within this distance.
pub const NEIGHBOR_RADIUS_M: f64 = 50.0;

/// Adjacency graph over building rectangles with affinity-weighted edges.
#[derive(Debug, Clone)]
pub struct RectGraph {
    pub num_nodes: usize,
    /// (i, j, W) with i < j, W in (0, 1].
    pub edges: Vec<(usize, usize, f64)>,
}

/// Scene-level per-component standard deviations used to put the feature
/// blocks of Eq. 2.8 on a common scale.
#[derive(Debug, Clone)]
pub struct FeatureScale {
    pub center: [f64; 2],
    pub theta: f64,
    pub shape: [f64; 2],
    pub color: [f64; 3],
    pub sigma: [f64; 3],
}

fn std_of(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
}

pub fn feature_scale(rects: &[Rect]) -> FeatureScale {
    FeatureScale {
        center: [
            std_of(rects.iter().map(|r| r.center.x)),
            std_of(rects.iter().map(|r| r.center.y)),
        ],
        theta: std_of(rects.iter().map(|r| r.orientation)),
        shape: [
            std_of(rects.iter().map(|r| r.length)),
            std_of(rects.iter().map(|r| r.width)),
        ],
        color: [0, 1, 2].map(|b| std_of(rects.iter().map(move |r| r.mean_color[b]))),
        sigma: [0, 1, 2].map(|b| std_of(rects.iter().map(move |r| r.color_std[b]))),
    }
}

fn scaled(diff: f64, std: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / std.max(1e-9)
    }
}

/// Eq. 2.7/2.8 similarity: weighted distance over standardized feature
/// blocks through an exponential kernel. Symmetric, 1 for identical rects.
pub fn affinity(a: &Rect, b: &Rect, scale: &FeatureScale, cfg: &Config) -> f64 {
    let dr = scaled(a.center.x - b.center.x, scale.center[0]).powi(2)
        + scaled(a.center.y - b.center.y, scale.center[1]).powi(2);
    let dt = scaled(fold_diff180(a.orientation, b.orientation), scale.theta).powi(2);
    let ds = scaled(a.length - b.length, scale.shape[0]).powi(2)
        + scaled(a.width - b.width, scale.shape[1]).powi(2);
    let dc = (0..3)
        .map(|k| scaled(a.mean_color[k] - b.mean_color[k], scale.color[k]).powi(2))
        .sum::<f64>();
    let dsig = (0..3)
        .map(|k| scaled(a.color_std[k] - b.color_std[k], scale.sigma[k]).powi(2))
        .sum::<f64>();
    let dist = (cfg.w_r * dr + cfg.w_theta * dt + cfg.w_s * ds + cfg.w_c * dc
        + cfg.w_sigma * dsig)
        .sqrt();
    (-dist / (2.0 * cfg.gc_sigma * cfg.gc_sigma)).exp()
}

/// Connect rectangles whose centers lie within [`NEIGHBOR_RADIUS_M`].
pub fn build_graph(rects: &[Rect], cfg: &Config) -> RectGraph {
    let scale = feature_scale(rects);
    let mut edges = Vec::new();
    for i in 0..rects.len() {
        for j in i + 1..rects.len() {
            if rects[i].center.dist(rects[j].center) <= NEIGHBOR_RADIUS_M {
                edges.push((i, j, affinity(&rects[i], &rects[j], &scale, cfg)));
            }
        }
    }
    RectGraph { num_nodes: rects.len(), edges }
}

/// Label L stands for orientation `L * orient_step_deg` degrees.
pub fn label_angle(label: usize, cfg: &Config) -> f64 {
    (label * cfg.orient_step_deg) as f64
}

/// Orientation refinement as a multi-label problem: data cost penalizes
/// deviation from each rectangle's initial orientation, smoothness pulls
/// similar neighbors to a shared label.
pub fn build_orientation_problem(rects: &[Rect], graph: &RectGraph, cfg: &Config) -> GcProblem {
    let num_labels = 180 / cfg.orient_step_deg;
    let mut p = GcProblem::new(rects.len(), num_labels);
    for (i, r) in rects.iter().enumerate() {
        for l in 0..num_labels {
            let dtheta = fold_diff180(r.orientation, label_angle(l, cfg));
            p.set_data_cost(i, l, 1.0 - (-dtheta).exp());
        }
    }
    for &(i, j, w) in &graph.edges {
        p.add_edge(i, j, cfg.gc_lambda * w);
    }
    p
}

/// Overwrite each rectangle's orientation with its label's angle; geometry
/// and features are untouched.
pub fn apply_orientation_labels(rects: &[Rect], labels: &[usize], cfg: &Config) -> Vec<Rect> {
    rects
        .iter()
        .zip(labels)
        .map(|(r, &l)| {
            let mut r = r.clone();
            r.orientation = fold180(label_angle(l, cfg));
            r
        })
        .collect()
}

/// Snap each rectangle to the orientation of its nearest road segment when
/// the two differ by less than the gate angle.
pub fn osm_align(rects: &[Rect], roads: &RoadNetwork, cfg: &Config) -> Vec<Rect> {
    rects
        .iter()
        .map(|r| {
            let mut best: Option<(f64, f64)> = None; // (distance, road angle)
            for (a, b) in roads.segments() {
                let d = dist_point_segment(r.center, a, b);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, segment_orientation(a, b)));
                }
            }
            let mut r = r.clone();
            if let Some((_, road_theta)) = best {
                if fold_diff180(r.orientation, road_theta) < cfg.osm_angle_deg {
                    r.orientation = fold180(road_theta);
                }
            }
            r
        })
        .collect()
}
