//! Acceptance gate: synthetic round-trips plus property suites with
//! independently written oracles. Each test prints one pass/fail line.

use std::f64::consts::TAU;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lod2recon::circular::{fit_circle_ls, CircularRoofType};
use lod2recon::decompose::{max_inner_rect, max_inner_rect_brute, should_merge, Rect};
use lod2recon::graphcut::{brute_force_optimum, solve_multilabel, GcProblem};
use lod2recon::grid::{GeoTransform, Grid};
use lod2recon::metrics;
use lod2recon::pipeline::{reconstruct, MaskInput, PipelineInputs, StageToggles};
use lod2recon::polygonize::simplify_chain;
use lod2recon::rooffit::{fit_model, merge_type, RoofType, FIT_TIE_EPS};
use lod2recon::scene::{catalog_json, BuildingModel, SceneModel};
use lod2recon::segmentation::fusion_weight;
use lod2recon::synth::{render, SynthBuilding, SynthOutputs, SynthScene};
use lod2recon::{Config, Point};

fn verdict(n: usize, what: &str, ok: bool, detail: &str) {
    println!("criterion {n:>2}: {} - {what} ({detail})", if ok { "pass" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {what}: {detail}");
}

// ---------------------------------------------------------------- round trip

/// 50 disjoint buildings, 10 of each rectangular type, on a 10 x 5 grid
/// whose spacing exceeds the 50 m graph-coupling radius.
fn baseline_desc(noise_sigma: f64, seed: u64) -> SynthScene {
    let mut buildings = Vec::new();
    for j in 0..5usize {
        for i in 0..10usize {
            let idx = j * 10 + i;
            let t = RoofType::ALL[idx % 5];
            let length = [25.6, 28.8, 32.0][idx * 7 % 3];
            let width = [12.8, 16.0, 19.2][(idx * 5 + 1) % 3];
            let orientation = ((idx * 26) % 180) as f64;
            let z_eave = 6.0 + (idx % 7) as f64 * 0.45;
            let rise = match t {
                RoofType::Flat => 0.0,
                RoofType::Gable => 2.9 + (idx % 3) as f64 * 0.4,
                RoofType::Hip => 3.1,
                RoofType::Pyramid => [2.7, 3.3, 3.9][idx % 3],
                RoofType::Mansard => 2.9,
            };
            let (hipl, hipw) = match t {
                RoofType::Flat => (0.0, 0.0),
                RoofType::Gable => (0.0, width / 2.0),
                RoofType::Hip => (length / 4.0, width / 2.0),
                RoofType::Pyramid => (length / 2.0, width / 2.0),
                RoofType::Mansard => (length / 4.0, width / 4.0),
            };
            buildings.push(SynthBuilding::Rect {
                roof_type: t.name().into(),
                center: [
                    (i as f64 + 0.5) * 51.2,
                    -(j as f64 + 0.5) * 102.4 + if i % 2 == 0 { 8.0 } else { -8.0 },
                ],
                length,
                width,
                orientation,
                z_ridge: z_eave + rise,
                z_eave,
                hipl,
                hipw,
                color: [
                    40 + (idx * 9 % 160) as u8,
                    60 + (idx * 23 % 150) as u8,
                    50 + (idx * 17 % 170) as u8,
                ],
            });
        }
    }
    SynthScene {
        width: 1024,
        height: 1024,
        pixel_size: 0.5,
        origin: [0.0, 0.0],
        terrain_z: 2.0,
        noise_sigma,
        color_noise: 0.0,
        seed,
        background: [70, 72, 68],
        buildings,
    }
}

fn reconstruct_outputs(out: &SynthOutputs) -> SceneModel {
    let inputs = PipelineInputs {
        dsm: out.dsm.clone(),
        ortho: out.ortho.clone(),
        mask: MaskInput::Binary(out.mask.clone()),
        detections: None,
        roads: None,
    };
    reconstruct(&inputs, &StageToggles::default(), &Config::default())
        .expect("reconstruction failed")
        .0
}

struct RoundTrip {
    /// Per ground-truth building: type correct, max |dZ|, max |d hip|
    /// (the latter two only for correctly typed matches).
    per_building: Vec<(bool, f64, f64)>,
    scene_iou2: f64,
    scene_iou3: f64,
    elapsed_s: f64,
    catalog: String,
}

fn run_round_trip(noise_sigma: f64) -> RoundTrip {
    let desc = baseline_desc(noise_sigma, 424242);
    let t0 = Instant::now();
    let out = render(&desc).unwrap();
    let scene = reconstruct_outputs(&out);
    let report = metrics::evaluate(&scene, &out.ref_mask, &out.ref_height, 2.0).unwrap();
    let elapsed_s = t0.elapsed().as_secs_f64();
    let catalog = catalog_json(&scene).unwrap();

    let rect_models: Vec<_> = scene
        .buildings
        .iter()
        .filter_map(|b| match &b.model {
            BuildingModel::Rectangular(m) => Some(m),
            _ => None,
        })
        .collect();
    let mut per_building = Vec::new();
    for b in &desc.buildings {
        let SynthBuilding::Rect {
            roof_type, center, z_ridge, z_eave, hipl, hipw, ..
        } = b
        else {
            unreachable!()
        };
        let truth_c = Point::new(center[0], center[1]);
        let truth_t = RoofType::ALL.iter().copied().find(|t| t.name() == roof_type).unwrap();
        let nearest = rect_models
            .iter()
            .min_by(|a, b| a.rect.center.dist(truth_c).total_cmp(&b.rect.center.dist(truth_c)));
        match nearest {
            Some(m) if m.rect.center.dist(truth_c) < 5.0 && m.roof_type == truth_t => {
                let dz = (m.z_eave - z_eave).abs().max((m.z_ridge - z_ridge).abs());
                let dhip = (m.hipl - hipl).abs().max((m.hipw - hipw).abs());
                per_building.push((true, dz, dhip));
            }
            _ => per_building.push((false, f64::INFINITY, f64::INFINITY)),
        }
    }
    RoundTrip {
        per_building,
        scene_iou2: report.scene_iou2,
        scene_iou3: report.scene_iou3,
        elapsed_s,
        catalog,
    }
}

static BASELINE: OnceLock<RoundTrip> = OnceLock::new();

fn baseline() -> &'static RoundTrip {
    BASELINE.get_or_init(|| run_round_trip(0.0))
}

#[test]
fn criterion_01_synthetic_round_trip() {
    let rt = baseline();
    let n = rt.per_building.len();
    let correct = rt.per_building.iter().filter(|p| p.0).count();
    let max_dz = rt
        .per_building
        .iter()
        .filter(|p| p.0)
        .map(|p| p.1)
        .fold(0.0f64, f64::max);
    let max_dhip = rt
        .per_building
        .iter()
        .filter(|p| p.0)
        .map(|p| p.2)
        .fold(0.0f64, f64::max);
    let ok = correct as f64 >= 0.95 * n as f64
        && max_dz <= 0.1 + 1e-6
        && max_dhip <= 0.2 + 1e-6
        && rt.scene_iou2 >= 0.95
        && rt.scene_iou3 >= 0.95
        && rt.elapsed_s <= 60.0;
    verdict(
        1,
        "noise-free 50-building round trip",
        ok,
        &format!(
            "type {correct}/{n}, max dZ {max_dz:.3} m, max dHip {max_dhip:.3} m, \
             IOU2 {:.4}, IOU3 {:.4}, {:.1} s",
            rt.scene_iou2, rt.scene_iou3, rt.elapsed_s
        ),
    );
}

#[test]
fn criterion_02_noise_robustness() {
    let rt = run_round_trip(0.3);
    let n = rt.per_building.len();
    let correct = rt.per_building.iter().filter(|p| p.0).count();
    let max_dz = rt
        .per_building
        .iter()
        .filter(|p| p.0)
        .map(|p| p.1)
        .fold(0.0f64, f64::max);
    let ok = correct as f64 >= 0.85 * n as f64 && max_dz <= 0.3 + 1e-6;
    verdict(
        2,
        "sigma = 0.3 m DSM noise",
        ok,
        &format!("type {correct}/{n}, max dZ {max_dz:.3} m"),
    );
}

#[test]
fn criterion_10_determinism() {
    let first = &baseline().catalog;
    let second = run_round_trip(0.0).catalog;
    let ok = *first == second;
    verdict(
        10,
        "byte-identical catalogs across runs",
        ok,
        &format!("{} bytes", first.len()),
    );
}

// ----------------------------------------------------------- fit oracle (3)

/// Independent brute-force grid evaluator: direct per-pixel SSE over the
/// published parameter grids, same tie-break keys.
mod fit_oracle {
    use super::*;

    pub struct Best {
        pub roof_type: RoofType,
        pub z_eave: f64,
        pub z_ridge: f64,
        pub hipl: f64,
        pub hipw: f64,
        pub rmse: f64,
    }

    fn grid(center: f64, half: f64, step: f64, lo: f64, hi: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0;
        loop {
            let v = center - half + k as f64 * step;
            if v > center + half + 1e-9 {
                return out;
            }
            if v >= lo - 1e-9 && v <= hi + 1e-9 {
                out.push(v.clamp(lo, hi));
            }
            k += 1;
        }
    }

    fn surface(u: f64, v: f64, l: f64, w: f64, zr: f64, ze: f64, hl: f64, hw: f64) -> f64 {
        let ramp = |d: f64, hip: f64| {
            if hip <= 0.0 {
                0.0
            } else {
                (d / hip).clamp(0.0, 1.0)
            }
        };
        let t = ramp(v.abs() - (w / 2.0 - hw), hw).max(ramp(u.abs() - (l / 2.0 - hl), hl));
        zr - (zr - ze) * t
    }

    fn samples(rect: &Rect, dsm: &Grid<f64>) -> Vec<(f64, f64, f64)> {
        let t = &dsm.transform;
        let (mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in rect.corners() {
            let (c, r) = t.world_to_pixel(p);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
            rmin = rmin.min(r);
            rmax = rmax.max(r);
        }
        let c0 = cmin.floor().max(0.0) as usize;
        let r0 = rmin.floor().max(0.0) as usize;
        let c1 = cmax.ceil().min(dsm.width as f64) as usize;
        let r1 = rmax.ceil().min(dsm.height as f64) as usize;
        let mut out = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                let p = t.pixel_center(c, r);
                if !rect.contains_world(p) {
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

    pub fn fit(rect: &Rect, dsm: &Grid<f64>) -> Best {
        let pts = samples(rect, dsm);
        let n = pts.len() as f64;
        let z_eave0 = pts.iter().map(|s| s.2).sum::<f64>() / n - 0.5;
        let (l, w) = (rect.length, rect.width);
        let mut best: Option<Best> = None;
        for t in RoofType::ALL {
            let hips: Vec<(f64, f64)> = match t {
                RoofType::Flat => vec![(0.0, 0.0)],
                RoofType::Gable => vec![(0.0, w / 2.0)],
                RoofType::Hip => grid(l / 4.0, l / 8.0, 0.4, 0.0, l / 2.0)
                    .into_iter()
                    .map(|hl| (hl, w / 2.0))
                    .collect(),
                RoofType::Pyramid => vec![(l / 2.0, w / 2.0)],
                RoofType::Mansard => {
                    let mut v = Vec::new();
                    for hl in grid(l / 4.0, l / 8.0, 0.4, 0.0, l / 2.0) {
                        for hw in grid(w / 4.0, w / 8.0, 0.4, 0.0, w / 2.0) {
                            v.push((hl, hw));
                        }
                    }
                    v
                }
            };
            for (hl, hw) in hips {
                for ze in grid(z_eave0, 3.0, 0.2, f64::NEG_INFINITY, f64::INFINITY) {
                    let zrs = if t == RoofType::Flat {
                        vec![ze]
                    } else {
                        grid(ze + 2.25, 1.75, 0.2, f64::NEG_INFINITY, f64::INFINITY)
                    };
                    for zr in zrs {
                        let sse: f64 = pts
                            .iter()
                            .map(|&(u, v, z)| {
                                let h = surface(u, v, l, w, zr, ze, hl, hw);
                                (h - z) * (h - z)
                            })
                            .sum();
                        let cand = Best {
                            roof_type: t,
                            z_eave: ze,
                            z_ridge: zr,
                            hipl: hl,
                            hipw: hw,
                            rmse: (sse.max(0.0) / n).sqrt(),
                        };
                        let take = match &best {
                            None => true,
                            Some(b) => {
                                if cand.rmse < b.rmse - FIT_TIE_EPS {
                                    true
                                } else if cand.rmse > b.rmse + FIT_TIE_EPS {
                                    false
                                } else {
                                    let ka = (
                                        cand.roof_type.free_params(),
                                        cand.z_eave,
                                        cand.roof_type.index(),
                                        cand.z_ridge,
                                        cand.hipl,
                                        cand.hipw,
                                    );
                                    let kb = (
                                        b.roof_type.free_params(),
                                        b.z_eave,
                                        b.roof_type.index(),
                                        b.z_ridge,
                                        b.hipl,
                                        b.hipw,
                                    );
                                    ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
                                }
                            }
                        };
                        if take {
                            best = Some(cand);
                        }
                    }
                }
            }
        }
        best.unwrap()
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

#[test]
fn criterion_03_exhaustive_fit_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let t = GeoTransform::new(0.0, 0.0, 0.5, -0.5);
    let mut mismatches = Vec::new();
    for case in 0..200 {
        let length: f64 = rng.gen_range(12.0..22.0);
        let width = rng.gen_range(8.0..length.min(14.0));
        let rect = Rect {
            center: Point::new(16.0 + rng.gen_range(-2.0..2.0), -16.0 + rng.gen_range(-2.0..2.0)),
            length,
            width,
            orientation: rng.gen_range(0.0..180.0),
            mean_color: [0.0; 3],
            color_std: [0.0; 3],
            mean_height: 0.0,
            parent_instance: 1,
        };
        let true_type = RoofType::ALL[rng.gen_range(0..5)];
        let ze = rng.gen_range(5.0..8.0);
        let zr = ze + rng.gen_range(0.6..3.0);
        let (hl, hw) = match true_type {
            RoofType::Flat => (0.0, 0.0),
            RoofType::Gable => (0.0, width / 2.0),
            RoofType::Hip => (rng.gen_range(0.2..0.45) * length, width / 2.0),
            RoofType::Pyramid => (length / 2.0, width / 2.0),
            RoofType::Mansard => {
                (rng.gen_range(0.15..0.4) * length, rng.gen_range(0.15..0.4) * width)
            }
        };
        let mut dsm = Grid::filled(64, 64, 1, 2.0, t.clone());
        for r in 0..64 {
            for c in 0..64 {
                let p = t.pixel_center(c, r);
                let z = if rect.contains_world(p) {
                    let (u, v) = rect.world_to_local(p);
                    let ramp = |d: f64, hip: f64| {
                        if hip <= 0.0 {
                            0.0
                        } else {
                            (d / hip).clamp(0.0, 1.0)
                        }
                    };
                    let tt = ramp(v.abs() - (width / 2.0 - hw), hw)
                        .max(ramp(u.abs() - (length / 2.0 - hl), hl));
                    zr - (zr - ze) * tt + 0.3 * gauss(&mut rng)
                } else {
                    2.0 + 0.1 * gauss(&mut rng)
                };
                dsm.set(c, r, 0, z);
            }
        }
        let fitted = fit_model(&rect, &dsm).unwrap();
        let oracle = fit_oracle::fit(&rect, &dsm);
        let same = fitted.roof_type == oracle.roof_type
            && fitted.z_eave == oracle.z_eave
            && fitted.z_ridge == oracle.z_ridge
            && fitted.hipl == oracle.hipl
            && fitted.hipw == oracle.hipw;
        if !same {
            mismatches.push(case);
        }
    }
    verdict(
        3,
        "fit_model equals brute-force grid evaluator",
        mismatches.is_empty(),
        &format!("200 instances, {} mismatches", mismatches.len()),
    );
}

// ------------------------------------------------------------ tables (4, 11)

#[test]
fn criterion_04_merge_matrix() {
    use RoofType::*;
    // Table rows a = Flat..Mansard, columns b likewise; None = Not-merge.
    let expected: [[Option<RoofType>; 5]; 5] = [
        [Some(Flat), Some(Gable), Some(Hip), Some(Flat), Some(Mansard)],
        [Some(Gable), Some(Gable), Some(Hip), Some(Gable), Some(Mansard)],
        [Some(Hip), Some(Hip), Some(Hip), Some(Hip), Some(Mansard)],
        [Some(Flat), Some(Gable), Some(Hip), None, Some(Mansard)],
        [Some(Mansard), Some(Mansard), Some(Mansard), Some(Mansard), Some(Mansard)],
    ];
    let mut bad = 0;
    for (i, a) in RoofType::ALL.into_iter().enumerate() {
        for (j, b) in RoofType::ALL.into_iter().enumerate() {
            if merge_type(a, b) != expected[i][j] {
                bad += 1;
            }
        }
    }
    verdict(4, "25-cell merge matrix", bad == 0, &format!("{bad} wrong cells"));
}

#[test]
fn criterion_11_fusion_and_merge_fixtures() {
    // Eq. 2.1: w = area_class / area_bbox^2, hand-computed.
    let weight_fixtures: [(u32, usize, usize, f64); 10] = [
        (1, 100, 100, 0.01),
        (2, 2500, 2500, 0.0004),
        (3, 8, 4, 0.5),
        (4, 1, 2, 0.25),
        (5, 3, 4, 0.1875),
        (6, 60, 20, 0.15),
        (7, 200, 1000, 0.0002),
        (8, 49, 14, 0.25),
        (9, 0, 5, 0.0),
        (10, 1_000_000, 1000, 1.0),
    ];
    let mut bad = 0;
    for (id, ac, ab, want) in weight_fixtures {
        let s = fusion_weight(id, ac, ab).unwrap();
        if s.w != want {
            bad += 1;
        }
    }

    // Eq. 2.2 on constructed adjacent pairs: color distance < t_d = 10,
    // mean height difference < t_h1 = 1 m, edge jump < t_h2 = 0.2 m.
    struct Fixture {
        dsm_a: f64,
        dsm_b: f64,
        color_a: [f64; 3],
        color_b: [f64; 3],
        mean_a: f64,
        mean_b: f64,
        along_y: bool,
        want: bool,
    }
    let gray = [128.0, 128.0, 128.0];
    let merge_fixtures = [
        // identical pair merges
        Fixture { dsm_a: 10.0, dsm_b: 10.0, color_a: gray, color_b: gray, mean_a: 10.0, mean_b: 10.0, along_y: false, want: true },
        // color distance exactly 10 blocks
        Fixture { dsm_a: 10.0, dsm_b: 10.0, color_a: [100.0, 0.0, 0.0], color_b: [110.0, 0.0, 0.0], mean_a: 10.0, mean_b: 10.0, along_y: false, want: false },
        // color distance 9 passes
        Fixture { dsm_a: 10.0, dsm_b: 10.0, color_a: [100.0, 0.0, 0.0], color_b: [109.0, 0.0, 0.0], mean_a: 10.0, mean_b: 10.0, along_y: false, want: true },
        // mean height difference exactly 1 m blocks
        Fixture { dsm_a: 10.0, dsm_b: 10.0, color_a: gray, color_b: gray, mean_a: 10.0, mean_b: 11.0, along_y: false, want: false },
        // 0.9 m mean gap passes the mean test but the DSM jump blocks
        Fixture { dsm_a: 10.0, dsm_b: 10.9, color_a: gray, color_b: gray, mean_a: 10.0, mean_b: 10.9, along_y: false, want: false },
        // 0.15 m jump stays under t_h2
        Fixture { dsm_a: 10.0, dsm_b: 10.15, color_a: gray, color_b: gray, mean_a: 10.0, mean_b: 10.15, along_y: false, want: true },
        // 0.25 m jump blocks
        Fixture { dsm_a: 10.0, dsm_b: 10.25, color_a: gray, color_b: gray, mean_a: 10.0, mean_b: 10.25, along_y: false, want: false },
        // vertical adjacency merges
        Fixture { dsm_a: 10.0, dsm_b: 10.0, color_a: gray, color_b: gray, mean_a: 10.0, mean_b: 10.0, along_y: true, want: true },
        // sqrt(36 + 64 + 9) > 10 blocks
        Fixture { dsm_a: 10.0, dsm_b: 10.0, color_a: [0.0, 0.0, 0.0], color_b: [6.0, 8.0, 3.0], mean_a: 10.0, mean_b: 10.0, along_y: true, want: false },
        // sqrt(9 + 16) = 5 passes
        Fixture { dsm_a: 10.0, dsm_b: 10.0, color_a: [0.0, 0.0, 0.0], color_b: [3.0, 4.0, 0.0], mean_a: 10.0, mean_b: 10.0, along_y: true, want: true },
    ];
    let cfg = Config::default();
    let t = GeoTransform::new(0.0, 0.0, 0.5, -0.5);
    for f in &merge_fixtures {
        let mut dsm = Grid::filled(48, 48, 1, 0.0, t.clone());
        for r in 0..48 {
            for c in 0..48 {
                let p = t.pixel_center(c, r);
                let first = if f.along_y { p.y > -10.0 } else { p.x < 12.0 };
                dsm.set(c, r, 0, if first { f.dsm_a } else { f.dsm_b });
            }
        }
        let make = |center: Point, color: [f64; 3], mean: f64| Rect {
            center,
            length: 12.0,
            width: 8.0,
            orientation: 0.0,
            mean_color: color,
            color_std: [0.0; 3],
            mean_height: mean,
            parent_instance: 1,
        };
        let (a, b) = if f.along_y {
            (
                make(Point::new(12.0, -6.0), f.color_a, f.mean_a),
                make(Point::new(12.0, -14.0), f.color_b, f.mean_b),
            )
        } else {
            (
                make(Point::new(6.0, -12.0), f.color_a, f.mean_a),
                make(Point::new(18.0, -12.0), f.color_b, f.mean_b),
            )
        };
        if should_merge(&a, &b, &dsm, &cfg).unwrap() != f.want {
            bad += 1;
        }
    }
    verdict(
        11,
        "fusion_weight / should_merge hand-computed fixtures",
        bad == 0,
        &format!("20 fixtures, {bad} wrong"),
    );
}

// --------------------------------------------------------------- oracles 5-9

#[test]
fn criterion_05_max_inner_rectangle_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let t = GeoTransform::new(0.0, 0.0, 1.0, -1.0);
    let mut bad = 0;
    for case in 0..500 {
        let p = 0.2 + 0.6 * (case as f64 / 500.0);
        let mut mask = Grid::filled(32, 32, 1, 0u8, t.clone());
        for v in mask.data.iter_mut() {
            *v = (rng.gen_range(0.0..1.0) < p) as u8;
        }
        mask.data[0] = 1;
        let fast = max_inner_rect(&mask).unwrap();
        let brute = max_inner_rect_brute(&mask).unwrap();
        if (fast.c0, fast.r0, fast.w, fast.h) != (brute.c0, brute.r0, brute.w, brute.h) {
            bad += 1;
        }
    }
    verdict(5, "max inner rectangle equals O(area^2) brute force", bad == 0, &format!("500 masks, {bad} mismatches"));
}

#[test]
fn criterion_06_graph_cut_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut snap_violations = 0;
    let mut optimal = 0;
    let mut scale_violations = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let labels = rng.gen_range(2..=8);
        let mut p = GcProblem::new(n, labels);
        for i in 0..n {
            for l in 0..labels {
                p.set_data_cost(i, l, rng.gen_range(0.0..10.0));
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_range(0.0..1.0) < 0.5 {
                    p.add_edge(i, j, rng.gen_range(0.0..4.0));
                }
            }
        }
        let snap = p.energy(&p.initial_labeling());
        let sol = solve_multilabel(&p);
        let e = p.energy(&sol);
        if e > snap + 1e-9 {
            snap_violations += 1;
        }
        let (_, opt) = brute_force_optimum(&p);
        if e <= opt + 1e-9 {
            optimal += 1;
        }
        let mut scaled = GcProblem::new(n, labels);
        for i in 0..n {
            for l in 0..labels {
                scaled.set_data_cost(i, l, 17.0 * p.data_cost(i, l));
            }
        }
        for &(i, j, w) in p.edges() {
            scaled.add_edge(i, j, 17.0 * w);
        }
        if solve_multilabel(&scaled) != sol {
            scale_violations += 1;
        }
    }
    let ok = snap_violations == 0 && optimal >= 190 && scale_violations == 0;
    verdict(
        6,
        "alpha-expansion energy / optimality / scale invariance",
        ok,
        &format!("snap violations {snap_violations}, optimal {optimal}/200, scale violations {scale_violations}"),
    );
}

#[test]
fn criterion_07_circle_suite() {
    // Monte-Carlo least-squares recovery, pixel units.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut good = 0;
    for _ in 0..100 {
        let c = Point::new(rng.gen_range(30.0..70.0), rng.gen_range(30.0..70.0));
        let radius = rng.gen_range(10.0..30.0);
        let pts: Vec<Point> = (0..100)
            .map(|_| {
                let a = rng.gen_range(0.0..TAU);
                let r = radius + 0.5 * gauss(&mut rng);
                Point::new(c.x + r * a.cos(), c.y + r * a.sin())
            })
            .collect();
        let centroid = pts.iter().fold(Point::new(0.0, 0.0), |s, p| s.add(*p)).scale(1.0 / 100.0);
        let mean_r = pts.iter().map(|p| p.dist(centroid)).sum::<f64>() / 100.0;
        let Ok((fc, fr)) = fit_circle_ls(&pts, (centroid, mean_r)) else {
            continue;
        };
        if fc.dist(c) <= 0.5 && (fr - radius).abs() <= 0.5 {
            good += 1;
        }
    }

    // End-to-end detection of a 20 px radius circular building per roof type.
    let mut end_to_end_ok = true;
    let mut detail = String::new();
    let cases = [
        ("flat", [8.0, 0.0], CircularRoofType::Flat),
        ("cone", [12.0, 7.0], CircularRoofType::Cone),
        ("sphere", [-4.0, 15.0], CircularRoofType::Sphere),
    ];
    for (name, params, want_type) in cases {
        let desc = SynthScene {
            width: 128,
            height: 128,
            pixel_size: 0.5,
            origin: [0.0, 0.0],
            terrain_z: 2.0,
            noise_sigma: 0.0,
            color_noise: 0.0,
            seed: 7,
            background: [70, 72, 68],
            buildings: vec![SynthBuilding::Circle {
                roof_type: name.into(),
                center: [32.0, -32.0],
                radius: 10.0,
                params,
                color: [150, 40, 40],
            }],
        };
        let out = render(&desc).unwrap();
        let scene = reconstruct_outputs(&out);
        let circle = scene.buildings.iter().find_map(|b| match &b.model {
            BuildingModel::Circular(c) => Some(c),
            _ => None,
        });
        match circle {
            Some(c)
                if c.center.dist(Point::new(32.0, -32.0)) <= 0.5
                    && (c.radius - 10.0).abs() <= 0.5
                    && c.roof_type == want_type =>
            {
                detail.push_str(&format!("{name} ok, "));
            }
            Some(c) => {
                end_to_end_ok = false;
                detail.push_str(&format!(
                    "{name} wrong: type {:?}, center err {:.2}, radius err {:.2}, ",
                    c.roof_type,
                    c.center.dist(Point::new(32.0, -32.0)),
                    (c.radius - 10.0).abs()
                ));
            }
            None => {
                end_to_end_ok = false;
                detail.push_str(&format!("{name} not detected, "));
            }
        }
    }
    let ok = good >= 95 && end_to_end_ok;
    verdict(7, "circle fit and end-to-end detection", ok, &format!("ls {good}/100, {detail}"));
}

#[test]
fn criterion_08_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let t = GeoTransform::new(0.0, 0.0, 1.0, -1.0);
    let mut bad = 0;
    for case in 0..100 {
        let n = 64 * 64;
        let mut pred_mask = Grid::filled(64, 64, 1, 0u8, t.clone());
        let mut ref_mask = Grid::filled(64, 64, 1, 0u8, t.clone());
        ref_mask.nodata = Some(9);
        let mut pred_h = Grid::filled(64, 64, 1, 0.0f64, t.clone());
        let mut ref_h = Grid::filled(64, 64, 1, 0.0f64, t.clone());
        ref_h.nodata = Some(-9999.0);
        for i in 0..n {
            pred_mask.data[i] = (rng.gen_range(0.0..1.0) < 0.4) as u8;
            ref_mask.data[i] = if rng.gen_range(0.0..1.0) < 0.05 {
                9
            } else {
                (rng.gen_range(0.0..1.0) < 0.4) as u8
            };
            pred_h.data[i] = rng.gen_range(0.0..10.0);
            ref_h.data[i] = if rng.gen_range(0.0..1.0) < 0.05 {
                -9999.0
            } else {
                rng.gen_range(0.0..10.0)
            };
        }
        let tol = [0.5, 1.0, 2.0, 5.0][case % 4];

        // naive pixel loop
        let (mut tp, mut fp, mut fnn, mut tp3) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            if ref_mask.data[i] == 9 {
                continue;
            }
            let p = pred_mask.data[i] != 0;
            let r = ref_mask.data[i] != 0;
            if p && !r {
                fp += 1;
            } else if !p && r {
                fnn += 1;
            } else if p && r {
                if ref_h.data[i] == -9999.0 {
                    continue;
                }
                tp += 1;
                if (pred_h.data[i] - ref_h.data[i]).abs() <= tol {
                    tp3 += 1;
                }
            }
        }
        let oracle2 = {
            // the 2D tally keeps true positives regardless of height voids
            let tp2 = (0..n)
                .filter(|&i| {
                    ref_mask.data[i] != 9 && pred_mask.data[i] != 0 && ref_mask.data[i] != 0
                })
                .count() as u64;
            let d = tp2 + fp + fnn;
            if d == 0 {
                1.0
            } else {
                tp2 as f64 / d as f64
            }
        };
        let d3 = tp + fp + fnn;
        let oracle3 = if d3 == 0 { 1.0 } else { tp3 as f64 / d3 as f64 };

        let got2 = metrics::iou2(&pred_mask, &ref_mask).unwrap();
        let got3 = metrics::iou3(&pred_mask, &pred_h, &ref_mask, &ref_h, tol).unwrap();
        if got2 != oracle2 || got3 != oracle3 {
            bad += 1;
        }
        // infinite tolerance reduces to 2D on void-free heights
        let mut full_h = ref_h.clone();
        for v in full_h.data.iter_mut() {
            if *v == -9999.0 {
                *v = 1.0;
            }
        }
        let inf3 = metrics::iou3(&pred_mask, &pred_h, &ref_mask, &full_h, f64::INFINITY).unwrap();
        if inf3 != got2 {
            bad += 1;
        }
    }
    verdict(8, "iou2/iou3 equal naive pixel-loop oracle", bad == 0, &format!("100 pairs, {bad} mismatches"));
}

#[test]
fn criterion_09_douglas_peucker_property() {
    fn dist_seg(p: Point, a: Point, b: Point) -> f64 {
        let ab = b.sub(a);
        let len2 = ab.dot(ab);
        if len2 == 0.0 {
            return p.dist(a);
        }
        let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
        p.dist(a.add(ab.scale(t)))
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..40);
        let pts: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
            .collect();
        let eps = rng.gen_range(0.05..3.0);
        let simple = simplify_chain(&pts, eps);
        let max_dev = pts
            .iter()
            .map(|&p| {
                simple
                    .windows(2)
                    .map(|s| dist_seg(p, s[0], s[1]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max);
        worst = worst.max(max_dev / eps);
        if max_dev > eps + 1e-9 {
            bad += 1;
        }
    }
    verdict(
        9,
        "simplification deviation bounded by epsilon",
        bad == 0,
        &format!("1000 polylines, {bad} violations, worst dev/eps {worst:.3}"),
    );
}
