//! Tunable parameters. Defaults target 0.5 m GSD imagery; the
//! pixel-denominated thresholds scale with resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Fusion decision-weight threshold (valid range 0.1-0.2).
    pub t_w: f64,
    /// Main-orientation summed length threshold, pixels.
    pub t_l_px: f64,
    /// Color difference threshold, 8-bit units.
    pub t_d: f64,
    /// Mean height difference threshold, meters.
    pub t_h1_m: f64,
    /// Edge height-gradient threshold, meters.
    pub t_h2_m: f64,
    /// DSM gradient threshold for separator candidates, meters.
    pub dsm_grad_m: f64,
    pub nms_window_px: usize,
    pub dilation_px: usize,
    pub edge_len_tol_px: usize,
    pub pyramid_levels: usize,
    /// Douglas-Peucker simplification tolerance, pixels.
    pub dp_epsilon_px: f64,
    /// Graph-cut smoothness weight (lambda).
    pub gc_lambda: f64,
    /// Exponential-kernel bandwidth (sigma).
    pub gc_sigma: f64,
    pub orient_step_deg: usize,
    pub osm_angle_deg: f64,
    pub irregular_iou: f64,
    pub irregular_area_px: usize,
    pub max_faces: usize,
    pub w_r: f64,
    pub w_theta: f64,
    pub w_s: f64,
    pub w_c: f64,
    pub w_sigma: f64,
    // circular-detection extensions
    pub circle_vote_min: usize,
    pub circle_vote_frac: f64,
    pub circle_grad_tol: f64,
    pub circle_gap_deg: f64,
    pub circle_flat_slope: f64,
    pub circle_cone_curv: f64,
    pub circle_fit_resid_px: f64,
    pub ransac_band_m: f64,
    pub ransac_min_inlier_frac: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            t_w: 0.15,
            t_l_px: 120.0,
            t_d: 10.0,
            t_h1_m: 1.0,
            t_h2_m: 0.2,
            dsm_grad_m: 0.3,
            nms_window_px: 7,
            dilation_px: 7,
            edge_len_tol_px: 5,
            pyramid_levels: 3,
            dp_epsilon_px: 2.0,
            gc_lambda: 1.0,
            gc_sigma: 1.0,
            orient_step_deg: 2,
            osm_angle_deg: 30.0,
            irregular_iou: 0.65,
            irregular_area_px: 5000,
            max_faces: 1000,
            w_r: 3.0,
            w_theta: 1.0,
            w_s: 1.0,
            w_c: 0.3,
            w_sigma: 0.3,
            circle_vote_min: 3,
            circle_vote_frac: 0.25,
            circle_grad_tol: 0.1,
            circle_gap_deg: 45.0,
            circle_flat_slope: 0.05,
            circle_cone_curv: 0.01,
            circle_fit_resid_px: 1.5,
            ransac_band_m: 0.3,
            ransac_min_inlier_frac: 0.5,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_l_px", self.t_l_px),
            ("t_d", self.t_d),
            ("t_h1_m", self.t_h1_m),
            ("t_h2_m", self.t_h2_m),
            ("dsm_grad_m", self.dsm_grad_m),
            ("dp_epsilon_px", self.dp_epsilon_px),
            ("gc_sigma", self.gc_sigma),
            ("osm_angle_deg", self.osm_angle_deg),
            ("irregular_iou", self.irregular_iou),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be strictly positive")));
            }
        }
        if self.gc_lambda < 0.0 {
            return Err(Error::Config("gc_lambda must be non-negative".into()));
        }
        if !(self.t_w > 0.0 && self.t_w < 1.0) {
            return Err(Error::Config("t_w must lie in (0, 1)".into()));
        }
        if self.orient_step_deg == 0 || 180 % self.orient_step_deg != 0 {
            return Err(Error::Config("orient_step_deg must divide 180".into()));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::Config("pyramid_levels must be at least 1".into()));
        }
        Ok(())
    }
}
