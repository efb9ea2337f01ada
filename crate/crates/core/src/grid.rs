//! Georeferenced raster container.

use num_traits::NumCast;

use crate::error::{Error, Result};
use crate::geom::Point2;

/// Raster cell value. Implemented for the integer and float types the file
/// formats carry; conversion goes through `f64` for resampling.
pub trait Cell: Copy + PartialEq + std::fmt::Debug + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

macro_rules! impl_cell_int {
    ($($t:ty),*) => {$(
        impl Cell for $t {
            fn to_f64(self) -> f64 { self as f64 }
            fn from_f64(v: f64) -> Self {
                NumCast::from(v.round()).unwrap_or_else(|| {
                    if v < 0.0 { <$t>::MIN } else { <$t>::MAX }
                })
            }
        }
    )*};
}
impl_cell_int!(u8, u16, u32, i32, i64);

impl Cell for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Cell for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Affine pixel <-> world mapping. `origin` is the outer corner of pixel
/// (0,0); `pixel_size_y` is negative for north-up rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
    pub crs_tag: String,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size_x: f64, pixel_size_y: f64) -> Self {
        assert!(pixel_size_x > 0.0, "pixel_size_x must be positive");
        assert!(pixel_size_y != 0.0, "pixel_size_y must be nonzero");
        GeoTransform {
            origin_x,
            origin_y,
            pixel_size_x,
            pixel_size_y,
            crs_tag: String::new(),
        }
    }

    /// World coordinates of the outer corner of pixel (col, row).
    pub fn pixel_to_world(&self, col: f64, row: f64) -> Point2<f64> {
        Point2::new(
            self.origin_x + col * self.pixel_size_x,
            self.origin_y + row * self.pixel_size_y,
        )
    }

    /// Fractional pixel coordinates (corner-based) of a world point.
    pub fn world_to_pixel(&self, p: Point2<f64>) -> (f64, f64) {
        (
            (p.x - self.origin_x) / self.pixel_size_x,
            (p.y - self.origin_y) / self.pixel_size_y,
        )
    }

    /// World coordinates of the center of pixel (col, row).
    pub fn pixel_center(&self, col: usize, row: usize) -> Point2<f64> {
        self.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5)
    }

    pub fn approx_eq(&self, other: &GeoTransform, tol: f64) -> bool {
        (self.origin_x - other.origin_x).abs() <= tol
            && (self.origin_y - other.origin_y).abs() <= tol
            && (self.pixel_size_x - other.pixel_size_x).abs() <= tol
            && (self.pixel_size_y - other.pixel_size_y).abs() <= tol
    }
}

/// Resampling policy for `rotate_resample`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Nearest,
    Bilinear,
}

/// Georeferenced raster with 1 or 3 interleaved bands.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T: Cell> {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub data: Vec<T>,
    pub nodata: Option<T>,
    pub transform: GeoTransform,
}

impl<T: Cell> Grid<T> {
    pub fn filled(width: usize, height: usize, bands: usize, value: T, transform: GeoTransform) -> Self {
        Grid {
            width,
            height,
            bands,
            data: vec![value; width * height * bands],
            nodata: None,
            transform,
        }
    }

    #[inline]
    pub fn idx(&self, col: usize, row: usize, band: usize) -> usize {
        (row * self.width + col) * self.bands + band
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, band: usize) -> T {
        self.data[self.idx(col, row, band)]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, band: usize, v: T) {
        let i = self.idx(col, row, band);
        self.data[i] = v;
    }

    #[inline]
    pub fn in_bounds(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    pub fn is_nodata(&self, v: T) -> bool {
        self.nodata.map_or(false, |nd| nd == v)
    }

    /// Value at a world point (band 0), or `None` outside / nodata.
    pub fn sample_nearest(&self, p: Point2<f64>, band: usize) -> Option<T> {
        let (px, py) = self.transform.world_to_pixel(p);
        let (col, row) = (px.floor() as i64, py.floor() as i64);
        if !self.in_bounds(col, row) {
            return None;
        }
        let v = self.get(col as usize, row as usize, band);
        if self.is_nodata(v) {
            None
        } else {
            Some(v)
        }
    }

    pub fn sample_bilinear(&self, p: Point2<f64>, band: usize) -> Option<f64> {
        let (px, py) = self.transform.world_to_pixel(p);
        // center-based interpolation
        let fx = px - 0.5;
        let fy = py - 0.5;
        let c0 = fx.floor();
        let r0 = fy.floor();
        let tx = fx - c0;
        let ty = fy - r0;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (dc, dr, w) in [
            (0i64, 0i64, (1.0 - tx) * (1.0 - ty)),
            (1, 0, tx * (1.0 - ty)),
            (0, 1, (1.0 - tx) * ty),
            (1, 1, tx * ty),
        ] {
            let (c, r) = (c0 as i64 + dc, r0 as i64 + dr);
            if self.in_bounds(c, r) {
                let v = self.get(c as usize, r as usize, band);
                if !self.is_nodata(v) {
                    acc += v.to_f64() * w;
                    wsum += w;
                }
            }
        }
        if wsum < 0.5 {
            None
        } else {
            Some(acc / wsum)
        }
    }

    /// Sub-raster covering pixel columns [c0, c0+w) and rows [r0, r0+h).
    pub fn crop(&self, c0: usize, r0: usize, w: usize, h: usize) -> Grid<T> {
        assert!(c0 + w <= self.width && r0 + h <= self.height);
        let mut data = Vec::with_capacity(w * h * self.bands);
        for r in r0..r0 + h {
            let start = (r * self.width + c0) * self.bands;
            data.extend_from_slice(&self.data[start..start + w * self.bands]);
        }
        let origin = self.transform.pixel_to_world(c0 as f64, r0 as f64);
        let mut t = self.transform.clone();
        t.origin_x = origin.x;
        t.origin_y = origin.y;
        Grid {
            width: w,
            height: h,
            bands: self.bands,
            data,
            nodata: self.nodata,
            transform: t,
        }
    }

    pub fn same_shape(&self, other: &Grid<impl Cell>) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.transform.approx_eq(&other.transform, 1e-6)
    }
}

/// Rotate a raster by `angle_deg` (counter-clockwise in world coordinates)
/// around `pivot` and resample onto a new axis-aligned grid with the same
/// pixel size. The output covers the rotated bounding box of the input.
///
/// The output transform describes the rotated frame: a feature with world
/// orientation `theta` appears at orientation `theta + angle_deg` in it.
pub fn rotate_resample<T: Cell>(
    grid: &Grid<T>,
    angle_deg: f64,
    pivot: Point2<f64>,
    sampling: Sampling,
) -> Result<Grid<T>> {
    if !angle_deg.is_finite() {
        return Err(Error::Invalid("rotation angle must be finite".into()));
    }
    let ang = angle_deg.to_radians();
    let t = &grid.transform;
    let corners = [
        t.pixel_to_world(0.0, 0.0),
        t.pixel_to_world(grid.width as f64, 0.0),
        t.pixel_to_world(0.0, grid.height as f64),
        t.pixel_to_world(grid.width as f64, grid.height as f64),
    ];
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for c in corners {
        let r = c.rotate_around(pivot, ang);
        min_x = min_x.min(r.x);
        max_x = max_x.max(r.x);
        min_y = min_y.min(r.y);
        max_y = max_y.max(r.y);
    }
    let psx = t.pixel_size_x;
    let psy = t.pixel_size_y;
    let out_w = ((max_x - min_x) / psx).ceil() as usize;
    let out_h = ((max_y - min_y) / psy.abs()).ceil() as usize;
    let mut ot = t.clone();
    ot.origin_x = min_x;
    ot.origin_y = if psy < 0.0 { max_y } else { min_y };
    let fill = grid.nodata.unwrap_or_else(|| T::from_f64(0.0));
    let mut out = Grid::filled(out_w.max(1), out_h.max(1), grid.bands, fill, ot);
    out.nodata = grid.nodata;
    for row in 0..out.height {
        for col in 0..out.width {
            let q = out.transform.pixel_center(col, row);
            let p = q.rotate_around(pivot, -ang);
            for b in 0..grid.bands {
                let v = match sampling {
                    Sampling::Nearest => grid.sample_nearest(p, b),
                    Sampling::Bilinear => grid.sample_bilinear(p, b).map(T::from_f64),
                };
                if let Some(v) = v {
                    out.set(col, row, b, v);
                }
            }
        }
    }
    Ok(out)
}
