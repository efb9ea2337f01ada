//! Raster file formats: ESRI ASCII grid, binary PGM/PPM with 6-line world
//! files, and the road-network JSON.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::{Cell, GeoTransform, Grid};

/// Declared role of a raster input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterKind {
    Dsm,
    Ortho,
    Mask,
    Instances,
}

// ---------------------------------------------------------------- ESRI ASCII

/// Read an ESRI ASCII grid (`ncols/nrows/xllcorner/yllcorner/cellsize/
/// NODATA_value` header followed by row-major north-to-south values).
pub fn read_ascii_grid(path: &Path) -> Result<Grid<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut cell = None;
    let mut nodata = None;
    let mut lines = text.lines().enumerate();
    let mut data_start = 0usize;
    let mut header_lines = 0usize;
    for (ln, line) in &mut lines {
        let mut it = line.split_whitespace();
        let key = match it.next() {
            Some(k) => k.to_ascii_lowercase(),
            None => continue,
        };
        let parse = |it: &mut dyn Iterator<Item = &str>| -> Result<f64> {
            it.next()
                .ok_or_else(|| Error::format(path, format!("line {}: missing header value", ln + 1)))?
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {}: bad header value", ln + 1)))
        };
        match key.as_str() {
            "ncols" => ncols = Some(parse(&mut it)? as usize),
            "nrows" => nrows = Some(parse(&mut it)? as usize),
            "xllcorner" => xll = Some(parse(&mut it)?),
            "yllcorner" => yll = Some(parse(&mut it)?),
            "cellsize" => cell = Some(parse(&mut it)?),
            "nodata_value" => nodata = Some(parse(&mut it)?),
            _ => {
                data_start = ln;
                break;
            }
        }
        header_lines = ln + 1;
        data_start = ln + 1;
    }
    let ncols = ncols.ok_or_else(|| Error::format(path, "missing ncols in header"))?;
    let nrows = nrows.ok_or_else(|| Error::format(path, "missing nrows in header"))?;
    let xll = xll.ok_or_else(|| Error::format(path, "missing xllcorner in header"))?;
    let yll = yll.ok_or_else(|| Error::format(path, "missing yllcorner in header"))?;
    let cell = cell.ok_or_else(|| Error::format(path, "missing cellsize in header"))?;
    if cell <= 0.0 {
        return Err(Error::format(path, "cellsize must be positive"));
    }
    let _ = header_lines;

    let mut data = Vec::with_capacity(ncols * nrows);
    for (ln, line) in text.lines().enumerate().skip(data_start) {
        let mut count_in_line = 0usize;
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {}: bad value '{}'", ln + 1, tok)))?;
            data.push(v);
            count_in_line += 1;
        }
        if count_in_line != 0 && count_in_line != ncols {
            return Err(Error::format(
                path,
                format!(
                    "dimension mismatch: line {} has {} values, expected ncols={}",
                    ln + 1,
                    count_in_line,
                    ncols
                ),
            ));
        }
    }
    if data.len() != ncols * nrows {
        return Err(Error::format(
            path,
            format!(
                "dimension mismatch: {} values for {}x{} grid",
                data.len(),
                ncols,
                nrows
            ),
        ));
    }
    let mut t = GeoTransform::new(xll, yll + nrows as f64 * cell, cell, -cell);
    t.crs_tag = String::new();
    Ok(Grid {
        width: ncols,
        height: nrows,
        bands: 1,
        data,
        nodata,
        transform: t,
    })
}

/// Write an ESRI ASCII grid. Values print via Rust's shortest round-trip
/// float formatting, so integer rasters round-trip bit-exactly.
pub fn write_ascii_grid(grid: &Grid<f64>, path: &Path) -> Result<()> {
    let t = &grid.transform;
    if (t.pixel_size_x - t.pixel_size_y.abs()).abs() > 1e-9 {
        return Err(Error::Invalid(
            "ASCII grid requires square pixels".into(),
        ));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let yll = t.origin_y + t.pixel_size_y * grid.height as f64;
    let mut body = String::new();
    body.push_str(&format!("ncols {}\n", grid.width));
    body.push_str(&format!("nrows {}\n", grid.height));
    body.push_str(&format!("xllcorner {}\n", t.origin_x));
    body.push_str(&format!("yllcorner {}\n", yll));
    body.push_str(&format!("cellsize {}\n", t.pixel_size_x));
    if let Some(nd) = grid.nodata {
        body.push_str(&format!("NODATA_value {}\n", nd));
    }
    for row in 0..grid.height {
        for col in 0..grid.width {
            if col > 0 {
                body.push(' ');
            }
            body.push_str(&format!("{}", grid.get(col, row, 0)));
        }
        body.push('\n');
    }
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

// ------------------------------------------------------------- world files

/// Read a 6-line world file (A, D, B, E, C, F). Rotation terms must be 0.
pub fn read_world_file(path: &Path, width: usize, height: usize) -> Result<GeoTransform> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, "world file must contain 6 numbers"))?;
    if vals.len() != 6 {
        return Err(Error::format(
            path,
            format!("world file has {} values, expected 6", vals.len()),
        ));
    }
    let (a, d, b, e, c, f) = (vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]);
    if d != 0.0 || b != 0.0 {
        return Err(Error::format(path, "rotated world files are unsupported"));
    }
    if a <= 0.0 || e == 0.0 {
        return Err(Error::format(path, "invalid pixel sizes in world file"));
    }
    let _ = (width, height);
    // C/F are the center of the top-left pixel
    Ok(GeoTransform::new(c - 0.5 * a, f - 0.5 * e, a, e))
}

pub fn write_world_file(t: &GeoTransform, path: &Path) -> Result<()> {
    let content = format!(
        "{}\n0\n0\n{}\n{}\n{}\n",
        t.pixel_size_x,
        t.pixel_size_y,
        t.origin_x + 0.5 * t.pixel_size_x,
        t.origin_y + 0.5 * t.pixel_size_y,
    );
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn world_file_path(path: &Path) -> PathBuf {
    // ppm -> ppw, pgm -> pgw; anything else gets .wld appended
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => path.with_extension("ppw"),
        Some("pgm") => path.with_extension("pgw"),
        _ => path.with_extension("wld"),
    }
}

// ------------------------------------------------------------- PGM and PPM

fn read_pnm_header<'a>(
    path: &Path,
    bytes: &'a [u8],
    magic: &str,
) -> Result<(usize, usize, usize, &'a [u8])> {
    let mut pos = 0usize;
    let mut fields: Vec<usize> = Vec::new();
    if bytes.len() < 2 || &bytes[0..2] != magic.as_bytes() {
        return Err(Error::format(path, format!("expected {} magic", magic)));
    }
    pos += 2;
    while fields.len() < 3 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(
                path,
                format!("malformed header at byte offset {}", pos),
            ));
        }
        let v: usize = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(path, "bad header number"))?;
        fields.push(v);
    }
    // single whitespace before raster data
    if pos >= bytes.len() {
        return Err(Error::format(path, "truncated header"));
    }
    pos += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported bit depth: maxval {} (only 255)", maxval),
        ));
    }
    Ok((w, h, maxval, &bytes[pos..]))
}

/// Read a binary PGM (P5) mask plus its world file.
pub fn read_pgm(path: &Path) -> Result<Grid<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, _max, data) = read_pnm_header(path, &bytes, "P5")?;
    if data.len() < w * h {
        return Err(Error::format(
            path,
            format!("dimension mismatch: {} data bytes for {}x{}", data.len(), w, h),
        ));
    }
    let transform = read_world_file(&world_file_path(path), w, h)?;
    Ok(Grid {
        width: w,
        height: h,
        bands: 1,
        data: data[..w * h].to_vec(),
        nodata: None,
        transform,
    })
}

pub fn write_pgm(grid: &Grid<u8>, path: &Path) -> Result<()> {
    assert_eq!(grid.bands, 1);
    let mut out = Vec::with_capacity(grid.data.len() + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", grid.width, grid.height).as_bytes());
    out.extend_from_slice(&grid.data);
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    write_world_file(&grid.transform, &world_file_path(path))
}

/// Read a binary PPM (P6) orthophoto plus its world file.
pub fn read_ppm(path: &Path) -> Result<Grid<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, _max, data) = read_pnm_header(path, &bytes, "P6")?;
    if data.len() < w * h * 3 {
        return Err(Error::format(
            path,
            format!(
                "dimension mismatch: {} data bytes for {}x{} rgb",
                data.len(),
                w,
                h
            ),
        ));
    }
    let transform = read_world_file(&world_file_path(path), w, h)?;
    Ok(Grid {
        width: w,
        height: h,
        bands: 3,
        data: data[..w * h * 3].to_vec(),
        nodata: None,
        transform,
    })
}

pub fn write_ppm(grid: &Grid<u8>, path: &Path) -> Result<()> {
    assert_eq!(grid.bands, 3);
    let mut out = Vec::with_capacity(grid.data.len() + 32);
    out.extend_from_slice(format!("P6\n{} {}\n255\n", grid.width, grid.height).as_bytes());
    out.extend_from_slice(&grid.data);
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    write_world_file(&grid.transform, &world_file_path(path))
}

// ----------------------------------------------------------- grid adapters

/// Cast a float grid to integer labels, checking every value is integral.
pub fn to_label_grid(grid: &Grid<f64>, path: &Path) -> Result<Grid<u32>> {
    let mut data = Vec::with_capacity(grid.data.len());
    for &v in &grid.data {
        if grid.nodata == Some(v) {
            data.push(0);
            continue;
        }
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::format(
                path,
                format!("label raster contains non-integer value {}", v),
            ));
        }
        data.push(v as u32);
    }
    Ok(Grid {
        width: grid.width,
        height: grid.height,
        bands: 1,
        data,
        nodata: None,
        transform: grid.transform.clone(),
    })
}

pub fn grid_to_f64<T: Cell>(grid: &Grid<T>) -> Grid<f64> {
    Grid {
        width: grid.width,
        height: grid.height,
        bands: grid.bands,
        data: grid.data.iter().map(|v| v.to_f64()).collect(),
        nodata: grid.nodata.map(|v| v.to_f64()),
        transform: grid.transform.clone(),
    }
}

// ------------------------------------------------------------- road network

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadPolyline {
    pub id: i64,
    pub coords: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default)]
pub struct RoadNetwork {
    pub polylines: Vec<RoadPolyline>,
}

impl RoadNetwork {
    pub fn from_json(text: &str) -> Result<RoadNetwork> {
        let polylines: Vec<RoadPolyline> = serde_json::from_str(text)?;
        for p in &polylines {
            if p.coords.len() < 2 {
                return Err(Error::Invalid(format!(
                    "road polyline {} has fewer than 2 points",
                    p.id
                )));
            }
        }
        Ok(RoadNetwork { polylines })
    }

    pub fn read(path: &Path) -> Result<RoadNetwork> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2<f64>, Point2<f64>)> + '_ {
        self.polylines.iter().flat_map(|p| {
            p.coords.windows(2).map(|w| {
                (
                    Point2::new(w[0][0], w[0][1]),
                    Point2::new(w[1][0], w[1][1]),
                )
            })
        })
    }
}
