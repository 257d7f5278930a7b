//! Single-band north-up elevation grids.

mod geotiff;
mod gridding;
mod mesh;
mod tribar;

pub use geotiff::{read_geotiff, write_geotiff};
pub use gridding::{
    estimate_anps, grid_for_bounds, rasterize_max_dsm, rasterize_max_dsm_on, rasterize_min_dtm,
    rasterize_min_dtm_on,
};
pub use mesh::{load_obj, rasterize_mesh, rasterize_mesh_on, TriangleMesh};
pub use tribar::{generate_tribar, TribarSpec};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crs::CrsId;
use crate::error::{Error, Result};
use crate::geom::Point2;

pub const DEFAULT_NODATA: f64 = -9999.0;

/// Dimensions and north-up affine transform of a raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Upper-left corner of the upper-left cell.
    pub origin_x: f64,
    pub origin_y: f64,
    pub gsd_x: f64,
    /// Negative for north-up grids.
    pub gsd_y: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::input("raster must have at least one cell"));
        }
        if !(self.gsd_x > 0.0) || !(self.gsd_y < 0.0) {
            return Err(Error::input(format!(
                "raster must be north-up with gsd_x > 0 and gsd_y < 0 (got {}, {})",
                self.gsd_x, self.gsd_y
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::input("raster origin is not finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Point2 {
        Point2::new(
            self.origin_x + (col as f64 + 0.5) * self.gsd_x,
            self.origin_y + (row as f64 + 0.5) * self.gsd_y,
        )
    }

    /// Continuous pixel coordinates (column, row) of a map position; cell
    /// `(c, r)` spans `[c, c+1) x [r, r+1)`.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.gsd_x,
            (y - self.origin_y) / self.gsd_y,
        )
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (c, r) = self.to_pixel(x, y);
        let (c, r) = (c.floor(), r.floor());
        (c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height)
            .then_some((c as usize, r as usize))
    }

    pub fn cell_area(&self) -> f64 {
        (self.gsd_x * self.gsd_y).abs()
    }

    /// Map-space bounds `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let x1 = self.origin_x + self.width as f64 * self.gsd_x;
        let y1 = self.origin_y + self.height as f64 * self.gsd_y;
        (self.origin_x, y1, x1, self.origin_y)
    }

    pub fn same_as(&self, o: &GridSpec) -> bool {
        const TOL: f64 = 1e-9;
        self.width == o.width
            && self.height == o.height
            && (self.origin_x - o.origin_x).abs() <= TOL * self.gsd_x.abs().max(1.0)
            && (self.origin_y - o.origin_y).abs() <= TOL * self.gsd_y.abs().max(1.0)
            && (self.gsd_x - o.gsd_x).abs() <= TOL * self.gsd_x.abs()
            && (self.gsd_y - o.gsd_y).abs() <= TOL * self.gsd_y.abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    grid: GridSpec,
    crs: Option<CrsId>,
    nodata: f64,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(grid: GridSpec, crs: Option<CrsId>, nodata: f64, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::input(format!(
                "raster has {} values but grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        let mut r = Self {
            grid,
            crs,
            nodata,
            values,
        };
        // Non-finite samples are normalized to the sentinel.
        let nd = r.nodata;
        for v in &mut r.values {
            if !v.is_finite() {
                *v = nd;
            }
        }
        Ok(r)
    }

    pub fn filled(grid: GridSpec, crs: Option<CrsId>, value: f64) -> Result<Self> {
        Self::new(grid, crs, DEFAULT_NODATA, vec![value; grid.len()])
    }

    pub fn nodata_like(grid: GridSpec, crs: Option<CrsId>) -> Result<Self> {
        Self::filled(grid, crs, DEFAULT_NODATA)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn gsd(&self) -> f64 {
        self.grid.gsd_x
    }

    pub fn crs(&self) -> Option<&CrsId> {
        self.crs.as_ref()
    }

    pub fn set_crs(&mut self, crs: Option<CrsId>) {
        self.crs = crs;
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_valid_value(&self, v: f64) -> bool {
        v.is_finite() && v != self.nodata
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        if col >= self.grid.width || row >= self.grid.height {
            return None;
        }
        let v = self.values[row * self.grid.width + col];
        self.is_valid_value(v).then_some(v)
    }

    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        let w = self.grid.width;
        self.values[row * w + col] = if v.is_finite() { v } else { self.nodata };
    }

    pub fn valid_count(&self) -> usize {
        self.values
            .iter()
            .filter(|&&v| self.is_valid_value(v))
            .count()
    }

    /// Map-space value lookup (nearest cell).
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let (c, r) = self.grid.cell_of(x, y)?;
        self.get(c, r)
    }

    /// Bilinear sample at continuous pixel coordinates where integer
    /// coordinates `(c + 0.5, r + 0.5)` are cell centers. Any contributing
    /// (non-zero weight) neighbor that is missing makes the result missing.
    pub fn bilinear_at_pixel(&self, pc: f64, pr: f64) -> Option<f64> {
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < 1e-9 {
                r
            } else {
                v
            }
        };
        let fc = snap(pc - 0.5);
        let fr = snap(pr - 0.5);
        let (c0, r0) = (fc.floor(), fr.floor());
        let (tx, ty) = (fc - c0, fr - r0);
        if c0 < 0.0 || r0 < 0.0 {
            return None;
        }
        let (c, r) = (c0 as usize, r0 as usize);
        // Lerp form keeps constant fields exact; zero-weight taps are not read.
        let row = |r: usize| -> Option<f64> {
            let a = self.get(c, r)?;
            if tx == 0.0 {
                Some(a)
            } else {
                Some(a + tx * (self.get(c + 1, r)? - a))
            }
        };
        let top = row(r)?;
        if ty == 0.0 {
            Some(top)
        } else {
            Some(top + ty * (row(r + 1)? - top))
        }
    }

    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (pc, pr) = self.grid.to_pixel(x, y);
        self.bilinear_at_pixel(pc, pr)
    }

    /// Values of valid cells whose centers satisfy `inside`.
    pub fn collect_where(&self, mut inside: impl FnMut(Point2) -> bool) -> Vec<f64> {
        let mut out = Vec::new();
        for row in 0..self.grid.height {
            for col in 0..self.grid.width {
                if let Some(v) = self.get(col, row) {
                    if inside(self.grid.cell_center(col, row)) {
                        out.push(v);
                    }
                }
            }
        }
        out
    }

    /// Like [`Raster::collect_where`] but only visits cells whose centers
    /// can lie in the box `(min_x, min_y, max_x, max_y)`.
    pub fn collect_within(
        &self,
        bounds: (f64, f64, f64, f64),
        mut inside: impl FnMut(Point2) -> bool,
    ) -> Vec<f64> {
        let g = &self.grid;
        let (c0, r0) = g.to_pixel(bounds.0, bounds.3);
        let (c1, r1) = g.to_pixel(bounds.2, bounds.1);
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n);
        let (c0, c1) = (
            clamp(c0.floor() - 1.0, g.width),
            clamp(c1.ceil() + 1.0, g.width),
        );
        let (r0, r1) = (
            clamp(r0.floor() - 1.0, g.height),
            clamp(r1.ceil() + 1.0, g.height),
        );
        let mut out = Vec::new();
        for row in r0..r1 {
            for col in c0..c1 {
                if let Some(v) = self.get(col, row) {
                    if inside(g.cell_center(col, row)) {
                        out.push(v);
                    }
                }
            }
        }
        out
    }

    /// Adds `dz` to every valid cell.
    pub fn offset_values(&mut self, dz: f64) {
        let nd = self.nodata;
        for v in &mut self.values {
            if v.is_finite() && *v != nd {
                *v += dz;
            }
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Raster {
        let mut r = self.clone();
        r.grid.origin_x += dx;
        r.grid.origin_y += dy;
        r
    }
}

/// Bilinear resampling of `src` onto `target`'s grid.
///
/// Both rasters must share a CRS. Cells whose interpolation stencil touches
/// missing data come out as nodata.
pub fn resample_to_grid(src: &Raster, target: &GridSpec) -> Result<Raster> {
    target.validate()?;
    let (sx0, sy0, sx1, sy1) = src.grid.bounds();
    let (tx0, ty0, tx1, ty1) = target.bounds();
    if sx1 <= tx0 || tx1 <= sx0 || sy1 <= ty0 || ty1 <= sy0 {
        log::warn!("resample: source and target extents are disjoint; output is all nodata");
        return Raster::new(
            *target,
            src.crs.clone(),
            src.nodata,
            vec![src.nodata; target.len()],
        );
    }
    if src.grid.same_as(target) {
        let mut r = src.clone();
        r.grid = *target;
        return Ok(r);
    }
    let nodata = src.nodata;
    let mut values = vec![nodata; target.len()];
    values
        .par_chunks_mut(target.width)
        .enumerate()
        .for_each(|(row, out)| {
            for (col, v) in out.iter_mut().enumerate() {
                let p = target.cell_center(col, row);
                if let Some(z) = src.bilinear(p.x, p.y) {
                    *v = z;
                }
            }
        });
    Raster::new(*target, src.crs.clone(), nodata, values)
}

/// Halves the resolution by averaging 2x2 blocks (valid members only).
///
/// A trailing odd row or column is dropped.
pub fn downsample2(r: &Raster) -> Result<Raster> {
    let g = r.grid;
    if g.width < 2 || g.height < 2 {
        return Err(Error::input(format!(
            "downsample2 needs at least 2x2 cells (got {}x{})",
            g.width, g.height
        )));
    }
    let grid = GridSpec {
        width: g.width / 2,
        height: g.height / 2,
        gsd_x: 2.0 * g.gsd_x,
        gsd_y: 2.0 * g.gsd_y,
        ..g
    };
    let mut values = vec![r.nodata; grid.len()];
    values
        .par_chunks_mut(grid.width)
        .enumerate()
        .for_each(|(row, out)| {
            for (col, v) in out.iter_mut().enumerate() {
                let mut sum = 0.0;
                let mut n = 0u32;
                for (dc, dr) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    if let Some(z) = r.get(2 * col + dc, 2 * row + dr) {
                        sum += z;
                        n += 1;
                    }
                }
                if n > 0 {
                    *v = sum / n as f64;
                }
            }
        });
    Raster::new(grid, r.crs.clone(), r.nodata, values)
}
