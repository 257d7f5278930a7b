use std::path::Path;

use rayon::prelude::*;

use super::gridding::grid_for_bounds;
use super::{GridSpec, Raster, DEFAULT_NODATA};
use crate::crs::CrsId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    crs: Option<CrsId>,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<[f64; 3]>,
        triangles: Vec<[usize; 3]>,
        crs: Option<CrsId>,
    ) -> Result<Self> {
        if let Some(t) = triangles
            .iter()
            .find(|t| t.iter().any(|&i| i >= vertices.len()))
        {
            return Err(Error::input(format!(
                "triangle {t:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("mesh has non-finite vertex coordinates"));
        }
        Ok(Self {
            vertices,
            triangles,
            crs,
        })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn crs(&self) -> Option<&CrsId> {
        self.crs.as_ref()
    }

    /// Applies a horizontal coordinate transform to every vertex.
    pub fn map_xy(&mut self, mut f: impl FnMut(f64, f64) -> (f64, f64), crs: Option<CrsId>) {
        for v in &mut self.vertices {
            let (x, y) = f(v[0], v[1]);
            v[0] = x;
            v[1] = y;
        }
        self.crs = crs;
    }
}

/// Loads a Wavefront OBJ mesh (all models merged, faces triangulated).
pub fn load_obj(path: impl AsRef<Path>, crs: Option<CrsId>) -> Result<TriangleMesh> {
    let opts = tobj::LoadOptions {
        triangulate: true,
        single_index: true,
        ..Default::default()
    };
    let (models, _) = tobj::load_obj(path.as_ref(), &opts).map_err(|e| Error::Parse {
        offset: 0,
        message: format!("{}: {e}", path.as_ref().display()),
    })?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for m in models {
        let base = vertices.len();
        for p in m.mesh.positions.chunks_exact(3) {
            vertices.push([p[0] as f64, p[1] as f64, p[2] as f64]);
        }
        for t in m.mesh.indices.chunks_exact(3) {
            triangles.push([
                base + t[0] as usize,
                base + t[1] as usize,
                base + t[2] as usize,
            ]);
        }
    }
    TriangleMesh::new(vertices, triangles, crs)
}

/// Max-Z raster of a mesh sampled at cell centers.
///
/// Triangles with (near) zero projected area are vertical faces and are skipped.
pub fn rasterize_mesh(mesh: &TriangleMesh, gsd: f64) -> Result<Raster> {
    if mesh.vertices.is_empty() || mesh.triangles.is_empty() {
        return Err(Error::input("mesh has no triangles"));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for v in &mesh.vertices {
        x0 = x0.min(v[0]);
        y0 = y0.min(v[1]);
        x1 = x1.max(v[0]);
        y1 = y1.max(v[1]);
    }
    let grid = grid_for_bounds(x0, y0, x1, y1, gsd)?;
    rasterize_mesh_on(mesh, &grid)
}

pub fn rasterize_mesh_on(mesh: &TriangleMesh, grid: &GridSpec) -> Result<Raster> {
    struct Tri {
        p: [[f64; 3]; 3],
        area2: f64,
        cols: (usize, usize),
    }
    let mut tris = Vec::new();
    let mut rows_of: Vec<Vec<u32>> = vec![Vec::new(); grid.height];
    for t in &mesh.triangles {
        let p = [
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        ];
        let area2 =
            (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let scale = p
            .iter()
            .map(|v| v[0].abs().max(v[1].abs()))
            .fold(1.0, f64::max);
        if area2.abs() <= 1e-12 * scale {
            continue;
        }
        let xs = [p[0][0], p[1][0], p[2][0]];
        let ys = [p[0][1], p[1][1], p[2][1]];
        let (cmin, rmin) = grid.to_pixel(
            xs.iter().copied().fold(f64::MAX, f64::min),
            ys.iter().copied().fold(f64::MIN, f64::max),
        );
        let (cmax, rmax) = grid.to_pixel(
            xs.iter().copied().fold(f64::MIN, f64::max),
            ys.iter().copied().fold(f64::MAX, f64::min),
        );
        let c0 = (cmin - 0.5).ceil().max(0.0);
        let c1 = (cmax - 0.5).floor().min(grid.width as f64 - 1.0);
        let r0 = (rmin - 0.5).ceil().max(0.0);
        let r1 = (rmax - 0.5).floor().min(grid.height as f64 - 1.0);
        if c0 > c1 || r0 > r1 {
            continue;
        }
        let idx = tris.len() as u32;
        tris.push(Tri {
            p,
            area2,
            cols: (c0 as usize, c1 as usize),
        });
        for ids in &mut rows_of[r0 as usize..=r1 as usize] {
            ids.push(idx);
        }
    }
    if tris.is_empty() {
        log::warn!("mesh has no horizontally projecting triangles; raster is all nodata");
    }
    let mut vals = vec![DEFAULT_NODATA; grid.len()];
    vals.par_chunks_mut(grid.width)
        .enumerate()
        .for_each(|(row, out)| {
            for &ti in &rows_of[row] {
                let t = &tris[ti as usize];
                let (c0, c1) = t.cols;
                for (col, v) in (c0..=c1).zip(&mut out[c0..=c1]) {
                    let c = grid.cell_center(col, row);
                    if let Some(z) = interpolate(&t.p, t.area2, c.x, c.y) {
                        if *v == DEFAULT_NODATA || z > *v {
                            *v = z;
                        }
                    }
                }
            }
        });
    Raster::new(*grid, mesh.crs.clone(), DEFAULT_NODATA, vals)
}

/// Barycentric height at (x, y), or `None` outside the (closed) triangle.
fn interpolate(p: &[[f64; 3]; 3], area2: f64, x: f64, y: f64) -> Option<f64> {
    let edge = |a: [f64; 3], b: [f64; 3]| (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    let w0 = edge(p[1], p[2]) / area2;
    let w1 = edge(p[2], p[0]) / area2;
    let w2 = edge(p[0], p[1]) / area2;
    const TOL: f64 = -1e-12;
    (w0 >= TOL && w1 >= TOL && w2 >= TOL)
        .then(|| p[0][2] + w1 * (p[1][2] - p[0][2]) + w2 * (p[2][2] - p[0][2]))
}
