use std::collections::HashMap;

use rayon::prelude::*;

use super::{Footprint, FootprintSet, FootprintSource};
use crate::error::{Error, Result};
use crate::geom::{ring_signed_area, simplify_dp, Point2, Polygon};
use crate::raster::{GridSpec, Raster};

pub const DEFAULT_MIN_AREA: f64 = 25.0;

/// Traces 4-connected components of 1-pixels into polygons.
///
/// Components are numbered in row-major discovery order; ids are assigned
/// from 1 to the components that survive the `min_area` filter (measured on
/// the exact pixel area). Rings follow pixel boundaries and are simplified
/// with Douglas-Peucker at `dp_epsilon` (0 keeps the exact outline).
pub fn polygonize_mask(mask: &Raster, min_area: f64, dp_epsilon: f64) -> Result<FootprintSet> {
    let g = *mask.grid();
    let (w, h) = (g.width, g.height);
    let mut on = Vec::with_capacity(g.len());
    for (i, &v) in mask.values().iter().enumerate() {
        match mask.is_valid_value(v).then_some(v) {
            Some(1.0) => on.push(true),
            Some(0.0) | None => on.push(false),
            Some(other) => {
                return Err(Error::input(format!(
                    "mask is not binary: value {other} at pixel ({}, {})",
                    i % w,
                    i / w
                )))
            }
        }
    }

    let mut label = vec![u32::MAX; g.len()];
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..g.len() {
        if !on[start] || label[start] != u32::MAX {
            continue;
        }
        let id = components.len() as u32;
        let mut pixels = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (c, r) = (i % w, i / w);
            let mut visit = |j: usize| {
                if on[j] && label[j] == u32::MAX {
                    label[j] = id;
                    stack.push(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
        }
        pixels.sort_unstable();
        components.push(pixels);
    }

    let cell_area = g.cell_area();
    let polys: Vec<Option<Polygon>> = components
        .par_iter()
        .enumerate()
        .map(|(id, pixels)| {
            if (pixels.len() as f64) * cell_area < min_area {
                return Ok(None);
            }
            trace_component(&g, &label, id as u32, pixels, dp_epsilon).map(Some)
        })
        .collect::<Result<_>>()?;
    let features = polys
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, p)| Footprint::new(i as u64 + 1, p, FootprintSource::Lidar))
        .collect();
    FootprintSet::new(features, mask.crs().cloned())
}

type V = (i64, i64);

/// Boundary of one component as a polygon. Lattice vertex `(c, -r)` is the
/// top-left corner of pixel `(c, r)`, so the lattice is y-up like the map.
fn trace_component(
    g: &GridSpec,
    label: &[u32],
    id: u32,
    pixels: &[usize],
    eps: f64,
) -> Result<Polygon> {
    let (w, h) = (g.width as i64, g.height as i64);
    let inside =
        |c: i64, r: i64| c >= 0 && r >= 0 && c < w && r < h && label[(r * w + c) as usize] == id;

    // Directed edges with the component on the left.
    let mut edges: Vec<(V, V)> = Vec::new();
    for &i in pixels {
        let (c, r) = ((i as i64) % w, (i as i64) / w);
        let (x0, x1, ytop, ybot) = (c, c + 1, -r, -r - 1);
        if !inside(c, r + 1) {
            edges.push(((x0, ybot), (x1, ybot)));
        }
        if !inside(c + 1, r) {
            edges.push(((x1, ybot), (x1, ytop)));
        }
        if !inside(c, r - 1) {
            edges.push(((x1, ytop), (x0, ytop)));
        }
        if !inside(c - 1, r) {
            edges.push(((x0, ytop), (x0, ybot)));
        }
    }
    let mut from: HashMap<V, Vec<usize>> = HashMap::with_capacity(edges.len());
    for (k, e) in edges.iter().enumerate() {
        from.entry(e.0).or_default().push(k);
    }

    let mut used = vec![false; edges.len()];
    let mut rings: Vec<Vec<V>> = Vec::new();
    for k0 in 0..edges.len() {
        if used[k0] {
            continue;
        }
        let mut ring = vec![edges[k0].0];
        let mut k = k0;
        used[k] = true;
        loop {
            let (a, b) = edges[k];
            let d = (b.0 - a.0, b.1 - a.1);
            // Where two diagonal pixels meet, turning left keeps them apart.
            let turn_rank = |e: &(V, V)| {
                let nd = (e.1 .0 - e.0 .0, e.1 .1 - e.0 .1);
                match d.0 * nd.1 - d.1 * nd.0 {
                    c if c > 0 => 0,
                    0 => 1,
                    _ => 2,
                }
            };
            k = from[&b]
                .iter()
                .copied()
                .filter(|&j| !used[j] || j == k0)
                .min_by_key(|&j| turn_rank(&edges[j]))
                .ok_or_else(|| Error::Geometry("open pixel boundary while tracing mask".into()))?;
            if k == k0 {
                break;
            }
            ring.push(b);
            used[k] = true;
        }
        rings.push(drop_collinear(&ring));
    }

    let to_world = |ring: &[V]| -> Vec<Point2> {
        ring.iter()
            .map(|&(x, y)| {
                Point2::new(
                    g.origin_x + x as f64 * g.gsd_x,
                    g.origin_y - y as f64 * g.gsd_y,
                )
            })
            .collect()
    };
    let mut exterior = None;
    let mut holes = Vec::new();
    for ring in &rings {
        let pts = to_world(ring);
        if ring_signed_area(&pts) > 0.0 {
            if exterior.replace(pts).is_some() {
                return Err(Error::Geometry(
                    "component traced to several outer rings".into(),
                ));
            }
        } else {
            holes.push(pts);
        }
    }
    let exterior = exterior.ok_or_else(|| Error::Geometry("component has no outer ring".into()))?;
    let exact = Polygon::new(exterior.clone(), holes.clone())?;
    if eps <= 0.0 {
        return Ok(exact);
    }
    let simp = |r: &[Point2]| {
        let s = simplify_dp(r, eps);
        if s.len() >= 3 {
            s
        } else {
            r.to_vec()
        }
    };
    let simplified_holes = holes
        .iter()
        .map(|h| simp(h))
        .filter(|h| ring_signed_area(h).abs() > 0.0)
        .collect();
    Ok(Polygon::new(simp(&exterior), simplified_holes).unwrap_or(exact))
}

fn drop_collinear(ring: &[V]) -> Vec<V> {
    let n = ring.len();
    (0..n)
        .filter(|&i| {
            let p = ring[(i + n - 1) % n];
            let q = ring[i];
            let r = ring[(i + 1) % n];
            (q.0 - p.0) * (r.1 - q.1) - (q.1 - p.1) * (r.0 - q.0) != 0
        })
        .map(|i| ring[i])
        .collect()
}
