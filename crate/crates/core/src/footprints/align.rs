use rayon::prelude::*;

use super::{Footprint, FootprintSet, MaskPair};
use crate::error::{Error, Result};
use crate::raster::{GridSpec, Raster};

/// Moves each footprint by the integer-pixel translation `t` within
/// `[-radius, radius]^2` minimizing
/// `#(ground 1-pixels) - #(building 1-pixels)` over pixel centers inside the
/// translated footprint. Ties go to the smallest `|t|`, then row-major
/// order. Footprints with no valid mask pixel under them keep their
/// position and are flagged.
pub fn align_footprints(
    fps: &FootprintSet,
    masks: &MaskPair,
    search_radius_px: u32,
) -> Result<FootprintSet> {
    let g = *masks.building.grid();
    if !g.same_as(masks.ground.grid()) {
        return Err(Error::input(
            "building and ground masks are on different grids",
        ));
    }
    let r = search_radius_px as i64;
    let features = fps
        .features()
        .par_iter()
        .map(|f| {
            let cells = cells_inside(&g, f);
            let valid = cells.iter().any(|&(c, row)| {
                masks.building.get(c as usize, row as usize).is_some()
                    || masks.ground.get(c as usize, row as usize).is_some()
            });
            if !valid {
                log::warn!(
                    "footprint {} has no valid mask pixels; left unaligned",
                    f.id
                );
                return Footprint {
                    flagged: true,
                    ..f.clone()
                };
            }
            let mut best = (i64::MAX, i64::MAX, 0i64, 0i64);
            for ty in -r..=r {
                for tx in -r..=r {
                    let s = score(masks, &cells, tx, ty);
                    let key = (s, tx * tx + ty * ty, ty, tx);
                    if key < best {
                        best = key;
                    }
                }
            }
            let (tx, ty) = (best.3, best.2);
            let dx = tx as f64 * g.gsd_x;
            let dy = ty as f64 * g.gsd_y;
            Footprint {
                polygon: if tx == 0 && ty == 0 {
                    f.polygon.clone()
                } else {
                    f.polygon.translated(dx, dy)
                },
                shift: (f.shift.0 + dx, f.shift.1 + dy),
                flagged: false,
                ..f.clone()
            }
        })
        .collect();
    FootprintSet::new(features, fps.crs().cloned())
}

/// Alignment score of `f` translated by `(tx, ty)` pixels (columns, rows).
pub fn footprint_shift_score(f: &Footprint, masks: &MaskPair, tx: i64, ty: i64) -> i64 {
    score(masks, &cells_inside(masks.building.grid(), f), tx, ty)
}

fn score(masks: &MaskPair, cells: &[(i64, i64)], tx: i64, ty: i64) -> i64 {
    let g = masks.building.grid();
    let (w, h) = (g.width as i64, g.height as i64);
    let is_one = |r: &Raster, c: i64, row: i64| r.get(c as usize, row as usize) == Some(1.0);
    cells
        .iter()
        .map(|&(c, row)| (c + tx, row + ty))
        .filter(|&(c, row)| c >= 0 && row >= 0 && c < w && row < h)
        .map(|(c, row)| {
            is_one(&masks.ground, c, row) as i64 - is_one(&masks.building, c, row) as i64
        })
        .sum()
}

/// Pixel indices (possibly outside the grid) whose centers fall inside `f`.
fn cells_inside(g: &GridSpec, f: &Footprint) -> Vec<(i64, i64)> {
    let (lo, hi) = f.polygon.bbox();
    let (c0, r0) = g.to_pixel(lo.x, hi.y);
    let (c1, r1) = g.to_pixel(hi.x, lo.y);
    let (c0, c1) = (c0.min(c1).floor() as i64 - 1, c0.max(c1).ceil() as i64 + 1);
    let (r0, r1) = (r0.min(r1).floor() as i64 - 1, r0.max(r1).ceil() as i64 + 1);
    let mut out = Vec::new();
    for row in r0..=r1 {
        for c in c0..=c1 {
            let p = crate::geom::Point2::new(
                g.origin_x + (c as f64 + 0.5) * g.gsd_x,
                g.origin_y + (row as f64 + 0.5) * g.gsd_y,
            );
            if f.polygon.contains(p) {
                out.push((c, row));
            }
        }
    }
    out
}
