//! Point-cloud gridding: max-Z surface models and min-Z terrain models.

use rayon::prelude::*;

use super::{GridSpec, Raster, DEFAULT_NODATA};
use crate::error::{Error, Result};
use crate::pointcloud::{ClassLabel, ClassifiedPointCloud, LidarPoint};

const ANPS_FLOOR: f64 = 1e-3;
const FILL_TOLERANCE: f64 = 1e-4;
const FILL_MAX_ITERATIONS: usize = 10_000;
const FILL_RELAXATION: f64 = 1.8;

/// Average nominal point spacing: `sqrt(bbox area / N)` over non-withheld points.
pub fn estimate_anps(cloud: &ClassifiedPointCloud) -> Result<f64> {
    let mut n = 0usize;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in cloud.points().iter().filter(|p| !p.withheld) {
        n += 1;
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    if n < 2 {
        return Err(Error::insufficient(format!(
            "ANPS needs at least 2 non-withheld points (got {n})"
        )));
    }
    let area = (x1 - x0) * (y1 - y0);
    Ok((area / n as f64).sqrt().max(ANPS_FLOOR))
}

/// Grid snapped to multiples of `gsd` covering the bounds plus one cell of padding.
pub fn grid_for_bounds(
    min_x: f64,
    min_y: f64,
    max_x: f64,
    max_y: f64,
    gsd: f64,
) -> Result<GridSpec> {
    if !(gsd > 0.0) || !gsd.is_finite() {
        return Err(Error::input(format!("gsd must be positive (got {gsd})")));
    }
    let origin_x = (min_x / gsd).floor() * gsd - gsd;
    let origin_y = (max_y / gsd).ceil() * gsd + gsd;
    let last_col = ((max_x - origin_x) / gsd).floor() as usize;
    let last_row = ((origin_y - min_y) / gsd).floor() as usize;
    let grid = GridSpec {
        width: last_col + 2,
        height: last_row + 2,
        origin_x,
        origin_y,
        gsd_x: gsd,
        gsd_y: -gsd,
    };
    grid.validate()?;
    Ok(grid)
}

fn grid_for_cloud(cloud: &ClassifiedPointCloud, gsd: f64) -> Result<GridSpec> {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    let mut any = false;
    for p in cloud.points().iter().filter(|p| !p.withheld) {
        any = true;
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    if !any {
        return Err(Error::insufficient(
            "point cloud has no non-withheld points",
        ));
    }
    grid_for_bounds(x0, y0, x1, y1, gsd)
}

/// Cells receiving a point: the point is evaluated at its four corner offsets
/// `(x ± gsd/2, y ± gsd/2)` and each offset is assigned to the cell containing
/// it. This touches the (up to) four cells nearest the point.
pub(crate) fn window_cells(
    grid: &GridSpec,
    x: f64,
    y: f64,
) -> Option<(
    std::ops::RangeInclusive<usize>,
    std::ops::RangeInclusive<usize>,
)> {
    let hx = 0.5 * grid.gsd_x;
    let hy = 0.5 * grid.gsd_y.abs();
    let (c_lo, r_lo) = grid.to_pixel(x - hx, y + hy);
    let (c_hi, r_hi) = grid.to_pixel(x + hx, y - hy);
    let clamp = |lo: f64, hi: f64, n: usize| {
        let (lo, hi) = (lo.floor().max(0.0), hi.floor().min(n as f64 - 1.0));
        (lo <= hi).then_some(lo as usize..=hi as usize)
    };
    Some((
        clamp(c_lo, c_hi, grid.width)?,
        clamp(r_lo, r_hi, grid.height)?,
    ))
}

/// Parallel min/max gridding. Points are bucketed by their first row so each
/// output row is written by exactly one worker; the reduction is a pure
/// min/max and therefore independent of scheduling.
fn grid_extreme<'a>(
    grid: &GridSpec,
    points: impl Iterator<Item = &'a LidarPoint>,
    take_max: bool,
) -> Vec<f64> {
    let h = grid.height;
    let w = grid.width;
    let mut entries: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for p in points {
        if let Some((cols, rows)) = window_cells(grid, p.x, p.y) {
            entries.push((*rows.start(), *rows.end(), *cols.start(), *cols.end(), p.z));
        }
    }
    // CSR bucketing by covered row.
    let mut counts = vec![0usize; h + 1];
    for e in &entries {
        for r in e.0..=e.1 {
            counts[r + 1] += 1;
        }
    }
    for r in 0..h {
        counts[r + 1] += counts[r];
    }
    let mut fill = counts.clone();
    let mut bucket = vec![0u32; counts[h]];
    for (i, e) in entries.iter().enumerate() {
        for r in e.0..=e.1 {
            bucket[fill[r]] = i as u32;
            fill[r] += 1;
        }
    }
    let init = if take_max {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    let mut acc = vec![init; grid.len()];
    acc.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        for &i in &bucket[counts[row]..counts[row + 1]] {
            let e = &entries[i as usize];
            for v in &mut out[e.2..=e.3] {
                *v = if take_max { v.max(e.4) } else { v.min(e.4) };
            }
        }
    });
    for v in &mut acc {
        if !v.is_finite() {
            *v = DEFAULT_NODATA;
        }
    }
    acc
}

/// Max-Z surface model over non-withheld points, without smoothing.
pub fn rasterize_max_dsm(cloud: &ClassifiedPointCloud, gsd: f64) -> Result<Raster> {
    let grid = grid_for_cloud(cloud, gsd)?;
    rasterize_max_dsm_on(cloud, &grid)
}

pub fn rasterize_max_dsm_on(cloud: &ClassifiedPointCloud, grid: &GridSpec) -> Result<Raster> {
    let vals = grid_extreme(grid, cloud.points().iter().filter(|p| !p.withheld), true);
    Raster::new(*grid, cloud.crs().cloned(), DEFAULT_NODATA, vals)
}

/// Min-Z terrain model over ground points with Laplace-filled gaps.
pub fn rasterize_min_dtm(cloud: &ClassifiedPointCloud, gsd: f64) -> Result<Raster> {
    let grid = grid_for_cloud(cloud, gsd)?;
    rasterize_min_dtm_on(cloud, &grid)
}

pub fn rasterize_min_dtm_on(cloud: &ClassifiedPointCloud, grid: &GridSpec) -> Result<Raster> {
    let ground = cloud
        .points()
        .iter()
        .filter(|p| !p.withheld && p.label == ClassLabel::Ground);
    let mut vals = grid_extreme(grid, ground, false);
    let seeds: Vec<bool> = vals.iter().map(|&v| v != DEFAULT_NODATA).collect();
    if !seeds.iter().any(|&s| s) {
        return Err(Error::insufficient(
            "terrain model needs at least one non-withheld ground point",
        ));
    }
    laplace_fill(&mut vals, &seeds, grid.width, grid.height);
    Raster::new(*grid, cloud.crs().cloned(), DEFAULT_NODATA, vals)
}

/// Fills non-seed cells with the discrete harmonic interpolant of the seeds.
///
/// Unknown cells start from their nearest seed (breadth-first), then are
/// relaxed by 4-neighbor averaging (over-relaxed Gauss-Seidel, row-major)
/// until the largest update falls below the tolerance.
pub(crate) fn laplace_fill(vals: &mut [f64], seeds: &[bool], w: usize, h: usize) {
    let mut known = seeds.to_vec();
    let mut frontier: Vec<usize> = (0..vals.len()).filter(|&i| known[i]).collect();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &i in &frontier {
            let (c, r) = (i % w, i / w);
            for j in neighbors(c, r, w, h) {
                if !known[j] {
                    known[j] = true;
                    vals[j] = vals[i];
                    next.push(j);
                }
            }
        }
        frontier = next;
    }
    let unknown: Vec<usize> = (0..vals.len()).filter(|&i| !seeds[i]).collect();
    if unknown.is_empty() {
        return;
    }
    for _ in 0..FILL_MAX_ITERATIONS {
        let mut max_change: f64 = 0.0;
        for &i in &unknown {
            let (c, r) = (i % w, i / w);
            let mut sum = 0.0;
            let mut n = 0.0;
            for j in neighbors(c, r, w, h) {
                sum += vals[j];
                n += 1.0;
            }
            if n == 0.0 {
                continue;
            }
            let delta = FILL_RELAXATION * (sum / n - vals[i]);
            vals[i] += delta;
            max_change = max_change.max(delta.abs());
        }
        if max_change < FILL_TOLERANCE {
            break;
        }
    }
}

fn neighbors(c: usize, r: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let mut out = [usize::MAX; 4];
    if c > 0 {
        out[0] = r * w + c - 1;
    }
    if c + 1 < w {
        out[1] = r * w + c + 1;
    }
    if r > 0 {
        out[2] = (r - 1) * w + c;
    }
    if r + 1 < h {
        out[3] = (r + 1) * w + c;
    }
    out.into_iter().filter(|&i| i != usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{ClassLabel, ClassifiedPointCloud, LidarPoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(pts: &[(f64, f64, f64, ClassLabel)]) -> ClassifiedPointCloud {
        ClassifiedPointCloud::new(
            pts.iter()
                .map(|&(x, y, z, l)| LidarPoint::new(x, y, z, l))
                .collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn anps_examples() {
        let corners = cloud(&[
            (0.0, 0.0, 0.0, ClassLabel::Ground),
            (2.0, 0.0, 0.0, ClassLabel::Ground),
            (0.0, 2.0, 0.0, ClassLabel::Ground),
            (2.0, 2.0, 0.0, ClassLabel::Ground),
        ]);
        assert!((estimate_anps(&corners).unwrap() - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<_> = (0..10_000)
            .map(|_| {
                (
                    rng.random_range(0.0..100.0),
                    rng.random_range(0.0..100.0),
                    0.0,
                    ClassLabel::Ground,
                )
            })
            .collect();
        assert!((estimate_anps(&cloud(&pts)).unwrap() - 1.0).abs() < 0.01);

        assert!(estimate_anps(&cloud(&[(1.0, 1.0, 1.0, ClassLabel::Ground)])).is_err());
    }

    #[test]
    fn point_at_cell_center_hits_two_by_two_window() {
        let c = cloud(&[
            (0.0, 0.0, 0.0, ClassLabel::Ground),
            (10.0, 10.0, 0.0, ClassLabel::Ground),
            (4.5, 5.5, 9.0, ClassLabel::Building),
        ]);
        let dsm = rasterize_max_dsm(&c, 1.0).unwrap();
        let g = *dsm.grid();
        // Brute force: cells containing any of the four corner offsets.
        let mut expect = Vec::new();
        for (ox, oy) in [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)] {
            let cell = g.cell_of(4.5 + ox, 5.5 + oy).unwrap();
            if !expect.contains(&cell) {
                expect.push(cell);
            }
        }
        assert_eq!(expect.len(), 4);
        let centre = g.cell_of(4.5, 5.5).unwrap();
        assert!(expect.contains(&centre));
        for row in 0..g.height {
            for col in 0..g.width {
                let hit = dsm.get(col, row) == Some(9.0);
                assert_eq!(hit, expect.contains(&(col, row)), "cell {col},{row}");
            }
        }
    }

    #[test]
    fn max_rule_and_nodata() {
        let c = cloud(&[
            (0.2, 0.2, 3.0, ClassLabel::Building),
            (0.3, 0.3, 7.0, ClassLabel::Building),
            (20.0, 20.0, 1.0, ClassLabel::Ground),
        ]);
        let dsm = rasterize_max_dsm(&c, 1.0).unwrap();
        let (col, row) = dsm.grid().cell_of(0.25, 0.25).unwrap();
        assert_eq!(dsm.get(col, row), Some(7.0));
        let (col, row) = dsm.grid().cell_of(10.0, 10.0).unwrap();
        assert_eq!(dsm.get(col, row), None);
    }

    #[test]
    fn withheld_points_excluded() {
        let mut pts = vec![
            LidarPoint::new(0.0, 0.0, 1.0, ClassLabel::Ground),
            LidarPoint::new(5.0, 5.0, 1.0, ClassLabel::Ground),
        ];
        let mut w = LidarPoint::new(2.5, 2.5, 100.0, ClassLabel::Building);
        w.withheld = true;
        pts.push(w);
        let dsm = rasterize_max_dsm(&ClassifiedPointCloud::new(pts, None).unwrap(), 1.0).unwrap();
        assert!(dsm.values().iter().all(|&v| v != 100.0));
    }

    #[test]
    fn empty_cloud_errors() {
        let mut p = LidarPoint::new(0.0, 0.0, 0.0, ClassLabel::Ground);
        p.withheld = true;
        let c = ClassifiedPointCloud::new(vec![p], None).unwrap();
        assert!(rasterize_max_dsm(&c, 1.0).is_err());
    }

    #[test]
    fn dtm_flat_plane() {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push((i as f64 * 0.5, j as f64 * 0.5, 5.0, ClassLabel::Ground));
            }
        }
        let dtm = rasterize_min_dtm(&cloud(&pts), 1.0).unwrap();
        assert_eq!(dtm.valid_count(), dtm.grid().len());
        assert!(dtm.values().iter().all(|&v| (v - 5.0).abs() < 1e-9));
    }

    #[test]
    fn dtm_min_rule() {
        let c = cloud(&[
            (0.5, 0.5, 8.0, ClassLabel::Ground),
            (0.5, 0.5, 2.0, ClassLabel::Ground),
            (0.5, 0.5, 1.0, ClassLabel::Building),
        ]);
        let dtm = rasterize_min_dtm(&c, 1.0).unwrap();
        let (col, row) = dtm.grid().cell_of(0.5, 0.5).unwrap();
        assert_eq!(dtm.get(col, row), Some(2.0));
    }

    #[test]
    fn dtm_fill_is_bounded_and_monotone() {
        let c = cloud(&[
            (0.0, 0.0, 0.0, ClassLabel::Ground),
            (20.0, 0.0, 10.0, ClassLabel::Ground),
        ]);
        let dtm = rasterize_min_dtm(&c, 1.0).unwrap();
        let g = *dtm.grid();
        for &v in dtm.values() {
            assert!((-1e-3..=10.0 + 1e-3).contains(&v));
        }
        // Between the two seeds the harmonic fill rises monotonically.
        for row in 0..g.height {
            for col in 1..g.width {
                let (xa, xb) = (g.cell_center(col - 1, row).x, g.cell_center(col, row).x);
                if xa < 0.0 || xb > 20.0 {
                    continue;
                }
                let (a, b) = (dtm.get(col - 1, row).unwrap(), dtm.get(col, row).unwrap());
                assert!(b >= a - 1e-3, "row {row} col {col}: {a} -> {b}");
            }
        }
    }

    #[test]
    fn dtm_without_ground_errors() {
        let c = cloud(&[
            (0.0, 0.0, 1.0, ClassLabel::Building),
            (3.0, 3.0, 1.0, ClassLabel::Building),
        ]);
        assert!(rasterize_min_dtm(&c, 1.0).is_err());
    }

    #[test]
    fn dsm_permutation_invariant_and_dtm_below_dsm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts: Vec<_> = (0..2000)
            .map(|i| {
                let l = if i % 3 == 0 {
                    ClassLabel::Ground
                } else {
                    ClassLabel::Building
                };
                (
                    rng.random_range(0.0..30.0),
                    rng.random_range(0.0..30.0),
                    rng.random_range(0.0..20.0),
                    l,
                )
            })
            .collect();
        let a = rasterize_max_dsm(&cloud(&pts), 0.7).unwrap();
        let dtm = rasterize_min_dtm(&cloud(&pts), 0.7).unwrap();
        pts.reverse();
        pts.swap(3, 1500);
        let b = rasterize_max_dsm(&cloud(&pts), 0.7).unwrap();
        assert_eq!(a.values(), b.values());
        let dsm_max = a
            .values()
            .iter()
            .copied()
            .filter(|&v| v != DEFAULT_NODATA)
            .fold(f64::MIN, f64::max);
        let dtm_min = dtm.values().iter().copied().fold(f64::MAX, f64::min);
        assert!(dtm_min <= dsm_max);
    }
}
