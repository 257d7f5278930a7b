//! Global rigid alignment of a test raster to a reference raster by
//! subwindow phase correlation with median aggregation.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{resample_to_grid, GridSpec, Raster};

pub const DEFAULT_WINDOW_PX: usize = 512;
pub const DEFAULT_VALID_FRAC: f64 = 0.95;
pub const MIN_WINDOW_PX: usize = 32;

/// Peak-to-mean ratio of the correlation surface below which a result is
/// treated as low confidence.
const MIN_PEAK_RATIO: f64 = 3.0;

/// Translation to apply to the test tile, in pixels (`dy_px` positive down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseShift {
    pub dx_px: f64,
    pub dy_px: f64,
    /// Height of the correlation peak (1 for a perfect integer match).
    pub peak: f64,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubwindowResult {
    pub col: usize,
    pub row: usize,
    /// Map coordinates of the window's upper-left corner.
    pub origin_x: f64,
    pub origin_y: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Smaller of the test and reference valid fractions.
    pub valid_fraction: f64,
    pub accepted: bool,
}

/// Correction applied to the test product: translate by `(dx, dy)` meters,
/// then add `dz` meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalAlignment {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub window_px: usize,
    pub subwindows: Vec<SubwindowResult>,
    pub manual: bool,
}

impl GlobalAlignment {
    pub fn zero() -> Self {
        Self::manual(0.0, 0.0, 0.0)
    }

    pub fn manual(dx: f64, dy: f64, dz: f64) -> Self {
        Self {
            dx,
            dy,
            dz,
            window_px: 0,
            subwindows: Vec::new(),
            manual: true,
        }
    }

    pub fn accepted(&self) -> usize {
        self.subwindows.iter().filter(|w| w.accepted).count()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            offset: crate::error::json_error_offset(&text, &e),
            message: format!("{}: {e}", path.as_ref().display()),
        })
    }
}

struct Plans {
    w: usize,
    h: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(w: usize, h: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            w,
            h,
            row_fwd: p.plan_fft_forward(w),
            row_inv: p.plan_fft_inverse(w),
            col_fwd: p.plan_fft_forward(h),
            col_inv: p.plan_fft_inverse(h),
        }
    }

    fn fft2(&self, data: &mut [Complex<f64>], inverse: bool) {
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for row in data.chunks_exact_mut(self.w) {
            rows.process(row);
        }
        let mut col = vec![Complex::default(); self.h];
        for c in 0..self.w {
            for r in 0..self.h {
                col[r] = data[r * self.w + c];
            }
            cols.process(&mut col);
            for r in 0..self.h {
                data[r * self.w + c] = col[r];
            }
        }
    }
}

/// Phase correlation of two same-sized tiles. Missing cells are replaced by
/// the tile mean; the tiles are mean-removed and Hann-windowed.
pub fn phase_correlate(test: &Raster, reference: &Raster) -> Result<PhaseShift> {
    let (w, h) = (test.width(), test.height());
    if reference.width() != w || reference.height() != h {
        return Err(Error::input(format!(
            "tiles differ in size: {w}x{h} vs {}x{}",
            reference.width(),
            reference.height()
        )));
    }
    if w < 4 || h < 4 {
        return Err(Error::input(
            "phase correlation needs tiles of at least 4x4",
        ));
    }
    let get = |r: &Raster| {
        r.values()
            .iter()
            .map(|&v| r.is_valid_value(v).then_some(v))
            .collect::<Vec<_>>()
    };
    Ok(correlate(&Plans::new(w, h), &get(test), &get(reference)))
}

fn correlate(plans: &Plans, test: &[Option<f64>], reference: &[Option<f64>]) -> PhaseShift {
    let (w, h) = (plans.w, plans.h);
    let degenerate = PhaseShift {
        dx_px: 0.0,
        dy_px: 0.0,
        peak: 0.0,
        low_confidence: true,
    };
    let (Some(mut ft), Some(mut fr)) = (prepare(test, w, h), prepare(reference, w, h)) else {
        return degenerate;
    };
    plans.fft2(&mut ft, false);
    plans.fft2(&mut fr, false);
    let mut cross: Vec<Complex<f64>> = fr
        .iter()
        .zip(&ft)
        .map(|(a, b)| {
            let p = a * b.conj();
            let m = p.norm();
            if m > 1e-12 {
                p / m
            } else {
                Complex::default()
            }
        })
        .collect();
    plans.fft2(&mut cross, true);
    let n = (w * h) as f64;
    let surf: Vec<f64> = cross.iter().map(|c| c.re / n).collect();
    let (imax, &peak) = surf
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty tile");
    let mean_abs = surf.iter().map(|v| v.abs()).sum::<f64>() / n;
    let (pc, pr) = (imax % w, imax / w);
    let at = |c: usize, r: usize| surf[r * w + c];
    let sub_c = parabolic(at((pc + w - 1) % w, pr), peak, at((pc + 1) % w, pr));
    let sub_r = parabolic(at(pc, (pr + h - 1) % h), peak, at(pc, (pr + 1) % h));
    let wrap = |i: usize, n: usize| {
        if i > n / 2 {
            i as f64 - n as f64
        } else {
            i as f64
        }
    };
    PhaseShift {
        dx_px: wrap(pc, w) + sub_c,
        dy_px: wrap(pr, h) + sub_r,
        peak,
        low_confidence: !(peak > MIN_PEAK_RATIO * mean_abs),
    }
}

/// Vertex offset of the parabola through three equally spaced samples.
fn parabolic(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if den.abs() < 1e-15 {
        return 0.0;
    }
    // Quantize so FFT round-off on a symmetric peak reads as exactly zero.
    ((0.5 * (l - r) / den).clamp(-0.5, 0.5) * 1e6).round() / 1e6
}

/// Mean-filled, mean-removed, Hann-windowed tile; `None` when constant.
fn prepare(vals: &[Option<f64>], w: usize, h: usize) -> Option<Vec<Complex<f64>>> {
    let (sum, cnt) = vals
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if cnt == 0 {
        return None;
    }
    let mean = sum / cnt as f64;
    let var = vals
        .iter()
        .flatten()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>();
    if var <= 1e-18 * cnt as f64 * mean.abs().max(1.0).powi(2) {
        return None;
    }
    let hann =
        |i: usize, n: usize| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
    let wx: Vec<f64> = (0..w).map(|i| hann(i, w)).collect();
    let wy: Vec<f64> = (0..h).map(|i| hann(i, h)).collect();
    Some(
        vals.iter()
            .enumerate()
            .map(|(i, v)| Complex::new((v.unwrap_or(mean) - mean) * wx[i % w] * wy[i / w], 0.0))
            .collect(),
    )
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Estimates the rigid correction of `test` onto `reference` (same grid).
///
/// The grid is tiled into non-overlapping `window_px` windows. Windows where
/// both rasters exceed `valid_frac_min` valid cells and the correlation is
/// confident are accepted; each yields a horizontal shift and a vertical
/// offset (median of reference minus shifted test). The result is the
/// median of each component over accepted windows.
pub fn global_align(
    test: &Raster,
    reference: &Raster,
    window_px: usize,
    valid_frac_min: f64,
) -> Result<GlobalAlignment> {
    let g = *reference.grid();
    if !g.same_as(test.grid()) {
        return Err(Error::input(
            "test and reference rasters must share a grid before alignment",
        ));
    }
    if window_px < MIN_WINDOW_PX {
        return Err(Error::input(format!(
            "window_px must be at least {MIN_WINDOW_PX} (got {window_px})"
        )));
    }
    if !(0.0..=1.0).contains(&valid_frac_min) {
        return Err(Error::input(format!(
            "valid fraction {valid_frac_min} outside [0, 1]"
        )));
    }
    let (nx, ny) = (g.width / window_px, g.height / window_px);
    let plans = Plans::new(window_px, window_px);
    let windows: Vec<(usize, usize)> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i * window_px, j * window_px)))
        .collect();
    let results: Vec<SubwindowResult> = windows
        .par_iter()
        .map(|&(c0, r0)| window_result(test, reference, &g, &plans, c0, r0, valid_frac_min))
        .collect();
    let accepted: Vec<&SubwindowResult> = results.iter().filter(|r| r.accepted).collect();
    if accepted.is_empty() {
        return Err(Error::insufficient(format!(
            "no usable {window_px}px alignment windows out of {} (valid fraction > {valid_frac_min} required); \
             use a smaller window or supply manual offsets",
            results.len()
        )));
    }
    let med = |f: fn(&SubwindowResult) -> f64| {
        median(&mut accepted.iter().map(|r| f(r)).collect::<Vec<_>>())
    };
    Ok(GlobalAlignment {
        dx: med(|r| r.dx),
        dy: med(|r| r.dy),
        dz: med(|r| r.dz),
        window_px,
        subwindows: results.clone(),
        manual: false,
    })
}

fn window_result(
    test: &Raster,
    reference: &Raster,
    g: &GridSpec,
    plans: &Plans,
    c0: usize,
    r0: usize,
    valid_frac_min: f64,
) -> SubwindowResult {
    let n = plans.w;
    let tile = |r: &Raster| -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(n * n);
        for row in r0..r0 + n {
            for col in c0..c0 + n {
                out.push(r.get(col, row));
            }
        }
        out
    };
    let (tt, rt) = (tile(test), tile(reference));
    let frac = |t: &[Option<f64>]| t.iter().flatten().count() as f64 / (n * n) as f64;
    let valid_fraction = frac(&tt).min(frac(&rt));
    let mut res = SubwindowResult {
        col: c0,
        row: r0,
        origin_x: g.origin_x + c0 as f64 * g.gsd_x,
        origin_y: g.origin_y + r0 as f64 * g.gsd_y,
        dx: 0.0,
        dy: 0.0,
        dz: 0.0,
        valid_fraction,
        accepted: false,
    };
    if valid_fraction <= valid_frac_min {
        return res;
    }
    let shift = correlate(plans, &tt, &rt);
    if shift.low_confidence {
        return res;
    }
    let mut diffs = Vec::with_capacity(n * n);
    for row in r0..r0 + n {
        for col in c0..c0 + n {
            let Some(zr) = reference.get(col, row) else {
                continue;
            };
            let pc = col as f64 + 0.5 - shift.dx_px;
            let pr = row as f64 + 0.5 - shift.dy_px;
            if let Some(zt) = test.bilinear_at_pixel(pc, pr) {
                diffs.push(zr - zt);
            }
        }
    }
    if diffs.is_empty() {
        return res;
    }
    res.dx = shift.dx_px * g.gsd_x;
    res.dy = shift.dy_px * g.gsd_y;
    res.dz = median(&mut diffs);
    res.accepted = true;
    res
}

/// Translates the test raster by `(dx, dy)`, adds `dz`, and resamples it
/// onto `target`.
pub fn apply_alignment(test: &Raster, a: &GlobalAlignment, target: &GridSpec) -> Result<Raster> {
    let mut moved = test.translated(a.dx, a.dy);
    moved.offset_values(a.dz);
    resample_to_grid(&moved, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::DEFAULT_NODATA;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn grid(w: usize, h: usize, gsd: f64) -> GridSpec {
        GridSpec {
            width: w,
            height: h,
            origin_x: 1000.0,
            origin_y: 5000.0,
            gsd_x: gsd,
            gsd_y: -gsd,
        }
    }

    /// Smooth random terrain with building-like blocks.
    fn terrain(w: usize, h: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.random_range(0.02..0.15),
                    rng.random_range(0.02..0.15),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.5..3.0),
                )
            })
            .collect();
        let blocks: Vec<(usize, usize, usize, usize, f64)> = (0..(w * h / 400).max(3))
            .map(|_| {
                let (c, r) = (rng.random_range(0..w), rng.random_range(0..h));
                (
                    c,
                    r,
                    rng.random_range(3..12),
                    rng.random_range(3..12),
                    rng.random_range(3.0..15.0),
                )
            })
            .collect();
        let mut out = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let mut z: f64 = waves
                    .iter()
                    .map(|&(fx, fy, ph, a)| a * (fx * c as f64 + fy * r as f64 + ph).sin())
                    .sum();
                for &(bc, br, bw, bh, bz) in &blocks {
                    if c >= bc && c < bc + bw && r >= br && r < br + bh {
                        z += bz;
                    }
                }
                out[r * w + c] = z;
            }
        }
        out
    }

    /// `f` sampled at `(c - sc, r - sr)`: content moved by `(sc, sr)` pixels.
    fn shifted(w: usize, h: usize, seed: u64, sc: i64, sr: i64) -> Vec<f64> {
        let big = terrain(w + 40, h + 40, seed);
        let mut out = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let (cc, rr) = ((c as i64 + 20 - sc) as usize, (r as i64 + 20 - sr) as usize);
                out[r * w + c] = big[rr * (w + 40) + cc];
            }
        }
        out
    }

    fn raster(g: GridSpec, v: Vec<f64>) -> Raster {
        Raster::new(g, None, DEFAULT_NODATA, v).unwrap()
    }

    #[test]
    fn identical_tiles() {
        let g = grid(64, 64, 1.0);
        let r = raster(g, terrain(64, 64, 1));
        let s = phase_correlate(&r, &r).unwrap();
        assert!(s.dx_px.abs() < 1e-9 && s.dy_px.abs() < 1e-9);
        assert!(!s.low_confidence);
    }

    #[test]
    fn integer_shift_sign() {
        let g = grid(64, 64, 1.0);
        let reference = raster(g, shifted(64, 64, 2, 0, 0));
        let test = raster(g, shifted(64, 64, 2, 3, 0));
        let s = phase_correlate(&test, &reference).unwrap();
        assert!((s.dx_px + 3.0).abs() < 0.05, "{s:?}");
        assert!(s.dy_px.abs() < 0.05);
    }

    #[test]
    fn subpixel_half_shift() {
        // Smooth Gaussian bump, moved half a pixel right by bilinear warp.
        let n = 64;
        let g = grid(n, n, 1.0);
        let bump = |x: f64, y: f64| {
            10.0 * (-((x - 32.0).powi(2) + (y - 30.0).powi(2)) / (2.0 * 16.0)).exp()
        };
        let reference = raster(
            g,
            (0..n * n)
                .map(|i| bump((i % n) as f64, (i / n) as f64))
                .collect(),
        );
        let warped: Vec<f64> = (0..n * n)
            .map(|i| {
                let (c, r) = ((i % n) as f64, (i / n) as f64);
                0.5 * bump(c, r) + 0.5 * bump(c - 1.0, r)
            })
            .collect();
        let test = raster(g, warped);
        let s = phase_correlate(&test, &reference).unwrap();
        assert!((s.dx_px + 0.5).abs() < 0.2, "{s:?}");
        assert!(s.dy_px.abs() < 0.2);
    }

    #[test]
    fn constant_tile_low_confidence() {
        let g = grid(32, 32, 1.0);
        let c = Raster::filled(g, None, 4.0).unwrap();
        let r = raster(g, terrain(32, 32, 3));
        let s = phase_correlate(&c, &r).unwrap();
        assert!(s.low_confidence);
        assert_eq!((s.dx_px, s.dy_px), (0.0, 0.0));
    }

    #[test]
    fn global_identity() {
        let g = grid(128, 128, 0.5);
        let r = raster(g, terrain(128, 128, 4));
        let a = global_align(&r, &r, 64, 0.95).unwrap();
        assert_eq!(a.accepted(), 4);
        assert!(a.dx.abs() < 1e-9 && a.dy.abs() < 1e-9 && a.dz.abs() < 1e-9);
    }

    #[test]
    fn global_rigid_shift() {
        let gsd = 0.5;
        let g = grid(128, 128, gsd);
        let reference = raster(g, shifted(128, 128, 5, 0, 0));
        // Test content moved 2 cells east and 1 cell south, raised 0.5 m.
        let test = raster(
            g,
            shifted(128, 128, 5, 2, 1).iter().map(|v| v + 0.5).collect(),
        );
        let a = global_align(&test, &reference, 64, 0.95).unwrap();
        assert!((a.dx + 2.0 * gsd).abs() < 0.05 * gsd, "{a:?}");
        assert!((a.dy - gsd).abs() < 0.05 * gsd, "{a:?}");
        assert!((a.dz + 0.5).abs() < 1e-3, "{a:?}");
    }

    #[test]
    fn apply_then_realign_is_fixed_point() {
        let gsd = 0.5;
        let g = grid(128, 128, gsd);
        let reference = raster(g, shifted(128, 128, 6, 0, 0));
        let test = raster(
            g,
            shifted(128, 128, 6, -3, 2)
                .iter()
                .map(|v| v - 1.25)
                .collect(),
        );
        let a = global_align(&test, &reference, 64, 0.95).unwrap();
        let aligned = apply_alignment(&test, &a, &g).unwrap();
        // Edges lose coverage after the shift; relax the valid fraction.
        let b = global_align(&aligned, &reference, 64, 0.9).unwrap();
        assert!(b.dx.abs() < 0.25 * gsd && b.dy.abs() < 0.25 * gsd, "{b:?}");
        assert!(b.dz.abs() < 0.05, "{b:?}");
    }

    #[test]
    fn apply_examples() {
        let g = grid(8, 8, 1.0);
        let r = Raster::filled(g, None, 5.0).unwrap();
        assert_eq!(
            apply_alignment(&r, &GlobalAlignment::zero(), &g).unwrap(),
            r
        );
        let up = apply_alignment(&r, &GlobalAlignment::manual(0.0, 0.0, 1.0), &g).unwrap();
        assert!(up.values().iter().all(|&v| v == 6.0));
    }

    #[test]
    fn no_windows_errors() {
        let g = grid(40, 40, 1.0);
        let r = raster(g, terrain(40, 40, 7));
        assert!(global_align(&r, &r, 64, 0.95).is_err());
        let sparse = raster(
            g,
            (0..1600)
                .map(|i| {
                    if i % 3 == 0 {
                        DEFAULT_NODATA
                    } else {
                        1.0 + (i % 7) as f64
                    }
                })
                .collect(),
        );
        assert!(global_align(&sparse, &r, 32, 0.95).is_err());
        assert!(global_align(&r, &r, 16, 0.95).is_err());
    }

    #[test]
    fn median_resists_corrupted_windows() {
        let gsd = 1.0;
        let g = grid(192, 192, gsd);
        let reference = raster(g, shifted(192, 192, 8, 0, 0));
        let mut test_vals = shifted(192, 192, 8, 1, 1);
        // Corrupt 4 of 9 windows with a large unrelated shift.
        let other = shifted(192, 192, 8, 9, -7);
        for (wc, wr) in [(0, 0), (1, 1), (2, 0), (0, 2)] {
            for r in wr * 64..wr * 64 + 64 {
                for c in wc * 64..wc * 64 + 64 {
                    test_vals[r * 192 + c] = other[r * 192 + c];
                }
            }
        }
        let a = global_align(&raster(g, test_vals), &reference, 64, 0.95).unwrap();
        assert!(
            (a.dx + 1.0).abs() < 1.0 && (a.dy - 1.0).abs() < 1.0,
            "{a:?}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn antisymmetric(seed in 0u64..500, sc in -5i64..6, sr in -5i64..6) {
            let g = grid(64, 64, 1.0);
            let a = raster(g, shifted(64, 64, seed, 0, 0));
            let b = raster(g, shifted(64, 64, seed, sc, sr));
            let ab = phase_correlate(&a, &b).unwrap();
            let ba = phase_correlate(&b, &a).unwrap();
            prop_assert!((ab.dx_px + ba.dx_px).abs() < 0.2);
            prop_assert!((ab.dy_px + ba.dy_px).abs() < 0.2);
        }

        #[test]
        fn invariant_to_constant(seed in 0u64..500, k in -100.0f64..100.0) {
            let g = grid(64, 64, 1.0);
            let a = raster(g, shifted(64, 64, seed, 0, 0));
            let b = raster(g, shifted(64, 64, seed, 2, -1));
            let base = global_align(&b, &a, 32, 0.95).unwrap();
            let lift = |r: &Raster| raster(g, r.values().iter().map(|v| v + k).collect());
            let moved = global_align(&lift(&b), &lift(&a), 32, 0.95).unwrap();
            prop_assert!((base.dx - moved.dx).abs() < 1e-6);
            prop_assert!((base.dy - moved.dy).abs() < 1e-6);
            prop_assert!((base.dz - moved.dz).abs() < 1e-6);
        }
    }
}
