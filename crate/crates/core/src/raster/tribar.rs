//! Synthetic tribar resolution target.

use serde::{Deserialize, Serialize};

use super::{GridSpec, Raster, DEFAULT_NODATA};
use crate::error::{Error, Result};
use crate::footprints::{Footprint, FootprintSet, FootprintSource};
use crate::geom::Polygon;

const MAX_CELLS: usize = 100_000_000;

/// Layout of a tribar DSM: `n_groups` groups of `n_bars` parallel bars, with
/// the gap inside group `g` equal to `gap * gap_scale^g`.
///
/// Bars run north-south; groups are stacked north to south `group_pitch`
/// apart. All widths are snapped to whole cells (at least one) so every bar
/// and gap boundary falls on a cell edge and the emitted footprints match
/// the raster exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TribarSpec {
    pub gsd: f64,
    pub bar_width: f64,
    /// When set, each group's bars are this multiple of its gap wide and
    /// `bar_width` is ignored.
    pub bar_width_ratio: Option<f64>,
    pub gap: f64,
    pub bar_height: f64,
    pub n_bars: usize,
    pub n_groups: usize,
    pub gap_scale: f64,
    pub bar_length: f64,
    pub group_pitch: f64,
    pub margin: f64,
    /// Group `g` starts `(g * stagger_cells) % 16` cells right of the
    /// margin, so bar edges sample every phase of the downsampling blocks.
    pub stagger_cells: usize,
}

impl Default for TribarSpec {
    fn default() -> Self {
        // Classic tribars (bar width equal to the gap) with gaps from 0.3 m
        // to 8 m over 32 groups.
        Self {
            gsd: 0.25,
            bar_width: 4.0,
            bar_width_ratio: Some(1.0),
            gap: 0.3,
            bar_height: 10.0,
            n_bars: 3,
            n_groups: 32,
            gap_scale: (8.0f64 / 0.3).powf(1.0 / 31.0),
            bar_length: 24.0,
            group_pitch: 60.0,
            margin: 8.0,
            stagger_cells: 7,
        }
    }
}

impl TribarSpec {
    fn cells(&self, len: f64) -> usize {
        ((len / self.gsd).round() as usize).max(1)
    }

    /// Snapped gap width of each group in meters.
    pub fn gap_widths(&self) -> Vec<f64> {
        (0..self.n_groups)
            .map(|g| self.cells(self.gap * self.gap_scale.powi(g as i32)) as f64 * self.gsd)
            .collect()
    }

    /// Snapped bar width of each group in meters.
    pub fn bar_widths(&self) -> Vec<f64> {
        self.bar_cells()
            .into_iter()
            .map(|c| c as f64 * self.gsd)
            .collect()
    }

    fn bar_cells(&self) -> Vec<usize> {
        (0..self.n_groups)
            .map(|g| match self.bar_width_ratio {
                Some(r) => self.cells(r * self.gap * self.gap_scale.powi(g as i32)),
                None => self.cells(self.bar_width),
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            self.gsd,
            self.bar_width,
            self.gap,
            self.bar_height,
            self.gap_scale,
            self.bar_length,
            self.group_pitch,
        ];
        let ratio_ok = self
            .bar_width_ratio
            .is_none_or(|r| r > 0.0 && r.is_finite());
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.margin < 0.0 || !ratio_ok
        {
            return Err(Error::input("tribar dimensions must be positive"));
        }
        if self.n_bars < 2 || self.n_groups == 0 {
            return Err(Error::input("tribar needs at least 2 bars and 1 group"));
        }
        if self.group_pitch < self.bar_length {
            return Err(Error::input(
                "tribar group pitch must exceed the bar length",
            ));
        }
        Ok(())
    }
}

/// Renders the tribar DSM (bars at `bar_height` over a zero floor) and the
/// exact bar footprints, numbered from 1 in group-then-bar order.
pub fn generate_tribar(spec: &TribarSpec) -> Result<(Raster, FootprintSet)> {
    spec.validate()?;
    let bars_c = spec.bar_cells();
    let len_c = spec.cells(spec.bar_length);
    let pitch_c = spec.cells(spec.group_pitch);
    let margin_c = (spec.margin / spec.gsd).round() as usize;
    let gaps_c: Vec<usize> = (0..spec.n_groups)
        .map(|g| spec.cells(spec.gap * spec.gap_scale.powi(g as i32)))
        .collect();
    let widest = gaps_c
        .iter()
        .zip(&bars_c)
        .map(|(g, b)| spec.n_bars * b + (spec.n_bars - 1) * g)
        .max()
        .unwrap_or(0);
    // Multiples of 16 keep four rounds of 2x2 downsampling exact.
    let round16 = |n: usize| n.div_ceil(16) * 16;
    let phase = |g: usize| (g * spec.stagger_cells) % 16;
    let width = round16(widest + 15 * (spec.stagger_cells > 0) as usize + 2 * margin_c);
    let height = round16((spec.n_groups - 1) * pitch_c + len_c + 2 * margin_c);
    let cells = (width as u128) * (height as u128);
    if cells > MAX_CELLS as u128 {
        return Err(Error::input(format!(
            "tribar raster would have {cells} cells (limit {MAX_CELLS})"
        )));
    }
    let grid = GridSpec {
        width,
        height,
        origin_x: 0.0,
        origin_y: height as f64 * spec.gsd,
        gsd_x: spec.gsd,
        gsd_y: -spec.gsd,
    };
    let mut values = vec![0.0; grid.len()];
    let mut features = Vec::with_capacity(spec.n_bars * spec.n_groups);
    for (g, (&gap_c, &bar_c)) in gaps_c.iter().zip(&bars_c).enumerate() {
        let row0 = margin_c + g * pitch_c;
        let row1 = row0 + len_c;
        let mut col0 = margin_c + phase(g);
        for _ in 0..spec.n_bars {
            let col1 = col0 + bar_c;
            for row in row0..row1 {
                values[row * width + col0..row * width + col1].fill(spec.bar_height);
            }
            let x0 = col0 as f64 * spec.gsd;
            let x1 = col1 as f64 * spec.gsd;
            let y_top = grid.origin_y - row0 as f64 * spec.gsd;
            let y_bot = grid.origin_y - row1 as f64 * spec.gsd;
            features.push(Footprint::new(
                features.len() as u64 + 1,
                Polygon::rect(x0, y_bot, x1, y_top)?,
                FootprintSource::Provided,
            ));
            col0 = col1 + gap_c;
        }
    }
    let raster = Raster::new(grid, None, DEFAULT_NODATA, values)?;
    Ok((raster, FootprintSet::new(features, None)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::downsample2;

    fn small() -> TribarSpec {
        TribarSpec {
            gsd: 0.25,
            bar_width: 4.0,
            bar_width_ratio: None,
            gap: 0.5,
            bar_height: 10.0,
            n_bars: 3,
            n_groups: 2,
            gap_scale: 2.0,
            bar_length: 10.0,
            group_pitch: 20.0,
            margin: 2.0,
            stagger_cells: 0,
        }
    }

    #[test]
    fn bar_and_gap_values() {
        let (r, fps) = generate_tribar(&small()).unwrap();
        assert_eq!(fps.len(), 6);
        let bar = fps.features()[0].polygon.bbox();
        let mid_y = 0.5 * (bar.0.y + bar.1.y);
        assert_eq!(r.sample(bar.0.x + 2.0, mid_y), Some(10.0));
        // 0.5 m gap right of the first bar.
        assert_eq!(r.sample(bar.1.x + 0.125, mid_y), Some(0.0));
        assert_eq!(r.sample(bar.1.x + 0.375, mid_y), Some(0.0));
        assert_eq!(r.sample(bar.1.x + 0.625, mid_y), Some(10.0));
        assert!(r.values().iter().all(|&v| v == 0.0 || v == 10.0));
    }

    #[test]
    fn boundaries_on_cell_edges() {
        let (r, fps) = generate_tribar(&small()).unwrap();
        let g = r.grid();
        for f in fps.features() {
            for p in f.polygon.exterior() {
                let (c, row) = g.to_pixel(p.x, p.y);
                assert_eq!(c, c.round());
                assert_eq!(row, row.round());
            }
            // Pixel count under the footprint equals its area in cells.
            let inside = r.collect_where(|c| f.polygon.contains(c));
            assert_eq!(inside.len() as f64, f.polygon.area() / g.cell_area());
            assert!(inside.iter().all(|&v| v == 10.0));
        }
    }

    #[test]
    fn volume_preserved_by_downsampling() {
        let (r, _) = generate_tribar(&TribarSpec::default()).unwrap();
        let vol = |r: &Raster| r.values().iter().sum::<f64>() * r.grid().cell_area();
        let v0 = vol(&r);
        let mut cur = r;
        for _ in 0..4 {
            cur = downsample2(&cur).unwrap();
            assert!((vol(&cur) - v0).abs() <= 0.005 * v0);
        }
    }

    #[test]
    fn default_gaps_span_range() {
        let gaps = TribarSpec::default().gap_widths();
        assert_eq!(gaps[0], 0.25);
        assert_eq!(*gaps.last().unwrap(), 8.0);
        assert_eq!(TribarSpec::default().bar_widths(), gaps);
    }

    #[test]
    fn groups_cover_every_block_phase() {
        let spec = TribarSpec::default();
        let (r, fps) = generate_tribar(&spec).unwrap();
        let mut phases: Vec<usize> = fps
            .features()
            .iter()
            .step_by(spec.n_bars)
            .map(|f| (f.polygon.bbox().0.x / r.grid().gsd_x).round() as usize % 16)
            .collect();
        phases.sort();
        phases.dedup();
        assert_eq!(phases.len(), 16);
    }

    #[test]
    fn oversized_rejected() {
        let s = TribarSpec {
            gsd: 0.001,
            n_groups: 50,
            ..TribarSpec::default()
        };
        assert!(generate_tribar(&s).is_err());
        assert!(generate_tribar(&TribarSpec {
            n_bars: 1,
            ..small()
        })
        .is_err());
    }
}
