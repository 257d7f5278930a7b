//! Per-region contrast (CTF) values, record filtering, model fitting and
//! vertical accuracy statistics.

mod export;
mod fit;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{OrientedRect, Point2};
use crate::raster::Raster;
use crate::regions::EvaluationRegion;

pub use export::{
    load_records_json, plot_points_csv, records_to_csv, records_to_geojson, render_ctf_svg,
    save_records_csv, save_records_geojson, save_records_json, PlotOptions,
};
pub use fit::{
    ctf_model, ctf_model_jacobian, fit_ctf_model, fit_ctf_points, threshold_distance, CtfModelFit,
    FitReport, ThresholdCrossing,
};

/// Reference-contrast cutoffs shipped as presets; the first is the default.
pub const REF_CTF_PRESETS: [f64; 2] = [0.95, 0.98];
pub const DEFAULT_REF_CTF_MIN: f64 = REF_CTF_PRESETS[0];
pub const DEFAULT_MIN_SAMPLES: usize = 5;
pub const DEFAULT_CTF_THRESHOLD: f64 = 0.2;

/// Percentile with linear interpolation at rank `p/100 * (n-1)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::input(format!("percentile {p} outside [0, 100]")));
    }
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Err(Error::insufficient("percentile of an empty sample"));
    }
    v.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&v, p))
}

fn percentile_sorted(v: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let f = rank - lo as f64;
    if f == 0.0 {
        v[lo]
    } else {
        v[lo] + f * (v[hi] - v[lo])
    }
}

/// Mean of the samples inside the 1.5 IQR fences. A zero IQR keeps
/// everything.
pub fn trimmed_mean(values: &[f64]) -> Result<f64> {
    let mut v = values.to_vec();
    if v.is_empty() {
        return Err(Error::insufficient("mean of an empty sample"));
    }
    v.sort_by(f64::total_cmp);
    let (q1, q3) = (percentile_sorted(&v, 25.0), percentile_sorted(&v, 75.0));
    let iqr = q3 - q1;
    let kept: Vec<f64> = if iqr > 0.0 {
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        v.into_iter().filter(|x| (lo..=hi).contains(x)).collect()
    } else {
        v
    };
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Elevation samples over the three subregions of an evaluation region.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionSamples {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub center: Vec<f64>,
}

impl RegionSamples {
    /// Valid cells whose centers fall inside each rectangle.
    pub fn from_raster(r: &Raster, region: &EvaluationRegion) -> Self {
        let take = |rect: &OrientedRect| {
            let c = rect.corners();
            let fold = |f: fn(f64, f64) -> f64, init: f64, k: fn(&Point2) -> f64| {
                c.iter().map(k).fold(init, f)
            };
            let bounds = (
                fold(f64::min, f64::INFINITY, |p| p.x),
                fold(f64::min, f64::INFINITY, |p| p.y),
                fold(f64::max, f64::NEG_INFINITY, |p| p.x),
                fold(f64::max, f64::NEG_INFINITY, |p| p.y),
            );
            r.collect_within(bounds, |p| rect.contains(p, 0.0))
        };
        Self {
            a: take(&region.region_a),
            b: take(&region.region_b),
            center: take(&region.center),
        }
    }

    fn min_len(&self) -> usize {
        self.a.len().min(self.b.len()).min(self.center.len())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let m = |v: &[f64]| v.iter().map(|&x| f(x)).collect();
        Self {
            a: m(&self.a),
            b: m(&self.b),
            center: m(&self.center),
        }
    }
}

/// Test samples brought into the reference's elevation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAlignment {
    pub samples: RegionSamples,
    /// P10 of the reference over the center region.
    pub zero_level: f64,
    /// Ground matching offset added first.
    pub zero_offset: f64,
    /// Centering shift added second.
    pub max_shift: f64,
    /// min(P90 over a, P90 over b) of the shifted test.
    pub test_max: f64,
    pub ref_max: f64,
}

/// Matches the test's ground to the reference's center P10, then centers
/// the test's building maxima (min of the two subregion P90s) halfway
/// toward the reference's.
pub fn local_align(
    test: &RegionSamples,
    reference: &RegionSamples,
    min_samples: usize,
) -> Result<LocalAlignment> {
    let need = min_samples.max(1);
    if test.min_len() < need || reference.min_len() < need {
        return Err(Error::insufficient(format!(
            "fewer than {need} samples in a subregion (test a/b/center {}/{}/{}, reference {}/{}/{})",
            test.a.len(),
            test.b.len(),
            test.center.len(),
            reference.a.len(),
            reference.b.len(),
            reference.center.len()
        )));
    }
    let zero_level = percentile(&reference.center, 10.0)?;
    let zero_offset = zero_level - percentile(&test.center, 10.0)?;
    let grounded = test.map(|z| z + zero_offset);
    let building_max = |s: &RegionSamples| -> Result<f64> {
        Ok(percentile(&s.a, 90.0)?.min(percentile(&s.b, 90.0)?))
    };
    let ref_max = building_max(reference)?;
    let max_shift = (ref_max - building_max(&grounded)?) / 2.0;
    let samples = grounded.map(|z| z + max_shift);
    let test_max = building_max(&samples)?;
    Ok(LocalAlignment {
        samples,
        zero_level,
        zero_offset,
        max_shift,
        test_max,
        ref_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionLevels {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub zero_level: f64,
    pub test_max: f64,
    pub ref_max: f64,
}

impl RegionLevels {
    /// Mean of the two building-to-center contrasts; a term whose
    /// denominator vanishes counts as 0.
    pub fn contrast(&self) -> f64 {
        let term = |a: f64| {
            if a + self.b == 0.0 {
                0.0
            } else {
                (a - self.b) / (a + self.b)
            }
        };
        0.5 * (term(self.a1) + term(self.a2))
    }
}

/// Clips aligned samples to `[zero_level, test_max]`, subtracts the zero
/// level and takes trimmed means per subregion.
pub fn region_levels(al: &LocalAlignment) -> Result<RegionLevels> {
    // A test maximum below the ground level would invert the clip range;
    // everything then collapses onto the floor.
    let hi = al.test_max.max(al.zero_level);
    let level = |v: &[f64]| -> Result<f64> {
        let clipped: Vec<f64> = v
            .iter()
            .map(|z| z.clamp(al.zero_level, hi) - al.zero_level)
            .collect();
        trimmed_mean(&clipped)
    };
    Ok(RegionLevels {
        a1: level(&al.samples.a)?,
        a2: level(&al.samples.b)?,
        b: level(&al.samples.center)?,
        zero_level: al.zero_level,
        test_max: al.test_max,
        ref_max: al.ref_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordReason {
    Ok,
    LowRefCtf,
    ZeroTestCtf,
    InsufficientSamples,
}

impl RecordReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordReason::Ok => "ok",
            RecordReason::LowRefCtf => "low_ref_ctf",
            RecordReason::ZeroTestCtf => "zero_test_ctf",
            RecordReason::InsufficientSamples => "insufficient_samples",
        }
    }
}

impl fmt::Display for RecordReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtfRecord {
    /// 1-based position of the region in the region list.
    pub region_id: usize,
    pub region: EvaluationRegion,
    pub c_test: f64,
    pub c_ref: f64,
    pub levels_test: Option<RegionLevels>,
    pub levels_ref: Option<RegionLevels>,
    pub valid: bool,
    pub reason: RecordReason,
}

fn levels_for(
    test: &RegionSamples,
    reference: &RegionSamples,
    min_samples: usize,
) -> Result<RegionLevels> {
    region_levels(&local_align(test, reference, min_samples)?)
}

/// CTF of one region for the test product and, by the same procedure, for
/// the reference itself. The record is valid until filtered.
pub fn compute_ctf(
    test: &Raster,
    reference: &Raster,
    region: &EvaluationRegion,
    region_id: usize,
    min_samples: usize,
) -> CtfRecord {
    let ts = RegionSamples::from_raster(test, region);
    let rs = RegionSamples::from_raster(reference, region);
    ctf_from_samples(&ts, &rs, region, region_id, min_samples)
}

pub fn ctf_from_samples(
    test: &RegionSamples,
    reference: &RegionSamples,
    region: &EvaluationRegion,
    region_id: usize,
    min_samples: usize,
) -> CtfRecord {
    let both = levels_for(test, reference, min_samples)
        .and_then(|lt| Ok((lt, levels_for(reference, reference, min_samples)?)));
    match both {
        Ok((lt, lr)) => CtfRecord {
            region_id,
            region: *region,
            c_test: lt.contrast(),
            c_ref: lr.contrast(),
            levels_test: Some(lt),
            levels_ref: Some(lr),
            valid: true,
            reason: RecordReason::Ok,
        },
        Err(e) => {
            log::debug!("region {region_id}: {e}");
            CtfRecord {
                region_id,
                region: *region,
                c_test: 0.0,
                c_ref: 0.0,
                levels_test: None,
                levels_ref: None,
                valid: false,
                reason: RecordReason::InsufficientSamples,
            }
        }
    }
}

/// CTF records for all regions, in region order. Rasters must share a grid.
pub fn compute_all_ctf(
    test: &Raster,
    reference: &Raster,
    regions: &[EvaluationRegion],
    min_samples: usize,
) -> Result<Vec<CtfRecord>> {
    if !test.grid().same_as(reference.grid()) {
        return Err(Error::input("test and reference rasters must share a grid"));
    }
    Ok(regions
        .par_iter()
        .enumerate()
        .map(|(i, r)| compute_ctf(test, reference, r, i + 1, min_samples))
        .collect())
}

/// Marks records invalid when the reference contrast is at or below
/// `ref_ctf_min` or the test contrast is exactly zero. Records already
/// lacking samples keep that reason.
pub fn filter_records(records: &[CtfRecord], ref_ctf_min: f64) -> Vec<CtfRecord> {
    records
        .iter()
        .map(|r| {
            let reason = if r.reason == RecordReason::InsufficientSamples {
                RecordReason::InsufficientSamples
            } else if !(r.c_ref > ref_ctf_min) {
                RecordReason::LowRefCtf
            } else if r.c_test == 0.0 {
                RecordReason::ZeroTestCtf
            } else {
                RecordReason::Ok
            };
            CtfRecord {
                valid: reason == RecordReason::Ok,
                reason,
                ..r.clone()
            }
        })
        .collect()
}

pub fn reason_counts(records: &[CtfRecord]) -> BTreeMap<RecordReason, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.reason).or_insert(0) += 1;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerticalAccuracy {
    pub rmse: f64,
    pub median_error: f64,
    pub le90: f64,
    pub n_valid: usize,
}

/// Statistics of `test - reference` over cells valid in both and, when a
/// mask is given, where the mask is valid and nonzero.
pub fn vertical_accuracy(
    test: &Raster,
    reference: &Raster,
    mask: Option<&Raster>,
) -> Result<VerticalAccuracy> {
    let g = reference.grid();
    if !g.same_as(test.grid()) || mask.is_some_and(|m| !g.same_as(m.grid())) {
        return Err(Error::input(
            "vertical accuracy needs rasters on a common grid",
        ));
    }
    let mut err = Vec::new();
    for row in 0..g.height {
        for col in 0..g.width {
            if mask.is_some_and(|m| m.get(col, row).is_none_or(|v| v == 0.0)) {
                continue;
            }
            if let (Some(t), Some(r)) = (test.get(col, row), reference.get(col, row)) {
                err.push(t - r);
            }
        }
    }
    if err.is_empty() {
        return Err(Error::insufficient(
            "no overlapping valid cells for vertical accuracy",
        ));
    }
    let n = err.len();
    let rmse = (err.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let abs: Vec<f64> = err.iter().map(|e| e.abs()).collect();
    Ok(VerticalAccuracy {
        rmse,
        median_error: percentile(&err, 50.0)?,
        le90: percentile(&abs, 90.0)?,
        n_valid: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;
    use crate::raster::{GridSpec, DEFAULT_NODATA};
    use crate::regions::BuildingPair;
    use proptest::prelude::*;

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        assert!((percentile(&v, 10.0).unwrap() - 1.8).abs() < 1e-12);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 9.0);
        assert_eq!(percentile(&[4.2], 37.0).unwrap(), 4.2);
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&v, 101.0).is_err());
    }

    #[test]
    fn trimmed_mean_drops_outliers() {
        let v = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert!((trimmed_mean(&v).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(trimmed_mean(&[5.0, 5.0, 5.0, 9.0]).unwrap(), 5.0);
        // Zero IQR keeps everything.
        assert_eq!(trimmed_mean(&[5.0, 5.0, 5.0, 5.0, 9.0]).unwrap(), 5.8);
    }

    fn samples(a: &[f64], b: &[f64], c: &[f64]) -> RegionSamples {
        RegionSamples {
            a: a.to_vec(),
            b: b.to_vec(),
            center: c.to_vec(),
        }
    }

    #[test]
    fn identity_and_constant_bias() {
        let r = samples(
            &[10.0, 10.5, 9.5, 10.0, 10.2],
            &[12.0, 11.0, 11.5, 12.2, 11.8],
            &[0.0, 0.1, 0.3, -0.1, 0.2],
        );
        let al = local_align(&r, &r, 5).unwrap();
        assert_eq!((al.zero_offset, al.max_shift), (0.0, 0.0));
        assert_eq!(al.samples, r);
        let low = r.map(|z| z - 3.0);
        let al = local_align(&low, &r, 5).unwrap();
        assert!((al.zero_offset - 3.0).abs() < 1e-12 && al.max_shift.abs() < 1e-12);
        for (x, y) in al.samples.a.iter().zip(&r.a) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn squashed_buildings_step_oracle() {
        let r = samples(&[10.0; 6], &[10.0; 6], &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let t = samples(&[5.0; 6], &[5.0; 6], &[0.0; 6]);
        let al = local_align(&t, &r, 5).unwrap();
        // P10 centers equal -> no zero offset; maxima 10 vs 5 -> lift by 2.5.
        assert_eq!(al.zero_offset, 0.0);
        assert_eq!(al.max_shift, 2.5);
        assert_eq!(al.test_max, 7.5);
        let lv = region_levels(&al).unwrap();
        // Center lifted to 2.5, buildings at 7.5; zero level 0.
        assert_eq!((lv.a1, lv.a2, lv.b), (7.5, 7.5, 2.5));
        assert!((lv.contrast() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn contrast_examples() {
        let lv = |a1, a2, b| RegionLevels {
            a1,
            a2,
            b,
            zero_level: 0.0,
            test_max: 10.0,
            ref_max: 10.0,
        };
        assert_eq!(lv(10.0, 10.0, 0.0).contrast(), 1.0);
        assert_eq!(lv(5.0, 5.0, 5.0).contrast(), 0.0);
        assert!((lv(8.0, 8.0, 4.0).contrast() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(lv(0.0, 4.0, 0.0).contrast(), 0.5);
    }

    fn region() -> EvaluationRegion {
        let ax = Point2::new(0.0, 1.0);
        let rect = |cx: f64| OrientedRect::new(Point2::new(cx, 10.0), ax, 4.0, 1.0).unwrap();
        EvaluationRegion {
            pair: BuildingPair {
                id_a: 1,
                id_b: 2,
                centroid_distance: 6.0,
            },
            center: rect(10.0),
            region_a: rect(7.0),
            region_b: rect(13.0),
            d: 2.0,
            overlap: 8.0,
            edge_a: 0,
            edge_b: 2,
        }
    }

    fn scene(f: impl Fn(f64) -> f64) -> Raster {
        let g = GridSpec {
            width: 40,
            height: 40,
            origin_x: 0.0,
            origin_y: 20.0,
            gsd_x: 0.5,
            gsd_y: -0.5,
        };
        let v = (0..1600)
            .map(|i| f(g.cell_center(i % 40, i / 40).x))
            .collect();
        Raster::new(g, None, DEFAULT_NODATA, v).unwrap()
    }

    fn bars(x: f64) -> f64 {
        if (6.0..8.0).contains(&x) || (12.0..14.0).contains(&x) {
            10.0
        } else {
            0.0
        }
    }

    #[test]
    fn full_contrast_and_flat() {
        let r = scene(bars);
        let rec = compute_ctf(&r, &r, &region(), 1, 5);
        assert_eq!((rec.c_test, rec.c_ref), (1.0, 1.0));
        let flat = scene(|_| 10.0);
        let rec = compute_ctf(&flat, &r, &region(), 1, 5);
        assert_eq!(rec.c_test, 0.0);
        assert_eq!(
            filter_records(&[rec], 0.95)[0].reason,
            RecordReason::ZeroTestCtf
        );
    }

    #[test]
    fn missing_samples() {
        let r = scene(bars);
        let holes = Raster::nodata_like(*r.grid(), None).unwrap();
        let rec = compute_ctf(&holes, &r, &region(), 3, 5);
        assert_eq!(rec.reason, RecordReason::InsufficientSamples);
        assert!(!rec.valid);
        assert_eq!(
            filter_records(&[rec], 0.5)[0].reason,
            RecordReason::InsufficientSamples
        );
    }

    #[test]
    fn filter_reasons_and_nesting() {
        let r = scene(bars);
        let base = compute_ctf(&r, &r, &region(), 1, 5);
        let mk = |c_test, c_ref| CtfRecord {
            c_test,
            c_ref,
            ..base.clone()
        };
        let recs = vec![
            mk(0.5, 0.9),
            mk(0.0, 0.99),
            mk(0.4, 0.96),
            mk(0.3, 0.99),
            mk(0.2, 0.95),
        ];
        let f95 = filter_records(&recs, 0.95);
        let reasons: Vec<_> = f95.iter().map(|r| r.reason).collect();
        use RecordReason::*;
        assert_eq!(reasons, vec![LowRefCtf, ZeroTestCtf, Ok, Ok, LowRefCtf]);
        let f98 = filter_records(&recs, 0.98);
        for (a, b) in f95.iter().zip(&f98) {
            assert!(!b.valid || a.valid);
        }
        assert_eq!(reason_counts(&f98)[&Ok], 1);
    }

    #[test]
    fn vertical_accuracy_examples() {
        let r = scene(bars);
        let same = vertical_accuracy(&r, &r, None).unwrap();
        assert_eq!((same.rmse, same.median_error, same.le90), (0.0, 0.0, 0.0));
        let mut up = r.clone();
        up.offset_values(2.0);
        let va = vertical_accuracy(&up, &r, None).unwrap();
        assert!(
            (va.rmse - 2.0).abs() < 1e-12
                && (va.median_error - 2.0).abs() < 1e-12
                && (va.le90 - 2.0).abs() < 1e-12
        );
        let g = GridSpec {
            width: 4,
            height: 1,
            origin_x: 0.0,
            origin_y: 1.0,
            gsd_x: 1.0,
            gsd_y: -1.0,
        };
        let t = Raster::new(g, None, DEFAULT_NODATA, vec![-1.0, 0.0, 1.0, 2.0]).unwrap();
        let z = Raster::filled(g, None, 0.0).unwrap();
        let va = vertical_accuracy(&t, &z, None).unwrap();
        assert!((va.rmse - 1.5f64.sqrt()).abs() < 1e-12);
        let mask =
            Raster::new(g, None, DEFAULT_NODATA, vec![1.0, 0.0, DEFAULT_NODATA, 1.0]).unwrap();
        assert_eq!(vertical_accuracy(&t, &z, Some(&mask)).unwrap().n_valid, 2);
        let none = Raster::nodata_like(g, None).unwrap();
        assert!(vertical_accuracy(&t, &none, None).is_err());
    }

    /// Straight-line restatement of the procedure, kept separate from the
    /// library path on purpose.
    fn oracle(t: &RegionSamples, r: &RegionSamples) -> f64 {
        fn pct(v: &[f64], p: f64) -> f64 {
            let mut s = v.to_vec();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = p / 100.0 * (s.len() as f64 - 1.0);
            let (i, j) = (k.floor() as usize, k.ceil() as usize);
            s[i] + (k - i as f64) * (s[j] - s[i])
        }
        fn tmean(v: &[f64]) -> f64 {
            let (q1, q3) = (pct(v, 25.0), pct(v, 75.0));
            let iqr = q3 - q1;
            let kept: Vec<f64> = v
                .iter()
                .copied()
                .filter(|&x| iqr == 0.0 || (x >= q1 - 1.5 * iqr && x <= q3 + 1.5 * iqr))
                .collect();
            kept.iter().sum::<f64>() / kept.len() as f64
        }
        let zero = pct(&r.center, 10.0);
        let off = zero - pct(&t.center, 10.0);
        let shift = |v: &[f64], k: f64| v.iter().map(|z| z + k).collect::<Vec<_>>();
        let (ta, tb) = (shift(&t.a, off), shift(&t.b, off));
        let tmax = pct(&ta, 90.0).min(pct(&tb, 90.0));
        let rmax = pct(&r.a, 90.0).min(pct(&r.b, 90.0));
        let k = (rmax - tmax) / 2.0;
        let (ta, tb, tc) = (
            shift(&ta, k),
            shift(&tb, k),
            shift(&shift(&t.center, off), k),
        );
        let tmax = pct(&ta, 90.0).min(pct(&tb, 90.0));
        let hi = tmax.max(zero);
        let lvl = |v: &[f64]| {
            tmean(
                &v.iter()
                    .map(|z| z.max(zero).min(hi) - zero)
                    .collect::<Vec<_>>(),
            )
        };
        let (a1, a2, b) = (lvl(&ta), lvl(&tb), lvl(&tc));
        let term = |a: f64| if a + b == 0.0 { 0.0 } else { (a - b) / (a + b) };
        0.5 * (term(a1) + term(a2))
    }

    fn arb_samples() -> impl Strategy<Value = RegionSamples> {
        (
            prop::collection::vec(-5.0f64..25.0, 5..40),
            prop::collection::vec(-5.0f64..25.0, 5..40),
            prop::collection::vec(-5.0f64..25.0, 5..40),
        )
            .prop_map(|(a, b, c)| RegionSamples { a, b, center: c })
    }

    /// Building/ground scene: reference bars of height `h` over noisy
    /// ground, test mixing a fraction of the other level into each
    /// subregion (blur), plus bias and noise.
    fn arb_scene() -> impl Strategy<Value = (RegionSamples, RegionSamples)> {
        (
            3.0f64..30.0,
            -50.0f64..50.0,
            0.0f64..0.35,
            0.0f64..0.35,
            0.0f64..0.3,
            any::<u64>(),
        )
            .prop_map(|(h, bias, mix_a, mix_c, noise, seed)| {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mut gen =
                    |n: usize, level: f64, other: f64, mix: f64, off: f64, sd: f64| -> Vec<f64> {
                        (0..n)
                            .map(|_| {
                                let base = if rng.random::<f64>() < mix {
                                    other
                                } else {
                                    level
                                };
                                base + off + sd * (rng.random::<f64>() - 0.5)
                            })
                            .collect()
                    };
                let r = RegionSamples {
                    a: gen(24, h, 0.0, 0.0, 0.0, 0.1),
                    b: gen(24, h * 1.1, 0.0, 0.0, 0.0, 0.1),
                    center: gen(20, 0.0, h, 0.0, 0.0, 0.1),
                };
                let t = RegionSamples {
                    a: gen(24, h, 0.0, mix_a, bias, noise),
                    b: gen(24, h * 1.1, 0.0, mix_a, bias, noise),
                    center: gen(20, 0.0, h, mix_c, bias, noise),
                };
                (t, r)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn ctf_matches_oracle_and_ignores_offsets(t in arb_samples(), r in arb_samples(), k in -500.0f64..500.0) {
            let reg = region();
            let rec = ctf_from_samples(&t, &r, &reg, 1, 5);
            prop_assert!(rec.valid);
            prop_assert!((-1.0..=1.0).contains(&rec.c_test));
            prop_assert!((rec.c_test - oracle(&t, &r)).abs() < 1e-9);
            let lifted = ctf_from_samples(&t.map(|z| z + k), &r, &reg, 1, 5);
            prop_assert!((lifted.c_test - rec.c_test).abs() < 1e-9);
            let same = ctf_from_samples(&r, &r, &reg, 1, 5);
            prop_assert_eq!(same.c_test, same.c_ref);
        }

        #[test]
        fn ctf_in_unit_range_on_building_scenes((t, r) in arb_scene(), k in -100.0f64..100.0) {
            let reg = region();
            let rec = ctf_from_samples(&t, &r, &reg, 1, 5);
            prop_assert!((0.0..=1.0).contains(&rec.c_test), "c_test {}", rec.c_test);
            prop_assert!((0.0..=1.0).contains(&rec.c_ref), "c_ref {}", rec.c_ref);
            prop_assert!((rec.c_test - oracle(&t, &r)).abs() < 1e-9);
            let lifted = ctf_from_samples(&t.map(|z| z + k), &r, &reg, 1, 5);
            prop_assert!((lifted.c_test - rec.c_test).abs() < 1e-9);
        }

        #[test]
        fn filter_nested(vals in prop::collection::vec((-0.2f64..1.0, 0.8f64..1.0), 1..50), lo in 0.0f64..0.99, extra in 0.0f64..0.5) {
            let r = scene(bars);
            let base = compute_ctf(&r, &r, &region(), 1, 5);
            let recs: Vec<CtfRecord> = vals.iter().map(|&(c_test, c_ref)| CtfRecord { c_test, c_ref, ..base.clone() }).collect();
            let hi = (lo + extra).min(0.999);
            for (a, b) in filter_records(&recs, lo).iter().zip(filter_records(&recs, hi).iter()) {
                prop_assert!(!b.valid || a.valid);
            }
        }
    }
}
