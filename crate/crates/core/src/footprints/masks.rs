use rayon::prelude::*;

use crate::crs::CrsId;
use crate::error::{Error, Result};
use crate::pointcloud::{ClassLabel, ClassifiedPointCloud};
use crate::raster::{GridSpec, Raster, DEFAULT_NODATA};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;

/// Binary building and ground masks on the reference grid.
///
/// A pixel is 1 when a qualifying point maps into it, 0 when only other
/// points do, and nodata when no point does.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub building: Raster,
    pub ground: Raster,
}

/// Builds the masks from non-withheld points. The building mask is cleaned
/// with a 3x3 closing followed by a 3x3 opening; the ground mask is raw.
pub fn build_masks(
    cloud: &ClassifiedPointCloud,
    grid: &GridSpec,
    crs: Option<&CrsId>,
    conf_threshold: f64,
) -> Result<MaskPair> {
    grid.validate()?;
    if let (Some(a), Some(b)) = (cloud.crs(), crs) {
        if a != b {
            return Err(Error::input(format!(
                "point cloud CRS {a} differs from grid CRS {b}"
            )));
        }
    }
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::input(format!(
            "confidence threshold {conf_threshold} outside [0, 1]"
        )));
    }
    let n = grid.len();
    let mut any = vec![false; n];
    let mut building = vec![false; n];
    let mut ground = vec![false; n];
    for p in cloud.points().iter().filter(|p| !p.withheld) {
        let Some((c, r)) = grid.cell_of(p.x, p.y) else {
            continue;
        };
        let i = r * grid.width + c;
        any[i] = true;
        match p.label {
            ClassLabel::Building if f64::from(p.confidence) >= conf_threshold => building[i] = true,
            ClassLabel::Ground => ground[i] = true,
            _ => {}
        }
    }
    if !building.iter().any(|&b| b) {
        log::warn!("no building points at confidence >= {conf_threshold}; building mask is empty");
    }
    let building = close_then_open(&building, grid.width, grid.height);
    let to_raster = |bits: &[bool]| {
        let vals = bits
            .iter()
            .zip(&any)
            .map(|(&b, &a)| match (b, a) {
                (true, _) => 1.0,
                (false, true) => 0.0,
                (false, false) => DEFAULT_NODATA,
            })
            .collect();
        Raster::new(*grid, crs.cloned(), DEFAULT_NODATA, vals)
    };
    Ok(MaskPair {
        building: to_raster(&building)?,
        ground: to_raster(&ground)?,
    })
}

/// 3x3 closing followed by 3x3 opening on a row-major bitmap.
///
/// Dilation treats pixels outside the image as 0 and erosion treats them as
/// 1, which makes the pair adjoint on the image domain so the composite is
/// idempotent.
pub fn close_then_open(bits: &[bool], width: usize, height: usize) -> Vec<bool> {
    let closed = erode(&dilate(bits, width, height), width, height);
    dilate(&erode(&closed, width, height), width, height)
}

fn dilate(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    morph(bits, w, h, false)
}

fn erode(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    morph(bits, w, h, true)
}

fn morph(bits: &[bool], w: usize, h: usize, erosion: bool) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    out.par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(r, row)| {
            for (c, o) in row.iter_mut().enumerate() {
                let mut acc = erosion;
                'win: for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                    for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                        let v = bits[rr * w + cc];
                        if erosion && !v {
                            acc = false;
                            break 'win;
                        }
                        if !erosion && v {
                            acc = true;
                            break 'win;
                        }
                    }
                }
                *o = acc;
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::LidarPoint;
    use proptest::prelude::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec {
            width: n,
            height: n,
            origin_x: 0.0,
            origin_y: n as f64,
            gsd_x: 1.0,
            gsd_y: -1.0,
        }
    }

    /// One point per cell: building inside `is_building`, ground elsewhere.
    fn cloud(n: usize, is_building: impl Fn(usize, usize) -> bool) -> ClassifiedPointCloud {
        let g = grid(n);
        let mut pts = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let p = g.cell_center(c, r);
                let l = if is_building(c, r) {
                    ClassLabel::Building
                } else {
                    ClassLabel::Ground
                };
                pts.push(LidarPoint::new(p.x, p.y, 0.0, l));
            }
        }
        ClassifiedPointCloud::new(pts, None).unwrap()
    }

    #[test]
    fn speck_removed() {
        let m = build_masks(&cloud(9, |c, r| c == 4 && r == 4), &grid(9), None, 0.5).unwrap();
        assert!(m.building.values().iter().all(|&v| v == 0.0));
        assert_eq!(m.ground.get(4, 4), Some(0.0));
        assert_eq!(m.ground.get(0, 0), Some(1.0));
    }

    #[test]
    fn hole_filled() {
        let inside = |c: usize, r: usize| {
            (5..15).contains(&c) && (5..15).contains(&r) && !(c == 9 && r == 9)
        };
        let m = build_masks(&cloud(20, inside), &grid(20), None, 0.5).unwrap();
        assert_eq!(m.building.get(9, 9), Some(1.0));
        let ones = m.building.values().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones, 100);
        // The ground mask keeps its raw hole pixel.
        assert_eq!(m.ground.get(9, 9), Some(1.0));
    }

    #[test]
    fn low_confidence_excluded() {
        let g = grid(10);
        let mut pts = Vec::new();
        for r in 2..7 {
            for c in 2..7 {
                let p = g.cell_center(c, r);
                let mut lp = LidarPoint::new(p.x, p.y, 0.0, ClassLabel::Building);
                lp.confidence = 0.4;
                pts.push(lp);
            }
        }
        let cl = ClassifiedPointCloud::new(pts, None).unwrap();
        let m = build_masks(&cl, &g, None, 0.5).unwrap();
        assert_eq!(m.building.valid_count(), 25);
        assert!(m.building.values().iter().all(|&v| v != 1.0));
        let m = build_masks(&cl, &g, None, 0.4).unwrap();
        assert_eq!(
            m.building.values().iter().filter(|&&v| v == 1.0).count(),
            25
        );
    }

    #[test]
    fn empty_cells_are_nodata() {
        let g = grid(5);
        let cl = ClassifiedPointCloud::new(
            vec![LidarPoint::new(0.5, 4.5, 0.0, ClassLabel::Ground)],
            None,
        )
        .unwrap();
        let m = build_masks(&cl, &g, None, 0.5).unwrap();
        assert_eq!(m.ground.valid_count(), 1);
        assert_eq!(m.building.valid_count(), 1);
    }

    #[test]
    fn crs_mismatch_rejected() {
        let cl = ClassifiedPointCloud::new(vec![], Some(CrsId::utm(10, true))).unwrap();
        assert!(build_masks(&cl, &grid(3), Some(&CrsId::utm(11, true)), 0.5).is_err());
    }

    proptest! {
        #[test]
        fn morphology_idempotent(w in 1usize..14, h in 1usize..14, seed in proptest::collection::vec(any::<bool>(), 196)) {
            let bits: Vec<bool> = seed[..w * h].to_vec();
            let once = close_then_open(&bits, w, h);
            prop_assert_eq!(close_then_open(&once, w, h), once);
        }
    }
}
