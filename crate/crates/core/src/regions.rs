//! Evaluation regions: a ground rectangle between two facing building edges
//! plus one rectangle inside each building.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::crs::CrsId;
use crate::error::{json_error_offset, Error, Result};
use crate::footprints::{Footprint, FootprintSet};
use crate::geom::{
    polygon_centroid, rect_between_edges, rect_intersects_segment, segments_approx_parallel,
    OrientedRect, Point2, Segment,
};

/// Shrink applied to the center rectangle before the obstruction test so
/// that edges merely touching its boundary do not count.
const TOUCH_EPS: f64 = 1e-6;
const INDEX_CELL: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionConfig {
    pub max_centroid_dist: f64,
    pub max_orth_dist: f64,
    pub angle_tol_deg: f64,
    pub min_overlap: f64,
    /// Separations at or below this are degenerate (touching or duplicate footprints).
    pub min_separation: f64,
    /// Minimum building-rectangle depth, normally the reference GSD.
    pub cell_size: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            max_centroid_dist: 150.0,
            max_orth_dist: 30.0,
            angle_tol_deg: 10.0,
            min_overlap: 2.0,
            min_separation: 0.05,
            cell_size: 0.5,
        }
    }
}

impl RegionConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("max_centroid_dist", self.max_centroid_dist),
            ("max_orth_dist", self.max_orth_dist),
            ("min_overlap", self.min_overlap),
            ("cell_size", self.cell_size),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::input(format!("{name} must be positive (got {v})")));
            }
        }
        if !(0.0..90.0).contains(&self.angle_tol_deg) {
            return Err(Error::input(format!(
                "angle_tol_deg must be in [0, 90) (got {})",
                self.angle_tol_deg
            )));
        }
        if !(self.min_separation >= 0.0) {
            return Err(Error::input("min_separation must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingPair {
    pub id_a: u64,
    pub id_b: u64,
    pub centroid_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRegion {
    pub pair: BuildingPair,
    /// Ground rectangle between the two edges.
    pub center: OrientedRect,
    /// Rectangle inside building `pair.id_a`.
    pub region_a: OrientedRect,
    /// Rectangle inside building `pair.id_b`.
    pub region_b: OrientedRect,
    /// Orthogonal separation of the two edges, meters.
    pub d: f64,
    pub overlap: f64,
    /// Exterior edge indices that formed the region.
    pub edge_a: usize,
    pub edge_b: usize,
}

/// All footprint pairs whose centroids are closer than `max_centroid_dist`,
/// as `(id_a < id_b)` sorted lexicographically.
pub fn pair_buildings(fps: &FootprintSet, max_centroid_dist: f64) -> Vec<BuildingPair> {
    let mut cents: Vec<(Point2, u64)> = fps
        .features()
        .iter()
        .filter_map(|f| match polygon_centroid(&f.polygon) {
            Ok(c) => Some((c, f.id)),
            Err(e) => {
                log::warn!("footprint {}: {e}; not paired", f.id);
                None
            }
        })
        .collect();
    cents.sort_by(|a, b| a.0.x.total_cmp(&b.0.x).then(a.1.cmp(&b.1)));
    let mut pairs = Vec::new();
    for i in 0..cents.len() {
        for j in i + 1..cents.len() {
            if cents[j].0.x - cents[i].0.x >= max_centroid_dist {
                break;
            }
            let dist = cents[i].0.dist(cents[j].0);
            if dist < max_centroid_dist && dist > 0.0 {
                let (a, b) = (cents[i].1.min(cents[j].1), cents[i].1.max(cents[j].1));
                pairs.push(BuildingPair {
                    id_a: a,
                    id_b: b,
                    centroid_distance: dist,
                });
            }
        }
    }
    pairs.sort_by_key(|p| (p.id_a, p.id_b));
    pairs
}

/// Footprint edges bucketed on a coarse grid for obstruction queries.
struct EdgeIndex<'a> {
    fps: &'a [Footprint],
    segments: Vec<Vec<Segment>>,
    /// Number of exterior segments at the front of each `segments` entry.
    n_exterior: Vec<usize>,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> EdgeIndex<'a> {
    fn new(fps: &'a [Footprint]) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (k, f) in fps.iter().enumerate() {
            let (lo, hi) = f.polygon.bbox();
            let (c0, r0) = Self::cell(lo);
            let (c1, r1) = Self::cell(hi);
            for c in c0..=c1 {
                for r in r0..=r1 {
                    buckets.entry((c, r)).or_default().push(k);
                }
            }
        }
        Self {
            fps,
            segments: fps.iter().map(|f| f.polygon.all_segments()).collect(),
            n_exterior: fps
                .iter()
                .map(|f| f.polygon.exterior_segments().len())
                .collect(),
            buckets,
        }
    }

    fn cell(p: Point2) -> (i64, i64) {
        (
            (p.x / INDEX_CELL).floor() as i64,
            (p.y / INDEX_CELL).floor() as i64,
        )
    }

    /// Footprint indices whose bounding boxes may meet `r`.
    fn near(&self, r: &OrientedRect) -> Vec<usize> {
        let cs = r.corners();
        let lo = Point2::new(
            cs.iter().map(|p| p.x).fold(f64::MAX, f64::min),
            cs.iter().map(|p| p.y).fold(f64::MAX, f64::min),
        );
        let hi = Point2::new(
            cs.iter().map(|p| p.x).fold(f64::MIN, f64::max),
            cs.iter().map(|p| p.y).fold(f64::MIN, f64::max),
        );
        let (c0, r0) = Self::cell(lo);
        let (c1, r1) = Self::cell(hi);
        let mut out: Vec<usize> = Vec::new();
        for c in c0..=c1 {
            for rr in r0..=r1 {
                if let Some(v) = self.buckets.get(&(c, rr)) {
                    out.extend(v.iter().copied());
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out.retain(|&k| {
            let (flo, fhi) = self.fps[k].polygon.bbox();
            flo.x <= hi.x && fhi.x >= lo.x && flo.y <= hi.y && fhi.y >= lo.y
        });
        out
    }

    /// True iff any edge other than the two participating ones enters `r`.
    fn obstructed(&self, r: &OrientedRect, skip: [(usize, usize); 2]) -> bool {
        let shrunk = r.shrunk(TOUCH_EPS);
        self.near(r).into_iter().any(|k| {
            let n_ext = self.n_exterior[k];
            self.segments[k]
                .iter()
                .enumerate()
                .filter(|&(e, _)| !skip.contains(&(k, e)) || e >= n_ext)
                .any(|(_, s)| rect_intersects_segment(&shrunk, s))
        })
    }
}

struct Candidate {
    d: f64,
    overlap: f64,
    i: usize,
    j: usize,
    center: OrientedRect,
    region_a: OrientedRect,
    region_b: OrientedRect,
}

/// The evaluation region of one building pair: the admissible exterior edge
/// pair with the smallest separation (then larger overlap, then lowest edge
/// indices), or `None`. `region_a` always belongs to `pair.id_a`.
pub fn find_evaluation_region(
    pair: &BuildingPair,
    fps: &FootprintSet,
    config: &RegionConfig,
) -> Option<EvaluationRegion> {
    let index = EdgeIndex::new(fps.features());
    find_with_index(pair, &index, config)
}

fn find_with_index(
    pair: &BuildingPair,
    index: &EdgeIndex<'_>,
    config: &RegionConfig,
) -> Option<EvaluationRegion> {
    let ka = index.fps.iter().position(|f| f.id == pair.id_a)?;
    let kb = index.fps.iter().position(|f| f.id == pair.id_b)?;
    if ka == kb {
        return None;
    }
    let (fa, fb) = (&index.fps[ka], &index.fps[kb]);
    let (sa, sb) = (
        fa.polygon.exterior_segments(),
        fb.polygon.exterior_segments(),
    );
    let mut cands = Vec::new();
    for (i, ea) in sa.iter().enumerate() {
        for (j, eb) in sb.iter().enumerate() {
            if let Some(c) = candidate(fa, fb, ea, eb, i, j, config) {
                cands.push(c);
            }
        }
    }
    cands.sort_by(|x, y| {
        x.d.total_cmp(&y.d)
            .then(y.overlap.total_cmp(&x.overlap))
            .then((x.i, x.j).cmp(&(y.i, y.j)))
    });
    let best = cands
        .into_iter()
        .find(|c| !index.obstructed(&c.center, [(ka, c.i), (kb, c.j)]))?;
    Some(EvaluationRegion {
        pair: *pair,
        center: best.center,
        region_a: best.region_a,
        region_b: best.region_b,
        d: best.d,
        overlap: best.overlap,
        edge_a: best.i,
        edge_b: best.j,
    })
}

fn candidate(
    fa: &Footprint,
    fb: &Footprint,
    ea: &Segment,
    eb: &Segment,
    i: usize,
    j: usize,
    cfg: &RegionConfig,
) -> Option<Candidate> {
    if !segments_approx_parallel(ea, eb, cfg.angle_tol_deg) {
        return None;
    }
    let gap = rect_between_edges(ea, eb, cfg.min_overlap)?;
    if gap.separation > cfg.max_orth_dist || gap.separation <= cfg.min_separation {
        return None;
    }
    let r = gap.rect;
    // Across-axis position of each edge line at both ends of the overlap.
    let line = |e: &Segment| {
        let (ua, va) = r.local(e.a);
        let (ub, vb) = r.local(e.b);
        let at = |u: f64| va + (u - ua) / (ub - ua) * (vb - va);
        (at(-r.half_length), at(r.half_length))
    };
    let (a0, a1) = line(ea);
    let (b0, b1) = line(eb);
    let a_low = a0 + a1 < b0 + b1;
    // Orient so building a sits on the negative side.
    let s = if a_low { 1.0 } else { -1.0 };
    let (a0, a1, b0, b1) = (s * a0, s * a1, s * b0, s * b1);
    let inner_lo = a0.max(a1);
    let inner_hi = b0.min(b1);
    if inner_hi - inner_lo <= cfg.min_separation {
        return None;
    }
    // Both buildings must lie behind their edges, away from the gap.
    let faces = |e: &Segment, toward: Point2| {
        let u = e.direction();
        Point2::new(u.y, -u.x).dot(toward - e.midpoint()) > 0.0
    };
    if !faces(ea, r.center) || !faces(eb, r.center) {
        return None;
    }
    let normal = r.normal() * s;
    let at = |v: f64| r.center + normal * v;
    let center = OrientedRect::new(
        at(0.5 * (inner_lo + inner_hi)),
        r.axis,
        r.half_length,
        0.5 * (inner_hi - inner_lo),
    )
    .ok()?;
    if fa.polygon.contains(center.center) || fb.polygon.contains(center.center) {
        return None;
    }

    let d = gap.separation;
    // Depth into each building: d, limited to the footprint's extent behind
    // the edge, never below one cell.
    let outer_a = a0.min(a1);
    let outer_b = b0.max(b1);
    let extent = |f: &Footprint, from: f64, sign: f64| {
        f.polygon
            .exterior()
            .iter()
            .map(|&p| sign * (s * r.local(p).1 - from))
            .fold(0.0, f64::max)
    };
    let depth_a = d.min(extent(fa, outer_a, -1.0)).max(cfg.cell_size);
    let depth_b = d.min(extent(fb, outer_b, 1.0)).max(cfg.cell_size);
    let region_a = OrientedRect::new(
        at(outer_a - 0.5 * depth_a),
        r.axis,
        r.half_length,
        0.5 * depth_a,
    )
    .ok()?;
    let region_b = OrientedRect::new(
        at(outer_b + 0.5 * depth_b),
        r.axis,
        r.half_length,
        0.5 * depth_b,
    )
    .ok()?;
    Some(Candidate {
        d,
        overlap: gap.overlap_len,
        i,
        j,
        center,
        region_a,
        region_b,
    })
}

/// Regions for every admissible pair, in `(id_a, id_b)` order.
pub fn build_all_regions(
    fps: &FootprintSet,
    config: &RegionConfig,
) -> Result<Vec<EvaluationRegion>> {
    config.validate()?;
    let pairs = pair_buildings(fps, config.max_centroid_dist);
    let index = EdgeIndex::new(fps.features());
    let regions: Vec<EvaluationRegion> = pairs
        .par_iter()
        .filter_map(|p| find_with_index(p, &index, config))
        .collect();
    log::info!(
        "{} building pairs, {} evaluation regions",
        pairs.len(),
        regions.len()
    );
    Ok(regions)
}

/// Each region as three Polygon features (`center`, `building_a`,
/// `building_b`) sharing a 1-based `region_id`.
pub fn regions_to_geojson(regions: &[EvaluationRegion], crs: Option<&CrsId>) -> Result<Value> {
    let mut features = Vec::with_capacity(regions.len() * 3);
    for (k, r) in regions.iter().enumerate() {
        for (role, rect) in [
            ("center", &r.center),
            ("building_a", &r.region_a),
            ("building_b", &r.region_b),
        ] {
            features.push(json!({
                "type": "Feature",
                "properties": {
                    "region_id": k + 1,
                    "role": role,
                    "id_a": r.pair.id_a,
                    "id_b": r.pair.id_b,
                    "centroid_distance": r.pair.centroid_distance,
                    "d": r.d,
                    "overlap": r.overlap,
                    "edge_a": r.edge_a,
                    "edge_b": r.edge_b,
                    "rect": rect,
                },
                "geometry": rect_geometry(rect),
            }));
        }
    }
    let mut fc = Map::new();
    fc.insert("type".into(), "FeatureCollection".into());
    if let Some(c) = crs {
        fc.insert(
            "crs".into(),
            json!({"type": "name", "properties": {"name": c.as_str()}}),
        );
    }
    fc.insert("features".into(), features.into());
    Ok(Value::Object(fc))
}

pub(crate) fn rect_geometry(r: &OrientedRect) -> Value {
    let c = r.corners();
    let ring: Vec<Value> = c
        .iter()
        .chain(std::iter::once(&c[0]))
        .map(|p| json!([p.x, p.y]))
        .collect();
    json!({"type": "Polygon", "coordinates": [ring]})
}

pub fn save_regions_geojson(
    regions: &[EvaluationRegion],
    crs: Option<&CrsId>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = serde_json::to_string_pretty(&regions_to_geojson(regions, crs)?)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Reads regions written by [`save_regions_geojson`].
pub fn load_regions_geojson(path: impl AsRef<Path>) -> Result<Vec<EvaluationRegion>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: json_error_offset(&text, &e),
        message: format!("{}: {e}", path.as_ref().display()),
    })?;
    let feats = v
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::input("regions file has no features"))?;
    let mut by_id: std::collections::BTreeMap<u64, [Option<Value>; 3]> = Default::default();
    for f in feats {
        let props = f
            .get("properties")
            .ok_or_else(|| Error::input("region feature without properties"))?;
        let id = props
            .get("region_id")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::input("region feature without region_id"))?;
        let slot = match props.get("role").and_then(Value::as_str) {
            Some("center") => 0,
            Some("building_a") => 1,
            Some("building_b") => 2,
            other => return Err(Error::input(format!("unknown region role {other:?}"))),
        };
        by_id.entry(id).or_default()[slot] = Some(props.clone());
    }
    let mut out = Vec::with_capacity(by_id.len());
    for (id, parts) in by_id {
        let [Some(c), Some(a), Some(b)] = parts else {
            return Err(Error::input(format!("region {id} is missing a rectangle")));
        };
        let rect =
            |p: &Value| -> Result<OrientedRect> { Ok(serde_json::from_value(p["rect"].clone())?) };
        let num = |k: &str| {
            c.get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::input(format!("region {id}: missing {k}")))
        };
        let int = |k: &str| {
            c.get(k)
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::input(format!("region {id}: missing {k}")))
        };
        out.push(EvaluationRegion {
            pair: BuildingPair {
                id_a: int("id_a")?,
                id_b: int("id_b")?,
                centroid_distance: num("centroid_distance")?,
            },
            center: rect(&c)?,
            region_a: rect(&a)?,
            region_b: rect(&b)?,
            d: num("d")?,
            overlap: num("overlap")?,
            edge_a: int("edge_a")? as usize,
            edge_b: int("edge_b")? as usize,
        });
    }
    Ok(out)
}
