use std::path::Path;

use serde_json::{json, Map, Value};

use super::{Footprint, FootprintSet, FootprintSource};
use crate::crs::CrsId;
use crate::error::{json_error_offset, Error, Result};
use crate::geom::{Point2, Polygon};

/// Serializes footprints as a GeoJSON FeatureCollection. Coordinates are in
/// the set's CRS, which is named in a top-level `crs` member when known.
pub fn footprints_to_geojson(fps: &FootprintSet) -> Value {
    let features: Vec<Value> = fps
        .features()
        .iter()
        .map(|f| {
            json!({
                "type": "Feature",
                "id": f.id,
                "properties": {
                    "id": f.id,
                    "source": f.source.to_string(),
                    "shift_x": f.shift.0,
                    "shift_y": f.shift.1,
                    "flagged": f.flagged,
                },
                "geometry": polygon_geometry(&f.polygon),
            })
        })
        .collect();
    let mut fc = Map::new();
    fc.insert("type".into(), "FeatureCollection".into());
    if let Some(crs) = fps.crs() {
        fc.insert("crs".into(), crs_member(crs));
    }
    fc.insert("features".into(), features.into());
    Value::Object(fc)
}

pub(crate) fn crs_member(crs: &CrsId) -> Value {
    json!({"type": "name", "properties": {"name": crs.as_str()}})
}

pub(crate) fn polygon_geometry(p: &Polygon) -> Value {
    // Exterior rings are stored counter-clockwise and holes clockwise.
    let ring = |r: &[Point2]| -> Value {
        let mut pts: Vec<Point2> = r.to_vec();
        pts.push(pts[0]);
        Value::Array(pts.iter().map(|p| json!([p.x, p.y])).collect())
    };
    let mut rings = vec![ring(p.exterior())];
    rings.extend(p.holes().iter().map(|h| ring(h)));
    json!({"type": "Polygon", "coordinates": rings})
}

pub fn save_footprints_geojson(fps: &FootprintSet, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&footprints_to_geojson(fps))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Loads footprints, converting to `target_crs` when given.
///
/// The source CRS is the `crs` member when present, otherwise WGS84 if all
/// coordinates look like lon/lat, otherwise `target_crs`.
pub fn load_footprints_geojson(
    path: impl AsRef<Path>,
    target_crs: Option<&CrsId>,
) -> Result<FootprintSet> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: json_error_offset(&text, &e),
        message: format!("{}: {e}", path.as_ref().display()),
    })?;
    footprints_from_geojson(&v, target_crs)
}

/// id (if any), polygon, source, applied shift, flagged.
type ParsedFeature = (Option<u64>, Polygon, FootprintSource, (f64, f64), bool);

pub fn footprints_from_geojson(v: &Value, target_crs: Option<&CrsId>) -> Result<FootprintSet> {
    let bad = |m: &str| Error::input(format!("GeoJSON: {m}"));
    let features: Vec<&Value> = match v.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => v
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("FeatureCollection without features array"))?
            .iter()
            .collect(),
        Some("Feature") => vec![v],
        _ => return Err(bad("expected a FeatureCollection or Feature")),
    };

    let mut parsed: Vec<ParsedFeature> = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let props = f.get("properties").and_then(Value::as_object);
        let prop = |k: &str| props.and_then(|p| p.get(k));
        let id = prop("id").or_else(|| f.get("id")).and_then(json_id);
        let source = match prop("source").and_then(Value::as_str) {
            Some("lidar") => FootprintSource::Lidar,
            Some("osm") => FootprintSource::Osm,
            _ => FootprintSource::Provided,
        };
        let shift = (
            prop("shift_x").and_then(Value::as_f64).unwrap_or(0.0),
            prop("shift_y").and_then(Value::as_f64).unwrap_or(0.0),
        );
        let flagged = prop("flagged").and_then(Value::as_bool).unwrap_or(false);
        let geom = f.get("geometry").unwrap_or(&Value::Null);
        let polys = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![parse_polygon(geom.get("coordinates"))],
            Some("MultiPolygon") => match geom.get("coordinates").and_then(Value::as_array) {
                Some(parts) => parts.iter().map(|p| parse_polygon(Some(p))).collect(),
                None => vec![Err(bad("MultiPolygon without coordinates"))],
            },
            other => {
                log::warn!("feature {i}: skipping non-polygon geometry {other:?}");
                continue;
            }
        };
        let multi = polys.len() > 1;
        for (k, p) in polys.into_iter().enumerate() {
            match p {
                // Parts after the first cannot share the feature id.
                Ok(p) => parsed.push((
                    if multi && k > 0 { None } else { id },
                    p,
                    source,
                    shift,
                    flagged,
                )),
                Err(e) => log::warn!("feature {i}: skipping invalid polygon: {e}"),
            }
        }
    }

    let file_crs = match v.get("crs") {
        Some(c) => Some(parse_crs_member(c)?),
        None => None,
    };
    let source_crs = file_crs.or_else(|| {
        let lonlat = parsed.iter().all(|(_, p, ..)| {
            p.exterior()
                .iter()
                .all(|q| q.x.abs() <= 180.0 && q.y.abs() <= 90.0)
        });
        if lonlat && !parsed.is_empty() {
            Some(CrsId::wgs84())
        } else {
            target_crs.cloned()
        }
    });

    let mut used: std::collections::HashSet<u64> = parsed.iter().filter_map(|p| p.0).collect();
    if used.len() != parsed.iter().filter(|p| p.0.is_some()).count() {
        return Err(bad("duplicate feature ids"));
    }
    let mut next = 1u64;
    let mut out = Vec::with_capacity(parsed.len());
    for (id, polygon, source, shift, flagged) in parsed {
        let id = id.unwrap_or_else(|| {
            while used.contains(&next) {
                next += 1;
            }
            used.insert(next);
            next
        });
        out.push(Footprint {
            id,
            polygon,
            source,
            shift,
            flagged,
        });
    }
    let set = FootprintSet::new(out, source_crs)?;
    match target_crs {
        Some(t) => set.to_crs(t),
        None => Ok(set),
    }
}

fn json_id(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

fn parse_crs_member(c: &Value) -> Result<CrsId> {
    let name = c
        .pointer("/properties/name")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::input("GeoJSON crs member without a name"))?;
    // Accepts "EPSG:32611", "urn:ogc:def:crs:EPSG::32611" and OGC CRS84.
    if name.ends_with("CRS84") {
        return Ok(CrsId::wgs84());
    }
    let code = name.rsplit(':').next().unwrap_or(name);
    CrsId::parse(code).or_else(|_| CrsId::parse(name))
}

fn parse_polygon(coords: Option<&Value>) -> Result<Polygon> {
    let rings = coords
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Geometry("polygon without coordinate rings".into()))?;
    let mut parsed = Vec::with_capacity(rings.len());
    for r in rings {
        let pts = r
            .as_array()
            .ok_or_else(|| Error::Geometry("ring is not an array".into()))?
            .iter()
            .map(|p| match p.as_array().map(|a| a.as_slice()) {
                Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
                    (Some(x), Some(y)) => Ok(Point2::new(x, y)),
                    _ => Err(Error::Geometry("non-numeric coordinate".into())),
                },
                _ => Err(Error::Geometry("position needs two coordinates".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        parsed.push(pts);
    }
    let mut it = parsed.into_iter();
    let exterior = it
        .next()
        .ok_or_else(|| Error::Geometry("polygon has no rings".into()))?;
    Polygon::new(exterior, it.collect())
}
