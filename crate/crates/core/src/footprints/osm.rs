//! Building footprints from the Overpass API.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Footprint, FootprintSet, FootprintSource};
use crate::crs::{CrsId, Transformer};
use crate::error::{json_error_offset, Error, Result};
use crate::geom::{Point2, Polygon};

pub const DEFAULT_OVERPASS_URL: &str = "https://overpass-api.de/api/interpreter";
const TIMEOUT_S: u64 = 60;

/// Geographic bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLatBox {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl LonLatBox {
    fn validate(&self) -> Result<()> {
        let ok = self.south < self.north
            && self.west < self.east
            && (-90.0..=90.0).contains(&self.south)
            && (-90.0..=90.0).contains(&self.north)
            && (-180.0..=180.0).contains(&self.west)
            && (-180.0..=180.0).contains(&self.east);
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("invalid lon/lat bbox {self:?}")))
        }
    }

    /// Canonical text used in the query and as the cache key.
    pub fn key(&self) -> String {
        format!(
            "{:.7},{:.7},{:.7},{:.7}",
            self.south, self.west, self.north, self.east
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct OsmOptions {
    pub endpoint: Option<String>,
    pub cache_dir: Option<PathBuf>,
    /// Checked before each request attempt.
    pub cancel: Option<Arc<AtomicBool>>,
}

pub fn overpass_query(bbox: &LonLatBox) -> String {
    format!(
        "[out:json][timeout:{TIMEOUT_S}];way[\"building\"]({});out geom;",
        bbox.key()
    )
}

/// Fetches building ways inside `bbox`, using the on-disk cache when present.
pub fn fetch_osm_footprints(
    bbox: &LonLatBox,
    target_crs: &CrsId,
    opts: &OsmOptions,
) -> Result<FootprintSet> {
    bbox.validate()?;
    let cache_file = opts.cache_dir.as_ref().map(|d| {
        let digest = Sha256::digest(bbox.key().as_bytes());
        d.join(format!("overpass_{}.json", hex::encode(digest)))
    });
    if let Some(f) = cache_file.as_ref().filter(|f| f.is_file()) {
        log::info!("using cached Overpass response {}", f.display());
        return parse_overpass(&std::fs::read_to_string(f)?, target_crs);
    }
    let body = request(bbox, opts)?;
    let set = parse_overpass(&body, target_crs)?;
    if let Some(f) = cache_file {
        if let Some(dir) = f.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&f, &body)?;
    }
    Ok(set)
}

fn request(bbox: &LonLatBox, opts: &OsmOptions) -> Result<String> {
    let endpoint = opts.endpoint.as_deref().unwrap_or(DEFAULT_OVERPASS_URL);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(TIMEOUT_S)))
        .build()
        .into();
    let query = overpass_query(bbox);
    let mut last = None;
    for attempt in 0..2 {
        if opts
            .cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::Relaxed))
        {
            return Err(Error::Http {
                status: 0,
                message: "request cancelled".into(),
            });
        }
        match agent.post(endpoint).send_form([("data", query.as_str())]) {
            Ok(mut resp) => {
                return resp.body_mut().read_to_string().map_err(|e| Error::Http {
                    status: resp.status().as_u16(),
                    message: e.to_string(),
                })
            }
            Err(e) => {
                log::warn!("Overpass request attempt {} failed: {e}", attempt + 1);
                last = Some(match e {
                    ureq::Error::StatusCode(s) => Error::Http {
                        status: s,
                        message: format!("{endpoint} returned HTTP {s}"),
                    },
                    other => Error::Http {
                        status: 0,
                        message: other.to_string(),
                    },
                });
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Parses an Overpass `out geom` JSON response. Closed building ways become
/// footprints with their OSM way id; open or degenerate ways are skipped.
pub fn parse_overpass(text: &str, target_crs: &CrsId) -> Result<FootprintSet> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: json_error_offset(text, &e),
        message: format!("Overpass response: {e}"),
    })?;
    let elements = v
        .get("elements")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse {
            offset: 0,
            message: "Overpass response has no elements array".into(),
        })?;
    let t = Transformer::new(&CrsId::wgs84(), target_crs)?;
    let mut features = Vec::new();
    for el in elements {
        if el.get("type").and_then(Value::as_str) != Some("way") {
            continue;
        }
        let Some(id) = el.get("id").and_then(Value::as_u64) else {
            log::warn!("skipping way without id");
            continue;
        };
        if el.pointer("/tags/building").is_none() {
            continue;
        }
        let Some(geom) = el.get("geometry").and_then(Value::as_array) else {
            log::warn!("way {id}: no geometry; skipping");
            continue;
        };
        let pts: Option<Vec<Point2>> = geom
            .iter()
            .map(|n| {
                Some(Point2::new(
                    n.get("lon")?.as_f64()?,
                    n.get("lat")?.as_f64()?,
                ))
            })
            .collect();
        let Some(pts) = pts else {
            log::warn!("way {id}: malformed node coordinates; skipping");
            continue;
        };
        if pts.len() < 4 || pts.first() != pts.last() {
            log::warn!("way {id}: not closed; skipping");
            continue;
        }
        let projected = pts
            .iter()
            .map(|p| {
                let (x, y) = t.transform(p.x, p.y);
                Point2::new(x, y)
            })
            .collect();
        match Polygon::new(projected, vec![]) {
            Ok(polygon) => features.push(Footprint::new(id, polygon, FootprintSource::Osm)),
            Err(e) => log::warn!("way {id}: {e}; skipping"),
        }
    }
    FootprintSet::new(features, Some(target_crs.clone()))
}
