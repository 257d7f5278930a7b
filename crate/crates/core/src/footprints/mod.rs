//! Building footprints: masks from classified points, mask polygonization,
//! per-footprint alignment against the masks, GeoJSON and OSM ingestion.

mod align;
mod geojson;
mod masks;
mod osm;
mod polygonize;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crs::{CrsId, Transformer};
use crate::error::{Error, Result};
use crate::geom::Polygon;

pub use align::{align_footprints, footprint_shift_score};
pub use geojson::{
    footprints_from_geojson, footprints_to_geojson, load_footprints_geojson,
    save_footprints_geojson,
};
pub use masks::{build_masks, close_then_open, MaskPair, DEFAULT_CONF_THRESHOLD};
pub use osm::{
    fetch_osm_footprints, overpass_query, parse_overpass, LonLatBox, OsmOptions,
    DEFAULT_OVERPASS_URL,
};
pub use polygonize::{polygonize_mask, DEFAULT_MIN_AREA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FootprintSource {
    Lidar,
    Osm,
    Provided,
}

impl fmt::Display for FootprintSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FootprintSource::Lidar => "lidar",
            FootprintSource::Osm => "osm",
            FootprintSource::Provided => "provided",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub id: u64,
    pub polygon: Polygon,
    pub source: FootprintSource,
    /// Translation already applied to `polygon` by footprint alignment, meters.
    pub shift: (f64, f64),
    /// Set when alignment could not score the footprint (outside or all nodata).
    pub flagged: bool,
}

impl Footprint {
    pub fn new(id: u64, polygon: Polygon, source: FootprintSource) -> Self {
        Self {
            id,
            polygon,
            source,
            shift: (0.0, 0.0),
            flagged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FootprintSet {
    features: Vec<Footprint>,
    crs: Option<CrsId>,
}

impl FootprintSet {
    pub fn new(features: Vec<Footprint>, crs: Option<CrsId>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(features.len());
        for f in &features {
            if !seen.insert(f.id) {
                return Err(Error::input(format!("duplicate footprint id {}", f.id)));
            }
            if !(f.shift.0.is_finite() && f.shift.1.is_finite()) {
                return Err(Error::input(format!(
                    "footprint {} has a non-finite shift",
                    f.id
                )));
            }
        }
        Ok(Self { features, crs })
    }

    pub fn features(&self) -> &[Footprint] {
        &self.features
    }

    pub fn into_features(self) -> Vec<Footprint> {
        self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn crs(&self) -> Option<&CrsId> {
        self.crs.as_ref()
    }

    pub fn get(&self, id: u64) -> Option<&Footprint> {
        self.features.iter().find(|f| f.id == id)
    }

    /// Reprojects all polygons. A set without a CRS is simply tagged.
    pub fn to_crs(&self, target: &CrsId) -> Result<FootprintSet> {
        let Some(from) = &self.crs else {
            return Ok(FootprintSet {
                features: self.features.clone(),
                crs: Some(target.clone()),
            });
        };
        let t = Transformer::new(from, target)?;
        if t.is_identity() {
            return Ok(FootprintSet {
                features: self.features.clone(),
                crs: Some(target.clone()),
            });
        }
        let features = self
            .features
            .iter()
            .map(|f| {
                let polygon = f.polygon.map_points(|p| {
                    let (x, y) = t.transform(p.x, p.y);
                    crate::geom::Point2::new(x, y)
                })?;
                Ok(Footprint {
                    polygon,
                    ..f.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FootprintSet {
            features,
            crs: Some(target.clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_ids_rejected() {
        let p = Polygon::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        let fs = vec![
            Footprint::new(1, p.clone(), FootprintSource::Provided),
            Footprint::new(1, p, FootprintSource::Provided),
        ];
        assert!(FootprintSet::new(fs, None).is_err());
    }

    #[test]
    fn reprojection_between_zones() {
        let p = Polygon::rect(700_000.0, 4_000_000.0, 700_020.0, 4_000_030.0).unwrap();
        let set = FootprintSet::new(
            vec![Footprint::new(7, p.clone(), FootprintSource::Osm)],
            Some(CrsId::utm(11, true)),
        )
        .unwrap();
        let moved = set.to_crs(&CrsId::utm(12, true)).unwrap();
        let back = moved.to_crs(&CrsId::utm(11, true)).unwrap();
        for (a, b) in p
            .exterior()
            .iter()
            .zip(back.features()[0].polygon.exterior())
        {
            assert!(a.dist(*b) < 1e-6);
        }
        // Area distortion between neighboring zones stays small.
        let ratio = moved.features()[0].polygon.area() / p.area();
        assert!((ratio - 1.0).abs() < 2e-3);
    }
}
