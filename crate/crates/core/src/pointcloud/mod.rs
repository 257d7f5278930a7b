//! Classified point clouds: LAS ingest, label handling and CRS conversion.

mod las_io;
mod sidecar;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crs::CrsId;
use crate::error::{Error, Result};

pub use las_io::{load_point_cloud, save_point_cloud, LoadOptions};
pub use sidecar::{read_sidecar, write_sidecar, SidecarLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Ground,
    Vegetation,
    Building,
    Wall,
    PowerLine,
    CivilianVehicle,
    Truck,
    MilitaryVehicle,
    Aircraft,
    Pole,
    Unlabeled,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 11] = [
        ClassLabel::Ground,
        ClassLabel::Vegetation,
        ClassLabel::Building,
        ClassLabel::Wall,
        ClassLabel::PowerLine,
        ClassLabel::CivilianVehicle,
        ClassLabel::Truck,
        ClassLabel::MilitaryVehicle,
        ClassLabel::Aircraft,
        ClassLabel::Pole,
        ClassLabel::Unlabeled,
    ];

    /// Maps an ASPRS classification code.
    pub fn from_asprs(code: u8) -> Self {
        match code {
            2 => ClassLabel::Ground,
            3..=5 => ClassLabel::Vegetation,
            6 => ClassLabel::Building,
            _ => ClassLabel::Unlabeled,
        }
    }

    /// ASPRS code written on export. Labels without a standard code become 1.
    pub fn to_asprs(self) -> u8 {
        match self {
            ClassLabel::Ground => 2,
            ClassLabel::Vegetation => 5,
            ClassLabel::Building => 6,
            _ => 1,
        }
    }

    /// Code used by the sidecar label file.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Ground => "ground",
            ClassLabel::Vegetation => "vegetation",
            ClassLabel::Building => "building",
            ClassLabel::Wall => "wall",
            ClassLabel::PowerLine => "power_line",
            ClassLabel::CivilianVehicle => "civilian_vehicle",
            ClassLabel::Truck => "truck",
            ClassLabel::MilitaryVehicle => "military_vehicle",
            ClassLabel::Aircraft => "aircraft",
            ClassLabel::Pole => "pole",
            ClassLabel::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::input(format!("unknown class label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub label: ClassLabel,
    /// Label confidence in `[0, 1]`; 1 for hard labels.
    pub confidence: f32,
    pub withheld: bool,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, label: ClassLabel) -> Self {
        Self {
            x,
            y,
            z,
            label,
            confidence: 1.0,
            withheld: false,
        }
    }
}

/// An immutable set of classified points in one CRS.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedPointCloud {
    points: Vec<LidarPoint>,
    crs: Option<CrsId>,
}

impl ClassifiedPointCloud {
    pub fn new(points: Vec<LidarPoint>, crs: Option<CrsId>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::input(format!(
                    "point {i} has non-finite coordinates"
                )));
            }
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(Error::input(format!(
                    "point {i} has confidence {} outside [0, 1]",
                    p.confidence
                )));
            }
        }
        Ok(Self { points, crs })
    }

    pub fn points(&self) -> &[LidarPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn crs(&self) -> Option<&CrsId> {
        self.crs.as_ref()
    }

    pub fn into_points(self) -> Vec<LidarPoint> {
        self.points
    }

    /// `(min_x, min_y, max_x, max_y)` over all points.
    pub fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.points.first()?;
        let init = (first.x, first.y, first.x, first.y);
        Some(self.points.iter().fold(init, |b, p| {
            (b.0.min(p.x), b.1.min(p.y), b.2.max(p.x), b.3.max(p.y))
        }))
    }
}

/// Point selection. `classes: None` keeps every label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointFilter {
    pub classes: Option<BTreeSet<ClassLabel>>,
    pub exclude_withheld: bool,
}

impl PointFilter {
    pub fn withheld_only() -> Self {
        Self {
            classes: None,
            exclude_withheld: true,
        }
    }

    pub fn accepts(&self, p: &LidarPoint) -> bool {
        if self.exclude_withheld && p.withheld {
            return false;
        }
        self.classes.as_ref().is_none_or(|c| c.contains(&p.label))
    }
}

/// Subset of `cloud` accepted by `filter`, in original order.
pub fn filter_points(cloud: &ClassifiedPointCloud, filter: &PointFilter) -> ClassifiedPointCloud {
    ClassifiedPointCloud {
        points: cloud
            .points
            .iter()
            .filter(|p| filter.accepts(p))
            .copied()
            .collect(),
        crs: cloud.crs.clone(),
    }
}
