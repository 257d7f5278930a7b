//! Coordinate reference systems supported at ingest.
//!
//! Only WGS84 geographic (EPSG:4326, x = longitude, y = latitude in degrees)
//! and the WGS84 UTM zones (EPSG:326zz / 327zz) are handled. UTM uses the
//! sixth-order Krüger series for the transverse Mercator projection, which is
//! accurate to well below a millimetre inside a zone.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CrsId(String);

impl CrsId {
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        let code = t
            .strip_prefix("EPSG:")
            .or_else(|| t.strip_prefix("epsg:"))
            .unwrap_or(t);
        let code: u32 = code
            .parse()
            .map_err(|_| Error::UnknownCrs(format!("unrecognized CRS identifier {s:?}")))?;
        Ok(Self::epsg(code))
    }

    pub fn epsg(code: u32) -> Self {
        CrsId(format!("EPSG:{code}"))
    }

    pub fn wgs84() -> Self {
        Self::epsg(4326)
    }

    pub fn utm(zone: u8, north: bool) -> Self {
        Self::epsg(if north { 32600 } else { 32700 } + zone as u32)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn epsg_code(&self) -> Option<u32> {
        self.0.strip_prefix("EPSG:").and_then(|c| c.parse().ok())
    }

    fn kind(&self) -> Option<CrsKind> {
        let code = self.epsg_code()?;
        match code {
            4326 => Some(CrsKind::Geographic),
            32601..=32660 => Some(CrsKind::Utm {
                zone: (code - 32600) as u8,
                north: true,
            }),
            32701..=32760 => Some(CrsKind::Utm {
                zone: (code - 32700) as u8,
                north: false,
            }),
            _ => None,
        }
    }
}

impl fmt::Display for CrsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for CrsId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        CrsId::parse(&s)
    }
}

impl From<CrsId> for String {
    fn from(c: CrsId) -> String {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CrsKind {
    Geographic,
    Utm { zone: u8, north: bool },
}

/// UTM zone whose central meridian is nearest to `lon_deg`.
pub fn utm_zone_for(lon_deg: f64) -> u8 {
    (((lon_deg + 180.0) / 6.0).floor() as i64).rem_euclid(60) as u8 + 1
}

/// A point transform between two CRSs.
#[derive(Debug, Clone)]
pub struct Transformer {
    from: CrsKind,
    to: CrsKind,
    identity: bool,
}

impl Transformer {
    pub fn new(from: &CrsId, to: &CrsId) -> Result<Self> {
        if from == to {
            return Ok(Self {
                from: CrsKind::Geographic,
                to: CrsKind::Geographic,
                identity: true,
            });
        }
        let unsupported = || Error::UnsupportedCrs {
            from: from.to_string(),
            to: to.to_string(),
        };
        Ok(Self {
            from: from.kind().ok_or_else(unsupported)?,
            to: to.kind().ok_or_else(unsupported)?,
            identity: false,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn transform(&self, x: f64, y: f64) -> (f64, f64) {
        if self.identity {
            return (x, y);
        }
        let (lon, lat) = match self.from {
            CrsKind::Geographic => (x, y),
            CrsKind::Utm { zone, north } => utm_inverse(zone, north, x, y),
        };
        match self.to {
            CrsKind::Geographic => (lon, lat),
            CrsKind::Utm { zone, north } => utm_forward(zone, north, lon, lat),
        }
    }
}

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const UTM_K0: f64 = 0.9996;
const UTM_FALSE_EASTING: f64 = 500_000.0;
const UTM_FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

struct TmSeries {
    rect_radius: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
    e: f64,
}

fn tm_series() -> TmSeries {
    let n = WGS84_F / (2.0 - WGS84_F);
    let (n2, n3) = (n * n, n * n * n);
    let (n4, n5, n6) = (n2 * n2, n2 * n3, n3 * n3);
    let rect_radius = WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
    let alpha = [
        n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0 - 127.0 * n5 / 288.0
            + 7891.0 * n6 / 37800.0,
        13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0 + 281.0 * n5 / 630.0
            - 1983433.0 * n6 / 1935360.0,
        61.0 * n3 / 240.0 - 103.0 * n4 / 140.0 + 15061.0 * n5 / 26880.0 + 167603.0 * n6 / 181440.0,
        49561.0 * n4 / 161280.0 - 179.0 * n5 / 168.0 + 6601661.0 * n6 / 7257600.0,
        34729.0 * n5 / 80640.0 - 3418889.0 * n6 / 1995840.0,
        212378941.0 * n6 / 319334400.0,
    ];
    let beta = [
        n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0 - n4 / 360.0 - 81.0 * n5 / 512.0
            + 96199.0 * n6 / 604800.0,
        n2 / 48.0 + n3 / 15.0 - 437.0 * n4 / 1440.0 + 46.0 * n5 / 105.0
            - 1118711.0 * n6 / 3870720.0,
        17.0 * n3 / 480.0 - 37.0 * n4 / 840.0 - 209.0 * n5 / 4480.0 + 5569.0 * n6 / 90720.0,
        4397.0 * n4 / 161280.0 - 11.0 * n5 / 504.0 - 830251.0 * n6 / 7257600.0,
        4583.0 * n5 / 161280.0 - 108847.0 * n6 / 3991680.0,
        20648693.0 * n6 / 638668800.0,
    ];
    TmSeries {
        rect_radius,
        alpha,
        beta,
        e: (WGS84_F * (2.0 - WGS84_F)).sqrt(),
    }
}

fn central_meridian(zone: u8) -> f64 {
    -183.0 + 6.0 * zone as f64
}

/// Geographic (degrees) to UTM easting/northing (meters).
pub fn utm_forward(zone: u8, north: bool, lon_deg: f64, lat_deg: f64) -> (f64, f64) {
    let s = tm_series();
    let phi = lat_deg.to_radians();
    let dlam = (lon_deg - central_meridian(zone)).to_radians();
    let sphi = phi.sin();
    let t = (sphi.atanh() - s.e * (s.e * sphi).atanh()).sinh();
    let xi_p = t.atan2(dlam.cos());
    let eta_p = (dlam.sin() / (1.0 + t * t).sqrt()).atanh();
    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }
    let x = UTM_FALSE_EASTING + UTM_K0 * s.rect_radius * eta;
    let fnorth = if north { 0.0 } else { UTM_FALSE_NORTHING_SOUTH };
    let y = fnorth + UTM_K0 * s.rect_radius * xi;
    (x, y)
}

/// UTM easting/northing (meters) to geographic (degrees).
pub fn utm_inverse(zone: u8, north: bool, x: f64, y: f64) -> (f64, f64) {
    let s = tm_series();
    let fnorth = if north { 0.0 } else { UTM_FALSE_NORTHING_SOUTH };
    let xi = (y - fnorth) / (UTM_K0 * s.rect_radius);
    let eta = (x - UTM_FALSE_EASTING) / (UTM_K0 * s.rect_radius);
    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }
    let tau_p = xi_p.sin() / (eta_p.sinh().powi(2) + xi_p.cos().powi(2)).sqrt();
    let dlam = eta_p.sinh().atan2(xi_p.cos());

    // Newton iteration for tan(phi) from the conformal tan(phi').
    let e2 = s.e * s.e;
    let mut tau = tau_p;
    for _ in 0..8 {
        let sigma = (s.e * (s.e * tau / (1.0 + tau * tau).sqrt()).atanh()).sinh();
        let tau_i = tau * (1.0 + sigma * sigma).sqrt() - sigma * (1.0 + tau * tau).sqrt();
        let dtau = (tau_p - tau_i) / (1.0 + tau_i * tau_i).sqrt() * (1.0 + (1.0 - e2) * tau * tau)
            / ((1.0 - e2) * (1.0 + tau * tau).sqrt());
        tau += dtau;
        if dtau.abs() < 1e-14 {
            break;
        }
    }
    let lat = tau.atan().to_degrees();
    let lon = central_meridian(zone) + dlam.to_degrees();
    (lon, lat)
}
