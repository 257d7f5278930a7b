use std::path::{Path, PathBuf};

use las::{Builder, PointDataBuilder, Reader, Transform, Vector, Vlr, Writer};

use super::sidecar::{read_sidecar, write_sidecar, SidecarLabel};
use super::{ClassLabel, ClassifiedPointCloud, LidarPoint};
use crate::crs::{CrsId, Transformer};
use crate::error::{Error, Result};

const CHUNK: u64 = 1 << 20;
const GEOKEY_USER_ID: &str = "LASF_Projection";
const GEOKEY_DIRECTORY_RECORD: u16 = 34735;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadOptions {
    /// Convert coordinates to this CRS. `None` keeps the file CRS.
    pub target_crs: Option<CrsId>,
    /// CRS to assume instead of the file metadata.
    pub crs_override: Option<CrsId>,
    /// Label sidecar whose labels and confidences replace the LAS classes.
    pub sidecar: Option<PathBuf>,
}

pub fn load_point_cloud(
    path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<ClassifiedPointCloud> {
    let path = path.as_ref();
    let mut reader = Reader::from_path(path).map_err(|e| match e {
        las::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::Io(io),
        other => Error::Parse {
            offset: 0,
            message: format!("{}: invalid LAS header: {other}", path.display()),
        },
    })?;
    let header = reader.header().clone();
    let file_crs = header_crs(&header)?;
    let crs = match (&opts.crs_override, file_crs) {
        (Some(c), _) => c.clone(),
        (None, Some(c)) => c,
        (None, None) => {
            return Err(Error::UnknownCrs(format!(
                "{} has no usable CRS metadata",
                path.display()
            )))
        }
    };

    let total = header.number_of_points();
    let record_len = u64::from(header.point_format().len());
    let data_start = header
        .clone()
        .into_raw()
        .map(|r| u64::from(r.offset_to_point_data))
        .unwrap_or(0);
    let mut points = Vec::with_capacity(total.min(1 << 28) as usize);
    let mut pd = PointDataBuilder::new().for_header(&header).build();
    while (points.len() as u64) < total {
        let done = points.len() as u64;
        let chunk_offset = data_start + done * record_len;
        let want = CHUNK.min(total - done);
        let got = reader
            .fill_points(want, &mut pd)
            .map_err(|e| Error::Parse {
                offset: chunk_offset,
                message: format!("{}: {e}", path.display()),
            })?;
        for (i, p) in pd.points().enumerate() {
            let p = p.map_err(|e| Error::Parse {
                offset: chunk_offset + i as u64 * record_len,
                message: format!("{}: {e}", path.display()),
            })?;
            let code: u8 = p.classification.into();
            let mut lp = LidarPoint::new(p.x, p.y, p.z, ClassLabel::from_asprs(code));
            lp.withheld = p.is_withheld;
            points.push(lp);
        }
        if got < want {
            return Err(Error::Parse {
                offset: data_start + points.len() as u64 * record_len,
                message: format!(
                    "{}: header declares {total} points but data ends after {}",
                    path.display(),
                    points.len()
                ),
            });
        }
    }

    if let Some(sc) = &opts.sidecar {
        let labels = read_sidecar(sc)?;
        if labels.len() != points.len() {
            return Err(Error::input(format!(
                "sidecar {} has {} labels for {} points",
                sc.display(),
                labels.len(),
                points.len()
            )));
        }
        for (p, l) in points.iter_mut().zip(labels) {
            p.label = l.label;
            p.confidence = l.confidence;
        }
    }

    let crs = match &opts.target_crs {
        Some(target) if target != &crs => {
            let t = Transformer::new(&crs, target)?;
            for p in &mut points {
                (p.x, p.y) = t.transform(p.x, p.y);
            }
            target.clone()
        }
        _ => crs,
    };
    ClassifiedPointCloud::new(points, Some(crs))
}

/// Writes a LAS 1.2 file (point format 0, 1 mm precision for projected CRSs)
/// and optionally a label sidecar preserving every label and confidence.
pub fn save_point_cloud(
    cloud: &ClassifiedPointCloud,
    path: impl AsRef<Path>,
    sidecar: Option<&Path>,
) -> Result<()> {
    let mut b = Builder::from((1, 2));
    b.generating_software = "ctf3d".into();
    let (x0, y0, _, _) = cloud.bounds().unwrap_or((0.0, 0.0, 0.0, 0.0));
    let z0 = cloud
        .points()
        .iter()
        .map(|p| p.z)
        .fold(f64::INFINITY, f64::min);
    let z0 = if z0.is_finite() { z0 } else { 0.0 };
    let geographic = cloud.crs().and_then(|c| c.epsg_code()) == Some(4326);
    let xy_scale = if geographic { 1e-7 } else { 1e-3 };
    b.transforms = Vector {
        x: Transform {
            scale: xy_scale,
            offset: x0.floor(),
        },
        y: Transform {
            scale: xy_scale,
            offset: y0.floor(),
        },
        z: Transform {
            scale: 1e-3,
            offset: z0.floor(),
        },
    };
    if let Some(code) = cloud.crs().and_then(|c| c.epsg_code()) {
        b.vlrs.push(geokey_vlr(code)?);
    }
    let header = b.into_header()?;
    let mut w = Writer::from_path(path.as_ref(), header)?;
    for p in cloud.points() {
        w.write_point(las::Point {
            x: p.x,
            y: p.y,
            z: p.z,
            classification: las::point::Classification::new(p.label.to_asprs())?,
            is_withheld: p.withheld,
            return_number: 1,
            number_of_returns: 1,
            ..Default::default()
        })?;
    }
    w.close()?;
    if let Some(sc) = sidecar {
        let labels: Vec<_> = cloud
            .points()
            .iter()
            .map(|p| SidecarLabel {
                label: p.label,
                confidence: p.confidence,
            })
            .collect();
        write_sidecar(sc, &labels)?;
    }
    Ok(())
}

fn geokey_vlr(code: u32) -> Result<Vlr> {
    let code = u16::try_from(code)
        .map_err(|_| Error::input(format!("EPSG:{code} does not fit a GeoKey")))?;
    let (model, key) = if code == 4326 { (2, 2048) } else { (1, 3072) };
    let keys: [u16; 12] = [1, 1, 0, 2, 1024, 0, 1, model, key, 0, 1, code];
    Ok(Vlr {
        user_id: GEOKEY_USER_ID.into(),
        record_id: GEOKEY_DIRECTORY_RECORD,
        description: "GeoTIFF GeoKeyDirectoryTag".into(),
        data: keys.iter().flat_map(|k| k.to_le_bytes()).collect(),
    })
}

fn header_crs(header: &las::Header) -> Result<Option<CrsId>> {
    if let Some(wkt) = header.get_wkt_crs_bytes() {
        if let Some(code) = wkt_epsg(&String::from_utf8_lossy(wkt)) {
            return Ok(Some(CrsId::epsg(code)));
        }
    }
    let geotiff = header.get_geotiff_crs().map_err(|e| Error::Parse {
        offset: 0,
        message: format!("malformed GeoKey directory: {e}"),
    })?;
    let Some(g) = geotiff else { return Ok(None) };
    let valid = |k: u16| {
        (1024..32767)
            .contains(&k)
            .then_some(CrsId::epsg(u32::from(k)))
    };
    Ok(g.get_projected_crs_geo_key_value()
        .and_then(valid)
        .or_else(|| g.get_geodetic_crs_geo_key_value().and_then(valid)))
}

/// EPSG code of the outermost CRS in a WKT1 (`AUTHORITY`) or WKT2 (`ID`)
/// string. The outermost identifier is the last one in the text.
fn wkt_epsg(wkt: &str) -> Option<u32> {
    let upper = wkt.to_ascii_uppercase();
    let mut best: Option<(usize, u32)> = None;
    for tag in ["AUTHORITY[", "ID["] {
        let mut from = 0;
        while let Some(i) = upper[from..].find(tag) {
            let start = from + i + tag.len();
            from = start;
            let body: String = upper[start..].chars().take_while(|&c| c != ']').collect();
            let mut parts = body.split(',').map(|s| s.trim().trim_matches('"'));
            if parts.next() != Some("EPSG") {
                continue;
            }
            if let Some(code) = parts.next().and_then(|s| s.parse().ok()) {
                if best.is_none_or(|(pos, _)| start > pos) {
                    best = Some((start, code));
                }
            }
        }
    }
    best.map(|(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cloud(crs: CrsId) -> ClassifiedPointCloud {
        let mut pts = Vec::new();
        for (i, l) in ClassLabel::ALL.iter().enumerate() {
            let mut p = LidarPoint::new(
                500_000.0 + i as f64 * 1.234,
                4_100_000.0 + i as f64 * 0.5,
                10.0 + i as f64,
                *l,
            );
            p.withheld = i % 3 == 0;
            p.confidence = 0.25 + i as f32 / 20.0;
            pts.push(p);
        }
        ClassifiedPointCloud::new(pts, Some(crs)).unwrap()
    }

    #[test]
    fn wkt_outermost_code() {
        let wkt = r#"PROJCS["WGS 84 / UTM zone 11N",GEOGCS["WGS 84",AUTHORITY["EPSG","4326"]],AUTHORITY["EPSG","32611"]]"#;
        assert_eq!(wkt_epsg(wkt), Some(32611));
        let wkt2 = r#"PROJCRS["x",BASEGEOGCRS["WGS 84",ID["EPSG",4326]],ID["EPSG",32612]]"#;
        assert_eq!(wkt_epsg(wkt2), Some(32612));
        assert_eq!(wkt_epsg("LOCAL_CS[\"x\"]"), None);
    }

    #[test]
    fn round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let las = dir.path().join("c.las");
        let sc = dir.path().join("c.c3dl");
        let c = sample_cloud(CrsId::utm(11, true));
        save_point_cloud(&c, &las, Some(&sc)).unwrap();
        let back = load_point_cloud(
            &las,
            &LoadOptions {
                sidecar: Some(sc),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(back.crs(), c.crs());
        assert_eq!(back.len(), c.len());
        for (a, b) in c.points().iter().zip(back.points()) {
            assert!(
                (a.x - b.x).abs() <= 1e-3 && (a.y - b.y).abs() <= 1e-3 && (a.z - b.z).abs() <= 1e-3
            );
            assert_eq!(a.label, b.label);
            assert_eq!(a.confidence, b.confidence);
            assert_eq!(a.withheld, b.withheld);
        }
    }

    #[test]
    fn round_trip_without_sidecar_keeps_standard_labels() {
        let dir = tempfile::tempdir().unwrap();
        let las = dir.path().join("c.las");
        let c = sample_cloud(CrsId::utm(11, true));
        save_point_cloud(&c, &las, None).unwrap();
        let back = load_point_cloud(&las, &LoadOptions::default()).unwrap();
        for (a, b) in c.points().iter().zip(back.points()) {
            assert_eq!(ClassLabel::from_asprs(a.label.to_asprs()), b.label);
        }
    }

    #[test]
    fn same_crs_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let las = dir.path().join("c.las");
        let c = sample_cloud(CrsId::utm(11, true));
        save_point_cloud(&c, &las, None).unwrap();
        let a = load_point_cloud(&las, &LoadOptions::default()).unwrap();
        let b = load_point_cloud(
            &las,
            &LoadOptions {
                target_crs: Some(CrsId::utm(11, true)),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_crs_requires_override() {
        let dir = tempfile::tempdir().unwrap();
        let las = dir.path().join("c.las");
        let c = ClassifiedPointCloud::new(
            vec![LidarPoint::new(1.0, 2.0, 3.0, ClassLabel::Ground)],
            None,
        )
        .unwrap();
        save_point_cloud(&c, &las, None).unwrap();
        assert!(matches!(
            load_point_cloud(&las, &LoadOptions::default()),
            Err(Error::UnknownCrs(_))
        ));
        let ok = load_point_cloud(
            &las,
            &LoadOptions {
                crs_override: Some(CrsId::utm(10, true)),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ok.crs(), Some(&CrsId::utm(10, true)));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let las = dir.path().join("c.las");
        save_point_cloud(&sample_cloud(CrsId::utm(11, true)), &las, None).unwrap();
        let bytes = std::fs::read(&las).unwrap();
        std::fs::write(&las, &bytes[..bytes.len() - 30]).unwrap();
        match load_point_cloud(&las, &LoadOptions::default()) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0 && offset < bytes.len() as u64),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&las, b"not a las file at all").unwrap();
        assert!(matches!(
            load_point_cloud(&las, &LoadOptions::default()),
            Err(Error::Parse { offset: 0, .. })
        ));
    }
}
