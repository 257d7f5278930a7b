use std::path::PathBuf;

use ctf3d::crs::CrsId;
use ctf3d::footprints::{
    fetch_osm_footprints, load_footprints_geojson, parse_overpass, save_footprints_geojson,
    Footprint, FootprintSet, FootprintSource, LonLatBox, OsmOptions,
};
use ctf3d::pointcloud::{
    load_point_cloud, save_point_cloud, ClassLabel, ClassifiedPointCloud, LidarPoint, LoadOptions,
};
use ctf3d::raster::{read_geotiff, write_geotiff, GridSpec};
use ctf3d::{Point2, Polygon, Raster};
use sha2::{Digest, Sha256};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

#[test]
fn geotiff_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = GridSpec {
        width: 7,
        height: 5,
        origin_x: 500_123.25,
        origin_y: 4_000_456.75,
        gsd_x: 0.5,
        gsd_y: -0.5,
    };
    let vals: Vec<f64> = (0..35)
        .map(|i| {
            if i % 6 == 0 {
                -9999.0
            } else {
                i as f64 * 0.25 - 3.0
            }
        })
        .collect();
    let r = Raster::new(grid, Some(CrsId::utm(11, true)), -9999.0, vals).unwrap();
    let p = tmp.path().join("r.tif");
    write_geotiff(&r, &p).unwrap();
    let back = read_geotiff(&p).unwrap();
    assert_eq!(back, r);
}

#[test]
fn las_round_trip_with_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let labels = ClassLabel::ALL;
    let pts: Vec<LidarPoint> = (0..500)
        .map(|i| {
            let mut p = LidarPoint::new(
                500_000.0 + i as f64 * 0.137,
                4_000_000.0 + (i * 7 % 31) as f64 * 0.251,
                100.0 + (i % 13) as f64 * 0.333,
                labels[i % labels.len()],
            );
            p.confidence = (i % 5) as f32 / 4.0;
            p.withheld = i % 17 == 0;
            p
        })
        .collect();
    let cloud = ClassifiedPointCloud::new(pts, Some(CrsId::utm(11, true))).unwrap();
    let (las, side) = (tmp.path().join("c.las"), tmp.path().join("c.labels"));
    save_point_cloud(&cloud, &las, Some(&side)).unwrap();
    let back = load_point_cloud(
        &las,
        &LoadOptions {
            sidecar: Some(side),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(back.crs(), cloud.crs());
    assert_eq!(back.len(), cloud.len());
    for (a, b) in cloud.points().iter().zip(back.points()) {
        assert!(
            (a.x - b.x).abs() <= 1e-3 && (a.y - b.y).abs() <= 1e-3 && (a.z - b.z).abs() <= 1e-3
        );
        assert_eq!(
            (a.label, a.confidence, a.withheld),
            (b.label, b.confidence, b.withheld)
        );
    }
}

#[test]
fn footprint_geojson_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let crs = CrsId::utm(11, true);
    let sq = |x: f64, y: f64, s: f64| {
        Polygon::new(
            vec![
                Point2::new(x, y),
                Point2::new(x + s, y),
                Point2::new(x + s, y + s),
                Point2::new(x, y + s),
            ],
            vec![],
        )
        .unwrap()
    };
    let fps = FootprintSet::new(
        vec![
            Footprint::new(1, sq(500_000.0, 4_000_000.0, 10.0), FootprintSource::Lidar),
            Footprint::new(
                u64::MAX - 3,
                sq(500_020.5, 4_000_003.25, 12.0),
                FootprintSource::Provided,
            ),
        ],
        Some(crs.clone()),
    )
    .unwrap();
    let p = tmp.path().join("f.geojson");
    save_footprints_geojson(&fps, &p).unwrap();
    let back = load_footprints_geojson(&p, Some(&crs)).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in fps.features().iter().zip(back.features()) {
        assert_eq!(a.id, b.id);
        let (ra, rb) = (a.polygon.exterior(), b.polygon.exterior());
        assert_eq!(ra.len(), rb.len());
        for (p, q) in ra.iter().zip(rb) {
            assert!((p.x - q.x).abs() < 1e-3 && (p.y - q.y).abs() < 1e-3);
        }
    }
}

#[test]
fn overpass_fixture_parses() {
    let text = std::fs::read_to_string(fixture("overpass_sample.json")).unwrap();
    let fps = parse_overpass(&text, &CrsId::utm(11, true)).unwrap();
    // 12 closed building ways; the open way, the highway and the node are skipped.
    assert_eq!(fps.len(), 12);
    assert!(fps
        .features()
        .iter()
        .all(|f| f.source == FootprintSource::Osm && (1000..1012).contains(&f.id)));
}

#[test]
fn overpass_cache_hit_avoids_network() {
    let tmp = tempfile::tempdir().unwrap();
    let bbox = LonLatBox {
        south: 36.23,
        west: -115.05,
        north: 36.25,
        east: -115.03,
    };
    let bogus = OsmOptions {
        endpoint: Some("http://127.0.0.1:9/api/interpreter".into()),
        cache_dir: Some(tmp.path().to_path_buf()),
        cancel: None,
    };
    let crs = CrsId::utm(11, true);
    assert!(fetch_osm_footprints(&bbox, &crs, &bogus).is_err());

    let name = format!(
        "overpass_{}.json",
        hex::encode(Sha256::digest(bbox.key().as_bytes()))
    );
    std::fs::copy(fixture("overpass_sample.json"), tmp.path().join(name)).unwrap();
    assert_eq!(fetch_osm_footprints(&bbox, &crs, &bogus).unwrap().len(), 12);
}
