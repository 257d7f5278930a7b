#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ctf3d::crs::CrsId;
use ctf3d::pointcloud::{save_point_cloud, ClassLabel, ClassifiedPointCloud, LidarPoint};

pub const X0: f64 = 500_000.0;
pub const Y0: f64 = 4_000_000.0;

/// Flat-roofed 12 m x 20 m buildings in side-by-side pairs separated by
/// `gaps`, sampled on a 0.5 m lattice over a gently sloping ground.
pub fn scene_cloud(gaps: &[f64], with_ground: bool) -> ClassifiedPointCloud {
    let mut boxes = Vec::new();
    for (i, &g) in gaps.iter().enumerate() {
        let ox = 10.0 + (i % 2) as f64 * 60.0;
        let oy = 10.0 + (i / 2) as f64 * 40.0;
        let h = 8.0 + (i % 3) as f64;
        boxes.push((ox, oy, ox + 12.0, oy + 20.0, h));
        boxes.push((ox + 12.0 + g, oy, ox + 24.0 + g, oy + 20.0, h + 1.0));
    }
    let rows = gaps.len().div_ceil(2);
    let (w, h) = (130.0, 10.0 + rows as f64 * 40.0);
    let step = 0.5;
    let mut pts = Vec::new();
    for j in 0..(h / step) as usize {
        for i in 0..(w / step) as usize {
            let x = (i as f64 + 0.25) * step;
            let y = (j as f64 + 0.25) * step;
            let ground = 0.01 * x + 0.005 * y;
            let roof = boxes
                .iter()
                .find(|b| x >= b.0 && x < b.2 && y >= b.1 && y < b.3)
                .map(|b| b.4);
            let p = match roof {
                Some(r) => LidarPoint::new(X0 + x, Y0 + y, ground + r, ClassLabel::Building),
                None if with_ground => LidarPoint::new(X0 + x, Y0 + y, ground, ClassLabel::Ground),
                None => LidarPoint::new(X0 + x, Y0 + y, ground, ClassLabel::Unlabeled),
            };
            pts.push(p);
        }
    }
    ClassifiedPointCloud::new(pts, Some(CrsId::epsg(32611))).unwrap()
}

pub fn write_scene(dir: &Path, name: &str, gaps: &[f64], with_ground: bool) -> PathBuf {
    let p = dir.join(name);
    save_point_cloud(&scene_cloud(gaps, with_ground), &p, None).unwrap();
    p
}

pub fn run<S: AsRef<str>>(args: &[S]) -> i32 {
    let mut v = vec!["ctf3d".to_string()];
    v.extend(args.iter().map(|s| s.as_ref().to_string()));
    ctf3d_cli::main_entry(v)
}

/// Content hash of every file in `dir` except the manifest and lock.
pub fn hash_dir(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        let name = e.file_name().to_string_lossy().into_owned();
        if !e.path().is_file()
            || name == ctf3d_cli::manifest::MANIFEST_FILE
            || name.starts_with('.')
        {
            continue;
        }
        out.insert(name, ctf3d_cli::manifest::sha256_file(&e.path()).unwrap());
    }
    out
}
