use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::fit::{threshold_distance, CtfModelFit};
use super::CtfRecord;
use crate::crs::{CrsId, Transformer};
use crate::error::{json_error_offset, Error, Result};

/// Records as a GeoJSON FeatureCollection of center rectangles.
///
/// With a known CRS the geometry is converted to WGS84 lon/lat so the file
/// is plain RFC 7946; otherwise native coordinates are written as is.
pub fn records_to_geojson(records: &[CtfRecord], crs: Option<&CrsId>) -> Result<Value> {
    let to_ll = match crs {
        Some(c) => match Transformer::new(c, &CrsId::wgs84()) {
            Ok(t) => Some(t),
            Err(e) => {
                log::warn!("CTF records kept in native coordinates: {e}");
                None
            }
        },
        None => None,
    };
    let features: Vec<Value> = records
        .iter()
        .map(|r| {
            let c = r.region.center.corners();
            let ring: Vec<Value> = c
                .iter()
                .chain(std::iter::once(&c[0]))
                .map(|p| match &to_ll {
                    Some(t) => {
                        let (x, y) = t.transform(p.x, p.y);
                        json!([x, y])
                    }
                    None => json!([p.x, p.y]),
                })
                .collect();
            json!({
                "type": "Feature",
                "id": r.region_id,
                "properties": {
                    "region_id": r.region_id,
                    "id_a": r.region.pair.id_a,
                    "id_b": r.region.pair.id_b,
                    "d_m": r.region.d,
                    "ctf_test": r.c_test,
                    "ctf_ref": r.c_ref,
                    "valid": r.valid,
                    "reason": r.reason.as_str(),
                },
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            })
        })
        .collect();
    let mut fc = Map::new();
    fc.insert("type".into(), "FeatureCollection".into());
    if let (None, Some(c)) = (&to_ll, crs) {
        fc.insert(
            "crs".into(),
            json!({"type": "name", "properties": {"name": c.as_str()}}),
        );
    }
    fc.insert("features".into(), features.into());
    Ok(Value::Object(fc))
}

pub fn save_records_geojson(
    records: &[CtfRecord],
    crs: Option<&CrsId>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = serde_json::to_string_pretty(&records_to_geojson(records, crs)?)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct CsvRow {
    region_id: usize,
    id_a: u64,
    id_b: u64,
    d_m: f64,
    overlap_m: f64,
    ctf_test: f64,
    ctf_ref: f64,
    valid: bool,
    reason: &'static str,
    a1: Option<f64>,
    a2: Option<f64>,
    b: Option<f64>,
    zero_level: Option<f64>,
    test_max: Option<f64>,
    ref_max: Option<f64>,
}

/// One CSV row per record.
pub fn records_to_csv(records: &[CtfRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        let l = r.levels_test.as_ref();
        w.serialize(CsvRow {
            region_id: r.region_id,
            id_a: r.region.pair.id_a,
            id_b: r.region.pair.id_b,
            d_m: r.region.d,
            overlap_m: r.region.overlap,
            ctf_test: r.c_test,
            ctf_ref: r.c_ref,
            valid: r.valid,
            reason: r.reason.as_str(),
            a1: l.map(|l| l.a1),
            a2: l.map(|l| l.a2),
            b: l.map(|l| l.b),
            zero_level: l.map(|l| l.zero_level),
            test_max: l.map(|l| l.test_max),
            ref_max: l.map(|l| l.ref_max),
        })
        .map_err(|e| Error::input(format!("CSV: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::input(format!("CSV: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

pub fn save_records_csv(records: &[CtfRecord], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, records_to_csv(records)?)?;
    Ok(())
}

#[derive(Serialize)]
struct PlotRow {
    region_id: usize,
    d_m: f64,
    ctf_test: f64,
    ctf_ref: f64,
    valid: bool,
    reason: &'static str,
    model_ctf: Option<f64>,
}

/// Every plotted point with the model value at its distance.
pub fn plot_points_csv(records: &[CtfRecord], fit: Option<&CtfModelFit>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(PlotRow {
            region_id: r.region_id,
            d_m: r.region.d,
            ctf_test: r.c_test,
            ctf_ref: r.c_ref,
            valid: r.valid,
            reason: r.reason.as_str(),
            model_ctf: fit.map(|f| f.eval(r.region.d)),
        })
        .map_err(|e| Error::input(format!("CSV: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::input(format!("CSV: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Full-fidelity record dump used to pass records between stages.
pub fn save_records_json(records: &[CtfRecord], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(records)? + "\n")?;
    Ok(())
}

pub fn load_records_json(path: impl AsRef<Path>) -> Result<Vec<CtfRecord>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: json_error_offset(&text, &e),
        message: format!("{}: {e}", path.as_ref().display()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub log_x: bool,
    pub width: u32,
    pub height: u32,
    pub title: String,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            log_x: false,
            width: 640,
            height: 420,
            title: "CTF vs distance".into(),
        }
    }
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let raw = (hi - lo) / n.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Scatter of `(d, c_test)` with the fitted curve, the threshold line and
/// a marker at the crossing distance. Invalid records are drawn hollow.
pub fn render_ctf_svg(
    records: &[CtfRecord],
    fit: Option<&CtfModelFit>,
    t: f64,
    opts: &PlotOptions,
) -> String {
    let (w, h) = (opts.width as f64, opts.height as f64);
    let (ml, mr, mt, mb) = (60.0, 20.0, 36.0, 48.0);
    let ds: Vec<f64> = records
        .iter()
        .map(|r| r.region.d)
        .filter(|d| *d > 0.0)
        .collect();
    let d_star = fit.and_then(|f| threshold_distance(f, t).ok());
    let d_hi = ds.iter().copied().chain(d_star).fold(1.0f64, f64::max) * 1.05;
    let d_lo = ds
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .min(d_hi / 2.0)
        / 1.2;
    let c_lo = records.iter().map(|r| r.c_test).fold(0.0f64, f64::min);
    let c_hi = records.iter().map(|r| r.c_test).fold(1.0f64, f64::max);
    let xmap = |d: f64| -> f64 {
        let f = if opts.log_x {
            (d.max(d_lo).ln() - d_lo.ln()) / (d_hi.ln() - d_lo.ln())
        } else {
            d / d_hi
        };
        ml + f * (w - ml - mr)
    };
    let ymap = |c: f64| mt + (c_hi - c) / (c_hi - c_lo) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        xml_escape(&opts.title)
    );
    let (x0, x1, y0, y1) = (ml, w - mr, mt, h - mb);
    let _ = writeln!(
        s,
        r#"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );

    let xticks = if opts.log_x {
        let (a, b) = (d_lo.log10().floor() as i32, d_hi.log10().ceil() as i32);
        (a..=b)
            .flat_map(|e| [1.0, 2.0, 5.0].map(|m| m * 10f64.powi(e)))
            .filter(|v| *v >= d_lo && *v <= d_hi)
            .collect()
    } else {
        nice_ticks(0.0, d_hi, 8)
    };
    for v in xticks {
        let x = xmap(v);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{y1:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            y1 + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y1 + 16.0,
            fmt_tick(v)
        );
    }
    for v in nice_ticks(c_lo, c_hi, 5) {
        let y = ymap(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/>"#,
            x0 - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y + 4.0,
            fmt_tick(v)
        );
    }
    let axis_x = if opts.log_x {
        "distance d (m, log scale)"
    } else {
        "distance d (m)"
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{axis_x}</text>"#,
        (x0 + x1) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">CTF</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    let _ = writeln!(s, r#"<g id="points">"#);
    for r in records {
        let (cx, cy) = (xmap(r.region.d), ymap(r.c_test));
        let style = if r.valid {
            r##"fill="#1f77b4""##
        } else {
            r##"fill="none" stroke="#999999""##
        };
        let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" {style}/>"#);
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(
        s,
        r##"<line id="threshold" x1="{x0:.1}" y1="{:.2}" x2="{x1:.1}" y2="{:.2}" stroke="#d62728" stroke-dasharray="6 4"/>"##,
        ymap(t),
        ymap(t)
    );
    if let Some(f) = fit {
        let n = 200;
        let pts: Vec<String> = (0..=n)
            .map(|i| {
                let u = i as f64 / n as f64;
                let d = if opts.log_x {
                    (d_lo.ln() + u * (d_hi.ln() - d_lo.ln())).exp()
                } else {
                    (u * d_hi).max(1e-6)
                };
                format!("{:.2},{:.2}", xmap(d), ymap(f.eval(d).clamp(c_lo, c_hi)))
            })
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline id="model" points="{}" fill="none" stroke="#2ca02c" stroke-width="2"/>"##,
            pts.join(" ")
        );
    }
    if let Some(ds) = d_star {
        let x = xmap(ds);
        let _ = writeln!(
            s,
            r##"<line id="d-star" x1="{x:.2}" y1="{y0:.1}" x2="{x:.2}" y2="{y1:.1}" stroke="#ff7f0e" stroke-dasharray="3 3"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.1}">d* = {ds:.2} m at t = {t}</text>"#,
            x + 4.0,
            y0 + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{OrientedRect, Point2};
    use crate::metrics::{fit_ctf_points, RecordReason};
    use crate::regions::{BuildingPair, EvaluationRegion};

    fn record(id: usize, d: f64, c: f64, valid: bool) -> CtfRecord {
        let r = OrientedRect::new(
            Point2::new(500_000.0, 4_000_000.0),
            Point2::new(1.0, 0.0),
            5.0,
            d / 2.0,
        )
        .unwrap();
        CtfRecord {
            region_id: id,
            region: EvaluationRegion {
                pair: BuildingPair {
                    id_a: 1,
                    id_b: 2,
                    centroid_distance: 10.0,
                },
                center: r,
                region_a: r,
                region_b: r,
                d,
                overlap: 10.0,
                edge_a: 0,
                edge_b: 2,
            },
            c_test: c,
            c_ref: 0.99,
            levels_test: None,
            levels_ref: None,
            valid,
            reason: if valid {
                RecordReason::Ok
            } else {
                RecordReason::LowRefCtf
            },
        }
    }

    #[test]
    fn geojson_is_lonlat_with_properties() {
        let recs = vec![record(1, 2.0, 0.5, true), record(2, 4.0, 0.0, false)];
        let v = records_to_geojson(&recs, Some(&CrsId::utm(11, true))).unwrap();
        assert!(v.get("crs").is_none());
        let f = &v["features"][1];
        assert_eq!(f["properties"]["reason"], "low_ref_ctf");
        assert_eq!(f["properties"]["d_m"], 4.0);
        let lon = f["geometry"]["coordinates"][0][0][0].as_f64().unwrap();
        assert!((-120.0..-114.0).contains(&lon));
        let native = records_to_geojson(&recs, None).unwrap();
        assert_eq!(
            native["features"][0]["geometry"]["coordinates"][0][0][0],
            499_995.0
        );
    }

    #[test]
    fn csv_and_json_round_trip() {
        let recs = vec![record(1, 2.0, 0.5, true), record(2, 4.0, 0.0, false)];
        let text = records_to_csv(&recs).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rd.headers().unwrap().get(0), Some("region_id"));
        assert_eq!(rd.records().count(), 2);
        let plot = plot_points_csv(&recs, None).unwrap();
        assert_eq!(plot.lines().count(), 3);
        assert!(plot.starts_with("region_id,d_m,ctf_test,ctf_ref,valid,reason,model_ctf"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        save_records_json(&recs, &p).unwrap();
        assert_eq!(load_records_json(&p).unwrap(), recs);
    }

    #[test]
    fn svg_has_all_elements() {
        let d = [0.5, 1.0, 2.0, 4.0, 8.0];
        let recs: Vec<CtfRecord> = d
            .iter()
            .enumerate()
            .map(|(i, &d)| record(i + 1, d, super::super::ctf_model(0.95, 0.8, d), true))
            .collect();
        let c: Vec<f64> = recs.iter().map(|r| r.c_test).collect();
        let fit = fit_ctf_points(&d, &c, None).unwrap();
        for log_x in [false, true] {
            let svg = render_ctf_svg(
                &recs,
                Some(&fit),
                0.2,
                &PlotOptions {
                    log_x,
                    ..Default::default()
                },
            );
            assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
            assert_eq!(svg.matches("<circle").count(), 5);
            for id in ["id=\"model\"", "id=\"threshold\"", "id=\"d-star\""] {
                assert!(svg.contains(id), "missing {id}");
            }
        }
        let bare = render_ctf_svg(&[], None, 0.2, &PlotOptions::default());
        assert!(bare.contains("threshold") && !bare.contains("d-star"));
    }
}
