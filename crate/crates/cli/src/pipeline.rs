//! Pipeline stages. Each stage reads the previous stage's files from the
//! output directory, writes its own, and records a content-hash cache key
//! in the manifest so an unchanged rerun is skipped.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde_json::{json, Value};

use ctf3d::alignment::{apply_alignment, global_align, GlobalAlignment};
use ctf3d::crs::{CrsId, Transformer};
use ctf3d::footprints::{
    align_footprints, build_masks, fetch_osm_footprints, load_footprints_geojson, polygonize_mask,
    save_footprints_geojson, LonLatBox, MaskPair, OsmOptions,
};
use ctf3d::metrics::{
    compute_all_ctf, filter_records, fit_ctf_model, load_records_json, plot_points_csv,
    reason_counts, render_ctf_svg, save_records_csv, save_records_geojson, save_records_json,
    vertical_accuracy, FitReport, PlotOptions, RecordReason,
};
use ctf3d::pointcloud::{load_point_cloud, LoadOptions};
use ctf3d::raster::{
    downsample2, estimate_anps, generate_tribar, load_obj, rasterize_max_dsm, rasterize_max_dsm_on,
    rasterize_mesh_on, rasterize_min_dtm_on, read_geotiff, resample_to_grid, write_geotiff,
};
use ctf3d::regions::{build_all_regions, load_regions_geojson, save_regions_geojson};
use ctf3d::Raster;

use crate::config::{FootprintInput, PipelineConfig, TestMode};
use crate::error::CliError;
use crate::manifest::{sha256_bytes, sha256_file, DirLock, RunManifest, TOOL_VERSION};

pub const REFERENCE_DSM: &str = "reference_dsm.tif";
pub const REFERENCE_DTM: &str = "reference_dtm.tif";
pub const BUILDING_MASK: &str = "building_mask.tif";
pub const GROUND_MASK: &str = "ground_mask.tif";
pub const TEST_DSM: &str = "test_dsm.tif";
pub const ALIGNED_TEST_DSM: &str = "aligned_test_dsm.tif";
pub const ALIGNMENT_JSON: &str = "alignment.json";
pub const FOOTPRINTS: &str = "footprints.geojson";
pub const REGIONS: &str = "regions.geojson";
pub const RECORDS_GEOJSON: &str = "ctf_records.geojson";
pub const RECORDS_CSV: &str = "ctf_records.csv";
pub const RECORDS_JSON: &str = "ctf_records.json";
pub const FIT_JSON: &str = "fit.json";
pub const REPORT_SVG: &str = "report.svg";
pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TRIBAR_FOOTPRINTS: &str = "tribar_footprints.geojson";
pub const TRIBAR_FACTORS: [u32; 5] = [1, 2, 4, 8, 16];

pub fn tribar_raster_name(factor: u32) -> String {
    format!("tribar_x{factor}.tif")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Default)]
struct StageOutputs {
    files: Vec<String>,
    results: Vec<(String, Value)>,
}

impl StageOutputs {
    fn wrote(&mut self, name: &str) {
        self.files.push(name.to_string());
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    dir: PathBuf,
    manifest: RunManifest,
    force: bool,
    _lock: DirLock,
}

impl Pipeline {
    /// Validates the config, creates and locks the output directory.
    pub fn open(cfg: PipelineConfig, force: bool) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.paths.out_dir.clone();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let lock = DirLock::acquire(&dir)?;
        let mut manifest = RunManifest::load_or_default(&dir)?;
        manifest.tool_version = TOOL_VERSION.into();
        manifest.config = serde_json::to_value(&cfg)?;
        Ok(Self {
            cfg,
            dir,
            manifest,
            force,
            _lock: lock,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of a prior stage's output, or an error naming that stage.
    fn require(&self, name: &str, command: &'static str) -> Result<PathBuf> {
        let p = self.out(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingInput {
                what: p.display().to_string(),
                command,
            }
            .into())
        }
    }

    fn external(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| CliError::Config(format!("paths.{what} is not set")))?;
        if !p.is_file() {
            return Err(CliError::MissingFile(format!("{what} {}", p.display())).into());
        }
        Ok(p)
    }

    fn run_stage(
        &mut self,
        stage: &str,
        params: Value,
        inputs: &[PathBuf],
        body: impl FnOnce(&Self, &mut StageOutputs) -> Result<()>,
    ) -> Result<StageStatus> {
        let mut hashed = Vec::with_capacity(inputs.len());
        for p in inputs {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            hashed.push(json!([name, sha256_file(p)?]));
        }
        let key_src =
            json!({"stage": stage, "version": TOOL_VERSION, "params": params, "inputs": hashed});
        let key = sha256_bytes(key_src.to_string().as_bytes());
        if !self.force && self.manifest.is_fresh(&self.dir, stage, &key) {
            log::info!("{stage}: up to date, skipping");
            return Ok(StageStatus::Skipped);
        }
        log::info!("{stage}: running");
        let mut outs = StageOutputs::default();
        let result = body(self, &mut outs).with_context(|| format!("stage {stage} failed"));
        let error = result.as_ref().err().map(|e| format!("{e:#}"));
        self.manifest
            .record(&self.dir, stage, key, &outs.files, error)?;
        for (k, v) in outs.results {
            self.manifest.results.insert(k, v);
        }
        self.manifest.save(&self.dir)?;
        result.map(|_| StageStatus::Ran)
    }

    /// Reference DSM (max rule) and, from a point cloud, the DTM (min rule
    /// plus fill) and building/ground masks. A GeoTIFF reference is taken
    /// as the DSM directly.
    pub fn prepare(&mut self) -> Result<StageStatus> {
        let reference = Self::external(&self.cfg.paths.reference, "reference")?;
        let labels = self.cfg.paths.reference_labels.clone();
        let mut inputs = vec![reference.clone()];
        if let Some(l) = &labels {
            inputs.push(l.clone());
        }
        let params = json!({
            "crs": self.cfg.crs,
            "gsd": self.cfg.gsd,
            "conf_threshold": self.cfg.footprints.conf_threshold,
        });
        self.run_stage("prepare", params, &inputs, |p, out| {
            let crs = p.cfg.crs_override()?;
            if is_geotiff(&reference) {
                let mut r = read_geotiff(&reference)?;
                if r.crs().is_none() {
                    r.set_crs(crs);
                }
                write_geotiff(&r, p.out(REFERENCE_DSM))?;
                out.wrote(REFERENCE_DSM);
                for stale in [REFERENCE_DTM, BUILDING_MASK, GROUND_MASK] {
                    let _ = std::fs::remove_file(p.out(stale));
                }
                log::warn!("reference is a raster: no terrain model or class masks are produced");
                return Ok(());
            }
            let cloud = load_point_cloud(
                &reference,
                &LoadOptions {
                    target_crs: None,
                    crs_override: crs,
                    sidecar: labels.clone(),
                },
            )?;
            let gsd = match p.cfg.gsd {
                Some(g) => g,
                None => estimate_anps(&cloud)?,
            };
            log::info!("reference: {} points, gsd {gsd:.3} m", cloud.len());
            let dsm = rasterize_max_dsm(&cloud, gsd)?;
            write_geotiff(&dsm, p.out(REFERENCE_DSM))?;
            out.wrote(REFERENCE_DSM);
            let masks = build_masks(
                &cloud,
                dsm.grid(),
                dsm.crs(),
                p.cfg.footprints.conf_threshold,
            )?;
            write_geotiff(&masks.building, p.out(BUILDING_MASK))?;
            out.wrote(BUILDING_MASK);
            write_geotiff(&masks.ground, p.out(GROUND_MASK))?;
            out.wrote(GROUND_MASK);
            // Nothing downstream needs the terrain model, so a cloud without
            // ground points still yields a usable DSM and masks.
            match rasterize_min_dtm_on(&cloud, dsm.grid()) {
                Ok(dtm) => {
                    write_geotiff(&dtm, p.out(REFERENCE_DTM))?;
                    out.wrote(REFERENCE_DTM);
                }
                Err(e) => {
                    log::warn!("no terrain model: {e}");
                    let _ = std::fs::remove_file(p.out(REFERENCE_DTM));
                    out.results.push(("dtm_error".into(), json!(e.to_string())));
                }
            }
            Ok(())
        })
    }

    /// Puts the test product on the reference grid, estimates (or takes)
    /// the rigid offset and writes the corrected test DSM.
    pub fn align(&mut self) -> Result<StageStatus> {
        let ref_path = self.require(REFERENCE_DSM, "prepare")?;
        let test = Self::external(&self.cfg.paths.test, "test")?;
        let params = json!({
            "test_mode": self.cfg.test_mode,
            "crs": self.cfg.crs,
            "window_px": self.cfg.align.window_px,
            "valid_frac": self.cfg.align.valid_frac,
            "manual_offset": self.cfg.align.manual_offset,
        });
        self.run_stage("align", params, &[ref_path.clone(), test.clone()], |p, out| {
            let reference = read_geotiff(&ref_path)?;
            let grid = *reference.grid();
            let crs = reference.crs().cloned().or(p.cfg.crs_override()?);
            let mut on_grid = match p.cfg.test_mode {
                TestMode::Dsm => {
                    let mut t = read_geotiff(&test)?;
                    if t.crs().is_none() {
                        t.set_crs(crs.clone());
                    }
                    if let (Some(a), Some(b)) = (t.crs(), crs.as_ref()) {
                        if a != b {
                            return Err(anyhow!("test DSM CRS {a} differs from reference CRS {b}; reproject it first"));
                        }
                    }
                    resample_to_grid(&t, &grid)?
                }
                TestMode::Pointcloud => {
                    let opts = LoadOptions {
                        target_crs: crs.clone(),
                        crs_override: p.cfg.crs_override()?,
                        sidecar: None,
                    };
                    rasterize_max_dsm_on(&load_point_cloud(&test, &opts)?, &grid)?
                }
                TestMode::Mesh => rasterize_mesh_on(&load_obj(&test, crs.clone())?, &grid)?,
            };
            on_grid.set_crs(crs);
            write_geotiff(&on_grid, p.out(TEST_DSM))?;
            out.wrote(TEST_DSM);
            // Reread so both sides carry the same f32 quantization.
            let on_grid = read_geotiff(p.out(TEST_DSM))?;
            let a = match p.cfg.align.manual_offset {
                Some([dx, dy, dz]) => GlobalAlignment::manual(dx, dy, dz),
                None => global_align(&on_grid, &reference, p.cfg.align.window_px, p.cfg.align.valid_frac)
                    .context("automatic alignment failed; try a smaller --window-px or pass --manual-offset")?,
            };
            log::info!("alignment dx {:.3} dy {:.3} dz {:.3} ({} windows)", a.dx, a.dy, a.dz, a.accepted());
            a.save_json(p.out(ALIGNMENT_JSON))?;
            out.wrote(ALIGNMENT_JSON);
            let aligned = apply_alignment(&on_grid, &a, &grid)?;
            write_geotiff(&aligned, p.out(ALIGNED_TEST_DSM))?;
            out.wrote(ALIGNED_TEST_DSM);
            out.results.push((
                "alignment".into(),
                json!({"dx": a.dx, "dy": a.dy, "dz": a.dz, "manual": a.manual, "windows": a.accepted()}),
            ));
            Ok(())
        })
    }

    /// Footprints from the lidar mask, OpenStreetMap or a file; external
    /// footprints are snapped onto the reference masks when present.
    pub fn footprints(&mut self) -> Result<StageStatus> {
        let ref_path = self.require(REFERENCE_DSM, "prepare")?;
        let source = self.cfg.footprint_input();
        let mut inputs = vec![ref_path.clone()];
        let masks_present = self.out(BUILDING_MASK).is_file() && self.out(GROUND_MASK).is_file();
        if masks_present {
            inputs.push(self.out(BUILDING_MASK));
            inputs.push(self.out(GROUND_MASK));
        }
        let source_key = match &source {
            FootprintInput::Lidar => json!("lidar"),
            FootprintInput::Osm => json!("osm"),
            FootprintInput::File(f) => {
                if !f.is_file() {
                    return Err(CliError::MissingFile(format!("footprints {}", f.display())).into());
                }
                inputs.push(f.clone());
                json!("file")
            }
        };
        let params = json!({
            "source": source_key,
            "dp_epsilon": self.cfg.footprints.dp_epsilon,
            "min_area": self.cfg.footprints.min_area,
            "search_radius": self.cfg.footprints.search_radius,
            "osm_endpoint": self.cfg.paths.osm_endpoint,
        });
        self.run_stage("footprints", params, &inputs, |p, out| {
            let reference = read_geotiff(&ref_path)?;
            let crs = reference.crs().cloned();
            let masks = if masks_present {
                Some(MaskPair {
                    building: read_geotiff(p.out(BUILDING_MASK))?,
                    ground: read_geotiff(p.out(GROUND_MASK))?,
                })
            } else {
                None
            };
            let fps = match &source {
                FootprintInput::Lidar => {
                    let m = masks.as_ref().ok_or_else(|| CliError::MissingInput {
                        what: format!(
                            "{} (lidar footprints need a classified point-cloud reference)",
                            BUILDING_MASK
                        ),
                        command: "prepare",
                    })?;
                    polygonize_mask(
                        &m.building,
                        p.cfg.footprints.min_area,
                        p.cfg.footprints.dp_epsilon,
                    )?
                }
                FootprintInput::Osm => {
                    let crs = crs.as_ref().ok_or_else(|| {
                        CliError::Config(
                            "OpenStreetMap footprints need a georeferenced reference".into(),
                        )
                    })?;
                    let bbox = lonlat_bbox(&reference, crs)?;
                    let opts = OsmOptions {
                        endpoint: p.cfg.paths.osm_endpoint.clone(),
                        cache_dir: Some(
                            p.cfg
                                .paths
                                .osm_cache
                                .clone()
                                .unwrap_or_else(|| p.out("osm_cache")),
                        ),
                        cancel: None,
                    };
                    fetch_osm_footprints(&bbox, crs, &opts)?
                }
                FootprintInput::File(f) => load_footprints_geojson(f, crs.as_ref())?,
            };
            let fps = match (&masks, &source) {
                (Some(m), FootprintInput::Osm | FootprintInput::File(_))
                    if p.cfg.footprints.search_radius > 0 =>
                {
                    align_footprints(&fps, m, p.cfg.footprints.search_radius)?
                }
                _ => fps,
            };
            log::info!("{} footprints", fps.len());
            save_footprints_geojson(&fps, p.out(FOOTPRINTS))?;
            out.wrote(FOOTPRINTS);
            out.results.push(("footprints".into(), json!(fps.len())));
            Ok(())
        })
    }

    pub fn regions(&mut self) -> Result<StageStatus> {
        let fp = self.require(FOOTPRINTS, "footprints")?;
        let ref_path = self.require(REFERENCE_DSM, "prepare")?;
        let params = serde_json::to_value(&self.cfg.regions)?;
        self.run_stage(
            "regions",
            params,
            &[fp.clone(), ref_path.clone()],
            |p, out| {
                let gsd = read_geotiff(&ref_path)?.gsd();
                let fps = load_footprints_geojson(&fp, None)?;
                let regions = build_all_regions(&fps, &p.cfg.regions.to_region_config(gsd))?;
                save_regions_geojson(&regions, fps.crs(), p.out(REGIONS))?;
                out.wrote(REGIONS);
                out.results.push(("regions".into(), json!(regions.len())));
                Ok(())
            },
        )
    }

    pub fn ctf(&mut self) -> Result<StageStatus> {
        let test = self.require(ALIGNED_TEST_DSM, "align")?;
        let reference = self.require(REFERENCE_DSM, "prepare")?;
        let regions = self.require(REGIONS, "regions")?;
        let params = json!({"ref_ctf_min": self.cfg.ctf.ref_ctf_min, "min_samples": self.cfg.ctf.min_samples});
        self.run_stage(
            "ctf",
            params,
            &[test.clone(), reference.clone(), regions.clone()],
            |p, out| {
                let t = read_geotiff(&test)?;
                let r = read_geotiff(&reference)?;
                let regions = load_regions_geojson(&regions)?;
                let records = filter_records(
                    &compute_all_ctf(&t, &r, &regions, p.cfg.ctf.min_samples)?,
                    p.cfg.ctf.ref_ctf_min,
                );
                save_records_geojson(&records, r.crs(), p.out(RECORDS_GEOJSON))?;
                out.wrote(RECORDS_GEOJSON);
                save_records_csv(&records, p.out(RECORDS_CSV))?;
                out.wrote(RECORDS_CSV);
                save_records_json(&records, p.out(RECORDS_JSON))?;
                out.wrote(RECORDS_JSON);
                out.results
                    .push(("record_counts".into(), counts_json(&records)));
                Ok(())
            },
        )
    }

    pub fn fit(&mut self) -> Result<StageStatus> {
        let recs = self.require(RECORDS_JSON, "ctf")?;
        let params = json!({"thresholds": self.cfg.ctf.thresholds(), "ref_ctf_min": self.cfg.ctf.ref_ctf_min});
        self.run_stage("fit", params, std::slice::from_ref(&recs), |p, out| {
            // Refilter so a changed cutoff takes effect without recomputing CTFs.
            let records = filter_records(&load_records_json(&recs)?, p.cfg.ctf.ref_ctf_min);
            let n_valid = records.iter().filter(|r| r.valid).count();
            if n_valid < 3 {
                return Err(CliError::Numerical(format!(
                    "model fit needs at least 3 valid records, found {n_valid} (by reason: {})",
                    counts_text(&records)
                ))
                .into());
            }
            let fit = fit_ctf_model(&records, None)?;
            if !fit.converged {
                log::warn!("model fit did not converge; reporting the best parameters found");
            }
            if fit.poorly_constrained {
                log::warn!("model parameters are poorly constrained by the data");
            }
            let report = FitReport::new(
                fit,
                p.cfg.ctf.ref_ctf_min,
                &p.cfg.ctf.thresholds(),
                &records,
            );
            report.save_json(p.out(FIT_JSON))?;
            out.wrote(FIT_JSON);
            out.results
                .push(("fit".into(), serde_json::to_value(&report)?));
            Ok(())
        })
    }

    /// SVG plot, plotted-point CSV and a JSON summary that also carries the
    /// vertical accuracy of the aligned test product.
    pub fn report(&mut self) -> Result<StageStatus> {
        let fit_path = self.require(FIT_JSON, "fit")?;
        let recs = self.require(RECORDS_JSON, "ctf")?;
        let test = self.require(ALIGNED_TEST_DSM, "align")?;
        let reference = self.require(REFERENCE_DSM, "prepare")?;
        let alignment = self.require(ALIGNMENT_JSON, "align")?;
        let mut inputs = vec![
            fit_path.clone(),
            recs.clone(),
            test.clone(),
            reference.clone(),
            alignment.clone(),
        ];
        let ground = self.out(GROUND_MASK);
        let have_ground = ground.is_file();
        if have_ground {
            inputs.push(ground.clone());
        }
        let params = json!({"log_x": self.cfg.report.log_x, "threshold": self.cfg.ctf.threshold});
        self.run_stage("report", params, &inputs, |p, out| {
            let report = FitReport::load_json(&fit_path)?;
            let records = filter_records(&load_records_json(&recs)?, report.ref_ctf_min);
            let t = p.cfg.ctf.threshold;
            let opts = PlotOptions {
                log_x: p.cfg.report.log_x,
                ..Default::default()
            };
            std::fs::write(p.out(REPORT_SVG), render_ctf_svg(&records, Some(&report.fit), t, &opts))?;
            out.wrote(REPORT_SVG);
            std::fs::write(p.out(REPORT_CSV), plot_points_csv(&records, Some(&report.fit))?)?;
            out.wrote(REPORT_CSV);

            let test = read_geotiff(&test)?;
            let reference = read_geotiff(&reference)?;
            let va_all = vertical_accuracy(&test, &reference, None).ok();
            let va_ground = if have_ground {
                vertical_accuracy(&test, &reference, Some(&read_geotiff(&ground)?)).ok()
            } else {
                None
            };
            let a = GlobalAlignment::load_json(&alignment)?;
            let summary = json!({
                "threshold": t,
                "d_star": ctf3d::metrics::threshold_distance(&report.fit, t).ok(),
                "thresholds": report.thresholds,
                "amp_A": report.fit.amp_a,
                "sigma": report.fit.sigma,
                "residual_rms": report.fit.residual_rms,
                "n_points": report.fit.n_points,
                "converged": report.fit.converged,
                "poorly_constrained": report.fit.poorly_constrained,
                "ref_ctf_min": report.ref_ctf_min,
                "record_counts": counts_json(&records),
                "alignment": {"dx": a.dx, "dy": a.dy, "dz": a.dz, "manual": a.manual, "windows": a.accepted()},
                "vertical_accuracy": {"all": va_all, "ground": va_ground},
            });
            std::fs::write(p.out(SUMMARY_JSON), serde_json::to_string_pretty(&summary)? + "\n")?;
            out.wrote(SUMMARY_JSON);
            Ok(())
        })
    }

    /// Tribar DSM at the configured GSD, its 2x, 4x, 8x and 16x
    /// downsamples, and the exact bar footprints.
    pub fn synth_tribar(&mut self) -> Result<StageStatus> {
        let params = serde_json::to_value(&self.cfg.tribar)?;
        self.run_stage("synth-tribar", params, &[], |p, out| {
            let (r, fps) = generate_tribar(&p.cfg.tribar)?;
            let mut cur: Raster = r;
            for (i, &f) in TRIBAR_FACTORS.iter().enumerate() {
                if i > 0 {
                    cur = downsample2(&cur)?;
                }
                let name = tribar_raster_name(f);
                write_geotiff(&cur, p.out(&name))?;
                out.wrote(&name);
            }
            save_footprints_geojson(&fps, p.out(TRIBAR_FOOTPRINTS))?;
            out.wrote(TRIBAR_FOOTPRINTS);
            Ok(())
        })
    }

    /// All stages from `prepare` through `report`.
    pub fn run_all(&mut self) -> Result<Vec<StageStatus>> {
        Ok(vec![
            self.prepare()?,
            self.align()?,
            self.footprints()?,
            self.regions()?,
            self.ctf()?,
            self.fit()?,
            self.report()?,
        ])
    }
}

fn is_geotiff(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"))
}

fn lonlat_bbox(r: &Raster, crs: &CrsId) -> Result<LonLatBox> {
    let t = Transformer::new(crs, &CrsId::wgs84())?;
    let (x0, y0, x1, y1) = r.grid().bounds();
    let pts = [(x0, y0), (x0, y1), (x1, y0), (x1, y1)].map(|(x, y)| t.transform(x, y));
    let fold = |f: fn(f64, f64) -> f64, init: f64, k: usize| {
        pts.iter()
            .map(|p| if k == 0 { p.0 } else { p.1 })
            .fold(init, f)
    };
    Ok(LonLatBox {
        west: fold(f64::min, f64::INFINITY, 0),
        east: fold(f64::max, f64::NEG_INFINITY, 0),
        south: fold(f64::min, f64::INFINITY, 1),
        north: fold(f64::max, f64::NEG_INFINITY, 1),
    })
}

fn counts_json(records: &[ctf3d::metrics::CtfRecord]) -> Value {
    let counts = reason_counts(records);
    let all = [
        RecordReason::Ok,
        RecordReason::LowRefCtf,
        RecordReason::ZeroTestCtf,
        RecordReason::InsufficientSamples,
    ];
    Value::Object(
        all.iter()
            .map(|r| (r.to_string(), json!(counts.get(r).copied().unwrap_or(0))))
            .collect(),
    )
}

fn counts_text(records: &[ctf3d::metrics::CtfRecord]) -> String {
    let v = counts_json(records);
    v.as_object()
        .map(|m| {
            m.iter()
                .map(|(k, n)| format!("{k}={n}"))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .unwrap_or_default()
}
