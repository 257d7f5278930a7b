//! Pipeline configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use ctf3d::metrics::{DEFAULT_CTF_THRESHOLD, DEFAULT_MIN_SAMPLES, DEFAULT_REF_CTF_MIN};
use ctf3d::raster::TribarSpec;
use ctf3d::regions::RegionConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMode {
    Pointcloud,
    #[default]
    Dsm,
    Mesh,
}

impl std::str::FromStr for TestMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pointcloud" => Ok(TestMode::Pointcloud),
            "dsm" => Ok(TestMode::Dsm),
            "mesh" => Ok(TestMode::Mesh),
            other => Err(format!(
                "unknown test mode {other:?} (expected pointcloud, dsm or mesh)"
            )),
        }
    }
}

/// Where building footprints come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FootprintInput {
    /// Polygonized from the reference building mask.
    Lidar,
    /// Queried from the Overpass API over the reference extent.
    Osm,
    File(PathBuf),
}

impl FootprintInput {
    pub fn parse(s: &str) -> Self {
        match s {
            "lidar" => FootprintInput::Lidar,
            "osm" => FootprintInput::Osm,
            path => FootprintInput::File(PathBuf::from(path)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Reference point cloud (LAS/LAZ), or a GeoTIFF DSM used as is.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    /// Label sidecar for the reference point cloud.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// `lidar`, `osm`, or a GeoJSON path.
    pub footprints: String,
    pub out_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub osm_cache: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub osm_endpoint: Option<String>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            reference: None,
            reference_labels: None,
            test: None,
            footprints: "lidar".into(),
            out_dir: PathBuf::from("ctf3d_out"),
            osm_cache: None,
            osm_endpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub window_px: usize,
    pub valid_frac: f64,
    /// `[dx, dy, dz]` in meters; skips the automatic estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manual_offset: Option<[f64; 3]>,
}

impl Default for AlignSection {
    fn default() -> Self {
        Self {
            window_px: ctf3d::alignment::DEFAULT_WINDOW_PX,
            valid_frac: ctf3d::alignment::DEFAULT_VALID_FRAC,
            manual_offset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FootprintSection {
    pub conf_threshold: f64,
    pub dp_epsilon: f64,
    pub min_area: f64,
    /// Footprint-to-mask search radius in reference pixels; 0 disables.
    pub search_radius: u32,
}

impl Default for FootprintSection {
    fn default() -> Self {
        Self {
            conf_threshold: ctf3d::footprints::DEFAULT_CONF_THRESHOLD,
            dp_epsilon: 0.5,
            min_area: ctf3d::footprints::DEFAULT_MIN_AREA,
            search_radius: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSection {
    pub max_centroid_dist: f64,
    pub max_orth_dist: f64,
    pub angle_tol: f64,
    pub min_overlap: f64,
    pub min_separation: f64,
    /// Minimum building-rectangle depth; the reference GSD when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_size: Option<f64>,
}

impl Default for RegionSection {
    fn default() -> Self {
        let d = RegionConfig::default();
        Self {
            max_centroid_dist: d.max_centroid_dist,
            max_orth_dist: d.max_orth_dist,
            angle_tol: d.angle_tol_deg,
            min_overlap: d.min_overlap,
            min_separation: d.min_separation,
            cell_size: None,
        }
    }
}

impl RegionSection {
    pub fn to_region_config(&self, reference_gsd: f64) -> RegionConfig {
        RegionConfig {
            max_centroid_dist: self.max_centroid_dist,
            max_orth_dist: self.max_orth_dist,
            angle_tol_deg: self.angle_tol,
            min_overlap: self.min_overlap,
            min_separation: self.min_separation,
            cell_size: self.cell_size.unwrap_or(reference_gsd),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtfSection {
    pub ref_ctf_min: f64,
    /// Contrast level whose crossing distance is the headline result.
    pub threshold: f64,
    /// Further levels reported in `fit.json`.
    pub extra_thresholds: Vec<f64>,
    pub min_samples: usize,
}

impl Default for CtfSection {
    fn default() -> Self {
        Self {
            ref_ctf_min: DEFAULT_REF_CTF_MIN,
            threshold: DEFAULT_CTF_THRESHOLD,
            extra_thresholds: vec![0.1],
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

impl CtfSection {
    pub fn thresholds(&self) -> Vec<f64> {
        let mut t = vec![self.threshold];
        t.extend(
            self.extra_thresholds
                .iter()
                .copied()
                .filter(|x| *x != self.threshold),
        );
        t
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub log_x: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub test_mode: TestMode,
    /// CRS override for inputs lacking one, e.g. `EPSG:32611`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crs: Option<String>,
    /// Reference GSD override; the point spacing estimate otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gsd: Option<f64>,
    pub align: AlignSection,
    pub footprints: FootprintSection,
    pub regions: RegionSection,
    pub ctf: CtfSection,
    pub report: ReportSection,
    pub tribar: TribarSpec,
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        cfg.paths.reference.as_mut().map(abs);
        cfg.paths.reference_labels.as_mut().map(abs);
        cfg.paths.test.as_mut().map(abs);
        cfg.paths.osm_cache.as_mut().map(abs);
        abs(&mut cfg.paths.out_dir);
        if let FootprintInput::File(p) = FootprintInput::parse(&cfg.paths.footprints) {
            if p.is_relative() {
                cfg.paths.footprints = base_dir.join(p).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn footprint_input(&self) -> FootprintInput {
        FootprintInput::parse(&self.paths.footprints)
    }

    pub fn crs_override(&self) -> Result<Option<ctf3d::crs::CrsId>, CliError> {
        self.crs
            .as_deref()
            .map(|s| ctf3d::crs::CrsId::parse(s).map_err(|e| CliError::Config(format!("crs: {e}"))))
            .transpose()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let c = &self.ctf;
        if !(0.0..1.0).contains(&c.ref_ctf_min) {
            return bad(format!(
                "ctf.ref_ctf_min must be in [0, 1) (got {})",
                c.ref_ctf_min
            ));
        }
        for t in c.thresholds() {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("ctf thresholds must be in (0, 1) (got {t})"));
            }
        }
        if c.min_samples == 0 {
            return bad("ctf.min_samples must be at least 1".into());
        }
        let a = &self.align;
        if a.window_px < ctf3d::alignment::MIN_WINDOW_PX {
            return bad(format!(
                "align.window_px must be at least {}",
                ctf3d::alignment::MIN_WINDOW_PX
            ));
        }
        if !(0.0..=1.0).contains(&a.valid_frac) {
            return bad(format!(
                "align.valid_frac must be in [0, 1] (got {})",
                a.valid_frac
            ));
        }
        if a.manual_offset
            .is_some_and(|o| o.iter().any(|v| !v.is_finite()))
        {
            return bad("align.manual_offset must be finite".into());
        }
        let f = &self.footprints;
        if !(0.0..=1.0).contains(&f.conf_threshold) {
            return bad(format!(
                "footprints.conf_threshold must be in [0, 1] (got {})",
                f.conf_threshold
            ));
        }
        if !(f.dp_epsilon >= 0.0) || !(f.min_area >= 0.0) {
            return bad("footprints.dp_epsilon and min_area must be non-negative".into());
        }
        if let Some(g) = self.gsd {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gsd must be positive (got {g})"));
            }
        }
        if self.paths.out_dir.as_os_str().is_empty() || self.paths.footprints.is_empty() {
            return bad("paths.out_dir and paths.footprints must be nonempty".into());
        }
        self.crs_override()?;
        self.regions
            .to_region_config(self.regions.cell_size.unwrap_or(1.0))
            .validate()
            .map_err(|e| CliError::Config(format!("regions: {e}")))?;
        Ok(())
    }
}
