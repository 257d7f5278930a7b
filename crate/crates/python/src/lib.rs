//! Python bindings: rasters, footprints, evaluation regions, contrast
//! records and the contrast model fit.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

use ctf3d::alignment::GlobalAlignment;
use ctf3d::crs::CrsId;
use ctf3d::footprints::FootprintSet;
use ctf3d::metrics::{CtfModelFit, CtfRecord, DEFAULT_MIN_SAMPLES};
use ctf3d::pointcloud::LoadOptions;
use ctf3d::raster::{GridSpec, TribarSpec, DEFAULT_NODATA};
use ctf3d::regions::{EvaluationRegion, RegionConfig};

create_exception!(ctf3d, Ctf3dError, PyException);

fn py_err(e: ctf3d::Error) -> PyErr {
    use ctf3d::Error as E;
    match e {
        E::Io(_) => PyOSError::new_err(e.to_string()),
        E::InvalidInput(_) | E::Geometry(_) | E::UnknownCrs(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => Ctf3dError::new_err(e.to_string()),
    }
}

fn parse_crs(crs: Option<&str>) -> PyResult<Option<CrsId>> {
    crs.map(CrsId::parse).transpose().map_err(py_err)
}

/// Single-band north-up elevation grid.
#[pyclass(name = "Raster", module = "ctf3d", skip_from_py_object)]
#[derive(Clone)]
pub struct PyRaster {
    inner: ctf3d::Raster,
}

#[pymethods]
impl PyRaster {
    /// Builds a raster from row-major rows; `nodata` cells are invalid.
    #[new]
    #[pyo3(signature = (rows, origin_x, origin_y, gsd, crs=None, nodata=DEFAULT_NODATA))]
    fn new(
        rows: Vec<Vec<f64>>,
        origin_x: f64,
        origin_y: f64,
        gsd: f64,
        crs: Option<&str>,
        nodata: f64,
    ) -> PyResult<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(PyValueError::new_err("rows must all have the same length"));
        }
        let grid = GridSpec {
            width,
            height,
            origin_x,
            origin_y,
            gsd_x: gsd,
            gsd_y: -gsd,
        };
        let inner =
            ctf3d::Raster::new(grid, parse_crs(crs)?, nodata, rows.concat()).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ctf3d::raster::read_geotiff(path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        ctf3d::raster::write_geotiff(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn gsd(&self) -> f64 {
        self.inner.gsd()
    }

    #[getter]
    fn crs(&self) -> Option<String> {
        self.inner.crs().map(|c| c.as_str().to_string())
    }

    #[getter]
    fn nodata(&self) -> f64 {
        self.inner.nodata()
    }

    /// `(min_x, min_y, max_x, max_y)` in map units.
    #[getter]
    fn bounds(&self) -> (f64, f64, f64, f64) {
        self.inner.grid().bounds()
    }

    /// Values as row-major rows, nodata included.
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner
            .values()
            .chunks(self.inner.width())
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// Value at map coordinates, or None off-grid or on nodata.
    fn sample(&self, x: f64, y: f64) -> Option<f64> {
        self.inner.sample(x, y)
    }

    fn valid_count(&self) -> usize {
        self.inner.valid_count()
    }

    /// Copy shifted by (dx, dy) in map units and dz in elevation.
    #[pyo3(signature = (dx=0.0, dy=0.0, dz=0.0))]
    fn shifted(&self, dx: f64, dy: f64, dz: f64) -> Self {
        let mut inner = self.inner.translated(dx, dy);
        inner.offset_values(dz);
        Self { inner }
    }

    /// Bilinear resample onto another raster's grid.
    fn resample_like(&self, other: &PyRaster) -> PyResult<Self> {
        Ok(Self {
            inner: ctf3d::raster::resample_to_grid(&self.inner, other.inner.grid())
                .map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Raster({}x{}, gsd={}, crs={:?})",
            self.inner.width(),
            self.inner.height(),
            self.inner.gsd(),
            self.crs()
        )
    }
}

/// Building footprint polygons with a CRS.
#[pyclass(name = "Footprints", module = "ctf3d", skip_from_py_object)]
#[derive(Clone)]
pub struct PyFootprints {
    inner: FootprintSet,
}

#[pymethods]
impl PyFootprints {
    /// Reads GeoJSON, reprojecting to `crs` when given.
    #[staticmethod]
    #[pyo3(signature = (path, crs=None))]
    fn load(path: PathBuf, crs: Option<&str>) -> PyResult<Self> {
        let crs = parse_crs(crs)?;
        Ok(Self {
            inner: ctf3d::footprints::load_footprints_geojson(path, crs.as_ref())
                .map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        ctf3d::footprints::save_footprints_geojson(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn ids(&self) -> Vec<u64> {
        self.inner.features().iter().map(|f| f.id).collect()
    }

    /// Exterior ring of footprint `id`.
    fn exterior(&self, id: u64) -> PyResult<Vec<(f64, f64)>> {
        let f = self
            .inner
            .get(id)
            .ok_or_else(|| PyValueError::new_err(format!("no footprint with id {id}")))?;
        Ok(f.polygon.exterior().iter().map(|p| (p.x, p.y)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Footprints(n={})", self.inner.len())
    }
}

/// Ground rectangle between two parallel building edges plus one
/// rectangle inside each building.
#[pyclass(name = "Region", module = "ctf3d", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyRegion {
    inner: EvaluationRegion,
}

#[pymethods]
impl PyRegion {
    #[getter]
    fn id_a(&self) -> u64 {
        self.inner.pair.id_a
    }

    #[getter]
    fn id_b(&self) -> u64 {
        self.inner.pair.id_b
    }

    /// Edge separation, meters.
    #[getter]
    fn d(&self) -> f64 {
        self.inner.d
    }

    #[getter]
    fn overlap(&self) -> f64 {
        self.inner.overlap
    }

    /// Corners of the center rectangle, counter-clockwise.
    fn center_corners(&self) -> Vec<(f64, f64)> {
        self.inner
            .center
            .corners()
            .iter()
            .map(|p| (p.x, p.y))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Region({}-{}, d={:.3})",
            self.inner.pair.id_a, self.inner.pair.id_b, self.inner.d
        )
    }
}

/// Contrast of one region for the test product and for the reference.
#[pyclass(name = "CtfRecord", module = "ctf3d", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyCtfRecord {
    inner: CtfRecord,
}

#[pymethods]
impl PyCtfRecord {
    #[getter]
    fn region_id(&self) -> usize {
        self.inner.region_id
    }

    #[getter]
    fn d(&self) -> f64 {
        self.inner.region.d
    }

    #[getter]
    fn c_test(&self) -> f64 {
        self.inner.c_test
    }

    #[getter]
    fn c_ref(&self) -> f64 {
        self.inner.c_ref
    }

    #[getter]
    fn valid(&self) -> bool {
        self.inner.valid
    }

    #[getter]
    fn reason(&self) -> &'static str {
        self.inner.reason.as_str()
    }

    #[getter]
    fn region(&self) -> PyRegion {
        PyRegion {
            inner: self.inner.region,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "CtfRecord(id={}, d={:.3}, c_test={:.4}, c_ref={:.4}, reason={})",
            self.inner.region_id,
            self.inner.region.d,
            self.inner.c_test,
            self.inner.c_ref,
            self.inner.reason
        )
    }
}

/// Fitted `C(d) = A exp(-(pi sigma / d)^2)`.
#[pyclass(name = "CtfFit", module = "ctf3d", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyCtfFit {
    inner: CtfModelFit,
}

#[pymethods]
impl PyCtfFit {
    #[getter]
    fn amp_a(&self) -> f64 {
        self.inner.amp_a
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn residual_rms(&self) -> f64 {
        self.inner.residual_rms
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.inner.n_points
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn poorly_constrained(&self) -> bool {
        self.inner.poorly_constrained
    }

    fn __call__(&self, d: f64) -> f64 {
        self.inner.eval(d)
    }

    /// Separation where the model equals `t`.
    #[pyo3(signature = (t=ctf3d::metrics::DEFAULT_CTF_THRESHOLD))]
    fn threshold_distance(&self, t: f64) -> PyResult<f64> {
        ctf3d::metrics::threshold_distance(&self.inner, t).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "CtfFit(amp_a={:.4}, sigma={:.4}, n={})",
            self.inner.amp_a, self.inner.sigma, self.inner.n_points
        )
    }
}

/// Rigid horizontal and vertical correction of a test raster.
#[pyclass(name = "Alignment", module = "ctf3d", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyAlignment {
    inner: GlobalAlignment,
}

#[pymethods]
impl PyAlignment {
    #[new]
    #[pyo3(signature = (dx=0.0, dy=0.0, dz=0.0))]
    fn new(dx: f64, dy: f64, dz: f64) -> Self {
        Self {
            inner: GlobalAlignment::manual(dx, dy, dz),
        }
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.inner.dx
    }

    #[getter]
    fn dy(&self) -> f64 {
        self.inner.dy
    }

    #[getter]
    fn dz(&self) -> f64 {
        self.inner.dz
    }

    /// Number of subwindows that contributed.
    #[getter]
    fn accepted(&self) -> usize {
        self.inner.accepted()
    }

    fn __repr__(&self) -> String {
        format!(
            "Alignment(dx={:.4}, dy={:.4}, dz={:.4})",
            self.inner.dx, self.inner.dy, self.inner.dz
        )
    }
}

/// Max-Z DSM of a LAS/LAZ file; `gsd` defaults to the point spacing.
#[pyfunction]
#[pyo3(signature = (path, gsd=None, crs=None, labels=None))]
fn rasterize_las(
    path: PathBuf,
    gsd: Option<f64>,
    crs: Option<&str>,
    labels: Option<PathBuf>,
) -> PyResult<PyRaster> {
    let opts = LoadOptions {
        crs_override: parse_crs(crs)?,
        sidecar: labels,
        ..Default::default()
    };
    let cloud = ctf3d::pointcloud::load_point_cloud(path, &opts).map_err(py_err)?;
    let gsd = match gsd {
        Some(g) => g,
        None => ctf3d::raster::estimate_anps(&cloud).map_err(py_err)?,
    };
    Ok(PyRaster {
        inner: ctf3d::raster::rasterize_max_dsm(&cloud, gsd).map_err(py_err)?,
    })
}

/// Synthetic tribar DSM and its bar footprints.
#[pyfunction]
#[pyo3(signature = (gsd=0.25))]
fn generate_tribar(gsd: f64) -> PyResult<(PyRaster, PyFootprints)> {
    let spec = TribarSpec {
        gsd,
        ..Default::default()
    };
    let (r, f) = ctf3d::raster::generate_tribar(&spec).map_err(py_err)?;
    Ok((PyRaster { inner: r }, PyFootprints { inner: f }))
}

/// Phase-correlation alignment of `test` onto `reference` (same grid).
#[pyfunction]
#[pyo3(signature = (test, reference, window_px=512, valid_frac=0.95))]
fn global_align(
    test: &PyRaster,
    reference: &PyRaster,
    window_px: usize,
    valid_frac: f64,
) -> PyResult<PyAlignment> {
    let inner =
        ctf3d::alignment::global_align(&test.inner, &reference.inner, window_px, valid_frac)
            .map_err(py_err)?;
    Ok(PyAlignment { inner })
}

/// `test` corrected by `alignment` and resampled onto `reference`'s grid.
#[pyfunction]
fn apply_alignment(
    test: &PyRaster,
    alignment: &PyAlignment,
    reference: &PyRaster,
) -> PyResult<PyRaster> {
    let inner =
        ctf3d::alignment::apply_alignment(&test.inner, &alignment.inner, reference.inner.grid())
            .map_err(py_err)?;
    Ok(PyRaster { inner })
}

/// Evaluation regions for every admissible building pair.
#[pyfunction]
#[pyo3(signature = (footprints, cell_size=0.5, max_centroid_dist=150.0, max_orth_dist=30.0, angle_tol_deg=10.0, min_overlap=2.0))]
fn build_regions(
    footprints: &PyFootprints,
    cell_size: f64,
    max_centroid_dist: f64,
    max_orth_dist: f64,
    angle_tol_deg: f64,
    min_overlap: f64,
) -> PyResult<Vec<PyRegion>> {
    let cfg = RegionConfig {
        cell_size,
        max_centroid_dist,
        max_orth_dist,
        angle_tol_deg,
        min_overlap,
        ..Default::default()
    };
    let regions = ctf3d::regions::build_all_regions(&footprints.inner, &cfg).map_err(py_err)?;
    Ok(regions
        .into_iter()
        .map(|inner| PyRegion { inner })
        .collect())
}

/// Contrast records for `regions`; rasters must share a grid.
#[pyfunction]
#[pyo3(signature = (test, reference, regions, min_samples=DEFAULT_MIN_SAMPLES))]
fn compute_ctf(
    test: &PyRaster,
    reference: &PyRaster,
    regions: Vec<PyRegion>,
    min_samples: usize,
) -> PyResult<Vec<PyCtfRecord>> {
    let regions: Vec<EvaluationRegion> = regions.into_iter().map(|r| r.inner).collect();
    let recs =
        ctf3d::metrics::compute_all_ctf(&test.inner, &reference.inner, &regions, min_samples)
            .map_err(py_err)?;
    Ok(recs
        .into_iter()
        .map(|inner| PyCtfRecord { inner })
        .collect())
}

/// Marks records with a low reference contrast or a zero test contrast invalid.
#[pyfunction]
#[pyo3(signature = (records, ref_ctf_min=ctf3d::metrics::DEFAULT_REF_CTF_MIN))]
fn filter_records(records: Vec<PyCtfRecord>, ref_ctf_min: f64) -> Vec<PyCtfRecord> {
    let recs: Vec<CtfRecord> = records.into_iter().map(|r| r.inner).collect();
    ctf3d::metrics::filter_records(&recs, ref_ctf_min)
        .into_iter()
        .map(|inner| PyCtfRecord { inner })
        .collect()
}

/// Fits the contrast model to the valid records.
#[pyfunction]
fn fit_records(records: Vec<PyCtfRecord>) -> PyResult<PyCtfFit> {
    let recs: Vec<CtfRecord> = records.into_iter().map(|r| r.inner).collect();
    Ok(PyCtfFit {
        inner: ctf3d::metrics::fit_ctf_model(&recs, None).map_err(py_err)?,
    })
}

/// Fits the contrast model to raw (separation, contrast) points.
#[pyfunction]
fn fit_points(d: Vec<f64>, c: Vec<f64>) -> PyResult<PyCtfFit> {
    Ok(PyCtfFit {
        inner: ctf3d::metrics::fit_ctf_points(&d, &c, None).map_err(py_err)?,
    })
}

#[pyfunction]
fn ctf_model(amp_a: f64, sigma: f64, d: f64) -> f64 {
    ctf3d::metrics::ctf_model(amp_a, sigma, d)
}

#[pymodule]
#[pyo3(name = "ctf3d")]
fn ctf3d_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("Ctf3dError", m.py().get_type::<Ctf3dError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyRaster>()?;
    m.add_class::<PyFootprints>()?;
    m.add_class::<PyRegion>()?;
    m.add_class::<PyCtfRecord>()?;
    m.add_class::<PyCtfFit>()?;
    m.add_class::<PyAlignment>()?;
    m.add_function(wrap_pyfunction!(rasterize_las, m)?)?;
    m.add_function(wrap_pyfunction!(generate_tribar, m)?)?;
    m.add_function(wrap_pyfunction!(global_align, m)?)?;
    m.add_function(wrap_pyfunction!(apply_alignment, m)?)?;
    m.add_function(wrap_pyfunction!(build_regions, m)?)?;
    m.add_function(wrap_pyfunction!(compute_ctf, m)?)?;
    m.add_function(wrap_pyfunction!(filter_records, m)?)?;
    m.add_function(wrap_pyfunction!(fit_records, m)?)?;
    m.add_function(wrap_pyfunction!(fit_points, m)?)?;
    m.add_function(wrap_pyfunction!(ctf_model, m)?)?;
    Ok(())
}
