use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use styleco::apps::{self, SimplifyConfig};
use styleco::config::{RunConfig, SimplifyMode};
use styleco::lineproj::{extract_feature_lines, make_cameras, ViewRaster};
use styleco::mesh::{load_mesh, TriMesh, Vec3};
use styleco::pipeline::{Mode, StyleRegion};
use styleco::{synth, workflow, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Run configuration; every tunable is readable as a dict.
#[pyclass(name = "Config", module = "pystyleco", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, optionally overridden by a TOML document.
    #[new]
    #[pyo3(signature = (toml=None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => RunConfig::from_toml(t).map_err(err)?,
            None => RunConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig { inner: RunConfig::load(&path).map_err(err)? })
    }

    /// Copy with the given fields replaced.
    #[pyo3(signature = (**kwargs))]
    fn replace(&self, py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut base = serde_json::to_value(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        if let Some(kw) = kwargs {
            let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
            let patch: serde_json::Value = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
            for (k, v) in patch.as_object().into_iter().flatten() {
                base[k] = v.clone();
            }
        }
        let inner = RunConfig::from_json(&base.to_string()).map_err(err)?;
        Ok(PyConfig { inner })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        json_to_py(py, &text)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn __repr__(&self) -> String {
        format!("Config(views={}, eta={}, seed={})", self.inner.views, self.inner.eta, self.inner.seed)
    }
}

/// Triangle mesh.
#[pyclass(name = "Mesh", module = "pystyleco", skip_from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: TriMesh,
}

#[pymethods]
impl PyMesh {
    #[new]
    #[pyo3(signature = (vertices, faces, shape_id="mesh"))]
    fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>, shape_id: &str) -> PyResult<Self> {
        let v = vertices.into_iter().map(Vec3::from).collect();
        Ok(PyMesh { inner: TriMesh::new(shape_id, v, faces).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, shape_id=None))]
    fn load(path: PathBuf, shape_id: Option<&str>) -> PyResult<Self> {
        let id = shape_id.map(str::to_string).unwrap_or_else(|| path.file_stem().map_or("mesh".into(), |s| s.to_string_lossy().into_owned()));
        Ok(PyMesh { inner: load_mesh(&path, &id).map_err(err)? })
    }

    #[getter]
    fn shape_id(&self) -> String {
        self.inner.shape_id.clone()
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices().iter().map(|v| [v.x, v.y, v.z]).collect()
    }

    #[getter]
    fn faces(&self) -> Vec<[usize; 3]> {
        self.inner.faces().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.faces().len()
    }

    fn total_area(&self) -> f64 {
        self.inner.total_area()
    }

    /// Centered, unit bounding-box diagonal.
    fn normalized(&self) -> Self {
        PyMesh { inner: self.inner.normalize_upright() }
    }

    fn write_obj(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_obj(&path).map_err(err)
    }

    /// Quadric simplification protecting `style_faces`. Returns the mesh, a
    /// per-face style flag and face statistics.
    #[pyo3(signature = (style_faces, reduction=0.7, style_penalty=100.0, hard_lock=false, best_effort=false))]
    fn simplify<'py>(
        &self,
        py: Python<'py>,
        style_faces: Vec<usize>,
        reduction: f64,
        style_penalty: f64,
        hard_lock: bool,
        best_effort: bool,
    ) -> PyResult<(PyMesh, Vec<bool>, Bound<'py, PyDict>)> {
        let region = StyleRegion {
            shape_id: self.inner.shape_id.clone(),
            faces: style_faces.into_iter().map(|f| (f, 1)).collect(),
            seed_ids: Default::default(),
        };
        let mode = if hard_lock { SimplifyMode::HardLock } else { SimplifyMode::Penalty };
        let cfg = SimplifyConfig { reduction, style_penalty, mode, best_effort };
        let s = py.detach(|| apps::simplify(&self.inner, &region, &cfg)).map_err(err)?;
        let stats = PyDict::new(py);
        stats.set_item("faces_before", s.stats.faces_before)?;
        stats.set_item("faces_after", s.stats.faces_after)?;
        stats.set_item("style_faces_before", s.stats.style_faces_before)?;
        stats.set_item("style_faces_after", s.stats.style_faces_after)?;
        Ok((PyMesh { inner: s.mesh }, s.style, stats))
    }

    /// Feature-line drawing from one of the configured views, as rows of
    /// ink intensities.
    #[pyo3(signature = (view, config=None))]
    fn render(&self, view: usize, config: Option<&PyConfig>) -> PyResult<Vec<Vec<f32>>> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
        let cams = make_cameras(cfg.views);
        let cam = cams.get(view).ok_or_else(|| PyValueError::new_err(format!("view {view} out of range")))?;
        let mesh = self.inner.normalize_upright();
        let lines = extract_feature_lines(&mesh, cfg.sharp_angle_deg.to_radians());
        let img = ViewRaster::new(&mesh, cam, cfg.image_size).render(&mesh, &lines);
        Ok(img.pixels.chunks(img.size).map(|r| r.to_vec()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Mesh({:?}, vertices={}, faces={})", self.inner.shape_id, self.inner.vertices().len(), self.inner.faces().len())
    }
}

/// Writes the planted-style benchmark and returns shape id to style.
#[pyfunction]
#[pyo3(signature = (out_dir, shapes=40, seed=0, resolution=1))]
fn synth_benchmark(out_dir: PathBuf, shapes: usize, seed: u64, resolution: usize) -> PyResult<BTreeMap<String, String>> {
    let bench = synth::benchmark(&synth::BenchmarkSpec { shapes, seed, resolution }).map_err(err)?;
    synth::write_benchmark(&bench, &out_dir).map_err(err)?;
    Ok(synth::truth_map(&bench))
}

/// Labels for a stratified fraction of the shapes.
#[pyfunction]
#[pyo3(signature = (truth, fraction=0.3, seed=0))]
fn planted_labels(truth: BTreeMap<String, String>, fraction: f64, seed: u64) -> BTreeMap<String, String> {
    synth::planted_labels(&truth, fraction, seed)
}

#[pyfunction]
#[pyo3(signature = (truth, count=100, seed=0))]
fn planted_triplets(truth: BTreeMap<String, String>, count: usize, seed: u64) -> PyResult<Vec<[String; 3]>> {
    synth::planted_triplets(&truth, count, seed).map_err(err)
}

/// Runs the full analysis and returns the run summary, with the per-shape
/// assignment, as a dict.
#[pyfunction]
#[pyo3(signature = (config, mode="unsupervised"))]
fn analyze<'py>(py: Python<'py>, config: &PyConfig, mode: &str) -> PyResult<Bound<'py, PyAny>> {
    let mode: Mode = mode.parse().map_err(err)?;
    let cfg = config.inner.clone();
    let a = py.detach(|| workflow::analyze(&cfg, mode)).map_err(err)?;
    let r = &a.result;
    let mut v = serde_json::to_value(r.summary()).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let assignment: BTreeMap<&String, usize> = r.shape_ids.iter().zip(r.assignment.iter().copied()).collect();
    v["assignment"] = serde_json::json!(assignment);
    json_to_py(py, &v.to_string())
}

/// Weighted precision of a clustering against reference labels.
#[pyfunction]
fn purity(assignment: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    styleco::cluster::purity(&assignment, &truth).map_err(err)
}

#[pymodule]
fn pystyleco(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMesh>()?;
    m.add_function(wrap_pyfunction!(synth_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(planted_labels, m)?)?;
    m.add_function(wrap_pyfunction!(planted_triplets, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(purity, m)?)?;
    Ok(())
}
