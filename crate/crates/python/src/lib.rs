//! Python bindings: masks, annotations, step budgets, plans and the
//! plan → augment → merge → validate pipeline.

use std::path::PathBuf;

use bgforge_core::annotation::{self, AnnotatedDataset};
use bgforge_core::inpaint::{self, LatentTensor};
use bgforge_core::mask::{self, BinaryMask};
use bgforge_core::pipeline::{self, AugmentOptions, ConfigOverrides, MergeOptions, PlanOptions, RunConfig};
use bgforge_core::policy::{self, PolicyConfig, SamplingMode};
use bgforge_core::remote::RemoteOptions;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: pipeline::PipelineError) -> PyErr {
    match e {
        pipeline::PipelineError::Io { .. } | pipeline::PipelineError::MissingImageFile(_) => PyOSError::new_err(e.to_string()),
        other => value_err(other),
    }
}

/// Binary mask; `1` marks the selected pixel.
#[pyclass(name = "Mask", module = "bgforge", frozen, from_py_object)]
#[derive(Clone)]
struct PyMask(BinaryMask);

#[pymethods]
impl PyMask {
    /// Builds a mask from rows of 0/1 values.
    #[new]
    fn new(rows: Vec<Vec<u8>>) -> PyResult<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(PyValueError::new_err("rows have different lengths"));
        }
        let flat: Vec<u8> = rows.concat();
        BinaryMask::from_row_major(height, width, &flat).map(PyMask).map_err(value_err)
    }

    #[staticmethod]
    fn zeros(height: usize, width: usize) -> Self {
        PyMask(BinaryMask::zeros(height, width))
    }

    #[staticmethod]
    fn ones(height: usize, width: usize) -> Self {
        PyMask(BinaryMask::ones(height, width))
    }

    /// Decodes uncompressed column-major COCO RLE counts.
    #[staticmethod]
    fn from_rle(counts: Vec<u32>, height: usize, width: usize) -> PyResult<Self> {
        annotation::rle_decode(&counts, height, width).map(PyMask).map_err(value_err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.dims()
    }

    fn rows(&self) -> Vec<Vec<u8>> {
        let (h, w) = self.0.dims();
        (0..h).map(|r| (0..w).map(|c| self.0.get(r, c) as u8).collect()).collect()
    }

    fn count(&self) -> u64 {
        self.0.count_ones()
    }

    fn area_ratio(&self) -> f64 {
        mask::area_ratio(&self.0)
    }

    fn complement(&self) -> Self {
        PyMask(mask::background_mask(&self.0))
    }

    #[pyo3(signature = (kernel = 7))]
    fn erode(&self, kernel: usize) -> PyResult<Self> {
        mask::erode(&self.0, kernel).map(PyMask).map_err(value_err)
    }

    #[pyo3(signature = (factor, threshold = 0.5))]
    fn resize_to_latent(&self, factor: usize, threshold: f64) -> PyResult<Self> {
        mask::resize_to_latent(&self.0, factor, threshold).map(PyMask).map_err(value_err)
    }

    fn rle(&self) -> Vec<u32> {
        annotation::rle_encode(&self.0)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        let (h, w) = self.0.dims();
        format!("Mask({h}x{w}, {} set)", self.0.count_ones())
    }
}

/// Union of equally shaped masks.
#[pyfunction]
fn union(masks: Vec<PyMask>) -> PyResult<PyMask> {
    let inner: Vec<BinaryMask> = masks.into_iter().map(|m| m.0).collect();
    mask::foreground_union(&inner).map(PyMask).map_err(value_err)
}

/// COCO-style dataset with unknown fields preserved.
#[pyclass(name = "Dataset", module = "bgforge")]
struct PyDataset(AnnotatedDataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        annotation::parse_dataset(text.as_bytes()).map(PyDataset).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
        annotation::parse_dataset(&bytes).map(PyDataset).map_err(value_err)
    }

    fn to_json(&self) -> String {
        String::from_utf8(self.0.to_json_bytes()).expect("serde_json emits UTF-8")
    }

    fn image_ids(&self) -> Vec<u64> {
        self.0.images.iter().map(|im| im.id).collect()
    }

    #[getter]
    fn num_images(&self) -> usize {
        self.0.images.len()
    }

    #[getter]
    fn num_annotations(&self) -> usize {
        self.0.annotations.len()
    }

    fn foreground_mask(&self, image_id: u64) -> PyResult<PyMask> {
        self.0.foreground_mask(image_id).map(PyMask).map_err(value_err)
    }

    fn background_mask(&self, image_id: u64) -> PyResult<PyMask> {
        self.0.background_mask(image_id).map(PyMask).map_err(value_err)
    }

    /// `(image_id, background share)` for every image, in file order.
    fn background_ratios(&self) -> PyResult<Vec<(u64, f64)>> {
        pipeline::background_ratios(&self.0).map_err(pipeline_err)
    }

    fn subset(&self, fraction: f64, seed: u64) -> PyResult<Self> {
        annotation::sample_subset(&self.0, fraction, seed).map(PyDataset).map_err(value_err)
    }
}

/// Step budget `round(T * (1 - D * ratio))`, clamped to `[1, T]`.
#[pyfunction]
#[pyo3(signature = (ratio, max_steps = 50, freedom = 0.5))]
fn adaptive_steps(ratio: f64, max_steps: u32, freedom: f64) -> PyResult<u32> {
    policy::adaptive_steps(max_steps, freedom, ratio).map_err(value_err)
}

/// Classifier-free guidance over flat lists: `w * cond + (1 - w) * uncond`.
#[pyfunction]
fn guided_noise(cond: Vec<f64>, uncond: Vec<f64>, w: f64) -> PyResult<Vec<f64>> {
    let (a, b) = (cond.len(), uncond.len());
    let c = LatentTensor::from_vec(1, 1, a, cond);
    let u = LatentTensor::from_vec(1, 1, b, uncond);
    inpaint::guided_noise(&c, &u, w).map(|t| t.values().to_vec()).map_err(value_err)
}

#[pyfunction]
fn entry_seed(global_seed: u64, image_id: u64, copy_index: u32) -> u64 {
    policy::entry_seed(global_seed, image_id, copy_index)
}

/// Builds a sampling plan from `(image_id, ratio)` pairs; entries come back
/// as dicts.
#[pyfunction]
#[pyo3(signature = (ratios, alpha = 1, sampling = "uniform", max_steps = 50, freedom = 0.5, seed = 0))]
fn build_plan<'py>(
    py: Python<'py>,
    ratios: Vec<(u64, f64)>,
    alpha: u32,
    sampling: &str,
    max_steps: u32,
    freedom: f64,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let sampling_mode = match sampling {
        "uniform" => SamplingMode::Uniform,
        "nonuniform" => SamplingMode::Nonuniform,
        other => return Err(PyValueError::new_err(format!("unknown sampling mode {other:?}"))),
    };
    let cfg = PolicyConfig { alpha, sampling_mode, max_steps, freedom, ..PolicyConfig::default() };
    let plan = policy::build_sampling_plan(&ratios, &cfg, seed).map_err(value_err)?;
    plan.entries
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("source_image_id", e.source_image_id)?;
            d.set_item("copy_index", e.copy_index)?;
            d.set_item("seed", e.seed)?;
            d.set_item("prompt", &e.prompt)?;
            d.set_item("step_budget", e.step_budget)?;
            d.set_item("background_ratio", e.background_ratio)?;
            Ok(d)
        })
        .collect()
}

/// Keyword settings (same names as the TOML config) on top of the defaults.
fn run_config(settings: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut map = serde_json::Map::new();
    if let Some(settings) = settings {
        for (k, v) in settings.iter() {
            let key: String = k.extract()?;
            let value = if v.is_instance_of::<PyBool>() {
                serde_json::Value::Bool(v.extract()?)
            } else if v.is_instance_of::<PyInt>() {
                serde_json::Value::from(v.extract::<u64>()?)
            } else if v.is_instance_of::<PyFloat>() {
                serde_json::Value::from(v.extract::<f64>()?)
            } else if v.is_instance_of::<PyString>() {
                serde_json::Value::String(v.extract()?)
            } else {
                return Err(PyValueError::new_err(format!("setting {key} has an unsupported type")));
            };
            map.insert(key, value);
        }
    }
    let flags: ConfigOverrides = serde_json::from_value(map.into()).map_err(value_err)?;
    RunConfig::resolve(None, &flags).map_err(pipeline_err)
}

/// Writes `plan.jsonl` and friends into `out_dir`; returns the plan summary
/// as a dict.
#[pyfunction]
#[pyo3(signature = (annotations, images_dir, out_dir, **settings))]
fn plan<'py>(
    py: Python<'py>,
    annotations: PathBuf,
    images_dir: PathBuf,
    out_dir: PathBuf,
    settings: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let config = run_config(settings)?;
    let out = py
        .detach(|| pipeline::run_plan(&PlanOptions { annotations, images_dir, out_dir, config }))
        .map_err(pipeline_err)?;
    let s = &out.summary;
    let d = PyDict::new(py);
    d.set_item("images", s.images)?;
    d.set_item("annotations", s.annotations)?;
    d.set_item("entries", s.entries)?;
    d.set_item("mean_objects_per_image", s.mean_objects_per_image)?;
    d.set_item("mean_background_ratio", s.mean_background_ratio)?;
    d.set_item("min_step_budget", s.min_step_budget)?;
    d.set_item("max_step_budget", s.max_step_budget)?;
    d.set_item("plan_path", out.plan_path)?;
    Ok(d)
}

/// Runs the plan in `out_dir`; returns `(done, noop, failed, remaining)`.
#[pyfunction]
#[pyo3(signature = (annotations, images_dir, out_dir, resume = false, max_entries = None, **settings))]
fn augment(
    py: Python<'_>,
    annotations: PathBuf,
    images_dir: PathBuf,
    out_dir: PathBuf,
    resume: bool,
    max_entries: Option<usize>,
    settings: Option<&Bound<'_, PyDict>>,
) -> PyResult<(usize, usize, usize, usize)> {
    let config = run_config(settings)?;
    let remote = RemoteOptions { max_in_flight: config.workers, ..RemoteOptions::default() };
    let opts = AugmentOptions { annotations, images_dir, out_dir, plan: None, config, resume, max_entries, remote };
    let r = py.detach(|| pipeline::run_augment(&opts)).map_err(pipeline_err)?;
    Ok((r.done, r.noop, r.failed, r.remaining))
}

/// Writes the merged dataset; returns `(total_images, total_annotations)`.
#[pyfunction]
fn merge(py: Python<'_>, annotations: PathBuf, manifest: PathBuf, images_dir: PathBuf, output: PathBuf) -> PyResult<(usize, usize)> {
    let opts = MergeOptions { annotations, manifest, images_dir, output };
    let (_, r) = py.detach(|| pipeline::run_merge(&opts)).map_err(pipeline_err)?;
    Ok((r.total_images, r.total_annotations))
}

/// Returns the findings as `(severity, kind, message)`; empty means clean.
#[pyfunction]
#[pyo3(signature = (annotations, images_dir, manifest = None))]
fn validate(py: Python<'_>, annotations: PathBuf, images_dir: PathBuf, manifest: Option<PathBuf>) -> Vec<(String, String, String)> {
    let report = py.detach(|| pipeline::run_validate(&annotations, &images_dir, manifest.as_deref()));
    report
        .findings
        .iter()
        .map(|f| {
            let tag = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
            (
                tag(serde_json::to_value(f.severity).unwrap_or_default()),
                tag(serde_json::to_value(f.kind).unwrap_or_default()),
                f.message.clone(),
            )
        })
        .collect()
}

#[pymodule]
fn bgforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMask>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(union, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_steps, m)?)?;
    m.add_function(wrap_pyfunction!(guided_noise, m)?)?;
    m.add_function(wrap_pyfunction!(entry_seed, m)?)?;
    m.add_function(wrap_pyfunction!(build_plan, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(merge, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add("DEFAULT_PROMPT", policy::DEFAULT_PROMPT)?;
    Ok(())
}
