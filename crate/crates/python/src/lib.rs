//! Python bindings for the grasp detector.

use std::sync::Arc;

use graspswarm::geometry::{self, GraspRect};
use graspswarm::imaging::{self, ScaleConfig};
use graspswarm::nn::{self, GraspNet, WeightsBundle};
use graspswarm::pso::{self, PsoError, SwarmConfig, Topology, UpdateRule};
use graspswarm::scorer::{self, ScoreScales};
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

create_exception!(graspswarm, InitFailed, PyRuntimeError, "Swarm initialization never reached the score gate.");

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pso_err(e: PsoError) -> PyErr {
    match e {
        PsoError::InitFailed { .. } => InitFailed::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn nn_err(e: nn::NnError) -> PyErr {
    match e {
        nn::NnError::Io(io) => PyIOError::new_err(io.to_string()),
        other => value_err(other),
    }
}

fn imaging_err(e: imaging::ImagingError) -> PyErr {
    match e {
        imaging::ImagingError::Io(io) => PyIOError::new_err(io.to_string()),
        other => value_err(other),
    }
}

/// Oriented grasp rectangle: center `(x, y)`, orientation `theta` in degrees,
/// gripper opening `w` along `theta` and plate size `h` across it.
#[pyclass(name = "GraspRect", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyGraspRect(GraspRect);

#[pymethods]
impl PyGraspRect {
    #[new]
    fn new(x: f64, y: f64, theta: f64, h: f64, w: f64) -> PyResult<Self> {
        GraspRect::new(x, y, theta, h, w).map(Self).map_err(value_err)
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h
    }

    #[getter]
    fn w(&self) -> f64 {
        self.0.w
    }

    fn to_tuple(&self) -> (f64, f64, f64, f64, f64) {
        let [x, y, t, h, w] = self.0.to_vector();
        (x, y, t, h, w)
    }

    fn corners(&self) -> Vec<(f64, f64)> {
        self.0.corners().iter().map(|p| (p[0], p[1])).collect()
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    fn iou(&self, other: &PyGraspRect) -> f64 {
        geometry::rect_iou(&self.0, &other.0)
    }

    /// Rectangle metric against a label.
    #[pyo3(signature = (label, max_angle_deg=30.0, min_overlap=0.2))]
    fn matches(&self, label: &PyGraspRect, max_angle_deg: f64, min_overlap: f64) -> bool {
        geometry::MatchCriteria {
            max_angle_deg,
            min_overlap,
            ..Default::default()
        }
        .matches(&self.0, &label.0)
    }

    fn __repr__(&self) -> String {
        let r = self.0;
        format!("GraspRect(x={}, y={}, theta={}, h={}, w={})", r.x, r.y, r.theta, r.h, r.w)
    }
}

#[pyfunction]
fn rect_iou(a: &PyGraspRect, b: &PyGraspRect) -> f64 {
    geometry::rect_iou(&a.0, &b.0)
}

#[pyfunction]
fn rect_match(pred: &PyGraspRect, label: &PyGraspRect) -> bool {
    geometry::rect_match(&pred.0, &label.0)
}

#[pyfunction]
fn angle_diff(a: f64, b: f64) -> f64 {
    geometry::angle_diff(a, b)
}

/// Image with values in `[0, 1]`, row-major with interleaved channels.
#[pyclass(name = "Raster", frozen)]
struct PyRaster(imaging::Raster);

#[pymethods]
impl PyRaster {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        imaging::Raster::new(width, height, channels, data)
            .map(Self)
            .map_err(imaging_err)
    }

    /// Uniform image.
    #[staticmethod]
    #[pyo3(signature = (width, height, channels=3, value=0.5))]
    fn filled(width: usize, height: usize, channels: usize, value: f64) -> PyResult<Self> {
        if channels != 1 && channels != 3 {
            return Err(value_err("channels must be 1 or 3"));
        }
        Ok(Self(imaging::Raster::filled(width, height, channels, value)))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        imaging::load_image(path).map(Self).map_err(imaging_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.0.channels()
    }

    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn get(&self, col: usize, row: usize, channel: usize) -> PyResult<f64> {
        if col >= self.0.width() || row >= self.0.height() || channel >= self.0.channels() {
            return Err(value_err("pixel index out of range"));
        }
        Ok(self.0.get(col, row, channel))
    }

    /// Center crop to 300x300 and resize to the 224x224 search image.
    fn preprocess(&self) -> PyResult<Self> {
        imaging::preprocess(&self.0).map(Self).map_err(imaging_err)
    }

    /// 24x24x3 patch cut out along the rectangle.
    fn extract_patch(&self, rect: &PyGraspRect) -> PyResult<Self> {
        imaging::extract_patch(&self.0, &rect.0)
            .map(|p| Self(p.raster().clone()))
            .map_err(imaging_err)
    }

    fn save_ppm(&self, path: &str) -> PyResult<()> {
        imaging::save_ppm(&self.0, path).map_err(imaging_err)
    }

    fn save_png(&self, path: &str) -> PyResult<()> {
        imaging::save_png(&self.0, path).map_err(imaging_err)
    }

    fn __repr__(&self) -> String {
        format!("Raster({}x{}x{})", self.0.width(), self.0.height(), self.0.channels())
    }
}

/// Foreground size estimate and the derived `w` / `h` search ranges.
#[pyfunction]
fn estimate_object_scale<'py>(py: Python<'py>, image: &PyRaster) -> PyResult<Bound<'py, PyDict>> {
    let est = imaging::estimate_object_scale(&image.0, &ScaleConfig::default()).map_err(imaging_err)?;
    let d = PyDict::new(py);
    d.set_item("size_estimate", est.size_estimate)?;
    d.set_item("foreground_pixels", est.foreground_pixels)?;
    d.set_item("w_range", (est.w_range.lo, est.w_range.hi))?;
    d.set_item("h_range", (est.h_range.lo, est.h_range.hi))?;
    Ok(d)
}

/// Network parameters in the binary weight format.
#[pyclass(name = "Weights", frozen)]
struct PyWeights {
    bundle: WeightsBundle,
    net: GraspNet,
}

impl PyWeights {
    fn wrap(bundle: WeightsBundle) -> PyResult<Self> {
        let net = GraspNet::new(&bundle).map_err(nn_err)?;
        Ok(Self { bundle, net })
    }
}

#[pymethods]
impl PyWeights {
    #[staticmethod]
    fn random(seed: u64) -> PyResult<Self> {
        Self::wrap(WeightsBundle::random(seed))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Self::wrap(nn::load_weights(path).map_err(nn_err)?)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Self::wrap(WeightsBundle::from_bytes(data).map_err(nn_err)?)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.bundle.to_bytes())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        nn::save_weights(&self.bundle, path).map_err(nn_err)
    }

    #[getter]
    fn layer_count(&self) -> usize {
        self.bundle.layers.len()
    }

    #[getter]
    fn ascend_width(&self) -> usize {
        self.bundle.ascend_width()
    }

    /// `[ungraspable, graspable]` probabilities of a 24x24x3 patch.
    fn class_probabilities(&self, patch: &PyRaster) -> PyResult<(f64, f64)> {
        let p = imaging::Patch::from_raster(patch.0.clone()).map_err(imaging_err)?;
        let [a, b] = self.net.class_probabilities(&nn::Tensor::from(&p)).map_err(nn_err)?;
        Ok((a, b))
    }

    /// Graspable-class probability of a 24x24x3 patch.
    fn forward(&self, patch: &PyRaster) -> PyResult<f64> {
        Ok(self.class_probabilities(patch)?.1)
    }
}

/// A grasp-quality objective for the swarm.
#[pyclass(name = "Scorer", frozen)]
struct PyScorer(Arc<dyn scorer::Scorer>);

#[pymethods]
impl PyScorer {
    /// Gaussian bumps around the targets; the score is the max over them.
    #[staticmethod]
    #[pyo3(signature = (targets, scales=None))]
    fn synthetic(targets: Vec<PyGraspRect>, scales: Option<(f64, f64, f64, f64, f64)>) -> PyResult<Self> {
        if targets.is_empty() {
            return Err(value_err("at least one target is needed"));
        }
        let scales = scales.map_or_else(ScoreScales::default, |(x, y, theta, h, w)| ScoreScales {
            x,
            y,
            theta,
            h,
            w,
        });
        let ts = targets.into_iter().map(|t| t.0).collect();
        Ok(Self(Arc::new(scorer::SyntheticScorer::with_peaks(ts, scales))))
    }

    /// The identification network's graspable probability.
    #[staticmethod]
    fn cnn(weights: &PyWeights) -> PyResult<Self> {
        let s = scorer::CnnScorer::new(&weights.bundle).map_err(nn_err)?;
        Ok(Self(Arc::new(s)))
    }

    /// Score of one rectangle, or `None` if it cannot be evaluated.
    fn score(&self, image: &PyRaster, rect: &PyGraspRect) -> Option<f64> {
        self.0.score(&image.0, &rect.0).value()
    }
}

/// Swarm parameters. Unset keywords keep their defaults.
#[pyclass(name = "SwarmConfig", from_py_object)]
#[derive(Clone)]
struct PySwarmConfig(SwarmConfig);

#[pymethods]
impl PySwarmConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = Self(SwarmConfig::default());
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                match key.as_str() {
                    "n_particles" => cfg.0.n_particles = v.extract()?,
                    "inertia" => cfg.0.inertia = v.extract()?,
                    "c1" => cfg.0.c1 = v.extract()?,
                    "c2" => cfg.0.c2 = v.extract()?,
                    "seed" => cfg.0.seed = v.extract()?,
                    "init_threshold" => cfg.0.init_threshold = v.extract()?,
                    "prob_threshold" => cfg.0.prob_threshold = v.extract()?,
                    "max_init" => cfg.0.max_init = v.extract()?,
                    "max_iter" => cfg.0.max_iter = v.extract()?,
                    "workers" => cfg.0.workers = v.extract()?,
                    "update_rule" => cfg.set_update_rule(v.extract()?)?,
                    "topology" => cfg.set_topology(v.extract()?)?,
                    other => return Err(value_err(format!("unknown SwarmConfig field {other:?}"))),
                }
            }
        }
        cfg.0.validate().map_err(pso_err)?;
        Ok(cfg)
    }

    #[getter]
    fn get_n_particles(&self) -> usize {
        self.0.n_particles
    }

    #[setter]
    fn set_n_particles(&mut self, v: usize) {
        self.0.n_particles = v;
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.0.seed = v;
    }

    #[getter]
    fn get_init_threshold(&self) -> f64 {
        self.0.init_threshold
    }

    #[setter]
    fn set_init_threshold(&mut self, v: f64) {
        self.0.init_threshold = v;
    }

    #[getter]
    fn get_prob_threshold(&self) -> f64 {
        self.0.prob_threshold
    }

    #[setter]
    fn set_prob_threshold(&mut self, v: f64) {
        self.0.prob_threshold = v;
    }

    #[getter]
    fn get_max_iter(&self) -> usize {
        self.0.max_iter
    }

    #[setter]
    fn set_max_iter(&mut self, v: usize) {
        self.0.max_iter = v;
    }

    #[getter]
    fn get_workers(&self) -> usize {
        self.0.workers
    }

    #[setter]
    fn set_workers(&mut self, v: usize) {
        self.0.workers = v;
    }

    #[getter]
    fn get_update_rule(&self) -> &'static str {
        match self.0.update_rule {
            UpdateRule::StandardDifference => "standard-difference",
            UpdateRule::AsPrinted => "as-printed",
        }
    }

    #[setter]
    fn set_update_rule(&mut self, v: &str) -> PyResult<()> {
        self.0.update_rule = v.parse().map_err(value_err)?;
        Ok(())
    }

    #[getter]
    fn get_topology(&self) -> String {
        match self.0.topology {
            Topology::Global => "global".into(),
            Topology::Ring { radius } => format!("ring:{radius}"),
        }
    }

    /// `"global"` or `"ring:<radius>"`.
    #[setter]
    fn set_topology(&mut self, v: &str) -> PyResult<()> {
        self.0.topology = match v {
            "global" => Topology::Global,
            _ => {
                let radius = v
                    .strip_prefix("ring:")
                    .and_then(|r| r.parse().ok())
                    .ok_or_else(|| value_err(format!("bad topology {v:?}")))?;
                Topology::Ring { radius }
            }
        };
        Ok(())
    }
}

/// Outcome of one swarm search.
#[pyclass(name = "SearchResult", frozen, get_all)]
struct PySearchResult {
    best: PyGraspRect,
    best_score: f64,
    iterations_used: usize,
    initializations_used: usize,
    seed: u64,
    /// `(iteration, g_fit)` pairs.
    trajectory: Vec<(usize, f64)>,
}

#[pymethods]
impl PySearchResult {
    fn __repr__(&self) -> String {
        format!(
            "SearchResult(best={}, best_score={}, iterations_used={})",
            self.best.__repr__(),
            self.best_score,
            self.iterations_used
        )
    }
}

impl From<pso::SearchResult> for PySearchResult {
    fn from(r: pso::SearchResult) -> Self {
        Self {
            best: PyGraspRect(r.best),
            best_score: r.best_score,
            iterations_used: r.iterations_used,
            initializations_used: r.initializations_used,
            seed: r.seed,
            trajectory: r.trajectory.iter().map(|t| (t.iteration, t.g_fit)).collect(),
        }
    }
}

/// Runs the swarm search; raises `InitFailed` if the score gate is never met.
#[pyfunction]
#[pyo3(signature = (image, scorer, config=None))]
fn search(py: Python<'_>, image: &PyRaster, scorer: &PyScorer, config: Option<PySwarmConfig>) -> PyResult<PySearchResult> {
    let cfg = config.map_or_else(SwarmConfig::default, |c| c.0);
    let scorer = scorer.0.clone();
    py.detach(|| pso::search(&image.0, &scorer, &cfg))
        .map(Into::into)
        .map_err(pso_err)
}

/// Up to `k` separated grasps as `(rect, score)` pairs, best first.
#[pyfunction]
#[pyo3(signature = (image, scorer, config=None, k=3, floor=0.5, min_separation=30.0))]
fn multigrasp(
    py: Python<'_>,
    image: &PyRaster,
    scorer: &PyScorer,
    config: Option<PySwarmConfig>,
    k: usize,
    floor: f64,
    min_separation: f64,
) -> PyResult<Vec<(PyGraspRect, f64)>> {
    let cfg = config.map_or_else(SwarmConfig::default, |c| c.0);
    let scorer = scorer.0.clone();
    let out = py
        .detach(|| pso::multigrasp(&image.0, &scorer, &cfg, k, floor, min_separation))
        .map_err(pso_err)?;
    Ok(out.grasps.into_iter().map(|g| (PyGraspRect(g.rect), g.score)).collect())
}

#[pymodule]
#[pyo3(name = "graspswarm")]
fn graspswarm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraspRect>()?;
    m.add_class::<PyRaster>()?;
    m.add_class::<PyWeights>()?;
    m.add_class::<PyScorer>()?;
    m.add_class::<PySwarmConfig>()?;
    m.add_class::<PySearchResult>()?;
    m.add_function(wrap_pyfunction!(rect_iou, m)?)?;
    m.add_function(wrap_pyfunction!(rect_match, m)?)?;
    m.add_function(wrap_pyfunction!(angle_diff, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_object_scale, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(multigrasp, m)?)?;
    m.add("InitFailed", m.py().get_type::<InitFailed>())?;
    Ok(())
}
