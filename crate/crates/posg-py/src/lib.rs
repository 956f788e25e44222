//! Python bindings: kernel distances, guidance weights, environments,
//! demonstration files, training and checkpoint evaluation.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use posg::demos::{self, DemoQuality};
use posg::envs::{Action, ActionSpace, EnvPreset};
use posg::guidance::{self, DistanceConfig};
use posg::harness::{self, ExperimentConfig};
use posg::kernel::{self, KernelSpec, PointSet};

fn to_py(e: posg::Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Parse a JSON string into Python objects through the `json` module.
fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn spec(sigma: Option<f64>) -> PyResult<KernelSpec> {
    match sigma {
        Some(s) => KernelSpec::fixed(s).map_err(to_py),
        None => Ok(KernelSpec::median_heuristic()),
    }
}

/// RBF kernel value exp(-|x - y|² / (2σ²)).
#[pyfunction]
fn kernel_eval(x: Vec<f64>, y: Vec<f64>, sigma: f64) -> PyResult<f64> {
    kernel::kernel_eval(&x, &y, sigma).map_err(to_py)
}

/// Biased MMD² between two point sets. `sigma=None` uses the median
/// heuristic.
#[pyfunction]
#[pyo3(signature = (a, b, sigma=None))]
fn mmd_sq(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, sigma: Option<f64>) -> PyResult<f64> {
    let a = PointSet::new(&a).map_err(to_py)?;
    let b = PointSet::new(&b).map_err(to_py)?;
    kernel::mmd_sq(&a, &b, &spec(sigma)?).map_err(to_py)
}

/// Minimum MMD² from a trajectory to a list of demonstrations and the index
/// of the nearest one.
#[pyfunction]
#[pyo3(signature = (trajectory, demos, sigma=None, max_points=256))]
fn distance_to_demos(
    trajectory: Vec<Vec<f64>>,
    demos: Vec<Vec<Vec<f64>>>,
    sigma: Option<f64>,
    max_points: usize,
) -> PyResult<(f64, usize)> {
    let t = PointSet::new(&trajectory).map_err(to_py)?;
    let d = demos.iter().map(|d| PointSet::new(d)).collect::<posg::Result<Vec<_>>>().map_err(to_py)?;
    kernel::dist_to_demoset(&t, &d, &spec(sigma)?, max_points).map_err(to_py)
}

/// Trajectory weights exp(-k·d) / (Σ exp(-k·d) + ε).
#[pyfunction]
#[pyo3(signature = (distances, k_temp=5.0, epsilon=1e-8))]
fn normalized_weights(distances: Vec<f64>, k_temp: f64, epsilon: f64) -> Vec<f64> {
    guidance::normalized_weights(&distances, k_temp, epsilon)
}

/// Scripted demonstrations as a list of dicts.
#[pyfunction]
#[pyo3(signature = (env, quality="expert", count=1, seed=0))]
fn generate_demos<'py>(py: Python<'py>, env: &str, quality: &str, count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let preset = EnvPreset::parse(env).map_err(to_py)?;
    let records = demos::generate(preset, DemoQuality::parse(quality).map_err(to_py)?, count, seed).map_err(to_py)?;
    json_to_py(py, &serde_json::to_string(&records).map_err(|e| to_py(e.into()))?)
}

/// Write scripted demonstrations to a JSON Lines file; returns the number
/// written.
#[pyfunction]
#[pyo3(signature = (env, path, quality="expert", count=1, seed=0))]
fn save_demos(env: &str, path: PathBuf, quality: &str, count: usize, seed: u64) -> PyResult<usize> {
    let preset = EnvPreset::parse(env).map_err(to_py)?;
    let records = demos::generate(preset, DemoQuality::parse(quality).map_err(to_py)?, count, seed).map_err(to_py)?;
    demos::save_records(&path, &records).map_err(to_py)?;
    Ok(records.len())
}

/// Read and validate a demonstration file.
#[pyfunction]
fn load_demos<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let records = demos::load_records(&path).map_err(to_py)?;
    json_to_py(py, &serde_json::to_string(&records).map_err(|e| to_py(e.into()))?)
}

/// Train every seed of a TOML config; returns the run manifest.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::load(&config).map_err(to_py)?;
    let manifest = py.allow_threads(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    json_to_py(py, &serde_json::to_string(&manifest).map_err(|e| to_py(e.into()))?)
}

/// Evaluate a checkpoint directory, greedily unless `sample` is set.
#[pyfunction]
#[pyo3(signature = (ckpt, episodes=10, seed=0, sample=false, demos=None))]
fn evaluate<'py>(
    py: Python<'py>,
    ckpt: PathBuf,
    episodes: usize,
    seed: u64,
    sample: bool,
    demos: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .allow_threads(|| -> posg::Result<_> {
            let env_id = posg::Agent::load(&ckpt)?.1.env_id;
            let set = demos.map(|p| demos::load_demos(&p, &env_id, usize::MAX)).transpose()?;
            let dist = DistanceConfig::default();
            harness::eval_checkpoint(&ckpt, episodes, seed, sample, set.as_ref().map(|d| (d, &dist)))
        })
        .map_err(to_py)?;
    json_to_py(py, &serde_json::to_string(&report).map_err(|e| to_py(e.into()))?)
}

/// A preset environment. Discrete actions are ints, continuous actions are
/// lists of floats.
#[pyclass(unsendable, name = "Env")]
struct PyEnv {
    inner: Box<dyn posg::envs::Env>,
}

#[pymethods]
impl PyEnv {
    #[new]
    fn new(preset: &str) -> PyResult<Self> {
        Ok(Self { inner: EnvPreset::parse(preset).map_err(to_py)?.build() })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_string()
    }

    #[getter]
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    /// ("discrete", n) or ("continuous", n).
    #[getter]
    fn action_space(&self) -> (&'static str, usize) {
        match self.inner.action_space() {
            ActionSpace::Discrete(n) => ("discrete", n),
            ActionSpace::Continuous(n) => ("continuous", n),
        }
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.inner.max_steps()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    /// Returns (observation, reward, terminated, truncated).
    fn step(&mut self, action: &Bound<'_, PyAny>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let action = match self.inner.action_space() {
            ActionSpace::Discrete(_) => Action::Discrete(action.extract()?),
            ActionSpace::Continuous(_) => Action::Continuous(action.extract()?),
        };
        let out = self.inner.step(&action).map_err(to_py)?;
        Ok((out.observation, out.reward, out.terminated, out.truncated))
    }
}

#[pymodule]
fn pyposg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(kernel_eval, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_sq, m)?)?;
    m.add_function(wrap_pyfunction!(distance_to_demos, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_weights, m)?)?;
    m.add_function(wrap_pyfunction!(generate_demos, m)?)?;
    m.add_function(wrap_pyfunction!(save_demos, m)?)?;
    m.add_function(wrap_pyfunction!(load_demos, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PyEnv>()?;
    Ok(())
}
