//! Python bindings for `stagecause`.
//!
//! Structured values (configs, reports, KL tables) cross the boundary as
//! plain dicts built from their JSON form.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::de::DeserializeOwned;
use serde::Serialize;

use stagecause::agents::{self, Algo, TrainConfig};
use stagecause::discovery::{self, DiscoveryConfig, SelectionThresholds, StdConvention};
use stagecause::envs::{self, EnvConfig, EnvParams, Preset};
use stagecause::nn::GaussianPrediction;
use stagecause::{matrix, ActionVector, CausalMatrix, Error, StagedEnv};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accepts a JSON string or any JSON-serialisable Python object.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = if obj.is_instance_of::<PyString>() {
        obj.extract()?
    } else {
        obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_enum<T: DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} '{s}'")))
}

/// One of the staged kinematic environments.
#[pyclass(unsendable, name = "Env")]
struct PyEnv {
    inner: Box<dyn StagedEnv>,
    config: EnvConfig,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (name, preset = "coupled", seed = 0, params = None))]
    fn new(name: &str, preset: &str, seed: u64, params: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let preset: Preset = parse_enum("preset", preset)?;
        let mut config = EnvConfig::new(preset, seed);
        if let Some(p) = params {
            config.params = from_py::<EnvParams>(p)?;
        }
        let inner = envs::make_env(name, config.clone()).map_err(to_py_err)?;
        Ok(Self { inner, config })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn n_stages(&self) -> usize {
        self.inner.spec().n_stages
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.inner.max_steps()
    }

    #[getter]
    fn action_names(&self) -> Vec<String> {
        self.inner.spec().action_names.clone()
    }

    #[getter]
    fn reward_names(&self) -> Vec<String> {
        self.inner.spec().reward_names.clone()
    }

    /// Reward names scored in `stage`.
    fn stage_terms(&self, stage: usize) -> PyResult<Vec<String>> {
        let spec = self.inner.spec();
        Ok(spec.names_of(spec.stage_terms(stage).map_err(to_py_err)?))
    }

    fn params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.config.params)
    }

    fn seed(&mut self, seed: u64) {
        self.inner.seed(seed);
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    fn reset_to_stage(&mut self, stage: usize) -> PyResult<Vec<f64>> {
        self.inner.reset_to_stage(stage).map_err(to_py_err)
    }

    fn observe(&self) -> Vec<f64> {
        self.inner.observe()
    }

    fn stage_of(&self, obs: Vec<f64>) -> PyResult<usize> {
        self.inner.stage_of(&obs).map_err(to_py_err)
    }

    /// Steps the env and returns the transition as a dict.
    fn step<'py>(&mut self, py: Python<'py>, action: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let a = ActionVector::new(action).map_err(to_py_err)?;
        let o = self.inner.step(&a).map_err(to_py_err)?;
        let t = &o.transition;
        let v = serde_json::json!({
            "state": t.state,
            "action": t.action.as_slice(),
            "reward": t.reward.as_slice(),
            "next_state": t.next_state,
            "stage": t.stage,
            "next_stage": t.next_stage,
            "terminal": t.terminal,
            "success": o.success,
            "truncated": o.truncated,
        });
        to_dict(py, &v)
    }

    fn ground_truth(&self) -> PyResult<Vec<PyMatrix>> {
        let ms = envs::ground_truth(self.inner.as_ref()).map_err(to_py_err)?;
        Ok(ms.into_iter().map(|inner| PyMatrix { inner }).collect())
    }

    fn __repr__(&self) -> String {
        format!("Env({:?}, preset={:?}, seed={})", self.inner.name(), self.config.preset, self.config.seed)
    }
}

/// Binary action × reward-term matrix of one stage.
#[pyclass(name = "CausalMatrix", from_py_object)]
#[derive(Clone)]
struct PyMatrix {
    inner: CausalMatrix,
}

#[pymethods]
impl PyMatrix {
    #[new]
    fn new(stage: usize, action_names: Vec<String>, reward_names: Vec<String>, rows: Vec<Vec<u8>>) -> PyResult<Self> {
        let inner = CausalMatrix::from_rows(stage, action_names, reward_names, rows).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn stage(&self) -> usize {
        self.inner.stage
    }

    #[getter]
    fn action_names(&self) -> Vec<String> {
        self.inner.action_names.clone()
    }

    #[getter]
    fn reward_names(&self) -> Vec<String> {
        self.inner.reward_names.clone()
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<u8>> {
        self.inner.rows().to_vec()
    }

    /// Whether `action` affects `reward`; None for unknown names.
    fn edge(&self, action: &str, reward: &str) -> Option<bool> {
        self.inner.edge(action, reward)
    }

    fn same_structure(&self, other: &PyMatrix) -> bool {
        self.inner.same_structure(&other.inner)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.inner)
    }

    fn __eq__(&self, other: &PyMatrix) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("CausalMatrix(stage={}, rows={:?})", self.inner.stage, self.inner.rows())
    }
}

fn unwrap_matrices(ms: Vec<PyMatrix>) -> Vec<CausalMatrix> {
    ms.into_iter().map(|m| m.inner).collect()
}

#[pyfunction]
fn load_matrices(path: PathBuf) -> PyResult<Vec<PyMatrix>> {
    let ms = matrix::load_matrices(&path).map_err(to_py_err)?;
    Ok(ms.into_iter().map(|inner| PyMatrix { inner }).collect())
}

#[pyfunction]
fn save_matrices(path: PathBuf, matrices: Vec<PyMatrix>) -> PyResult<()> {
    matrix::save_matrices(&path, &unwrap_matrices(matrices)).map_err(to_py_err)
}

#[pyfunction]
fn to_dot(matrices: Vec<PyMatrix>) -> String {
    matrix::to_dot(&unwrap_matrices(matrices))
}

/// KL(p || q) between N(mean_p, std_p²) and N(mean_q, std_q²).
#[pyfunction]
fn gaussian_kl(mean_p: f64, std_p: f64, mean_q: f64, std_q: f64) -> PyResult<f64> {
    if !(std_p > 0.0 && std_q > 0.0) {
        return Err(PyValueError::new_err("standard deviations must be > 0"));
    }
    Ok(stagecause::nn::gaussian_kl(
        &GaussianPrediction::from_std(mean_p, std_p),
        &GaussianPrediction::from_std(mean_q, std_q),
    ))
}

#[pyfunction]
#[pyo3(signature = (row, convention = "sample"))]
fn coefficient_of_variation(row: Vec<f64>, convention: &str) -> PyResult<f64> {
    let c: StdConvention = parse_enum("convention", convention)?;
    discovery::coefficient_of_variation(&row, c).map_err(to_py_err)
}

/// Selects the causal actions of one KL row; returns the selection as a dict.
#[pyfunction]
#[pyo3(signature = (row, eps_cv = 1.0, eps_normalize = 0.1, eps_direct = 0.01, convention = "sample"))]
fn select_causal_actions<'py>(
    py: Python<'py>,
    row: Vec<f64>,
    eps_cv: f64,
    eps_normalize: f64,
    eps_direct: f64,
    convention: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let t = SelectionThresholds {
        eps_cv,
        eps_normalize,
        eps_direct,
        cv_convention: parse_enum("convention", convention)?,
    };
    let s = discovery::select_causal_actions(&row, &t).map_err(to_py_err)?;
    to_dict(py, &s)
}

/// Runs discovery on `env`; returns (matrices, KL tables).
#[pyfunction]
#[pyo3(signature = (env, config = None))]
fn discover<'py>(
    py: Python<'py>,
    env: &PyEnv,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Vec<PyMatrix>, Bound<'py, PyAny>)> {
    let config: DiscoveryConfig = match config {
        Some(c) => from_py(c)?,
        None => DiscoveryConfig::default(),
    };
    let r = discovery::discover(env.inner.as_ref(), &config).map_err(to_py_err)?;
    let tables = to_dict(py, &r.tables)?;
    Ok((r.matrices.into_iter().map(|inner| PyMatrix { inner }).collect(), tables))
}

/// Per-stage agents trained against one env.
#[pyclass(unsendable, name = "Trainer")]
struct PyTrainer {
    env: Box<dyn StagedEnv>,
    inner: agents::Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (env, algo = "cmppo", matrices = None, config = None))]
    fn new(env: &PyEnv, algo: &str, matrices: Option<Vec<PyMatrix>>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let mut cfg: TrainConfig = match config {
            Some(c) => from_py(c)?,
            None => TrainConfig::default(),
        };
        cfg.algo = algo.parse::<Algo>().map_err(to_py_err)?;
        let ms = matrices.map(unwrap_matrices);
        let inner = agents::Trainer::new(env.inner.as_ref(), ms.as_deref(), cfg).map_err(to_py_err)?;
        Ok(Self { env: env.inner.box_clone(), inner })
    }

    #[staticmethod]
    fn resume(env: &PyEnv, path: PathBuf) -> PyResult<Self> {
        let inner = agents::Trainer::resume(env.inner.as_ref(), &path).map_err(to_py_err)?;
        Ok(Self { env: env.inner.box_clone(), inner })
    }

    #[getter]
    fn step(&self) -> usize {
        self.inner.step()
    }

    /// Advances training by `steps` env steps.
    fn train(&mut self, steps: usize) -> PyResult<()> {
        for _ in 0..steps {
            self.inner.step_once().map_err(to_py_err)?;
        }
        Ok(())
    }

    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.inner.evaluate().map_err(to_py_err)?)
    }

    /// Deterministic actions of the current policies for `obs`.
    fn act(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        use agents::StagePolicy;
        let stage = self.env.stage_of(&obs).map_err(to_py_err)?;
        let mut set = self.inner.agent_set().map_err(to_py_err)?;
        Ok(set.act(stage, &obs).map_err(to_py_err)?.as_slice().to_vec())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py_err)
    }
}

/// Evaluates the scripted controller of `env`.
#[pyfunction]
#[pyo3(signature = (env, episodes = 20, seed = 0))]
fn evaluate_scripted<'py>(py: Python<'py>, env: &PyEnv, episodes: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let mut p = agents::scripted_policy(env.inner.as_ref(), &env.config.params).map_err(to_py_err)?;
    let r = agents::evaluate(env.inner.as_ref(), p.as_mut(), episodes, seed).map_err(to_py_err)?;
    to_dict(py, &r)
}

#[pymodule]
fn stagecause_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(load_matrices, m)?)?;
    m.add_function(wrap_pyfunction!(save_matrices, m)?)?;
    m.add_function(wrap_pyfunction!(to_dot, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kl, m)?)?;
    m.add_function(wrap_pyfunction!(coefficient_of_variation, m)?)?;
    m.add_function(wrap_pyfunction!(select_causal_actions, m)?)?;
    m.add_function(wrap_pyfunction!(discover, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_scripted, m)?)?;
    m.add("ENVS", vec![envs::MOBILE_REACH_2D, envs::GRASP_KINEMATIC])?;
    m.add("ALGOS", Algo::ALL.iter().map(|a| a.as_str()).collect::<Vec<_>>())?;
    Ok(())
}
