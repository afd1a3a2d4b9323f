//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mvgdp::budget::{self, PrecisionMode, Structure, Theorem};
use mvgdp::error::MvgError;
use mvgdp::evalharness::{self, ExperimentConfig, SyntheticKind};
use mvgdp::matcore::{Matrix, SpdMatrix};
use mvgdp::mechanism::{self, NoiseDirections, PrecisionAllocation};
use mvgdp::sampler::{self, MvgSpec, RandomSeed, SamplerMethod};

create_exception!(mvgdp_py, MvgdpError, PyValueError);

fn err(e: MvgError) -> PyErr {
    MvgdpError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

fn spd(rows: Vec<Vec<f64>>) -> PyResult<SpdMatrix> {
    SpdMatrix::new(matrix(rows)?).map_err(err)
}

/// Parses a kebab-case enum name the same way the config files do.
fn parse_name<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| MvgdpError::new_err(format!("unknown {what} {s:?}")))
}

fn structure(s: &str) -> PyResult<Structure> {
    match s {
        "general" => Ok(Structure::General),
        "psd" | "symmetric-psd" => Ok(Structure::SymmetricPsd),
        _ => Err(MvgdpError::new_err(format!("unknown structure {s:?}"))),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| MvgdpError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(frozen, module = "mvgdp_py")]
#[derive(Clone)]
struct PrivacyParams(budget::PrivacyParams);

#[pymethods]
impl PrivacyParams {
    #[new]
    fn new(epsilon: f64, delta: f64) -> PyResult<Self> {
        budget::PrivacyParams::new(epsilon, delta).map(Self).map_err(err)
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta()
    }

    fn split(&self, frac: f64) -> PyResult<(PrivacyParams, PrivacyParams)> {
        let (a, b) = self.0.split(frac).map_err(err)?;
        Ok((Self(a), Self(b)))
    }

    fn __repr__(&self) -> String {
        format!("PrivacyParams(epsilon={}, delta={})", self.0.epsilon(), self.0.delta())
    }
}

#[pyclass(frozen, module = "mvgdp_py")]
#[derive(Clone)]
struct QuerySpec(budget::QuerySpec);

#[pymethods]
impl QuerySpec {
    #[new]
    #[pyo3(signature = (m, n, s2, gamma, structure = "general"))]
    fn new(m: usize, n: usize, s2: f64, gamma: f64, structure: &str) -> PyResult<Self> {
        budget::QuerySpec::new(m, n, s2, gamma, self::structure(structure)?)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.m(), self.0.n())
    }

    #[getter]
    fn s2(&self) -> f64 {
        self.0.s2()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma()
    }

    /// Budget terms as a dict.
    fn terms<'py>(&self, py: Python<'py>, p: &PrivacyParams) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &budget::budget_terms(&self.0, &p.0))
    }

    fn general_bound(&self, p: &PrivacyParams) -> f64 {
        budget::general_bound(&budget::budget_terms(&self.0, &p.0), &p.0)
    }

    fn psd_bound(&self, p: &PrivacyParams) -> PyResult<f64> {
        budget::psd_bound(&budget::budget_terms(&self.0, &p.0), &p.0).map_err(err)
    }

    #[pyo3(signature = (p, mode = "unimodal"))]
    fn precision_budget(&self, p: &PrivacyParams, mode: &str) -> PyResult<f64> {
        let mode = match mode {
            "unimodal" => PrecisionMode::Unimodal,
            "equi-modal" | "equimodal" => PrecisionMode::EquiModal,
            _ => return Err(MvgdpError::new_err(format!("unknown mode {mode:?}"))),
        };
        budget::precision_budget(&self.0, &p.0, mode).map_err(err)
    }

    fn prefer_psd_theorem<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &budget::prefer_psd_theorem(&self.0).map_err(err)?)
    }
}

/// A compiled MVG mechanism.
#[pyclass(frozen, module = "mvgdp_py")]
struct MvgMechanism(mechanism::MvgMechanism);

fn design(m: usize, directions: Option<Vec<Vec<f64>>>, theta: Option<Vec<f64>>) -> PyResult<(NoiseDirections, PrecisionAllocation)> {
    let dirs = match directions {
        Some(w) => NoiseDirections::new(matrix(w)?).map_err(err)?,
        None => NoiseDirections::identity(m),
    };
    let alloc = match theta {
        Some(t) => PrecisionAllocation::new(t),
        None => PrecisionAllocation::equal(m),
    }
    .map_err(err)?;
    Ok((dirs, alloc))
}

#[pymethods]
impl MvgMechanism {
    /// Directional row noise with `Psi = I`. Directions default to the
    /// standard basis and `theta` to an equal split.
    #[staticmethod]
    #[pyo3(signature = (q, p, directions = None, theta = None))]
    fn unimodal(q: &QuerySpec, p: &PrivacyParams, directions: Option<Vec<Vec<f64>>>, theta: Option<Vec<f64>>) -> PyResult<Self> {
        let (dirs, alloc) = design(q.0.m(), directions, theta)?;
        mechanism::MvgMechanism::unimodal(&q.0, &p.0, &dirs, &alloc).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (q, p, directions = None, theta = None, theorem = "general"))]
    fn equimodal(
        q: &QuerySpec,
        p: &PrivacyParams,
        directions: Option<Vec<Vec<f64>>>,
        theta: Option<Vec<f64>>,
        theorem: &str,
    ) -> PyResult<Self> {
        let theorem: Theorem = parse_name("theorem", theorem)?;
        let (dirs, alloc) = design(q.0.m(), directions, theta)?;
        mechanism::MvgMechanism::equimodal(&q.0, &p.0, &dirs, &alloc, theorem).map(Self).map_err(err)
    }

    #[getter]
    fn budget(&self) -> f64 {
        self.0.budget()
    }

    #[getter]
    fn budget_spent(&self) -> f64 {
        self.0.budget_spent()
    }

    fn sigma(&self) -> Vec<Vec<f64>> {
        self.0.spec().sigma().matrix().to_rows()
    }

    fn psi(&self) -> Vec<Vec<f64>> {
        self.0.spec().psi().matrix().to_rows()
    }

    fn condition_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.condition_report())
    }

    /// Perturbs `f_x`; returns a dict with `value` and the run details.
    #[pyo3(signature = (f_x, seed, stream = 0))]
    fn apply<'py>(&self, py: Python<'py>, f_x: Vec<Vec<f64>>, seed: u64, stream: u64) -> PyResult<Bound<'py, PyDict>> {
        let out = self.0.apply(&matrix(f_x)?, RandomSeed::new(seed, stream)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("value", out.value.to_rows())?;
        d.set_item("budget", out.budget)?;
        d.set_item("budget_spent", out.budget_spent)?;
        d.set_item("condition_report", to_py(py, &out.condition_report)?)?;
        d.set_item("sampler", to_py(py, &out.sampler)?)?;
        Ok(d)
    }
}

/// Draws one `MVG(0, sigma, psi)` matrix; `method` is `auto`, `affine` or
/// `vectorized`.
#[pyfunction]
#[pyo3(signature = (sigma, psi, seed, stream = 0, method = "auto"))]
fn sample_mvg(sigma: Vec<Vec<f64>>, psi: Vec<Vec<f64>>, seed: u64, stream: u64, method: &str) -> PyResult<Vec<Vec<f64>>> {
    let spec = MvgSpec::new(spd(sigma)?, spd(psi)?);
    let seed = RandomSeed::new(seed, stream);
    let z = match method {
        "auto" => sampler::sample_auto(&spec, seed),
        other => sampler::sample_with(&spec, seed, parse_name::<SamplerMethod>("sampler", other)?),
    }
    .map_err(err)?;
    Ok(z.to_rows())
}

/// Water-filling precisions, water level and active mask.
#[pyfunction]
fn waterfill(lambda_f: Vec<f64>, budget: f64) -> PyResult<(Vec<f64>, f64, Vec<bool>)> {
    let wf = mechanism::waterfill_allocation(&lambda_f, budget).map_err(err)?;
    Ok((wf.lambda_z_inv, wf.c, wf.active))
}

#[pyfunction]
#[pyo3(signature = (f_x, s2, p, seed, stream = 0))]
fn gaussian(f_x: Vec<Vec<f64>>, s2: f64, p: &PrivacyParams, seed: u64, stream: u64) -> PyResult<Vec<Vec<f64>>> {
    let f_x = matrix(f_x)?;
    let scale = mechanism::gaussian_scale(s2, &p.0);
    let out = mechanism::add_gaussian_noise(&f_x, scale, &mut RandomSeed::new(seed, stream).rng()).map_err(err)?;
    Ok(out.to_rows())
}

#[pyfunction]
#[pyo3(signature = (f_x, s1, epsilon, seed, stream = 0))]
fn laplace(f_x: Vec<Vec<f64>>, s1: f64, epsilon: f64, seed: u64, stream: u64) -> PyResult<Vec<Vec<f64>>> {
    let out = mechanism::baseline_laplace(&matrix(f_x)?, s1, epsilon, RandomSeed::new(seed, stream)).map_err(err)?;
    Ok(out.to_rows())
}

/// Runs an experiment described by a JSON config on a synthetic dataset
/// and returns the trial report as a dict.
#[pyfunction]
#[pyo3(signature = (config_json, synthetic, data_seed = 0))]
fn run_experiment<'py>(py: Python<'py>, config_json: &str, synthetic: &str, data_seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| MvgdpError::new_err(format!("bad config: {e}")))?;
    let kind: SyntheticKind = parse_name("dataset", synthetic)?;
    let data = evalharness::synthetic_dataset(kind, data_seed);
    let report = py.detach(|| evalharness::run_experiment(&cfg, &data)).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn mvgdp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MvgdpError", m.py().get_type::<MvgdpError>())?;
    m.add_class::<PrivacyParams>()?;
    m.add_class::<QuerySpec>()?;
    m.add_class::<MvgMechanism>()?;
    m.add_function(wrap_pyfunction!(sample_mvg, m)?)?;
    m.add_function(wrap_pyfunction!(waterfill, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(laplace, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
