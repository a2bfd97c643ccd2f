//! Python bindings for the distance estimators, the noise model and the
//! data-driven truss solver.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qmitdd_core::ddsolver::{self, reference_solution, rms_stress_error, Search, TrussModel};
use qmitdd_core::estimation::{task_stream, SamplingPolicy};
use qmitdd_core::experiments::{self, truss_run, BackendKind, ExperimentConfig, ExperimentKind, Inputs};
use qmitdd_core::materialdb::{self, generate_db, KdTree, RambergOsgoodParams};
use qmitdd_core::noisemodel::{self, DeviceCalibration};
use qmitdd_core::qdistance::{self, Algorithm, DataVector};
use qmitdd_core::zne::{self, ExtrapolationModel};
use qmitdd_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Contract(_)
        | Error::Config(_)
        | Error::Parse { .. }
        | Error::Calibration(_)
        | Error::DegenerateInput(_)
        | Error::InvalidRegime { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vector(v: Vec<f64>) -> PyResult<DataVector> {
    DataVector::new(v).map_err(to_py)
}

fn algorithm(name: &str) -> PyResult<Algorithm> {
    name.parse().map_err(to_py)
}

/// Device noise built from calibration numbers.
#[pyclass(name = "NoiseModel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNoiseModel {
    inner: noisemodel::NoiseModel,
    calibration: DeviceCalibration,
}

#[pymethods]
impl PyNoiseModel {
    /// Defaults to the built-in device calibration; keyword arguments replace
    /// individual values (times in µs).
    #[new]
    #[pyo3(signature = (t1=None, t2=None, tg_1q=None, tg_2q=None, eps_g_1q=None, eps_g_2q=None))]
    fn new(
        t1: Option<f64>,
        t2: Option<f64>,
        tg_1q: Option<f64>,
        tg_2q: Option<f64>,
        eps_g_1q: Option<f64>,
        eps_g_2q: Option<f64>,
    ) -> PyResult<Self> {
        let mut c = DeviceCalibration::default();
        c.t1 = t1.unwrap_or(c.t1);
        c.t2 = t2.unwrap_or(c.t2);
        c.tg_1q = tg_1q.unwrap_or(c.tg_1q);
        c.tg_2q = tg_2q.unwrap_or(c.tg_2q);
        c.eps_g_1q = eps_g_1q.unwrap_or(c.eps_g_1q);
        c.eps_g_2q = eps_g_2q.unwrap_or(c.eps_g_2q);
        Ok(PyNoiseModel {
            inner: noisemodel::build_noise_model(&c).map_err(to_py)?,
            calibration: c,
        })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let c = DeviceCalibration::load(path).map_err(to_py)?;
        Ok(PyNoiseModel {
            inner: noisemodel::build_noise_model(&c).map_err(to_py)?,
            calibration: c,
        })
    }

    #[getter]
    fn q1(&self) -> f64 {
        self.inner.q1()
    }

    #[getter]
    fn q2(&self) -> f64 {
        self.inner.q2()
    }

    fn calibration(&self) -> String {
        self.calibration.to_kv_string()
    }
}

#[pyfunction]
fn squared_distance(v: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
    Ok(qdistance::squared_distance(&vector(v)?, &vector(w)?))
}

/// Noiseless probability of reading |0⟩ on the measured qubit.
#[pyfunction]
fn ideal_probability(algorithm_name: &str, v: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
    Ok(qdistance::ideal_probability(
        algorithm(algorithm_name)?,
        &vector(v)?,
        &vector(w)?,
    ))
}

/// (qubits, depth, gate count) of the transpiled distance circuit.
#[pyfunction]
fn circuit_shape(algorithm_name: &str, v: Vec<f64>, w: Vec<f64>) -> PyResult<(usize, usize, usize)> {
    let c = zne::distance_basis_circuit(algorithm(algorithm_name)?, &vector(v)?, &vector(w)?).map_err(to_py)?;
    Ok((c.n_qubits(), c.depth(), c.len()))
}

/// Exact probabilities at λ = 1, 3, …, 2·folds + 1.
#[pyfunction]
#[pyo3(signature = (algorithm_name, v, w, folds, noise=None))]
fn probability_series(
    algorithm_name: &str,
    v: Vec<f64>,
    w: Vec<f64>,
    folds: usize,
    noise: Option<&PyNoiseModel>,
) -> PyResult<Vec<f64>> {
    let c = zne::distance_basis_circuit(algorithm(algorithm_name)?, &vector(v)?, &vector(w)?).map_err(to_py)?;
    zne::exact_series(&c, folds, noise.map(|n| &n.inner)).map_err(to_py)
}

/// Returns (mitigated d̂, unmitigated d̂). `model` is linear, quadratic,
/// exponential or richardson.
#[pyfunction]
#[pyo3(signature = (v, w, algorithm_name="h", model="richardson", folds=6, n_m=100_000_000, noise=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn estimate_distance(
    v: Vec<f64>,
    w: Vec<f64>,
    algorithm_name: &str,
    model: &str,
    folds: usize,
    n_m: u64,
    noise: Option<&PyNoiseModel>,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let model: ExtrapolationModel = model.parse().map_err(to_py)?;
    let policy = SamplingPolicy::auto(n_m).map_err(to_py)?;
    let mut rng = task_stream(seed, 0);
    let r = zne::mitigated_distance(
        &vector(v)?,
        &vector(w)?,
        algorithm(algorithm_name)?,
        model,
        folds,
        &policy,
        noise.map(|n| &n.inner),
        &mut rng,
    )
    .map_err(to_py)?;
    Ok((r.estimate.d_hat, r.raw.d_hat))
}

/// Strain of the Ramberg-Osgood law with the default parameters.
#[pyfunction]
fn ramberg_osgood_strain(sigma: f64) -> f64 {
    RambergOsgoodParams::default().strain(sigma)
}

/// Outcome of one data-driven solve of the built-in roof truss.
#[pyclass(frozen, get_all)]
struct TrussResult {
    iterations: usize,
    converged: bool,
    sigma_rms: f64,
    data_stress: Vec<f64>,
    reference_stress: Vec<f64>,
    history: Vec<f64>,
    mean_distance_calls: f64,
}

/// Solves the roof truss with a `classical`, `unmitigated` or `mitigated`
/// distance backend. Quantum backends use the H-based circuit.
#[pyfunction]
#[pyo3(signature = (backend="classical", db_size=161, n_m=10_000_000_000, folds=5, seed=0, full_search=false))]
fn solve_truss(
    backend: &str,
    db_size: usize,
    n_m: u64,
    folds: usize,
    seed: u64,
    full_search: bool,
) -> PyResult<TrussResult> {
    let backend: BackendKind = backend.parse().map_err(to_py)?;
    let ro = RambergOsgoodParams::default();
    let truss = TrussModel::roof_truss();
    let db = generate_db(&ro, -6.0, 6.0, db_size)
        .and_then(|db| db.with_metric(ddsolver::default_scaling(&ro)?))
        .map_err(to_py)?;
    let tree = KdTree::from_database(&db, materialdb::DEFAULT_LEAF_SIZE).map_err(to_py)?;
    let search = if full_search { Search::Full } else { Search::Tree(&tree) };
    let noise = noisemodel::build_noise_model(&DeviceCalibration::default()).map_err(to_py)?;
    let rep = truss_run(
        &truss,
        &db,
        search,
        backend,
        Algorithm::HBased,
        ExtrapolationModel::Richardson,
        folds,
        SamplingPolicy::auto(n_m).map_err(to_py)?,
        Some(&noise),
        seed,
        0,
        ddsolver::DEFAULT_MAX_ITER,
    )
    .map_err(to_py)?;
    let reference = reference_solution(&truss, &ro).map_err(to_py)?;
    let sigma_rms = rms_stress_error(&rep.data_stress, &reference, &truss.weights()).map_err(to_py)?;
    Ok(TrussResult {
        iterations: rep.iterations,
        converged: rep.converged,
        sigma_rms,
        mean_distance_calls: rep.mean_calls_per_search(),
        data_stress: rep.data_stress,
        reference_stress: reference,
        history: rep.history,
    })
}

/// Runs a configured experiment and writes its outputs; returns the config hash.
#[pyfunction]
#[pyo3(signature = (experiment, config, out))]
fn run_experiment(experiment: &str, config: PathBuf, out: PathBuf) -> PyResult<String> {
    let kind: ExperimentKind = experiment.parse().map_err(to_py)?;
    let mut cfg = ExperimentConfig::load(Some(kind), config).map_err(to_py)?;
    cfg.out = out;
    let inputs = Inputs::resolve(cfg).map_err(to_py)?;
    let result = experiments::run(&inputs).map_err(to_py)?;
    experiments::write_outputs(&inputs.config.out, &inputs, &result).map_err(to_py)?;
    Ok(inputs.hash)
}

#[pymodule]
pub fn qmitdd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNoiseModel>()?;
    m.add_class::<TrussResult>()?;
    m.add_function(wrap_pyfunction!(squared_distance, m)?)?;
    m.add_function(wrap_pyfunction!(ideal_probability, m)?)?;
    m.add_function(wrap_pyfunction!(circuit_shape, m)?)?;
    m.add_function(wrap_pyfunction!(probability_series, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_distance, m)?)?;
    m.add_function(wrap_pyfunction!(ramberg_osgood_strain, m)?)?;
    m.add_function(wrap_pyfunction!(solve_truss, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
