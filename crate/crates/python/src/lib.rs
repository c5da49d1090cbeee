//! Python bindings for `phasefb`.
//!
//! Vectors cross the boundary as lists of Python `complex`, matrices as lists
//! of rows.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use phasefb::allocation::{self, AllocationProblem};
use phasefb::channel::{self, ArrayGeometry, ChannelPath, PathSet};
use phasefb::feedback::{self, FeedbackPlan};
use phasefb::precoding::{self, GpipConfig, PrecoderStack, PrecodingProblem, UserCsi};
use phasefb::reconstruction;
use phasefb::sim::{self, Experiment, PrecoderChoice};
use phasefb::{CMatrix, CVector};

fn py_err(e: phasefb::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_vec(v: &CVector) -> Vec<Complex64> {
    v.iter().copied().collect()
}

fn to_rows(m: &CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<Complex64>], n: usize) -> PyResult<CMatrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!("expected a {n}x{n} matrix")));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Uniform-array geometry.
#[pyclass(module = "phasefb_py", frozen, get_all)]
struct Geometry {
    num_antennas: usize,
    spacing: f64,
    lambda_ul: f64,
    lambda_dl: f64,
}

#[pymethods]
impl Geometry {
    #[new]
    fn new(num_antennas: usize, spacing: f64, lambda_ul: f64, lambda_dl: f64) -> PyResult<Self> {
        ArrayGeometry::new(num_antennas, spacing, lambda_ul, lambda_dl).map_err(py_err)?;
        Ok(Self { num_antennas, spacing, lambda_ul, lambda_dl })
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(num_antennas={}, spacing={}, lambda_ul={}, lambda_dl={})",
            self.num_antennas, self.spacing, self.lambda_ul, self.lambda_dl
        )
    }
}

impl Geometry {
    fn inner(&self) -> ArrayGeometry {
        ArrayGeometry::new(self.num_antennas, self.spacing, self.lambda_ul, self.lambda_dl).expect("validated in new")
    }
}

/// One propagation path; `phase_dl` excludes the distance term.
#[pyclass(module = "phasefb_py", frozen, get_all, from_py_object)]
#[derive(Clone)]
struct Path {
    aoa: f64,
    gain: f64,
    distance: f64,
    phase_ul: f64,
    phase_dl: f64,
}

#[pymethods]
impl Path {
    #[new]
    #[pyo3(signature = (aoa, gain, distance, phase_ul=0.0, phase_dl=0.0))]
    fn new(aoa: f64, gain: f64, distance: f64, phase_ul: f64, phase_dl: f64) -> PyResult<Self> {
        ChannelPath::new(aoa, gain, distance, phase_ul, phase_dl).map_err(py_err)?;
        Ok(Self { aoa, gain, distance, phase_ul, phase_dl })
    }
}

fn path_set(paths: &[Path]) -> PyResult<PathSet> {
    let ps = paths
        .iter()
        .map(|p| ChannelPath::new(p.aoa, p.gain, p.distance, p.phase_ul, p.phase_dl))
        .collect::<phasefb::Result<Vec<_>>>()
        .map_err(py_err)?;
    PathSet::new(ps).map_err(py_err)
}

#[pyclass(module = "phasefb_py", frozen, get_all)]
struct Allocation {
    bits: Vec<u32>,
    objective: f64,
}

#[pymethods]
impl Allocation {
    fn __repr__(&self) -> String {
        format!("Allocation(bits={:?}, objective={})", self.bits, self.objective)
    }
}

/// Channel estimate with its error covariance.
#[pyclass(module = "phasefb_py", frozen, get_all)]
struct Reconstruction {
    estimate: Vec<Complex64>,
    error_cov: Vec<Vec<Complex64>>,
    mode: &'static str,
}

#[pyclass(module = "phasefb_py", frozen, get_all)]
struct GpipResult {
    /// One beamformer per user, jointly unit norm.
    precoder: Vec<Vec<Complex64>>,
    se_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

#[pyfunction]
fn eta(bits: u32) -> f64 {
    allocation::eta(bits)
}

#[pyfunction]
fn nmmse(bits: u32) -> f64 {
    allocation::nmmse(bits)
}

#[pyfunction]
fn nmmse_pl(x: f64) -> PyResult<f64> {
    allocation::nmmse_pl(x).map_err(py_err)
}

/// Splits `budget` bits over paths with the given power weights.
#[pyfunction]
#[pyo3(signature = (weights, budget, method="greedy"))]
fn allocate(weights: Vec<f64>, budget: u32, method: &str) -> PyResult<Allocation> {
    let p = AllocationProblem::new(weights, budget).map_err(py_err)?;
    let a = match method {
        "greedy" => allocation::allocate_greedy(&p),
        "uniform" => allocation::allocate_uniform(&p),
        "bruteforce" => allocation::allocate_bruteforce(&p).map_err(py_err)?,
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    Ok(Allocation { bits: a.bits, objective: a.objective })
}

/// Returns `(codeword, index, residual)`.
#[pyfunction]
fn quantize_phase(angle: f64, bits: u32) -> (f64, u64, f64) {
    let q = feedback::quantize_phase(angle, bits);
    (q.q, q.index, q.delta)
}

#[pyfunction]
fn array_response(theta: f64, lambda_: f64, geometry: &Geometry) -> PyResult<Vec<Complex64>> {
    channel::array_response(theta, lambda_, &geometry.inner()).map(|v| to_vec(&v)).map_err(py_err)
}

#[pyfunction]
fn dl_channel(paths: Vec<Path>, geometry: &Geometry) -> PyResult<Vec<Complex64>> {
    Ok(to_vec(&channel::dl_channel(&path_set(&paths)?, &geometry.inner())))
}

/// MMSE reconstruction from path geometry and per-path feedback bits.
#[pyfunction]
fn reconstruct(paths: Vec<Path>, bits: Vec<u32>, geometry: &Geometry) -> PyResult<Reconstruction> {
    let ps = path_set(&paths)?;
    let g = geometry.inner();
    let fp = FeedbackPlan::quantize(&ps, &bits, g.lambda_dl).map_err(py_err)?;
    let rc = reconstruction::reconstruct_mmse(&ps, &fp, &g).map_err(py_err)?;
    Ok(Reconstruction {
        estimate: to_vec(&rc.estimate),
        error_cov: to_rows(&rc.error_cov.to_dense()),
        mode: rc.mode.as_str(),
    })
}

#[pyfunction]
fn asymptotic_delta_norm(gains: Vec<f64>, bits: Vec<u32>, residuals: Vec<f64>) -> PyResult<f64> {
    reconstruction::asymptotic_delta_norm(&gains, &bits, &residuals).map_err(py_err)
}

/// Robust GPIP precoder from estimates, error covariances and noise powers.
#[pyfunction]
#[pyo3(signature = (estimates, error_covs, noise_var, power, epsilon=1e-4, max_iter=50, keep_best=true))]
fn gpip(
    estimates: Vec<Vec<Complex64>>,
    error_covs: Vec<Vec<Vec<Complex64>>>,
    noise_var: Vec<f64>,
    power: f64,
    epsilon: f64,
    max_iter: usize,
    keep_best: bool,
) -> PyResult<GpipResult> {
    if estimates.len() != error_covs.len() || estimates.len() != noise_var.len() {
        return Err(PyValueError::new_err("estimates, error_covs and noise_var differ in length"));
    }
    let users = estimates
        .iter()
        .zip(&error_covs)
        .zip(&noise_var)
        .map(|((h, phi), &nv)| {
            Ok(UserCsi { estimate: CVector::from_column_slice(h), error_cov: from_rows(phi, h.len())?, noise_var: nv })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let pp = PrecodingProblem::new(users, power).map_err(py_err)?;
    let cfg = GpipConfig { epsilon, max_iter, keep_best };
    let out = precoding::gpip_solve(&pp, &cfg, None).map_err(py_err)?;
    Ok(GpipResult {
        precoder: out.precoder.blocks().iter().map(to_vec).collect(),
        se_trace: out.se_trace,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Zero-forcing beamformers, one per user, jointly unit norm.
#[pyfunction]
fn zf(channels: Vec<Vec<Complex64>>) -> PyResult<Vec<Vec<Complex64>>> {
    let hs: Vec<CVector> = channels.iter().map(|h| CVector::from_column_slice(h)).collect();
    let f = precoding::zf_precoder(&hs).map_err(py_err)?;
    Ok(f.blocks().iter().map(to_vec).collect())
}

/// Sum spectral efficiency of `precoder` on the true channels.
#[pyfunction]
fn sum_se(
    precoder: Vec<Vec<Complex64>>,
    channels: Vec<Vec<Complex64>>,
    noise_var: Vec<f64>,
    power: f64,
) -> PyResult<f64> {
    let blocks: Vec<CVector> = precoder.iter().map(|f| CVector::from_column_slice(f)).collect();
    let f = PrecoderStack::from_blocks(&blocks).map_err(py_err)?;
    let hs: Vec<CVector> = channels.iter().map(|h| CVector::from_column_slice(h)).collect();
    precoding::true_sum_se(&f, &hs, &noise_var, power).map_err(py_err)
}

fn scenario(config: Option<&str>, seed: Option<u64>) -> PyResult<sim::ScenarioConfig> {
    let mut cfg = match config {
        Some(text) => sim::parse_config(text).map_err(py_err)?.config,
        None => sim::ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Runs `"mse"`, `"delta"` or `"se"`; `config` is the text of a scenario
/// file. Returns one dict per record.
#[pyfunction]
#[pyo3(signature = (experiment, config=None, seed=None))]
fn simulate<'py>(
    py: Python<'py>,
    experiment: &str,
    config: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let kind: Experiment = experiment.parse().map_err(py_err)?;
    let cfg = scenario(config, seed)?;
    let records = py.detach(|| sim::run_experiment(kind, &cfg)).map_err(py_err)?;
    records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("experiment", r.experiment)?;
            d.set_item("n", r.n)?;
            d.set_item("k", r.k)?;
            d.set_item("l", r.l)?;
            d.set_item("btot", r.btot)?;
            d.set_item("power_dbm", r.power_dbm)?;
            d.set_item("method", &r.method)?;
            d.set_item("metric", r.metric)?;
            d.set_item("mean", r.mean)?;
            d.set_item("std_err", r.std_err)?;
            d.set_item("trials", r.trials)?;
            Ok(d)
        })
        .collect()
}

/// Per-drop sum-SE of one precoder (`"gpip"`, `"zf"` or `"wmmse"`).
#[pyfunction]
#[pyo3(signature = (method, config=None, seed=None))]
fn precode<'py>(
    py: Python<'py>,
    method: &str,
    config: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let choice: PrecoderChoice = method.parse().map_err(py_err)?;
    let cfg = scenario(config, seed)?;
    let records = py.detach(|| sim::run_precode(&cfg, choice)).map_err(py_err)?;
    records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("drop", r.drop)?;
            d.set_item("n", r.n)?;
            d.set_item("k", r.k)?;
            d.set_item("l", r.l)?;
            d.set_item("btot", r.btot)?;
            d.set_item("power_dbm", r.power_dbm)?;
            d.set_item("method", r.method)?;
            d.set_item("reconstruction", r.reconstruction)?;
            d.set_item("true_sum_se", r.true_sum_se)?;
            d.set_item("lb_sum_se", r.lb_sum_se)?;
            d.set_item("iterations", r.iterations)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn phasefb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Geometry>()?;
    m.add_class::<Path>()?;
    m.add_class::<Allocation>()?;
    m.add_class::<Reconstruction>()?;
    m.add_class::<GpipResult>()?;
    m.add_function(wrap_pyfunction!(eta, m)?)?;
    m.add_function(wrap_pyfunction!(nmmse, m)?)?;
    m.add_function(wrap_pyfunction!(nmmse_pl, m)?)?;
    m.add_function(wrap_pyfunction!(allocate, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_phase, m)?)?;
    m.add_function(wrap_pyfunction!(array_response, m)?)?;
    m.add_function(wrap_pyfunction!(dl_channel, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_delta_norm, m)?)?;
    m.add_function(wrap_pyfunction!(gpip, m)?)?;
    m.add_function(wrap_pyfunction!(zf, m)?)?;
    m.add_function(wrap_pyfunction!(sum_se, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(precode, m)?)?;
    Ok(())
}
