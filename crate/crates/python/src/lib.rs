//! Python bindings. Vectors cross the boundary as lists of floats, matrices
//! as lists of rows.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pchn::experiments::{self, StudyResult};
use pchn::hopfield;
use pchn::stability::{analyze_equilibrium_with, SpectrumReport};
use pchn::{checkpoint, learning, PchnError, RunConfig};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: PchnError) -> PyErr {
    match e {
        PchnError::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A run configuration built from key/value settings, with the same keys
/// and defaults as the command line.
#[pyclass(name = "Config", frozen)]
struct PyConfig {
    cfg: RunConfig,
    #[pyo3(get)]
    warnings: Vec<String>,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (settings = None))]
    fn new(settings: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut map = BTreeMap::new();
        if let Some(d) = settings {
            for (k, v) in d.iter() {
                let key = pchn::config::normalize_key(&k.str()?.to_string());
                let value = match v.extract::<bool>() {
                    Ok(b) => b.to_string(),
                    Err(_) => v.str()?.to_string(),
                };
                map.insert(key, value);
            }
        }
        let (cfg, warnings) = RunConfig::from_settings(&map).map_err(py_err)?;
        Ok(PyConfig { cfg, warnings })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    #[getter]
    fn total_units(&self) -> usize {
        self.cfg.architecture.total_units()
    }

    /// Settings in the config-file format, reloadable with `--config`.
    fn echo(&self) -> String {
        self.cfg.echo()
    }

    fn build_network(&self) -> PyResult<PyNetwork> {
        Ok(PyNetwork {
            net: self.cfg.build_network().map_err(py_err)?,
        })
    }

    fn targets(&self) -> Vec<Vec<f64>> {
        rows(&self.cfg.targets().patterns)
    }
}

#[pyclass(name = "Network")]
struct PyNetwork {
    net: pchn::Network,
}

impl PyNetwork {
    fn vector(&self, v: Vec<f64>) -> PyResult<DVector<f64>> {
        let n = self.net.total_units();
        if v.len() != n {
            return Err(py_err(PchnError::DimensionMismatch {
                expected: n,
                found: v.len(),
            }));
        }
        Ok(DVector::from_vec(v))
    }
}

#[pymethods]
impl PyNetwork {
    #[getter]
    fn total_units(&self) -> usize {
        self.net.total_units()
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.net.sizes()
    }

    #[getter]
    fn frozen(&self) -> bool {
        self.net.weights_frozen
    }

    fn values(&self) -> Vec<f64> {
        self.net.values().as_slice().to_vec()
    }

    fn errors(&self) -> Vec<f64> {
        self.net.errors().as_slice().to_vec()
    }

    fn set_values(&mut self, v: Vec<f64>) -> PyResult<()> {
        let v = self.vector(v)?;
        self.net.set_values(&v).map_err(py_err)
    }

    fn reset_errors(&mut self) {
        self.net.reset_errors();
    }

    fn energy(&self) -> f64 {
        self.net.energy()
    }

    fn prediction_energy(&self) -> f64 {
        self.net.prediction_energy()
    }

    fn clamp(&mut self, target: Vec<f64>) -> PyResult<()> {
        let t = self.vector(target)?;
        self.net.clamp_all(&t).map_err(py_err)
    }

    fn unclamp(&mut self) {
        self.net.unclamp_all();
    }

    fn freeze(&mut self) {
        self.net.freeze();
    }

    #[pyo3(signature = (n = 1))]
    fn step_fast(&mut self, n: usize) -> PyResult<()> {
        for _ in 0..n {
            self.net.step_fast().map_err(py_err)?;
        }
        Ok(())
    }

    #[pyo3(signature = (n = 1))]
    fn step_slow(&mut self, n: usize) -> PyResult<()> {
        for _ in 0..n {
            self.net.step_slow().map_err(py_err)?;
        }
        Ok(())
    }

    /// Integrates the fast dynamics until the derivative's sup-norm drops
    /// below `tol`. Returns (converged, steps, residual).
    #[pyo3(signature = (tol = 1e-8, max_steps = 20_000))]
    fn relax(&mut self, tol: f64, max_steps: usize) -> PyResult<(bool, usize, f64)> {
        let r = self.net.run_fast_to_equilibrium(tol, max_steps).map_err(py_err)?;
        Ok((r.converged, r.steps, r.residual))
    }

    /// Weights in the text checkpoint format.
    fn checkpoint(&self) -> String {
        checkpoint::to_string(&self.net)
    }

    fn load_checkpoint(&mut self, text: &str) -> PyResult<()> {
        let w = checkpoint::parse(text).map_err(py_err)?;
        checkpoint::apply(&mut self.net, w).map_err(py_err)
    }
}

/// Result of a perturbation or random-start study.
#[pyclass(name = "Study", frozen)]
struct PyStudy {
    result: StudyResult,
}

#[pymethods]
impl PyStudy {
    #[getter]
    fn success_fraction(&self) -> f64 {
        self.result.success_fraction()
    }

    /// One dict per run: run_id, source_target, final_distances, success.
    fn runs<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.result
            .runs
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("run_id", r.run_id)?;
                d.set_item("source_target", r.source_target)?;
                d.set_item("initial_distances", r.initial_distances.clone())?;
                d.set_item("final_distances", r.final_distances.clone())?;
                d.set_item("threshold", r.threshold)?;
                d.set_item("diverged", r.diverged)?;
                d.set_item("success", r.success())?;
                Ok(d)
            })
            .collect()
    }

    fn csv(&self) -> String {
        self.result.to_csv()
    }
}

#[pyclass(name = "Spectrum", frozen)]
struct PySpectrum {
    report: SpectrumReport,
}

#[pymethods]
impl PySpectrum {
    /// (re, im) pairs sorted by real then imaginary part.
    #[getter]
    fn eigenvalues(&self) -> Vec<(f64, f64)> {
        self.report.eigenvalues.iter().map(|z| (z.re, z.im)).collect()
    }

    #[getter]
    fn max_real_part(&self) -> f64 {
        self.report.max_real_part
    }

    #[getter]
    fn all_stable(&self) -> bool {
        self.report.all_stable
    }

    #[getter]
    fn count_at_minus_half_tau(&self) -> usize {
        self.report.count_at_minus_half_tau
    }

    #[getter]
    fn count_near_minus_one(&self) -> usize {
        self.report.count_near_minus_one
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.report.residual
    }

    #[getter]
    fn distance_to_target(&self) -> f64 {
        self.report.distance_to_target
    }

    fn summary(&self) -> String {
        self.report.summary()
    }

    fn csv(&self) -> String {
        self.report.to_csv()
    }
}

#[pyclass(name = "HopfieldNet", frozen)]
struct PyHopfield {
    net: hopfield::HopfieldNet,
}

#[pymethods]
impl PyHopfield {
    /// Hebbian storage of ±1 patterns given as rows.
    #[staticmethod]
    fn store(patterns: Vec<Vec<f64>>) -> PyResult<Self> {
        let net = hopfield::hebbian_store(&matrix(patterns)?).map_err(py_err)?;
        Ok(PyHopfield { net })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn weights(&self) -> Vec<Vec<f64>> {
        rows(self.net.weights())
    }

    fn energy(&self, v: Vec<f64>) -> f64 {
        hopfield::hn_energy(&self.net, &DVector::from_vec(v))
    }

    fn is_fixed_point(&self, v: Vec<f64>) -> bool {
        hopfield::is_fixed_point(&self.net, &DVector::from_vec(v))
    }

    /// Asynchronous recall. Returns (state, sweeps, converged).
    #[pyo3(signature = (v0, max_sweeps = 100, seed = 0))]
    fn recall(&self, v0: Vec<f64>, max_sweeps: usize, seed: u64) -> (Vec<f64>, usize, bool) {
        let r = hopfield::recall(&self.net, &DVector::from_vec(v0), max_sweeps, seed);
        (r.v.as_slice().to_vec(), r.sweeps, r.converged)
    }
}

#[pyfunction]
fn interaction_energy(patterns: Vec<Vec<f64>>, v: Vec<f64>) -> PyResult<f64> {
    Ok(hopfield::interaction_energy(&matrix(patterns)?, &DVector::from_vec(v)))
}

/// Trains `net` on the configured targets and freezes it. Returns the mean
/// squared prediction error after each epoch.
#[pyfunction]
fn train(cfg: &PyConfig, net: &mut PyNetwork) -> PyResult<Vec<f64>> {
    let c = &cfg.cfg;
    let report = learning::train(&mut net.net, &c.targets(), &c.schedule, c.order_seed()).map_err(py_err)?;
    net.net.freeze();
    Ok(report.epoch_mse)
}

#[pyfunction]
fn perturb(cfg: &PyConfig, net: &PyNetwork) -> PyResult<PyStudy> {
    let c = &cfg.cfg;
    let result = experiments::perturbation_study(&net.net, &c.targets(), &c.study).map_err(py_err)?;
    Ok(PyStudy { result })
}

#[pyfunction]
fn random_init(cfg: &PyConfig, net: &PyNetwork) -> PyResult<PyStudy> {
    let c = &cfg.cfg;
    let result = experiments::random_init_study(&net.net, &c.targets(), &c.study).map_err(py_err)?;
    Ok(PyStudy { result })
}

/// Linearisation at the equilibrium reached from target `k`.
#[pyfunction]
fn stability(cfg: &PyConfig, net: &PyNetwork, k: usize) -> PyResult<PySpectrum> {
    let c = &cfg.cfg;
    let targets = c.targets();
    if k >= targets.len() {
        return Err(PyValueError::new_err(format!("target {k} out of range (have {})", targets.len())));
    }
    let report = analyze_equilibrium_with(&net.net, &targets.pattern(k), &c.equilibrium).map_err(py_err)?;
    Ok(PySpectrum { report })
}

/// Classical recall on the configured targets from the perturbation probes.
/// Returns (exact recovery rate, fraction within one bit, csv).
#[pyfunction]
fn hopfield_baseline(cfg: &PyConfig) -> PyResult<(f64, f64, String)> {
    let c = &cfg.cfg;
    let r = experiments::hopfield_baseline(&c.targets(), &c.study, c.max_sweeps).map_err(py_err)?;
    Ok((r.exact_recovery_rate(), r.success_fraction(), r.to_csv()))
}

#[pymodule]
fn pypchn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyStudy>()?;
    m.add_class::<PySpectrum>()?;
    m.add_class::<PyHopfield>()?;
    m.add_function(wrap_pyfunction!(interaction_energy, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(perturb, m)?)?;
    m.add_function(wrap_pyfunction!(random_init, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(hopfield_baseline, m)?)?;
    Ok(())
}
