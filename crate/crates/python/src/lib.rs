//! Python bindings. Reports cross the boundary as JSON and arrive in Python
//! as plain dicts.

use anova_evidence::density::{self, EquicorrSpec};
use anova_evidence::evidence;
use anova_evidence::report::{self, AnalyzeOptions, ModelChoice};
use anova_evidence::simulation;
use anova_evidence::study::{self, StudySummary};
use anova_evidence::variance;
use anova_evidence::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Convergence(m) | Error::Unresolvable(m) => PyRuntimeError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn parse_model(model: &str) -> PyResult<ModelChoice> {
    match model {
        "pooled" => Ok(ModelChoice::Pooled),
        "per-group" | "per_group" => Ok(ModelChoice::PerGroup),
        "both" => Ok(ModelChoice::Both),
        other => Err(PyValueError::new_err(format!(
            "model must be pooled, per-group or both, got `{other}`"
        ))),
    }
}

/// A parsed study file.
#[pyclass(name = "Study", module = "anova_evidence_py", frozen)]
pub struct PyStudy {
    inner: StudySummary,
}

#[pymethods]
impl PyStudy {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        study::parse_study(text)
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| to_py_err(e.into()))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        study::serialize_study(&self.inner)
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.inner.table.means()
    }

    #[getter]
    fn cell_ids(&self) -> Vec<String> {
        self.inner
            .table
            .cells()
            .iter()
            .map(|c| c.id.clone())
            .collect()
    }

    #[getter]
    fn groups(&self) -> Vec<Vec<usize>> {
        self.inner.group_indices()
    }

    #[getter]
    fn per_cell_count(&self) -> f64 {
        study::per_cell_count(&self.inner.table)
    }

    fn within_group_ss(&self) -> PyResult<f64> {
        evidence::within_group_ss(&self.inner.table, &self.inner.grouping).map_err(to_py_err)
    }

    #[pyo3(signature = (sigma2, model = "pooled"))]
    fn evidence<'py>(
        &self,
        py: Python<'py>,
        sigma2: f64,
        model: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let r = match parse_model(model)? {
            ModelChoice::Pooled => evidence::evidence_pooled(&self.inner, sigma2),
            ModelChoice::PerGroup => evidence::evidence_pergroup(&self.inner, sigma2),
            ModelChoice::Both => {
                return Err(PyValueError::new_err("pick pooled or per-group"));
            }
        }
        .map_err(to_py_err)?;
        to_dict(py, &r)
    }

    /// Full analysis report, resolving sigma2 like the command line does.
    #[pyo3(signature = (sigma2 = None, model = "both", n = None, prior_odds = None))]
    fn analyze<'py>(
        &self,
        py: Python<'py>,
        sigma2: Option<f64>,
        model: &str,
        n: Option<f64>,
        prior_odds: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let opts = AnalyzeOptions {
            model: Some(parse_model(model)?),
            sigma2,
            n,
            prior_odds,
        };
        let r = report::analyze(&self.inner, &opts).map_err(to_py_err)?;
        to_dict(py, &r)
    }

    fn recover_sigma2<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = variance::recover_sigma2(&self.inner.table, &self.inner.f_stats);
        to_dict(py, &r)
    }

    /// Effect mean square of the `index`-th F record.
    fn effect_mean_square(&self, index: usize) -> PyResult<f64> {
        let f = self
            .inner
            .f_stats
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("no F record {index}")))?;
        variance::effect_mean_square_for(&self.inner.table, f)
            .map(|m| m.value)
            .map_err(to_py_err)
    }

    fn worst_case(&self) -> PyResult<Self> {
        let t = variance::worst_case_table(&self.inner.table, &self.inner.grouping)
            .map_err(to_py_err)?;
        self.inner
            .with_table(t)
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    #[pyo3(signature = (sigma2, reps, seed, rho = 0.0, thresholds = vec![]))]
    fn calibrate<'py>(
        &self,
        py: Python<'py>,
        sigma2: f64,
        reps: usize,
        seed: u64,
        rho: f64,
        thresholds: Vec<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = simulation::CalibrationConfig {
            sigma2,
            reps,
            seed,
            rho,
            thresholds,
        };
        let r = py
            .detach(|| simulation::null_calibration(&self.inner, &cfg))
            .map_err(to_py_err)?;
        to_dict(py, &r)
    }

    fn __repr__(&self) -> String {
        format!(
            "Study({} cells, {} groups)",
            self.inner.table.cells().len(),
            self.inner.grouping.len()
        )
    }
}

#[pyfunction]
fn logdet(dim: usize, rho: f64) -> PyResult<f64> {
    density::equicorr_logdet(dim, rho).map_err(to_py_err)
}

#[pyfunction]
fn quadform(devs: Vec<f64>, rho: f64) -> PyResult<f64> {
    density::equicorr_quadform(&devs, rho).map_err(to_py_err)
}

#[pyfunction]
fn log_density(means: Vec<f64>, nu: Vec<f64>, rho: f64, sigma2: f64, n: f64) -> PyResult<f64> {
    let spec = EquicorrSpec::new(means.len(), rho, sigma2, n).map_err(to_py_err)?;
    density::log_density_pooled(&means, &nu, &spec).map_err(to_py_err)
}

#[pyfunction]
fn s_statistic(ss: f64, dim: usize, n: f64, sigma2: f64) -> PyResult<f64> {
    evidence::s_statistic(ss, dim, n, sigma2).map_err(to_py_err)
}

#[pyfunction]
fn s_threshold(dim: usize) -> f64 {
    evidence::s_threshold(dim)
}

/// Maximizing correlation, or `None` when the supremum is at zero.
#[pyfunction]
fn rho_hat(s: f64, dim: usize) -> PyResult<Option<f64>> {
    evidence::rho_hat(s, dim).map_err(to_py_err)
}

#[pyfunction]
fn chi(rho: f64, ss: f64, dim: usize, n: f64, sigma2: f64) -> PyResult<f64> {
    evidence::chi(rho, ss, dim, n, sigma2).map_err(to_py_err)
}

/// Evidential value from cell means and index groups.
#[pyfunction]
#[pyo3(signature = (means, groups, n, sigma2, model = "pooled"))]
fn evidential_value<'py>(
    py: Python<'py>,
    means: Vec<f64>,
    groups: Vec<Vec<usize>>,
    n: f64,
    sigma2: f64,
    model: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let r = match parse_model(model)? {
        ModelChoice::Pooled => evidence::pooled_evidence(&means, &groups, n, sigma2, String::new()),
        ModelChoice::PerGroup => {
            evidence::pergroup_evidence(&means, &groups, n, sigma2, String::new())
        }
        ModelChoice::Both => return Err(PyValueError::new_err("pick pooled or per-group")),
    }
    .map_err(to_py_err)?;
    to_dict(py, &r)
}

#[pyfunction]
fn combine(values: Vec<f64>) -> PyResult<f64> {
    evidence::combine_studies(&values).map_err(to_py_err)
}

#[pyfunction]
fn posterior_odds<'py>(py: Python<'py>, prior_odds: f64, v: f64) -> PyResult<Bound<'py, PyAny>> {
    let r = evidence::posterior_odds(prior_odds, v).map_err(to_py_err)?;
    to_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (estimates, weights = None))]
fn pool_sigma2(estimates: Vec<f64>, weights: Option<Vec<f64>>) -> PyResult<f64> {
    variance::pool_sigma2(&estimates, weights.as_deref()).map_err(to_py_err)
}

/// Brute-force supremum of chi over rho, as `(rho_star, value)`.
#[pyfunction]
#[pyo3(signature = (ss, dim, n, sigma2, resolution = 4000))]
fn sup_chi(ss: f64, dim: usize, n: f64, sigma2: f64, resolution: usize) -> PyResult<(f64, f64)> {
    let o = simulation::sup_chi_oracle(ss, dim, n, sigma2, resolution).map_err(to_py_err)?;
    Ok((o.rho_star, o.value.value()))
}

/// Raw data `values[cell][subject]` under the copying model.
#[pyfunction]
fn fabricate(
    cells: usize,
    n: usize,
    mu: Vec<f64>,
    sigma2: f64,
    rho: f64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    simulation::fabricate(cells, n, &mu, sigma2, rho, seed)
        .map(|d| d.values)
        .map_err(to_py_err)
}

#[pyfunction]
fn mse(values: Vec<Vec<f64>>) -> PyResult<f64> {
    simulation::mse_of(&values).map_err(to_py_err)
}

#[pymodule]
pub fn anova_evidence_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyStudy>()?;
    m.add_function(wrap_pyfunction!(logdet, m)?)?;
    m.add_function(wrap_pyfunction!(quadform, m)?)?;
    m.add_function(wrap_pyfunction!(log_density, m)?)?;
    m.add_function(wrap_pyfunction!(s_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(s_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(rho_hat, m)?)?;
    m.add_function(wrap_pyfunction!(chi, m)?)?;
    m.add_function(wrap_pyfunction!(evidential_value, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_odds, m)?)?;
    m.add_function(wrap_pyfunction!(pool_sigma2, m)?)?;
    m.add_function(wrap_pyfunction!(sup_chi, m)?)?;
    m.add_function(wrap_pyfunction!(fabricate, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    Ok(())
}
