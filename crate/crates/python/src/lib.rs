//! Python bindings: offspring laws, exact extinction probabilities,
//! verdicts, simulation and the oracle suite.

use catdisp_core::classification::DEFAULT_HORIZON;
use catdisp_core::oracle::run_verification;
use catdisp_core::simulator::{stream, DEFAULT_SURVIVAL_CAP};
use catdisp_core::{
    classify_random, classify_varying_analytic, extinction_probability_exact, log_mean_trace, simulate as run_simulation,
    DispersalKind, DriftMethod, Environment, EnvironmentFamily, EnvironmentProcess, Error, GrowthKind, KernelKind,
    SimulationConfig, Tolerance,
};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::{json, Value};

/// Stream generation used by classification paths, apart from replicate
/// streams and the environment stream.
const CLASSIFY_STREAM: u64 = u64::MAX - 1;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NumericFailure(m) => PyArithmeticError::new_err(m),
        Error::Domain(m) | Error::Usage(m) => PyValueError::new_err(m),
    }
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, v: Value) -> PyResult<T> {
    serde_json::from_value(v).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn growth_kind(name: &str) -> PyResult<GrowthKind> {
    parse("growth", json!(name))
}

fn kernel_kind(name: &str, convention: &str) -> PyResult<KernelKind> {
    if name == "geometric" {
        parse("kernel", json!({"type": name, "convention": convention}))
    } else {
        parse("kernel", json!({"type": name}))
    }
}

fn mechanism(label: &str) -> PyResult<DispersalKind> {
    parse("mechanism", json!(label))
}

fn environment(theta: f64, lambda: f64, p: f64, d: u32, growth: &str, kernel: &str, convention: &str) -> PyResult<Environment> {
    Environment::new(theta, lambda, p, d, growth_kind(growth)?, kernel_kind(kernel, convention)?).map_err(to_py)
}

fn process(family_json: &str, growth: &str, kernel: &str, convention: &str) -> PyResult<EnvironmentProcess> {
    let family: EnvironmentFamily = serde_json::from_str(family_json).map_err(|e| PyValueError::new_err(format!("environment: {e}")))?;
    EnvironmentProcess::new(growth_kind(growth)?, kernel_kind(kernel, convention)?, family).map_err(to_py)
}

/// Means of the four mechanisms `[D1, D2, D3, D4]`; `inf` when infinite.
#[pyfunction]
#[pyo3(signature = (theta, lambda_, p, d, growth = "poissonian", kernel = "binomial", convention = "from_one"))]
fn offspring_means(theta: f64, lambda_: f64, p: f64, d: u32, growth: &str, kernel: &str, convention: &str) -> PyResult<Vec<f64>> {
    let env = environment(theta, lambda_, p, d, growth, kernel, convention)?;
    let tol = Tolerance::default();
    DispersalKind::ALL.iter().map(|&m| Ok(env.offspring_mean(m, &tol).map_err(to_py)?.value.to_f64())).collect()
}

/// Truncated offspring pmf of one mechanism.
#[pyfunction]
#[pyo3(signature = (theta, lambda_, p, d, mechanism_label, growth = "poissonian", kernel = "binomial", convention = "from_one"))]
#[allow(clippy::too_many_arguments)]
fn offspring_pmf(
    theta: f64,
    lambda_: f64,
    p: f64,
    d: u32,
    mechanism_label: &str,
    growth: &str,
    kernel: &str,
    convention: &str,
) -> PyResult<Vec<f64>> {
    let env = environment(theta, lambda_, p, d, growth, kernel, convention)?;
    let law = env.offspring_law(mechanism(mechanism_label)?, &Tolerance::default()).map_err(to_py)?;
    Ok(law.pmf_slice().to_vec())
}

/// Smallest fixed point of the offspring pgf in a constant environment.
#[pyfunction]
#[pyo3(signature = (theta, lambda_, p, d, mechanism_label, growth = "poissonian", kernel = "binomial", convention = "from_one"))]
#[allow(clippy::too_many_arguments)]
fn extinction_probability(
    theta: f64,
    lambda_: f64,
    p: f64,
    d: u32,
    mechanism_label: &str,
    growth: &str,
    kernel: &str,
    convention: &str,
) -> PyResult<f64> {
    let env = environment(theta, lambda_, p, d, growth, kernel, convention)?;
    extinction_probability_exact(&env, mechanism(mechanism_label)?, 1e-13).map_err(to_py)
}

/// Verdict for an environment family given as JSON, returned as a dict.
/// Deterministic families use the analytic criteria, falling back to a
/// finite-horizon trace; stochastic ones use the closed-form drift, falling
/// back to an ergodic average of `horizon` generations.
#[pyfunction]
#[pyo3(signature = (environment_json, mechanism_label, growth = "poissonian", kernel = "binomial", convention = "from_one", horizon = DEFAULT_HORIZON, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn classify<'py>(
    py: Python<'py>,
    environment_json: &str,
    mechanism_label: &str,
    growth: &str,
    kernel: &str,
    convention: &str,
    horizon: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let proc = process(environment_json, growth, kernel, convention)?;
    let mech = mechanism(mechanism_label)?;
    let tol = Tolerance::default();
    let rng = || stream(seed, 0, CLASSIFY_STREAM);
    let verdict = if proc.is_deterministic() {
        classify_varying_analytic(&proc, mech, &tol).or_else(|e| match e {
            Error::Usage(_) => {
                let trace = log_mean_trace(&proc, mech, horizon, rng(), &tol)?;
                Ok(catdisp_core::classify_varying_numeric(&trace, catdisp_core::classification::DEFAULT_VARYING_TOL))
            }
            other => Err(other),
        })
    } else {
        classify_random(&proc, mech, DriftMethod::ClosedForm, rng(), &tol).or_else(|e| match e {
            Error::Usage(_) => classify_random(&proc, mech, DriftMethod::ErgodicAverage { path_len: horizon }, rng(), &tol),
            other => Err(other),
        })
    }
    .map_err(to_py)?;
    let text = serde_json::to_string(&verdict).expect("verdicts serialize");
    py.import("json")?.call_method1("loads", (text,))
}

/// Survival frequency over `replicates` runs of `generations` generations.
#[pyfunction]
#[pyo3(signature = (environment_json, mechanism_label, generations, replicates, seed, growth = "poissonian", kernel = "binomial", convention = "from_one", survival_cap = DEFAULT_SURVIVAL_CAP))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    environment_json: &str,
    mechanism_label: &str,
    generations: u32,
    replicates: u32,
    seed: u64,
    growth: &str,
    kernel: &str,
    convention: &str,
    survival_cap: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let config = SimulationConfig {
        generations,
        replicates,
        survival_cap,
        master_seed: seed,
        mechanism: mechanism(mechanism_label)?,
        process: process(environment_json, growth, kernel, convention)?,
    };
    let result = py.detach(|| run_simulation(&config)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("master_seed", result.master_seed)?;
    out.set_item("replicates", result.replicates)?;
    out.set_item("survivors", result.survivors)?;
    out.set_item("survival_frequency", result.survival_frequency)?;
    out.set_item("confidence_interval", result.confidence_interval)?;
    Ok(out)
}

/// Runs the oracle suite; returns `(passed, {group: failures})`.
#[pyfunction]
fn verify<'py>(py: Python<'py>) -> PyResult<(bool, Bound<'py, PyDict>)> {
    let report = py.detach(|| run_verification(None)).map_err(to_py)?;
    let groups = PyDict::new(py);
    for g in &report.groups {
        groups.set_item(&g.name, g.failures.len())?;
    }
    Ok((report.passed(), groups))
}

#[pymodule]
fn catdisp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(offspring_means, m)?)?;
    m.add_function(wrap_pyfunction!(offspring_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(extinction_probability, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
