//! Python bindings for the kzq toolkit. Thin function-level wrappers:
//! inputs are plain Python scalars/lists, results come back as dicts, and
//! frequencies cross the boundary in MHz exactly as in the TOML configs.

use kzq::analysis::{
    self, CollapseExponents, CollapseMode, CorrelationFunction, FitMode, Trace,
};
use kzq::config::MHZ_TO_RAD_PER_US;
use kzq::kzm::{self, Backend, SweepProtocol};
use kzq::model::{self, CCMParams, ChainModel, ExpSumApprox, LatticeSpec};
use kzq::shots::ShotEnsemble;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn ensemble_from(shots: Vec<Vec<u8>>, seed: u64) -> PyResult<ShotEnsemble> {
    let n = shots.first().map_or(0, |s| s.len());
    ShotEnsemble::new(n, shots, seed).map_err(value_err)
}

fn parse_fit_mode(mode: &str) -> PyResult<FitMode> {
    match mode {
        "modulus" => Ok(FitMode::Modulus),
        "z2" => Ok(FitMode::DensityWave(2)),
        "z3" => Ok(FitMode::DensityWave(3)),
        "z4" => Ok(FitMode::DensityWave(4)),
        other => Err(value_err(format!(
            "fit mode must be modulus/z2/z3/z4, got {other:?}"
        ))),
    }
}

/// (μ, κ) from the dynamical and correlation-length exponents.
#[pyfunction]
fn kz_exponents(z: f64, nu: f64) -> PyResult<(f64, f64)> {
    let e = model::kz_exponents(z, nu).map_err(value_err)?;
    Ok((e.mu, e.kappa))
}

/// Universality classes and their exponents, keyed by name.
#[pyfunction]
fn exponent_table(py: Python<'_>) -> PyResult<Py<PyDict>> {
    let table = PyDict::new(py);
    for (name, e) in model::exponent_table() {
        let row = PyDict::new(py);
        row.set_item("z", e.z)?;
        row.set_item("nu", e.nu)?;
        row.set_item("mu", e.mu)?;
        row.set_item("kappa", e.kappa)?;
        table.set_item(name, row)?;
    }
    Ok(table.into())
}

/// Four-exponential approximation of 1/r⁶ at integer distance r.
#[pyfunction]
fn exp_sum(r: i64) -> PyResult<f64> {
    model::exp_sum_approx(&ExpSumApprox::published(), r).map_err(value_err)
}

/// Van der Waals coupling V_ij in rad/µs for the given chain.
#[pyfunction]
#[pyo3(signature = (n_sites, rb_over_a, i, j, omega_mhz = 2.0))]
fn vdw_coupling(n_sites: usize, rb_over_a: f64, i: usize, j: usize, omega_mhz: f64) -> PyResult<f64> {
    let lattice = LatticeSpec::new(n_sites, rb_over_a, omega_mhz * MHZ_TO_RAD_PER_US)
        .map_err(value_err)?;
    model::vdw_coupling(&lattice, i, j).map_err(value_err)
}

fn corr_dict(py: Python<'_>, corr: &CorrelationFunction) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    d.set_item("r", corr.r.clone())?;
    d.set_item("g", corr.g.clone())?;
    d.set_item("sem", corr.sem.clone())?;
    d.set_item("pair_counts", corr.pair_counts.clone())?;
    d.set_item("trim", corr.trim)?;
    Ok(d.into())
}

/// Sweep the detuning through the transition and sample the final state.
///
/// Frequencies are in MHz (rate in MHz/µs); shots come back as 0/1 lists.
#[pyfunction]
#[pyo3(signature = (n_sites, rb_over_a, delta0_mhz, delta_f_mhz, rate_mhz_per_us,
                    omega_mhz = 2.0, shots = 1000, seed = 1, backend = "exact",
                    checkpoints_mhz = vec![]))]
#[allow(clippy::too_many_arguments)]
fn run_sweep(
    py: Python<'_>,
    n_sites: usize,
    rb_over_a: f64,
    delta0_mhz: f64,
    delta_f_mhz: f64,
    rate_mhz_per_us: f64,
    omega_mhz: f64,
    shots: usize,
    seed: u64,
    backend: &str,
    checkpoints_mhz: Vec<f64>,
) -> PyResult<Py<PyDict>> {
    let omega = omega_mhz * MHZ_TO_RAD_PER_US;
    let lattice = LatticeSpec::new(n_sites, rb_over_a, omega).map_err(value_err)?;
    let model = ChainModel::Rydberg {
        lattice,
        cutoff: (n_sites - 1).max(1),
    };
    let protocol = SweepProtocol {
        delta0: delta0_mhz * MHZ_TO_RAD_PER_US,
        delta_f: delta_f_mhz * MHZ_TO_RAD_PER_US,
        omega_max: omega,
        ramp_on: None,
        ramp_off: None,
    };
    let backend = match backend {
        "exact" => Backend::exact(),
        "mps" => Backend::Mps(Default::default()),
        other => return Err(value_err(format!("backend must be exact or mps, got {other:?}"))),
    };
    let schedule = protocol
        .schedule(rate_mhz_per_us * MHZ_TO_RAD_PER_US)
        .map_err(value_err)?;
    let deltas: Vec<f64> = checkpoints_mhz
        .iter()
        .map(|d| d * MHZ_TO_RAD_PER_US)
        .collect();
    let result = kzm::run_sweep(&model, &schedule, &backend, shots, seed, &deltas)
        .map_err(|f| runtime_err(format!("sweep at rate {:.4e} failed: {}", f.rate, f.error)))?;

    let d = PyDict::new(py);
    d.set_item("rate_mhz_per_us", result.rate / MHZ_TO_RAD_PER_US)?;
    d.set_item("shots", result.ensemble.shots.clone())?;
    d.set_item("occupations", result.occupations.clone())?;
    d.set_item("backend", result.backend)?;
    d.set_item("seed", result.seed)?;
    let checkpoints: Vec<Py<PyDict>> = result
        .checkpoints
        .iter()
        .map(|c| {
            let cd = PyDict::new(py);
            cd.set_item("delta_mhz", c.delta / MHZ_TO_RAD_PER_US)?;
            cd.set_item("time_us", c.time)?;
            cd.set_item("xi", c.xi)?;
            Ok(cd.into())
        })
        .collect::<PyResult<_>>()?;
    d.set_item("checkpoints", checkpoints)?;
    Ok(d.into())
}

/// Radially averaged connected correlation G(r) with jackknife errors.
#[pyfunction]
#[pyo3(signature = (shots, trim = None))]
fn correlation_function(
    py: Python<'_>,
    shots: Vec<Vec<u8>>,
    trim: Option<usize>,
) -> PyResult<Py<PyDict>> {
    let ensemble = ensemble_from(shots, 0)?;
    let trim = trim.unwrap_or_else(|| kzm::checkpoint_trim(ensemble.n_sites));
    let corr = analysis::correlation_function(&ensemble, trim).map_err(value_err)?;
    corr_dict(py, &corr)
}

/// Correlation length ξ from G(r); mode is modulus/z2/z3/z4.
#[pyfunction]
#[pyo3(signature = (shots, trim = None, mode = "z2"))]
fn fit_correlation_length(
    py: Python<'_>,
    shots: Vec<Vec<u8>>,
    trim: Option<usize>,
    mode: &str,
) -> PyResult<Py<PyDict>> {
    let ensemble = ensemble_from(shots, 0)?;
    let trim = trim.unwrap_or_else(|| kzm::checkpoint_trim(ensemble.n_sites));
    let corr = analysis::correlation_function(&ensemble, trim).map_err(value_err)?;
    let fit = analysis::fit_correlation_length(&corr, parse_fit_mode(mode)?)
        .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("xi", fit.xi)?;
    d.set_item("amplitude", fit.amplitude)?;
    d.set_item("residual", fit.residual)?;
    d.set_item("unreliable", fit.unreliable)?;
    Ok(d.into())
}

/// Power-law fit ξ(s) = ξ₀·(s/s₀)^{−μ} over (rate, ξ, ξ_err) points.
#[pyfunction]
fn fit_power_law(py: Python<'_>, points: Vec<(f64, f64, f64)>) -> PyResult<Py<PyDict>> {
    let fit = analysis::fit_power_law(&points).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("mu", fit.mu)?;
    d.set_item("mu_err", fit.mu_err)?;
    d.set_item("xi0", fit.xi0)?;
    d.set_item("s0", fit.s0)?;
    d.set_item("n_points", fit.n_points)?;
    d.set_item("residual", fit.residual)?;
    Ok(d.into())
}

/// Domain-spacing statistics: counts f_N and densities p_N.
#[pyfunction]
#[pyo3(signature = (shots, trim = None))]
fn domain_stats(py: Python<'_>, shots: Vec<Vec<u8>>, trim: Option<usize>) -> PyResult<Py<PyDict>> {
    let ensemble = ensemble_from(shots, 0)?;
    let trim = trim.unwrap_or_else(|| kzm::checkpoint_trim(ensemble.n_sites));
    let stats = analysis::domain_stats(&ensemble, trim).map_err(value_err)?;
    let d = PyDict::new(py);
    let f = PyDict::new(py);
    for (k, v) in &stats.f {
        f.set_item(k, v)?;
    }
    let p = PyDict::new(py);
    for (k, v) in &stats.p {
        p.set_item(k, v)?;
    }
    d.set_item("f", f)?;
    d.set_item("p", p)?;
    d.set_item("empty", stats.empty)?;
    Ok(d.into())
}

/// Simulate readout errors: g→r with probability eps_g, r→g with eps_r.
#[pyfunction]
#[pyo3(signature = (shots, eps_g, eps_r, seed = 1))]
fn apply_detection_noise(
    shots: Vec<Vec<u8>>,
    eps_g: f64,
    eps_r: f64,
    seed: u64,
) -> PyResult<Vec<Vec<u8>>> {
    let ensemble = ensemble_from(shots, seed)?;
    let noisy = kzm::apply_detection_noise(&ensemble, eps_g, eps_r, seed).map_err(value_err)?;
    Ok(noisy.shots)
}

/// Collapse residual of ξ-rescaled curves [(s, x, y), ...] at exponent μ.
#[pyfunction]
#[pyo3(signature = (curves, mu, s0 = None))]
fn collapse_residual(
    curves: Vec<(f64, Vec<f64>, Vec<f64>)>,
    mu: f64,
    s0: Option<f64>,
) -> PyResult<f64> {
    let traces: Vec<Trace> = curves
        .into_iter()
        .map(|(s, x, y)| Trace { s, x, y })
        .collect();
    if traces.is_empty() {
        return Err(value_err("need at least one curve"));
    }
    let s0 = s0.unwrap_or_else(|| {
        (traces.iter().map(|t| t.s.ln()).sum::<f64>() / traces.len() as f64).exp()
    });
    let exps = CollapseExponents { mu, kappa: 0.0 };
    let result = analysis::rescale_collapse(&traces, s0, CollapseMode::Spatial, exps)
        .map_err(value_err)?;
    Ok(result.residual)
}

/// Lowest k energies of the 3-state chiral clock chain, rad/µs.
#[pyfunction]
#[pyo3(signature = (n_sites, f, j, phi = 0.0, theta = 0.0, k = 9))]
fn ccm_spectrum(n_sites: usize, f: f64, j: f64, phi: f64, theta: f64, k: usize) -> PyResult<Vec<f64>> {
    let params = CCMParams {
        f,
        j,
        phi,
        theta,
        n_states: 3,
    };
    let terms = model::ccm_terms(&params, n_sites).map_err(value_err)?;
    let spectrum = kzq::exact::exact_spectrum(&terms, k).map_err(runtime_err)?;
    Ok(spectrum.into_iter().map(|(e, _)| e).collect())
}

#[pymodule]
fn kzq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(kz_exponents, m)?)?;
    m.add_function(wrap_pyfunction!(exponent_table, m)?)?;
    m.add_function(wrap_pyfunction!(exp_sum, m)?)?;
    m.add_function(wrap_pyfunction!(vdw_coupling, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_function, m)?)?;
    m.add_function(wrap_pyfunction!(fit_correlation_length, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power_law, m)?)?;
    m.add_function(wrap_pyfunction!(domain_stats, m)?)?;
    m.add_function(wrap_pyfunction!(apply_detection_noise, m)?)?;
    m.add_function(wrap_pyfunction!(collapse_residual, m)?)?;
    m.add_function(wrap_pyfunction!(ccm_spectrum, m)?)?;
    Ok(())
}
