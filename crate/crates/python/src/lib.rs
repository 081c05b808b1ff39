//! Python bindings: the site basis, packets, recorded signals and their
//! inversion, plus the command-line stages.

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use parabloch::dynamics::{
    gaussian_coefficients as gaussian, record_q_signal, DoubletModel, ModeExpansion,
    PacketCoefficients, Signal, SignalSettings,
};
use parabloch::eigen::{build_hamiltonian, make_site_basis, pair_parities, solve_for_sites, SiteBasis};
use parabloch::error::ErrorKind;
use parabloch::harness::{
    cmd_evolve, cmd_reconstruct, cmd_spectrum, cmd_validate, EvolveOptions, RunConfig, RunOptions,
    SpectrumOptions,
};
use parabloch::lattice::{build_grid, LatticeConfig, DEFAULT_REDUCED_MASS};
use parabloch::spectral::{fold_resolution_check, reconstruct, FrequencyModel, ReconstructionSettings};

fn py_err(e: parabloch::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Config => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Parity-paired site states of one lattice.
#[pyclass(module = "pyparabloch", frozen)]
struct Basis {
    lattice: LatticeConfig,
    inner: SiteBasis,
}

#[pymethods]
impl Basis {
    #[new]
    #[pyo3(signature = (v0 = 90.0, reduced_mass = DEFAULT_REDUCED_MASS, points_per_period = 64, sites = (10, 32)))]
    fn new(v0: f64, reduced_mass: f64, points_per_period: usize, sites: (i32, i32)) -> PyResult<Self> {
        let lattice = LatticeConfig {
            v0,
            reduced_mass,
            points_per_period,
            ..LatticeConfig::default()
        };
        lattice.validate().map_err(py_err)?;
        let grid = build_grid(&lattice).map_err(py_err)?;
        let h = build_hamiltonian(&grid, &lattice);
        let spectrum = solve_for_sites(&h, sites.0..=sites.1).map_err(py_err)?;
        let pairs = pair_parities(&spectrum, sites.0..=sites.1).map_err(py_err)?;
        Ok(Basis {
            lattice,
            inner: make_site_basis(&pairs),
        })
    }

    /// Site energies with the spectral constant removed.
    fn energies(&self) -> BTreeMap<i32, f64> {
        self.inner.energies()
    }

    #[getter]
    fn constant(&self) -> f64 {
        self.inner.constant
    }

    #[getter]
    fn epsilon_l(&self) -> Option<f64> {
        self.inner.epsilon_l
    }

    fn values(&self, n: i32) -> PyResult<Vec<f64>> {
        self.inner
            .values(n)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyValueError::new_err(format!("site {n} is not in the basis")))
    }

    /// `Q0(t)` samples of a packet given as `{n: complex}`.
    #[pyo3(signature = (c, n0 = None, t_total = None, dt = None))]
    fn record(&self, c: BTreeMap<i32, Complex64>, n0: Option<i32>, t_total: Option<f64>, dt: Option<f64>) -> PyResult<Vec<f64>> {
        let coeffs = PacketCoefficients::from_amplitudes(c).map_err(py_err)?;
        let mut settings = SignalSettings::default();
        settings.t_total = t_total.unwrap_or(settings.t_total);
        settings.dt = dt.unwrap_or(settings.dt);
        let e = ModeExpansion::from_packet(&coeffs, &self.inner, DoubletModel::SiteMean).map_err(py_err)?;
        let s = record_q_signal(&e, &self.inner, n0.unwrap_or(coeffs.n0), &self.lattice, &settings).map_err(py_err)?;
        Ok(s.q0.samples().to_vec())
    }
}

/// Normalized Gaussian coefficients `{n: complex}`.
#[pyfunction]
#[pyo3(signature = (n0 = 21, delta_n = 7.0, phase_gradient = std::f64::consts::FRAC_PI_4))]
fn gaussian_coefficients(n0: i32, delta_n: f64, phase_gradient: f64) -> PyResult<BTreeMap<i32, Complex64>> {
    Ok(gaussian(n0, delta_n, phase_gradient).map_err(py_err)?.c)
}

/// Reconstructs `{n: complex}` from `Q0` samples over sites `lo..=hi`.
///
/// Frequencies come from `energies` when given, otherwise from the ideal
/// ladder `n²/2`.
#[pyfunction]
#[pyo3(signature = (samples, dt, sites, energies = None))]
fn reconstruct_signal(samples: Vec<f64>, dt: f64, sites: (i32, i32), energies: Option<BTreeMap<i32, f64>>) -> PyResult<BTreeMap<i32, Complex64>> {
    let signal = Signal::new(samples, dt).map_err(py_err)?;
    let settings = ReconstructionSettings {
        frequencies: energies.map_or(FrequencyModel::Ideal, FrequencyModel::Energies),
        ..ReconstructionSettings::default()
    };
    let (_, _, result) = reconstruct(&signal, sites, &settings, None, None).map_err(py_err)?;
    Ok(result.c)
}

/// `(resolved, gap)` of the fold inequality for a Gaussian packet.
#[pyfunction]
fn fold_gap(n0: i32, delta_n: f64) -> (bool, f64) {
    let r = fold_resolution_check(n0, delta_n);
    (r.resolved, r.gap)
}

fn load_config(config: Option<PathBuf>, out: Option<PathBuf>) -> PyResult<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(&p).map_err(py_err)?,
        None => RunConfig::default(),
    };
    if let Some(out) = out {
        cfg.output.dir = out;
    }
    Ok(cfg)
}

/// Runs `spectrum`, `evolve` and `reconstruct`; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (config = None, out = None))]
fn run_pipeline(config: Option<PathBuf>, out: Option<PathBuf>) -> PyResult<String> {
    let cfg = load_config(config, out)?;
    let run = RunOptions { seedless: true };
    cmd_spectrum(&cfg, &SpectrumOptions::default(), &run).map_err(py_err)?;
    cmd_evolve(&cfg, &EvolveOptions::default(), &run).map_err(py_err)?;
    let r = cmd_reconstruct(&cfg, &run).map_err(py_err)?;
    serde_json::to_string(&r.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs the invariant suite; returns `(passed, report JSON)`.
#[pyfunction]
#[pyo3(signature = (config = None, out = None))]
fn validate(config: Option<PathBuf>, out: Option<PathBuf>) -> PyResult<(bool, String)> {
    let cfg = load_config(config, out)?;
    let report = cmd_validate(&cfg, &RunOptions::default()).map_err(py_err)?;
    let json = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((report.passed, json))
}

#[pymodule]
fn pyparabloch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DEFAULT_REDUCED_MASS", DEFAULT_REDUCED_MASS)?;
    m.add_class::<Basis>()?;
    m.add_function(wrap_pyfunction!(gaussian_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_signal, m)?)?;
    m.add_function(wrap_pyfunction!(fold_gap, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
