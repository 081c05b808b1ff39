//! The invariant suite behind `validate`: every module's properties checked
//! at the configured scale, each reported as a measured value against a bound.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::artifacts::ArtifactWriter;
use super::config::{PropagatorChoice, RunConfig};
use super::{basis_cache_path, load_basis, solve_lattice, RunOptions};
use crate::dynamics::{
    evolve_split_step, mean_position_series, mean_position_trace, packet_wavefunction,
    record_q_signal, split_step_limit, DoubletModel, ModeExpansion, PacketCoefficients,
    SeriesFrequencies, Signal,
};
use crate::eigen::{
    check_translation_invariance, make_site_basis, momentum_translation_error, EigenSpectrum,
    LadderFit, SiteBasis,
};
use crate::lattice::{build_grid, potential_at, sample_potential, LatticeConfig};
use crate::spectral::{
    amplitudes_two_fold, fold_resolution_check, reconstruct, reconstruct_phases, CoherenceTable,
    Estimator,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "value")]
pub enum Bound {
    #[serde(rename = "<")]
    Below(f64),
    #[serde(rename = ">")]
    Above(f64),
}

impl Bound {
    fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::Below(b) => v < b,
            Bound::Above(b) => v > b,
        }
    }

    /// Positive when the bound holds.
    fn margin(&self, v: f64) -> f64 {
        match *self {
            Bound::Below(b) => b - v,
            Bound::Above(b) => v - b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub module: String,
    pub name: String,
    pub measured: Option<f64>,
    pub bound: Bound,
    pub margin: Option<f64>,
    pub passed: bool,
    /// Advisory checks are reported but do not fail the suite.
    pub gating: bool,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub lattice_hash: String,
    pub checks: Vec<ValidationCheck>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn get(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| c.gating && !c.passed)
    }
}

#[derive(Default)]
struct Suite {
    checks: Vec<ValidationCheck>,
}

impl Suite {
    fn push(&mut self, module: &str, name: &str, measured: f64, bound: Bound, gating: bool, detail: Option<String>) {
        let ok = measured.is_finite() && bound.holds(measured);
        self.checks.push(ValidationCheck {
            module: module.into(),
            name: name.into(),
            measured: Some(measured),
            bound,
            margin: Some(bound.margin(measured)),
            passed: ok,
            gating,
            detail,
        });
    }

    fn check(&mut self, module: &str, name: &str, measured: f64, bound: Bound) {
        self.push(module, name, measured, bound, true, None);
    }

    fn unavailable(&mut self, module: &str, name: &str, bound: Bound, why: &str) {
        self.checks.push(ValidationCheck {
            module: module.into(),
            name: name.into(),
            measured: None,
            bound,
            margin: None,
            passed: false,
            gating: true,
            detail: Some(why.into()),
        });
    }
}

fn max_abs(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Runs the suite and writes `validation.json`. The report is returned
/// whether or not every check passed.
pub fn cmd_validate(cfg: &RunConfig, run: &RunOptions) -> Result<ValidationReport> {
    let mut w = ArtifactWriter::new(&cfg.output.dir)?;
    w.stage("config", |_| cfg.validate())?;
    let coeffs = cfg.packet_coefficients()?;
    let mut suite = Suite::default();
    w.stage("lattice", |_| lattice_checks(&cfg.lattice, &mut suite))?;
    let (spec, pairs) = w.stage("solve", |_| solve_lattice(cfg))?;
    let cache = basis_cache_path(w.root(), cfg);
    let basis = w.stage("basis", |_| {
        if cache.exists() {
            return load_basis(&cache).map(|b| Ok((b, true)));
        }
        Ok(pairs.as_ref().map(|p| (make_site_basis(p), false)).map_err(|e| e.to_string()))
    })?;
    let (plo, phi) = coeffs.support();
    match &pairs {
        Ok(p) => {
            suite.check("eigensolver", "one_doublet_per_well", p.doublets.len() as f64,
                Bound::Above(cfg.basis.sites.1 as f64 - cfg.basis.sites.0 as f64 + 0.5));
            let worst = p
                .doublets
                .iter()
                .filter(|d| d.site >= plo && d.site <= phi)
                .map(|d| d.splitting() / (d.site as f64 - 0.5))
                .fold(0.0, f64::max);
            suite.check("eigensolver", "doublet_splitting_fraction", worst, Bound::Below(1e-2));
        }
        Err(e) => {
            let why = e.to_string();
            suite.unavailable("eigensolver", "one_doublet_per_well", Bound::Above(0.0), &why);
            suite.unavailable("eigensolver", "doublet_splitting_fraction", Bound::Below(1e-2), &why);
        }
    }
    w.stage("eigensolver", |_| {
        suite.check("eigensolver", "spectrum_orthonormality", spec.orthonormality_error(), Bound::Below(1e-8));
        match &basis {
            Ok((b, _)) => basis_checks(cfg, b, &coeffs, &mut suite),
            Err(why) => {
                let why = format!("no site basis: {why}");
                for (name, bound) in [
                    ("ladder_fit_residual", Bound::Below(1e-2)),
                    ("basis_orthonormality", Bound::Below(1e-6)),
                    ("site_mean_position", Bound::Below(0.05)),
                    ("momentum_translation_error", Bound::Below(0.05)),
                    ("translation_overlap_far", Bound::Above(0.98)),
                ] {
                    suite.unavailable("eigensolver", name, bound, &why);
                }
                let loose = loose_translation_overlap(&spec, plo, phi);
                suite.push(
                    "eigensolver",
                    "translation_overlap_neighbours",
                    loose,
                    Bound::Above(0.99),
                    true,
                    Some(format!(
                        "{why}; measured on the eigenstates with the most weight near each site"
                    )),
                );
            }
        }
        Ok(())
    })?;
    if let Ok((b, _)) = &basis {
        w.stage("refinement", |_| refinement_checks(cfg, b, &spec, &mut suite))?;
        w.stage("dynamics", |_| dynamics_checks(cfg, b, &coeffs, &mut suite))?;
        w.stage("spectral", |_| spectral_checks(cfg, b, &coeffs, &mut suite))?;
    }
    let passed = suite.checks.iter().all(|c| c.passed || !c.gating);
    let report = ValidationReport {
        config_hash: cfg.config_hash(),
        lattice_hash: cfg.lattice_hash(),
        checks: suite.checks,
        passed,
    };
    w.write_json("validation.json", &report)?;
    w.finish("validate", &cfg.config_hash(), &cfg.lattice_hash(), run.seedless)?;
    Ok(report)
}

fn lattice_checks(cfg: &LatticeConfig, suite: &mut Suite) -> Result<()> {
    let grid = build_grid(cfg)?;
    let v = sample_potential(&grid, cfg);
    if grid.is_symmetric() {
        let asym = max_abs(v.iter().zip(v.iter().rev()).map(|(a, b)| a - b));
        suite.check("lattice", "potential_symmetry", asym, Bound::Below(1e-12));
    }
    let step = max_abs(grid.x().iter().map(|&x| {
        potential_at(x + 1.0, cfg.v0) - potential_at(x, cfg.v0) - (x + 0.5)
    }));
    suite.check("lattice", "potential_period_difference", step, Bound::Below(1e-9));
    Ok(())
}

fn basis_checks(cfg: &RunConfig, b: &SiteBasis, coeffs: &PacketCoefficients, suite: &mut Suite) {
    let (blo, bhi) = cfg.basis.sites;
    let (plo, phi) = coeffs.support();
    let m = "eigensolver";
    if let Some(fit) = LadderFit::new(b, blo, bhi) {
        suite.push(
            m,
            "ladder_fit_residual",
            fit.minimax.1,
            Bound::Below(1e-2),
            true,
            Some(format!(
                "least-squares constant gives {:.3e}; free slope {:.6} gives {:.3e}",
                fit.least_squares.1, fit.slope.0, fit.slope.1
            )),
        );
    }
    suite.check(m, "basis_orthonormality", b.orthonormality_error(), Bound::Below(1e-6));
    let pos = max_abs((plo..=phi).filter_map(|n| b.mean_position(n).map(|x| x - n as f64)));
    suite.check(m, "site_mean_position", pos, Bound::Below(0.05));
    let neighbours = (plo..phi)
        .filter_map(|n| check_translation_invariance(b, n, n + 1))
        .fold(f64::INFINITY, f64::min);
    suite.check(m, "translation_overlap_neighbours", neighbours, Bound::Above(0.99));
    let far = check_translation_invariance(b, plo, phi).unwrap_or(0.0);
    suite.check(m, "translation_overlap_far", far, Bound::Above(0.98));
    let mt = (plo..=phi)
        .filter_map(|n| momentum_translation_error(b, n, coeffs.n0))
        .fold(0.0, f64::max);
    suite.check(m, "momentum_translation_error", mt, Bound::Below(0.05));
    for k in 0..=2 {
        if let Some(spread) = b.coupling(k).and_then(|c| c.relative_spread_over(plo, phi)) {
            suite.push(
                m,
                &format!("dipole_uniformity_x{k}"),
                spread,
                Bound::Below(0.05),
                false,
                Some("advisory: the couplings follow the well shape, which tilts with n".into()),
            );
        }
    }
}

/// Same solve at twice the grid density.
fn refinement_checks(cfg: &RunConfig, b: &SiteBasis, spec: &EigenSpectrum, suite: &mut Suite) -> Result<()> {
    let mut fine = cfg.clone();
    fine.lattice.points_per_period *= 2;
    let (fspec, fpairs) = solve_lattice(&fine)?;
    let m = "eigensolver";
    let Ok(fpairs) = fpairs else {
        suite.unavailable(m, "refinement_site_energies", Bound::Below(1e-6), "pairing fails on the refined grid");
        return Ok(());
    };
    let fb = make_site_basis(&fpairs);
    let de = b
        .energies()
        .iter()
        .filter_map(|(n, &e)| fb.energy(*n).map(|f| (e - f).abs() / f.abs()))
        .fold(0.0, f64::max);
    suite.check(m, "refinement_site_energies", de, Bound::Below(1e-6));
    if let (Some(a), Some(f)) = (spec.epsilon_l, fspec.epsilon_l) {
        suite.push(m, "refinement_epsilon_l", (a - f).abs() / f.abs(), Bound::Below(1e-6), false,
            Some("advisory: fourth-order grid error of a delocalized level".into()));
    }
    for k in 0..=3 {
        let (Some(x), Some(y)) = (b.coupling(k), fb.coupling(k)) else { continue };
        let worst = x
            .per_site
            .iter()
            .filter_map(|(n, &v)| y.per_site.get(n).map(|&u| (v - u).abs() / u.abs()))
            .fold(0.0, f64::max);
        suite.push(m, &format!("refinement_x{k}"), worst, Bound::Below(1e-6), false,
            Some("advisory: fourth-order grid error, relative to small couplings".into()));
    }
    Ok(())
}

fn dynamics_checks(cfg: &RunConfig, b: &SiteBasis, coeffs: &PacketCoefficients, suite: &mut Suite) -> Result<()> {
    let m = "dynamics";
    let psi0 = packet_wavefunction(coeffs, b)?;
    suite.check(m, "packet_norm", (psi0.norm() - 1.0).abs(), Bound::Below(1e-10));
    let e = ModeExpansion::from_packet(coeffs, b, DoubletModel::SiteMean)?;
    let t_total = cfg.evolution.t_total;
    suite.check(m, "eigenbasis_unitarity", (e.at(t_total).norm() - 1.0).abs(), Bound::Below(1e-10));

    // one local Bloch period of the packet centre
    let period = 2.0 * PI / (coeffs.n0 as f64 - 0.5);
    let grid = build_grid(&cfg.lattice)?;
    let limit = split_step_limit(&cfg.lattice, &grid);
    let dt_int = match cfg.evolution.propagator {
        PropagatorChoice::Splitstep => cfg.dt_int()?,
        PropagatorChoice::Eigen => 0.99 * limit,
    };
    let ss = evolve_split_step(&psi0, &cfg.lattice, period, dt_int)?;
    let reference = e.clone().shifted(b.constant).at(period);
    suite.check(m, "split_step_unitarity", (ss.norm() - 1.0).abs(), Bound::Below(1e-10));
    suite.push(m, "propagator_equivalence", ss.l2_distance(&reference), Bound::Below(1e-4), true,
        Some(format!("over one Bloch period {period}, dt_int {dt_int:e}")));

    let times: Vec<f64> = (0..=100).map(|k| period * k as f64 / 100.0).collect();
    let grid_x = mean_position_trace(&e, &times);
    let series: Vec<f64> = times
        .iter()
        .map(|&t| mean_position_series(coeffs, b, t, SeriesFrequencies::Ideal))
        .collect();
    let swing = grid_x.iter().cloned().fold(f64::MIN, f64::max) - grid_x.iter().cloned().fold(f64::MAX, f64::min);
    let diff = max_abs(grid_x.iter().zip(&series).map(|(a, s)| a - s));
    suite.push(m, "mean_position_series", diff / swing.max(1e-12), Bound::Below(0.01), true,
        Some("max deviation relative to the oscillation swing".into()));

    // revival after 4π, limited by the ladder residuals
    let fit: BTreeMap<i32, f64> = coeffs
        .c
        .keys()
        .map(|&n| (n, b.energy(n).unwrap() - 0.5 * (n * n) as f64))
        .collect();
    let mean = coeffs.c.iter().map(|(n, z)| z.norm_sqr() * fit[n]).sum::<f64>();
    let allowed = coeffs
        .c
        .iter()
        .map(|(n, z)| z.norm_sqr() * (4.0 * PI * (fit[n] - mean)).powi(2))
        .sum::<f64>()
        .sqrt();
    let revival = e.at(4.0 * PI).l2_distance_up_to_phase(&e.at(0.0));
    suite.push(m, "revival", revival, Bound::Below(1.01 * allowed + 1e-9), true,
        Some("bound from the residuals of ε_n against n²/2".into()));

    let mut settings = cfg.signal_settings()?;
    settings.propagator = crate::dynamics::Propagator::Eigenbasis;
    let signal = record_q_signal(&e, b, coeffs.n0, &cfg.lattice, &settings)?;
    suite.check(m, "signal_imaginary_residue", signal.imaginary_residue, Bound::Below(1e-12));
    Ok(())
}

fn spectral_checks(cfg: &RunConfig, b: &SiteBasis, coeffs: &PacketCoefficients, suite: &mut Suite) -> Result<()> {
    let m = "spectral";
    if cfg.packet.amplitudes.is_none() {
        let r = fold_resolution_check(cfg.packet.n0, cfg.packet.delta_n);
        suite.check(m, "fold_gap", r.gap, Bound::Above(0.0));
    }
    let table = CoherenceTable::exact(coeffs);
    let tf = amplitudes_two_fold(&table);
    let identity = max_abs(tf.raw.iter().map(|(n, v)| v - coeffs.get(*n).norm_sqr()));
    suite.check(m, "two_fold_identity", identity, Bound::Below(1e-13));

    let rotated = CoherenceTable::exact(&coeffs.rotated(1.234));
    let gauge_q = max_abs(
        table.q1.iter().chain(&table.q2).zip(rotated.q1.iter().chain(&rotated.q2))
            .map(|((_, a), (_, r))| (a.value - r.value).norm()),
    );
    let amps: BTreeMap<i32, f64> = coeffs.c.iter().map(|(&n, z)| (n, z.norm())).collect();
    let pa = reconstruct_phases(&table, &amps);
    let pr = reconstruct_phases(&rotated, &amps);
    let gauge_p = max_abs(pa.phases.iter().zip(&pr.phases).map(|((_, a), (_, r))| a - r));
    suite.check(m, "global_phase_gauge", gauge_q.max(gauge_p), Bound::Below(1e-12));

    let n = 4097;
    let dt = cfg.evolution.dt;
    let s1 = Signal::from_fn(n, dt, |t| (20.5 * t).cos() + 0.3 * (7.1 * t).sin())?;
    let s2 = Signal::from_fn(n, dt, |t| (t * 0.37).sin().powi(3))?;
    let mix = Signal::new(s1.samples().iter().zip(s2.samples()).map(|(a, c)| 2.0 * a - 0.5 * c).collect(), dt)?;
    let est = Estimator::default();
    let lin = [3.0, 20.5, 41.0]
        .iter()
        .map(|&w| -> Result<f64> {
            let lhs = est.estimate(&mix, w)?;
            let rhs: Complex64 = 2.0 * est.estimate(&s1, w)? - 0.5 * est.estimate(&s2, w)?;
            Ok((lhs - rhs).norm() / rhs.norm().max(1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    suite.check(m, "estimator_linearity", max_abs(lin), Bound::Below(1e-12));

    let e = ModeExpansion::from_packet(coeffs, b, cfg.evolution.doublets)?;
    let mut settings = cfg.signal_settings()?;
    settings.propagator = crate::dynamics::Propagator::Eigenbasis;
    let signal = record_q_signal(&e, b, coeffs.n0, &cfg.lattice, &settings)?;
    let sites = cfg.reconstruction_sites(coeffs);
    let rs = cfg.reconstruction_settings(Some(b.energies()));
    match reconstruct(&signal.q0, sites, &rs, Some(b), Some(coeffs)) {
        Ok((table, _, result)) => {
            let env = table
                .q1
                .iter()
                .map(|(n, q)| {
                    let t = (coeffs.get(*n) * coeffs.get(n - 1).conj()).norm();
                    (q.value.norm() - t).abs() / t
                })
                .fold(0.0, f64::max);
            suite.check(m, "first_fold_envelope", env, Bound::Below(0.05));
            suite.check(m, "reconstruction_fidelity", result.fidelity.unwrap_or(0.0), Bound::Above(0.99));
            suite.check(m, "reconstruction_amplitude_error", result.max_amplitude_error(), Bound::Below(0.02));
            suite.check(m, "reconstruction_phase_error", result.max_phase_error(), Bound::Below(0.05));
        }
        Err(e @ Error::FoldOverlap(_)) => {
            suite.unavailable(m, "reconstruction_fidelity", Bound::Above(0.99), &e.to_string());
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

/// Neighbour translation overlap of the right-half restrictions of the
/// eigenstates with the most weight within one period of each site.
fn loose_translation_overlap(spec: &EigenSpectrum, lo: i32, hi: i32) -> f64 {
    let grid = spec.grid();
    let x = grid.x();
    let dx = grid.dx();
    let pick = |n: i32| -> Vec<f64> {
        let weight = |s: &Vec<f64>| {
            s.iter()
                .zip(x)
                .filter(|(_, &xv)| (xv - n as f64).abs() <= 1.0)
                .map(|(v, _)| v * v)
                .sum::<f64>()
        };
        let best = spec
            .states
            .iter()
            .max_by(|a, b| weight(a).total_cmp(&weight(b)))
            .unwrap();
        let mut half: Vec<f64> = best.iter().zip(x).map(|(&v, &xv)| if xv > 0.0 { v } else { 0.0 }).collect();
        let norm = (half.iter().map(|v| v * v).sum::<f64>() * dx).sqrt();
        half.iter_mut().for_each(|v| *v /= norm);
        half
    };
    let ppp = grid.points_per_period();
    let mut worst = f64::INFINITY;
    let mut prev = pick(lo);
    for n in lo + 1..=hi {
        let cur = pick(n);
        let overlap: f64 = (ppp..cur.len()).map(|j| cur[j] * prev[j - ppp]).sum::<f64>() * dx;
        worst = worst.min(overlap.abs());
        prev = cur;
    }
    worst
}
