use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_hamiltonian, pair_parities, solve_for_sites};
use crate::lattice::{build_grid, LatticeConfig};
use crate::{Error, Result};

/// Scan range and acceptance rule for [`calibrate_reduced_mass`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    /// Grid used for every scan point; its `v0` and `reduced_mass` are ignored.
    pub lattice: LatticeConfig,
    pub m_min: f64,
    pub m_max: f64,
    pub points: usize,
    /// Sites that must each hold exactly one doublet.
    pub basis_sites: (i32, i32),
    /// Sites whose splittings must satisfy the quasi-degeneracy bound.
    pub packet_sites: (i32, i32),
    /// Bound on `|δ^S - δ^A| / ω_B(n)`.
    pub splitting_fraction: f64,
    /// Points of the second scan inside the bracket of the best coarse run;
    /// zero skips it.
    pub refine_points: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            lattice: LatticeConfig::default(),
            m_min: 0.05,
            m_max: 1.0,
            points: 32,
            basis_sites: (10, 32),
            packet_sites: (14, 28),
            splitting_fraction: 1e-2,
            refine_points: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub reduced_mass: f64,
    pub passed: bool,
    /// Worst `|δ^S - δ^A| / ω_B(n)` over the packet sites, when pairing succeeded.
    pub max_splitting_ratio: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub v0: f64,
    pub settings: CalibrationSettings,
    pub scan: Vec<ScanPoint>,
    /// Failing (or range-end) neighbours of the best coarse run.
    pub bracket: (f64, f64),
    /// Logarithmic scan strictly inside `bracket`; empty without refinement.
    pub refined_scan: Vec<ScanPoint>,
    /// Endpoints of the largest contiguous run of passing points of the
    /// finest scan.
    pub interval: (f64, f64),
    /// Geometric midpoint of `interval`.
    pub midpoint: f64,
    pub midpoint_passed: bool,
    /// The midpoint if it passes, otherwise the passing scan point nearest to it.
    pub chosen: f64,
}

/// Evaluates one `(v0, M*)` point against the single-doublet criterion.
pub fn evaluate_point(v0: f64, reduced_mass: f64, settings: &CalibrationSettings) -> ScanPoint {
    let cfg = LatticeConfig {
        v0,
        reduced_mass,
        ..settings.lattice.clone()
    };
    let fail = |reason: String, ratio| ScanPoint {
        reduced_mass,
        passed: false,
        max_splitting_ratio: ratio,
        reason: Some(reason),
    };
    let (lo, hi) = settings.basis_sites;
    let grid = match build_grid(&cfg) {
        Ok(g) => g,
        Err(e) => return fail(e.to_string(), None),
    };
    let h = build_hamiltonian(&grid, &cfg);
    let spec = match solve_for_sites(&h, lo..=hi) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string(), None),
    };
    let pairs = match pair_parities(&spec, lo..=hi) {
        Ok(p) => p,
        Err(e) => return fail(e.to_string(), None),
    };
    let (plo, phi) = settings.packet_sites;
    let mut worst: f64 = 0.0;
    let mut worst_site = plo;
    for d in pairs.doublets.iter().filter(|d| d.site >= plo && d.site <= phi) {
        let ratio = d.splitting() / (d.site as f64 - 0.5);
        if ratio > worst {
            worst = ratio;
            worst_site = d.site;
        }
    }
    if worst >= settings.splitting_fraction {
        return fail(
            format!(
                "splitting at site {worst_site} is {worst:e} of the local Bloch frequency"
            ),
            Some(worst),
        );
    }
    ScanPoint {
        reduced_mass,
        passed: true,
        max_splitting_ratio: Some(worst),
        reason: None,
    }
}

/// Logarithmic scan of `M*` for the single-doublet-per-well regime.
///
/// The passing set is cut by narrow resonances where a site doublet mixes
/// with a delocalized level, so the longest coarse run is rescanned
/// between its failing neighbours and the longest fine run is used. The
/// result is its geometric midpoint, or the closest fine point that passes.
pub fn calibrate_reduced_mass(v0: f64, settings: &CalibrationSettings) -> Result<CalibrationReport> {
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(Error::Calibration(format!(
            "lattice depth {v0} has no wells to bind doublets"
        )));
    }
    if !(settings.m_min > 0.0 && settings.m_max > settings.m_min && settings.points >= 2) {
        return Err(Error::Config(format!(
            "calibration scan needs 0 < m_min < m_max and >= 2 points, got {}..{} with {}",
            settings.m_min, settings.m_max, settings.points
        )));
    }
    let scan = scan_masses(v0, &log_points(settings.m_min, settings.m_max, settings.points, true), settings);
    let Some((a, b)) = longest_run(&scan) else {
        let summary: Vec<String> = scan
            .iter()
            .map(|p| {
                format!(
                    "M*={:.4}: {}",
                    p.reduced_mass,
                    p.reason.as_deref().unwrap_or("ok")
                )
            })
            .collect();
        return Err(Error::Calibration(format!(
            "no M* in [{}, {}] gives one doublet per well at v0={v0}; scan: {}",
            settings.m_min,
            settings.m_max,
            summary.join("; ")
        )));
    };
    let bracket = (
        if a > 0 { scan[a - 1].reduced_mass } else { scan[a].reduced_mass },
        scan.get(b + 1).map_or(scan[b].reduced_mass, |p| p.reduced_mass),
    );
    // the coarse run hides narrow resonances; rescan its bracket finely
    let refined_scan = if settings.refine_points > 0 && bracket.1 > bracket.0 {
        scan_masses(v0, &log_points(bracket.0, bracket.1, settings.refine_points, false), settings)
    } else {
        Vec::new()
    };
    let finest = match longest_run(&refined_scan) {
        Some(run) => Some((&refined_scan, run)),
        None if refined_scan.is_empty() => Some((&scan, (a, b))),
        None => None,
    };
    let (points, (a, b)) = finest.unwrap_or((&scan, (a, b)));
    let interval = (points[a].reduced_mass, points[b].reduced_mass);
    let midpoint = (interval.0 * interval.1).sqrt();
    let check = evaluate_point(v0, midpoint, settings);
    let chosen = if check.passed {
        midpoint
    } else {
        (a..=b)
            .map(|i| points[i].reduced_mass)
            .min_by(|x, y| {
                (x / midpoint).ln().abs().total_cmp(&(y / midpoint).ln().abs())
            })
            .unwrap()
    };
    Ok(CalibrationReport {
        v0,
        settings: settings.clone(),
        scan,
        bracket,
        refined_scan,
        interval,
        midpoint,
        midpoint_passed: check.passed,
        chosen,
    })
}

/// `count` logarithmically spaced masses; with `inclusive` the ends are
/// part of the set, otherwise only interior points are returned.
fn log_points(lo: f64, hi: f64, count: usize, inclusive: bool) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    if inclusive {
        (0..count)
            .map(|i| lo * (ratio * i as f64 / (count - 1) as f64).exp())
            .collect()
    } else {
        (1..=count)
            .map(|i| lo * (ratio * i as f64 / (count + 1) as f64).exp())
            .collect()
    }
}

fn scan_masses(v0: f64, masses: &[f64], settings: &CalibrationSettings) -> Vec<ScanPoint> {
    masses
        .par_iter()
        .map(|&m| evaluate_point(v0, m, settings))
        .collect()
}

/// Largest contiguous run of passing points; ties go to the lighter mass.
fn longest_run(scan: &[ScanPoint]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for i in 0..=scan.len() {
        let pass = i < scan.len() && scan[i].passed;
        match (pass, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(a, b)| i - s > b - a + 1) {
                    best = Some((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}
