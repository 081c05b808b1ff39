//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the lines are printed by
//! `cargo test` without `--nocapture`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use parabloch::dynamics::{
    evolve_split_step_with, gaussian_coefficients, packet_wavefunction, record_q_signal,
    split_step_limit, DoubletModel, KineticModel, ModeExpansion, PacketCoefficients,
    RecordedSignal, Signal, SignalSettings,
};
use parabloch::eigen::{
    build_hamiltonian, calibrate_reduced_mass, make_site_basis, pair_parities, solve_for_sites,
    solve_spectrum, CalibrationSettings, EigenSpectrum, LadderFit, Parity, SiteBasis, StateLabel,
};
use parabloch::harness::{
    cmd_evolve, cmd_reconstruct, cmd_spectrum, cmd_validate, EvolveOptions, RunConfig, RunOptions,
    SpectrumOptions,
};
use parabloch::lattice::{build_grid, LatticeConfig, DEFAULT_REDUCED_MASS};
use parabloch::spectral::{
    amplitudes_two_fold, fold_resolution_check, locate_peak, reconstruct, CoherenceTable,
    Estimator, ReconstructionSettings,
};

// Tolerances, fixed here once.
const LADDER_RESIDUAL: f64 = 1e-2;
const SPLITTING_FRACTION: f64 = 1e-2;
const SPECTRUM_RUNTIME: Duration = Duration::from_secs(60);
const PROPAGATOR_GAP: f64 = 1e-4;
const HALVING_RATIO: (f64, f64) = (3.5, 4.5);
const SIGNIFICANCE: f64 = 3.0;
const ENVELOPE_ERROR: f64 = 0.05;
const AMPLITUDE_ERROR: f64 = 0.02;
const PHASE_ERROR: f64 = 0.05;
const FIDELITY: f64 = 0.99;
const PIPELINE_RUNTIME: Duration = Duration::from_secs(300);
const IDENTITY_ERROR: f64 = 1e-13;
const GAUGE_ERROR: f64 = 1e-12;
const ADMIXTURE_FACTOR: f64 = 3.0;
const HARMONIC_SPACING: f64 = 1e-4;
const TWO_SITE_ERROR: f64 = 1e-3;
/// Seeds of the randomized packets of criterion 6.
const PACKET_SEEDS: std::ops::Range<u64> = 0..50;

const SITES: (i32, i32) = (10, 32);
const N0: i32 = 21;
const DELTA_N: f64 = 7.0;

struct Fixture {
    cfg: LatticeConfig,
    spectrum: EigenSpectrum,
    basis: SiteBasis,
    coeffs: PacketCoefficients,
    signal: RecordedSignal,
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn max(iter: impl IntoIterator<Item = f64>) -> f64 {
    iter.into_iter().fold(0.0, f64::max)
}

fn fixture() -> Fixture {
    let cfg = LatticeConfig::default();
    let grid = build_grid(&cfg).unwrap();
    let spectrum = solve_for_sites(&build_hamiltonian(&grid, &cfg), SITES.0..=SITES.1).unwrap();
    let basis = make_site_basis(&pair_parities(&spectrum, SITES.0..=SITES.1).unwrap());
    let coeffs = gaussian_coefficients(N0, DELTA_N, PI / 4.0).unwrap();
    let e = ModeExpansion::from_packet(&coeffs, &basis, DoubletModel::SiteMean).unwrap();
    let signal = record_q_signal(&e, &basis, N0, &cfg, &SignalSettings::default()).unwrap();
    Fixture { cfg, spectrum, basis, coeffs, signal }
}

fn settings(f: &Fixture) -> ReconstructionSettings {
    RunConfig::default().reconstruction_settings(Some(f.basis.energies()))
}

fn spectrum_structure() -> Outcome {
    let start = Instant::now();
    let report = calibrate_reduced_mass(90.0, &CalibrationSettings::default()).unwrap();
    let calibration_time = start.elapsed();
    let calibrated = (report.chosen - DEFAULT_REDUCED_MASS).abs() <= 1e-12 * DEFAULT_REDUCED_MASS;

    let cfg = LatticeConfig { reduced_mass: report.chosen, ..Default::default() };
    let start = Instant::now();
    let grid = build_grid(&cfg).unwrap();
    let spectrum = solve_for_sites(&build_hamiltonian(&grid, &cfg), SITES.0..=SITES.1).unwrap();
    let pairs = pair_parities(&spectrum, SITES.0..=SITES.1);
    let solve_time = start.elapsed();
    let Ok(pairs) = pairs else {
        return outcome(false, format!("no doublet pairing at M* = {}", report.chosen));
    };
    let doublets = (SITES.0..=SITES.1)
        .filter(|&n| pairs.doublets.iter().filter(|d| d.site == n).count() == 1)
        .count() as i32;
    let one_per_well = doublets == SITES.1 - SITES.0 + 1 && pairs.doublets.len() as i32 == doublets;
    let basis = make_site_basis(&pairs);
    let fit = LadderFit::new(&basis, SITES.0, SITES.1).unwrap();
    let (lo, hi) = gaussian_coefficients(N0, DELTA_N, 0.0).unwrap().support();
    let splitting = max(pairs
        .doublets
        .iter()
        .filter(|d| d.site >= lo && d.site <= hi)
        .map(|d| d.splitting() / (d.site as f64 - 0.5)));
    let passed = calibrated
        && one_per_well
        && fit.minimax.1 < LADDER_RESIDUAL
        && splitting < SPLITTING_FRACTION
        && solve_time < SPECTRUM_RUNTIME;
    outcome(
        passed,
        format!(
            "M* = {:.6} (interval {:.5}..{:.5}, scan {:.0?}); {doublets} doublets over sites {}..={}; \
             ladder residual {:.2e} < {LADDER_RESIDUAL:e} (least-squares constant {:.2e}); \
             splitting {:.1e} of ω_B < {SPLITTING_FRACTION:e}; solve {:.1?} on {} points",
            report.chosen, report.interval.0, report.interval.1, calibration_time, SITES.0, SITES.1,
            fit.minimax.1, fit.least_squares.1, splitting, solve_time, grid.len()
        ),
    )
}

fn propagator_cross_oracle(f: &Fixture) -> Outcome {
    let period = 2.0 * PI / (N0 as f64 - 0.5);
    let psi0 = packet_wavefunction(&f.coeffs, &f.basis).unwrap();
    let grid = f.basis.grid().clone();
    let dt_int = RunConfig::default().dt_int().unwrap();
    assert!(dt_int < split_step_limit(&f.cfg, &grid));
    let site_mean = ModeExpansion::from_packet(&f.coeffs, &f.basis, DoubletModel::SiteMean)
        .unwrap()
        .shifted(f.basis.constant)
        .at(period);
    let resolved = ModeExpansion::from_packet(&f.coeffs, &f.basis, DoubletModel::Resolved)
        .unwrap()
        .shifted(f.basis.constant)
        .at(period);
    let coarse = evolve_split_step_with(&psi0, &f.cfg, period, dt_int, KineticModel::Stencil).unwrap();
    let fine = evolve_split_step_with(&psi0, &f.cfg, period, dt_int / 2.0, KineticModel::Stencil).unwrap();
    let gap = coarse.l2_distance(&site_mean);
    let ratio = coarse.l2_distance(&resolved) / fine.l2_distance(&resolved);
    outcome(
        gap < PROPAGATOR_GAP && ratio > HALVING_RATIO.0 && ratio < HALVING_RATIO.1,
        format!(
            "L² gap {gap:.2e} < {PROPAGATOR_GAP:e} over t = {period:.5} at dt_int {dt_int:.3e}; \
             halving dt_int shrinks the gap to the exact grid evolution {ratio:.3}x"
        ),
    )
}

fn peak_placement(f: &Fixture) -> Outcome {
    let (table, _, _) = reconstruct(&f.signal.q0, f.coeffs.support(), &settings(f), Some(&f.basis), None).unwrap();
    let est = Estimator::default();
    let signal = &f.signal.q0;
    let resolution = 2.0 * PI / signal.t_total();
    // a local maximum inside ±2 resolutions, within one resolution of the prediction
    let peak_offset = |omega: f64| -> Option<f64> {
        let (w, _) = locate_peak(&est, signal, omega, 2.0 * resolution, 80).unwrap();
        let interior = (w - omega).abs() < 2.0 * resolution * (1.0 - 1e-9);
        interior.then_some(w - omega)
    };
    let floor = table.noise_floor;
    let mut first = Vec::new();
    let mut second = Vec::new();
    for n in table.sites.0..=table.sites.1 {
        if (f.coeffs.get(n) * f.coeffs.get(n - 1).conj()).norm() > SIGNIFICANCE * floor {
            first.push((n, peak_offset(n as f64 - 0.5)));
        }
        if (f.coeffs.get(n) * f.coeffs.get(n - 2).conj()).norm() > SIGNIFICANCE * floor {
            second.push((n, peak_offset(2.0 * (n as f64 - 1.0))));
        }
    }
    let worst = |v: &[(i32, Option<f64>)]| {
        v.iter().map(|(_, o)| o.map_or(f64::INFINITY, f64::abs)).fold(0.0, f64::max)
    };
    let placed = worst(&first) < resolution && worst(&second) < resolution;
    let fold = fold_resolution_check(N0, DELTA_N);

    // disjointness against the inequality over a range of widths, on
    // signals built from the ideal ladder
    let mut agree = 0;
    let widths: Vec<f64> = (3..=17).map(f64::from).collect();
    for &dn in &widths {
        let c = gaussian_coefficients(N0, dn, PI / 4.0).unwrap();
        let s = ideal_signal(&c, SignalSettings::default());
        let r = fold_resolution_check(N0, dn);
        let top_site = (N0 as f64 + dn / 2.0 + 1.0).round() as i32;
        let bottom_site = (N0 as f64 - dn / 2.0).round() as i32;
        let (top, _) = locate_peak(&est, &s, top_site as f64 - 0.5, 2.0 * resolution, 80).unwrap();
        let (bottom, _) = locate_peak(&est, &s, 2.0 * (bottom_site as f64 - 1.0), 2.0 * resolution, 80).unwrap();
        if (top < bottom) == r.resolved {
            agree += 1;
        }
    }
    let passed = placed && fold.gap == 8.0 && agree == widths.len();
    outcome(
        passed,
        format!(
            "{} first-fold and {} second-fold peaks above {SIGNIFICANCE}x floor {floor:.1e}, worst offsets \
             {:.1e} and {:.1e} < {resolution:.3}; fold gap {} at n0 = {N0}, Δn = {DELTA_N}; \
             measured disjointness matches the inequality for {agree}/{} widths",
            first.len(), second.len(), worst(&first), worst(&second), fold.gap, widths.len()
        ),
    )
}

/// `Q0(t) = Σ_{n≠m} c_n c_m* e^{-i(ε_n - ε_m)t}` on the ideal ladder.
fn ideal_signal(c: &PacketCoefficients, s: SignalSettings) -> Signal {
    let count = (s.t_total / s.dt).round() as usize + 1;
    let terms: Vec<(Complex64, f64)> = c
        .c
        .iter()
        .flat_map(|(&n, &a)| {
            c.c.iter()
                .filter(move |(&m, _)| m != n)
                .map(move |(&m, &b)| (a * b.conj(), 0.5 * (n * n - m * m) as f64))
        })
        .collect();
    Signal::from_fn(count, s.dt, |t| {
        terms.iter().map(|(w, e)| (w * Complex64::from_polar(1.0, -e * t)).re).sum()
    })
    .unwrap()
}

fn envelope(f: &Fixture) -> Outcome {
    let (table, _, _) = reconstruct(&f.signal.q0, f.coeffs.support(), &settings(f), Some(&f.basis), None).unwrap();
    let errors: Vec<f64> = table
        .q1
        .iter()
        .filter(|(_, q)| q.value.norm() > table.threshold)
        .map(|(n, q)| {
            let truth = (f.coeffs.get(*n) * f.coeffs.get(n - 1).conj()).norm();
            (q.value.norm() - truth).abs() / truth
        })
        .collect();
    let worst = max(errors.iter().copied());
    outcome(
        worst < ENVELOPE_ERROR && !errors.is_empty(),
        format!("{} significant sites, worst relative error {worst:.2e} < {ENVELOPE_ERROR}", errors.len()),
    )
}

fn reconstruction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.output.dir = dir.path().to_path_buf();
    let run = RunOptions { seedless: true };
    let start = Instant::now();
    cmd_spectrum(&cfg, &SpectrumOptions::default(), &run).unwrap();
    cmd_evolve(&cfg, &EvolveOptions::default(), &run).unwrap();
    let out = cmd_reconstruct(&cfg, &run).unwrap();
    let elapsed = start.elapsed();
    let r = &out.result;
    let fidelity = r.fidelity.unwrap_or(0.0);
    let amp = r.max_amplitude_error();
    let phase = r.max_phase_error();
    outcome(
        out.cached_signal
            && fidelity > FIDELITY
            && amp < AMPLITUDE_ERROR
            && phase < PHASE_ERROR
            && elapsed < PIPELINE_RUNTIME,
        format!(
            "{} sites: amplitude error {amp:.2e} < {AMPLITUDE_ERROR} of max|c|, phase error {phase:.2e} \
             < {PHASE_ERROR} rad, fidelity {fidelity:.7} > {FIDELITY}; pipeline {elapsed:.1?}",
            r.c.len()
        ),
    )
}

fn algebraic_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in PACKET_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = rng.random_range(3..30);
        let len = rng.random_range(2..20);
        let c: BTreeMap<i32, Complex64> = (lo..lo + len)
            .map(|n| (n, Complex64::from_polar(rng.random_range(0.05..1.0), rng.random_range(-PI..PI))))
            .collect();
        let packet = PacketCoefficients::from_amplitudes(c).unwrap();
        let tf = amplitudes_two_fold(&CoherenceTable::exact(&packet));
        for (n, v) in &tf.raw {
            worst = worst.max((v - packet.get(*n).norm_sqr()).abs());
        }
    }
    outcome(
        worst < IDENTITY_ERROR,
        format!("{} packets (seeds {:?}), worst |c_n|² error {worst:.1e} < {IDENTITY_ERROR:e}", PACKET_SEEDS.count(), PACKET_SEEDS),
    )
}

fn gauge_and_robustness(f: &Fixture) -> Outcome {
    let s = settings(f);
    let support = f.coeffs.support();
    let (_, _, clean) = reconstruct(&f.signal.q0, support, &s, Some(&f.basis), Some(&f.coeffs)).unwrap();

    // global phase
    let rotated = f.coeffs.rotated(1.234);
    let e = ModeExpansion::from_packet(&rotated, &f.basis, DoubletModel::SiteMean).unwrap();
    let sig = record_q_signal(&e, &f.basis, N0, &f.cfg, &SignalSettings::default()).unwrap();
    let (_, _, rot) = reconstruct(&sig.q0, support, &s, Some(&f.basis), Some(&rotated)).unwrap();
    let difference = |r: &BTreeMap<i32, Complex64>, n: i32| (r[&n] * r[&(n - 1)].conj()).arg();
    let gauge = max((support.0 + 1..=support.1).map(|n| {
        parabloch::spectral::wrap(difference(&rot.c, n) - difference(&clean.c, n)).abs()
    }));

    // delocalized admixture
    let deloc = (0..f.spectrum.len())
        .find(|&i| f.spectrum.labels[i] == StateLabel::Delocalized && f.spectrum.parities[i] == Parity::Even)
        .unwrap();
    let max_c = max(f.coeffs.c.values().map(|z| z.norm()));
    let mut worst_ratio: f64 = 0.0;
    for frac in [0.01f64, 0.05] {
        let mut e = ModeExpansion::new(f.basis.grid());
        for (&n, &cn) in &f.coeffs.c {
            e.push(cn * (1.0 - frac).sqrt(), f.basis.energy(n).unwrap(), f.basis.values(n).unwrap().to_vec());
        }
        e.push_eigenstate(&f.spectrum, deloc, Complex64::new(frac.sqrt(), 0.0), f.basis.constant);
        let sig = record_q_signal(&e, &f.basis, N0, &f.cfg, &SignalSettings::default()).unwrap();
        let (_, _, mixed) = reconstruct(&sig.q0, support, &s, Some(&f.basis), Some(&f.coeffs)).unwrap();
        let shift = max(clean.c.iter().map(|(n, z)| (mixed.c[n].norm() - z.norm()).abs() / max_c));
        worst_ratio = worst_ratio.max(shift / frac);
    }

    // shallow lattice
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.lattice.v0 = 5.0;
    cfg.output.dir = dir.path().to_path_buf();
    let report = cmd_validate(&cfg, &RunOptions::default()).unwrap();
    let translation = report
        .checks
        .iter()
        .find(|c| c.name == "translation_overlap_neighbours")
        .map(|c| (c.passed, c.measured));
    let shallow_fails = !report.passed && matches!(translation, Some((false, _)));

    outcome(
        gauge < GAUGE_ERROR && worst_ratio < ADMIXTURE_FACTOR && shallow_fails,
        format!(
            "phase differences under a global phase change by {gauge:.1e} < {GAUGE_ERROR:e}; \
             admixture of 1-5% shifts amplitudes by {worst_ratio:.1e}x the fraction < {ADMIXTURE_FACTOR}x; \
             V0 = 5 translation check {}",
            match translation {
                Some((false, Some(v))) => format!("fails ({v:.3})"),
                Some((false, None)) => "fails (no basis)".into(),
                Some((true, _)) => "passes".into(),
                None => "missing".into(),
            }
        ),
    )
}

fn analytic_limits(f: &Fixture) -> Outcome {
    let cfg = LatticeConfig { v0: 0.0, ..Default::default() };
    let grid = build_grid(&cfg).unwrap();
    let spec = solve_spectrum(&build_hamiltonian(&grid, &cfg), 20).unwrap();
    let omega = (1.0 / cfg.reduced_mass).sqrt();
    let spacing = max(spec.energies.windows(2).map(|w| ((w[1] - w[0]) / omega - 1.0).abs()));

    let two = PacketCoefficients::from_amplitudes(
        [(N0, Complex64::new(1.0, 0.0)), (N0 + 1, Complex64::new(1.0, 0.0))].into(),
    )
    .unwrap();
    let e = ModeExpansion::from_packet(&two, &f.basis, DoubletModel::SiteMean).unwrap();
    let sig = record_q_signal(&e, &f.basis, N0, &f.cfg, &SignalSettings::default()).unwrap();
    let bohr = f.basis.energy(N0 + 1).unwrap() - f.basis.energy(N0).unwrap();
    let ideal = N0 as f64 + 0.5;
    let q = &sig.q0;
    let deviation = max((0..q.len()).map(|k| (q.samples()[k] - (bohr * q.time(k)).cos()).abs()));
    let period = 2.0 * PI / ideal;
    let ideal_deviation = max((0..q.len())
        .filter(|&k| q.time(k) <= period)
        .map(|k| (q.samples()[k] - (ideal * q.time(k)).cos()).abs()));
    outcome(
        spacing < HARMONIC_SPACING && deviation < TWO_SITE_ERROR,
        format!(
            "V0 = 0 spacing off (1/M*)^½ by {spacing:.1e} < {HARMONIC_SPACING:e}; two-site Q0 off \
             cos(ωt) by {deviation:.1e} < {TWO_SITE_ERROR:e} over t = {:.1} with ω = ε_{} - ε_{N0} = {bohr:.5} \
             (against n0 + ½ = {ideal}: {ideal_deviation:.1e} within one period)",
            q.t_total(), N0 + 1
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let f = fixture();
    println!("fixture: default lattice, sites {}..={}, packet n0 = {N0}, Δn = {DELTA_N} ({:.1?})", SITES.0, SITES.1, start.elapsed());
    let criteria: [(&str, &dyn Fn() -> Outcome); 8] = [
        ("spectrum structure", &spectrum_structure),
        ("propagator cross-oracle", &|| propagator_cross_oracle(&f)),
        ("peak placement", &|| peak_placement(&f)),
        ("envelope", &|| envelope(&f)),
        ("reconstruction", &reconstruction),
        ("algebraic identity", &algebraic_identity),
        ("gauge and robustness", &|| gauge_and_robustness(&f)),
        ("analytic limits", &|| analytic_limits(&f)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        if !o.passed {
            failed += 1;
        }
        println!(
            "criterion {} {} {name}: {} [{:.1?}]",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed()
        );
    }
    println!("{} of {} criteria passed in {:.1?}", criteria.len() - failed, criteria.len(), start.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
