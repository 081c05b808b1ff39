//! Config ingestion, the four pipeline stages and their artifacts.
//!
//! Every command writes into the configured output directory and records
//! the files it wrote, with checksums, in `manifest.json`. The site basis is
//! cached under `cache/<lattice hash>/basis.json` and reused by later
//! commands with the same lattice.

pub mod artifacts;
pub mod config;
pub mod validate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    mean_position_series, mean_position_trace, record_q_signal, ModeExpansion, PacketCoefficients,
    RecordedSignal, SeriesFrequencies, Signal,
};
use crate::eigen::{
    build_hamiltonian, calibrate_reduced_mass, make_site_basis, pair_parities, solve_for_sites,
    CalibrationReport, CalibrationSettings, EigenSpectrum, ParityPairs, SiteBasis, StateLabel,
};
use crate::lattice::build_grid;
use crate::spectral::{
    fold_resolution_check, reconstruct, AmplitudeSource, CoherenceTable, FoldResolution,
    RecoveredAmplitudes, ReconstructionResult,
};
use crate::{Error, Result};

pub use artifacts::{ArtifactWriter, CommandManifest, RunManifest};
pub use config::{PropagatorChoice, RunConfig};
pub use validate::{cmd_validate, Bound, ValidationCheck, ValidationReport};

use artifacts::{fmt, read_csv_columns, read_json, write_json};

/// Flags shared by every command.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Asserts that nothing random is involved; recorded in the manifest.
    pub seedless: bool,
}

pub const SIGNAL_COLUMNS: [&str; 3] = ["t", "P0", "Q0"];

pub fn basis_cache_path(root: &Path, cfg: &RunConfig) -> PathBuf {
    root.join("cache").join(cfg.lattice_hash()).join("basis.json")
}

/// Eigensolve for the configured basis sites, with the pairing attempt.
pub fn solve_lattice(cfg: &RunConfig) -> Result<(EigenSpectrum, Result<ParityPairs>)> {
    cfg.validate_lattice()?;
    let grid = build_grid(&cfg.lattice)?;
    let h = build_hamiltonian(&grid, &cfg.lattice);
    let (lo, hi) = cfg.basis.sites;
    let spec = solve_for_sites(&h, lo..=hi)?;
    let pairs = pair_parities(&spec, lo..=hi);
    Ok((spec, pairs))
}

pub fn load_basis(path: &Path) -> Result<SiteBasis> {
    let mut b: SiteBasis = read_json(path)?;
    b.refresh_momentum_profiles();
    Ok(b)
}

/// The cached site basis, solving and caching it if absent.
pub fn load_or_build_basis(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<SiteBasis> {
    let path = basis_cache_path(w.root(), cfg);
    let rel = path.strip_prefix(w.root()).unwrap().to_string_lossy().into_owned();
    if path.exists() {
        w.record(&rel);
        return load_basis(&path);
    }
    let (_, pairs) = solve_lattice(cfg)?;
    let basis = make_site_basis(&pairs?);
    write_json(&path, &basis)?;
    w.record(&rel);
    Ok(basis)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SpectrumOptions {
    pub calibrate: bool,
    pub states: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub lattice_hash: String,
    pub v0: f64,
    pub reduced_mass: f64,
    pub grid_points: usize,
    pub states: usize,
    pub localized: usize,
    pub delocalized: usize,
    pub epsilon_l: Option<f64>,
    pub basis_sites: (i32, i32),
    /// Doublet-mean constant removed from site energies, when pairing succeeded.
    pub constant: Option<f64>,
    pub pairing_error: Option<String>,
}

pub struct SpectrumOutput {
    pub spectrum: EigenSpectrum,
    pub basis: Option<SiteBasis>,
    pub calibration: Option<CalibrationReport>,
    pub summary: SpectrumSummary,
    pub manifest: CommandManifest,
}

/// Solves the lattice and writes `spectrum.csv`, `levels.csv`,
/// `spectrum.json`, and `sites.csv` plus the basis cache when the
/// localized branch pairs into doublets.
pub fn cmd_spectrum(cfg: &RunConfig, opts: &SpectrumOptions, run: &RunOptions) -> Result<SpectrumOutput> {
    let mut cfg = cfg.clone();
    cfg.validate_lattice().map_err(|e| e.in_stage("config"))?;
    let mut w = ArtifactWriter::new(&cfg.output.dir)?;
    let calibration = if opts.calibrate {
        let report = w.stage("calibrate", |w| {
            let (plo, phi) = cfg.packet_coefficients()?.support();
            let settings = CalibrationSettings {
                lattice: cfg.lattice.clone(),
                basis_sites: cfg.basis.sites,
                packet_sites: (plo, phi),
                ..CalibrationSettings::default()
            };
            let report = calibrate_reduced_mass(cfg.lattice.v0, &settings)?;
            w.write_json("calibration.json", &report)?;
            Ok(report)
        })?;
        cfg.lattice.reduced_mass = report.chosen;
        Some(report)
    } else {
        None
    };
    let (spec, pairs) = w.stage("solve", |_| solve_lattice(&cfg))?;
    let basis = w.stage("basis", |w| {
        let Ok(pairs) = &pairs else { return Ok(None) };
        let basis = make_site_basis(pairs);
        let path = basis_cache_path(w.root(), &cfg);
        write_json(&path, &basis)?;
        w.record(&path.strip_prefix(w.root()).unwrap().to_string_lossy());
        Ok(Some(basis))
    })?;
    let summary = w.stage("write", |w| {
        w.write_csv(
            "spectrum.csv",
            &["index", "energy", "label", "parity", "spread"],
            (0..spec.len()).map(|i| {
                vec![
                    i.to_string(),
                    fmt(spec.energies[i]),
                    spec.labels[i].as_str().to_string(),
                    spec.parities[i].as_str().to_string(),
                    fmt(spec.spreads[i]),
                ]
            }),
        )?;
        let loc: Vec<f64> = (0..spec.len())
            .filter(|&i| spec.labels[i] == StateLabel::Localized)
            .map(|i| spec.energies[i])
            .collect();
        let deloc: Vec<f64> = (0..spec.len())
            .filter(|&i| spec.labels[i] == StateLabel::Delocalized)
            .map(|i| spec.energies[i])
            .collect();
        let cell = |v: Option<&f64>| v.map(|&x| fmt(x)).unwrap_or_default();
        w.write_csv(
            "levels.csv",
            &["rank", "localized", "delocalized"],
            (0..loc.len().max(deloc.len()))
                .map(|k| vec![k.to_string(), cell(loc.get(k)), cell(deloc.get(k))]),
        )?;
        if let (Ok(pairs), Some(basis)) = (&pairs, &basis) {
            w.write_csv(
                "sites.csv",
                &[
                    "n", "energy", "energy_even", "energy_odd", "delta_s", "delta_a",
                    "localization", "mean_position",
                ],
                pairs.doublets.iter().map(|d| {
                    vec![
                        d.site.to_string(),
                        fmt(basis.energy(d.site).unwrap()),
                        fmt(d.energy_even),
                        fmt(d.energy_odd),
                        fmt(d.delta_s),
                        fmt(d.delta_a),
                        fmt(basis.localization_fraction(d.site).unwrap()),
                        fmt(basis.mean_position(d.site).unwrap()),
                    ]
                }),
            )?;
            if opts.states {
                for (&n, s) in &basis.sites {
                    w.write_csv(
                        &format!("states/phi_{n}.csv"),
                        &["x", "phi"],
                        basis
                            .grid()
                            .x()
                            .iter()
                            .zip(&s.values)
                            .map(|(&x, &v)| vec![fmt(x), fmt(v)]),
                    )?;
                }
            }
        }
        let summary = SpectrumSummary {
            lattice_hash: cfg.lattice_hash(),
            v0: cfg.lattice.v0,
            reduced_mass: cfg.lattice.reduced_mass,
            grid_points: spec.grid().len(),
            states: spec.len(),
            localized: loc.len(),
            delocalized: deloc.len(),
            epsilon_l: spec.epsilon_l,
            basis_sites: cfg.basis.sites,
            constant: basis.as_ref().map(|b| b.constant),
            pairing_error: pairs.as_ref().err().map(|e| e.to_string()),
        };
        w.write_json("spectrum.json", &summary)?;
        Ok(summary)
    })?;
    let manifest = w.finish("spectrum", &cfg.config_hash(), &cfg.lattice_hash(), run.seedless)?;
    Ok(SpectrumOutput {
        spectrum: spec,
        basis,
        calibration,
        summary,
        manifest,
    })
}

/// `signal.json`, the sidecar of `signal.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalMeta {
    pub signal_hash: String,
    pub lattice_hash: String,
    pub n0: i32,
    pub dt: f64,
    pub t_total: f64,
    pub samples: usize,
    pub propagator: String,
    pub dt_int: Option<f64>,
    pub probe_momentum: f64,
    pub reference: f64,
    pub imaginary_residue: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvolveOptions {
    pub xbar: bool,
}

pub struct EvolveOutput {
    pub coefficients: PacketCoefficients,
    pub signal: RecordedSignal,
    pub meta: SignalMeta,
    pub manifest: CommandManifest,
}

fn evolve_stages(cfg: &RunConfig, opts: &EvolveOptions, w: &mut ArtifactWriter) -> Result<(PacketCoefficients, SiteBasis, RecordedSignal, SignalMeta)> {
    let coeffs = w.stage("config", |_| {
        cfg.validate()?;
        let coeffs = cfg.packet_coefficients()?;
        cfg.check_folds(&coeffs)?;
        Ok(coeffs)
    })?;
    let basis = w.stage("basis", |w| load_or_build_basis(cfg, w))?;
    let (expansion, signal) = w.stage("evolve", |_| {
        let e = ModeExpansion::from_packet(&coeffs, &basis, cfg.evolution.doublets)?;
        let settings = cfg.signal_settings()?;
        let s = record_q_signal(&e, &basis, coeffs.n0, &cfg.lattice, &settings)?;
        Ok((e, s))
    })?;
    let meta = SignalMeta {
        signal_hash: cfg.signal_hash(),
        lattice_hash: cfg.lattice_hash(),
        n0: coeffs.n0,
        dt: signal.q0.dt(),
        t_total: signal.q0.t_total(),
        samples: signal.q0.len(),
        propagator: cfg.signal_settings()?.propagator.name().to_string(),
        dt_int: match cfg.evolution.propagator {
            PropagatorChoice::Splitstep => Some(cfg.dt_int()?),
            PropagatorChoice::Eigen => None,
        },
        probe_momentum: signal.probe_momentum,
        reference: signal.reference,
        imaginary_residue: signal.imaginary_residue,
    };
    w.stage("write", |w| {
        w.write_csv(
            "packet.csv",
            &["n", "re", "im", "abs", "arg"],
            coeffs.c.iter().map(|(n, z)| {
                vec![n.to_string(), fmt(z.re), fmt(z.im), fmt(z.norm()), fmt(z.arg())]
            }),
        )?;
        w.write_csv(
            "signal.csv",
            &SIGNAL_COLUMNS,
            (0..signal.q0.len()).map(|k| {
                vec![
                    fmt(signal.q0.time(k)),
                    fmt(signal.p0.samples()[k]),
                    fmt(signal.q0.samples()[k]),
                ]
            }),
        )?;
        w.write_json("signal.json", &meta)?;
        if opts.xbar {
            let times: Vec<f64> = (0..signal.q0.len()).map(|k| signal.q0.time(k)).collect();
            let grid = mean_position_trace(&expansion, &times);
            w.write_csv(
                "xbar.csv",
                &["t", "xbar", "xbar_series"],
                times.iter().zip(&grid).map(|(&t, &x)| {
                    let s = mean_position_series(&coeffs, &basis, t, SeriesFrequencies::Energies);
                    vec![fmt(t), fmt(x), fmt(s)]
                }),
            )?;
        }
        Ok(())
    })?;
    Ok((coeffs, basis, signal, meta))
}

/// Synthesizes the packet and records `P0(t)` and `Q0(t)`.
pub fn cmd_evolve(cfg: &RunConfig, opts: &EvolveOptions, run: &RunOptions) -> Result<EvolveOutput> {
    let mut w = ArtifactWriter::new(&cfg.output.dir)?;
    let (coefficients, _, signal, meta) = evolve_stages(cfg, opts, &mut w)?;
    let manifest = w.finish("evolve", &cfg.config_hash(), &cfg.lattice_hash(), run.seedless)?;
    Ok(EvolveOutput {
        coefficients,
        signal,
        meta,
        manifest,
    })
}

/// A signal previously written by [`cmd_evolve`] for this exact
/// configuration, if there is one.
pub fn load_signal(root: &Path, cfg: &RunConfig) -> Result<Option<(SignalMeta, Signal)>> {
    let meta_path = root.join("signal.json");
    let csv_path = root.join("signal.csv");
    if !meta_path.exists() || !csv_path.exists() {
        return Ok(None);
    }
    let meta: SignalMeta = read_json(&meta_path)?;
    if meta.signal_hash != cfg.signal_hash() {
        return Ok(None);
    }
    let cols = read_csv_columns(&csv_path, &SIGNAL_COLUMNS)?;
    if cols[2].len() != meta.samples {
        return Err(Error::Artifact {
            path: csv_path,
            message: format!("{} samples, sidecar says {}", cols[2].len(), meta.samples),
        });
    }
    let q0 = cols.into_iter().nth(2).unwrap();
    let signal = Signal::new(q0, meta.dt)?;
    Ok(Some((meta, signal)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSummary {
    pub signal_hash: String,
    pub sites: (i32, i32),
    pub fidelity: Option<f64>,
    pub noise_floor: f64,
    pub threshold: f64,
    /// Distance between the first and second fold for the site range.
    pub fold_margin: f64,
    /// The Gaussian-packet inequality; absent for explicit amplitudes.
    pub fold_resolution: Option<FoldResolution>,
    pub significant_first_fold: usize,
    pub significant_second_fold: usize,
    pub max_amplitude_error: Option<f64>,
    pub max_phase_error: Option<f64>,
    pub segments: Vec<(i32, i32)>,
    pub relative_phase_known: bool,
}

pub struct ReconstructOutput {
    pub table: CoherenceTable,
    pub amplitudes: RecoveredAmplitudes,
    pub result: ReconstructionResult,
    pub summary: ReconstructionSummary,
    /// Whether the signal came from an earlier `evolve` run.
    pub cached_signal: bool,
    pub manifest: CommandManifest,
}

/// Runs (or reuses) evolution, then inverts the signal and scores the
/// result against the synthesized packet.
pub fn cmd_reconstruct(cfg: &RunConfig, run: &RunOptions) -> Result<ReconstructOutput> {
    let mut w = ArtifactWriter::new(&cfg.output.dir)?;
    let cached = w.stage("config", |_| {
        cfg.validate()?;
        let coeffs = cfg.packet_coefficients()?;
        cfg.check_folds(&coeffs)?;
        load_signal(&cfg.output.dir, cfg)
    })?;
    let cached_signal = cached.is_some();
    let (coeffs, basis, signal) = match cached {
        Some((_, signal)) => {
            w.record("signal.csv");
            w.record("signal.json");
            let coeffs = cfg.packet_coefficients()?;
            let basis = w.stage("basis", |w| load_or_build_basis(cfg, w))?;
            (coeffs, basis, signal)
        }
        None => {
            let (c, b, s, _) = evolve_stages(cfg, &EvolveOptions::default(), &mut w)?;
            (c, b, s.q0)
        }
    };
    let sites = cfg.reconstruction_sites(&coeffs);
    let (table, amplitudes, result) = w.stage("reconstruct", |_| {
        let settings = cfg.reconstruction_settings(Some(basis.energies()));
        reconstruct(&signal, sites, &settings, Some(&basis), Some(&coeffs))
    })?;
    let summary = w.stage("write", |w| {
        let mut rows = Vec::new();
        for (fold, raw, kept) in [(1, &table.raw_q1, &table.q1), (2, &table.raw_q2, &table.q2)] {
            for (n, c) in raw {
                rows.push(vec![
                    n.to_string(),
                    fold.to_string(),
                    fmt(c.omega),
                    fmt(c.value.re),
                    fmt(c.value.im),
                    fmt(c.value.norm()),
                    fmt(c.value.arg()),
                    kept.contains_key(n).to_string(),
                ]);
            }
        }
        w.write_csv(
            "coherences.csv",
            &["n", "fold", "omega", "re", "im", "abs", "arg", "significant"],
            rows,
        )?;
        w.write_csv(
            "reconstruction.csv",
            &["n", "abs", "arg", "source", "true_abs", "true_arg"],
            result.c.iter().map(|(n, z)| {
                let t = coeffs.get(*n);
                let source = match amplitudes.sources.get(n) {
                    Some(AmplitudeSource::TwoFold) => "two_fold",
                    Some(AmplitudeSource::NeighbourRatio) => "neighbour_ratio",
                    Some(AmplitudeSource::Smooth) | None => "smooth",
                };
                vec![
                    n.to_string(),
                    fmt(z.norm()),
                    fmt(z.arg()),
                    source.to_string(),
                    fmt(t.norm()),
                    fmt(t.arg()),
                ]
            }),
        )?;
        let summary = ReconstructionSummary {
            signal_hash: cfg.signal_hash(),
            sites,
            fidelity: result.fidelity,
            noise_floor: table.noise_floor,
            threshold: table.threshold,
            fold_margin: table.fold_margin,
            fold_resolution: cfg
                .packet
                .amplitudes
                .is_none()
                .then(|| fold_resolution_check(cfg.packet.n0, cfg.packet.delta_n)),
            significant_first_fold: table.q1.len(),
            significant_second_fold: table.q2.len(),
            max_amplitude_error: result.fidelity.map(|_| result.max_amplitude_error()),
            max_phase_error: result.fidelity.map(|_| result.max_phase_error()),
            segments: result.segments.clone(),
            relative_phase_known: result.segments.len() <= 1,
        };
        w.write_json("summary.json", &summary)?;
        Ok(summary)
    })?;
    let manifest = w.finish("reconstruct", &cfg.config_hash(), &cfg.lattice_hash(), run.seedless)?;
    Ok(ReconstructOutput {
        table,
        amplitudes,
        result,
        summary,
        cached_signal,
        manifest,
    })
}
