//! Inversion of the recorded signal.
//!
//! `Q0(t) = Σ_{n≠n'} c_n c*_{n'} e^{-i(ε_n - ε_{n'})t}` is a sum of tones at
//! the Bohr frequencies `ω_nm = m(n - m/2)`, each non-degenerate, so every
//! coherence `c_n c*_{n-m}` can be read off at its own frequency. Components
//! are evaluated by a direct discrete-time Fourier sum at the predicted
//! frequencies, never by picking FFT bins.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PacketCoefficients, Signal};
use crate::eigen::SiteBasis;
use crate::{Error, Result};

/// `m (n - m/2)`.
pub fn bohr_frequency(n: i32, m: u32) -> f64 {
    assert!(m >= 1, "fold index starts at 1");
    let m = m as f64;
    m * (n as f64 - 0.5 * m)
}

/// First/second fold separation for a packet centred at `n0` with extent `Δn`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldResolution {
    pub resolved: bool,
    /// `n0 + Δn/2 + 1/2`, top of the first fold.
    pub first_fold_top: f64,
    /// `2(n0 - Δn/2 - 1)`, bottom of the second fold.
    pub second_fold_bottom: f64,
    /// `second_fold_bottom - first_fold_top`.
    pub gap: f64,
}

/// `n0 + Δn/2 + 1/2 < 2(n0 - Δn/2 - 1)`, strict.
pub fn fold_resolution_check(n0: i32, delta_n: f64) -> FoldResolution {
    let n0 = n0 as f64;
    let top = n0 + 0.5 * delta_n + 0.5;
    let bottom = 2.0 * (n0 - 0.5 * delta_n - 1.0);
    FoldResolution {
        resolved: top < bottom,
        first_fold_top: top,
        second_fold_bottom: bottom,
        gap: bottom - top,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn weights(&self, count: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; count],
            Window::Hann => {
                let d = (count.max(2) - 1) as f64;
                (0..count)
                    .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / d).cos()))
                    .collect()
            }
        }
    }
}

/// Windowed single-frequency estimator,
/// `2 Σ_k Q(t_k) w_k e^{iωt_k} / Σ_k w_k`, so that `cos(ωt)` maps to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub window: Window,
    /// Distance to the nearest other frequency that must be separated;
    /// requires `t_total · spacing ≥ 4π`.
    pub spacing: f64,
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator {
            window: Window::Hann,
            spacing: 1.0,
        }
    }
}

impl Estimator {
    pub fn check(&self, signal: &Signal, omega: f64) -> Result<()> {
        let nyquist = signal.nyquist();
        if !(omega.abs() < nyquist) {
            return Err(Error::AboveNyquist { omega, nyquist });
        }
        let required = 4.0 * PI / self.spacing;
        if signal.t_total() * self.spacing < 4.0 * PI * (1.0 - 1e-12) {
            return Err(Error::InsufficientDuration {
                t_total: signal.t_total(),
                spacing: self.spacing,
                required,
            });
        }
        Ok(())
    }

    pub fn estimate(&self, signal: &Signal, omega: f64) -> Result<Complex64> {
        self.check(signal, omega)?;
        let w = self.window.weights(signal.len());
        Ok(correlate(signal, &w, omega))
    }

    /// Estimates at many frequencies; fails on the first invalid one.
    pub fn estimate_many(&self, signal: &Signal, omegas: &[f64]) -> Result<Vec<Complex64>> {
        for &o in omegas {
            self.check(signal, o)?;
        }
        let w = self.window.weights(signal.len());
        Ok(omegas.par_iter().map(|&o| correlate(signal, &w, o)).collect())
    }
}

fn correlate(signal: &Signal, w: &[f64], omega: f64) -> Complex64 {
    let dt = signal.dt();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut norm = 0.0;
    for (k, (&q, &wk)) in signal.samples().iter().zip(w).enumerate() {
        acc += Complex64::from_polar(q * wk, omega * k as f64 * dt);
        norm += wk;
    }
    2.0 * acc / norm
}

/// [`Estimator::estimate`] with the default Hann window and unit spacing.
pub fn estimate_component(signal: &Signal, omega: f64) -> Result<Complex64> {
    Estimator::default().estimate(signal, omega)
}

/// Location of the largest estimator magnitude within `±half_width` of
/// `omega`, on a grid of `steps` points per side.
pub fn locate_peak(
    estimator: &Estimator,
    signal: &Signal,
    omega: f64,
    half_width: f64,
    steps: usize,
) -> Result<(f64, f64)> {
    let grid: Vec<f64> = (0..=2 * steps)
        .map(|i| omega - half_width + half_width * i as f64 / steps as f64)
        .collect();
    let vals = estimator.estimate_many(signal, &grid)?;
    let (i, v) = vals
        .iter()
        .enumerate()
        .map(|(i, z)| (i, z.norm()))
        .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
    Ok((grid[i], v))
}

/// Where the Bohr frequencies are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyModel {
    /// `m(n - m/2)`.
    Ideal,
    /// `ε_n - ε_{n-m}` from a solved site basis.
    Energies(BTreeMap<i32, f64>),
    /// Resolved from a basis when one is available, otherwise ideal.
    #[default]
    Auto,
}

impl FrequencyModel {
    pub fn from_basis(basis: &SiteBasis) -> Self {
        FrequencyModel::Energies(basis.energies())
    }

    pub fn frequency(&self, n: i32, m: u32) -> Result<f64> {
        match self {
            FrequencyModel::Ideal | FrequencyModel::Auto => Ok(bohr_frequency(n, m)),
            FrequencyModel::Energies(e) => {
                let lo = n - m as i32;
                match (e.get(&n), e.get(&lo)) {
                    (Some(a), Some(b)) => Ok(a - b),
                    _ => Err(Error::Config(format!(
                        "no site energies for the pair ({lo}, {n})"
                    ))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSettings {
    pub window: Window,
    /// Entries below `significance · noise_floor` are dropped.
    pub significance: f64,
    /// Absolute floor, for signals with no measurable noise.
    pub absolute_threshold: f64,
    pub frequencies: FrequencyModel,
    pub amplitudes: AmplitudeMethod,
}

impl Default for ReconstructionSettings {
    fn default() -> Self {
        ReconstructionSettings {
            window: Window::Hann,
            significance: 3.0,
            absolute_threshold: 1e-9,
            frequencies: FrequencyModel::Auto,
            amplitudes: AmplitudeMethod::TwoFold,
        }
    }
}

/// An estimated coherence and the frequency it was read at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub value: Complex64,
    pub omega: f64,
}

/// `Q̃0(n) = c_n c*_{n-1}` and `Q̃0'(n) = c_n c*_{n-2}`, significant entries only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTable {
    /// Amplitude site range the table was extracted for.
    pub sites: (i32, i32),
    pub q1: BTreeMap<i32, Coherence>,
    pub q2: BTreeMap<i32, Coherence>,
    /// Every estimate, including the ones below threshold.
    pub raw_q1: BTreeMap<i32, Coherence>,
    pub raw_q2: BTreeMap<i32, Coherence>,
    /// Median coherence magnitude away from predicted peaks.
    pub noise_floor: f64,
    pub threshold: f64,
    /// `2(lo + 1) - (hi - 1/2)`: distance between the two folds.
    pub fold_margin: f64,
}

impl CoherenceTable {
    /// A table of exact coherences computed from known amplitudes.
    pub fn exact(coeffs: &PacketCoefficients) -> CoherenceTable {
        let (lo, hi) = coeffs.support();
        let mut q1 = BTreeMap::new();
        let mut q2 = BTreeMap::new();
        for n in lo..=hi {
            let c = coeffs.get(n);
            let v1 = c * coeffs.get(n - 1).conj();
            let v2 = c * coeffs.get(n - 2).conj();
            if v1.norm() > 0.0 {
                q1.insert(n, Coherence { value: v1, omega: bohr_frequency(n, 1) });
            }
            if v2.norm() > 0.0 {
                q2.insert(n, Coherence { value: v2, omega: bohr_frequency(n, 2) });
            }
        }
        CoherenceTable {
            sites: (lo, hi),
            raw_q1: q1.clone(),
            raw_q2: q2.clone(),
            q1,
            q2,
            noise_floor: 0.0,
            threshold: 0.0,
            fold_margin: 2.0 * (lo + 1) as f64 - (hi as f64 - 0.5),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.q1.is_empty() && self.q2.is_empty()
    }
}

/// Fold separation for amplitudes supported on `lo..=hi`: the first fold
/// tops out at `hi - 1/2`, the second starts at `2(lo + 1)`.
pub fn check_site_range_folds(lo: i32, hi: i32) -> Result<f64> {
    let top = hi as f64 - 0.5;
    let bottom = 2.0 * (lo + 1) as f64;
    if top < bottom {
        Ok(bottom - top)
    } else {
        Err(Error::FoldOverlap(format!(
            "sites {lo}..={hi}: first-fold peak of site {hi} at {top} reaches the \
             second-fold peak of site {} at {bottom}",
            lo + 2
        )))
    }
}

/// Estimates both folds for amplitudes supported on `sites`.
pub fn extract_coherences(
    signal: &Signal,
    sites: (i32, i32),
    settings: &ReconstructionSettings,
) -> Result<CoherenceTable> {
    let (lo, hi) = sites;
    if hi < lo + 1 {
        return Err(Error::Config(format!("site range {lo}..={hi} has no neighbour pairs")));
    }
    let fold_margin = check_site_range_folds(lo, hi)?;
    let model = match &settings.frequencies {
        FrequencyModel::Auto => FrequencyModel::Ideal,
        m => m.clone(),
    };
    let estimator = Estimator {
        window: settings.window,
        spacing: 1.0,
    };
    let n1: Vec<i32> = (lo + 1..=hi).collect();
    let n2: Vec<i32> = (lo + 2..=hi).collect();
    let w1 = n1.iter().map(|&n| model.frequency(n, 1)).collect::<Result<Vec<_>>>()?;
    let w2 = n2.iter().map(|&n| model.frequency(n, 2)).collect::<Result<Vec<_>>>()?;
    let e1 = estimator.estimate_many(signal, &w1)?;
    let e2 = estimator.estimate_many(signal, &w2)?;

    // off-peak probes at quarter offsets across the analysed band
    let mut peaks = Vec::new();
    for m in 1..=4u32 {
        for n in lo..=hi {
            peaks.push(bohr_frequency(n, m));
        }
    }
    let band_lo = (w1.iter().chain(&w2).fold(f64::INFINITY, |a, &b| a.min(b)) - 2.0).max(0.25);
    let band_hi = w1.iter().chain(&w2).fold(0.0_f64, |a, &b| a.max(b)) + 2.0;
    let probes: Vec<f64> = (0..)
        .map(|j| 0.5 * j as f64 + 0.25)
        .skip_while(|&w| w < band_lo)
        .take_while(|&w| w <= band_hi)
        .filter(|&w| w < signal.nyquist() && peaks.iter().all(|&p| (w - p).abs() > 0.2))
        .collect();
    let noise = estimator.estimate_many(signal, &probes)?;
    let mut mags: Vec<f64> = noise.iter().map(|z| 0.5 * z.norm()).collect();
    mags.sort_by(f64::total_cmp);
    let noise_floor = if mags.is_empty() {
        0.0
    } else if mags.len() % 2 == 1 {
        mags[mags.len() / 2]
    } else {
        0.5 * (mags[mags.len() / 2 - 1] + mags[mags.len() / 2])
    };
    let threshold = (settings.significance * noise_floor).max(settings.absolute_threshold);

    let build = |ns: &[i32], ws: &[f64], es: &[Complex64]| {
        let raw: BTreeMap<i32, Coherence> = ns
            .iter()
            .zip(ws)
            .zip(es)
            .map(|((&n, &omega), &e)| (n, Coherence { value: 0.5 * e, omega }))
            .collect();
        let kept = raw
            .iter()
            .filter(|(_, c)| c.value.norm() > threshold)
            .map(|(&n, &c)| (n, c))
            .collect();
        (raw, kept)
    };
    let (raw_q1, q1) = build(&n1, &w1, &e1);
    let (raw_q2, q2) = build(&n2, &w2, &e2);
    Ok(CoherenceTable {
        sites,
        q1,
        q2,
        raw_q1,
        raw_q2,
        noise_floor,
        threshold,
        fold_margin,
    })
}

/// `|c_n|² ≈ (|Q̃0(n)| |Q̃0(n+1)|)^{1/2}`, with the single available
/// neighbour at the ends of a run; returns normalized `|c_n|`.
///
/// For a Gaussian envelope the geometric mean of the two flanking
/// coherences is exactly proportional to `|c_n|²`.
pub fn amplitudes_smooth(table: &CoherenceTable) -> BTreeMap<i32, f64> {
    let mut sq = BTreeMap::new();
    let mut sites: Vec<i32> = table.q1.keys().flat_map(|&n| [n - 1, n]).collect();
    sites.sort_unstable();
    sites.dedup();
    for n in sites {
        let below = table.q1.get(&n).map(|c| c.value.norm());
        let above = table.q1.get(&(n + 1)).map(|c| c.value.norm());
        let v = match (below, above) {
            (Some(a), Some(b)) => (a * b).sqrt(),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => continue,
        };
        sq.insert(n, v);
    }
    normalize_magnitudes(sq.into_iter().map(|(n, v)| (n, v.sqrt())).collect())
}

fn normalize_magnitudes(mut m: BTreeMap<i32, f64>) -> BTreeMap<i32, f64> {
    let total: f64 = m.values().map(|v| v * v).sum();
    if total > 0.0 {
        let s = 1.0 / total.sqrt();
        m.values_mut().for_each(|v| *v *= s);
    }
    m
}

/// Result of the two-fold identity `|c_n|² = Q̃0(n) Q̃0(n+1) / Q̃0'(n+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoFoldAmplitudes {
    /// `|c_n|²` straight from the identity, on the signal's own scale.
    pub raw: BTreeMap<i32, f64>,
    /// `raw` rescaled to unit sum.
    pub normalized: BTreeMap<i32, f64>,
    /// `Im(ratio) / |ratio|`, zero in exact arithmetic.
    pub imaginary_fraction: BTreeMap<i32, f64>,
    /// Sites with an entry missing and why.
    pub omitted: BTreeMap<i32, String>,
}

pub fn amplitudes_two_fold(table: &CoherenceTable) -> TwoFoldAmplitudes {
    let mut raw = BTreeMap::new();
    let mut imag = BTreeMap::new();
    let mut omitted = BTreeMap::new();
    let mut sites: Vec<i32> = table.q1.keys().flat_map(|&n| [n - 1, n]).collect();
    sites.sort_unstable();
    sites.dedup();
    for n in sites {
        let a = table.q1.get(&n);
        let b = table.q1.get(&(n + 1));
        let d = table.q2.get(&(n + 1));
        match (a, b, d) {
            (Some(a), Some(b), Some(d)) => {
                let r = a.value * b.value / d.value;
                raw.insert(n, r.re);
                imag.insert(n, r.im / r.norm());
            }
            _ => {
                let missing: Vec<String> = [
                    (a.is_none(), format!("Q1({n})")),
                    (b.is_none(), format!("Q1({})", n + 1)),
                    (d.is_none(), format!("Q2({})", n + 1)),
                ]
                .into_iter()
                .filter(|(m, _)| *m)
                .map(|(_, s)| s)
                .collect();
                omitted.insert(n, format!("missing or below floor: {}", missing.join(", ")));
            }
        }
    }
    let total: f64 = raw.values().sum();
    let normalized = if total > 0.0 {
        raw.iter().map(|(&n, v)| (n, v / total)).collect()
    } else {
        BTreeMap::new()
    };
    TwoFoldAmplitudes {
        raw,
        normalized,
        imaginary_fraction: imag,
        omitted,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMethod {
    /// Two-fold identity where possible, neighbour ratios at run ends,
    /// smooth-envelope estimate elsewhere.
    #[default]
    TwoFold,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeSource {
    TwoFold,
    NeighbourRatio,
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredAmplitudes {
    /// Normalized `|c_n|`.
    pub magnitudes: BTreeMap<i32, f64>,
    pub sources: BTreeMap<i32, AmplitudeSource>,
    pub two_fold: Option<TwoFoldAmplitudes>,
}

/// Site magnitudes by the chosen method.
pub fn recover_amplitudes(table: &CoherenceTable, method: AmplitudeMethod) -> RecoveredAmplitudes {
    let smooth = amplitudes_smooth(table);
    if method == AmplitudeMethod::Smooth {
        return RecoveredAmplitudes {
            sources: smooth.keys().map(|&n| (n, AmplitudeSource::Smooth)).collect(),
            magnitudes: smooth,
            two_fold: None,
        };
    }
    let tf = amplitudes_two_fold(table);
    let mut mag: BTreeMap<i32, f64> = BTreeMap::new();
    let mut src = BTreeMap::new();
    for (&n, &v) in &tf.raw {
        if v > 0.0 {
            mag.insert(n, v.sqrt());
            src.insert(n, AmplitudeSource::TwoFold);
        }
    }
    // |c_n| = |Q̃0| / |c_neighbour| outward from the two-fold sites
    if !mag.is_empty() {
        loop {
            let mut added = false;
            let lo = *mag.keys().next().unwrap();
            let hi = *mag.keys().next_back().unwrap();
            if let Some(q) = table.q1.get(&lo) {
                if !mag.contains_key(&(lo - 1)) {
                    mag.insert(lo - 1, q.value.norm() / mag[&lo]);
                    src.insert(lo - 1, AmplitudeSource::NeighbourRatio);
                    added = true;
                }
            }
            if let Some(q) = table.q1.get(&(hi + 1)) {
                if !mag.contains_key(&(hi + 1)) {
                    mag.insert(hi + 1, q.value.norm() / mag[&hi]);
                    src.insert(hi + 1, AmplitudeSource::NeighbourRatio);
                    added = true;
                }
            }
            if !added {
                break;
            }
        }
    }
    // interior holes and disconnected runs fall back to the smooth estimate,
    // rescaled to the two-fold sites they share
    let shared: Vec<i32> = mag.keys().filter(|n| smooth.contains_key(n)).copied().collect();
    let scale = if shared.is_empty() {
        1.0
    } else {
        shared.iter().map(|n| mag[n]).sum::<f64>() / shared.iter().map(|n| smooth[n]).sum::<f64>()
    };
    for (&n, &v) in &smooth {
        if !mag.contains_key(&n) {
            mag.insert(n, v * scale);
            src.insert(n, AmplitudeSource::Smooth);
        }
    }
    RecoveredAmplitudes {
        magnitudes: normalize_magnitudes(mag),
        sources: src,
        two_fold: Some(tf),
    }
}

/// Phases from `arg Q̃0(n) = arg c_n - arg c_{n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReconstruction {
    /// Wrapped to `(-π, π]`.
    pub phases: BTreeMap<i32, f64>,
    /// Contiguous runs of sites linked by significant `Q̃0`; phases of
    /// different runs are not related.
    pub segments: Vec<(i32, i32)>,
}

impl PhaseReconstruction {
    pub fn relative_phase_known(&self) -> bool {
        self.segments.len() <= 1
    }
}

/// Cumulative phase sums per contiguous segment, each anchored to zero at
/// its largest-amplitude site.
pub fn reconstruct_phases(table: &CoherenceTable, amplitudes: &BTreeMap<i32, f64>) -> PhaseReconstruction {
    let mut phases = BTreeMap::new();
    let mut segments = Vec::new();
    let sites: Vec<i32> = amplitudes.keys().copied().collect();
    let mut i = 0;
    while i < sites.len() {
        let start = sites[i];
        let mut seg = vec![(start, 0.0)];
        let mut j = i;
        while j + 1 < sites.len() && sites[j + 1] == sites[j] + 1 {
            let Some(q) = table.q1.get(&sites[j + 1]) else {
                break;
            };
            let prev = seg.last().unwrap().1;
            seg.push((sites[j + 1], prev + q.value.arg()));
            j += 1;
        }
        let anchor = seg
            .iter()
            .map(|&(n, p)| (amplitudes[&n], p))
            .fold((-1.0, 0.0), |a, b| if b.0 > a.0 { b } else { a })
            .1;
        for &(n, p) in &seg {
            phases.insert(n, wrap(p - anchor));
        }
        segments.push((start, sites[j]));
        i = j + 1;
    }
    PhaseReconstruction { phases, segments }
}

/// Wraps to `(-π, π]`.
pub fn wrap(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub c: BTreeMap<i32, Complex64>,
    /// Zero: the phase at the largest-amplitude site.
    pub global_phase: f64,
    pub segments: Vec<(i32, i32)>,
    pub fidelity: Option<f64>,
    /// `||c_rec| - |c_true|| / max|c_true|`.
    pub amplitude_error: BTreeMap<i32, f64>,
    /// `||c_rec|² - |c_true|²| / max|c_true|²`.
    pub probability_error: BTreeMap<i32, f64>,
    /// `|arg c_rec - arg c_true - θ|` after the best global phase `θ`.
    pub phase_error: BTreeMap<i32, f64>,
    /// Sites dropped because they are not in the site basis.
    pub dropped: Vec<i32>,
}

impl ReconstructionResult {
    pub fn max_amplitude_error(&self) -> f64 {
        self.amplitude_error.values().fold(0.0, |a, &b| a.max(b))
    }

    pub fn max_probability_error(&self) -> f64 {
        self.probability_error.values().fold(0.0, |a, &b| a.max(b))
    }

    pub fn max_phase_error(&self) -> f64 {
        self.phase_error.values().fold(0.0, |a, &b| a.max(b))
    }

    pub fn as_packet(&self) -> Result<PacketCoefficients> {
        PacketCoefficients::from_amplitudes(self.c.clone())
    }
}

/// Combines magnitudes and phases; scores against `truth` when given.
pub fn assemble_and_score(
    amplitudes: &BTreeMap<i32, f64>,
    phases: &PhaseReconstruction,
    basis: Option<&SiteBasis>,
    truth: Option<&PacketCoefficients>,
) -> ReconstructionResult {
    let mut c = BTreeMap::new();
    let mut dropped = Vec::new();
    for (&n, &a) in amplitudes {
        if basis.is_some_and(|b| !b.contains(n)) {
            dropped.push(n);
            continue;
        }
        let ph = phases.phases.get(&n).copied().unwrap_or(0.0);
        c.insert(n, Complex64::from_polar(a, ph));
    }
    let total: f64 = c.values().map(|z| z.norm_sqr()).sum();
    if total > 0.0 {
        let s = 1.0 / total.sqrt();
        c.values_mut().for_each(|z| *z *= s);
    }
    let mut result = ReconstructionResult {
        c,
        global_phase: 0.0,
        segments: phases.segments.clone(),
        fidelity: None,
        amplitude_error: BTreeMap::new(),
        probability_error: BTreeMap::new(),
        phase_error: BTreeMap::new(),
        dropped,
    };
    if let Some(truth) = truth {
        let overlap: Complex64 = truth
            .c
            .iter()
            .map(|(n, t)| t.conj() * result.c.get(n).copied().unwrap_or_default())
            .sum();
        result.fidelity = Some(overlap.norm_sqr());
        let theta = overlap.arg();
        let max_amp = truth.c.values().map(|z| z.norm()).fold(0.0, f64::max);
        for (&n, z) in &result.c {
            let t = truth.get(n);
            result
                .amplitude_error
                .insert(n, (z.norm() - t.norm()).abs() / max_amp);
            result
                .probability_error
                .insert(n, (z.norm_sqr() - t.norm_sqr()).abs() / (max_amp * max_amp));
            if t.norm() > 0.0 {
                result
                    .phase_error
                    .insert(n, wrap(z.arg() - t.arg() - theta).abs());
            }
        }
    }
    result
}

/// Signal to reconstruction in one call.
pub fn reconstruct(
    signal: &Signal,
    sites: (i32, i32),
    settings: &ReconstructionSettings,
    basis: Option<&SiteBasis>,
    truth: Option<&PacketCoefficients>,
) -> Result<(CoherenceTable, RecoveredAmplitudes, ReconstructionResult)> {
    let mut settings = settings.clone();
    if settings.frequencies == FrequencyModel::Auto {
        settings.frequencies = match basis {
            Some(b) => FrequencyModel::from_basis(b),
            None => FrequencyModel::Ideal,
        };
    }
    let table = extract_coherences(signal, sites, &settings)?;
    let amps = recover_amplitudes(&table, settings.amplitudes);
    let phases = reconstruct_phases(&table, &amps.magnitudes);
    let result = assemble_and_score(&amps.magnitudes, &phases, basis, truth);
    Ok((table, amps, result))
}
