//! Packet synthesis, time evolution and recorded observables.
//!
//! Two independent propagators are provided: a spectral one that sums
//! eigenmodes with their phases, and a Strang split-step integrator of the
//! Schrödinger equation on the grid. They serve as oracles for each other.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::eigen::{stencil_dispersion, EigenSpectrum, SiteBasis};
use crate::lattice::{build_grid, sample_potential, GridWavefunction, LatticeConfig, SpatialGrid};
use crate::momentum::amplitude_at_slice;
pub use crate::momentum::{momentum_transform, probability_at_momentum, MomentumWavefunction};
use crate::{Error, Result};

/// Sites kept free between a packet's support and the grid edge.
pub const SUPPORT_GUARD: i32 = 5;
/// Tolerance on `Σ|c_n|² = 1`.
pub const NORM_TOLERANCE: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Site amplitudes `c_n` of `Ψ₀ = Σ c_n φ_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketCoefficients {
    pub c: BTreeMap<i32, Complex64>,
    pub n0: i32,
    pub delta_n: f64,
}

impl PacketCoefficients {
    /// Normalizes arbitrary amplitudes. `n0` is the most populated site and
    /// `delta_n` twice the population-weighted standard deviation.
    pub fn from_amplitudes(c: BTreeMap<i32, Complex64>) -> Result<Self> {
        let total: f64 = c.values().map(|z| z.norm_sqr()).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Packet("packet amplitudes have zero norm".into()));
        }
        let s = 1.0 / total.sqrt();
        let c: BTreeMap<i32, Complex64> = c.into_iter().map(|(n, z)| (n, z * s)).collect();
        let mean: f64 = c.iter().map(|(&n, z)| n as f64 * z.norm_sqr()).sum();
        let var: f64 = c
            .iter()
            .map(|(&n, z)| (n as f64 - mean).powi(2) * z.norm_sqr())
            .sum();
        let n0 = c
            .iter()
            .fold((0, -1.0), |(bn, bw), (&n, z)| {
                if z.norm_sqr() > bw {
                    (n, z.norm_sqr())
                } else {
                    (bn, bw)
                }
            })
            .0;
        Ok(PacketCoefficients {
            c,
            n0,
            delta_n: 2.0 * var.max(0.0).sqrt(),
        })
    }

    pub fn get(&self, n: i32) -> Complex64 {
        self.c.get(&n).copied().unwrap_or(ZERO)
    }

    pub fn norm(&self) -> f64 {
        self.c.values().map(|z| z.norm_sqr()).sum()
    }

    /// Lowest and highest site with a stored amplitude.
    pub fn support(&self) -> (i32, i32) {
        (
            *self.c.keys().next().unwrap_or(&self.n0),
            *self.c.keys().next_back().unwrap_or(&self.n0),
        )
    }

    /// `Σ |c_n|² n`.
    pub fn mean_site(&self) -> f64 {
        self.c.iter().map(|(&n, z)| n as f64 * z.norm_sqr()).sum()
    }

    /// Multiplies every amplitude by `e^{iθ}`.
    pub fn rotated(&self, theta: f64) -> Self {
        let f = Complex64::from_polar(1.0, theta);
        PacketCoefficients {
            c: self.c.iter().map(|(&n, z)| (n, z * f)).collect(),
            ..self.clone()
        }
    }
}

/// `c_n ∝ exp[-(n - n0)² / (2 (Δn/2)²)] e^{i n g}` on `|n - n0| ≤ ⌊Δn⌋`.
///
/// Truncating at `±Δn` (two envelope widths) drops under 0.05% of the
/// population and keeps the first fold clear of the second.
pub fn gaussian_coefficients(n0: i32, delta_n: f64, phase_gradient: f64) -> Result<PacketCoefficients> {
    if !(delta_n >= 0.0 && delta_n.is_finite()) {
        return Err(Error::Packet(format!("delta_n must be non-negative, got {delta_n}")));
    }
    if !phase_gradient.is_finite() {
        return Err(Error::Packet("phase gradient must be finite".into()));
    }
    let reach = delta_n.floor() as i32;
    let sigma = 0.5 * delta_n;
    let mut c = BTreeMap::new();
    for n in n0 - reach..=n0 + reach {
        let k = (n - n0) as f64;
        let env = if reach == 0 {
            1.0
        } else {
            (-k * k / (2.0 * sigma * sigma)).exp()
        };
        c.insert(n, Complex64::from_polar(env, n as f64 * phase_gradient));
    }
    let mut p = PacketCoefficients::from_amplitudes(c)?;
    p.n0 = n0;
    p.delta_n = delta_n;
    Ok(p)
}

/// Checks that every packet site is in the basis and clear of the grid edge.
pub fn check_packet_support(coeffs: &PacketCoefficients, basis: &SiteBasis) -> Result<()> {
    for &n in coeffs.c.keys() {
        if !basis.contains(n) {
            let range = basis.site_range().unwrap_or((0, -1));
            return Err(Error::Packet(format!(
                "packet site {n} is outside the site basis {}..={}",
                range.0, range.1
            )));
        }
    }
    let (lo, hi) = coeffs.support();
    let (gmin, gmax) = basis.grid().site_range();
    if lo - SUPPORT_GUARD < gmin || hi + SUPPORT_GUARD > gmax {
        return Err(Error::Packet(format!(
            "packet sites [{lo}, {hi}] need {SUPPORT_GUARD} guard sites inside the grid [{gmin}, {gmax}]"
        )));
    }
    Ok(())
}

/// `Σ c_n φ_n` on the basis grid.
pub fn packet_wavefunction(coeffs: &PacketCoefficients, basis: &SiteBasis) -> Result<GridWavefunction> {
    check_packet_support(coeffs, basis)?;
    let mut amps = vec![ZERO; basis.grid().len()];
    for (&n, &c) in &coeffs.c {
        for (a, &v) in amps.iter_mut().zip(basis.values(n).unwrap()) {
            *a += c * v;
        }
    }
    Ok(GridWavefunction::new(amps, basis.grid()))
}

/// Gaussian packet over the site basis, see [`gaussian_coefficients`].
pub fn synthesize_packet(
    basis: &SiteBasis,
    n0: i32,
    delta_n: f64,
    phase_gradient: f64,
) -> Result<(PacketCoefficients, GridWavefunction)> {
    let coeffs = gaussian_coefficients(n0, delta_n, phase_gradient)?;
    let psi = packet_wavefunction(&coeffs, basis)?;
    Ok((coeffs, psi))
}

/// How site-state phases advance in the spectral propagator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DoubletModel {
    /// `φ_n` evolves with the doublet mean `ε_n`, neglecting `δ^S - δ^A`.
    #[default]
    SiteMean,
    /// `φ_n` is split into its even and odd eigenstates with their own energies.
    Resolved,
}

/// A state written as `Σ_k a_k e^{-i E_k t} χ_k` over real orthonormal modes.
#[derive(Debug, Clone)]
pub struct ModeExpansion {
    grid: SpatialGrid,
    amplitudes: Vec<Complex64>,
    energies: Vec<f64>,
    modes: Vec<Vec<f64>>,
}

impl ModeExpansion {
    pub fn new(grid: &SpatialGrid) -> Self {
        ModeExpansion {
            grid: grid.clone(),
            amplitudes: Vec::new(),
            energies: Vec::new(),
            modes: Vec::new(),
        }
    }

    pub fn push(&mut self, amplitude: Complex64, energy: f64, mode: Vec<f64>) {
        assert_eq!(mode.len(), self.grid.len());
        self.amplitudes.push(amplitude);
        self.energies.push(energy);
        self.modes.push(mode);
    }

    /// The site-basis packet with the chosen doublet treatment.
    pub fn from_packet(coeffs: &PacketCoefficients, basis: &SiteBasis, model: DoubletModel) -> Result<Self> {
        check_packet_support(coeffs, basis)?;
        let mut e = ModeExpansion::new(basis.grid());
        for (&n, &c) in &coeffs.c {
            let s = &basis.sites[&n];
            match model {
                DoubletModel::SiteMean => e.push(c, s.energy, s.values.clone()),
                DoubletModel::Resolved => {
                    // φ_n = (S + A)/√2 with S, A = (φ_n ± φ_n(-x))/√2
                    let v = &s.values;
                    let len = v.len();
                    let even: Vec<f64> = (0..len)
                        .map(|j| (v[j] + v[len - 1 - j]) * std::f64::consts::FRAC_1_SQRT_2)
                        .collect();
                    let odd: Vec<f64> = (0..len)
                        .map(|j| (v[j] - v[len - 1 - j]) * std::f64::consts::FRAC_1_SQRT_2)
                        .collect();
                    let base = s.energy - 0.5 * (s.delta_s + s.delta_a);
                    let f = std::f64::consts::FRAC_1_SQRT_2;
                    e.push(c * f, base + s.delta_s, even);
                    e.push(c * f, base + s.delta_a, odd);
                }
            }
        }
        Ok(e)
    }

    /// Adds eigenstate `index` of `spectrum` with energy shifted by
    /// `-constant` (the site basis zero point).
    pub fn push_eigenstate(&mut self, spectrum: &EigenSpectrum, index: usize, amplitude: Complex64, constant: f64) {
        self.push(amplitude, spectrum.energies[index] - constant, spectrum.states[index].clone());
    }

    /// Adds `offset` to every mode energy; with the site basis constant this
    /// restores the absolute phase of the full Hamiltonian.
    pub fn shifted(mut self, offset: f64) -> Self {
        self.energies.iter_mut().for_each(|e| *e += offset);
        self
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// `Σ |a_k|²`, the norm when the modes are orthonormal.
    pub fn weight(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Rescales so that `Σ |a_k|² = 1`.
    pub fn normalize(&mut self) {
        let w = self.weight();
        if w > 0.0 {
            let s = 1.0 / w.sqrt();
            self.amplitudes.iter_mut().for_each(|a| *a *= s);
        }
    }

    pub fn at(&self, t: f64) -> GridWavefunction {
        let mut amps = vec![ZERO; self.grid.len()];
        for ((a, &e), m) in self.amplitudes.iter().zip(&self.energies).zip(&self.modes) {
            let c = a * Complex64::from_polar(1.0, -e * t);
            for (x, &v) in amps.iter_mut().zip(m) {
                *x += c * v;
            }
        }
        GridWavefunction::new(amps, &self.grid)
    }

    /// `χ̃_k(p)` for every mode.
    fn momentum_amplitudes(&self, p: f64) -> Vec<Complex64> {
        let x0 = self.grid.x()[0];
        let dx = self.grid.dx();
        self.modes
            .iter()
            .map(|m| {
                let c: Vec<Complex64> = m.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                amplitude_at_slice(&c, x0, dx, p)
            })
            .collect()
    }
}

/// `Ψ(t) = Σ c_n e^{-i ε_n t} φ_n`.
pub fn evolve_eigenbasis(coeffs: &PacketCoefficients, basis: &SiteBasis, t: f64) -> Result<GridWavefunction> {
    Ok(ModeExpansion::from_packet(coeffs, basis, DoubletModel::SiteMean)?.at(t))
}

/// Kinetic operator used by the split-step integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KineticModel {
    /// Symbol of the 5-point stencil, the same kinetic term the eigensolver
    /// diagonalizes.
    #[default]
    Stencil,
    /// Continuum `p²/(2M*)`.
    Spectral,
}

/// Upper bound on the split-step time step for a lattice.
pub fn split_step_limit(config: &LatticeConfig, grid: &SpatialGrid) -> f64 {
    let vmax = sample_potential(grid, config)
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()));
    let dx = grid.dx();
    let kinetic = 0.1 * 2.0 * config.reduced_mass * dx * dx;
    if vmax > 0.0 {
        kinetic.min(0.1 / vmax)
    } else {
        kinetic
    }
}

/// Strang splitting `e^{-iV dt/2} e^{-iT dt} e^{-iV dt/2}` with the kinetic
/// factor applied in momentum space.
pub struct SplitStep {
    dt: f64,
    half_potential: Vec<Complex64>,
    kinetic: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl SplitStep {
    pub fn new(config: &LatticeConfig, dt_int: f64, kinetic: KineticModel) -> Result<Self> {
        let grid = build_grid(config)?;
        let limit = split_step_limit(config, &grid);
        if !(dt_int > 0.0 && dt_int < limit) {
            return Err(Error::StepTooLarge { dt_int, limit });
        }
        let n = grid.len();
        let v = sample_potential(&grid, config);
        let half_potential = v
            .iter()
            .map(|&v| Complex64::from_polar(1.0, -0.5 * v * dt_int))
            .collect();
        let dx = grid.dx();
        let l = n as f64 * dx;
        let kinetic = (0..n)
            .map(|k| {
                let kk = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
                let p = 2.0 * PI * kk / l;
                let t = match kinetic {
                    KineticModel::Stencil => stencil_dispersion(p, config.reduced_mass, dx),
                    KineticModel::Spectral => p * p / (2.0 * config.reduced_mass),
                };
                Complex64::from_polar(1.0 / n as f64, -t * dt_int)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(SplitStep {
            dt: dt_int,
            half_potential,
            kinetic,
            forward,
            inverse,
            scratch: vec![ZERO; scratch_len],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `psi` by `steps` full steps.
    pub fn advance(&mut self, psi: &mut [Complex64], steps: usize) {
        if steps == 0 {
            return;
        }
        mul(psi, &self.half_potential);
        for i in 0..steps {
            self.forward.process_with_scratch(psi, &mut self.scratch);
            mul(psi, &self.kinetic);
            self.inverse.process_with_scratch(psi, &mut self.scratch);
            mul(psi, &self.half_potential);
            if i + 1 < steps {
                mul(psi, &self.half_potential);
            }
        }
    }
}

fn mul(a: &mut [Complex64], b: &[Complex64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x *= y);
}

/// Number of split steps of size at most `dt_int` that tile `t`.
fn step_count(t: f64, dt_int: f64) -> usize {
    ((t / dt_int) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// `Ψ(t)` by direct integration on the lattice grid.
pub fn evolve_split_step(
    psi0: &GridWavefunction,
    config: &LatticeConfig,
    t: f64,
    dt_int: f64,
) -> Result<GridWavefunction> {
    evolve_split_step_with(psi0, config, t, dt_int, KineticModel::default())
}

pub fn evolve_split_step_with(
    psi0: &GridWavefunction,
    config: &LatticeConfig,
    t: f64,
    dt_int: f64,
    kinetic: KineticModel,
) -> Result<GridWavefunction> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Config(format!("evolution time must be non-negative, got {t}")));
    }
    let grid = build_grid(config)?;
    if psi0.len() != grid.len() {
        return Err(Error::Grid(format!(
            "wavefunction has {} nodes, lattice grid has {}",
            psi0.len(),
            grid.len()
        )));
    }
    let mut psi = psi0.amplitudes().to_vec();
    if t > 0.0 {
        // validate with the requested step, run with the tiling step
        SplitStep::new(config, dt_int, kinetic)?;
        let steps = step_count(t, dt_int);
        SplitStep::new(config, t / steps as f64, kinetic)?.advance(&mut psi, steps);
    }
    Ok(GridWavefunction::new(psi, &grid))
}

/// Uniformly sampled real time series starting at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    samples: Vec<f64>,
    dt: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, dt: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Signal("a signal needs at least two samples".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Signal(format!("sample step must be positive, got {dt}")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Signal("signal contains non-finite samples".into()));
        }
        Ok(Signal { samples, dt })
    }

    /// Samples `f(t)` at `t = k dt`, `k = 0..count`.
    pub fn from_fn(count: usize, dt: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Signal::new((0..count).map(|k| f(k as f64 * dt)).collect(), dt)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `dt (count - 1)`.
    pub fn t_total(&self) -> f64 {
        self.dt * (self.samples.len() - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// `π / dt`.
    pub fn nyquist(&self) -> f64 {
        PI / self.dt
    }
}

/// `dt < π / (2 n_max)`, which keeps the second fold below Nyquist.
pub fn check_nyquist(dt: f64, n_max: i32) -> Result<()> {
    let bound = PI / (2.0 * n_max.max(1) as f64);
    if !(dt > 0.0 && dt < bound) {
        return Err(Error::Config(format!(
            "sample step {dt} must be below pi/(2 n_max) = {bound} so the second fold stays under Nyquist"
        )));
    }
    Ok(())
}

/// Sample count for `t_total` in steps of `dt`; `t_total` must be a whole
/// number of steps.
pub fn sample_count(t_total: f64, dt: f64) -> Result<usize> {
    if !(t_total > 0.0 && t_total.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!(
            "t_total and dt must be positive, got {t_total} and {dt}"
        )));
    }
    let steps = t_total / dt;
    let rounded = steps.round();
    if (steps - rounded).abs() > 1e-9 * steps.max(1.0) || rounded < 1.0 {
        return Err(Error::Config(format!(
            "t_total = {t_total} is not a whole number of steps dt = {dt}"
        )));
    }
    Ok(rounded as usize + 1)
}

/// Propagator used to record a signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Propagator {
    Eigenbasis,
    SplitStep { dt_int: f64, kinetic: KineticModel },
}

impl Propagator {
    pub fn name(&self) -> &'static str {
        match self {
            Propagator::Eigenbasis => "eigen",
            Propagator::SplitStep { .. } => "splitstep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSettings {
    pub t_total: f64,
    pub dt: f64,
    pub probe_momentum: f64,
    pub propagator: Propagator,
}

impl Default for SignalSettings {
    fn default() -> Self {
        SignalSettings {
            t_total: 40.0 * PI,
            dt: 2.0 * PI / 512.0,
            probe_momentum: 0.0,
            propagator: Propagator::Eigenbasis,
        }
    }
}

/// `P(p, t)` at the probe momentum and `Q0(t) = P/|φ̃_n0(p)|² - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedSignal {
    pub p0: Signal,
    pub q0: Signal,
    /// `|φ̃_n0(p)|²`.
    pub reference: f64,
    pub n0: i32,
    pub probe_momentum: f64,
    /// Largest `|Im|` met while forming `|Ψ̃|²`.
    pub imaginary_residue: f64,
}

/// `|φ̃_n0(p)|²`, checked against `10⁻⁶ max_p |φ̃_n0(p)|²`.
pub fn probe_reference(basis: &SiteBasis, n0: i32, p: f64) -> Result<f64> {
    let profile = basis
        .momentum_profile(n0)
        .ok_or_else(|| Error::Packet(format!("site {n0} is not in the site basis")))?;
    let (lo, hi) = profile.range();
    if !(p >= lo && p <= hi) {
        return Err(Error::MomentumOutOfRange { p, min: lo, max: hi });
    }
    let reference = basis.momentum_amplitude(n0, p).unwrap().norm_sqr();
    let max = profile
        .amplitudes()
        .iter()
        .map(|z| z.norm_sqr())
        .fold(0.0, f64::max);
    if reference <= 1e-6 * max {
        return Err(Error::VanishingReference { reference, max });
    }
    Ok(reference)
}

/// Records `P0(t)` and `Q0(t)` for a mode expansion.
///
/// The spectral propagator samples mutually independent times; the
/// split-step propagator integrates from `t = 0`, starting from the
/// expansion at `t = 0`, and evaluates the probe exactly at each sample.
pub fn record_q_signal(
    initial: &ModeExpansion,
    basis: &SiteBasis,
    n0: i32,
    lattice: &LatticeConfig,
    settings: &SignalSettings,
) -> Result<RecordedSignal> {
    let count = sample_count(settings.t_total, settings.dt)?;
    check_nyquist(settings.dt, lattice.n_max)?;
    let p = settings.probe_momentum;
    let reference = probe_reference(basis, n0, p)?;
    let grid = initial.grid();
    let (p0, residue): (Vec<f64>, f64) = match settings.propagator {
        Propagator::Eigenbasis => {
            let chi = initial.momentum_amplitudes(p);
            let terms: Vec<(Complex64, f64)> = initial
                .amplitudes
                .iter()
                .zip(&chi)
                .zip(&initial.energies)
                .map(|((a, c), &e)| (a * c, e))
                .collect();
            let values: Vec<(f64, f64)> = (0..count)
                .into_par_iter()
                .map(|k| {
                    let t = k as f64 * settings.dt;
                    let amp: Complex64 = terms
                        .iter()
                        .map(|(w, e)| w * Complex64::from_polar(1.0, -e * t))
                        .sum();
                    let prob = amp * amp.conj();
                    (prob.re, prob.im.abs())
                })
                .collect();
            let residue = values.iter().map(|v| v.1).fold(0.0, f64::max);
            (values.into_iter().map(|v| v.0).collect(), residue)
        }
        Propagator::SplitStep { dt_int, kinetic } => {
            SplitStep::new(lattice, dt_int, kinetic)?;
            let steps = step_count(settings.dt, dt_int);
            let mut stepper = SplitStep::new(lattice, settings.dt / steps as f64, kinetic)?;
            let lattice_grid = build_grid(lattice)?;
            if lattice_grid.len() != grid.len() {
                return Err(Error::Grid("packet grid differs from the lattice grid".into()));
            }
            let mut psi = initial.at(0.0).into_amplitudes();
            let x0 = grid.x()[0];
            let mut out = Vec::with_capacity(count);
            let mut residue: f64 = 0.0;
            for k in 0..count {
                if k > 0 {
                    stepper.advance(&mut psi, steps);
                }
                let amp = amplitude_at_slice(&psi, x0, grid.dx(), p);
                let prob = amp * amp.conj();
                residue = residue.max(prob.im.abs());
                out.push(prob.re);
            }
            (out, residue)
        }
    };
    let q0: Vec<f64> = p0.iter().map(|v| v / reference - 1.0).collect();
    Ok(RecordedSignal {
        p0: Signal::new(p0, settings.dt)?,
        q0: Signal::new(q0, settings.dt)?,
        reference,
        n0,
        probe_momentum: p,
        imaginary_residue: residue,
    })
}

/// `⟨Ψ|x|Ψ⟩` on the grid.
pub fn mean_position(psi: &GridWavefunction) -> f64 {
    psi.amplitudes()
        .iter()
        .enumerate()
        .map(|(j, a)| a.norm_sqr() * psi.x_at(j))
        .sum::<f64>()
        * psi.dx()
}

/// Phase rates used by [`mean_position_series`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeriesFrequencies {
    /// `ε_n - ε_{n-m}` from the basis.
    #[default]
    Energies,
    /// `m(n - m/2)`.
    Ideal,
}

/// Mean position from the dipole couplings,
/// `Σ_m Σ_n X_m(n-m) c_n c*_{n-m} e^{-iω_{nm}t}` plus conjugates,
/// truncated at `m = 3`.
pub fn mean_position_series(
    coeffs: &PacketCoefficients,
    basis: &SiteBasis,
    t: f64,
    frequencies: SeriesFrequencies,
) -> f64 {
    let mut total = 0.0;
    for (m, coupling) in basis.dipole_couplings.iter().enumerate() {
        for (&n, &c) in &coeffs.c {
            let lower = n - m as i32;
            let Some(&cl) = coeffs.c.get(&lower) else {
                continue;
            };
            let Some(x) = coupling.element(lower) else {
                continue;
            };
            let (Some(en), Some(el)) = (basis.energy(n), basis.energy(lower)) else {
                continue;
            };
            let omega = match frequencies {
                SeriesFrequencies::Energies => en - el,
                SeriesFrequencies::Ideal => m as f64 * (n as f64 - 0.5 * m as f64),
            };
            let term = c * cl.conj() * Complex64::from_polar(x, -omega * t);
            total += if m == 0 { term.re } else { 2.0 * term.re };
        }
    }
    total
}

/// `x̄` sampled along a signal's time grid with the spectral propagator.
pub fn mean_position_trace(expansion: &ModeExpansion, times: &[f64]) -> Vec<f64> {
    times
        .par_iter()
        .map(|&t| mean_position(&expansion.at(t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_envelope_is_symmetric_and_normalized() {
        let p = gaussian_coefficients(21, 7.0, PI / 4.0).unwrap();
        assert_eq!(p.support(), (14, 28));
        assert!((p.norm() - 1.0).abs() < NORM_TOLERANCE);
        for k in 1..=7 {
            assert!((p.get(21 + k).norm() - p.get(21 - k).norm()).abs() < 1e-15);
        }
        let ratio = p.get(22) / p.get(21);
        assert!((ratio.arg() - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn vanishing_extent_is_a_single_site() {
        for d in [0.0, 1e-9, 0.5] {
            let p = gaussian_coefficients(21, d, 0.3).unwrap();
            assert_eq!(p.c.len(), 1);
            assert!((p.get(21).norm() - 1.0).abs() < 1e-15);
        }
        assert!(gaussian_coefficients(21, -1.0, 0.0).is_err());
    }

    #[test]
    fn explicit_amplitudes_are_normalized() {
        let c = BTreeMap::from([(20, Complex64::new(1.0, 0.0)), (21, Complex64::new(0.0, 1.0))]);
        let p = PacketCoefficients::from_amplitudes(c).unwrap();
        assert!((p.norm() - 1.0).abs() < 1e-15);
        assert!((p.delta_n - 1.0).abs() < 1e-12);
        assert!(PacketCoefficients::from_amplitudes(BTreeMap::new()).is_err());
    }

    #[test]
    fn sample_grid_rules() {
        assert_eq!(sample_count(40.0 * PI, 2.0 * PI / 512.0).unwrap(), 10_241);
        assert!(sample_count(1.0, 0.3).is_err());
        assert!(check_nyquist(2.0 * PI / 512.0, 37).is_ok());
        assert!(check_nyquist(0.05, 37).is_err());
        let s = Signal::from_fn(11, 0.1, |t| t).unwrap();
        assert!((s.t_total() - 1.0).abs() < 1e-15);
        assert!(Signal::new(vec![1.0], 0.1).is_err());
        assert!(Signal::new(vec![1.0, f64::NAN], 0.1).is_err());
    }

    #[test]
    fn split_step_rejects_large_steps() {
        let cfg = LatticeConfig {
            n_min: -4,
            n_max: 4,
            points_per_period: 16,
            ..LatticeConfig::default()
        };
        let g = build_grid(&cfg).unwrap();
        let limit = split_step_limit(&cfg, &g);
        assert!(matches!(
            SplitStep::new(&cfg, 2.0 * limit, KineticModel::Stencil),
            Err(Error::StepTooLarge { .. })
        ));
        assert!(SplitStep::new(&cfg, 0.5 * limit, KineticModel::Stencil).is_ok());
    }

    #[test]
    fn harmonic_coherent_state_follows_classical_orbit() {
        let m = 0.5;
        let cfg = LatticeConfig {
            v0: 0.0,
            reduced_mass: m,
            points_per_period: 32,
            n_min: -16,
            n_max: 16,
        };
        let g = build_grid(&cfg).unwrap();
        let omega = (1.0 / m).sqrt();
        // ground-state width of the oscillator displaced by x̄(0)
        let s2 = 1.0 / (2.0 * m * omega);
        let x_start = 3.0;
        let mut psi = g.sample(|x| Complex64::new((-(x - x_start).powi(2) / (4.0 * s2)).exp(), 0.0));
        psi.normalize();
        let limit = split_step_limit(&cfg, &g);
        let dt_int = 0.9 * limit;
        let mut t = 0.0;
        for _ in 0..4 {
            let span = 0.6;
            psi = evolve_split_step_with(&psi, &cfg, span, dt_int, KineticModel::Spectral).unwrap();
            t += span;
            let expect = x_start * (omega * t).cos();
            assert!((mean_position(&psi) - expect).abs() < 1e-4, "t={t}");
            assert!((psi.norm() - 1.0).abs() < 1e-10);
        }
    }
}
