//! Spectrum of the discretized Hamiltonian and the site-localized basis.
//!
//! On a mirror-symmetric grid the even and odd parity sectors are solved
//! separately on the half line. The splittings inside a parity doublet are
//! far below what a full-grid inverse iteration can separate, so mixing the
//! sectors numerically would scramble `φ^S` and `φ^A`.

mod banded;
mod basis;
mod calibrate;

pub use banded::{BandEigen, SymBandMatrix};
pub use basis::{
    check_translation_invariance, make_site_basis, momentum_translation_error, DipoleCoupling,
    LadderFit, SiteBasis, SiteState,
};
pub use calibrate::{calibrate_reduced_mass, evaluate_point, CalibrationReport, CalibrationSettings, ScanPoint};

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::lattice::{sample_potential, GridWavefunction, LatticeConfig, SpatialGrid};
use crate::{Error, Result};

/// Reflection-overlap magnitude above which a full-grid state gets a parity.
pub const PARITY_OVERLAP_THRESHOLD: f64 = 0.9;
/// A state is localized when its position spread is below one period.
pub const LOCALIZATION_SPREAD: f64 = 1.0;
/// Probability within half a period of the axis above which the spread is
/// measured on `x` instead of `|x|`.
pub const AXIS_STRADDLE_PROBABILITY: f64 = 0.01;

/// Discretized `H` with the 5-point kinetic stencil.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    grid: SpatialGrid,
    reduced_mass: f64,
    potential: Vec<f64>,
    matrix: SymBandMatrix,
}

pub fn build_hamiltonian(grid: &SpatialGrid, config: &LatticeConfig) -> Hamiltonian {
    hamiltonian_with_potential(grid, config.reduced_mass, sample_potential(grid, config))
}

/// Same stencil with an arbitrary potential sampled on the grid nodes.
pub fn hamiltonian_with_potential(
    grid: &SpatialGrid,
    reduced_mass: f64,
    potential: Vec<f64>,
) -> Hamiltonian {
    assert_eq!(potential.len(), grid.len());
    let n = grid.len();
    let c = kinetic_coefficient(reduced_mass, grid.dx());
    let diag = potential.iter().map(|v| v + 30.0 / 12.0 * c).collect();
    let off1 = vec![-16.0 / 12.0 * c; n.saturating_sub(1)];
    let off2 = vec![1.0 / 12.0 * c; n.saturating_sub(2)];
    Hamiltonian {
        grid: grid.clone(),
        reduced_mass,
        potential,
        matrix: SymBandMatrix::from_bands(vec![diag, off1, off2]),
    }
}

/// `1 / (2 M* dx²)`.
pub fn kinetic_coefficient(reduced_mass: f64, dx: f64) -> f64 {
    1.0 / (2.0 * reduced_mass * dx * dx)
}

/// Eigenvalue of the 5-point kinetic stencil for a plane wave `e^{ipx}`.
pub fn stencil_dispersion(p: f64, reduced_mass: f64, dx: f64) -> f64 {
    let c = kinetic_coefficient(reduced_mass, dx);
    c * (30.0 - 32.0 * (p * dx).cos() + 2.0 * (2.0 * p * dx).cos()) / 12.0
}

impl Hamiltonian {
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn reduced_mass(&self) -> f64 {
        self.reduced_mass
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn matrix(&self) -> &SymBandMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// `H ψ` for a real vector.
    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; psi.len()];
        self.matrix.matvec(psi, &mut out);
        out
    }

    /// Grid and potential are both mirror symmetric.
    pub fn is_mirror_symmetric(&self) -> bool {
        let n = self.potential.len();
        self.grid.is_symmetric()
            && n % 2 == 0
            && (0..n / 2).all(|j| {
                let (a, b) = (self.potential[j], self.potential[n - 1 - j]);
                (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
            })
    }

    /// Half-line operator for the even (`sign = 1`) or odd (`sign = -1`)
    /// sector, acting on nodes `N/2 ..`. Ghost nodes left of the axis are
    /// `ψ_{-1} = sign ψ_0`, `ψ_{-2} = sign ψ_1`.
    fn sector(&self, sign: f64) -> SymBandMatrix {
        let n = self.dim();
        let h = n / 2;
        let c = kinetic_coefficient(self.reduced_mass, self.grid.dx());
        let mut bands: Vec<Vec<f64>> = self.matrix.bands().iter().map(|b| b[h..].to_vec()).collect();
        if h >= 1 {
            bands[0][0] += -16.0 / 12.0 * c * sign;
        }
        if h >= 2 {
            bands[1][0] += 1.0 / 12.0 * c * sign;
        }
        SymBandMatrix::from_bands(bands)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
    /// No definite parity (asymmetric grid or mixed state).
    None,
}

impl Parity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
            Parity::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateLabel {
    Localized,
    Delocalized,
}

impl StateLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            StateLabel::Localized => "localized",
            StateLabel::Delocalized => "delocalized",
        }
    }
}

/// Which part of the spectrum to compute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumRequest {
    Lowest(usize),
    Below(f64),
}

/// Eigenpairs in ascending energy; states are real with `Σψ² dx = 1`.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    grid: SpatialGrid,
    pub energies: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub parities: Vec<Parity>,
    pub labels: Vec<StateLabel>,
    /// Position spread used for the localization label.
    pub spreads: Vec<f64>,
    /// Energy of the lowest delocalized state; every state below is
    /// localized. `None` if no computed state is delocalized.
    pub epsilon_l: Option<f64>,
}

impl EigenSpectrum {
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn wavefunction(&self, i: usize) -> GridWavefunction {
        GridWavefunction::from_real(&self.states[i], &self.grid)
    }

    /// Largest `|⟨ψᵢ|ψⱼ⟩ - δᵢⱼ|` over all pairs.
    pub fn orthonormality_error(&self) -> f64 {
        let dx = self.grid.dx();
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            for j in 0..=i {
                let d: f64 = dot(&self.states[i], &self.states[j]) * dx;
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }
}

/// The `k` lowest eigenpairs.
pub fn solve_spectrum(h: &Hamiltonian, k: usize) -> Result<EigenSpectrum> {
    solve(h, SpectrumRequest::Lowest(k))
}

/// All eigenpairs with energy below `e_max`.
pub fn solve_spectrum_below(h: &Hamiltonian, e_max: f64) -> Result<EigenSpectrum> {
    solve(h, SpectrumRequest::Below(e_max))
}

pub fn solve(h: &Hamiltonian, request: SpectrumRequest) -> Result<EigenSpectrum> {
    if let SpectrumRequest::Lowest(k) = request {
        if k > h.dim() {
            return Err(Error::Config(format!(
                "requested {k} eigenpairs from a {}-dimensional operator",
                h.dim()
            )));
        }
    }
    let dx = h.grid.dx();
    let mut entries: Vec<(f64, Parity, Vec<f64>)> = Vec::new();
    if h.is_mirror_symmetric() {
        let even = h.sector(1.0);
        let odd = h.sector(-1.0);
        let (ne, no) = match request {
            SpectrumRequest::Lowest(k) => {
                let ve = even.eigenvalues_by_index(0..k);
                let vo = odd.eigenvalues_by_index(0..k);
                let (mut i, mut j) = (0, 0);
                while i + j < k {
                    if j >= vo.len() || (i < ve.len() && ve[i] <= vo[j]) {
                        i += 1;
                    } else {
                        j += 1;
                    }
                }
                (i, j)
            }
            SpectrumRequest::Below(e) => (even.count_below(e), odd.count_below(e)),
        };
        let (re, ro) = rayon::join(
            || even.eigenpairs_by_index(0..ne),
            || odd.eigenpairs_by_index(0..no),
        );
        let scale = 1.0 / (2.0 * dx).sqrt();
        for (sector, sign, parity) in [(re?, 1.0, Parity::Even), (ro?, -1.0, Parity::Odd)] {
            for (e, v) in sector.values.into_iter().zip(sector.vectors) {
                entries.push((e, parity, unfold(&v, sign, scale)));
            }
        }
    } else {
        let eig = match request {
            SpectrumRequest::Lowest(k) => h.matrix.eigenpairs_by_index(0..k)?,
            SpectrumRequest::Below(e) => h.matrix.eigenpairs_below(e)?,
        };
        let scale = 1.0 / dx.sqrt();
        for (e, v) in eig.values.into_iter().zip(eig.vectors) {
            let psi: Vec<f64> = v.iter().map(|x| x * scale).collect();
            let parity = if h.grid.is_symmetric() {
                let r = reflection_overlap_slice(&psi, dx);
                if r > PARITY_OVERLAP_THRESHOLD {
                    Parity::Even
                } else if r < -PARITY_OVERLAP_THRESHOLD {
                    Parity::Odd
                } else {
                    Parity::None
                }
            } else {
                Parity::None
            };
            entries.push((e, parity, psi));
        }
    }
    entries.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| parity_rank(a.1).cmp(&parity_rank(b.1)))
    });
    let mut spectrum = EigenSpectrum {
        grid: h.grid.clone(),
        energies: Vec::with_capacity(entries.len()),
        states: Vec::with_capacity(entries.len()),
        parities: Vec::with_capacity(entries.len()),
        labels: Vec::new(),
        spreads: Vec::new(),
        epsilon_l: None,
    };
    for (e, p, s) in entries {
        spectrum.energies.push(e);
        spectrum.parities.push(p);
        spectrum.states.push(s);
    }
    let c = classify_states(&spectrum);
    spectrum.labels = c.labels;
    spectrum.spreads = c.spreads;
    spectrum.epsilon_l = c.epsilon_l;
    Ok(spectrum)
}

fn parity_rank(p: Parity) -> u8 {
    match p {
        Parity::Even => 0,
        Parity::Odd => 1,
        Parity::None => 2,
    }
}

fn unfold(half: &[f64], sign: f64, scale: f64) -> Vec<f64> {
    let h = half.len();
    let mut full = vec![0.0; 2 * h];
    for (i, v) in half.iter().enumerate() {
        full[h + i] = v * scale;
        full[h - 1 - i] = sign * v * scale;
    }
    full
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `⟨ψ(x)|ψ(-x)⟩` for a state on a mirror-symmetric grid.
pub fn reflection_overlap(psi: &GridWavefunction) -> f64 {
    let a = psi.amplitudes();
    let n = a.len();
    (0..n).map(|j| (a[j].conj() * a[n - 1 - j]).re).sum::<f64>() * psi.dx()
}

fn reflection_overlap_slice(psi: &[f64], dx: f64) -> f64 {
    let n = psi.len();
    (0..n).map(|j| psi[j] * psi[n - 1 - j]).sum::<f64>() * dx
}

/// Localization labels for a solved spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<StateLabel>,
    pub spreads: Vec<f64>,
    pub epsilon_l: Option<f64>,
}

/// Position moments of a real state: `(mean x, mean |x|, spread)`.
///
/// A parity eigenstate of a doublet is split between `±n`, so its plain
/// spread is `≈ n`. For those the spread is taken on `|x|`, unless the state
/// carries appreciable weight near the axis (an oscillator-like state whose
/// `|x|` folding would hide its width).
fn moments(psi: &[f64], grid: &SpatialGrid, parity: Parity) -> (f64, f64, f64) {
    let dx = grid.dx();
    let (mut m1, mut a1, mut m2, mut axis) = (0.0, 0.0, 0.0, 0.0);
    for (v, &x) in psi.iter().zip(grid.x()) {
        let rho = v * v * dx;
        m1 += rho * x;
        a1 += rho * x.abs();
        m2 += rho * x * x;
        if x.abs() < 0.5 {
            axis += rho;
        }
    }
    let folded = parity != Parity::None && axis < AXIS_STRADDLE_PROBABILITY;
    let var = if folded { m2 - a1 * a1 } else { m2 - m1 * m1 };
    (m1, a1, var.max(0.0).sqrt())
}

pub fn classify_states(spec: &EigenSpectrum) -> Classification {
    let mut labels = Vec::with_capacity(spec.len());
    let mut spreads = Vec::with_capacity(spec.len());
    for (psi, &parity) in spec.states.iter().zip(&spec.parities) {
        let (_, _, s) = moments(psi, &spec.grid, parity);
        spreads.push(s);
        labels.push(if s < LOCALIZATION_SPREAD {
            StateLabel::Localized
        } else {
            StateLabel::Delocalized
        });
    }
    let epsilon_l = labels
        .iter()
        .position(|l| *l == StateLabel::Delocalized)
        .map(|i| spec.energies[i]);
    Classification {
        labels,
        spreads,
        epsilon_l,
    }
}

/// One quasi-degenerate doublet at well pair `±site`.
#[derive(Debug, Clone)]
pub struct ParityDoublet {
    pub site: i32,
    pub energy_even: f64,
    pub energy_odd: f64,
    /// `E^S - site²/2 - C`.
    pub delta_s: f64,
    /// `E^A - site²/2 - C`.
    pub delta_a: f64,
    pub even: Vec<f64>,
    pub odd: Vec<f64>,
}

impl ParityDoublet {
    pub fn mean_energy(&self) -> f64 {
        0.5 * (self.energy_even + self.energy_odd)
    }

    pub fn splitting(&self) -> f64 {
        (self.delta_s - self.delta_a).abs()
    }
}

/// Doublets over a contiguous site range plus the fitted spectral constant.
#[derive(Debug, Clone)]
pub struct ParityPairs {
    pub grid: SpatialGrid,
    /// Least-squares `C` in `Ē_n ≈ n²/2 + C`.
    pub constant: f64,
    pub epsilon_l: Option<f64>,
    pub doublets: Vec<ParityDoublet>,
}

impl ParityPairs {
    pub fn get(&self, site: i32) -> Option<&ParityDoublet> {
        self.doublets.iter().find(|d| d.site == site)
    }
}

/// Matches localized even/odd states into one doublet per well pair for
/// every site in `sites`.
pub fn pair_parities(spec: &EigenSpectrum, sites: RangeInclusive<i32>) -> Result<ParityPairs> {
    let (lo, hi) = (*sites.start(), *sites.end());
    if lo < 1 || hi < lo {
        return Err(Error::Config(format!(
            "pairing needs a site range of positive sites, got {lo}..={hi}"
        )));
    }
    if spec.parities.iter().any(|p| *p == Parity::None) {
        return Err(Error::Pairing {
            site: lo,
            reason: "spectrum has states without definite parity; \
                     pairing needs a mirror-symmetric grid"
                .into(),
        });
    }
    let mut even: Vec<Vec<usize>> = vec![Vec::new(); (hi - lo + 1) as usize];
    let mut odd = even.clone();
    for i in 0..spec.len() {
        if spec.labels[i] != StateLabel::Localized {
            continue;
        }
        let (_, a1, _) = moments(&spec.states[i], &spec.grid, spec.parities[i]);
        let site = a1.round() as i32;
        if site < lo || site > hi {
            continue;
        }
        let slot = (site - lo) as usize;
        match spec.parities[i] {
            Parity::Even => even[slot].push(i),
            Parity::Odd => odd[slot].push(i),
            Parity::None => unreachable!(),
        }
    }
    let mut raw = Vec::new();
    for site in lo..=hi {
        let slot = (site - lo) as usize;
        let (e, o) = (&even[slot], &odd[slot]);
        let describe = |v: &[usize], name: &str| -> Option<String> {
            match v.len() {
                1 => None,
                0 => Some(format!("no localized {name} state")),
                k => Some(format!(
                    "{k} localized {name} states at energies {:?} (more than one doublet per well)",
                    v.iter().map(|&i| spec.energies[i]).collect::<Vec<_>>()
                )),
            }
        };
        if let Some(reason) = describe(e, "even").or_else(|| describe(o, "odd")) {
            return Err(Error::Pairing { site, reason });
        }
        let (ie, io) = (e[0], o[0]);
        let gap = (spec.energies[ie] - spec.energies[io]).abs();
        let spacing = site as f64 - 0.5;
        if gap >= 0.25 * spacing {
            return Err(Error::Pairing {
                site,
                reason: format!(
                    "even/odd energies differ by {gap}, not quasi-degenerate \
                     against the neighbour spacing {spacing}"
                ),
            });
        }
        raw.push((site, ie, io));
    }
    let constant = raw
        .iter()
        .map(|&(n, ie, io)| 0.5 * (spec.energies[ie] + spec.energies[io]) - 0.5 * (n * n) as f64)
        .sum::<f64>()
        / raw.len() as f64;
    let doublets = raw
        .into_iter()
        .map(|(site, ie, io)| {
            let base = 0.5 * (site * site) as f64 + constant;
            ParityDoublet {
                site,
                energy_even: spec.energies[ie],
                energy_odd: spec.energies[io],
                delta_s: spec.energies[ie] - base,
                delta_a: spec.energies[io] - base,
                even: spec.states[ie].clone(),
                odd: spec.states[io].clone(),
            }
        })
        .collect();
    Ok(ParityPairs {
        grid: spec.grid.clone(),
        constant,
        epsilon_l: spec.epsilon_l,
        doublets,
    })
}

/// Energy cutoff that includes the doublets up to `site_max` plus a margin
/// of one level, measured from the ground state.
pub fn cutoff_for_sites(ground_energy: f64, site_max: i32) -> f64 {
    let top = site_max as f64 + 1.5;
    ground_energy + 0.5 * top * top
}

/// Solves the spectrum needed for a site basis over `sites`.
pub fn solve_for_sites(h: &Hamiltonian, sites: RangeInclusive<i32>) -> Result<EigenSpectrum> {
    let ground = h.matrix.eigenvalues_by_index(0..1);
    let e0 = ground.first().copied().unwrap_or(0.0);
    solve_spectrum_below(h, cutoff_for_sites(e0, *sites.end()))
}
