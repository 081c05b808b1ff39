use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ParityPairs;
use crate::lattice::{GridWavefunction, SpatialGrid};
use crate::momentum::{amplitude_at, momentum_transform, MomentumWavefunction};

/// Highest fold for which dipole couplings are tabulated.
pub const M_MAX: usize = 3;

/// A site-localized state `φ_n = (φ^S + φ^A)/√2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteState {
    pub n: i32,
    /// Doublet mean with the spectral constant removed.
    pub energy: f64,
    pub delta_s: f64,
    pub delta_a: f64,
    /// Real amplitudes on the basis grid.
    pub values: Vec<f64>,
}

/// `X_m(n) = ⟨φ_n|x|φ_{n+m}⟩` with spread diagnostics over `n`.
///
/// For `m = 0` the stored values are the offsets `⟨φ_n|x|φ_n⟩ - n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleCoupling {
    pub m: usize,
    pub per_site: BTreeMap<i32, f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl DipoleCoupling {
    /// `(max - min) / |mean|`.
    pub fn relative_spread(&self) -> f64 {
        (self.max - self.min) / self.mean.abs()
    }

    /// Same diagnostic restricted to `n` in `lo..=hi`.
    pub fn relative_spread_over(&self, lo: i32, hi: i32) -> Option<f64> {
        let v: Vec<f64> = self.per_site.range(lo..=hi).map(|(_, &x)| x).collect();
        if v.is_empty() {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let (mn, mx) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        Some((mx - mn) / mean.abs())
    }

    /// Full matrix element, with the site index restored for `m = 0`.
    pub fn element(&self, n: i32) -> Option<f64> {
        self.per_site
            .get(&n)
            .map(|&x| if self.m == 0 { x + n as f64 } else { x })
    }
}

/// Site-localized states on the right half line with energies, doublet
/// splittings, dipole couplings and momentum profiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteBasis {
    grid: SpatialGrid,
    /// Spectral constant removed from every energy.
    pub constant: f64,
    pub epsilon_l: Option<f64>,
    pub sites: BTreeMap<i32, SiteState>,
    pub dipole_couplings: Vec<DipoleCoupling>,
    #[serde(skip)]
    momentum_profiles: BTreeMap<i32, MomentumWavefunction>,
}

pub fn make_site_basis(pairs: &ParityPairs) -> SiteBasis {
    let grid = pairs.grid.clone();
    let right: Vec<bool> = grid.x().iter().map(|&x| x > 0.0).collect();
    let orient = |v: &[f64]| -> f64 {
        let s: f64 = v.iter().zip(&right).filter(|(_, r)| **r).map(|(a, _)| a).sum();
        if s < 0.0 {
            -1.0
        } else {
            1.0
        }
    };
    let mut sites = BTreeMap::new();
    for d in &pairs.doublets {
        let se = orient(&d.even);
        let so = orient(&d.odd);
        let values: Vec<f64> = d
            .even
            .iter()
            .zip(&d.odd)
            .map(|(s, a)| FRAC_1_SQRT_2 * (se * s + so * a))
            .collect();
        sites.insert(
            d.site,
            SiteState {
                n: d.site,
                energy: d.mean_energy() - pairs.constant,
                delta_s: d.delta_s,
                delta_a: d.delta_a,
                values,
            },
        );
    }
    SiteBasis::assemble(grid, pairs.constant, pairs.epsilon_l, sites)
}

impl SiteBasis {
    /// Rebuilds derived data (couplings, momentum profiles) from states.
    pub fn assemble(
        grid: SpatialGrid,
        constant: f64,
        epsilon_l: Option<f64>,
        sites: BTreeMap<i32, SiteState>,
    ) -> SiteBasis {
        let mut basis = SiteBasis {
            grid,
            constant,
            epsilon_l,
            sites,
            dipole_couplings: Vec::new(),
            momentum_profiles: BTreeMap::new(),
        };
        basis.dipole_couplings = (0..=M_MAX).map(|m| basis.compute_coupling(m)).collect();
        basis.refresh_momentum_profiles();
        basis
    }

    /// Recomputes the momentum profiles, which are not serialized.
    pub fn refresh_momentum_profiles(&mut self) {
        self.momentum_profiles = self
            .sites
            .keys()
            .map(|&n| (n, momentum_transform(&self.state(n).unwrap())))
            .collect();
    }

    fn compute_coupling(&self, m: usize) -> DipoleCoupling {
        let x = self.grid.x();
        let mut per_site = BTreeMap::new();
        for (&n, s) in &self.sites {
            let Some(t) = self.sites.get(&(n + m as i32)) else {
                continue;
            };
            let mut v: f64 = s
                .values
                .iter()
                .zip(&t.values)
                .zip(x)
                .map(|((a, b), xi)| a * b * xi)
                .sum::<f64>()
                * self.grid.dx();
            if m == 0 {
                v -= n as f64;
            }
            per_site.insert(n, v);
        }
        let vals: Vec<f64> = per_site.values().copied().collect();
        let mean = if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let (min, max) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        DipoleCoupling {
            m,
            per_site,
            mean,
            min,
            max,
        }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn site_range(&self) -> Option<(i32, i32)> {
        Some((*self.sites.keys().next()?, *self.sites.keys().next_back()?))
    }

    pub fn contains(&self, n: i32) -> bool {
        self.sites.contains_key(&n)
    }

    pub fn energy(&self, n: i32) -> Option<f64> {
        self.sites.get(&n).map(|s| s.energy)
    }

    pub fn state(&self, n: i32) -> Option<GridWavefunction> {
        self.sites
            .get(&n)
            .map(|s| GridWavefunction::from_real(&s.values, &self.grid))
    }

    pub fn values(&self, n: i32) -> Option<&[f64]> {
        self.sites.get(&n).map(|s| s.values.as_slice())
    }

    pub fn momentum_profile(&self, n: i32) -> Option<&MomentumWavefunction> {
        self.momentum_profiles.get(&n)
    }

    /// `φ̃_n(p)` evaluated exactly.
    pub fn momentum_amplitude(&self, n: i32, p: f64) -> Option<Complex64> {
        self.state(n).map(|s| amplitude_at(&s, p))
    }

    pub fn coupling(&self, m: usize) -> Option<&DipoleCoupling> {
        self.dipole_couplings.get(m)
    }

    /// `⟨φ_n|φ_m⟩`.
    pub fn overlap(&self, n: i32, m: i32) -> Option<f64> {
        let a = self.values(n)?;
        let b = self.values(m)?;
        Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * self.grid.dx())
    }

    /// Largest `|⟨φ_n|φ_m⟩ - δ_nm|` over all pairs.
    pub fn orthonormality_error(&self) -> f64 {
        let keys: Vec<i32> = self.sites.keys().copied().collect();
        let mut worst: f64 = 0.0;
        for (i, &n) in keys.iter().enumerate() {
            for &m in &keys[..=i] {
                let target = if n == m { 1.0 } else { 0.0 };
                worst = worst.max((self.overlap(n, m).unwrap() - target).abs());
            }
        }
        worst
    }

    /// Probability of `φ_n` inside `[n - 1, n + 1]`.
    pub fn localization_fraction(&self, n: i32) -> Option<f64> {
        let v = self.values(n)?;
        let lo = n as f64 - 1.0;
        let hi = n as f64 + 1.0;
        Some(
            v.iter()
                .zip(self.grid.x())
                .filter(|(_, &x)| x >= lo && x <= hi)
                .map(|(a, _)| a * a)
                .sum::<f64>()
                * self.grid.dx(),
        )
    }

    /// `⟨φ_n|x|φ_n⟩`.
    pub fn mean_position(&self, n: i32) -> Option<f64> {
        self.coupling(0)?.element(n)
    }

    /// `ε_n`, keyed by site.
    pub fn energies(&self) -> BTreeMap<i32, f64> {
        self.sites.iter().map(|(&n, s)| (n, s.energy)).collect()
    }

    /// Sets the states, e.g. after loading a modified artifact, and
    /// recomputes derived quantities.
    pub fn with_states(mut self, states: BTreeMap<i32, Vec<f64>>) -> SiteBasis {
        for (n, v) in states {
            if let Some(s) = self.sites.get_mut(&n) {
                s.values = v;
            }
        }
        SiteBasis::assemble(self.grid, self.constant, self.epsilon_l, self.sites)
    }
}

/// Fit of site energies to `n²/2 + const`, with residuals measured in units
/// of the local level spacing `n - ½`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderFit {
    pub sites: (i32, i32),
    /// Least-squares constant and its worst relative residual.
    pub least_squares: (f64, f64),
    /// Constant minimizing the worst relative residual, and that residual.
    pub minimax: (f64, f64),
    /// Least-squares slope `α` of `ε_n ≈ α n²/2 + b` and the worst relative
    /// residual of that two-parameter fit.
    pub slope: (f64, f64),
}

impl LadderFit {
    /// `None` if fewer than two sites of `lo..=hi` are in the basis.
    pub fn new(basis: &SiteBasis, lo: i32, hi: i32) -> Option<LadderFit> {
        let pts: Vec<(f64, f64, f64)> = (lo..=hi)
            .filter_map(|n| {
                let q = 0.5 * (n * n) as f64;
                basis.energy(n).map(|e| (q, e, n as f64 - 0.5))
            })
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let worst = |f: &dyn Fn(f64) -> f64| {
            pts.iter()
                .map(|&(q, e, w)| ((e - f(q)) / w).abs())
                .fold(0.0, f64::max)
        };
        let k = pts.len() as f64;
        let c_ls = pts.iter().map(|&(q, e, _)| e - q).sum::<f64>() / k;
        // the optimum is where two weighted residuals balance
        let mut best = (c_ls, worst(&|q| q + c_ls));
        for (i, &(qi, ei, wi)) in pts.iter().enumerate() {
            for &(qj, ej, wj) in &pts[i + 1..] {
                let c = ((ei - qi) * wj + (ej - qj) * wi) / (wi + wj);
                let r = worst(&|q| q + c);
                if r < best.1 {
                    best = (c, r);
                }
            }
        }
        let mq = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let me = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let alpha = pts.iter().map(|&(q, e, _)| (q - mq) * (e - me)).sum::<f64>()
            / pts.iter().map(|&(q, _, _)| (q - mq).powi(2)).sum::<f64>();
        Some(LadderFit {
            sites: (lo, hi),
            least_squares: (c_ls, worst(&|q| q + c_ls)),
            minimax: best,
            slope: (alpha, worst(&|q| me + alpha * (q - mq))),
        })
    }
}

/// `|⟨φ_n(x)|φ_m(x - (n - m))⟩|`.
///
/// The shift is a whole number of periods, hence of grid nodes, so no
/// interpolation is involved. Returns `None` if either site is missing.
pub fn check_translation_invariance(basis: &SiteBasis, n: i32, m: i32) -> Option<f64> {
    let a = basis.values(n)?;
    let b = basis.values(m)?;
    let shift = (n - m) as i64 * basis.grid.points_per_period() as i64;
    let len = a.len() as i64;
    let mut acc = 0.0;
    for (j, &aj) in a.iter().enumerate() {
        let k = j as i64 - shift;
        if k >= 0 && k < len {
            acc += aj * b[k as usize];
        }
    }
    Some((acc * basis.grid.dx()).abs())
}

/// Momentum-space translation error relative to a reference site:
/// `max_{|p| ≤ π} |φ_n(p) - e^{i(n-n0)p} φ_n0(p)| / max|φ_n0(p)|`.
pub fn momentum_translation_error(basis: &SiteBasis, n: i32, n0: i32) -> Option<f64> {
    let a = basis.momentum_profile(n)?;
    let r = basis.momentum_profile(n0)?;
    let peak = r
        .amplitudes()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let shift = (n - n0) as f64;
    let worst = a
        .p()
        .iter()
        .zip(a.amplitudes())
        .zip(r.amplitudes())
        .filter(|((p, _), _)| p.abs() <= std::f64::consts::PI)
        .map(|((p, x), y)| (x - Complex64::from_polar(1.0, shift * p) * y).norm())
        .fold(0.0, f64::max);
    Some(worst / peak)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{build_hamiltonian, pair_parities, solve_for_sites};
    use crate::lattice::{build_grid, LatticeConfig};

    // Small but physical lattice: deep wells, coarse grid, few sites.
    fn small_basis() -> SiteBasis {
        let cfg = LatticeConfig {
            v0: 90.0,
            reduced_mass: crate::lattice::DEFAULT_REDUCED_MASS,
            points_per_period: 32,
            n_min: -20,
            n_max: 20,
        };
        let g = build_grid(&cfg).unwrap();
        let h = build_hamiltonian(&g, &cfg);
        let spec = solve_for_sites(&h, 12..=15).unwrap();
        make_site_basis(&pair_parities(&spec, 12..=15).unwrap())
    }

    #[test]
    fn ladder_fit_on_a_synthetic_ladder() {
        let basis = small_basis();
        let (lo, hi) = basis.site_range().unwrap();
        let mut sites = basis.sites.clone();
        // hand-made energies: α n²/2 + 3 with α = 0.99
        for (n, s) in sites.iter_mut() {
            s.energy = 0.99 * 0.5 * (n * n) as f64 + 3.0;
        }
        let b = SiteBasis::assemble(basis.grid.clone(), 0.0, None, sites);
        let fit = LadderFit::new(&b, lo, hi).unwrap();
        assert!((fit.slope.0 - 0.99).abs() < 1e-12 && fit.slope.1 < 1e-12);
        assert!(fit.minimax.1 <= fit.least_squares.1);
        let brute = (0..20001)
            .map(|i| {
                let c = -10.0 + 1e-3 * i as f64;
                (lo..=hi)
                    .map(|n| ((b.energy(n).unwrap() - 0.5 * (n * n) as f64 - c) / (n as f64 - 0.5)).abs())
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(fit.minimax.1 <= brute + 1e-12 && brute - fit.minimax.1 < 1e-4);
    }

    #[test]
    fn site_states_are_orthonormal_and_localized() {
        let b = small_basis();
        assert!(b.orthonormality_error() < 1e-6);
        for n in 12..=15 {
            let loc = b.localization_fraction(n).unwrap();
            assert!(loc > 0.99, "site {n}: {loc}");
            assert!((b.mean_position(n).unwrap() - n as f64).abs() < 0.05);
        }
    }

    #[test]
    fn translation_of_a_site_onto_itself_is_exact() {
        let b = small_basis();
        assert!((check_translation_invariance(&b, 13, 13).unwrap() - 1.0).abs() < 1e-12);
        assert!(check_translation_invariance(&b, 13, 14).unwrap() > 0.99);
        assert!(check_translation_invariance(&b, 13, 40).is_none());
    }

    #[test]
    fn serde_round_trip_rebuilds_profiles() {
        let b = small_basis();
        let json = serde_json::to_string(&b).unwrap();
        let mut back: SiteBasis = serde_json::from_str(&json).unwrap();
        assert!(back.momentum_profile(5).is_none());
        back.refresh_momentum_profiles();
        assert_eq!(back.momentum_profile(5), b.momentum_profile(5));
        assert_eq!(back.sites, b.sites);
    }
}
