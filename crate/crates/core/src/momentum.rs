//! Momentum representation, `ψ̃(p) = (2π)^{-1/2} ∫ e^{ipx} ψ(x) dx`.
//!
//! On a grid of `N` nodes the transform is evaluated at `p_k = 2πk/(N dx)`
//! for `k = -N/2 .. N/2`, which makes the discrete Parseval identity
//! `Σ|ψ̃|² dp = Σ|ψ|² dx` exact.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::lattice::GridWavefunction;
use crate::{Error, Result};

/// Momentum amplitudes on an ascending, uniform momentum grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumWavefunction {
    p: Vec<f64>,
    amplitudes: Vec<Complex64>,
    dp: f64,
}

impl MomentumWavefunction {
    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dp(&self) -> f64 {
        self.dp
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// `Σ |ψ̃|² dp`.
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.dp
    }

    pub fn range(&self) -> (f64, f64) {
        (self.p[0], self.p[self.p.len() - 1])
    }

    /// `|ψ̃(p)|²` linearly interpolated between grid momenta.
    pub fn probability_at(&self, p: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(p >= lo && p <= hi) {
            return Err(Error::MomentumOutOfRange { p, min: lo, max: hi });
        }
        let f = (p - lo) / self.dp;
        let i = (f.floor() as usize).min(self.p.len() - 2);
        let w = f - i as f64;
        let a = self.amplitudes[i].norm_sqr();
        let b = self.amplitudes[i + 1].norm_sqr();
        Ok(a + w * (b - a))
    }
}

/// Momentum grid spacing and ordering for an `n`-node grid of spacing `dx`.
pub fn momentum_grid(n: usize, dx: f64) -> Vec<f64> {
    let dp = 2.0 * PI / (n as f64 * dx);
    let half = (n / 2) as i64;
    (0..n as i64).map(|i| (i - half) as f64 * dp).collect()
}

pub fn momentum_transform(psi: &GridWavefunction) -> MomentumWavefunction {
    let n = psi.len();
    let dx = psi.dx();
    let mut buf = psi.amplitudes().to_vec();
    if n > 0 {
        // rustfft's inverse is the unnormalized Σ_j e^{+2πi jk/N}
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    }
    let p = momentum_grid(n, dx);
    let scale = dx / (2.0 * PI).sqrt();
    let half = (n / 2) as i64;
    let amplitudes = p
        .iter()
        .enumerate()
        .map(|(i, &pk)| {
            let k = (i as i64 - half).rem_euclid(n as i64) as usize;
            buf[k] * Complex64::from_polar(scale, pk * psi.x0())
        })
        .collect();
    MomentumWavefunction {
        p,
        amplitudes,
        dp: 2.0 * PI / (n as f64 * dx),
    }
}

/// Exact discrete transform at a single momentum.
pub fn amplitude_at(psi: &GridWavefunction, p: f64) -> Complex64 {
    amplitude_at_slice(psi.amplitudes(), psi.x0(), psi.dx(), p)
}

pub(crate) fn amplitude_at_slice(amps: &[Complex64], x0: f64, dx: f64, p: f64) -> Complex64 {
    let scale = dx / (2.0 * PI).sqrt();
    if p == 0.0 {
        return amps.iter().sum::<Complex64>() * scale;
    }
    // phase recurrence with periodic re-anchoring to bound round-off
    let step = Complex64::from_polar(1.0, p * dx);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut ph = Complex64::from_polar(1.0, p * x0);
    for (j, a) in amps.iter().enumerate() {
        if j % 256 == 0 {
            ph = Complex64::from_polar(1.0, p * (x0 + j as f64 * dx));
        }
        acc += a * ph;
        ph *= step;
    }
    acc * scale
}

/// `|ψ̃(p)|²` with linear interpolation on the transform grid.
pub fn probability_at_momentum(psi: &GridWavefunction, p: f64) -> Result<f64> {
    momentum_transform(psi).probability_at(p)
}
