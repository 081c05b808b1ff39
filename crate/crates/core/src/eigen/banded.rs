//! Symmetric banded eigensolver.
//!
//! Eigenvalues come from bisection on the Sylvester inertia of `A - σI`
//! (negative pivots of a banded `LDLᵀ`), eigenvectors from inverse iteration
//! with a partially pivoted banded LU. Vectors whose eigenvalues fall within
//! `1e-3 ‖A‖` of each other are re-orthogonalized during the iteration, the
//! same clustering rule LAPACK's `stein` uses.

use crate::{Error, Result};

const MAX_INVERSE_ITERATIONS: usize = 8;

/// Real symmetric matrix stored by diagonals: `bands[k][i] = A[i][i + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    bands: Vec<Vec<f64>>,
}

/// Eigenpairs in ascending order; `vectors[i]` has unit Euclidean norm.
#[derive(Debug, Clone)]
pub struct BandEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl SymBandMatrix {
    /// `bands[0]` is the diagonal; `bands[k]` must have `n - k` entries.
    pub fn from_bands(bands: Vec<Vec<f64>>) -> Self {
        assert!(!bands.is_empty(), "a banded matrix needs a diagonal");
        let n = bands[0].len();
        for (k, b) in bands.iter().enumerate() {
            assert_eq!(b.len(), n.saturating_sub(k), "band {k} has the wrong length");
        }
        SymBandMatrix { n, bands }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bands.len() - 1
    }

    pub fn bands(&self) -> &[Vec<f64>] {
        &self.bands
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.bandwidth() {
            0.0
        } else {
            self.bands[k][lo]
        }
    }

    pub fn diagonal_mut(&mut self) -> &mut [f64] {
        &mut self.bands[0]
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.bands[0][i] * x[i];
        }
        for k in 1..self.bands.len() {
            for (i, &a) in self.bands[k].iter().enumerate() {
                y[i] += a * x[i + k];
                y[i + k] += a * x[i];
            }
        }
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            let mut r = 0.0;
            for k in 1..self.bands.len() {
                if i + k < self.n {
                    r += self.bands[k][i].abs();
                }
                if i >= k {
                    r += self.bands[k][i - k].abs();
                }
            }
            lo = lo.min(self.bands[0][i] - r);
            hi = hi.max(self.bands[0][i] + r);
        }
        (lo, hi)
    }

    /// Upper bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE)
    }

    /// Number of eigenvalues strictly below `sigma`.
    pub fn count_below(&self, sigma: f64) -> usize {
        let bw = self.bandwidth();
        let n = self.n;
        let tiny = f64::EPSILON * self.norm_bound();
        // l[i * bw + (s - 1)] = L[i][i - s]
        let mut l = vec![0.0; n * bw.max(1)];
        let mut d = vec![0.0; n];
        let mut negatives = 0;
        for i in 0..n {
            let first = i.saturating_sub(bw);
            for k in first..i {
                let mut v = self.get(i, k);
                for r in first.max(k.saturating_sub(bw))..k {
                    v -= l[i * bw + (i - r - 1)] * l[k * bw + (k - r - 1)] * d[r];
                }
                l[i * bw + (i - k - 1)] = v / d[k];
            }
            let mut di = self.bands[0][i] - sigma;
            for k in first..i {
                let lik = l[i * bw + (i - k - 1)];
                di -= lik * lik * d[k];
            }
            if di == 0.0 {
                di = -tiny;
            }
            if di < 0.0 {
                negatives += 1;
            }
            d[i] = di;
        }
        negatives
    }

    fn bisection_tolerance(&self) -> f64 {
        16.0 * f64::EPSILON * self.norm_bound()
    }

    /// Eigenvalues with ascending indices in `wanted` (0-based).
    pub fn eigenvalues_by_index(&self, wanted: std::ops::Range<usize>) -> Vec<f64> {
        let wanted = wanted.start..wanted.end.min(self.n);
        if wanted.is_empty() {
            return Vec::new();
        }
        let (glo, ghi) = self.gershgorin();
        let pad = self.bisection_tolerance() + 1e-12 * (glo.abs() + ghi.abs());
        let (a, b) = (glo - pad, ghi + pad);
        self.bisect(a, b, 0, self.n, &wanted)
    }

    /// All eigenvalues below `e_max`.
    pub fn eigenvalues_below(&self, e_max: f64) -> Vec<f64> {
        let count = self.count_below(e_max);
        self.eigenvalues_by_index(0..count)
    }

    fn bisect(
        &self,
        a: f64,
        b: f64,
        count_a: usize,
        count_b: usize,
        wanted: &std::ops::Range<usize>,
    ) -> Vec<f64> {
        let atol = self.bisection_tolerance();
        let mut out = Vec::with_capacity(wanted.len());
        // Depth-first on the left half keeps the output sorted.
        let mut stack = vec![(a, b, count_a, count_b)];
        while let Some((a, b, ca, cb)) = stack.pop() {
            if cb <= ca || cb <= wanted.start || ca >= wanted.end {
                continue;
            }
            let mid = 0.5 * (a + b);
            if b - a <= atol + 2.0 * f64::EPSILON * (a.abs() + b.abs()) || mid <= a || mid >= b {
                for idx in ca..cb {
                    if wanted.contains(&idx) {
                        out.push(mid);
                    }
                }
                continue;
            }
            let cm = self.count_below(mid).clamp(ca, cb);
            stack.push((mid, b, cm, cb));
            stack.push((a, mid, ca, cm));
        }
        out
    }

    /// Eigenpairs for the given index range.
    pub fn eigenpairs_by_index(&self, wanted: std::ops::Range<usize>) -> Result<BandEigen> {
        let values = self.eigenvalues_by_index(wanted);
        self.eigenvectors(values)
    }

    /// All eigenpairs below `e_max`.
    pub fn eigenpairs_below(&self, e_max: f64) -> Result<BandEigen> {
        let values = self.eigenvalues_below(e_max);
        self.eigenvectors(values)
    }

    fn eigenvectors(&self, approx: Vec<f64>) -> Result<BandEigen> {
        let cluster_gap = 1e-3 * self.norm_bound();
        let mut values = Vec::with_capacity(approx.len());
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(approx.len());
        for (idx, &lambda) in approx.iter().enumerate() {
            let cluster: Vec<usize> = (0..idx)
                .rev()
                .take_while(|&j| lambda - approx[j] < cluster_gap)
                .collect();
            let v = self.inverse_iteration(lambda, idx, &cluster, &vectors)?;
            let rq = self.rayleigh_quotient(&v);
            values.push(rq);
            vectors.push(v);
        }
        Ok(BandEigen { values, vectors })
    }

    fn rayleigh_quotient(&self, v: &[f64]) -> f64 {
        let mut av = vec![0.0; self.n];
        self.matvec(v, &mut av);
        dot(v, &av) / dot(v, v)
    }

    fn inverse_iteration(
        &self,
        lambda: f64,
        seed: usize,
        cluster: &[usize],
        vectors: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let n = self.n;
        let norm = self.norm_bound();
        let lu = BandLu::factor(self, lambda, f64::EPSILON * norm);
        let mut x: Vec<f64> = (0..n).map(|i| start_component(i, seed)).collect();
        orthogonalize(&mut x, cluster, vectors);
        normalize(&mut x);
        let mut av = vec![0.0; n];
        let mut residual = f64::INFINITY;
        for it in 0..MAX_INVERSE_ITERATIONS {
            lu.solve(&mut x);
            orthogonalize(&mut x, cluster, vectors);
            if normalize(&mut x) == 0.0 {
                return Err(Error::NonConvergence {
                    message: format!("inverse iteration collapsed at eigenvalue {lambda}"),
                    iterations: it + 1,
                });
            }
            self.matvec(&x, &mut av);
            let rq = dot(&x, &av);
            residual = av
                .iter()
                .zip(&x)
                .map(|(a, v)| (a - rq * v) * (a - rq * v))
                .sum::<f64>()
                .sqrt();
            if it >= 1 && residual <= 1e-11 * norm {
                break;
            }
        }
        if residual > 1e-8 * norm {
            return Err(Error::NonConvergence {
                message: format!(
                    "eigenvector residual {residual:e} at eigenvalue {lambda} exceeds {:e}",
                    1e-8 * norm
                ),
                iterations: MAX_INVERSE_ITERATIONS,
            });
        }
        // deterministic sign: largest component positive
        let (imax, _) = x
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, &v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
        if x[imax] < 0.0 {
            x.iter_mut().for_each(|v| *v = -*v);
        }
        Ok(x)
    }
}

// Low-discrepancy start vector; no RNG so results are reproducible.
fn start_component(i: usize, seed: usize) -> f64 {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    let t = (i as f64 * GOLDEN + seed as f64 * 0.414_213_562_373_095_1).fract();
    2.0 * t - 1.0 + 1e-3
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = dot(x, x).sqrt();
    if n > 0.0 && n.is_finite() {
        x.iter_mut().for_each(|v| *v /= n);
        n
    } else {
        0.0
    }
}

// Two passes of modified Gram-Schmidt.
fn orthogonalize(x: &mut [f64], cluster: &[usize], vectors: &[Vec<f64>]) {
    for _ in 0..2 {
        for &j in cluster {
            let q = &vectors[j];
            let c = dot(q, x);
            x.iter_mut().zip(q).for_each(|(xi, qi)| *xi -= c * qi);
        }
    }
}

/// Partially pivoted LU of `A - σI` in band storage.
///
/// Elimination keeps a sliding window of the `kl + 1` active rows over
/// columns `k ..= k + kl + ku`; after pivoting `U` has `kl + ku`
/// superdiagonals.
struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    upper: Vec<f64>,
    lower: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn factor(a: &SymBandMatrix, sigma: f64, tiny: f64) -> Self {
        let n = a.n;
        let kl = a.bandwidth();
        let width = 2 * kl + 1;
        let row_window = |row: usize, k: usize| -> Vec<f64> {
            // entries of row `row` at columns k..k+width
            (0..width)
                .map(|c| {
                    let col = k + c;
                    if row >= n || col >= n {
                        0.0
                    } else {
                        let v = a.get(row, col);
                        if row == col {
                            v - sigma
                        } else {
                            v
                        }
                    }
                })
                .collect()
        };
        let mut active: Vec<Vec<f64>> = (0..=kl).map(|r| row_window(r, 0)).collect();
        let mut upper = vec![0.0; n * width];
        let mut lower = vec![0.0; n * kl.max(1)];
        let mut pivots = vec![0; n];
        for k in 0..n {
            let rows = (kl + 1).min(n - k);
            let mut p = 0;
            for r in 1..rows {
                if active[r][0].abs() > active[p][0].abs() {
                    p = r;
                }
            }
            active.swap(0, p);
            pivots[k] = p;
            if active[0][0].abs() < tiny {
                active[0][0] = if active[0][0] < 0.0 { -tiny } else { tiny };
            }
            let (head, tail) = active.split_at_mut(1);
            let pivot_row = &head[0];
            for (r, row) in tail.iter_mut().enumerate().take(rows - 1) {
                let m = row[0] / pivot_row[0];
                lower[k * kl + r] = m;
                if m != 0.0 {
                    for c in 1..width {
                        row[c] -= m * pivot_row[c];
                    }
                }
            }
            upper[k * width..(k + 1) * width].copy_from_slice(pivot_row);
            // slide the window one column to the right and pull in row k+kl+1
            let mut next: Vec<Vec<f64>> = active
                .drain(1..)
                .map(|mut row| {
                    row.remove(0);
                    row.push(0.0);
                    row
                })
                .collect();
            let incoming = k + 1 + kl;
            next.push(row_window(incoming, k + 1));
            // the incoming row's window starts at column k+1
            active = next;
        }
        BandLu {
            n,
            kl,
            width,
            upper,
            lower,
            pivots,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let kl = self.kl;
        // forward: apply the recorded swaps and multipliers
        for k in 0..n {
            let p = self.pivots[k];
            if p != 0 {
                b.swap(k, k + p);
            }
            let yk = b[k];
            let rows = kl.min(n - k - 1);
            for r in 0..rows {
                b[k + 1 + r] -= self.lower[k * kl + r] * yk;
            }
        }
        // backward
        for k in (0..n).rev() {
            let row = &self.upper[k * self.width..(k + 1) * self.width];
            let mut s = b[k];
            for c in 1..self.width {
                if k + c < n {
                    s -= row[c] * b[k + c];
                }
            }
            b[k] = s / row[0];
        }
    }
}
