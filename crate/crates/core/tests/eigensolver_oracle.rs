//! Banded solver against a dense symmetric eigensolver.

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use parabloch::eigen::{
    build_hamiltonian, classify_states, pair_parities, solve_spectrum, StateLabel, SymBandMatrix,
};
use parabloch::lattice::{build_grid, LatticeConfig};

fn dense(m: &SymBandMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.dim(), m.dim(), |i, j| m.get(i, j))
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn lattice_spectrum_matches_dense_diagonalization() {
    // deep wells on a desk-sized grid: 13 periods at 16 points
    let cfg = LatticeConfig {
        v0: 90.0,
        reduced_mass: 0.2,
        points_per_period: 16,
        n_min: -6,
        n_max: 6,
    };
    let grid = build_grid(&cfg).unwrap();
    let h = build_hamiltonian(&grid, &cfg);
    let reference = sorted_eigenvalues(dense(h.matrix()));
    let spec = solve_spectrum(&h, 30).unwrap();
    for (k, (a, b)) in spec.energies.iter().zip(&reference).enumerate() {
        assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "level {k}: {a} vs {b}");
    }
    assert!(spec.orthonormality_error() < 1e-10);

    // eigenvector residuals against the dense matrix
    let d = dense(h.matrix());
    for (e, v) in spec.energies.iter().zip(&spec.states) {
        let x = nalgebra::DVector::from_column_slice(v);
        let norm = x.norm();
        let r = (&d * &x - &x * *e).norm() / norm;
        assert!(r < 1e-8 * e.abs().max(1.0), "residual {r}");
    }
}

#[test]
fn shallow_lattice_has_no_doublets() {
    let cfg = LatticeConfig {
        v0: 5.0,
        points_per_period: 32,
        ..Default::default()
    };
    let grid = build_grid(&cfg).unwrap();
    let spec = solve_spectrum(&build_hamiltonian(&grid, &cfg), 40).unwrap();
    let c = classify_states(&spec);
    assert!(c.labels.iter().all(|l| *l == StateLabel::Delocalized));
    assert!(pair_parities(&spec, 10..=32).is_err());
}

fn banded() -> impl Strategy<Value = SymBandMatrix> {
    (2usize..40, 0usize..4).prop_flat_map(|(n, w)| {
        let w = w.min(n - 1);
        proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, n), w + 1).prop_map(
            move |rows| {
                let bands = rows
                    .into_iter()
                    .enumerate()
                    .map(|(k, mut r)| {
                        r.truncate(n - k);
                        r
                    })
                    .collect();
                SymBandMatrix::from_bands(bands)
            },
        )
    })
}

proptest! {
    #[test]
    fn band_eigenvalues_match_dense(m in banded()) {
        let reference = sorted_eigenvalues(dense(&m));
        let n = m.dim();
        let values = m.eigenvalues_by_index(0..n);
        let scale = m.norm_bound().max(1.0);
        for (a, b) in values.iter().zip(&reference) {
            prop_assert!((a - b).abs() < 1e-10 * scale, "{} vs {}", a, b);
        }
        let pairs = m.eigenpairs_by_index(0..n).unwrap();
        let d = dense(&m);
        for (e, v) in pairs.values.iter().zip(&pairs.vectors) {
            let x = nalgebra::DVector::from_column_slice(v);
            prop_assert!((&d * &x - &x * *e).norm() < 1e-8 * scale);
        }
    }

    #[test]
    fn inertia_counts_match_dense(m in banded(), sigma in -6.0..6.0f64) {
        let reference = sorted_eigenvalues(dense(&m));
        let below = reference.iter().filter(|&&e| e < sigma).count();
        // a dense eigenvalue within rounding of σ may land on either side
        let near = reference.iter().any(|&e| (e - sigma).abs() < 1e-9);
        prop_assume!(!near);
        prop_assert_eq!(m.count_below(sigma), below);
    }
}
