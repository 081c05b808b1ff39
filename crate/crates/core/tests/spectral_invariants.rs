//! Estimator and inversion invariants on constructed signals.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use parabloch::dynamics::{PacketCoefficients, Signal};
use parabloch::spectral::{
    amplitudes_two_fold, reconstruct_phases, recover_amplitudes, wrap, AmplitudeMethod,
    CoherenceTable, Estimator,
};

const DT: f64 = 2.0 * PI / 512.0;

/// `Σ_k 2 Re(a_k e^{-iω_k t})`.
fn tones(parts: &[(f64, Complex64)], t_total: f64) -> Signal {
    let count = (t_total / DT).round() as usize + 1;
    Signal::from_fn(count, DT, |t| {
        parts
            .iter()
            .map(|(w, a)| 2.0 * (a * Complex64::from_polar(1.0, -w * t)).re)
            .sum()
    })
    .unwrap()
}

#[test]
fn two_tone_amplitudes_are_recovered() {
    let parts = [
        (20.5, Complex64::from_polar(0.031, 0.7)),
        (21.5, Complex64::from_polar(0.012, -2.1)),
    ];
    let s = tones(&parts, 40.0 * PI);
    let est = Estimator::default();
    for (w, a) in parts {
        let got = 0.5 * est.estimate(&s, w).unwrap();
        assert!((got - a).norm() < 1e-2 * a.norm(), "{w}: {got} vs {a}");
    }
}

#[test]
fn cross_contamination_shrinks_with_duration() {
    // a weak tone next to a strong one, one frequency unit apart
    let weak = Complex64::from_polar(0.01, 0.4);
    let strong = Complex64::from_polar(1.0, -1.3);
    let est = Estimator::default();
    let error = |t_total: f64| {
        let s = tones(&[(20.5, weak), (21.5, strong)], t_total);
        (0.5 * est.estimate(&s, 20.5).unwrap() - weak).norm() / weak.norm()
    };
    // whole multiples of 2π sit on window nulls for unit spacing
    for k in [10.0, 20.0, 40.0, 80.0] {
        assert!(error(k * PI) < 1e-11);
    }
    // worst case over one beat period of durations
    let worst: Vec<f64> = [10.0, 20.0, 40.0, 80.0]
        .iter()
        .map(|k| (0..16).map(|j| error(k * PI + j as f64 * PI / 8.0)).fold(0.0, f64::max))
        .collect();
    for w in worst.windows(2) {
        assert!(w[1] < w[0], "{worst:?}");
    }
}

fn packet() -> impl Strategy<Value = PacketCoefficients> {
    (1i32..40, proptest::collection::vec((0.02..1.0f64, -PI..PI), 2..16)).prop_map(|(lo, parts)| {
        let c: BTreeMap<i32, Complex64> = parts
            .into_iter()
            .enumerate()
            .map(|(i, (r, p))| (lo + i as i32, Complex64::from_polar(r, p)))
            .collect();
        PacketCoefficients::from_amplitudes(c).unwrap()
    })
}

proptest! {
    #[test]
    fn two_fold_identity_is_exact(p in packet()) {
        let tf = amplitudes_two_fold(&CoherenceTable::exact(&p));
        for (n, v) in &tf.raw {
            prop_assert!((v - p.get(*n).norm_sqr()).abs() < 1e-13);
        }
        prop_assert!(tf.imaginary_fraction.values().all(|f| f.abs() < 1e-12));
    }

    #[test]
    fn global_phase_leaves_phase_differences(p in packet(), theta in -PI..PI) {
        let a = CoherenceTable::exact(&p);
        let b = CoherenceTable::exact(&p.rotated(theta));
        let amps = recover_amplitudes(&a, AmplitudeMethod::TwoFold).magnitudes;
        let pa = reconstruct_phases(&a, &amps);
        let pb = reconstruct_phases(&b, &amps);
        for ((n, x), (_, y)) in pa.phases.iter().zip(&pb.phases) {
            prop_assert!(wrap(x - y).abs() < 1e-12, "site {}", n);
        }
    }

    #[test]
    fn recovered_phases_match_the_packet(p in packet()) {
        let table = CoherenceTable::exact(&p);
        let amps = recover_amplitudes(&table, AmplitudeMethod::TwoFold).magnitudes;
        let ph = reconstruct_phases(&table, &amps);
        prop_assume!(ph.relative_phase_known());
        let (&n0, _) = p.c.iter().next().unwrap();
        let offset = p.get(n0).arg() - ph.phases[&n0];
        for (n, z) in &p.c {
            prop_assert!(wrap(z.arg() - ph.phases[n] - offset).abs() < 1e-9);
        }
    }

    #[test]
    fn estimator_is_linear(
        a in proptest::collection::vec(-1.0..1.0f64, 64),
        b in proptest::collection::vec(-1.0..1.0f64, 64),
        x in -3.0..3.0f64,
        y in -3.0..3.0f64,
        omega in 0.5..40.0f64,
    ) {
        let dt = 2.0 * PI / 128.0;
        let sa = Signal::new(a.clone(), dt).unwrap();
        let sb = Signal::new(b.clone(), dt).unwrap();
        let mix = Signal::new(a.iter().zip(&b).map(|(p, q)| x * p + y * q).collect(), dt).unwrap();
        let est = Estimator { spacing: 10.0, ..Estimator::default() };
        let lhs = est.estimate(&mix, omega).unwrap();
        let rhs = x * est.estimate(&sa, omega).unwrap() + y * est.estimate(&sb, omega).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));
    }
}
