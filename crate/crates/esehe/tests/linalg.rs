//! Eigen solver against independent oracles.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use esehe::linalg;
use esehe::smallsignal::{LinearInputs, Sweep, SweepParam};

use common::{charpoly, det, durand_kerner, matmul, max_matched_distance};

/// Random matrix shifted left so every eigenvalue has negative real part.
fn random_stable(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    // Gershgorin bound on the spectral radius
    let r = a.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= r + 0.1;
    }
    a
}

fn scale(ev: &[Complex64]) -> f64 {
    ev.iter().map(|z| z.norm()).fold(1.0, f64::max)
}

#[test]
fn dense_solver_matches_characteristic_polynomial_roots() {
    for seed in 0..200 {
        let a = random_stable(seed, 5);
        let ev = linalg::eigenvalues(&a).unwrap();
        let roots = durand_kerner(&charpoly(&a));
        let d = max_matched_distance(&ev, &roots);
        assert!(d <= 1e-6, "seed {seed}: distance {d}");
        assert!(ev.iter().all(|z| z.re < 0.0));
    }
}

#[test]
fn spectrum_closed_under_conjugation() {
    for seed in 0..50 {
        let ev = linalg::eigenvalues(&random_stable(seed, 5)).unwrap();
        let conj: Vec<Complex64> = ev.iter().map(|z| z.conj()).collect();
        assert!(max_matched_distance(&ev, &conj) <= 1e-9 * scale(&ev));
    }
}

proptest! {
    #[test]
    fn similarity_leaves_spectrum_unchanged(
        seed in 0u64..1000,
        s in prop::collection::vec(0.01f64..100.0, 5),
    ) {
        let a = random_stable(seed, 5);
        let d: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| if i == j { s[i] } else { 0.0 }).collect()).collect();
        let d_inv: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| if i == j { 1.0 / s[i] } else { 0.0 }).collect()).collect();
        let b = matmul(&matmul(&d, &a), &d_inv);
        let ea = linalg::eigenvalues(&a).unwrap();
        let eb = linalg::eigenvalues(&b).unwrap();
        prop_assert!(max_matched_distance(&ea, &eb) <= 1e-8 * scale(&ea));
    }

    #[test]
    fn eigenvalues_sum_to_trace_and_multiply_to_det(seed in 0u64..1000) {
        let a = random_stable(seed, 5);
        let ev = linalg::eigenvalues(&a).unwrap();
        let sum: Complex64 = ev.iter().sum();
        let prod: Complex64 = ev.iter().product();
        let tr = linalg::trace(&a);
        let dt = det(&a);
        prop_assert!((sum.re - tr).abs() <= 1e-8 * tr.abs() && sum.im.abs() <= 1e-8 * tr.abs());
        prop_assert!((prod.re - dt).abs() <= 1e-8 * dt.abs() && prod.im.abs() <= 1e-8 * dt.abs());
    }
}

#[test]
fn model_matrix_invariants_across_sweeps() {
    let base = LinearInputs::default();
    for param in [SweepParam::IStack0, SweepParam::KDroop] {
        let (lo, hi) = param.default_range();
        let sweep = Sweep {
            param,
            start: lo,
            end: hi,
            count: 10,
        };
        for v in sweep.values().unwrap() {
            let mut inp = base.clone();
            match param {
                SweepParam::IStack0 => inp.I_stack0 = v,
                SweepParam::KDroop => inp.vsm.K_droop = v,
                _ => unreachable!(),
            }
            let m = inp.model().unwrap();
            let sum: Complex64 = m.eigenvalues.iter().sum();
            let prod: Complex64 = m.eigenvalues.iter().product();
            let tr = linalg::trace(&m.a);
            let dt = det(&m.a);
            assert!((sum.re - tr).abs() <= 1e-8 * tr.abs(), "{param:?} {v}");
            assert!((prod.re - dt).abs() <= 1e-8 * dt.abs(), "{param:?} {v}");
            let roots = durand_kerner(&charpoly(&m.a));
            assert!(max_matched_distance(&m.eigenvalues, &roots) <= 1e-6 * scale(&roots));
        }
    }
}
