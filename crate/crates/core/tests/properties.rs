//! Property tests for the algebraic invariants of the core routines.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use proptest::prelude::*;
use qdyn_core::dynamics::{solve_tridiagonal, tridiagonal_eigen};
use qdyn_core::potentials::{Frequency, PotentialSpec};
use qdyn_core::quasiperiodic::{symmetry_defect, ContinuedFraction};
use qdyn_core::tracemap::{fib, iterate, lambda0, trace_at};
use qdyn_core::transfer::{step_matrix, step_matrix_inverse, transfer, Mat2};
use qdyn_core::Complex64 as C64;

fn explicit(values: &[f64]) -> PotentialSpec {
    let samples: BTreeMap<i64, f64> = values.iter().enumerate().map(|(i, &v)| (i as i64 - 4, v)).collect();
    PotentialSpec::Explicit { samples }
}

fn close(a: Mat2, b: Mat2, tol: f64) -> bool {
    [a.a11 - b.a11, a.a12 - b.a12, a.a21 - b.a21, a.a22 - b.a22]
        .iter()
        .all(|d| d.norm() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_matrices_invert(v in -20.0..20.0f64, re in -10.0..10.0f64, im in -2.0..2.0f64) {
        let z = C64::new(re, im);
        let m = step_matrix(v, z);
        prop_assert!(close(m * step_matrix_inverse(v, z), Mat2::IDENTITY, 1e-12 * (1.0 + v.abs() + z.norm())));
        prop_assert!((m.det() - 1.0).norm() <= 1e-12);
    }

    #[test]
    fn transfer_products_are_unimodular(
        values in prop::collection::vec(-6.0..6.0f64, 1..12),
        n in -40i64..40,
        re in -8.0..8.0f64,
        im in 0.0..1.0f64,
    ) {
        let pot = explicit(&values).compile().unwrap();
        let m = transfer(&pot, n, C64::new(re, im));
        prop_assert!((m.det() - 1.0).norm() <= 1e-10 * m.frobenius_sq().max(1.0));
    }

    #[test]
    fn transfer_composes(values in prop::collection::vec(-6.0..6.0f64, 1..12), n in 1i64..30, re in -5.0..5.0f64) {
        let pot = explicit(&values).compile().unwrap();
        let z = C64::new(re, 0.25);
        let stepped = step_matrix(pot.sample(n + 1), z) * transfer(&pot, n, z);
        let direct = transfer(&pot, n + 1, z);
        prop_assert!(close(stepped, direct, 1e-9 * direct.frobenius_sq().sqrt().max(1.0)));
    }

    #[test]
    fn half_traces_match_fibonacci_blocks(lambda in 0.5..12.0f64, re in -10.0..10.0f64, im in 0.0..1.0f64, k in 1usize..10) {
        let z = C64::new(re, im);
        let pot = PotentialSpec::Fibonacci { lambda }.compile().unwrap();
        let (x, _) = trace_at(k, lambda, z);
        let half = transfer(&pot, fib(k as u32).unwrap() as i64, z).trace() / 2.0;
        prop_assert!((x - half).norm() <= 1e-8 * half.norm().max(1.0));
    }

    #[test]
    fn trace_map_invariant_is_conserved(lambda in 0.5..12.0f64, re in -12.0..12.0f64, im in 0.0..1.0f64) {
        let orbit = iterate(C64::new(re, im), lambda, 40, 0.1).unwrap();
        let limit = 1e-9 * (lambda * lambda / 4.0).max(1.0);
        for (_, r) in orbit.invariant_residuals() {
            prop_assert!(r <= limit);
        }
    }

    #[test]
    fn escaped_orbits_grow(lambda in 6.0..20.0f64, re in -23.0..23.0f64, im in 0.001..1.0f64) {
        prop_assume!(lambda > lambda0(0.1));
        let orbit = iterate(C64::new(re, im), lambda, 60, 0.1).unwrap();
        if let Some(growth) = &orbit.growth {
            prop_assert!(growth.passed(), "{growth:?}");
        }
    }

    #[test]
    fn convergents_are_unimodular(quotients in prop::collection::vec(1u32..50, 1..30), a0 in -5i64..5) {
        let cf = ContinuedFraction::from_quotients(
            BigInt::from(a0),
            quotients.iter().map(|&a| BigInt::from(a)).collect(),
        )
        .unwrap();
        prop_assert!(cf.verify());
        for k in 1..cf.q.len() {
            prop_assert!(cf.q[k] >= cf.q[k - 1]);
        }
    }

    #[test]
    fn mirrored_family_is_swap_conjugate(theta in 0.01..0.99f64, omega in 0.0..1.0f64, re in -4.0..4.0f64) {
        let pot = PotentialSpec::almost_mathieu(
            3.0,
            Frequency::Float { value: theta },
            Frequency::Float { value: omega },
        )
        .compile()
        .unwrap();
        prop_assert!(symmetry_defect(&pot, 200, C64::new(re, 0.1)).unwrap() <= 1e-12);
    }

    #[test]
    fn resolvent_solves_the_system(diag in prop::collection::vec(-5.0..5.0f64, 2..40), re in -6.0..6.0f64, im in 0.01..2.0f64, pick in 0usize..40) {
        let source = pick % diag.len();
        let z = C64::new(re, im);
        let phi = solve_tridiagonal(&diag, source, z).unwrap();
        let scale = phi.iter().map(|p| p.norm()).fold(1.0, f64::max);
        for i in 0..diag.len() {
            let left = if i > 0 { phi[i - 1] } else { C64::new(0.0, 0.0) };
            let right = if i + 1 < diag.len() { phi[i + 1] } else { C64::new(0.0, 0.0) };
            let lhs = left + right + (diag[i] - z) * phi[i];
            let rhs = if i == source { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            prop_assert!((lhs - rhs).norm() <= 1e-10 * scale * (1.0 + z.norm() + 5.0));
        }
    }

    #[test]
    fn eigenpairs_reconstruct(diag in prop::collection::vec(-5.0..5.0f64, 1..30)) {
        let off = vec![1.0; diag.len() - 1];
        let (values, vectors) = tridiagonal_eigen(&diag, &off).unwrap();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        for (lambda, v) in values.iter().zip(&vectors) {
            let norm: f64 = v.iter().map(|x| x * x).sum();
            prop_assert!((norm - 1.0).abs() <= 1e-10);
            for i in 0..diag.len() {
                let mut hv = diag[i] * v[i];
                if i > 0 {
                    hv += off[i - 1] * v[i - 1];
                }
                if i + 1 < diag.len() {
                    hv += off[i] * v[i + 1];
                }
                prop_assert!((hv - lambda * v[i]).abs() <= 1e-9);
            }
        }
    }
}
