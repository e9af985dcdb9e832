use ion_photon::dynamics::{integrate, uniform_grid, Tolerances, EVOLUTION_EIGEN_FLOOR, TRACE_DRIFT_TOL};
use ion_photon::emission::{apply_noise, Basis, DetectionWindow, PolarizationMatrix};
use ion_photon::linalg::{
    c, partial_trace, tensor, trace_distance, ComplexMatrix, ComplexVector, DensityMatrix, Physicality, PureState,
};
use ion_photon::system::{OscillatingTerm, SystemParams, TimeDependentHamiltonian};
use ion_photon::tomography::{
    expected_counts, mean_state_fidelity_from_process, mle_process_from_counts, mle_state_from_counts,
    process_fidelity, BasisCounts,
};
use nalgebra::Matrix2;
use proptest::prelude::*;

fn complex_matrix(n: usize) -> impl Strategy<Value = ComplexMatrix> {
    prop::collection::vec(-1.0..1.0f64, 2 * n * n)
        .prop_map(move |v| ComplexMatrix::from_fn(n, n, |i, j| c(v[2 * (i * n + j)], v[2 * (i * n + j) + 1])))
}

/// A A† / Tr, optionally mixed with a small multiple of the identity.
fn density(n: usize) -> impl Strategy<Value = DensityMatrix> {
    complex_matrix(n).prop_map(move |a| {
        let m = &a * a.adjoint() + ComplexMatrix::identity(n, n) * c(1e-6, 0.0);
        let tr = m.trace();
        DensityMatrix::new(m / tr).unwrap()
    })
}

fn pure_state(n: usize) -> impl Strategy<Value = PureState> {
    prop::collection::vec(-1.0..1.0f64, 2 * n)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(move |v| {
            PureState::normalized(ComplexVector::from_fn(n, |i, _| c(v[2 * i], v[2 * i + 1]))).unwrap()
        })
}

fn counts() -> impl Strategy<Value = Vec<BasisCounts>> {
    prop::collection::vec(0u32..500, 6).prop_map(|v| {
        Basis::ALL
            .iter()
            .enumerate()
            .map(|(k, &basis)| BasisCounts {
                basis,
                counts: [v[2 * k] as f64, v[2 * k + 1] as f64 + 1.0],
            })
            .collect()
    })
}

fn tetrahedral_inputs() -> Vec<PureState> {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    [(0.0, 0.0), (FRAC_PI_2, 0.0), (FRAC_PI_4, PI), (FRAC_PI_4, FRAC_PI_2)]
        .iter()
        .map(|&(a, p)| PureState::qubit(a, p))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn noise_model_output_is_physical(
        rho in density(2),
        weight in 1e-6..0.05f64,
        dark_hz in 0.0..100.0f64,
        init in 0.9..=1.0f64,
        tau_us in 1.0..1000.0f64,
        end_us in 0.1..55.0f64,
    ) {
        let m = rho.matrix() * c(weight, 0.0);
        let pol = PolarizationMatrix {
            matrix: Matrix2::from_fn(|i, j| m[(i, j)]),
            weight,
            mean_time: 0.5 * end_us * 1e-6,
        };
        let mut p = SystemParams::untuned();
        p.dark_rate = dark_hz;
        p.init_fidelity = init;
        p.coherence_time = tau_us * 1e-6;
        let window = DetectionWindow::from_us(0.0, end_us).unwrap();
        let noisy = apply_noise(&pol, &p, &window, 2).unwrap();
        prop_assert!(noisy.state.physicality().is_physical());
        prop_assert!((0.0..=1.0).contains(&noisy.dark_fraction));
    }

    #[test]
    fn state_mle_likelihood_is_monotone_and_physical(data in counts()) {
        let est = mle_state_from_counts(&data).unwrap();
        for w in est.history.windows(2) {
            prop_assert!(w[1] >= w[0], "likelihood decreased: {} -> {}", w[0], w[1]);
        }
        prop_assert!(est.state.physicality().is_physical());
    }

    #[test]
    fn partial_trace_inverts_tensor(a in density(2), b in density(3)) {
        let ab = DensityMatrix::new(tensor(a.matrix(), b.matrix())).unwrap();
        let ra = partial_trace(&ab, &[2, 3], &[0]).unwrap();
        let rb = partial_trace(&ab, &[2, 3], &[1]).unwrap();
        prop_assert!(trace_distance(ra.matrix(), a.matrix()) < 1e-12);
        prop_assert!(trace_distance(rb.matrix(), b.matrix()) < 1e-12);
    }

    #[test]
    fn fidelities_are_bounded(psi in pure_state(2), rho in density(2)) {
        let f = ion_photon::linalg::state_fidelity(&psi, &rho).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lindblad_evolution_stays_physical(
        h in complex_matrix(3),
        l1 in complex_matrix(3),
        l2 in complex_matrix(3),
        drive in complex_matrix(3),
        freq in -5.0..5.0f64,
        psi in pure_state(3),
    ) {
        let herm = |m: &ComplexMatrix| (m + m.adjoint()) * c(0.5, 0.0);
        let osc = drive * c(0.3, 0.0);
        let hamiltonian = TimeDependentHamiltonian {
            static_part: herm(&h),
            oscillating_parts: vec![
                OscillatingTerm { matrix: osc.clone(), frequency: freq },
                OscillatingTerm { matrix: osc.adjoint(), frequency: -freq },
            ],
        };
        let problem = ion_photon::dynamics::MasterEquationProblem::new(
            hamiltonian,
            vec![l1, l2 * c(0.5, 0.0)],
            psi.to_density(),
            uniform_grid(2.0, 21),
        );
        let res = integrate(&problem, Tolerances::default()).unwrap();
        for s in &res.states {
            let p = Physicality::of(s);
            prop_assert!(p.hermiticity_error < 1e-12);
            prop_assert!(p.trace_error < TRACE_DRIFT_TOL);
            prop_assert!(p.min_eigenvalue > EVOLUTION_EIGEN_FLOOR);
        }
    }

    #[test]
    fn process_mle_is_completely_positive_and_trace_preserving(data in prop::collection::vec(counts(), 4)) {
        let inputs = tetrahedral_inputs();
        let est = mle_process_from_counts(&inputs, &data).unwrap();
        for w in est.history.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        prop_assert!(est.process.physicality().within(1e-10, 1e-9, -1e-9));
        // Tr_out of the Choi matrix is the identity
        for a in 0..2 {
            for b in 0..2 {
                let t = est.choi[(2 * a, 2 * b)] + est.choi[(2 * a + 1, 2 * b + 1)];
                let expect = if a == b { 1.0 } else { 0.0 };
                prop_assert!((t - c(expect, 0.0)).norm() < 1e-9);
            }
        }
        let f = process_fidelity(&est.process);
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&f));
        prop_assert!(mean_state_fidelity_from_process(f) >= 1.0 / 3.0 - 1e-9);
    }

    #[test]
    fn exact_probabilities_reconstruct_random_states(rho in density(2)) {
        let est = mle_state_from_counts(&expected_counts(&rho, 1e6).unwrap()).unwrap();
        prop_assert!(trace_distance(est.state.matrix(), rho.matrix()) < 2e-3);
    }
}
