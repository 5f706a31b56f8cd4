mod common;

use common::Scalar;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use slq_core::sde::{simulate, SimOptions};
use slq_core::{
    feedback_from, hessian_lambda_min, lyapunov_psd_check, pseudo_inverse, riccati_iterate, solve_lyapunov,
    CertificateKind, ControlPolicy, FeedbackPath, RiccatiOptions, Scenario64, SpectralModel,
};

fn symmetric_with_spectrum(seed_entries: &[f64], spectrum: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = spectrum.len();
    let raw = DMatrix::from_iterator(k, k, seed_entries.iter().copied());
    let q = raw.qr().q();
    let m = &q * DMatrix::from_diagonal(&DVector::from_column_slice(spectrum)) * q.transpose();
    let inv_diag = DVector::from_iterator(k, spectrum.iter().map(|&mu| if mu == 0.0 { 0.0 } else { 1.0 / mu }));
    let oracle = &q * DMatrix::from_diagonal(&inv_diag) * q.transpose();
    (0.5 * (&m + m.transpose()), oracle)
}

fn spectrum_entry() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), 0.2f64..5.0, -5.0f64..-0.2]
}

fn psd_scalar() -> impl Strategy<Value = Scalar> {
    (
        -4.0f64..0.0,
        -1.0f64..1.0,
        -1.5f64..1.5,
        -0.8f64..0.8,
        -0.8f64..0.8,
        0.0f64..2.0,
        0.2f64..2.0,
        0.0f64..2.0,
        -1.0f64..1.0,
    )
        .prop_map(|(lambda, a1, b, c, d, q, r, g, eta)| Scalar {
            lambda,
            a1,
            b,
            c,
            d,
            q,
            r,
            g,
            eta,
            horizon: 1.0,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn semigroup_law(lambda in prop::collection::vec(-20.0f64..0.0, 1..6), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let n = lambda.len();
        let model = SpectralModel::new(DVector::from_vec(lambda), 2.0).unwrap();
        let v = DVector::from_fn(n, |i, _| 1.0 + i as f64);
        let lhs = model.semigroup_apply(s, &model.semigroup_apply(t, &v));
        let rhs = model.semigroup_apply(s + t, &v);
        prop_assert!((lhs - rhs).amax() < 1e-12);
        prop_assert!((model.semigroup_apply(0.0, &v) - &v).amax() == 0.0);
    }

    #[test]
    fn projection_commutes_with_semigroup(lambda in prop::collection::vec(-20.0f64..0.0, 2..7), t in 0.0f64..1.0, cut in 1usize..6) {
        let n = lambda.len();
        let cut = cut.min(n);
        let model = SpectralModel::new(DVector::from_vec(lambda), 1.0).unwrap();
        let v = DVector::from_fn(n, |i, _| (i as f64 + 0.5).sin());
        let a = model.project(cut, &model.semigroup_apply(t, &v)).unwrap();
        let b = model.semigroup_apply(t, &model.project(cut, &v).unwrap());
        prop_assert!((a - b).amax() < 1e-15);
    }

    #[test]
    fn moore_penrose_identities(
        spectrum in prop::collection::vec(spectrum_entry(), 1..9),
        entries in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let k = spectrum.len();
        let (m, oracle) = symmetric_with_spectrum(&entries[..k * k], &spectrum);
        let p = pseudo_inverse(&m, 1e-10).matrix;
        prop_assert!((&m * &p * &m - &m).amax() < 1e-10);
        prop_assert!((&p * &m * &p - &p).amax() < 1e-10);
        prop_assert!(((&m * &p).transpose() - &m * &p).amax() < 1e-10);
        prop_assert!(((&p * &m).transpose() - &p * &m).amax() < 1e-10);
        prop_assert!((&p - &oracle).amax() < 1e-10);
    }

    #[test]
    fn lyapunov_solution_is_symmetric_and_nonnegative(sc in psd_scalar(), gain in -2.0f64..2.0) {
        let sc: Scenario64 = sc.build(60, 1, 1);
        let theta = FeedbackPath::constant(sc.grid, DMatrix::from_element(1, 1, gain));
        let p = solve_lyapunov(&sc.model, &sc.coeffs, &theta, &sc.grid).unwrap();
        prop_assert!(p.max_asymmetry() == 0.0);
        prop_assert!(lyapunov_psd_check(&p).passed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn iteration_decreases_monotonically(sc in psd_scalar()) {
        let sc: Scenario64 = sc.build(60, 1, 1);
        let sol = riccati_iterate(&sc.model, &sc.coeffs, &sc.grid, &RiccatiOptions::default()).unwrap();
        for stats in &sol.history[1..] {
            prop_assert!(stats.monotone_margin.unwrap() >= -1e-8);
        }
        prop_assert!(sol.certificate.pmin >= -1e-10);
        let is_strongly_regular = matches!(sol.certificate.kind, CertificateKind::StronglyRegular { .. });
        prop_assert!(is_strongly_regular);
    }

    #[test]
    fn hessian_dominates_certified_bound_without_control_noise(mut sc in psd_scalar()) {
        sc.d = 0.0;
        sc.eta = 0.0;
        let sc: Scenario64 = sc.build(20, 1, 1);
        let sol = riccati_iterate(&sc.model, &sc.coeffs, &sc.grid, &RiccatiOptions::default()).unwrap();
        let CertificateKind::StronglyRegular { lambda } = sol.certificate.kind else {
            panic!("not strongly regular");
        };
        let h = hessian_lambda_min(&sc, 20).unwrap();
        prop_assert!(h >= lambda - 1e-6, "hessian {h} < lambda {lambda}");
    }

    #[test]
    fn simulation_is_independent_of_thread_count(sc in psd_scalar(), seed in any::<u64>()) {
        let sc: Scenario64 = sc.build(20, seed, 64);
        let sol = riccati_iterate(&sc.model, &sc.coeffs, &sc.grid, &RiccatiOptions::default()).unwrap();
        let policy = ControlPolicy::Feedback(feedback_from(&sol, &sc.coeffs, 1e-10).unwrap());
        let mut opts = SimOptions::for_scenario(&sc);
        opts.coarse_shadow = true;
        opts.threads = Some(1);
        let one = simulate(&sc, &policy, &opts).unwrap();
        opts.threads = Some(3);
        let three = simulate(&sc, &policy, &opts).unwrap();
        prop_assert_eq!(one, three);
    }
}
