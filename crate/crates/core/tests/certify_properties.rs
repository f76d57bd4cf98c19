use gridforge_core::certify::{
    check_freq_bound, lmi_search, max_osp_index, osp_freq_test, verify_certificate, GridSpec,
};
use gridforge_core::certify::lmi::LMI_REL_TOL;
use gridforge_core::inverter::{augmented_plant, close_loop};
use gridforge_core::{ControllerGains, InverterParams, LtiSystem, SyncFrame, VirtualImpedance};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn published_loop() -> LtiSystem {
    let plant =
        augmented_plant(&InverterParams::case_study(), &VirtualImpedance::case_study(), &SyncFrame::default()).unwrap();
    close_loop(&plant, &ControllerGains::published()).lti()
}

#[test]
fn index_brackets_the_lmi_threshold() {
    let sys = published_loop();
    let grid = GridSpec::default();
    let rho = max_osp_index(&sys, 1e-4, &grid).unwrap();
    let below = lmi_search(&sys, rho - 2e-3);
    let above = lmi_search(&sys, rho + 2e-3);
    assert!(below.is_feasible(), "{below:?}");
    assert!(!above.is_feasible(), "{above:?}");
    // the DC gain fixes the threshold: G(0) = R_V I + X_V J gives R_V / |Z|² = 0.4
    assert!((rho - 0.4).abs() < 1e-3, "{rho}");
}

#[test]
fn certificate_is_rechecked_from_scratch() {
    let sys = published_loop();
    let cert = lmi_search(&sys, 0.39).certificate().unwrap();
    let again = verify_certificate(&sys, &cert.p, 0.39);
    assert!(again.lmi_max_eig <= LMI_REL_TOL * again.lmi_norm);
    assert!(again.p_min_eig > 0.0);
    // the same P is not a certificate for a much stricter index
    let strict = verify_certificate(&sys, &cert.p, 0.6);
    assert!(strict.lmi_max_eig > LMI_REL_TOL * strict.lmi_norm);
}

#[test]
fn tighter_frequency_bound_fails() {
    let sys = published_loop();
    let grid = GridSpec::default();
    assert!(check_freq_bound(&sys, 1.5, 1e5, &grid).unwrap().ok);
    let r = check_freq_bound(&sys, 0.5, 1e5, &grid).unwrap();
    assert!(!r.ok);
    assert!(r.worst_gap > 0.0);
}

fn stable_loop(seed: &[f64], n: usize) -> LtiSystem {
    let m = |off: usize, r: usize, c: usize| DMatrix::from_fn(r, c, |i, j| seed[(off + i * c + j) % seed.len()]);
    let s = m(0, n, n);
    let a = DMatrix::identity(n, n) * -2.0 + (&s - s.transpose()) * 3.0 - &s * s.transpose() * 0.1;
    let l = m(7, 2, 2);
    let d = &l * l.transpose() + DMatrix::identity(2, 2) * 0.3;
    LtiSystem::new(a, m(3, n, 2), m(5, 2, n), d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn passivity_is_monotone_in_rho(
        seed in prop::collection::vec(-1.0f64..1.0, 16),
        n in 1usize..5,
        r1 in 0.0f64..0.8,
        r2 in 0.0f64..0.8,
    ) {
        let sys = stable_loop(&seed, n);
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let grid = GridSpec::default();
        if osp_freq_test(&sys, hi, &grid).unwrap() {
            prop_assert!(osp_freq_test(&sys, lo, &grid).unwrap());
        }
        if let Some(c) = lmi_search(&sys, hi).certificate() {
            // a certificate at the larger index also serves the smaller one
            let again = verify_certificate(&sys, &c.p, lo);
            prop_assert!(again.lmi_max_eig <= 1e-7 * again.lmi_norm);
        }
    }

    #[test]
    fn static_index_matches_rayleigh_bound(a in 0.2f64..3.0, b in 0.2f64..3.0, s in -2.0f64..2.0) {
        let d = DMatrix::from_row_slice(2, 2, &[a, s, -s, b]);
        let rho = max_osp_index(&LtiSystem::static_gain(d.clone()), 1e-6, &GridSpec::default()).unwrap();
        // sample the quotient vᵀ(D+Dᵀ)v / 2|Dv|² densely on the unit circle
        let mut best = f64::INFINITY;
        for k in 0..20000 {
            let th = std::f64::consts::PI * k as f64 / 20000.0;
            let v = nalgebra::DVector::from_column_slice(&[th.cos(), th.sin()]);
            let dv = &d * &v;
            best = best.min(v.dot(&((&d + d.transpose()) * &v)) / (2.0 * dv.norm_squared()));
        }
        prop_assert!(rho <= best * (1.0 + 1e-9));
        prop_assert!(rho >= best * (1.0 - 1e-6));
    }
}
