use proptest::prelude::*;
use ratebal_core::bounds::{
    c0, error_sum_bound, error_sum_bound_c0, f_tilde, th2_trend, xi_of_budget, BoundInputs, V_of,
};
use ratebal_core::invariants::error_sum_violations;

proptest! {
    #[test]
    fn floor_factor_capped(x in 1.0f64..1e4, alpha in 2.1f64..8.0) {
        prop_assert!(V_of(x, alpha).unwrap() <= c0(alpha) + 1e-12);
    }

    #[test]
    fn budget_inverse_round_trip(
        alpha in 2.5f64..6.0,
        q in prop::sample::select(vec![0.0, 2.0]),
        b in 0.5f64..5.0,
        log_xi in -12.0f64..0.0,
    ) {
        let xi2 = log_xi.exp2();
        prop_assume!(b * xi2.powf(-2.0 / alpha) >= 1.0);
        let f = f_tilde(xi2, b, 180.0, alpha, q).unwrap();
        prop_assume!(f > 0.0);
        let inv = xi_of_budget(f, b, 180.0, alpha, q).unwrap();
        prop_assert!(!inv.clamped);
        prop_assert!((inv.xi2 - xi2).abs() / xi2 < 1e-9);
    }

    #[test]
    fn floor_bound_below_capped_bound(alpha in 2.5f64..6.0, b in 0.5f64..5.0, log_xi in -12.0f64..0.0) {
        let xi2 = log_xi.exp2();
        prop_assume!(b * xi2.powf(-2.0 / alpha) >= 1.0);
        prop_assert!(error_sum_bound(xi2, b, alpha).unwrap() <= error_sum_bound_c0(xi2, b, alpha).unwrap() * (1.0 + 1e-12));
    }
}

#[test]
fn floor_factor_tends_to_one() {
    for &alpha in &[2.5, 4.0, 6.0] {
        let far: Vec<f64> = [1e2, 1e4, 1e6].iter().map(|&x| (V_of(x + 0.5, alpha).unwrap() - 1.0).abs()).collect();
        assert!(far[0] > far[1] && far[1] > far[2] && far[2] < 1e-5);
        assert_eq!(V_of(7.0, alpha).unwrap(), 1.0);
    }
}

#[test]
fn error_sum_never_exceeds_bound() {
    assert_eq!(error_sum_violations(42, 1000).unwrap(), 0);
}

#[test]
fn proportional_feedback_trend_approaches_limit() {
    let rhos = [1e6, 1e12, 1e24];
    let limit = 4.0 / 2.0 - 1.0;
    let base = BoundInputs {
        block_len: 180.0,
        antennas: 6,
        alpha: 4.0,
        overhead: 0.0,
        uplink_fraction: 0.03,
        density: 1.0,
        kappa_ul: 0.1,
    };
    let ideal = th2_trend(&rhos, &base, 0.0, &[1.0]).unwrap();
    assert!(ideal[2] >= limit - 0.1, "{ideal:?}");
    // The constant offset decides the side of approach; near-flat runs wobble by < 2e-3.
    for &q in &[0.0, 2.0] {
        for &b in &[1.0, 1.5, 2.0, 3.0] {
            for &l in &[0.5, 1.0, 2.0] {
                let inputs = BoundInputs { overhead: q, density: b, ..base };
                let t = th2_trend(&rhos, &inputs, 0.0, &[l]).unwrap();
                let toward = |a: f64, b: f64| if a < limit { b >= a - 2e-3 } else { b <= a + 2e-3 };
                assert!(t.windows(2).all(|w| toward(w[0], w[1])), "Q={q} b={b} ℓ²={l}: {t:?}");
            }
        }
    }
}
