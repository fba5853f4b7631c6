//! Structural invariants checked over randomized inputs: impact-law
//! identities, Legendre round trips, derivative consistency, momentum
//! preservation, and energy behavior of the integrator.

use nalgebra::DVector;
use proptest::prelude::*;
use routhsim_core::hamiltonian::{inverse_legendre, legendre};
use routhsim_core::hybrid::{guard_value, lagrangian_field, newtonian_impact, rk4_step, GuardSpec};
use routhsim_core::mechanics::derivative_consistency;
use routhsim_core::routh::{make_reduced_system, momentum};
use routhsim_core::scenarios::{billiard_cartesian, billiard_polar};
use routhsim_core::StateTQ;

fn boundary_state(angle: f64, vx: f64, vy: f64) -> StateTQ {
    StateTQ::from_slices(&[angle.cos(), angle.sin()], &[vx, vy])
}

proptest! {
    /// v+ satisfies the restitution law <dh, v+> = -e <dh, v-> and leaves
    /// the configuration untouched; elastic impacts conserve kinetic
    /// energy; the post-impact state moves back into the domain.
    #[test]
    fn impact_law_identities(
        angle in 0.0..std::f64::consts::TAU,
        vx in -3.0..3.0_f64,
        vy in -3.0..3.0_f64,
        e_choice in 0usize..3,
    ) {
        let e = [0.0, 0.5, 1.0][e_choice];
        let hs = billiard_cartesian(1.0, 2.0, e);
        let mut s = boundary_state(angle, vx, vy);
        // The law applies to states leaving the domain; flip inward ones.
        if guard_value(&hs.guard, &s).1 > 0.0 {
            s.v = -s.v;
        }
        let post = newtonian_impact(&hs.system, &hs.guard, &s).unwrap();
        prop_assert_eq!(&post.q, &s.q);

        let (_, hdot_pre) = guard_value(&hs.guard, &s);
        let (_, hdot_post) = guard_value(&hs.guard, &post);
        let scale = 1f64.max(hdot_pre.abs());
        prop_assert!((hdot_post + e * hdot_pre).abs() <= 1e-12 * scale);
        prop_assert!(hdot_post >= -1e-12 * scale, "post-impact motion re-enters");

        if e == 1.0 {
            let ke_pre = s.v.norm_squared();
            let ke_post = post.v.norm_squared();
            prop_assert!((ke_pre - ke_post).abs() <= 1e-12 * 1f64.max(ke_pre));
        }
    }

    /// Flipping the sign of h (and of its gradient) does not change the
    /// impact outcome: the normal direction enters the law quadratically.
    #[test]
    fn impact_is_invariant_under_guard_sign_flip(
        angle in 0.0..std::f64::consts::TAU,
        vx in -3.0..3.0_f64,
        vy in -3.0..3.0_f64,
    ) {
        let hs = billiard_cartesian(1.0, 0.0, 0.5);
        let flipped = GuardSpec::new(
            |q: &DVector<f64>| q[0] * q[0] + q[1] * q[1] - 1.0,
            0.5,
        )
        .with_gradient(|q: &DVector<f64>| DVector::from_column_slice(&[2.0 * q[0], 2.0 * q[1]]));
        let s = boundary_state(angle, vx, vy);
        let a = newtonian_impact(&hs.system, &hs.guard, &s).unwrap();
        let b = newtonian_impact(&hs.system, &flipped, &s).unwrap();
        prop_assert!((a.v - b.v).amax() <= 1e-14);
    }

    /// The polar impact keeps the cyclic momentum: the guard normal has no
    /// angular component, so only rdot changes.
    #[test]
    fn polar_reset_preserves_cyclic_momentum(
        r_angle in 0.0..std::f64::consts::TAU,
        rdot in 0.1..3.0_f64,
        thdot in -3.0..3.0_f64,
        e in 0.0..1.0_f64,
    ) {
        let (hs, cyc) = billiard_polar(1.0, 2.0, e);
        let s = StateTQ::from_slices(&[1.0, r_angle], &[rdot, thdot]);
        let pre = momentum(&hs.system, &cyc, &s).unwrap();
        let post_state = newtonian_impact(&hs.system, &hs.guard, &s).unwrap();
        let post = momentum(&hs.system, &cyc, &post_state).unwrap();
        prop_assert!((post - pre).abs() <= 1e-12 * 1f64.max(pre.abs()));
        prop_assert!((post_state.v[0] + e * rdot).abs() <= 1e-12 * 1f64.max(rdot));
        prop_assert!((post_state.v[1] - thdot).abs() <= 1e-14 * 1f64.max(thdot.abs()));
    }

    /// inverse_legendre(legendre(s)) = s on both charts.
    #[test]
    fn legendre_round_trip(
        r in 0.2..1.0_f64,
        theta in 0.0..std::f64::consts::TAU,
        v0 in -3.0..3.0_f64,
        v1 in -3.0..3.0_f64,
    ) {
        let (pol, _) = billiard_polar(1.0, 2.0, 1.0);
        let s = StateTQ::from_slices(&[r, theta], &[v0, v1]);
        let back = inverse_legendre(&pol.system, &legendre(&pol.system, &s).unwrap()).unwrap();
        prop_assert!((back.v - &s.v).amax() <= 1e-10);

        let cart = billiard_cartesian(1.3, 2.0, 1.0);
        let sc = StateTQ::from_slices(&[0.5 * r * theta.cos(), 0.5 * r * theta.sin()], &[v0, v1]);
        let back = inverse_legendre(&cart.system, &legendre(&cart.system, &sc).unwrap()).unwrap();
        prop_assert!((back.v - &sc.v).amax() <= 1e-10);
    }

    /// The hand-written derivative bundles agree with central differences.
    #[test]
    fn analytic_bundles_match_finite_differences(
        r in 0.2..1.0_f64,
        theta in 0.0..std::f64::consts::TAU,
        v0 in -3.0..3.0_f64,
        v1 in -3.0..3.0_f64,
    ) {
        let (pol, _) = billiard_polar(1.0, 2.0, 1.0);
        let s = StateTQ::from_slices(&[r, theta], &[v0, v1]);
        let dev = derivative_consistency(&pol.system, std::slice::from_ref(&s)).unwrap();
        prop_assert!(dev < 1e-5, "polar deviation {dev}");

        let cart = billiard_cartesian(1.0, 2.0, 1.0);
        let sc = StateTQ::from_slices(&[0.9 * r * theta.cos(), 0.9 * r * theta.sin()], &[v0, v1]);
        let dev = derivative_consistency(&cart.system, std::slice::from_ref(&sc)).unwrap();
        prop_assert!(dev < 1e-5, "cartesian deviation {dev}");
    }

    /// The reduced system built by momentum substitution matches the
    /// closed-form radial family on random inputs.
    #[test]
    fn reduced_family_matches_closed_form(
        r in 0.2..1.0_f64,
        rdot in -3.0..3.0_f64,
        mu in -1.0..1.0_f64,
        c in 0.0..3.0_f64,
    ) {
        let m = 1.0;
        let (pol, cyc) = billiard_polar(m, c, 1.0);
        let rs = make_reduced_system(&pol.system, &cyc, mu).unwrap();
        let x = DVector::from_column_slice(&[r]);
        let xd = DVector::from_column_slice(&[rdot]);
        let want_r = 0.5 * m * rdot * rdot - mu * mu / (2.0 * m * r * r);
        prop_assert!((rs.reduced_lagrangian(&x, &xd) - want_r).abs() < 1e-10);
        let want_f = -2.0 * c * r * mu / m;
        prop_assert!((rs.reduced_force(&x, &xd)[0] - want_f).abs() < 1e-10);
    }
}

/// Integrating the free polar billiard (no force, no guard) conserves the
/// generalized energy to integrator accuracy over a long run.
#[test]
fn unforced_integration_conserves_energy() {
    let (pol, _) = billiard_polar(1.0, 0.0, 1.0);
    let field = lagrangian_field(&pol.system);
    let mut s = StateTQ::from_slices(&[0.5, 0.0], &[0.0, 1.0]);
    let e0 = pol.system.energy(&s).unwrap();
    let dt = 1e-3;
    let mut drift: f64 = 0.0;
    for _ in 0..10_000 {
        s = rk4_step(&field, &s, dt).unwrap();
        drift = drift.max((pol.system.energy(&s).unwrap() - e0).abs());
    }
    assert!(drift < 1e-6, "energy drift {drift}");
}
