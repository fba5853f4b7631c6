//! End-to-end acceptance checks. Each test verifies one guaranteed
//! behavior at its stated tolerance and prints a single PASS/FAIL line
//! (visible with `cargo test -- --nocapture`, or on failure).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use routhsim_core::hybrid::{execute, guard_value, newtonian_impact};
use routhsim_core::mechanics::derivative_consistency;
use routhsim_core::routh::{
    arc_momentum_drift, compare_full_reduced, execute_reduced, hybrid_momentum_check,
    make_reduced_system, momentum, reconstruct, reduced_acceleration,
};
use routhsim_core::scenarios::{billiard_cartesian, billiard_polar, bouncer_1d};
use routhsim_core::{hamiltonian, IntegratorConfig, StateTQ, Termination};

fn check(name: &str, ok: bool, detail: &str) {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn fig_initial() -> StateTQ {
    StateTQ::from_slices(&[0.5, 0.0], &[2.0, 1.0])
}

fn config(dt: f64, t_max: f64) -> IntegratorConfig {
    IntegratorConfig {
        dt,
        t_max,
        ..Default::default()
    }
}

/// Maps a polar state (r, theta, rdot, thetadot) to the Cartesian chart.
fn polar_to_cartesian(s: &StateTQ) -> StateTQ {
    let (r, th, rd, thd) = (s.q[0], s.q[1], s.v[0], s.v[1]);
    StateTQ::from_slices(
        &[r * th.cos(), r * th.sin()],
        &[
            rd * th.cos() - r * thd * th.sin(),
            rd * th.sin() + r * thd * th.cos(),
        ],
    )
}

#[test]
fn impact_law_reflects_normal_velocity_and_conserves_elastic_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut max_reflect = 0.0_f64;
    let mut max_energy = 0.0_f64;
    for _ in 0..1000 {
        let m = rng.random_range(0.5..3.0);
        let e = rng.random_range(0.0..=1.0);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let q = [phi.cos(), phi.sin()];
        let mut v = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        // leaving the disk: hdot = -2 (x vx + y vy) must be negative
        if q[0] * v[0] + q[1] * v[1] < 0.0 {
            v = [-v[0], -v[1]];
        }
        let s = StateTQ::from_slices(&q, &v);

        let def = billiard_cartesian(m, 0.0, e);
        let post = newtonian_impact(&def.system, &def.guard, &s).unwrap();
        let (_, hdot_pre) = guard_value(&def.guard, &s);
        let (_, hdot_post) = guard_value(&def.guard, &post);
        let resid = (hdot_post + e * hdot_pre).abs() / hdot_pre.abs().max(1.0);
        max_reflect = max_reflect.max(resid);

        let elastic = billiard_cartesian(m, 0.0, 1.0);
        let post1 = newtonian_impact(&elastic.system, &elastic.guard, &s).unwrap();
        let ke = |s: &StateTQ| 0.5 * m * (s.v[0] * s.v[0] + s.v[1] * s.v[1]);
        max_energy = max_energy.max((ke(&post1) - ke(&s)).abs() / ke(&s).max(1.0));
    }
    let ok = max_reflect <= 1e-12 && max_energy <= 1e-12;
    check(
        "impact law reflection and elastic energy identities",
        ok,
        &format!(
            "1000 surface states: max |hdot+ + e hdot-| = {max_reflect:.2e}, \
             max elastic energy change = {max_energy:.2e} (tol 1e-12)"
        ),
    );
}

#[test]
fn radial_impact_preserves_cyclic_momentum_and_matches_cartesian_chart() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut max_mu = 0.0_f64;
    let mut max_chart = 0.0_f64;
    for _ in 0..1000 {
        let m = rng.random_range(0.5..3.0);
        let e = rng.random_range(0.0..=1.0);
        let th = rng.random_range(0.0..std::f64::consts::TAU);
        let s = StateTQ::from_slices(
            &[1.0, th],
            &[rng.random_range(0.05..3.0), rng.random_range(-3.0..3.0)],
        );

        let (def, cyc) = billiard_polar(m, 0.0, e);
        let mu_pre = momentum(&def.system, &cyc, &s).unwrap();
        let post = newtonian_impact(&def.system, &def.guard, &s).unwrap();
        let mu_post = momentum(&def.system, &cyc, &post).unwrap();
        max_mu = max_mu.max((mu_post - mu_pre).abs() / mu_pre.abs().max(1.0));

        // same impact computed in the Cartesian chart
        let cart = billiard_cartesian(m, 0.0, e);
        let post_cart =
            newtonian_impact(&cart.system, &cart.guard, &polar_to_cartesian(&s)).unwrap();
        let mapped = polar_to_cartesian(&post);
        let dev = (&mapped.v - &post_cart.v)
            .norm()
            .max((&mapped.q - &post_cart.q).norm());
        max_chart = max_chart.max(dev);
    }
    let ok = max_mu <= 1e-12 && max_chart <= 1e-10;
    check(
        "radial impact momentum conservation and chart agreement",
        ok,
        &format!(
            "1000 surface states: max |mu+ - mu-| = {max_mu:.2e} (tol 1e-12), \
             max polar/Cartesian deviation = {max_chart:.2e} (tol 1e-10)"
        ),
    );
}

#[test]
fn cyclic_momentum_is_piecewise_constant_along_the_full_run() {
    let (def, cyc) = billiard_polar(1.0, 2.0, 1.0);
    let traj = execute(&def, &fig_initial(), &config(1e-3, 10.0));
    assert!(matches!(traj.termination, Termination::HorizonReached));
    let drift = arc_momentum_drift(&def.system, &cyc, &traj).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let states: Vec<StateTQ> = (0..200)
        .map(|_| {
            StateTQ::from_slices(
                &[1.0, rng.random_range(0.0..std::f64::consts::TAU)],
                &[rng.random_range(0.05..3.0), rng.random_range(-3.0..3.0)],
            )
        })
        .collect();
    let across = hybrid_momentum_check(&def, &cyc, &states).unwrap();

    let ok = drift < 1e-6 && across <= 1e-12;
    check(
        "cyclic momentum constant on arcs and across impacts",
        ok,
        &format!(
            "10 s run at dt 1e-3: max in-arc drift = {drift:.2e} (tol 1e-6), \
             max impact-map change over 200 states = {across:.2e} (tol 1e-12)"
        ),
    );
}

#[test]
fn reduced_lagrangian_and_force_match_their_closed_forms() {
    let (m, c, mu) = (1.0, 2.0, 0.25);
    let (def, cyc) = billiard_polar(m, c, 1.0);
    let rs = make_reduced_system(&def.system, &cyc, mu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut max_r = 0.0_f64;
    let mut max_f = 0.0_f64;
    for _ in 0..1000 {
        let r = rng.random_range(0.1..1.0);
        let rd = rng.random_range(-3.0..3.0);
        let x = DVector::from_column_slice(&[r]);
        let xd = DVector::from_column_slice(&[rd]);
        let r_closed = 0.5 * m * rd * rd - mu * mu / (2.0 * m * r * r);
        let f_closed = -2.0 * c * r * mu / m;
        max_r = max_r.max((rs.reduced_lagrangian(&x, &xd) - r_closed).abs());
        max_f = max_f.max((rs.reduced_force(&x, &xd)[0] - f_closed).abs());
    }
    let ok = max_r <= 1e-10 && max_f <= 1e-10;
    check(
        "reduced Lagrangian and force closed forms",
        ok,
        &format!(
            "1000 points at mu = 0.25: max |R - closed| = {max_r:.2e}, \
             max |F - closed| = {max_f:.2e} (tol 1e-10)"
        ),
    );
}

#[test]
fn reduced_execution_reconstructs_the_full_billiard_runs() {
    let mut details = Vec::new();
    let mut ok = true;
    for c in [2.0, 0.2] {
        let (def, cyc) = billiard_polar(1.0, c, 1.0);
        let s0 = fig_initial();
        let cfg = config(1e-4, 4.0);
        let full = execute(&def, &s0, &cfg);
        let rt = execute_reduced(&def, &cyc, &s0, &cfg).unwrap();
        let rec = reconstruct(&def.system, &rt, s0.q[1]).unwrap();
        let report = compare_full_reduced(&full, &rec);
        let this_ok = full.impacts.len() >= 3
            && report.structural_match
            && report.max_q_deviation() < 1e-4
            && report.max_impact_time_dev < 1e-6;
        ok &= this_ok;
        details.push(format!(
            "c = {c}: {} impacts, sup |dq| = {:.2e}, impact time dev = {:.2e}",
            full.impacts.len(),
            report.max_q_deviation(),
            report.max_impact_time_dev
        ));
    }
    check(
        "reduced run reconstructs the full runs",
        ok,
        &format!(
            "dt 1e-4 over 4 s, tol 1e-4 on positions and 1e-6 on impact times; {}",
            details.join("; ")
        ),
    );
}

#[test]
fn hamiltonian_side_execution_matches_the_lagrangian_side() {
    let (def, _) = billiard_polar(1.0, 2.0, 1.0);
    let s0 = fig_initial();
    let cfg = config(1e-4, 2.0);
    let full = execute(&def, &s0, &cfg);
    let ham = hamiltonian::execute_mapped_to_tangent(&def, &s0, &cfg).unwrap();
    let report = compare_full_reduced(&full, &ham);
    let ok = full.impacts.len() >= 2 && report.structural_match && report.max_deviation() < 1e-5;
    check(
        "hamiltonian side matches lagrangian side",
        ok,
        &format!(
            "dt 1e-4 over 2 s: {} impacts, sup deviation = {:.2e} (tol 1e-5)",
            full.impacts.len(),
            report.max_deviation()
        ),
    );
}

#[test]
fn reduced_acceleration_matches_the_closed_form_field() {
    let (m, c) = (1.0, 2.0);
    let (def, cyc) = billiard_polar(m, c, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut max_dev = 0.0_f64;
    for _ in 0..1000 {
        let mu = rng.random_range(-1.0..1.0);
        let rs = make_reduced_system(&def.system, &cyc, mu).unwrap();
        let r = rng.random_range(0.1..1.0);
        let rd = rng.random_range(-3.0..3.0);
        let acc = reduced_acceleration(
            &rs,
            &DVector::from_column_slice(&[r]),
            &DVector::from_column_slice(&[rd]),
        )
        .unwrap();
        let closed = mu * mu / (m * m * r * r * r) - 2.0 * c * r * mu / (m * m);
        max_dev = max_dev.max((acc[0] - closed).abs());
    }
    let ok = max_dev <= 1e-9;
    check(
        "reduced acceleration closed form",
        ok,
        &format!("1000 samples over (r, rdot, mu): max deviation = {max_dev:.2e} (tol 1e-9)"),
    );
}

#[test]
fn inelastic_bouncer_stops_at_the_zeno_accumulation_point() {
    let (m, e, drive, q0) = (1.0, 0.5, 2.0, 1.0);
    let def = bouncer_1d(m, e, drive);
    let s0 = StateTQ::from_slices(&[q0], &[0.0]);
    let traj = execute(&def, &s0, &config(1e-3, 10.0));
    // first fall plus the geometric series of rebound flights
    let t1 = (2.0 * q0 / drive).sqrt();
    let t_star = t1 + 2.0 * drive * t1 * e / (drive * (1.0 - e));
    let zeno = matches!(traj.termination, Termination::ZenoSuspected);
    let rel = (traj.final_time() - t_star).abs() / t_star;
    let ok = zeno && rel <= 0.01;
    check(
        "inelastic bouncer terminates as suspected Zeno",
        ok,
        &format!(
            "termination zeno: {zeno}, {} impacts, stop time {:.6} vs limit {t_star} \
             (relative gap {rel:.2e}, tol 1e-2)",
            traj.impacts.len(),
            traj.final_time()
        ),
    );
}

#[test]
fn analytic_derivative_bundles_agree_with_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let cart = billiard_cartesian(1.3, 0.7, 1.0);
    let cart_states: Vec<StateTQ> = (0..100)
        .map(|_| {
            let r = rng.random_range(0.1..0.95);
            let th = rng.random_range(0.0..std::f64::consts::TAU);
            StateTQ::from_slices(
                &[r * th.cos(), r * th.sin()],
                &[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            )
        })
        .collect();
    let cart_err = derivative_consistency(&cart.system, &cart_states).unwrap();

    let (polar, _) = billiard_polar(1.3, 0.7, 1.0);
    let polar_states: Vec<StateTQ> = (0..100)
        .map(|_| {
            StateTQ::from_slices(
                &[
                    rng.random_range(0.15..0.95),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ],
                &[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
            )
        })
        .collect();
    let polar_err = derivative_consistency(&polar.system, &polar_states).unwrap();

    let ok = cart_err <= 1e-5 && polar_err <= 1e-5;
    check(
        "analytic derivative bundles match finite differences",
        ok,
        &format!(
            "100 states per chart: Cartesian rel err = {cart_err:.2e}, \
             polar rel err = {polar_err:.2e} (tol 1e-5)"
        ),
    );
}

#[test]
fn cli_reduces_and_plots_both_billiard_scenarios_deterministically() {
    let started = Instant::now();
    let bin = env!("CARGO_BIN_EXE_routhsim");
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut ok = true;
    let mut details = Vec::new();

    for name in ["fig1", "fig2"] {
        let scenario = root.join(format!("scenarios/{name}.json"));
        let work = tempfile::tempdir().unwrap();
        let out: PathBuf = work.path().join("run");

        let status = Command::new(bin)
            .args(["reduce", scenario.to_str().unwrap(), "--out-dir"])
            .arg(&out)
            .output()
            .unwrap();
        ok &= status.status.success();

        let reduced = out.join("reduced.csv");
        let reconstructed = out.join("reconstructed.csv");
        let plots_a = work.path().join("plots_a");
        let plots_b = work.path().join("plots_b");
        for plots in [&plots_a, &plots_b] {
            let status = Command::new(bin)
                .arg("plot")
                .arg(&reduced)
                .arg(&reconstructed)
                .arg("--out")
                .arg(plots)
                .output()
                .unwrap();
            ok &= status.status.success();
        }
        let red_a = std::fs::read(plots_a.join("reduced.svg")).unwrap();
        let red_b = std::fs::read(plots_b.join("reduced.svg")).unwrap();
        let rec_a = std::fs::read(plots_a.join("reconstructed.svg")).unwrap();
        let rec_b = std::fs::read(plots_b.join("reconstructed.svg")).unwrap();
        let deterministic = red_a == red_b && rec_a == rec_b;
        let red_text = String::from_utf8(red_a).unwrap();
        let rec_text = String::from_utf8(rec_a).unwrap();
        let guards_drawn = red_text.contains("stroke-dasharray")
            && red_text.contains("h = 0")
            && rec_text.contains("<circle")
            && rec_text.contains("h = 0");
        ok &= deterministic && guards_drawn;
        details.push(format!(
            "{name}: deterministic = {deterministic}, guard drawn = {guards_drawn}"
        ));
    }

    let elapsed = started.elapsed().as_secs_f64();
    ok &= elapsed < 10.0;
    check(
        "cli reduce and plot round trip",
        ok,
        &format!(
            "{}; elapsed {elapsed:.2} s (budget 10 s)",
            details.join("; ")
        ),
    );
}
