//! Hot-path benchmarks: the impact map, the forced acceleration with and
//! without analytic derivatives, and the two hybrid executors on a short
//! horizon of the curl-forced disk billiard.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;

use routhsim_core::hybrid::{execute, newtonian_impact};
use routhsim_core::routh::execute_reduced;
use routhsim_core::scenarios::billiard_polar;
use routhsim_core::{ForcedLagrangianSystem, IntegratorConfig, StateTQ};

/// Same polar billiard Lagrangian and force, but without the analytic
/// derivative bundle, to measure the finite-difference fallback.
fn polar_fd(m: f64, c: f64) -> ForcedLagrangianSystem {
    ForcedLagrangianSystem::new(
        2,
        move |q, v| 0.5 * m * (v[0] * v[0] + q[0] * q[0] * v[1] * v[1]),
        move |q, v| DVector::from_column_slice(&[-2.0 * c * q[0].powi(3) * v[1], 0.0]),
    )
}

fn short_config() -> IntegratorConfig {
    IntegratorConfig {
        dt: 1e-3,
        t_max: 1.0,
        ..Default::default()
    }
}

fn bench_impact(c: &mut Criterion) {
    let (def, _) = billiard_polar(1.0, 2.0, 1.0);
    let s = StateTQ::from_slices(&[1.0, 0.3], &[1.854, 0.25]);
    c.bench_function("newtonian_impact", |b| {
        b.iter(|| newtonian_impact(&def.system, &def.guard, black_box(&s)).unwrap())
    });
}

fn bench_acceleration(c: &mut Criterion) {
    let (def, _) = billiard_polar(1.0, 2.0, 1.0);
    let fd = polar_fd(1.0, 2.0);
    let s = StateTQ::from_slices(&[0.5, 0.1], &[2.0, 1.0]);
    c.bench_function("forced_acceleration_analytic", |b| {
        b.iter(|| def.system.forced_acceleration(black_box(&s)).unwrap())
    });
    c.bench_function("forced_acceleration_fd", |b| {
        b.iter(|| fd.forced_acceleration(black_box(&s)).unwrap())
    });
}

fn bench_execute(c: &mut Criterion) {
    let (def, cyc) = billiard_polar(1.0, 2.0, 1.0);
    let s0 = StateTQ::from_slices(&[0.5, 0.0], &[2.0, 1.0]);
    let cfg = short_config();
    c.bench_function("execute_full_1s", |b| {
        b.iter(|| execute(&def, black_box(&s0), &cfg))
    });
    c.bench_function("execute_reduced_1s", |b| {
        b.iter(|| execute_reduced(&def, &cyc, black_box(&s0), &cfg).unwrap())
    });
}

criterion_group!(benches, bench_impact, bench_acceleration, bench_execute);
criterion_main!(benches);
