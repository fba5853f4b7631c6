//! Numeric policy shared across the crate.
//!
//! Every solver knob and comparison threshold lives here so that a change in
//! policy is a one-line edit, and so tests can assert against the same
//! constants the implementation uses.

/// Relative step for first-order central differences. Scaled per component
/// by `max(1, |x_i|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Relative step for second-order differences (mass matrix, mixed
/// velocity/position blocks). Roundoff in a second difference grows like
/// `eps / h^2`, so this step is near `eps^(1/4)`, not [`DEFAULT_FD_STEP`].
/// A power of two keeps the shifted coordinates exactly representable.
pub const SECOND_DIFF_STEP: f64 = 1.220703125e-4; // 2^-13

/// A mass matrix with `|det| <= MASS_SINGULARITY_REL_TOL * norm^n` is
/// treated as singular rather than inverted.
pub const MASS_SINGULARITY_REL_TOL: f64 = 1e-12;

/// Absolute residual tolerance for Newton solves (inverse Legendre
/// transform, cyclic velocity recovery).
pub const NEWTON_TOL: f64 = 1e-10;

/// Iteration cap for Newton solves.
pub const NEWTON_MAX_ITER: usize = 50;

/// Default integrator step.
pub const DEFAULT_DT: f64 = 1e-3;

/// Default width (in time) to which an impact is bracketed by bisection.
pub const DEFAULT_EVENT_TOL: f64 = 1e-10;

/// Default cap on the number of impacts per execution.
pub const DEFAULT_MAX_IMPACTS: usize = 10_000;

/// Two impacts closer in time than this flag the run as a suspected Zeno
/// accumulation.
pub const DEFAULT_MIN_IMPACT_SEPARATION: f64 = 1e-8;

/// Default horizon for scenario files that do not set one.
pub const DEFAULT_T_MAX: f64 = 10.0;

/// The polar billiard chart is rejected below this radius; evaluations
/// there return NaN and surface as a non-finite-field failure.
pub const POLAR_MIN_RADIUS: f64 = 0.05;

/// Guard gradients smaller than this at an event make the impact normal
/// meaningless.
pub const GUARD_GRAD_MIN_NORM: f64 = 1e-10;

/// The impact map divides by `dh M^-1 dh^T`; below this the impact is
/// undefined.
pub const IMPACT_NORMAL_MIN: f64 = 1e-14;

/// Sampled checks of cyclic invariance (Lagrangian, force, guard) use this
/// absolute tolerance.
pub const CYCLIC_INVARIANCE_TOL: f64 = 1e-10;

/// `force_symmetry_check` certifies a system when both the cyclic force
/// component and the force's sensitivity to the cyclic coordinate stay
/// below this bound.
pub const FORCE_SYMMETRY_TOL: f64 = 1e-8;

// Second differences need a coarser step than first differences, and the
// Newton residual must sit well below the finite-difference step so solver
// noise cannot dominate differences taken through a nested solve.
const _: () = {
    assert!(SECOND_DIFF_STEP > DEFAULT_FD_STEP);
    assert!(NEWTON_TOL <= DEFAULT_FD_STEP * 1e-2);
};
