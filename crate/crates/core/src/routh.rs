//! Reduction by a cyclic coordinate at fixed conjugate momentum, hybrid
//! execution of the reduced system, and reconstruction.
//!
//! When `L` and `F` do not depend on the coordinate `theta` and `F` has no
//! `theta` component, the momentum `mu = dL/dthetadot` is conserved along
//! continuous arcs. Fixing `mu` and eliminating `thetadot` through
//! `dL/dthetadot = mu` yields the reduced function
//! `R(x, xdot) = [L - mu * thetadot]` on the quotient, with the force
//! expressed through the same substitution. The reduced trajectory is
//! integrated as an ordinary forced Lagrangian system of dimension `n - 1`;
//! `theta` rides along as a quadrature state.
//!
//! Impacts break the constancy of `mu`: the reduced executor lifts the
//! pre-impact state back to the full space using the co-integrated `theta`,
//! applies the full impact map, reads off the new momentum, and continues
//! with the updated reduced system. A trajectory is therefore a sequence of
//! segments, each carrying its own `mu`.
//!
//! Derivatives of the reduced Lagrangian: when the base system has analytic
//! derivatives, the exact substitution identities are used
//! (`dR/dx = dL/dx`, `dR/dxdot = dL/dxdot` at the lifted point; the reduced
//! mass matrix is the Schur complement of the cyclic block). Otherwise they
//! fall back to finite differences through the nested velocity solve.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Error;
use crate::hybrid::{
    apply_reset, flatten, run_flat, GuardSpec, HybridSystemDef, HybridTrajectory, ImpactRecord,
    IntegratorConfig, Termination, TrajectoryArc,
};
use crate::mechanics::{AnalyticDerivatives, ForcedLagrangianSystem, StateTQ};
use crate::tolerances::{
    CYCLIC_INVARIANCE_TOL, FORCE_SYMMETRY_TOL, MASS_SINGULARITY_REL_TOL, NEWTON_MAX_ITER,
    NEWTON_TOL,
};

/// Which coordinate is cyclic, and its period if it is an angle.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicSpec {
    pub cyclic_index: usize,
    /// `Some(2 pi)` for an angle; used only when wrapping for reports.
    pub period: Option<f64>,
}

impl CyclicSpec {
    pub fn circle(cyclic_index: usize) -> Self {
        CyclicSpec {
            cyclic_index,
            period: Some(std::f64::consts::TAU),
        }
    }

    /// Wraps an angle into `[0, period)` for display. Stored trajectory
    /// values stay unwrapped; only reports should wrap.
    pub fn wrap(&self, theta: f64) -> f64 {
        match self.period {
            Some(p) => theta.rem_euclid(p),
            None => theta,
        }
    }
}

/// Inserts `value` at `idx`, growing the vector by one.
pub(crate) fn insert_at(x: &DVector<f64>, idx: usize, value: f64) -> DVector<f64> {
    let n = x.len() + 1;
    let mut out = DVector::zeros(n);
    for i in 0..idx {
        out[i] = x[i];
    }
    out[idx] = value;
    for i in idx..x.len() {
        out[i + 1] = x[i];
    }
    out
}

/// Removes index `idx`, returning the rest and the removed entry.
pub(crate) fn remove_at(q: &DVector<f64>, idx: usize) -> (DVector<f64>, f64) {
    let n = q.len();
    let mut out = DVector::zeros(n - 1);
    let mut j = 0;
    for i in 0..n {
        if i != idx {
            out[j] = q[i];
            j += 1;
        }
    }
    (out, q[idx])
}

fn lift_state(
    x: &DVector<f64>,
    xdot: &DVector<f64>,
    theta: f64,
    thetadot: f64,
    idx: usize,
) -> StateTQ {
    StateTQ::new(insert_at(x, idx, theta), insert_at(xdot, idx, thetadot))
}

/// The momentum conjugate to the cyclic coordinate: `dL/dv` at the cyclic
/// index.
pub fn momentum(sys: &ForcedLagrangianSystem, cyc: &CyclicSpec, s: &StateTQ) -> Result<f64, Error> {
    if cyc.cyclic_index >= sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: cyc.cyclic_index,
        });
    }
    Ok(sys.fiber_derivative(s)?[cyc.cyclic_index])
}

/// Recovers the cyclic velocity from the momentum constraint
/// `dL/dthetadot (x, xdot, thetadot) = mu` by damped scalar Newton,
/// starting from `mu / M_theta_theta`. The lift uses `theta = 0`; callers
/// must have certified that `L` does not depend on it.
pub fn solve_cyclic_velocity(
    sys: &ForcedLagrangianSystem,
    cyc: &CyclicSpec,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
    mu: f64,
) -> Result<f64, Error> {
    let idx = cyc.cyclic_index;
    let n = sys.dim();
    if x.len() != n - 1 || xdot.len() != n - 1 {
        return Err(Error::DimensionMismatch {
            expected: n - 1,
            got: x.len(),
        });
    }
    let q = insert_at(x, idx, 0.0);
    let cyclic_mass = |thetadot: f64| -> Result<f64, Error> {
        let v = insert_at(xdot, idx, thetadot);
        let m = sys.mass_matrix(&q, &v)?;
        let m_tt = m[(idx, idx)];
        if !m_tt.is_finite() || m_tt.abs() <= MASS_SINGULARITY_REL_TOL * 1f64.max(m.norm()) {
            return Err(Error::CyclicMassSingular { value: m_tt });
        }
        Ok(m_tt)
    };
    let residual = |thetadot: f64| -> Result<f64, Error> {
        let s = StateTQ::new(q.clone(), insert_at(xdot, idx, thetadot));
        Ok(sys.fiber_derivative(&s)?[idx] - mu)
    };

    let mut thetadot = mu / cyclic_mass(0.0)?;
    let mut g = residual(thetadot)?;
    for _ in 0..NEWTON_MAX_ITER {
        if g.abs() <= NEWTON_TOL {
            return Ok(thetadot);
        }
        let jac = cyclic_mass(thetadot)?;
        let step = g / jac;
        let mut alpha = 1.0;
        loop {
            let candidate = thetadot - alpha * step;
            let g_new = residual(candidate)?;
            if g_new.abs() < g.abs() || alpha < 1.0 / 1024.0 {
                thetadot = candidate;
                g = g_new;
                break;
            }
            alpha *= 0.5;
        }
    }
    if g.abs() <= NEWTON_TOL {
        return Ok(thetadot);
    }
    Err(Error::NewtonDiverged {
        solver: "cyclic velocity recovery",
        iterations: NEWTON_MAX_ITER,
        residual: g.abs(),
    })
}

type MuSource = Arc<dyn Fn() -> f64 + Send + Sync>;

/// Builds the `(n-1)`-dimensional forced Lagrangian system obtained by the
/// momentum substitution. `mu_source` is read at every evaluation so the
/// piecewise executor can swap the momentum between impacts.
fn reduced_lagrangian_system(
    base: &ForcedLagrangianSystem,
    cyc: &CyclicSpec,
    mu_source: MuSource,
) -> ForcedLagrangianSystem {
    let n = base.dim();
    let k = n - 1;
    let idx = cyc.cyclic_index;

    let b = base.clone();
    let c = cyc.clone();
    let ms = mu_source.clone();
    let lagrangian = move |x: &DVector<f64>, xdot: &DVector<f64>| -> f64 {
        let mu = ms();
        match solve_cyclic_velocity(&b, &c, x, xdot, mu) {
            Ok(td) => {
                let s = lift_state(x, xdot, 0.0, td, idx);
                b.lagrangian(&s) - mu * td
            }
            Err(_) => f64::NAN,
        }
    };

    let b = base.clone();
    let c = cyc.clone();
    let ms = mu_source.clone();
    let force = move |x: &DVector<f64>, xdot: &DVector<f64>| -> DVector<f64> {
        let mu = ms();
        match solve_cyclic_velocity(&b, &c, x, xdot, mu) {
            Ok(td) => {
                let s = lift_state(x, xdot, 0.0, td, idx);
                remove_at(&b.force(&s), idx).0
            }
            Err(_) => DVector::from_element(k, f64::NAN),
        }
    };

    let mut sys = ForcedLagrangianSystem::new(k, lagrangian, force).with_fd_step(base.fd_step());

    if base.has_analytic_derivatives() {
        // At the constrained point the substitution identities hold:
        //   dR/dx_j    = dL/dx_j,   dR/dxdot_j = dL/dxdot_j,
        //   d2R/dxdot2 = M_xx - M_xt M_tx / M_tt   (Schur complement),
        //   d2R/(dxdot dx) inherits the same correction through
        //   dthetadot/dx = -(d2L/(dthetadot dx)) / M_tt.
        let full_of = move |j: usize| if j < idx { j } else { j + 1 };

        let bundle_at = {
            let b = base.clone();
            let c = cyc.clone();
            let ms = mu_source.clone();
            move |x: &DVector<f64>, xdot: &DVector<f64>| {
                let mu = ms();
                let td = solve_cyclic_velocity(&b, &c, x, xdot, mu)?;
                let s = lift_state(x, xdot, 0.0, td, idx);
                b.derivatives(&s)
            }
        };

        let ba = bundle_at.clone();
        let dl_dq = move |x: &DVector<f64>, xdot: &DVector<f64>| -> DVector<f64> {
            match ba(x, xdot) {
                Ok(fb) => remove_at(&fb.dl_dq, idx).0,
                Err(_) => DVector::from_element(k, f64::NAN),
            }
        };
        let ba = bundle_at.clone();
        let dl_dv = move |x: &DVector<f64>, xdot: &DVector<f64>| -> DVector<f64> {
            match ba(x, xdot) {
                Ok(fb) => remove_at(&fb.dl_dv, idx).0,
                Err(_) => DVector::from_element(k, f64::NAN),
            }
        };
        let ba = bundle_at.clone();
        let mass = move |x: &DVector<f64>, xdot: &DVector<f64>| -> DMatrix<f64> {
            match ba(x, xdot) {
                Ok(fb) => {
                    let m = &fb.mass;
                    let m_tt = m[(idx, idx)];
                    let mut out = DMatrix::zeros(k, k);
                    for j in 0..k {
                        for l in 0..k {
                            let (jf, lf) = (full_of(j), full_of(l));
                            out[(j, l)] = m[(jf, lf)] - m[(jf, idx)] * m[(idx, lf)] / m_tt;
                        }
                    }
                    out
                }
                Err(_) => DMatrix::from_element(k, k, f64::NAN),
            }
        };
        let ba = bundle_at.clone();
        let dv_dq = move |x: &DVector<f64>, xdot: &DVector<f64>| -> DMatrix<f64> {
            match ba(x, xdot) {
                Ok(fb) => {
                    let m_tt = fb.mass[(idx, idx)];
                    let mut out = DMatrix::zeros(k, k);
                    for j in 0..k {
                        for l in 0..k {
                            let (jf, lf) = (full_of(j), full_of(l));
                            out[(j, l)] = fb.dv_dq[(jf, lf)]
                                - fb.mass[(jf, idx)] * fb.dv_dq[(idx, lf)] / m_tt;
                        }
                    }
                    out
                }
                Err(_) => DMatrix::from_element(k, k, f64::NAN),
            }
        };
        sys = sys.with_analytic_derivatives(AnalyticDerivatives {
            dl_dq: Arc::new(dl_dq),
            dl_dv: Arc::new(dl_dv),
            mass: Arc::new(mass),
            dv_dq: Arc::new(dv_dq),
        });
    }
    sys
}

/// The reduced system at one fixed momentum value.
#[derive(Clone)]
pub struct ReducedSystem {
    base: ForcedLagrangianSystem,
    cyclic: CyclicSpec,
    mu: f64,
    as_system: ForcedLagrangianSystem,
}

/// Builds the reduced system at momentum `mu`. The base system must have
/// dimension at least 2 and a valid cyclic index.
pub fn make_reduced_system(
    base: &ForcedLagrangianSystem,
    cyc: &CyclicSpec,
    mu: f64,
) -> Result<ReducedSystem, Error> {
    if base.dim() < 2 {
        return Err(Error::Validation(
            "reduction needs at least two degrees of freedom".into(),
        ));
    }
    if cyc.cyclic_index >= base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            got: cyc.cyclic_index,
        });
    }
    if !mu.is_finite() {
        return Err(Error::NonFinite {
            context: "momentum",
        });
    }
    let as_system = reduced_lagrangian_system(base, cyc, Arc::new(move || mu));
    Ok(ReducedSystem {
        base: base.clone(),
        cyclic: cyc.clone(),
        mu,
        as_system,
    })
}

impl ReducedSystem {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn base(&self) -> &ForcedLagrangianSystem {
        &self.base
    }

    pub fn cyclic(&self) -> &CyclicSpec {
        &self.cyclic
    }

    /// The reduced dynamics as an ordinary forced Lagrangian system of
    /// dimension `n - 1`.
    pub fn as_system(&self) -> &ForcedLagrangianSystem {
        &self.as_system
    }

    /// Reduced Lagrangian `R(x, xdot) = L - mu * thetadot` at the
    /// constrained velocity.
    pub fn reduced_lagrangian(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> f64 {
        self.as_system.lagrangian_qv(x, xdot)
    }

    /// Reduced force covector at the constrained velocity.
    pub fn reduced_force(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> DVector<f64> {
        self.as_system.force(&StateTQ::new(x.clone(), xdot.clone()))
    }

    pub fn cyclic_velocity(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> Result<f64, Error> {
        solve_cyclic_velocity(&self.base, &self.cyclic, x, xdot, self.mu)
    }
}

/// Acceleration of the reduced forced Euler-Lagrange field.
pub fn reduced_acceleration(
    rs: &ReducedSystem,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
) -> Result<DVector<f64>, Error> {
    rs.as_system
        .forced_acceleration(&StateTQ::new(x.clone(), xdot.clone()))
}

/// Checks that the guard does not depend on the cyclic coordinate (sampled)
/// and projects it to the reduced chart. The reset override, if any, is not
/// carried over: the piecewise executor applies the full-space reset.
pub fn reduce_guard(
    guard: &GuardSpec,
    cyc: &CyclicSpec,
    full_dim: usize,
) -> Result<GuardSpec, Error> {
    let idx = cyc.cyclic_index;
    if idx >= full_dim {
        return Err(Error::DimensionMismatch {
            expected: full_dim,
            got: idx,
        });
    }
    let k = full_dim - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0x726f_7574);
    let span = cyc.period.unwrap_or(std::f64::consts::TAU);
    let mut max_dev: f64 = 0.0;
    for _ in 0..32 {
        let x = DVector::from_fn(k, |_, _| rng.random_range(0.1..1.0));
        let h0 = guard.h(&insert_at(&x, idx, 0.0));
        for _ in 0..8 {
            let theta = rng.random_range(0.0..span);
            let h = guard.h(&insert_at(&x, idx, theta));
            max_dev = max_dev.max((h - h0).abs());
        }
    }
    if max_dev > CYCLIC_INVARIANCE_TOL {
        return Err(Error::GuardNotReducible { max_dev });
    }

    let g = guard.clone();
    let reduced_h = move |x: &DVector<f64>| g.h(&insert_at(x, idx, 0.0));
    let g = guard.clone();
    let reduced_grad = move |x: &DVector<f64>| remove_at(&g.grad(&insert_at(x, idx, 0.0)), idx).0;
    Ok(GuardSpec::new(reduced_h, guard.restitution).with_gradient(reduced_grad))
}

/// Rectangular sampling region in the tangent bundle for randomized checks.
#[derive(Debug, Clone)]
pub struct SampleRegion {
    pub q: Vec<(f64, f64)>,
    pub v: Vec<(f64, f64)>,
}

impl SampleRegion {
    pub fn new(q: Vec<(f64, f64)>, v: Vec<(f64, f64)>) -> Self {
        SampleRegion { q, v }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> StateTQ {
        let q = DVector::from_iterator(
            self.q.len(),
            self.q.iter().map(|(lo, hi)| rng.random_range(*lo..*hi)),
        );
        let v = DVector::from_iterator(
            self.v.len(),
            self.v.iter().map(|(lo, hi)| rng.random_range(*lo..*hi)),
        );
        StateTQ::new(q, v)
    }
}

/// Largest cyclic force component and force sensitivity to the cyclic
/// coordinate observed over random states.
#[derive(Debug, Clone, Serialize)]
pub struct ForceSymmetryReport {
    pub max_cyclic_force: f64,
    pub max_dforce_dtheta: f64,
    pub samples: usize,
}

impl ForceSymmetryReport {
    /// Both measures below [`FORCE_SYMMETRY_TOL`].
    pub fn certified(&self) -> bool {
        self.max_cyclic_force <= FORCE_SYMMETRY_TOL && self.max_dforce_dtheta <= FORCE_SYMMETRY_TOL
    }
}

/// Samples `F` over `region` and measures how far it is from being
/// independent of the cyclic coordinate with a vanishing cyclic component.
pub fn force_symmetry_check(
    sys: &ForcedLagrangianSystem,
    cyc: &CyclicSpec,
    region: &SampleRegion,
    samples: usize,
    seed: u64,
) -> ForceSymmetryReport {
    let idx = cyc.cyclic_index;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_cyclic_force: f64 = 0.0;
    let mut max_dforce_dtheta: f64 = 0.0;
    for _ in 0..samples {
        let s = region.sample(&mut rng);
        let f = sys.force(&s);
        max_cyclic_force = max_cyclic_force.max(f[idx].abs());
        let h = crate::tolerances::DEFAULT_FD_STEP * 1f64.max(s.q[idx].abs());
        let mut qp = s.q.clone();
        let mut qm = s.q.clone();
        qp[idx] += h;
        qm[idx] -= h;
        let fp = sys.force(&StateTQ::new(qp, s.v.clone()));
        let fm = sys.force(&StateTQ::new(qm, s.v.clone()));
        max_dforce_dtheta = max_dforce_dtheta.max((fp - fm).amax() / (2.0 * h));
    }
    ForceSymmetryReport {
        max_cyclic_force,
        max_dforce_dtheta,
        samples,
    }
}

/// Verifies on the given states that `L` and `F` are invariant under shifts
/// of the cyclic coordinate and that the cyclic force component vanishes.
pub fn verify_cyclic_invariance(
    sys: &ForcedLagrangianSystem,
    cyc: &CyclicSpec,
    states: &[StateTQ],
) -> Result<(), Error> {
    let idx = cyc.cyclic_index;
    let span = cyc.period.unwrap_or(std::f64::consts::TAU);
    let shifts = [0.13, 0.41, 0.68, 0.93].map(|f| f * span);
    for s in states {
        let l0 = sys.lagrangian(s);
        let f0 = sys.force(s);
        if f0[idx].abs() > CYCLIC_INVARIANCE_TOL {
            return Err(Error::CyclicInvariance {
                detail: format!("cyclic force component is {:e}", f0[idx]),
            });
        }
        for d in shifts {
            let mut q = s.q.clone();
            q[idx] += d;
            let shifted = StateTQ::new(q, s.v.clone());
            let dl = (sys.lagrangian(&shifted) - l0).abs();
            if dl > CYCLIC_INVARIANCE_TOL {
                return Err(Error::CyclicInvariance {
                    detail: format!("Lagrangian varies by {dl:e} under a cyclic shift"),
                });
            }
            let df = (sys.force(&shifted) - &f0).amax();
            if df > CYCLIC_INVARIANCE_TOL {
                return Err(Error::CyclicInvariance {
                    detail: format!("force varies by {df:e} under a cyclic shift"),
                });
            }
        }
    }
    Ok(())
}

/// Largest in-arc momentum drift `|mu(t) - mu(arc start)|` over all dense
/// samples of a full-chart trajectory. Small values certify that the
/// momentum is conserved along continuous arcs.
pub fn arc_momentum_drift(
    sys: &ForcedLagrangianSystem,
    cyc: &CyclicSpec,
    traj: &HybridTrajectory<StateTQ>,
) -> Result<f64, Error> {
    let mut worst: f64 = 0.0;
    for arc in &traj.arcs {
        let Some((_, first)) = arc.samples.first() else {
            continue;
        };
        let mu0 = momentum(sys, cyc, first)?;
        for (_, s) in &arc.samples {
            worst = worst.max((momentum(sys, cyc, s)? - mu0).abs());
        }
    }
    Ok(worst)
}

/// Measures momentum change across the impact map on the given surface
/// states. Returns the largest `|mu(post) - mu(pre)|`.
pub fn hybrid_momentum_check(
    hs: &HybridSystemDef,
    cyc: &CyclicSpec,
    samples: &[StateTQ],
) -> Result<f64, Error> {
    let mut worst: f64 = 0.0;
    for s in samples {
        let pre = momentum(&hs.system, cyc, s)?;
        let post_state = apply_reset(&hs.system, &hs.guard, s)?;
        let post = momentum(&hs.system, cyc, &post_state)?;
        worst = worst.max((post - pre).abs());
    }
    Ok(worst)
}

/// One inter-impact piece of a reduced execution.
#[derive(Debug, Clone)]
pub struct ReducedSegment {
    pub mu: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// `(t, reduced state, theta)`; `theta` is the co-integrated
    /// reconstruction quadrature, unwrapped.
    pub samples: Vec<(f64, StateTQ, f64)>,
}

/// Segments with their momenta, full-space impact records (with momenta
/// filled), and the termination status.
#[derive(Debug, Clone)]
pub struct ReducedHybridTrajectory {
    pub cyclic: CyclicSpec,
    pub segments: Vec<ReducedSegment>,
    pub impacts: Vec<ImpactRecord<StateTQ>>,
    pub termination: Termination,
}

impl ReducedHybridTrajectory {
    pub fn mu_sequence(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.mu).collect()
    }

    pub fn final_time(&self) -> f64 {
        self.segments.last().map(|s| s.t_end).unwrap_or(0.0)
    }
}

/// Executes the piecewise-momentum reduced dynamics from a full-space
/// initial state. The cyclic coordinate is co-integrated in the same RK4
/// stages as a quadrature; impacts are handled by lifting to the full
/// space, applying the full reset, and re-reducing at the new momentum.
pub fn execute_reduced(
    hs: &HybridSystemDef,
    cyc: &CyclicSpec,
    s0: &StateTQ,
    cfg: &IntegratorConfig,
) -> Result<ReducedHybridTrajectory, Error> {
    let n = hs.system.dim();
    if n < 2 {
        return Err(Error::Validation(
            "reduction needs at least two degrees of freedom".into(),
        ));
    }
    if cyc.cyclic_index >= n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cyc.cyclic_index,
        });
    }
    if s0.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s0.dim(),
        });
    }
    cfg.validate()?;
    let idx = cyc.cyclic_index;
    let k = n - 1;

    let reduced_guard = reduce_guard(&hs.guard, cyc, n)?;
    let mu0 = momentum(&hs.system, cyc, s0)?;

    let mu_bits = Arc::new(AtomicU64::new(mu0.to_bits()));
    let mu_src: MuSource = {
        let bits = mu_bits.clone();
        Arc::new(move || f64::from_bits(bits.load(Ordering::Relaxed)))
    };
    let red_sys = reduced_lagrangian_system(&hs.system, cyc, mu_src.clone());

    // Flat layout: [x (k) | xdot (k) | theta].
    let (x0, theta0) = remove_at(&s0.q, idx);
    let (xdot0, _thetadot0) = remove_at(&s0.v, idx);
    let mut flat0 = flatten(&x0, &xdot0);
    flat0 = flatten(&flat0, &DVector::from_element(1, theta0));

    let base = &hs.system;
    let field = |z: &DVector<f64>| -> Result<DVector<f64>, Error> {
        let x = z.rows(0, k).into_owned();
        let xdot = z.rows(k, k).into_owned();
        let a = red_sys.forced_acceleration(&StateTQ::new(x.clone(), xdot.clone()))?;
        let thetadot = solve_cyclic_velocity(base, cyc, &x, &xdot, mu_src())?;
        let mut dz = DVector::zeros(2 * k + 1);
        dz.rows_mut(0, k).copy_from(&xdot);
        dz.rows_mut(k, k).copy_from(&a);
        dz[2 * k] = thetadot;
        Ok(dz)
    };
    let event = |z: &DVector<f64>| reduced_guard.h(&z.rows(0, k).into_owned());

    struct ImpactLog {
        t: f64,
        pre: StateTQ,
        post: StateTQ,
        mu_pre: f64,
        mu_post: f64,
    }
    let log: RefCell<Vec<ImpactLog>> = RefCell::new(Vec::new());
    let mu_per_segment: RefCell<Vec<f64>> = RefCell::new(vec![mu0]);

    let reset = |t: f64, z: &DVector<f64>| -> Result<DVector<f64>, Error> {
        let x = z.rows(0, k).into_owned();
        let xdot = z.rows(k, k).into_owned();
        let theta = z[2 * k];
        let mu_pre = mu_src();
        let thetadot = solve_cyclic_velocity(base, cyc, &x, &xdot, mu_pre)?;
        let pre = lift_state(&x, &xdot, theta, thetadot, idx);
        let post = apply_reset(&hs.system, &hs.guard, &pre)?;
        let mu_post = momentum(&hs.system, cyc, &post)?;
        mu_bits.store(mu_post.to_bits(), Ordering::Relaxed);
        mu_per_segment.borrow_mut().push(mu_post);
        log.borrow_mut().push(ImpactLog {
            t,
            pre,
            post: post.clone(),
            mu_pre,
            mu_post,
        });
        let (xdot_post, _) = remove_at(&post.v, idx);
        let mut out = z.clone();
        out.rows_mut(k, k).copy_from(&xdot_post);
        Ok(out)
    };

    let run = run_flat(&field, &event, &reset, flat0, cfg);

    let mus = mu_per_segment.into_inner();
    let segments = run
        .arcs
        .into_iter()
        .enumerate()
        .map(|(i, a)| ReducedSegment {
            mu: mus[i.min(mus.len() - 1)],
            t_start: a.t_start,
            t_end: a.t_end,
            samples: a
                .samples
                .into_iter()
                .map(|(t, z)| {
                    let s = StateTQ::new(z.rows(0, k).into_owned(), z.rows(k, k).into_owned());
                    (t, s, z[2 * k])
                })
                .collect(),
        })
        .collect();

    let impacts = log
        .into_inner()
        .into_iter()
        .zip(run.impacts.iter())
        .map(|(l, flat)| ImpactRecord {
            t: l.t,
            state_pre: l.pre,
            state_post: l.post,
            h_residual: flat.h_residual,
            momentum_pre: Some(l.mu_pre),
            momentum_post: Some(l.mu_post),
        })
        .collect();

    Ok(ReducedHybridTrajectory {
        cyclic: cyc.clone(),
        segments,
        impacts,
        termination: run.termination,
    })
}

/// Rebuilds a full-space trajectory from a reduced one. The cyclic velocity
/// is recovered from each segment's momentum; the cyclic coordinate is the
/// co-integrated quadrature rebased so the trajectory starts at `theta0`.
pub fn reconstruct(
    sys: &ForcedLagrangianSystem,
    rt: &ReducedHybridTrajectory,
    theta0: f64,
) -> Result<HybridTrajectory<StateTQ>, Error> {
    let idx = rt.cyclic.cyclic_index;
    let first_theta = rt
        .segments
        .first()
        .and_then(|s| s.samples.first())
        .map(|(_, _, th)| *th)
        .unwrap_or(theta0);
    let offset = theta0 - first_theta;

    let mut arcs = Vec::with_capacity(rt.segments.len());
    for seg in &rt.segments {
        let mut samples = Vec::with_capacity(seg.samples.len());
        for (t, red, theta) in &seg.samples {
            let thetadot = solve_cyclic_velocity(sys, &rt.cyclic, &red.q, &red.v, seg.mu)?;
            samples.push((
                *t,
                lift_state(&red.q, &red.v, theta + offset, thetadot, idx),
            ));
        }
        arcs.push(TrajectoryArc {
            t_start: seg.t_start,
            t_end: seg.t_end,
            samples,
        });
    }
    let impacts = rt
        .impacts
        .iter()
        .map(|imp| {
            let mut pre = imp.state_pre.clone();
            let mut post = imp.state_post.clone();
            pre.q[idx] += offset;
            post.q[idx] += offset;
            ImpactRecord {
                t: imp.t,
                state_pre: pre,
                state_post: post,
                h_residual: imp.h_residual,
                momentum_pre: imp.momentum_pre,
                momentum_post: imp.momentum_post,
            }
        })
        .collect();
    Ok(HybridTrajectory {
        arcs,
        impacts,
        termination: rt.termination.clone(),
    })
}

/// Per-coordinate sup-norm deviations between two trajectories over shared
/// arcs (resampled by linear interpolation on the first trajectory's
/// sample times), plus impact-time deviations and structural agreement.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub structural_match: bool,
    pub impact_count_a: usize,
    pub impact_count_b: usize,
    pub sup_q: Vec<f64>,
    pub sup_v: Vec<f64>,
    pub max_impact_time_dev: f64,
    pub termination_a: String,
    pub termination_b: String,
}

impl ComparisonReport {
    pub fn max_q_deviation(&self) -> f64 {
        self.sup_q.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_deviation(&self) -> f64 {
        self.sup_q
            .iter()
            .chain(self.sup_v.iter())
            .cloned()
            .fold(0.0, f64::max)
    }
}

fn interp_in_arc(arc: &TrajectoryArc<StateTQ>, t: f64) -> Option<StateTQ> {
    let samples = &arc.samples;
    if samples.is_empty() || t < samples[0].0 || t > samples[samples.len() - 1].0 {
        return None;
    }
    let pos = samples.partition_point(|(st, _)| *st <= t);
    if pos == 0 {
        return Some(samples[0].1.clone());
    }
    if pos >= samples.len() {
        return Some(samples[samples.len() - 1].1.clone());
    }
    let (t0, s0) = &samples[pos - 1];
    let (t1, s1) = &samples[pos];
    if t1 == t0 {
        return Some(s0.clone());
    }
    let a = (t - t0) / (t1 - t0);
    Some(StateTQ::new(
        &s0.q + (&s1.q - &s0.q) * a,
        &s0.v + (&s1.v - &s0.v) * a,
    ))
}

/// Compares two trajectories over the same chart, e.g. a directly
/// integrated full trajectory against a reduced-and-reconstructed one.
pub fn compare_full_reduced(
    a: &HybridTrajectory<StateTQ>,
    b: &HybridTrajectory<StateTQ>,
) -> ComparisonReport {
    let dim = a
        .arcs
        .first()
        .and_then(|arc| arc.samples.first())
        .map(|(_, s)| s.dim())
        .unwrap_or(0);
    let dim_b = b
        .arcs
        .first()
        .and_then(|arc| arc.samples.first())
        .map(|(_, s)| s.dim())
        .unwrap_or(0);

    let mut report = ComparisonReport {
        structural_match: a.impacts.len() == b.impacts.len() && dim == dim_b,
        impact_count_a: a.impacts.len(),
        impact_count_b: b.impacts.len(),
        sup_q: vec![0.0; dim],
        sup_v: vec![0.0; dim],
        max_impact_time_dev: 0.0,
        termination_a: format!("{:?}", a.termination),
        termination_b: format!("{:?}", b.termination),
    };
    if dim != dim_b {
        return report;
    }

    for (arc_a, arc_b) in a.arcs.iter().zip(b.arcs.iter()) {
        let lo = arc_a.t_start.max(arc_b.t_start);
        let hi = arc_a.t_end.min(arc_b.t_end);
        if hi < lo {
            continue;
        }
        for (t, sa) in &arc_a.samples {
            if *t < lo || *t > hi {
                continue;
            }
            if let Some(sb) = interp_in_arc(arc_b, *t) {
                for i in 0..dim {
                    report.sup_q[i] = report.sup_q[i].max((sa.q[i] - sb.q[i]).abs());
                    report.sup_v[i] = report.sup_v[i].max((sa.v[i] - sb.v[i]).abs());
                }
            }
        }
    }
    for (ia, ib) in a.impacts.iter().zip(b.impacts.iter()) {
        report.max_impact_time_dev = report.max_impact_time_dev.max((ia.t - ib.t).abs());
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Polar-chart central-force Lagrangian `(m/2)(rdot^2 + r^2 thdot^2)`
    /// with the radial dissipation force `-2 c r^3 thdot dr`, finite
    /// differences only.
    fn polar_fd(m: f64, c: f64) -> ForcedLagrangianSystem {
        ForcedLagrangianSystem::new(
            2,
            move |q, v| 0.5 * m * (v[0] * v[0] + q[0] * q[0] * v[1] * v[1]),
            move |q, v| DVector::from_column_slice(&[-2.0 * c * q[0].powi(3) * v[1], 0.0]),
        )
    }

    fn theta_spec() -> CyclicSpec {
        CyclicSpec::circle(1)
    }

    #[test]
    fn momentum_of_polar_chart_is_m_r_squared_thetadot() {
        let sys = polar_fd(2.0, 0.0);
        let s = StateTQ::from_slices(&[1.0, 0.3], &[0.0, 3.0]);
        let mu = momentum(&sys, &theta_spec(), &s).unwrap();
        assert!((mu - 6.0).abs() < 1e-7, "got {mu}");
    }

    #[test]
    fn cyclic_velocity_inverts_the_momentum_map() {
        let sys = polar_fd(1.0, 2.0);
        let cyc = theta_spec();
        let x = DVector::from_column_slice(&[0.5]);
        let xdot = DVector::from_column_slice(&[1.7]);
        let td = solve_cyclic_velocity(&sys, &cyc, &x, &xdot, 0.25).unwrap();
        assert!((td - 1.0).abs() < 1e-8, "mu/(m r^2) = 1, got {td}");
        // Round trip through the momentum map.
        let s = lift_state(&x, &xdot, 0.0, td, 1);
        let mu = momentum(&sys, &cyc, &s).unwrap();
        assert!((mu - 0.25).abs() < 1e-8);
    }

    #[test]
    fn reduced_lagrangian_matches_closed_form_on_fd_path() {
        // R = (m/2) rdot^2 - mu^2 / (2 m r^2).
        let sys = polar_fd(1.0, 2.0);
        let rs = make_reduced_system(&sys, &theta_spec(), 0.25).unwrap();
        let x = DVector::from_column_slice(&[1.0]);
        let xdot = DVector::from_column_slice(&[0.0]);
        let r = rs.reduced_lagrangian(&x, &xdot);
        assert!((r - (-0.03125)).abs() < 1e-10, "got {r}");
        let f = rs.reduced_force(&x, &xdot);
        assert!(
            (f[0] - (-1.0)).abs() < 1e-8,
            "F_mu at r=1, c=2: got {}",
            f[0]
        );
    }

    #[test]
    fn reduced_acceleration_matches_closed_form_on_fd_path() {
        // rddot = mu^2/(m^2 r^3) - 2 c r mu / m^2.
        let sys = polar_fd(1.0, 0.0);
        let rs = make_reduced_system(&sys, &theta_spec(), 0.25).unwrap();
        let x = DVector::from_column_slice(&[0.5]);
        let xdot = DVector::from_column_slice(&[0.0]);
        let a = reduced_acceleration(&rs, &x, &xdot).unwrap();
        assert!(
            (a[0] - 0.5).abs() < 1e-6,
            "free case at r=0.5: got {}",
            a[0]
        );

        let sys = polar_fd(1.0, 2.0);
        let rs = make_reduced_system(&sys, &theta_spec(), 0.25).unwrap();
        let x = DVector::from_column_slice(&[1.0]);
        let a = reduced_acceleration(&rs, &x, &xdot).unwrap();
        assert!(
            (a[0] - (-0.9375)).abs() < 1e-6,
            "0.0625 - 1 at r=1: got {}",
            a[0]
        );
    }

    #[test]
    fn guard_depending_on_cyclic_coordinate_is_rejected() {
        let guard = GuardSpec::new(|q: &DVector<f64>| 1.0 - q[0] * q[0] + 0.1 * q[1].sin(), 1.0);
        match reduce_guard(&guard, &theta_spec(), 2) {
            Err(Error::GuardNotReducible { max_dev }) => assert!(max_dev > 1e-3),
            Err(other) => panic!("expected GuardNotReducible, got {other:?}"),
            Ok(_) => panic!("expected GuardNotReducible, got a reduced guard"),
        }
    }

    #[test]
    fn reduced_guard_drops_the_cyclic_slot() {
        let guard = GuardSpec::new(|q: &DVector<f64>| 1.0 - q[0] * q[0], 1.0)
            .with_gradient(|q| DVector::from_column_slice(&[-2.0 * q[0], 0.0]));
        let red = reduce_guard(&guard, &theta_spec(), 2).unwrap();
        let x = DVector::from_column_slice(&[0.6]);
        assert!((red.h(&x) - (1.0 - 0.36)).abs() < 1e-14);
        let grad = red.grad(&x);
        assert_eq!(grad.len(), 1);
        assert!((grad[0] - (-1.2)).abs() < 1e-12);
    }

    #[test]
    fn force_symmetry_certifies_radial_dissipation() {
        let sys = polar_fd(1.0, 2.0);
        let region = SampleRegion::new(
            vec![(0.2, 1.0), (0.0, std::f64::consts::TAU)],
            vec![(-3.0, 3.0), (-3.0, 3.0)],
        );
        let report = force_symmetry_check(&sys, &theta_spec(), &region, 100, 7);
        assert!(report.certified(), "{report:?}");
    }

    #[test]
    fn cyclic_invariance_check_flags_theta_dependence() {
        let sys = ForcedLagrangianSystem::new(
            2,
            |q, v| 0.5 * (v[0] * v[0] + v[1] * v[1]) + 0.1 * q[1].cos(),
            |_q, _v| DVector::zeros(2),
        );
        let states = [StateTQ::from_slices(&[0.5, 0.2], &[1.0, 0.5])];
        assert!(verify_cyclic_invariance(&sys, &theta_spec(), &states).is_err());
    }
}
