//! Hybrid execution: continuous arcs punctuated by impacts.
//!
//! A trajectory integrates the forced Euler-Lagrange field with fixed-step
//! RK4 inside the domain `{h(q) >= 0}`. When a step lands outside, the
//! crossing time is bracketed by bisection on `sigma -> h(q(t_a + sigma))`,
//! re-integrating from the step's start with halved substeps (no
//! interpolation), until the bracket is narrower than `event_tol`. The
//! pre-impact state is reported on the `h >= 0` side of the bracket. The
//! impact map is then applied and integration resumes from the same time.
//!
//! Termination is always explicit: the horizon, the impact cap, a suspected
//! Zeno accumulation (two impacts closer than `min_impact_separation`), or
//! a carried failure. A partial trajectory is returned in every case.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ExecFailure};
use crate::mechanics::{ForcedLagrangianSystem, StateTQ};
use crate::tolerances::{
    DEFAULT_DT, DEFAULT_EVENT_TOL, DEFAULT_FD_STEP, DEFAULT_MAX_IMPACTS,
    DEFAULT_MIN_IMPACT_SEPARATION, DEFAULT_T_MAX, GUARD_GRAD_MIN_NORM, IMPACT_NORMAL_MIN,
};

pub type GuardEval = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GuardGradEval = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ResetEval = Arc<dyn Fn(&StateTQ) -> StateTQ + Send + Sync>;

/// Switching surface `h(q) = 0` with restitution and an optional reset
/// override replacing the Newtonian impact map.
#[derive(Clone)]
pub struct GuardSpec {
    h: GuardEval,
    grad_h: Option<GuardGradEval>,
    pub restitution: f64,
    reset_override: Option<ResetEval>,
}

impl GuardSpec {
    pub fn new<H>(h: H, restitution: f64) -> Self
    where
        H: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        assert!(
            (0.0..=1.0).contains(&restitution),
            "restitution must lie in [0, 1]"
        );
        GuardSpec {
            h: Arc::new(h),
            grad_h: None,
            restitution,
            reset_override: None,
        }
    }

    pub fn with_gradient<G>(mut self, grad: G) -> Self
    where
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.grad_h = Some(Arc::new(grad));
        self
    }

    pub fn with_reset_override<R>(mut self, reset: R) -> Self
    where
        R: Fn(&StateTQ) -> StateTQ + Send + Sync + 'static,
    {
        self.reset_override = Some(Arc::new(reset));
        self
    }

    pub fn h(&self, q: &DVector<f64>) -> f64 {
        (self.h)(q)
    }

    pub fn has_reset_override(&self) -> bool {
        self.reset_override.is_some()
    }

    pub(crate) fn reset_override(&self) -> Option<&ResetEval> {
        self.reset_override.as_ref()
    }

    /// `grad h(q)`, analytic when supplied, else central differences.
    pub fn grad(&self, q: &DVector<f64>) -> DVector<f64> {
        match &self.grad_h {
            Some(g) => g(q),
            None => {
                let n = q.len();
                let mut out = DVector::zeros(n);
                for i in 0..n {
                    let h = DEFAULT_FD_STEP * 1f64.max(q[i].abs());
                    let hi = (q[i] + h) - q[i];
                    let mut plus = q.clone();
                    let mut minus = q.clone();
                    plus[i] += hi;
                    minus[i] -= hi;
                    out[i] = ((self.h)(&plus) - (self.h)(&minus)) / (2.0 * hi);
                }
                out
            }
        }
    }
}

/// `(h(q), dh(q) . v)`: guard value and its rate along the motion.
pub fn guard_value(g: &GuardSpec, s: &StateTQ) -> (f64, f64) {
    let h = g.h(&s.q);
    let hdot = g.grad(&s.q).dot(&s.v);
    (h, hdot)
}

/// A forced Lagrangian system together with its switching surface.
#[derive(Clone)]
pub struct HybridSystemDef {
    pub system: ForcedLagrangianSystem,
    pub guard: GuardSpec,
}

/// Fixed-step integration knobs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub dt: f64,
    /// Width (in time) to which an event is bracketed.
    pub event_tol: f64,
    pub max_impacts: usize,
    /// Impacts closer than this terminate the run as a suspected Zeno point.
    pub min_impact_separation: f64,
    pub t_max: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: DEFAULT_DT,
            event_tol: DEFAULT_EVENT_TOL,
            max_impacts: DEFAULT_MAX_IMPACTS,
            min_impact_separation: DEFAULT_MIN_IMPACT_SEPARATION,
            t_max: DEFAULT_T_MAX,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation(msg.into()))
            }
        };
        check(
            self.dt.is_finite() && self.dt > 0.0,
            "dt must be positive and finite",
        )?;
        check(
            self.event_tol.is_finite() && self.event_tol > 0.0,
            "event_tol must be positive and finite",
        )?;
        check(self.max_impacts >= 1, "max_impacts must be at least 1")?;
        check(
            self.min_impact_separation.is_finite() && self.min_impact_separation > 0.0,
            "min_impact_separation must be positive and finite",
        )?;
        check(
            self.t_max.is_finite() && self.t_max > 0.0,
            "t_max must be positive and finite",
        )?;
        check(
            self.min_impact_separation < self.t_max,
            "min_impact_separation must be smaller than t_max",
        )?;
        Ok(())
    }
}

/// One recorded impact. `state_pre` and `state_post` share `q` exactly;
/// `h_residual` is the guard value at the localized pre-impact point.
#[derive(Debug, Clone)]
pub struct ImpactRecord<S = StateTQ> {
    pub t: f64,
    pub state_pre: S,
    pub state_post: S,
    pub h_residual: f64,
    pub momentum_pre: Option<f64>,
    pub momentum_post: Option<f64>,
}

/// A maximal continuous arc: dense samples over `[t_start, t_end]`.
#[derive(Debug, Clone)]
pub struct TrajectoryArc<S = StateTQ> {
    pub t_start: f64,
    pub t_end: f64,
    pub samples: Vec<(f64, S)>,
}

/// Why an execution stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    HorizonReached,
    MaxImpacts,
    ZenoSuspected,
    Failed(ExecFailure),
}

/// Arcs, impacts, and the termination status of one hybrid execution.
/// Arc `i` ends at `impacts[i].t`; arc `i + 1` starts there with
/// `impacts[i].state_post`.
#[derive(Debug, Clone)]
pub struct HybridTrajectory<S = StateTQ> {
    pub arcs: Vec<TrajectoryArc<S>>,
    pub impacts: Vec<ImpactRecord<S>>,
    pub termination: Termination,
}

impl<S> HybridTrajectory<S> {
    pub fn final_time(&self) -> f64 {
        self.arcs.last().map(|a| a.t_end).unwrap_or(0.0)
    }

    pub fn is_failure(&self) -> bool {
        matches!(self.termination, Termination::Failed(_))
    }
}

/// Newtonian impact with restitution `e`:
/// `v+ = v - (1 + e) * (dh . v) / (dh M^-1 dh^T) * M^-1 dh^T`.
/// Leaves `q` untouched.
pub fn newtonian_impact(
    sys: &ForcedLagrangianSystem,
    guard: &GuardSpec,
    s: &StateTQ,
) -> Result<StateTQ, Error> {
    let dh = guard.grad(&s.q);
    let grad_norm = dh.norm();
    if !grad_norm.is_finite() || grad_norm <= GUARD_GRAD_MIN_NORM {
        return Err(Error::DegenerateGuard { norm: grad_norm });
    }
    let mass = sys.derivatives(s)?.mass;
    let u = crate::mechanics::solve_spd(&mass, &dh)?;
    let w = dh.dot(&u);
    if !w.is_finite() || w.abs() <= IMPACT_NORMAL_MIN {
        return Err(Error::DegenerateNormal { value: w });
    }
    let lam = dh.dot(&s.v) / w;
    let v_plus = &s.v - u * ((1.0 + guard.restitution) * lam);
    Ok(StateTQ::new(s.q.clone(), v_plus))
}

/// One classical RK4 step of the second-order field
/// `(q, v) -> (v, forced_acceleration)`. `field` returns `(qdot, vdot)`.
pub fn rk4_step<F>(field: F, s: &StateTQ, dt: f64) -> Result<StateTQ, Error>
where
    F: Fn(&StateTQ) -> Result<(DVector<f64>, DVector<f64>), Error>,
{
    let n = s.dim();
    let flat_field = |x: &DVector<f64>| -> Result<DVector<f64>, Error> {
        let st = unflatten(x, n);
        let (qd, vd) = field(&st)?;
        Ok(flatten(&qd, &vd))
    };
    let x = flatten(&s.q, &s.v);
    let next = rk4_flat(&flat_field, &x, dt)?;
    Ok(unflatten(&next, n))
}

/// The phase-space field of a forced Lagrangian system, for [`rk4_step`].
pub fn lagrangian_field(
    sys: &ForcedLagrangianSystem,
) -> impl Fn(&StateTQ) -> Result<(DVector<f64>, DVector<f64>), Error> + '_ {
    move |s: &StateTQ| {
        let a = sys.forced_acceleration(s)?;
        Ok((s.v.clone(), a))
    }
}

/// Bisects the crossing of `h = 0` inside `[t_a, t_b]`, given `h >= 0 at
/// s_a` and `h < 0 at s_b`. Returns the crossing time and the state on the
/// `h >= 0` side of the final bracket. When `h(s_a)` is already `0` and the
/// flow leaves immediately, this collapses to `(t_a, s_a)`.
pub fn locate_event<F>(
    field: F,
    guard: &GuardSpec,
    t_a: f64,
    s_a: &StateTQ,
    t_b: f64,
    s_b: &StateTQ,
    event_tol: f64,
) -> Result<(f64, StateTQ), Error>
where
    F: Fn(&StateTQ) -> Result<(DVector<f64>, DVector<f64>), Error>,
{
    let n = s_a.dim();
    let h_a = guard.h(&s_a.q);
    let h_b = guard.h(&s_b.q);
    // NaN on either side must fail the precondition.
    let bracketed = h_a >= 0.0 && h_b < 0.0;
    if !bracketed {
        return Err(Error::EventLocalization {
            t: t_a,
            detail: format!("bracket precondition violated: h(a) = {h_a}, h(b) = {h_b}"),
        });
    }
    let flat_field = |x: &DVector<f64>| -> Result<DVector<f64>, Error> {
        let st = unflatten(x, n);
        let (qd, vd) = field(&st)?;
        Ok(flatten(&qd, &vd))
    };
    let event = |x: &DVector<f64>| guard.h(&x.rows(0, n).into_owned());
    let x_a = flatten(&s_a.q, &s_a.v);
    let (sigma, x_pre) = bisect_flat(&flat_field, &event, &x_a, t_b - t_a, event_tol, t_a)?;
    Ok((t_a + sigma, unflatten(&x_pre, n)))
}

/// Integrates the guarded field until the horizon, the impact cap, a Zeno
/// flag, or a failure. See the module docs for the event policy.
pub fn execute(hs: &HybridSystemDef, s0: &StateTQ, cfg: &IntegratorConfig) -> HybridTrajectory {
    let n = hs.system.dim();
    assert_eq!(s0.dim(), n, "initial state dimension mismatch");

    let field = |x: &DVector<f64>| -> Result<DVector<f64>, Error> {
        let st = unflatten(x, n);
        let a = hs.system.forced_acceleration(&st)?;
        Ok(flatten(&st.v, &a))
    };
    let event = |x: &DVector<f64>| hs.guard.h(&x.rows(0, n).into_owned());
    let reset = |_t: f64, x: &DVector<f64>| -> Result<DVector<f64>, Error> {
        let pre = unflatten(x, n);
        let post = apply_reset(&hs.system, &hs.guard, &pre)?;
        Ok(flatten(&post.q, &post.v))
    };

    let run = run_flat(&field, &event, &reset, flatten(&s0.q, &s0.v), cfg);
    typed_from_flat(run, n)
}

pub(crate) fn apply_reset(
    sys: &ForcedLagrangianSystem,
    guard: &GuardSpec,
    pre: &StateTQ,
) -> Result<StateTQ, Error> {
    match guard.reset_override() {
        Some(r) => {
            let post = r(pre);
            if post.q != pre.q {
                return Err(Error::Validation(
                    "reset override must preserve the configuration".into(),
                ));
            }
            Ok(post)
        }
        None => newtonian_impact(sys, guard, pre),
    }
}

// ---------------------------------------------------------------------------
// Flat engine. States are `[q; v]` vectors (plus any quadrature slots the
// caller appends); the event function reads whatever layout the caller set
// up. Shared by the Lagrangian, Hamiltonian, and reduced executors.
// ---------------------------------------------------------------------------

pub(crate) type FlatFieldFn<'a> = dyn Fn(&DVector<f64>) -> Result<DVector<f64>, Error> + 'a;
pub(crate) type FlatResetFn<'a> = dyn Fn(f64, &DVector<f64>) -> Result<DVector<f64>, Error> + 'a;

pub(crate) struct FlatArc {
    pub t_start: f64,
    pub t_end: f64,
    pub samples: Vec<(f64, DVector<f64>)>,
}

pub(crate) struct FlatImpact {
    pub t: f64,
    pub pre: DVector<f64>,
    pub post: DVector<f64>,
    pub h_residual: f64,
}

pub(crate) struct FlatRun {
    pub arcs: Vec<FlatArc>,
    pub impacts: Vec<FlatImpact>,
    pub termination: Termination,
}

pub(crate) fn flatten(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(a.len() + b.len());
    x.rows_mut(0, a.len()).copy_from(a);
    x.rows_mut(a.len(), b.len()).copy_from(b);
    x
}

pub(crate) fn unflatten(x: &DVector<f64>, n: usize) -> StateTQ {
    StateTQ::new(x.rows(0, n).into_owned(), x.rows(n, n).into_owned())
}

pub(crate) fn rk4_flat(
    field: &FlatFieldFn,
    x: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>, Error> {
    let k1 = field(x)?;
    let k2 = field(&(x + &k1 * (dt / 2.0)))?;
    let k3 = field(&(x + &k2 * (dt / 2.0)))?;
    let k4 = field(&(x + &k3 * dt))?;
    let combo = (k1 + (k2 + k3) * 2.0 + k4) / 6.0;
    let next = x + combo * dt;
    if next.iter().all(|c| c.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFinite {
            context: "rk4 step",
        })
    }
}

/// State at `t_a + sigma`, re-integrated from `x_a` with two halved
/// substeps rather than interpolated.
fn substep_state(
    field: &FlatFieldFn,
    x_a: &DVector<f64>,
    sigma: f64,
) -> Result<DVector<f64>, Error> {
    let half = rk4_flat(field, x_a, sigma / 2.0)?;
    rk4_flat(field, &half, sigma / 2.0)
}

/// Bisection of the event time. Invariant: `h >= 0` at `lo`, `h < 0` at
/// `hi`. Returns `(lo, state at lo)` once `hi - lo < event_tol`.
fn bisect_flat(
    field: &FlatFieldFn,
    event: &dyn Fn(&DVector<f64>) -> f64,
    x_a: &DVector<f64>,
    width: f64,
    event_tol: f64,
    t_a: f64,
) -> Result<(f64, DVector<f64>), Error> {
    const MAX_BISECT: usize = 200;
    let mut lo = 0.0_f64;
    let mut hi = width;
    let mut x_lo = x_a.clone();
    let mut iterations = 0;
    while hi - lo > event_tol {
        iterations += 1;
        if iterations > MAX_BISECT {
            return Err(Error::EventLocalization {
                t: t_a + lo,
                detail: format!(
                    "bracket still {:e} wide after {MAX_BISECT} bisections",
                    hi - lo
                ),
            });
        }
        let mid = 0.5 * (lo + hi);
        let x_mid = substep_state(field, x_a, mid)?;
        let h_mid = event(&x_mid);
        if h_mid.is_nan() {
            return Err(Error::EventLocalization {
                t: t_a + mid,
                detail: "guard evaluated to NaN during bisection".into(),
            });
        }
        if h_mid >= 0.0 {
            lo = mid;
            x_lo = x_mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, x_lo))
}

pub(crate) fn run_flat(
    field: &FlatFieldFn,
    event: &dyn Fn(&DVector<f64>) -> f64,
    reset: &FlatResetFn,
    x0: DVector<f64>,
    cfg: &IntegratorConfig,
) -> FlatRun {
    let mut arcs: Vec<FlatArc> = Vec::new();
    let mut impacts: Vec<FlatImpact> = Vec::new();

    let h0 = event(&x0);
    if h0.is_nan() || h0 < 0.0 {
        let failure = if h0.is_nan() {
            ExecFailure::NonFiniteField { t: 0.0 }
        } else {
            ExecFailure::OutsideDomain { h: h0 }
        };
        return FlatRun {
            arcs,
            impacts,
            termination: Termination::Failed(failure),
        };
    }

    let mut t = 0.0_f64;
    let mut x = x0;
    let mut arc_start_t = 0.0_f64;
    let mut arc_steps = 0_u64;
    let mut samples: Vec<(f64, DVector<f64>)> = vec![(0.0, x.clone())];
    let mut last_impact_t: Option<f64> = None;

    // Close the running arc at (t_end, state), pushing the state if it is
    // not already the last sample.
    macro_rules! close_arc {
        ($t_end:expr) => {
            arcs.push(FlatArc {
                t_start: arc_start_t,
                t_end: $t_end,
                samples: std::mem::take(&mut samples),
            })
        };
    }

    loop {
        let remaining = cfg.t_max - t;
        if remaining <= cfg.dt * 1e-12 {
            close_arc!(t);
            return FlatRun {
                arcs,
                impacts,
                termination: Termination::HorizonReached,
            };
        }
        let full_step = remaining > cfg.dt;
        let step = if full_step { cfg.dt } else { remaining };
        let x_next = match rk4_flat(field, &x, step) {
            Ok(v) => v,
            Err(_) => {
                close_arc!(t);
                return FlatRun {
                    arcs,
                    impacts,
                    termination: Termination::Failed(ExecFailure::NonFiniteField { t }),
                };
            }
        };
        let t_next = if full_step {
            arc_start_t + (arc_steps + 1) as f64 * cfg.dt
        } else {
            cfg.t_max
        };
        let h_next = event(&x_next);
        if h_next.is_nan() {
            close_arc!(t);
            return FlatRun {
                arcs,
                impacts,
                termination: Termination::Failed(ExecFailure::NonFiniteField { t: t_next }),
            };
        }
        if h_next >= 0.0 {
            t = t_next;
            x = x_next;
            arc_steps += 1;
            samples.push((t, x.clone()));
            continue;
        }

        // The step left the domain: localize, record, reset.
        let (sigma, x_pre) = match bisect_flat(field, event, &x, step, cfg.event_tol, t) {
            Ok(v) => v,
            Err(_) => {
                close_arc!(t);
                return FlatRun {
                    arcs,
                    impacts,
                    termination: Termination::Failed(ExecFailure::EventLocalization { t }),
                };
            }
        };
        let t_ev = t + sigma;
        if sigma > 0.0 {
            samples.push((t_ev, x_pre.clone()));
        }
        close_arc!(t_ev);

        let x_post = match reset(t_ev, &x_pre) {
            Ok(v) => v,
            Err(e) => {
                return FlatRun {
                    arcs,
                    impacts,
                    termination: Termination::Failed(ExecFailure::ResetFailed {
                        t: t_ev,
                        detail: e.to_string(),
                    }),
                };
            }
        };
        let h_residual = event(&x_pre);
        impacts.push(FlatImpact {
            t: t_ev,
            pre: x_pre,
            post: x_post.clone(),
            h_residual,
        });

        let zeno = matches!(last_impact_t, Some(prev) if t_ev - prev < cfg.min_impact_separation);
        last_impact_t = Some(t_ev);
        if zeno {
            return FlatRun {
                arcs,
                impacts,
                termination: Termination::ZenoSuspected,
            };
        }
        if impacts.len() >= cfg.max_impacts {
            return FlatRun {
                arcs,
                impacts,
                termination: Termination::MaxImpacts,
            };
        }

        t = t_ev;
        x = x_post;
        arc_start_t = t_ev;
        arc_steps = 0;
        samples = vec![(t, x.clone())];
    }
}

pub(crate) fn typed_from_flat(run: FlatRun, n: usize) -> HybridTrajectory {
    HybridTrajectory {
        arcs: run
            .arcs
            .into_iter()
            .map(|a| TrajectoryArc {
                t_start: a.t_start,
                t_end: a.t_end,
                samples: a
                    .samples
                    .into_iter()
                    .map(|(t, x)| (t, unflatten(&x, n)))
                    .collect(),
            })
            .collect(),
        impacts: run
            .impacts
            .into_iter()
            .map(|i| ImpactRecord {
                t: i.t,
                state_pre: unflatten(&i.pre, n),
                state_post: unflatten(&i.post, n),
                h_residual: i.h_residual,
                momentum_pre: None,
                momentum_post: None,
            })
            .collect(),
        termination: run.termination,
    }
}
