//! The cotangent-bundle side: Legendre transform and forced Hamilton
//! equations, for cross-validating the Lagrangian-side execution.
//!
//! For a hyperregular `L`, the Legendre transform `FL(q, v) = (q, dL/dv)`
//! conjugates the forced Euler-Lagrange flow to the flow of
//! `qdot = dH/dp`, `pdot = F^H - dH/dq`, where `H(q, p) = <p, v> - L(q, v)`
//! at `v = v(q, p)` and `F^H` is the force expressed through `v(q, p)`.
//! Impacts conjugate to `FL . reset . FL^-1`, applied on the surface
//! `h(q) = 0` crossed outward.
//!
//! With analytic derivatives, the field uses the exact identities
//! `dH/dp = v(q, p)` and `dH/dq = -dL/dq (q, v(q, p))`; otherwise the
//! partials of `H` fall back to central finite differences through the
//! inverse-Legendre solve.

use nalgebra::DVector;

use crate::error::Error;
use crate::hybrid::{
    apply_reset, flatten, run_flat, HybridSystemDef, HybridTrajectory, ImpactRecord,
    IntegratorConfig, TrajectoryArc,
};
use crate::mechanics::{solve_spd, ForcedLagrangianSystem, StateTQ};
use crate::tolerances::{NEWTON_MAX_ITER, NEWTON_TOL};

/// A cotangent-bundle point: configuration `q` and momentum `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTstarQ {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl StateTstarQ {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have equal length");
        StateTstarQ { q, p }
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(p))
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

/// `FL(q, v) = (q, dL/dv)`.
pub fn legendre(sys: &ForcedLagrangianSystem, s: &StateTQ) -> Result<StateTstarQ, Error> {
    let p = sys.fiber_derivative(s)?;
    Ok(StateTstarQ::new(s.q.clone(), p))
}

/// Solves `dL/dv (q, v) = p` for `v` by damped Newton, starting from
/// `v0 = M(q, 0)^-1 p`. Residuals are measured in the max norm against
/// [`NEWTON_TOL`].
pub fn inverse_legendre(sys: &ForcedLagrangianSystem, c: &StateTstarQ) -> Result<StateTQ, Error> {
    if c.dim() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: c.dim(),
        });
    }
    let zero_v = DVector::zeros(c.dim());
    let m0 = sys.mass_matrix(&c.q, &zero_v)?;
    let mut v = solve_spd(&m0, &c.p)?;
    let residual = |v: &DVector<f64>| -> Result<DVector<f64>, Error> {
        let s = StateTQ::new(c.q.clone(), v.clone());
        Ok(sys.fiber_derivative(&s)? - &c.p)
    };
    let mut g = residual(&v)?;
    let mut g_norm = g.amax();
    for _ in 0..NEWTON_MAX_ITER {
        if g_norm <= NEWTON_TOL {
            return Ok(StateTQ::new(c.q.clone(), v));
        }
        let jac = sys.mass_matrix(&c.q, &v)?;
        let dv = solve_spd(&jac, &g)?;
        // Backtracking: halve the step until the residual shrinks.
        let mut alpha = 1.0;
        loop {
            let candidate = &v - &dv * alpha;
            let g_new = residual(&candidate)?;
            let g_new_norm = g_new.amax();
            if g_new_norm < g_norm || alpha < 1.0 / 1024.0 {
                v = candidate;
                g = g_new;
                g_norm = g_new_norm;
                break;
            }
            alpha *= 0.5;
        }
    }
    if g_norm <= NEWTON_TOL {
        return Ok(StateTQ::new(c.q.clone(), v));
    }
    Err(Error::NewtonDiverged {
        solver: "inverse Legendre transform",
        iterations: NEWTON_MAX_ITER,
        residual: g_norm,
    })
}

/// `H(q, p) = <p, v(q, p)> - L(q, v(q, p))`.
pub fn hamiltonian_eval(sys: &ForcedLagrangianSystem, c: &StateTstarQ) -> Result<f64, Error> {
    let s = inverse_legendre(sys, c)?;
    let l = sys.lagrangian(&s);
    if !l.is_finite() {
        return Err(Error::NonFinite {
            context: "lagrangian",
        });
    }
    Ok(c.p.dot(&s.v) - l)
}

/// Right-hand side of the forced Hamilton equations at `c`:
/// returns `(qdot, pdot)`.
pub fn forced_hamiltonian_field(
    sys: &ForcedLagrangianSystem,
    c: &StateTstarQ,
) -> Result<(DVector<f64>, DVector<f64>), Error> {
    let s = inverse_legendre(sys, c)?;
    let f = sys.force(&s);
    if !f.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite { context: "force" });
    }
    if sys.has_analytic_derivatives() {
        // dH/dp = v(q, p); dH/dq = -dL/dq at v(q, p).
        let b = sys.derivatives(&s)?;
        Ok((s.v.clone(), f + b.dl_dq))
    } else {
        let n = c.dim();
        let fd = sys.fd_step();
        let mut dh_dq = DVector::zeros(n);
        let mut dh_dp = DVector::zeros(n);
        for i in 0..n {
            let hq = fd * 1f64.max(c.q[i].abs());
            let mut qp = c.q.clone();
            let mut qm = c.q.clone();
            qp[i] += hq;
            qm[i] -= hq;
            let hp_val = hamiltonian_eval(sys, &StateTstarQ::new(qp, c.p.clone()))?;
            let hm_val = hamiltonian_eval(sys, &StateTstarQ::new(qm, c.p.clone()))?;
            dh_dq[i] = (hp_val - hm_val) / (2.0 * hq);

            let hp = fd * 1f64.max(c.p[i].abs());
            let mut pp = c.p.clone();
            let mut pm = c.p.clone();
            pp[i] += hp;
            pm[i] -= hp;
            let hp_val = hamiltonian_eval(sys, &StateTstarQ::new(c.q.clone(), pp))?;
            let hm_val = hamiltonian_eval(sys, &StateTstarQ::new(c.q.clone(), pm))?;
            dh_dp[i] = (hp_val - hm_val) / (2.0 * hp);
        }
        Ok((dh_dp, f - dh_dq))
    }
}

/// Maps a tangent-side trajectory through `FL` pointwise, preserving arc
/// structure, impact times, and termination.
pub fn map_hybrid_flow(
    sys: &ForcedLagrangianSystem,
    traj: &HybridTrajectory<StateTQ>,
) -> Result<HybridTrajectory<StateTstarQ>, Error> {
    let map_state = |s: &StateTQ| legendre(sys, s);
    let mut arcs = Vec::with_capacity(traj.arcs.len());
    for arc in &traj.arcs {
        let mut samples = Vec::with_capacity(arc.samples.len());
        for (t, s) in &arc.samples {
            samples.push((*t, map_state(s)?));
        }
        arcs.push(TrajectoryArc {
            t_start: arc.t_start,
            t_end: arc.t_end,
            samples,
        });
    }
    let mut impacts = Vec::with_capacity(traj.impacts.len());
    for imp in &traj.impacts {
        impacts.push(ImpactRecord {
            t: imp.t,
            state_pre: map_state(&imp.state_pre)?,
            state_post: map_state(&imp.state_post)?,
            h_residual: imp.h_residual,
            momentum_pre: imp.momentum_pre,
            momentum_post: imp.momentum_post,
        });
    }
    Ok(HybridTrajectory {
        arcs,
        impacts,
        termination: traj.termination.clone(),
    })
}

/// Maps a cotangent-side trajectory back through `FL^-1` pointwise.
pub fn map_flow_to_tangent(
    sys: &ForcedLagrangianSystem,
    traj: &HybridTrajectory<StateTstarQ>,
) -> Result<HybridTrajectory<StateTQ>, Error> {
    let map_state = |c: &StateTstarQ| inverse_legendre(sys, c);
    let mut arcs = Vec::with_capacity(traj.arcs.len());
    for arc in &traj.arcs {
        let mut samples = Vec::with_capacity(arc.samples.len());
        for (t, c) in &arc.samples {
            samples.push((*t, map_state(c)?));
        }
        arcs.push(TrajectoryArc {
            t_start: arc.t_start,
            t_end: arc.t_end,
            samples,
        });
    }
    let mut impacts = Vec::with_capacity(traj.impacts.len());
    for imp in &traj.impacts {
        impacts.push(ImpactRecord {
            t: imp.t,
            state_pre: map_state(&imp.state_pre)?,
            state_post: map_state(&imp.state_post)?,
            h_residual: imp.h_residual,
            momentum_pre: imp.momentum_pre,
            momentum_post: imp.momentum_post,
        });
    }
    Ok(HybridTrajectory {
        arcs,
        impacts,
        termination: traj.termination.clone(),
    })
}

/// Hybrid execution on the cotangent side: integrates the forced Hamilton
/// equations, detects `h(q) = 0` crossings, and applies the conjugated
/// reset `FL . reset . FL^-1`. Event policy and termination semantics match
/// [`crate::hybrid::execute`].
pub fn execute(
    hs: &HybridSystemDef,
    c0: &StateTstarQ,
    cfg: &IntegratorConfig,
) -> HybridTrajectory<StateTstarQ> {
    let n = hs.system.dim();
    assert_eq!(c0.dim(), n, "initial state dimension mismatch");

    let unflatten_pq =
        |x: &DVector<f64>| StateTstarQ::new(x.rows(0, n).into_owned(), x.rows(n, n).into_owned());
    let field = |x: &DVector<f64>| -> Result<DVector<f64>, Error> {
        let c = unflatten_pq(x);
        let (qdot, pdot) = forced_hamiltonian_field(&hs.system, &c)?;
        Ok(flatten(&qdot, &pdot))
    };
    let event = |x: &DVector<f64>| hs.guard.h(&x.rows(0, n).into_owned());
    let reset = |_t: f64, x: &DVector<f64>| -> Result<DVector<f64>, Error> {
        let pre = unflatten_pq(x);
        let pre_tq = inverse_legendre(&hs.system, &pre)?;
        let post_tq = apply_reset(&hs.system, &hs.guard, &pre_tq)?;
        let post = legendre(&hs.system, &post_tq)?;
        Ok(flatten(&post.q, &post.p))
    };

    let run = run_flat(&field, &event, &reset, flatten(&c0.q, &c0.p), cfg);
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
                    .map(|(t, x)| (t, unflatten_pq(&x)))
                    .collect(),
            })
            .collect(),
        impacts: run
            .impacts
            .into_iter()
            .map(|i| ImpactRecord {
                t: i.t,
                state_pre: unflatten_pq(&i.pre),
                state_post: unflatten_pq(&i.post),
                h_residual: i.h_residual,
                momentum_pre: None,
                momentum_post: None,
            })
            .collect(),
        termination: run.termination,
    }
}

/// Convenience: run the cotangent-side execution from a tangent-side
/// initial condition and map the result back for comparison.
pub fn execute_mapped_to_tangent(
    hs: &HybridSystemDef,
    s0: &StateTQ,
    cfg: &IntegratorConfig,
) -> Result<HybridTrajectory<StateTQ>, Error> {
    let c0 = legendre(&hs.system, s0)?;
    let traj = execute(hs, &c0, cfg);
    map_flow_to_tangent(&hs.system, &traj)
}
