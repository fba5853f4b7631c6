//! Simulation of simple hybrid forced mechanical systems.
//!
//! A *forced Lagrangian system* is a configuration space `Q = R^n` with a
//! regular Lagrangian `L(q, v)` and an external force covector `F(q, v)`.
//! A *hybrid* system pairs that with a domain `{h(q) >= 0}` whose boundary
//! `h = 0` acts as a switching surface: trajectories integrate the forced
//! Euler-Lagrange field until they hit the surface moving outward, then a
//! momentum reset (Newtonian impact with restitution) is applied and
//! integration resumes.
//!
//! The crate provides:
//!
//! * [`mechanics`]: Lagrangian evaluation, derivative bundles (analytic or
//!   finite-difference), mass matrices, forced accelerations, energy.
//! * [`hamiltonian`]: the Legendre transform, forced Hamilton equations, and
//!   hybrid execution on the momentum side for cross-validation.
//! * [`hybrid`]: fixed-step RK4 execution with bisection event location,
//!   Newtonian impacts, Zeno detection, and trajectory records.
//! * [`routh`]: reduction by a cyclic coordinate at fixed momentum,
//!   piecewise-momentum hybrid execution, reconstruction, and trajectory
//!   comparison.
//! * [`scenarios`]: ready-made systems (planar billiard in Cartesian and
//!   polar charts, a driven 1D bouncer) and a JSON scenario format.
//! * [`io`]: CSV writers and readers for trajectory, impact, and reduced
//!   trajectory tables.

pub mod error;
pub mod hamiltonian;
pub mod hybrid;
pub mod io;
pub mod mechanics;
pub mod routh;
pub mod scenarios;
pub mod tolerances;

pub use error::{Error, ExecFailure};
pub use hamiltonian::StateTstarQ;
pub use hybrid::{
    GuardSpec, HybridSystemDef, HybridTrajectory, ImpactRecord, IntegratorConfig, Termination,
    TrajectoryArc,
};
pub use mechanics::{AnalyticDerivatives, DerivativeBundle, ForcedLagrangianSystem, StateTQ};
pub use routh::{
    ComparisonReport, CyclicSpec, ReducedHybridTrajectory, ReducedSegment, ReducedSystem,
};
pub use scenarios::{ScenarioConfig, ScenarioKind, ScenarioSystem};
