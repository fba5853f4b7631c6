//! Preset systems and JSON scenario files.
//!
//! Three built-in families: a planar billiard in the unit disk with a
//! velocity-dependent dissipative force, in Cartesian or polar coordinates,
//! and a one-dimensional driven bouncer. The polar chart is the one with a
//! cyclic angle, so it is the only kind `reduce` accepts.
//!
//! A scenario file is a single JSON object with keys `kind`, `params`,
//! `initial`, `integrator`, `outputs`. Unknown fields are rejected;
//! integrator knobs default per [`IntegratorConfig`]. Angles are radians,
//! times are seconds.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hybrid::{GuardSpec, HybridSystemDef, IntegratorConfig};
use crate::mechanics::{AnalyticDerivatives, ForcedLagrangianSystem, StateTQ};
use crate::routh::CyclicSpec;
use crate::tolerances::POLAR_MIN_RADIUS;

/// Billiard in the unit disk, Cartesian chart. `L = (m/2)(vx^2 + vy^2)`,
/// dissipative force
/// `F = (-2c (vy x^2 - vx x y), 2c (vx y^2 - vy x y))`,
/// guard `h = 1 - x^2 - y^2`.
pub fn billiard_cartesian(m: f64, c: f64, e: f64) -> HybridSystemDef {
    assert!(m > 0.0 && c >= 0.0);
    let system = ForcedLagrangianSystem::new(
        2,
        move |_q: &DVector<f64>, v: &DVector<f64>| 0.5 * m * (v[0] * v[0] + v[1] * v[1]),
        move |q: &DVector<f64>, v: &DVector<f64>| {
            let (x, y) = (q[0], q[1]);
            DVector::from_column_slice(&[
                -2.0 * c * (v[1] * x * x - v[0] * x * y),
                2.0 * c * (v[0] * y * y - v[1] * x * y),
            ])
        },
    )
    .with_analytic_derivatives(AnalyticDerivatives {
        dl_dq: Arc::new(|_q, _v| DVector::zeros(2)),
        dl_dv: Arc::new(move |_q, v| v * m),
        mass: Arc::new(move |_q, _v| DMatrix::from_diagonal_element(2, 2, m)),
        dv_dq: Arc::new(|_q, _v| DMatrix::zeros(2, 2)),
    });
    let guard = GuardSpec::new(|q: &DVector<f64>| 1.0 - q[0] * q[0] - q[1] * q[1], e)
        .with_gradient(|q: &DVector<f64>| DVector::from_column_slice(&[-2.0 * q[0], -2.0 * q[1]]));
    HybridSystemDef { system, guard }
}

/// Billiard in the unit disk, polar chart `(r, theta)`.
/// `L = (m/2)(rdot^2 + r^2 thdot^2)`, force `F = -2 c r^3 thdot dr`,
/// guard `h = 1 - r^2`. The angle is cyclic.
///
/// The chart degenerates at the origin; evaluations at `r <=`
/// [`POLAR_MIN_RADIUS`] return NaN, which executions surface as a
/// non-finite-field failure.
pub fn billiard_polar(m: f64, c: f64, e: f64) -> (HybridSystemDef, CyclicSpec) {
    assert!(m > 0.0 && c >= 0.0);
    let in_chart = |q: &DVector<f64>| q[0] > POLAR_MIN_RADIUS;
    let system = ForcedLagrangianSystem::new(
        2,
        move |q: &DVector<f64>, v: &DVector<f64>| {
            if !in_chart(q) {
                return f64::NAN;
            }
            0.5 * m * (v[0] * v[0] + q[0] * q[0] * v[1] * v[1])
        },
        move |q: &DVector<f64>, v: &DVector<f64>| {
            if !in_chart(q) {
                return DVector::from_element(2, f64::NAN);
            }
            DVector::from_column_slice(&[-2.0 * c * q[0].powi(3) * v[1], 0.0])
        },
    )
    .with_analytic_derivatives(AnalyticDerivatives {
        dl_dq: Arc::new(move |q, v| {
            if !in_chart(q) {
                return DVector::from_element(2, f64::NAN);
            }
            DVector::from_column_slice(&[m * q[0] * v[1] * v[1], 0.0])
        }),
        dl_dv: Arc::new(move |q, v| {
            if !in_chart(q) {
                return DVector::from_element(2, f64::NAN);
            }
            DVector::from_column_slice(&[m * v[0], m * q[0] * q[0] * v[1]])
        }),
        mass: Arc::new(move |q, _v| {
            if !in_chart(q) {
                return DMatrix::from_element(2, 2, f64::NAN);
            }
            DMatrix::from_diagonal(&DVector::from_column_slice(&[m, m * q[0] * q[0]]))
        }),
        dv_dq: Arc::new(move |q, v| {
            if !in_chart(q) {
                return DMatrix::from_element(2, 2, f64::NAN);
            }
            let mut out = DMatrix::zeros(2, 2);
            out[(1, 0)] = 2.0 * m * q[0] * v[1];
            out
        }),
    });
    let guard = GuardSpec::new(|q: &DVector<f64>| 1.0 - q[0] * q[0], e)
        .with_gradient(|q: &DVector<f64>| DVector::from_column_slice(&[-2.0 * q[0], 0.0]));
    (HybridSystemDef { system, guard }, CyclicSpec::circle(1))
}

/// One-dimensional bouncer: `L = (m/2) v^2 - drive * q`, wall at `q = 0`
/// (domain `q >= 0`), restitution `e`. With `drive > 0` the force pulls
/// toward the wall, the constant-gravity bouncing ball.
pub fn bouncer_1d(m: f64, e: f64, drive: f64) -> HybridSystemDef {
    assert!(m > 0.0);
    let system = ForcedLagrangianSystem::new(
        1,
        move |q: &DVector<f64>, v: &DVector<f64>| 0.5 * m * v[0] * v[0] - drive * q[0],
        |_q: &DVector<f64>, _v: &DVector<f64>| DVector::zeros(1),
    )
    .with_analytic_derivatives(AnalyticDerivatives {
        dl_dq: Arc::new(move |_q, _v| DVector::from_element(1, -drive)),
        dl_dv: Arc::new(move |_q, v| v * m),
        mass: Arc::new(move |_q, _v| DMatrix::from_element(1, 1, m)),
        dv_dq: Arc::new(|_q, _v| DMatrix::zeros(1, 1)),
    });
    let guard = GuardSpec::new(|q: &DVector<f64>| q[0], e)
        .with_gradient(|_q: &DVector<f64>| DVector::from_element(1, 1.0));
    HybridSystemDef { system, guard }
}

/// Which preset family a scenario instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    BilliardCartesian,
    BilliardPolar,
    #[serde(rename = "bouncer_1d")]
    Bouncer1d,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::BilliardCartesian,
        ScenarioKind::BilliardPolar,
        ScenarioKind::Bouncer1d,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::BilliardCartesian => "billiard_cartesian",
            ScenarioKind::BilliardPolar => "billiard_polar",
            ScenarioKind::Bouncer1d => "bouncer_1d",
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            ScenarioKind::BilliardCartesian => {
                "dissipative billiard in the unit disk, Cartesian chart (x, y)"
            }
            ScenarioKind::BilliardPolar => {
                "dissipative billiard in the unit disk, polar chart (r, theta); reducible"
            }
            ScenarioKind::Bouncer1d => "driven point mass above a wall at q = 0",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ScenarioKind::BilliardCartesian | ScenarioKind::BilliardPolar => 2,
            ScenarioKind::Bouncer1d => 1,
        }
    }
}

/// Physical parameters. `drive` only applies to the bouncer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    /// Mass, must be positive.
    pub m: f64,
    /// Dissipation coefficient, must be nonnegative.
    pub c: f64,
    /// Coefficient of restitution in [0, 1].
    pub e: f64,
    /// Constant force toward the wall (bouncer only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drive: Option<f64>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            m: 1.0,
            c: 0.0,
            e: 1.0,
            drive: None,
        }
    }
}

/// Initial tangent-bundle point, chart coordinates of the chosen kind.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

/// Output locations; every entry optional. Relative names are resolved
/// against `dir` (or the CLI's `--out-dir`).
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub dir: Option<String>,
    pub trajectory: Option<String>,
    pub impacts: Option<String>,
    pub reduced: Option<String>,
    pub reconstructed: Option<String>,
    pub report: Option<String>,
}

/// A parsed scenario file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub params: ScenarioParams,
    pub initial: InitialState,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub outputs: OutputPaths,
}

/// A built scenario: hybrid system, optional cyclic structure, initial
/// state, and integrator settings.
#[derive(Clone)]
pub struct ScenarioSystem {
    pub def: HybridSystemDef,
    pub cyclic: Option<CyclicSpec>,
    pub initial: StateTQ,
    pub integrator: IntegratorConfig,
}

impl ScenarioConfig {
    /// Checks every invariant, naming the violated one.
    pub fn validate(&self) -> Result<(), Error> {
        let p = &self.params;
        if !(p.m.is_finite() && p.m > 0.0) {
            return Err(Error::Validation(format!(
                "m must be positive, got {}",
                p.m
            )));
        }
        if !(p.c.is_finite() && p.c >= 0.0) {
            return Err(Error::Validation(format!(
                "c must be nonnegative, got {}",
                p.c
            )));
        }
        if !(p.e.is_finite() && (0.0..=1.0).contains(&p.e)) {
            return Err(Error::Validation(format!(
                "e must lie in [0, 1], got {}",
                p.e
            )));
        }
        if let Some(d) = p.drive {
            if self.kind != ScenarioKind::Bouncer1d {
                return Err(Error::Validation("drive only applies to bouncer_1d".into()));
            }
            if !d.is_finite() {
                return Err(Error::Validation(format!("drive must be finite, got {d}")));
            }
        }
        let n = self.kind.dim();
        if self.initial.q.len() != n || self.initial.v.len() != n {
            return Err(Error::Validation(format!(
                "{} needs {} coordinates, got q: {}, v: {}",
                self.kind.name(),
                n,
                self.initial.q.len(),
                self.initial.v.len()
            )));
        }
        if !self
            .initial
            .q
            .iter()
            .chain(self.initial.v.iter())
            .all(|x| x.is_finite())
        {
            return Err(Error::Validation("initial state must be finite".into()));
        }
        let h = match self.kind {
            ScenarioKind::BilliardCartesian => {
                1.0 - self.initial.q[0].powi(2) - self.initial.q[1].powi(2)
            }
            ScenarioKind::BilliardPolar => 1.0 - self.initial.q[0].powi(2),
            ScenarioKind::Bouncer1d => self.initial.q[0],
        };
        if h < 0.0 {
            return Err(Error::Validation(format!(
                "initial state lies outside the domain (h = {h})"
            )));
        }
        if self.kind == ScenarioKind::BilliardPolar && self.initial.q[0] <= POLAR_MIN_RADIUS {
            return Err(Error::Validation(format!(
                "initial radius {} is inside the chart exclusion r <= {}",
                self.initial.q[0], POLAR_MIN_RADIUS
            )));
        }
        self.integrator.validate()
    }

    /// Validates and instantiates the hybrid system.
    pub fn build(&self) -> Result<ScenarioSystem, Error> {
        self.validate()?;
        let p = &self.params;
        let (def, cyclic) = match self.kind {
            ScenarioKind::BilliardCartesian => (billiard_cartesian(p.m, p.c, p.e), None),
            ScenarioKind::BilliardPolar => {
                let (def, cyc) = billiard_polar(p.m, p.c, p.e);
                (def, Some(cyc))
            }
            ScenarioKind::Bouncer1d => (bouncer_1d(p.m, p.e, p.drive.unwrap_or(0.0)), None),
        };
        Ok(ScenarioSystem {
            def,
            cyclic,
            initial: StateTQ::from_slices(&self.initial.q, &self.initial.v),
            integrator: self.integrator.clone(),
        })
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, Error> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ScenarioConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}
