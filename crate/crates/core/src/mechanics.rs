//! Forced Lagrangian systems on `Q = R^n` and their derivative data.
//!
//! The central object is [`ForcedLagrangianSystem`]: a Lagrangian evaluator
//! `L(q, v)`, an external force covector `F(q, v)`, and optionally analytic
//! derivative evaluators. Everything downstream (accelerations, Legendre
//! transforms, reduction) consumes the [`DerivativeBundle`] assembled here,
//! so analytic and finite-difference systems share one code path.
//!
//! Conventions:
//! * `(dv_dq)[i, j] = d^2 L / (dv_i dq_j)`.
//! * The forced Euler-Lagrange field solves
//!   `M(q, v) a = F + dL/dq - (d^2 L / dv dq) v` with `M = d^2 L / dv dv`
//!   symmetrized before factorization.
//! * Evaluators signal an invalid chart point by returning NaN; operations
//!   convert that into [`Error::NonFinite`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::tolerances::{DEFAULT_FD_STEP, MASS_SINGULARITY_REL_TOL, SECOND_DIFF_STEP};

/// A tangent-bundle point: configuration `q` and velocity `v`, same length.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTQ {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl StateTQ {
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Self {
        assert_eq!(q.len(), v.len(), "q and v must have equal length");
        StateTQ { q, v }
    }

    pub fn from_slices(q: &[f64], v: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(v))
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|x| x.is_finite()) && self.v.iter().all(|x| x.is_finite())
    }
}

pub type ScalarEval = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type VectorEval = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixEval = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Closed-form derivative evaluators, supplied as a complete set.
#[derive(Clone)]
pub struct AnalyticDerivatives {
    /// `dL/dq`.
    pub dl_dq: VectorEval,
    /// `dL/dv` (the fiber derivative / conjugate momentum).
    pub dl_dv: VectorEval,
    /// `d^2 L / dv dv`.
    pub mass: MatrixEval,
    /// `d^2 L / dv dq`, indexed `[i, j] = d^2 L / (dv_i dq_j)`.
    pub dv_dq: MatrixEval,
}

/// First and second derivatives of `L` at one state.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub dl_dq: DVector<f64>,
    pub dl_dv: DVector<f64>,
    /// Symmetrized mass matrix `(M + M^T) / 2`.
    pub mass: DMatrix<f64>,
    /// `[i, j] = d^2 L / (dv_i dq_j)`.
    pub dv_dq: DMatrix<f64>,
}

/// A forced Lagrangian system: `L`, `F`, and optional analytic derivatives.
#[derive(Clone)]
pub struct ForcedLagrangianSystem {
    dim: usize,
    lagrangian: ScalarEval,
    force: VectorEval,
    analytic: Option<AnalyticDerivatives>,
    fd_step: f64,
}

impl ForcedLagrangianSystem {
    pub fn new<L, F>(dim: usize, lagrangian: L, force: F) -> Self
    where
        L: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        ForcedLagrangianSystem {
            dim,
            lagrangian: Arc::new(lagrangian),
            force: Arc::new(force),
            analytic: None,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn with_analytic_derivatives(mut self, analytic: AnalyticDerivatives) -> Self {
        self.analytic = Some(analytic);
        self
    }

    pub fn with_fd_step(mut self, fd_step: f64) -> Self {
        assert!(fd_step > 0.0 && fd_step.is_finite());
        self.fd_step = fd_step;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.analytic.is_some()
    }

    fn check_dims(&self, s: &StateTQ) -> Result<(), Error> {
        if s.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: s.dim(),
            });
        }
        Ok(())
    }

    /// `L(q, v)`. NaN marks an invalid chart point.
    pub fn lagrangian(&self, s: &StateTQ) -> f64 {
        (self.lagrangian)(&s.q, &s.v)
    }

    pub fn lagrangian_qv(&self, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (self.lagrangian)(q, v)
    }

    /// External force covector `F(q, v)`.
    pub fn force(&self, s: &StateTQ) -> DVector<f64> {
        (self.force)(&s.q, &s.v)
    }

    /// Assembles all derivatives of `L` at `s`, from the analytic
    /// evaluators when present, otherwise by central differences
    /// (first-order step `fd_step`, second-order step
    /// [`SECOND_DIFF_STEP`], both scaled per component).
    pub fn derivatives(&self, s: &StateTQ) -> Result<DerivativeBundle, Error> {
        self.check_dims(s)?;
        let bundle = match &self.analytic {
            Some(a) => DerivativeBundle {
                dl_dq: (a.dl_dq)(&s.q, &s.v),
                dl_dv: (a.dl_dv)(&s.q, &s.v),
                mass: symmetrize((a.mass)(&s.q, &s.v)),
                dv_dq: (a.dv_dq)(&s.q, &s.v),
            },
            None => self.fd_bundle(s),
        };
        let finite = bundle.dl_dq.iter().all(|x| x.is_finite())
            && bundle.dl_dv.iter().all(|x| x.is_finite())
            && bundle.mass.iter().all(|x| x.is_finite())
            && bundle.dv_dq.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                context: "derivative bundle",
            });
        }
        Ok(bundle)
    }

    /// Symmetrized `M(q, v) = d^2 L / dv dv`.
    pub fn mass_matrix(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>, Error> {
        let s = StateTQ::new(q.clone(), v.clone());
        Ok(self.derivatives(&s)?.mass)
    }

    /// The conjugate momentum `dL/dv` alone (cheaper than a full bundle on
    /// the finite-difference path).
    pub fn fiber_derivative(&self, s: &StateTQ) -> Result<DVector<f64>, Error> {
        self.check_dims(s)?;
        let p = match &self.analytic {
            Some(a) => (a.dl_dv)(&s.q, &s.v),
            None => {
                let f = |q: &DVector<f64>, v: &DVector<f64>| (self.lagrangian)(q, v);
                central_diff(&f, &s.q, &s.v, Slot::V, self.fd_step)
            }
        };
        if p.iter().all(|x| x.is_finite()) {
            Ok(p)
        } else {
            Err(Error::NonFinite {
                context: "fiber derivative",
            })
        }
    }

    /// Acceleration of the forced Euler-Lagrange field:
    /// solves `M a = F + dL/dq - (d^2 L / dv dq) v`.
    pub fn forced_acceleration(&self, s: &StateTQ) -> Result<DVector<f64>, Error> {
        let b = self.derivatives(s)?;
        let f = self.force(s);
        if f.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: f.len(),
            });
        }
        if !f.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { context: "force" });
        }
        let rhs = f + &b.dl_dq - &b.dv_dq * &s.v;
        solve_spd(&b.mass, &rhs)
    }

    /// Generalized energy `E = <dL/dv, v> - L`.
    pub fn energy(&self, s: &StateTQ) -> Result<f64, Error> {
        let p = self.fiber_derivative(s)?;
        let l = self.lagrangian(s);
        if !l.is_finite() {
            return Err(Error::NonFinite {
                context: "lagrangian",
            });
        }
        Ok(p.dot(&s.v) - l)
    }

    fn fd_bundle(&self, s: &StateTQ) -> DerivativeBundle {
        let f = |q: &DVector<f64>, v: &DVector<f64>| (self.lagrangian)(q, v);
        let dl_dq = central_diff(&f, &s.q, &s.v, Slot::Q, self.fd_step);
        let dl_dv = central_diff(&f, &s.q, &s.v, Slot::V, self.fd_step);
        let mass = symmetrize(second_diff_vv(&f, &s.q, &s.v));
        let dv_dq = mixed_diff_vq(&f, &s.q, &s.v);
        DerivativeBundle {
            dl_dq,
            dl_dv,
            mass,
            dv_dq,
        }
    }
}

/// Verifies analytic evaluators against central differences on the given
/// states. Returns the worst norm-relative deviation over all bundle items.
pub fn derivative_consistency(
    sys: &ForcedLagrangianSystem,
    states: &[StateTQ],
) -> Result<f64, Error> {
    let analytic = sys.analytic.clone().ok_or(Error::Validation(
        "system has no analytic derivatives".into(),
    ))?;
    let fd_sys = ForcedLagrangianSystem {
        dim: sys.dim,
        lagrangian: sys.lagrangian.clone(),
        force: sys.force.clone(),
        analytic: None,
        fd_step: sys.fd_step,
    };
    let mut worst: f64 = 0.0;
    for s in states {
        let got = StateTQ::new(s.q.clone(), s.v.clone());
        let a = DerivativeBundle {
            dl_dq: (analytic.dl_dq)(&got.q, &got.v),
            dl_dv: (analytic.dl_dv)(&got.q, &got.v),
            mass: symmetrize((analytic.mass)(&got.q, &got.v)),
            dv_dq: (analytic.dv_dq)(&got.q, &got.v),
        };
        let n = fd_sys.derivatives(&got)?;
        worst = worst.max(rel_vec(&a.dl_dq, &n.dl_dq));
        worst = worst.max(rel_vec(&a.dl_dv, &n.dl_dv));
        worst = worst.max(rel_mat(&a.mass, &n.mass));
        worst = worst.max(rel_mat(&a.dv_dq, &n.dv_dq));
    }
    Ok(worst)
}

fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / 1f64.max(a.amax())
}

fn rel_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / 1f64.max(a.amax())
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Solves `M x = rhs` by LU with partial pivoting, rejecting matrices whose
/// determinant is negligible relative to their norm.
pub(crate) fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, Error> {
    let n = m.nrows();
    let norm = m.norm();
    let threshold = MASS_SINGULARITY_REL_TOL * norm.powi(n as i32);
    let lu = m.clone().lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() <= threshold {
        return Err(Error::SingularMass { det, threshold });
    }
    lu.solve(rhs).ok_or(Error::SingularMass { det, threshold })
}

enum Slot {
    Q,
    V,
}

/// Representable step near `x` of nominal size `rel * max(1, |x|)`.
fn step_for(x: f64, rel: f64) -> f64 {
    let h = rel * 1f64.max(x.abs());
    let hi = x + h;
    hi - x
}

fn central_diff<F>(f: &F, q: &DVector<f64>, v: &DVector<f64>, slot: Slot, rel: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    let base = match slot {
        Slot::Q => q,
        Slot::V => v,
    };
    let n = base.len();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let h = step_for(base[i], rel);
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += h;
        minus[i] -= h;
        let (fp, fm) = match slot {
            Slot::Q => (f(&plus, v), f(&minus, v)),
            Slot::V => (f(q, &plus), f(q, &minus)),
        };
        out[i] = (fp - fm) / (2.0 * h);
    }
    out
}

fn second_diff_vv<F>(f: &F, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    let n = v.len();
    let mut m = DMatrix::zeros(n, n);
    let f0 = f(q, v);
    for i in 0..n {
        let hi = step_for(v[i], SECOND_DIFF_STEP);
        let mut vp = v.clone();
        let mut vm = v.clone();
        vp[i] += hi;
        vm[i] -= hi;
        m[(i, i)] = (f(q, &vp) - 2.0 * f0 + f(q, &vm)) / (hi * hi);
        for j in (i + 1)..n {
            let hj = step_for(v[j], SECOND_DIFF_STEP);
            let mut vpp = v.clone();
            let mut vpm = v.clone();
            let mut vmp = v.clone();
            let mut vmm = v.clone();
            vpp[i] += hi;
            vpp[j] += hj;
            vpm[i] += hi;
            vpm[j] -= hj;
            vmp[i] -= hi;
            vmp[j] += hj;
            vmm[i] -= hi;
            vmm[j] -= hj;
            let mixed = (f(q, &vpp) - f(q, &vpm) - f(q, &vmp) + f(q, &vmm)) / (4.0 * hi * hj);
            m[(i, j)] = mixed;
            m[(j, i)] = mixed;
        }
    }
    m
}

fn mixed_diff_vq<F>(f: &F, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    let n = v.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let hv = step_for(v[i], SECOND_DIFF_STEP);
        for j in 0..n {
            let hq = step_for(q[j], SECOND_DIFF_STEP);
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[i] += hv;
            vm[i] -= hv;
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += hq;
            qm[j] -= hq;
            m[(i, j)] = (f(&qp, &vp) - f(&qm, &vp) - f(&qp, &vm) + f(&qm, &vm)) / (4.0 * hv * hq);
        }
    }
    m
}
