//! Constraint maps `Phi: TQ -> R^m`, their zero set `M`, and the coupling
//! between the control fields and the constraint.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::mechanics::{MechanicalSystem, Snapshot};
use crate::numdiff;
use crate::state::State;

/// States with `|Phi|_inf` at or below this are treated as lying on `M`.
pub const ON_MANIFOLD_TOLERANCE: f64 = 1e-9;

/// Largest accepted 1-norm condition number of the coupling matrix.
pub const CONDITION_LIMIT: f64 = 1e8;

pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type PartialsFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// `m` scalar constraints `phi^b(q, v)`.
///
/// Jacobians default to central differences; implementors with closed forms
/// should override them.
pub trait ConstraintSet: Send + Sync {
    fn count(&self) -> usize;

    fn value(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;

    /// `m x n` matrix `d phi^b / d q^i`.
    fn jac_q(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        numdiff::jacobian(|x| self.value(x, v), q)
    }

    /// `m x n` matrix `d phi^b / d v^i`. Its rows annihilate `S(v_q)`.
    fn jac_v(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        numdiff::jacobian(|x| self.value(q, x), v)
    }
}

impl<C: ConstraintSet + ?Sized> ConstraintSet for Arc<C> {
    fn count(&self) -> usize {
        (**self).count()
    }
    fn value(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (**self).value(q, v)
    }
    fn jac_q(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        (**self).jac_q(q, v)
    }
    fn jac_v(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        (**self).jac_v(q, v)
    }
}

pub fn evaluate(c: &dyn ConstraintSet, s: &State) -> Result<DVector<f64>> {
    check_dim("configuration", s.v.len(), s.q.len())?;
    let phi = c.value(&s.q, &s.v);
    check_dim("constraint values", c.count(), phi.len())?;
    Ok(phi)
}

/// Finite-difference Jacobians `(d/dq, d/dv)` regardless of any analytic override.
pub fn fd_jacobians(c: &dyn ConstraintSet, s: &State) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        numdiff::jacobian(|x| c.value(x, &s.v), &s.q),
        numdiff::jacobian(|x| c.value(&s.q, x), &s.v),
    )
}

/// Fails unless the velocity Jacobian has full row rank at `s`.
pub fn check_regular(c: &dyn ConstraintSet, s: &State) -> Result<DMatrix<f64>> {
    let a = c.jac_v(&s.q, &s.v);
    check_dim("constraint Jacobian rows", c.count(), a.nrows())?;
    check_dim("constraint Jacobian columns", s.q.len(), a.ncols())?;
    let rank = full_rank(&a);
    if rank < c.count() {
        return Err(Error::RankDeficient {
            what: "velocity Jacobian",
            rank,
            expected: c.count(),
        });
    }
    Ok(a)
}

fn full_rank(a: &DMatrix<f64>) -> usize {
    let scale = a.amax();
    if scale == 0.0 {
        0
    } else {
        a.rank(1e-10 * scale)
    }
}

/// `C^ab = (Y^a)^V(phi^b)`, its inverse, and a 1-norm condition estimate.
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    /// Entry `(a, b)` is `d phi^b (Y^a)`.
    pub forward: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub condition: f64,
}

impl CouplingMatrix {
    /// Solves `sum_a C^ab u_a = rhs_b`, the contraction that appears in
    /// `Gamma(phi^b) = G(phi^b) + C^ab u_a`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.inverse.transpose() * rhs
    }
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max)
}

pub(crate) fn coupling_with(
    c: &dyn ConstraintSet,
    fields: &DMatrix<f64>,
    s: &State,
) -> Result<CouplingMatrix> {
    let a = c.jac_v(&s.q, &s.v);
    check_dim("constraint Jacobian rows", c.count(), a.nrows())?;
    check_dim("control inputs vs constraints", c.count(), fields.ncols())?;
    let forward = (&a * fields).transpose();
    let violation = |condition: f64| Error::Transversality {
        t: s.t,
        condition,
        state: s.to_vec(),
    };
    let inverse = forward
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| violation(f64::INFINITY))?;
    let condition = norm1(&forward) * norm1(&inverse);
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(violation(condition));
    }
    Ok(CouplingMatrix {
        forward,
        inverse,
        condition,
    })
}

pub fn coupling_matrix(
    c: &dyn ConstraintSet,
    sys: &dyn MechanicalSystem,
    s: &State,
) -> Result<CouplingMatrix> {
    let snap = Snapshot::new(sys, s)?;
    coupling_with(c, &snap.fields, s)
}

pub(crate) fn drift_derivative_with(
    c: &dyn ConstraintSet,
    s: &State,
    drift: &DVector<f64>,
) -> DVector<f64> {
    c.jac_q(&s.q, &s.v) * &s.v + c.jac_v(&s.q, &s.v) * drift
}

/// `G(phi^b)`: derivative of each constraint along the drift vector field.
pub fn drift_derivative(
    c: &dyn ConstraintSet,
    sys: &dyn MechanicalSystem,
    s: &State,
) -> Result<DVector<f64>> {
    let drift = crate::mechanics::drift_acceleration(sys, s)?;
    Ok(drift_derivative_with(c, s, &drift))
}

/// Affine constraint data `Phi(q, v) = S(q) v + Z(q)` with `Z = -S X`.
#[derive(Clone)]
pub struct AffineConstraintData {
    /// `m x n` matrix whose rows are the 1-forms defining the distribution.
    pub s: MatrixFn,
    /// Vector field the affine space is modeled around.
    pub x: VectorFn,
    /// Optional analytic `d S / d q_k`.
    pub s_partials: Option<PartialsFn>,
    /// Optional analytic `n x n` Jacobian of `X`.
    pub x_jacobian: Option<MatrixFn>,
}

impl AffineConstraintData {
    pub fn new(s: MatrixFn, x: VectorFn) -> Self {
        Self {
            s,
            x,
            s_partials: None,
            x_jacobian: None,
        }
    }

    pub fn with_partials(mut self, s_partials: PartialsFn, x_jacobian: MatrixFn) -> Self {
        self.s_partials = Some(s_partials);
        self.x_jacobian = Some(x_jacobian);
        self
    }
}

#[derive(Clone)]
pub struct AffineConstraint {
    data: AffineConstraintData,
    m: usize,
}

impl AffineConstraint {
    pub fn data(&self) -> &AffineConstraintData {
        &self.data
    }
}

/// Builds `phi = S(q) v - S(q) X(q)`, checking `rank S = m` at `probe`.
pub fn from_affine(data: AffineConstraintData, probe: &DVector<f64>) -> Result<AffineConstraint> {
    let s = (data.s)(probe);
    check_dim("affine distribution columns", probe.len(), s.ncols())?;
    check_dim("affine vector field", probe.len(), (data.x)(probe).len())?;
    let rank = full_rank(&s);
    if rank < s.nrows() {
        return Err(Error::RankDeficient {
            what: "affine distribution S(q)",
            rank,
            expected: s.nrows(),
        });
    }
    Ok(AffineConstraint {
        m: s.nrows(),
        data,
    })
}

impl ConstraintSet for AffineConstraint {
    fn count(&self) -> usize {
        self.m
    }

    fn value(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (self.data.s)(q) * (v - (self.data.x)(q))
    }

    fn jac_q(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let x = (self.data.x)(q);
        let s = (self.data.s)(q);
        let ds = match &self.data.s_partials {
            Some(f) => f(q),
            None => numdiff::matrix_partials(|p| (self.data.s)(p), q),
        };
        let dx = match &self.data.x_jacobian {
            Some(f) => f(q),
            None => numdiff::jacobian(|p| (self.data.x)(p), q),
        };
        let slip = v - x;
        let mut out = -(&s * dx);
        for (k, dsk) in ds.iter().enumerate() {
            let col = dsk * &slip;
            let mut target = out.column_mut(k);
            target += col;
        }
        out
    }

    fn jac_v(&self, q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        (self.data.s)(q)
    }
}

/// Position-level constraint `phi_h(q)` with optional analytic Jacobian.
#[derive(Clone)]
pub struct HolonomicConstraint {
    value: VectorFn,
    jacobian: Option<MatrixFn>,
    m: usize,
}

impl HolonomicConstraint {
    pub fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match &self.jacobian {
            Some(f) => f(q),
            None => numdiff::jacobian(|x| (self.value)(x), q),
        }
    }
}

impl ConstraintSet for HolonomicConstraint {
    fn count(&self) -> usize {
        self.m
    }
    fn value(&self, q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        (self.value)(q)
    }
    fn jac_q(&self, q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        self.jacobian(q)
    }
    fn jac_v(&self, q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.m, q.len())
    }
}

/// Velocity-level derivative `d/dt phi_h = (d phi_h / dq) v`.
#[derive(Clone)]
pub struct HolonomicRate {
    inner: HolonomicConstraint,
}

impl ConstraintSet for HolonomicRate {
    fn count(&self) -> usize {
        self.inner.m
    }
    fn value(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.inner.jacobian(q) * v
    }
    fn jac_q(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        if self.inner.jacobian.is_some() {
            numdiff::jacobian(|x| self.inner.jacobian(x) * v, q)
        } else {
            numdiff::hessian_contraction(|x| (self.inner.value)(x), q, v)
        }
    }
    fn jac_v(&self, q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        self.inner.jacobian(q)
    }
}

/// Both levels of a holonomic constraint.
#[derive(Clone)]
pub struct HolonomicPair {
    pub position: HolonomicConstraint,
    pub rate: HolonomicRate,
}

/// Builds `(phi_h, d/dt phi_h)`, checking that `d phi_h / dq` has full rank at `probe`.
pub fn from_holonomic(
    value: VectorFn,
    jacobian: Option<MatrixFn>,
    probe: &DVector<f64>,
) -> Result<HolonomicPair> {
    let m = value(probe).len();
    let inner = HolonomicConstraint {
        value,
        jacobian,
        m,
    };
    let j = inner.jacobian(probe);
    check_dim("holonomic Jacobian columns", probe.len(), j.ncols())?;
    let rank = full_rank(&j);
    if rank < m {
        return Err(Error::RankDeficient {
            what: "holonomic Jacobian",
            rank,
            expected: m,
        });
    }
    Ok(HolonomicPair {
        rate: HolonomicRate {
            inner: inner.clone(),
        },
        position: inner,
    })
}

/// `-Phi`: same zero set, opposite sign.
#[derive(Clone)]
pub struct Negated<C>(pub C);

impl<C: ConstraintSet> ConstraintSet for Negated<C> {
    fn count(&self) -> usize {
        self.0.count()
    }
    fn value(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        -self.0.value(q, v)
    }
    fn jac_q(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        -self.0.jac_q(q, v)
    }
    fn jac_v(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        -self.0.jac_v(q, v)
    }
}

const PROJECTION_TOLERANCE: f64 = 1e-12;
const PROJECTION_ITERATIONS: usize = 50;

/// Damped Newton on `Phi(q, .)`; `direction(v, phi)` returns a correction `d`
/// with `jac_v d = phi` to first order.
fn damped_newton<D>(
    c: &dyn ConstraintSet,
    q: &DVector<f64>,
    seed: &DVector<f64>,
    mut direction: D,
) -> Result<DVector<f64>>
where
    D: FnMut(&DVector<f64>, &DVector<f64>) -> Option<DVector<f64>>,
{
    check_dim("velocity seed", q.len(), seed.len())?;
    let mut v = seed.clone();
    let mut phi = c.value(q, &v);
    let mut residual = phi.amax();
    for _ in 0..PROJECTION_ITERATIONS {
        if residual <= PROJECTION_TOLERANCE {
            return Ok(v);
        }
        let d = direction(&v, &phi).ok_or(Error::ProjectionFailed { residual })?;
        let mut step = 1.0;
        loop {
            let candidate = &v - &d * step;
            let candidate_phi = c.value(q, &candidate);
            let candidate_residual = candidate_phi.amax();
            if candidate_residual < residual || step < 1e-9 {
                v = candidate;
                phi = candidate_phi;
                residual = candidate_residual;
                break;
            }
            step *= 0.5;
        }
    }
    if residual <= PROJECTION_TOLERANCE {
        Ok(v)
    } else {
        Err(Error::ProjectionFailed { residual })
    }
}

/// Moves a velocity seed onto `M` at fixed `q` by damped Newton on `Phi(q, .)`,
/// taking minimum-norm corrections.
pub fn project_onto_manifold(
    c: &dyn ConstraintSet,
    q: &DVector<f64>,
    seed: &DVector<f64>,
) -> Result<DVector<f64>> {
    damped_newton(c, q, seed, |v, phi| {
        let a = c.jac_v(q, v);
        let lambda = (&a * a.transpose()).lu().solve(phi)?;
        Some(a.transpose() * lambda)
    })
}

/// Like [`project_onto_manifold`], but only velocity components that some
/// control field acts on are changed; unactuated components keep their seed
/// values.
pub fn project_actuated(
    sys: &dyn MechanicalSystem,
    c: &dyn ConstraintSet,
    s: &State,
) -> Result<DVector<f64>> {
    s.check_dof(sys.dof())?;
    let fields = Snapshot::new(sys, s)?.fields;
    let actuated: Vec<bool> = fields.row_iter().map(|r| r.amax() > 0.0).collect();
    damped_newton(c, &s.q, &s.v, |v, phi| {
        let mut a = c.jac_v(&s.q, v);
        for (k, on) in actuated.iter().enumerate() {
            if !on {
                a.column_mut(k).fill(0.0);
            }
        }
        let lambda = (&a * a.transpose()).lu().solve(phi)?;
        Some(a.transpose() * lambda)
    })
}
