//! Reference solver for the physically constrained (Chetaev) dynamics.
//!
//! On `M` the multiplier solves the reduced system
//!
//! ```text
//! (A G^{-1} A^T) lambda = -(J_q v + A a_drift),   A = d Phi / d v,
//! ```
//!
//! and the constrained acceleration is `a = a_drift + G^{-1} A^T lambda`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::constraint::{
    check_regular, drift_derivative_with, evaluate, ConstraintSet, ON_MANIFOLD_TOLERANCE,
};
use crate::control::ControlSignal;
use crate::error::{Error, Result};
use crate::integrator::{check_state, step_count, Stepper, TrajectoryRecord};
use crate::mechanics::{christoffel, energy, potential_differential, MechanicalSystem, Snapshot};
use crate::state::State;

/// Constraint drift beyond this aborts a constrained run.
pub const DRIFT_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ChetaevSolution {
    pub trajectory: TrajectoryRecord,
    pub multipliers: Vec<DVector<f64>>,
}

fn check_on_manifold(c: &dyn ConstraintSet, s: &State) -> Result<()> {
    let residual = evaluate(c, s)?.amax();
    if residual > ON_MANIFOLD_TOLERANCE {
        Err(Error::OffManifold {
            residual,
            tolerance: ON_MANIFOLD_TOLERANCE,
        })
    } else {
        Ok(())
    }
}

fn solve_multipliers(
    snap: &Snapshot,
    c: &dyn ConstraintSet,
    s: &State,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let a = c.jac_v(&s.q, &s.v);
    let raised = snap.factor.sharp_columns(&a.transpose());
    let reduced = &a * &raised;
    let rhs = -drift_derivative_with(c, s, &snap.drift);
    let degenerate = || Error::ChetaevDegenerate { t: s.t };
    let lu = reduced.clone().lu();
    let inverse = lu.try_inverse().ok_or_else(degenerate)?;
    let scale = reduced.amax() * inverse.amax();
    if !scale.is_finite() || scale > 1e12 {
        return Err(degenerate());
    }
    let lambda = &inverse * rhs;
    let accel = &snap.drift + raised * &lambda;
    Ok((accel, lambda))
}

/// Constrained acceleration and multipliers at an on-manifold state.
pub fn chetaev_acceleration(
    sys: &dyn MechanicalSystem,
    c: &dyn ConstraintSet,
    s: &State,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let snap = Snapshot::new(sys, s)?;
    check_on_manifold(c, s)?;
    solve_multipliers(&snap, c, s)
}

/// RK4 on the Chetaev vector field, recording multipliers at every sample.
pub fn simulate_constrained(
    sys: &dyn MechanicalSystem,
    c: &dyn ConstraintSet,
    s0: &State,
    dt: f64,
    t_final: f64,
) -> Result<ChetaevSolution> {
    let steps = step_count(dt, t_final)?;
    s0.check_dof(sys.dof())?;
    check_state(s0)?;
    check_on_manifold(c, s0)?;
    let t0 = s0.t;
    let zero_control = DVector::zeros(sys.inputs());
    let mut trajectory = TrajectoryRecord {
        dt,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        constraint_values: Vec::with_capacity(steps + 1),
        energies: Vec::with_capacity(steps + 1),
    };
    let mut multipliers = Vec::with_capacity(steps + 1);
    let mut field = |s: &State| -> Result<DVector<f64>> {
        let snap = Snapshot::new(sys, s)?;
        Ok(solve_multipliers(&snap, c, s)?.0)
    };
    let mut s = s0.clone();
    let mut stepper = Stepper::new(s.dof());
    for i in 0..=steps {
        let phi = evaluate(c, &s)?;
        let residual = phi.amax();
        if residual > DRIFT_LIMIT {
            return Err(Error::ConstraintDrift {
                t: s.t,
                residual,
                limit: DRIFT_LIMIT,
            });
        }
        let snap = Snapshot::new(sys, &s)?;
        let (a1, lambda) = solve_multipliers(&snap, c, &s)?;
        trajectory.times.push(s.t);
        trajectory.constraint_values.push(phi);
        trajectory.energies.push(energy(sys, &s));
        trajectory.controls.push(ControlSignal {
            u: zero_control.clone(),
            t: s.t,
        });
        multipliers.push(lambda);
        if i < steps {
            let next = stepper.step(&mut field, &s, a1, dt, t0 + (i + 1) as f64 * dt)?;
            trajectory.states.push(std::mem::replace(&mut s, next));
        } else {
            trajectory.states.push(s.clone());
        }
    }
    Ok(ChetaevSolution {
        trajectory,
        multipliers,
    })
}

/// Basis of `S(v_q) = ker(d Phi / d v)`, orthonormal with respect to the metric.
pub fn velocity_kernel_basis(
    sys: &dyn MechanicalSystem,
    c: &dyn ConstraintSet,
    s: &State,
) -> Result<Vec<DVector<f64>>> {
    let n = sys.dof();
    let a = check_regular(c, s)?;
    let gram = a.transpose() * &a;
    let eigen = SymmetricEigen::new(gram);
    let top = eigen.eigenvalues.amax();
    let threshold = 1e-10 * top.max(f64::MIN_POSITIVE);
    let metric = sys.metric(&s.q);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for (k, lambda) in eigen.eigenvalues.iter().enumerate() {
        if *lambda > threshold {
            continue;
        }
        let mut w: DVector<f64> = eigen.eigenvectors.column(k).into_owned();
        for b in &basis {
            let proj = b.dot(&(&metric * &w));
            w.axpy(-proj, b, 1.0);
        }
        let norm = w.dot(&(&metric * &w)).sqrt();
        basis.push(w / norm);
    }
    if basis.len() != n - c.count() {
        return Err(Error::RankDeficient {
            what: "velocity-dependent distribution",
            rank: n - basis.len(),
            expected: c.count(),
        });
    }
    Ok(basis)
}

/// `max |G(r, X)|` over a metric-orthonormal basis `X` of `S(v_q)`, where
/// `r = nabla_v v + grad V - sharp(F0)` is built from the Chetaev acceleration.
/// Vanishes exactly when the Chetaev acceleration satisfies the Riemannian form.
pub fn verify_riemannian_form(
    sys: &dyn MechanicalSystem,
    c: &dyn ConstraintSet,
    s: &State,
) -> Result<f64> {
    let (accel, _) = chetaev_acceleration(sys, c, s)?;
    let basis = velocity_kernel_basis(sys, c, s)?;
    let snap = Snapshot::new(sys, s)?;
    let gamma = christoffel(sys, &s.q)?;
    let covariant = accel + gamma.contract(&s.v);
    let forcing = potential_differential(sys, &s.q) - sys.external_force(&s.q, &s.v);
    let r = covariant + snap.factor.sharp(&forcing);
    let lowered: DVector<f64> = snap.factor.metric() * r;
    Ok(basis
        .iter()
        .map(|x| lowered.dot(x).abs())
        .fold(0.0, f64::max))
}

/// Constraint force `A^T lambda` as a covector.
pub fn constraint_force(c: &dyn ConstraintSet, s: &State, lambda: &DVector<f64>) -> DVector<f64> {
    let a: DMatrix<f64> = c.jac_v(&s.q, &s.v);
    a.transpose() * lambda
}
