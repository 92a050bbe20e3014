//! Feedback laws that render a constraint manifold attractive and invariant.
//!
//! The stabilizing law solves `C^ab u_a = -k^b phi^b - G(phi^b)`, so that along
//! closed-loop trajectories every constraint obeys `d/dt phi^b = -k^b phi^b`.

use nalgebra::DVector;

use crate::constraint::{
    coupling_with, drift_derivative_with, evaluate, ConstraintSet, HolonomicPair,
    ON_MANIFOLD_TOLERANCE,
};
use crate::error::{check_dim, Error, Result};
use crate::mechanics::{MechanicalSystem, Snapshot};
use crate::state::State;

/// Diagonal of a positive definite gain matrix `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    diag: Vec<f64>,
}

impl GainMatrix {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::invalid("gains", "empty gain vector"));
        }
        if let Some(bad) = diag.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::invalid("gains", format!("gain {bad} is not strictly positive")));
        }
        Ok(Self { diag })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            diag: vec![1.0; m],
        }
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn apply(&self, phi: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(phi.len(), phi.iter().zip(&self.diag).map(|(p, k)| p * k))
    }
}

/// Position and rate gains for the holonomic law.
#[derive(Debug, Clone, PartialEq)]
pub struct HolonomicGains {
    pub position: GainMatrix,
    pub rate: GainMatrix,
}

impl HolonomicGains {
    /// `K1 = 1, K2 = 2`: critically damped with unit rate.
    pub fn critically_damped(m: usize) -> Self {
        Self::with_rate(m, 1.0)
    }

    /// `K1 = k^2, K2 = 2k`.
    pub fn with_rate(m: usize, k: f64) -> Self {
        Self {
            position: GainMatrix {
                diag: vec![k * k; m],
            },
            rate: GainMatrix {
                diag: vec![2.0 * k; m],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    pub u: DVector<f64>,
    pub t: f64,
}

fn signal(u: DVector<f64>, t: f64) -> Result<ControlSignal> {
    if u.iter().all(|x| x.is_finite()) {
        Ok(ControlSignal { u, t })
    } else {
        Err(Error::Blowup { t })
    }
}

/// Stabilizing control evaluated on an already computed mechanics snapshot.
pub(crate) fn stabilizing_with(
    snap: &Snapshot,
    c: &dyn ConstraintSet,
    gains: &GainMatrix,
    s: &State,
) -> Result<DVector<f64>> {
    let phi = evaluate(c, s)?;
    check_dim("gains", c.count(), gains.len())?;
    let coupling = coupling_with(c, &snap.fields, s)?;
    let rhs = -gains.apply(&phi) - drift_derivative_with(c, s, &snap.drift);
    Ok(coupling.solve(&rhs))
}

/// `u* = C_ab (-K phi - G(phi))`.
pub fn stabilizing_control(
    sys: &dyn MechanicalSystem,
    c: &dyn ConstraintSet,
    gains: &GainMatrix,
    s: &State,
) -> Result<ControlSignal> {
    let snap = Snapshot::new(sys, s)?;
    signal(stabilizing_with(&snap, c, gains, s)?, s.t)
}

/// The unique law keeping `M` invariant: `u*` without its `-K phi` term.
pub fn invariance_control(
    sys: &dyn MechanicalSystem,
    c: &dyn ConstraintSet,
    s: &State,
) -> Result<ControlSignal> {
    let phi = evaluate(c, s)?;
    let residual = phi.amax();
    if residual > ON_MANIFOLD_TOLERANCE {
        return Err(Error::OffManifold {
            residual,
            tolerance: ON_MANIFOLD_TOLERANCE,
        });
    }
    let snap = Snapshot::new(sys, s)?;
    let coupling = coupling_with(c, &snap.fields, s)?;
    let rhs = -drift_derivative_with(c, s, &snap.drift);
    signal(coupling.solve(&rhs), s.t)
}

pub(crate) fn holonomic_with(
    snap: &Snapshot,
    pair: &HolonomicPair,
    gains: &HolonomicGains,
    s: &State,
) -> Result<DVector<f64>> {
    let m = pair.position.count();
    check_dim("position gains", m, gains.position.len())?;
    check_dim("rate gains", m, gains.rate.len())?;
    let phi = evaluate(&pair.position, s)?;
    let rate = evaluate(&pair.rate, s)?;
    // The coupling and the drift term both act on the velocity-level constraint.
    let coupling = coupling_with(&pair.rate, &snap.fields, s)?;
    let rhs = -gains.position.apply(&phi)
        - gains.rate.apply(&rate)
        - drift_derivative_with(&pair.rate, s, &snap.drift);
    Ok(coupling.solve(&rhs))
}

/// `u* = C_ab (-K1 phi_h - K2 d/dt phi_h - G(d/dt phi_h))`, giving
/// `phi_h'' = -K1 phi_h - K2 phi_h'` in closed loop.
pub fn holonomic_control(
    sys: &dyn MechanicalSystem,
    pair: &HolonomicPair,
    gains: &HolonomicGains,
    s: &State,
) -> Result<ControlSignal> {
    let snap = Snapshot::new(sys, s)?;
    signal(holonomic_with(&snap, pair, gains, s)?, s.t)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;

    use super::*;
    use crate::constraint::from_holonomic;

    /// Unit mass on a line, force along the line.
    struct DoubleIntegrator;

    impl MechanicalSystem for DoubleIntegrator {
        fn dof(&self) -> usize {
            1
        }
        fn inputs(&self) -> usize {
            1
        }
        fn metric(&self, _q: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(1, 1)
        }
        fn potential(&self, _q: &DVector<f64>) -> f64 {
            0.0
        }
        fn external_force(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn control_covectors(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(1, 1)
        }
    }

    fn position_pair() -> HolonomicPair {
        from_holonomic(
            Arc::new(|q: &DVector<f64>| q.clone()),
            Some(Arc::new(|_: &DVector<f64>| DMatrix::identity(1, 1))),
            &DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn holonomic_law_examples() {
        let pair = position_pair();
        let gains = HolonomicGains::critically_damped(1);
        let u = |x: f64, v: f64| {
            holonomic_control(&DoubleIntegrator, &pair, &gains, &State::from_slices(&[x], &[v], 0.0))
                .unwrap()
                .u[0]
        };
        assert!((u(1.0, 0.0) + 1.0).abs() < 1e-12);
        assert!((u(0.0, 1.0) + 2.0).abs() < 1e-12);
        assert_eq!(u(0.0, 0.0), 0.0);
    }

    #[test]
    fn gains_must_be_positive() {
        assert!(GainMatrix::new(vec![1.0, 0.0]).is_err());
        assert!(GainMatrix::new(vec![1.0, -2.0]).is_err());
        assert!(GainMatrix::new(vec![f64::NAN]).is_err());
        assert!(GainMatrix::new(vec![]).is_err());
        assert_eq!(GainMatrix::new(vec![0.5, 2.0]).unwrap().diag(), &[0.5, 2.0]);
    }

    #[test]
    fn invariance_control_rejects_off_manifold() {
        let pair = position_pair();
        let s = State::from_slices(&[0.0], &[0.5], 0.0);
        assert!(matches!(
            invariance_control(&DoubleIntegrator, &pair.rate, &s),
            Err(Error::OffManifold { .. })
        ));
    }

    #[test]
    fn zero_constraint_and_drift_give_zero_control() {
        let pair = position_pair();
        let s = State::from_slices(&[3.0], &[0.0], 0.0);
        let u = stabilizing_control(&DoubleIntegrator, &pair.rate, &GainMatrix::identity(1), &s)
            .unwrap();
        assert_eq!(u.u[0], 0.0);
        let u = invariance_control(&DoubleIntegrator, &pair.rate, &s).unwrap();
        assert_eq!(u.u[0], 0.0);
    }
}
