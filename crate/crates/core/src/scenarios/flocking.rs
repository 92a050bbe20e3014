//! Four particles in a vertical plane under gravity; particles 1..3 are
//! actuated and steered until their velocities are parallel to the free
//! particle 4.
//!
//! Coordinates are ordered `(x1, z1, x2, z2, x3, z3, x4, z4)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::Scenario;
use crate::constraint::ConstraintSet;
use crate::error::{Error, Result};
use crate::mechanics::MechanicalSystem;
use crate::state::State;

pub const AGENTS: usize = 4;
pub const CONTROLLED: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FlockingParams {
    pub masses: [f64; AGENTS],
    pub g: f64,
    pub positions: [[f64; 2]; AGENTS],
    pub velocities: [[f64; 2]; AGENTS],
}

impl Default for FlockingParams {
    fn default() -> Self {
        Self {
            masses: [2.0; AGENTS],
            g: 10.0,
            positions: [[10.0, 56.0], [30.0, 100.0], [50.0, 100.0], [10.0, 90.0]],
            velocities: [[0.5, 1.0], [1.0, 1.0], [-1.0, -1.0], [0.6, 0.0]],
        }
    }
}

impl FlockingParams {
    pub fn initial_state(&self) -> State {
        let q: Vec<f64> = self.positions.iter().flatten().copied().collect();
        let v: Vec<f64> = self.velocities.iter().flatten().copied().collect();
        State::from_slices(&q, &v, 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct Flock {
    pub masses: [f64; AGENTS],
    pub g: f64,
}

impl MechanicalSystem for Flock {
    fn dof(&self) -> usize {
        2 * AGENTS
    }

    fn inputs(&self) -> usize {
        CONTROLLED
    }

    fn metric(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_fn(2 * AGENTS, |i, _| self.masses[i / 2]))
    }

    fn metric_partials(&self, _q: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(2 * AGENTS, 2 * AGENTS); 2 * AGENTS])
    }

    fn potential(&self, q: &DVector<f64>) -> f64 {
        (0..AGENTS).map(|i| self.masses[i] * self.g * q[2 * i + 1]).sum()
    }

    fn potential_gradient(&self, _q: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::from_fn(2 * AGENTS, |k, _| {
            if k % 2 == 1 {
                self.masses[k / 2] * self.g
            } else {
                0.0
            }
        }))
    }

    fn external_force(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2 * AGENTS)
    }

    /// `f^a = dx_a + dz_a`.
    fn control_covectors(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(2 * AGENTS, CONTROLLED);
        for a in 0..CONTROLLED {
            f[(2 * a, a)] = 1.0;
            f[(2 * a + 1, a)] = 1.0;
        }
        f
    }
}

/// `phi^b = xdot_4 zdot_b - xdot_b zdot_4` for `b = 1, 2, 3`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Alignment;

const LEADER_X: usize = 2 * (AGENTS - 1);
const LEADER_Z: usize = LEADER_X + 1;

impl ConstraintSet for Alignment {
    fn count(&self) -> usize {
        CONTROLLED
    }

    fn value(&self, _q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(CONTROLLED, |b, _| {
            v[LEADER_X] * v[2 * b + 1] - v[2 * b] * v[LEADER_Z]
        })
    }

    fn jac_q(&self, q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(CONTROLLED, q.len())
    }

    fn jac_v(&self, _q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(CONTROLLED, 2 * AGENTS);
        for b in 0..CONTROLLED {
            j[(b, 2 * b)] = -v[LEADER_Z];
            j[(b, 2 * b + 1)] = v[LEADER_X];
            j[(b, LEADER_X)] = v[2 * b + 1];
            j[(b, LEADER_Z)] = -v[2 * b];
        }
        j
    }
}

pub fn build_flocking(p: &FlockingParams) -> Result<Scenario> {
    if let Some(m) = p.masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(Error::invalid("masses", format!("mass {m} is not positive")));
    }
    if !p.g.is_finite() {
        return Err(Error::invalid("g", "gravity must be finite"));
    }
    let initial = p.initial_state();
    if !initial.is_finite() {
        return Err(Error::invalid("initial", "initial state must be finite"));
    }
    let [x4, z4] = p.velocities[AGENTS - 1];
    if x4 == z4 {
        return Err(Error::invalid(
            "velocities",
            "leader velocity components must differ (xdot_4 != zdot_4) for transversality",
        ));
    }
    Ok(Scenario {
        name: "flocking".into(),
        system: Arc::new(Flock {
            masses: p.masses,
            g: p.g,
        }),
        constraint: Arc::new(Alignment),
        initial,
        dt: 0.01,
        t_final: 500.0,
    })
}
