//! Surface vessel in a position-dependent stream.
//!
//! Configuration `(x, y, theta)`, metric `diag(m, m, I)`, no potential. The
//! stream acts through the external force `(W1, W2, 0)` with
//!
//! ```text
//! W1 = m d/dt (sin^2 th C1 - sin th cos th C2)
//! W2 = m d/dt (-sin th cos th C1 + cos^2 th C2)
//! ```
//!
//! and a single input enters as `u (sin th dx - cos th dy + d th)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::Scenario;
use crate::constraint::{from_affine, AffineConstraint, AffineConstraintData};
use crate::error::{Error, Result};
use crate::mechanics::MechanicalSystem;
use crate::numdiff;
use crate::state::State;

/// Planar current `C(x, y) = (C1, C2)`.
pub trait CurrentField: Send + Sync {
    fn velocity(&self, x: f64, y: f64) -> [f64; 2];

    /// Row `i` holds `(d C_i / dx, d C_i / dy)`. Defaults to central differences.
    fn partials(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        fd_partials(self, x, y)
    }
}

fn fd_partials<F: CurrentField + ?Sized>(field: &F, x: f64, y: f64) -> [[f64; 2]; 2] {
    let j = numdiff::jacobian(
        |p| DVector::from_column_slice(&field.velocity(p[0], p[1])),
        &DVector::from_vec(vec![x, y]),
    );
    [[j[(0, 0)], j[(0, 1)]], [j[(1, 0)], j[(1, 1)]]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformCurrent(pub [f64; 2]);

impl CurrentField for UniformCurrent {
    fn velocity(&self, _x: f64, _y: f64) -> [f64; 2] {
        self.0
    }
    fn partials(&self, _x: f64, _y: f64) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
}

/// `C(x, y) = M (x, y) + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearCurrent {
    pub matrix: [[f64; 2]; 2],
    pub offset: [f64; 2],
}

impl LinearCurrent {
    /// `C = (y, -x + y)`.
    pub fn anticyclone() -> Self {
        Self {
            matrix: [[0.0, 1.0], [-1.0, 1.0]],
            offset: [0.0, 0.0],
        }
    }
}

impl CurrentField for LinearCurrent {
    fn velocity(&self, x: f64, y: f64) -> [f64; 2] {
        let m = &self.matrix;
        [
            m[0][0] * x + m[0][1] * y + self.offset[0],
            m[1][0] * x + m[1][1] * y + self.offset[1],
        ]
    }
    fn partials(&self, _x: f64, _y: f64) -> [[f64; 2]; 2] {
        self.matrix
    }
}

/// Which affine space of velocities is imposed.
///
/// Both are `sin th xdot - cos th ydot = +-(sin th C1 - cos th C2)` and differ
/// only in the sign of the stream term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UsvConstraint {
    /// `v + C` lies in the distribution: `phi = sin th (xdot + C1) - cos th (ydot + C2)`.
    #[default]
    CounterStream,
    /// `v - C` lies in the distribution: `phi = sin th (xdot - C1) - cos th (ydot - C2)`.
    WithStream,
}

impl UsvConstraint {
    fn stream_sign(self) -> f64 {
        match self {
            UsvConstraint::CounterStream => -1.0,
            UsvConstraint::WithStream => 1.0,
        }
    }
}

#[derive(Clone)]
pub struct UsvParams {
    pub mass: f64,
    pub inertia: f64,
    pub current: Arc<dyn CurrentField>,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub constraint: UsvConstraint,
}

impl UsvParams {
    /// Uniform north-east stream `C = (1, 1)`.
    pub fn northeast() -> Self {
        Self {
            mass: 10.0,
            inertia: 1.5,
            current: Arc::new(UniformCurrent([1.0, 1.0])),
            position: [1.0, 1.0, std::f64::consts::FRAC_PI_2],
            velocity: [0.8, 0.5, 0.0],
            constraint: UsvConstraint::default(),
        }
    }

    /// Anticyclone stream `C = (y, -x + y)`.
    pub fn anticyclone() -> Self {
        Self {
            mass: 20.0,
            inertia: 4.0,
            current: Arc::new(LinearCurrent::anticyclone()),
            position: [1.0, 1.0, std::f64::consts::FRAC_PI_2],
            velocity: [1.0, 1.0, 0.0],
            constraint: UsvConstraint::default(),
        }
    }

    pub fn initial_state(&self) -> State {
        State::from_slices(&self.position, &self.velocity, 0.0)
    }
}

#[derive(Clone)]
pub struct Usv {
    pub mass: f64,
    pub inertia: f64,
    pub current: Arc<dyn CurrentField>,
}

/// Velocity the stream imposes on an unforced, initially still hull:
/// `(sin^2 th C1 - sin th cos th C2, -sin th cos th C1 + cos^2 th C2)`.
pub fn kinematic_velocity(current: &dyn CurrentField, q: &DVector<f64>) -> [f64; 2] {
    let (s, c) = q[2].sin_cos();
    let [c1, c2] = current.velocity(q[0], q[1]);
    [s * s * c1 - s * c * c2, -s * c * c1 + c * c * c2]
}

impl Usv {
    /// Stream forces `(W1, W2)`.
    pub fn stream_force(&self, q: &DVector<f64>, v: &DVector<f64>) -> [f64; 2] {
        let (s, c) = q[2].sin_cos();
        let [c1, c2] = self.current.velocity(q[0], q[1]);
        let p = self.current.partials(q[0], q[1]);
        let (xd, yd, thd) = (v[0], v[1], v[2]);
        let dc1 = p[0][0] * xd + p[0][1] * yd;
        let dc2 = p[1][0] * xd + p[1][1] * yd;
        let (ss, sc, cc) = (s * s, s * c, c * c);
        let w1 = ss * dc1 - sc * dc2 + thd * (2.0 * sc * c1 - (cc - ss) * c2);
        let w2 = -sc * dc1 + cc * dc2 + thd * (-(cc - ss) * c1 - 2.0 * sc * c2);
        [self.mass * w1, self.mass * w2]
    }
}

impl MechanicalSystem for Usv {
    fn dof(&self) -> usize {
        3
    }

    fn inputs(&self) -> usize {
        1
    }

    fn metric(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![self.mass, self.mass, self.inertia]))
    }

    fn metric_partials(&self, _q: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(3, 3); 3])
    }

    fn potential(&self, _q: &DVector<f64>) -> f64 {
        0.0
    }

    fn potential_gradient(&self, _q: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::zeros(3))
    }

    fn external_force(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let [w1, w2] = self.stream_force(q, v);
        DVector::from_vec(vec![w1, w2, 0.0])
    }

    fn control_covectors(&self, q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = q[2].sin_cos();
        DMatrix::from_column_slice(3, 1, &[s, -c, 1.0])
    }
}

/// Affine constraint `sin th xdot - cos th ydot = sigma (sin th C1 - cos th C2)`
/// with analytic configuration derivatives.
pub fn usv_constraint(
    current: Arc<dyn CurrentField>,
    form: UsvConstraint,
    probe: &DVector<f64>,
) -> Result<AffineConstraint> {
    let sigma = form.stream_sign();
    let field = current.clone();
    let jac_field = current;
    let data = AffineConstraintData::new(
        Arc::new(|q: &DVector<f64>| {
            let (s, c) = q[2].sin_cos();
            DMatrix::from_row_slice(1, 3, &[s, -c, 0.0])
        }),
        Arc::new(move |q: &DVector<f64>| {
            let [c1, c2] = field.velocity(q[0], q[1]);
            DVector::from_vec(vec![sigma * c1, sigma * c2, 0.0])
        }),
    )
    .with_partials(
        Arc::new(|q: &DVector<f64>| {
            let (s, c) = q[2].sin_cos();
            vec![
                DMatrix::zeros(1, 3),
                DMatrix::zeros(1, 3),
                DMatrix::from_row_slice(1, 3, &[c, s, 0.0]),
            ]
        }),
        Arc::new(move |q: &DVector<f64>| {
            let p = jac_field.partials(q[0], q[1]);
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    sigma * p[0][0],
                    sigma * p[0][1],
                    0.0,
                    sigma * p[1][0],
                    sigma * p[1][1],
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                ],
            )
        }),
    );
    from_affine(data, probe)
}

pub fn build_usv(p: &UsvParams) -> Result<Scenario> {
    if !(p.mass.is_finite() && p.mass > 0.0) {
        return Err(Error::invalid("mass", format!("{} is not positive", p.mass)));
    }
    if !(p.inertia.is_finite() && p.inertia > 0.0) {
        return Err(Error::invalid("inertia", format!("{} is not positive", p.inertia)));
    }
    let initial = p.initial_state();
    if !initial.is_finite() {
        return Err(Error::invalid("initial", "initial state must be finite"));
    }
    let [x, y] = [p.position[0], p.position[1]];
    let analytic = p.current.partials(x, y);
    let numeric = fd_partials(p.current.as_ref(), x, y);
    for (ra, rn) in analytic.iter().zip(&numeric) {
        for (a, n) in ra.iter().zip(rn) {
            if (a - n).abs() > 1e-6 * a.abs().max(1.0) {
                return Err(Error::invalid(
                    "current",
                    format!("analytic partial {a} disagrees with finite difference {n}"),
                ));
            }
        }
    }
    let constraint = usv_constraint(p.current.clone(), p.constraint, &initial.q)?;
    Ok(Scenario {
        name: "usv".into(),
        system: Arc::new(Usv {
            mass: p.mass,
            inertia: p.inertia,
            current: p.current.clone(),
        }),
        constraint: Arc::new(constraint),
        initial,
        dt: 0.01,
        t_final: 100.0,
    })
}

/// Deviation of the planar velocity from the stream-induced kinematic velocity.
pub fn kinematic_check(p: &UsvParams, s: &State) -> [f64; 2] {
    let [kx, ky] = kinematic_velocity(p.current.as_ref(), &s.q);
    [s.v[0] - kx, s.v[1] - ky]
}
