//! Random state generators and hand-derived closed forms shared by the
//! integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use virtcon::mechanics::MechanicalSystem;
use virtcon::scenarios::{CurrentField, UsvConstraint};
use virtcon::state::State;

pub const G: f64 = 10.0;
pub const MASS: f64 = 2.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b|_inf / |b|_inf`, falling back to the absolute error when `b` vanishes.
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = b.amax();
    let diff = (a - b).amax();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn rel_err_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax();
    let diff = (a - b).amax();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Flocking state with positions in a 100 m box and `|xdot4 - zdot4| >= 0.2`.
pub fn random_flocking_state<R: Rng>(rng: &mut R) -> State {
    loop {
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-100.0..100.0)).collect();
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        if (v[6] - v[7]).abs() >= 0.2 {
            return State::from_slices(&q, &v, 0.0);
        }
    }
}

/// Flocking state on `M`: every velocity is a multiple of particle 4's.
pub fn random_aligned_flocking_state<R: Rng>(rng: &mut R) -> State {
    let mut s = random_flocking_state(rng);
    let (x4, z4) = (s.v[6], s.v[7]);
    for i in 0..3 {
        let k = rng.random_range(-2.0..2.0);
        s.v[2 * i] = k * x4;
        s.v[2 * i + 1] = k * z4;
    }
    s
}

pub fn flocking_phi(s: &State) -> DVector<f64> {
    let (x4, z4) = (s.v[6], s.v[7]);
    DVector::from_fn(3, |b, _| x4 * s.v[2 * b + 1] - s.v[2 * b] * z4)
}

/// `C^ab = (xdot4 - zdot4) diag(1/m)`.
pub fn flocking_coupling(s: &State) -> DMatrix<f64> {
    DMatrix::identity(3, 3) * ((s.v[6] - s.v[7]) / MASS)
}

/// `G(phi^b) = -g (xdot4 - xdot_b)`.
pub fn flocking_drift_derivative(s: &State) -> DVector<f64> {
    DVector::from_fn(3, |b, _| -G * (s.v[6] - s.v[2 * b]))
}

/// `u* = diag(m) / (xdot4 - zdot4) [g (xdot4 - xdot_b) - k_b phi_b]`.
pub fn flocking_u_star(s: &State, gains: &[f64]) -> DVector<f64> {
    let phi = flocking_phi(s);
    let d = s.v[6] - s.v[7];
    DVector::from_fn(3, |b, _| MASS / d * (G * (s.v[6] - s.v[2 * b]) - gains[b] * phi[b]))
}

/// `u_hat = g (xdot4 - zdot4)^{-1} diag(m) (xdot4 - xdot_b)`.
pub fn flocking_u_hat(s: &State) -> DVector<f64> {
    let d = s.v[6] - s.v[7];
    DVector::from_fn(3, |b, _| G * MASS / d * (s.v[6] - s.v[2 * b]))
}

pub fn random_usv_state<R: Rng>(rng: &mut R) -> State {
    let q = [
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    ];
    let v = [
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    ];
    State::from_slices(&q, &v, 0.0)
}

/// USV state on the with-stream affine space: `(xdot, ydot)` is the stream's
/// kinematic velocity plus a multiple of the heading.
pub fn random_usv_state_with_stream<R: Rng>(rng: &mut R, current: &dyn CurrentField) -> State {
    let mut s = random_usv_state(rng);
    let (sn, cs) = s.q[2].sin_cos();
    let [c1, c2] = current.velocity(s.q[0], s.q[1]);
    let along = rng.random_range(-2.0..2.0);
    // Remove the heading-normal component of (v - C).
    let normal = sn * (s.v[0] - c1) - cs * (s.v[1] - c2);
    s.v[0] -= normal * sn;
    s.v[1] += normal * cs;
    s.v[0] += along * cs;
    s.v[1] += along * sn;
    s
}

/// Counter-stream `u*` with scalar gain `k`, expanded by hand from
/// `phi = sin(th)(xdot + C1) - cos(th)(ydot + C2)`.
pub fn usv_u_star_long_form(
    mass: f64,
    current: &dyn CurrentField,
    s: &State,
    k: f64,
) -> f64 {
    let (x, y, th) = (s.q[0], s.q[1], s.q[2]);
    let (xd, yd, thd) = (s.v[0], s.v[1], s.v[2]);
    let (sn, cs) = th.sin_cos();
    let [c1, c2] = current.velocity(x, y);
    let p = current.partials(x, y);
    let (c1x, c1y, c2x, c2y) = (p[0][0], p[0][1], p[1][0], p[1][1]);
    // Stream forces per unit mass.
    let (dc1, dc2) = (xd * c1x + yd * c1y, xd * c2x + yd * c2y);
    let (ss, sc, cc) = (sn * sn, sn * cs, cs * cs);
    let w1 = ss * dc1 - sc * dc2 + thd * (2.0 * sc * c1 - (cc - ss) * c2);
    let w2 = -sc * dc1 + cc * dc2 + thd * (-(cc - ss) * c1 - 2.0 * sc * c2);
    let phi = sn * (xd + c1) - cs * (yd + c2);
    let unforced = -mass * sn * (xd * c1x + yd * c1y + yd * thd + thd * c2 + w1)
        - mass * cs * (-xd * c2x - yd * c2y + xd * thd + thd * c1 - w2);
    unforced - mass * k * phi
}

/// `u_hat = -m thdot (cos(th) xdot + sin(th) ydot)`.
pub fn usv_u_hat(mass: f64, s: &State) -> f64 {
    let (sn, cs) = s.q[2].sin_cos();
    -mass * s.v[2] * (cs * s.v[0] + sn * s.v[1])
}

pub fn usv_phi(form: UsvConstraint, current: &dyn CurrentField, s: &State) -> f64 {
    let sigma = match form {
        UsvConstraint::CounterStream => -1.0,
        UsvConstraint::WithStream => 1.0,
    };
    let (sn, cs) = s.q[2].sin_cos();
    let [c1, c2] = current.velocity(s.q[0], s.q[1]);
    sn * (s.v[0] - sigma * c1) - cs * (s.v[1] - sigma * c2)
}

/// Unit mass on a line pushed by a force along the line.
pub struct DoubleIntegrator;

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
    fn metric_partials(&self, _q: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(1, 1)])
    }
    fn potential(&self, _q: &DVector<f64>) -> f64 {
        0.0
    }
    fn potential_gradient(&self, _q: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::zeros(1))
    }
    fn external_force(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn control_covectors(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
}

/// Particle of mass `m` in the (x, z) plane under gravity, pushed along x.
pub struct PlanarParticle {
    pub mass: f64,
    pub g: f64,
}

impl MechanicalSystem for PlanarParticle {
    fn dof(&self) -> usize {
        2
    }
    fn inputs(&self) -> usize {
        1
    }
    fn metric(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.mass
    }
    fn potential(&self, q: &DVector<f64>) -> f64 {
        self.mass * self.g * q[1]
    }
    fn potential_gradient(&self, _q: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::from_vec(vec![0.0, self.mass * self.g]))
    }
    fn external_force(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn control_covectors(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[1.0, 0.0])
    }
}

/// `zdot - c xdot = 0`.
pub struct Slope(pub f64);

impl virtcon::constraint::ConstraintSet for Slope {
    fn count(&self) -> usize {
        1
    }
    fn value(&self, _q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, v[1] - self.0 * v[0])
    }
    fn jac_q(&self, q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, q.len())
    }
    fn jac_v(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[-self.0, 1.0])
    }
}
