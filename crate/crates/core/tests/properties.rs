mod common;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::*;
use virtcon::chetaev::{
    chetaev_acceleration, constraint_force, simulate_constrained, velocity_kernel_basis,
};
use virtcon::constraint::{
    coupling_matrix, drift_derivative, evaluate, fd_jacobians, project_onto_manifold,
    ConstraintSet, Negated,
};
use virtcon::control::{stabilizing_control, GainMatrix};
use virtcon::integrator::{simulate, simulate_drift};
use virtcon::mechanics::{
    christoffel, controlled_acceleration, energy, potential_differential, MechanicalSystem,
};
use virtcon::numdiff;
use virtcon::scenarios::{
    build_usv, kinematic_check, Alignment, Flock, LinearCurrent, Preset, UniformCurrent,
    UsvConstraint, UsvParams,
};
use virtcon::state::State;

/// Unit particle in polar coordinates `(r, th)` with `V = r^2 / 2`, pushed radially.
struct Polar;

impl MechanicalSystem for Polar {
    fn dof(&self) -> usize {
        2
    }
    fn inputs(&self) -> usize {
        1
    }
    fn metric(&self, q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, q[0] * q[0]]))
    }
    fn potential(&self, q: &DVector<f64>) -> f64 {
        0.5 * q[0] * q[0]
    }
    fn external_force(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn control_covectors(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[1.0, 0.0])
    }
}

/// Three unit masses on a line driven through a non-diagonal input map.
struct Skewed;

impl MechanicalSystem for Skewed {
    fn dof(&self) -> usize {
        3
    }
    fn inputs(&self) -> usize {
        2
    }
    fn metric(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(3, 3)
    }
    fn potential(&self, q: &DVector<f64>) -> f64 {
        q[2].cos()
    }
    fn external_force(&self, _q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        -0.1 * v
    }
    fn control_covectors(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0])
    }
}

/// `phi = (v0 + v2 - sin q0, v1 v0 - q2)`.
struct SkewedConstraint;

impl ConstraintSet for SkewedConstraint {
    fn count(&self) -> usize {
        2
    }
    fn value(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![v[0] + v[2] - q[0].sin(), v[1] * v[0] - q[2]])
    }
    fn jac_q(&self, q: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 3, &[-q[0].cos(), 0.0, 0.0, 0.0, 0.0, -1.0])
    }
    fn jac_v(&self, _q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, v[1], v[0], 0.0])
    }
}

fn flock() -> Flock {
    Flock {
        masses: [MASS; 4],
        g: G,
    }
}

fn state(q: &[f64], v: &[f64]) -> State {
    State::from_slices(q, v, 0.0)
}

fn flocking_velocity() -> impl Strategy<Value = [f64; 8]> {
    prop::array::uniform8(-3.0..3.0f64).prop_filter("transverse", |v| (v[6] - v[7]).abs() >= 0.2)
}

fn anticyclone() -> UsvParams {
    UsvParams::anticyclone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn christoffel_symmetric_and_polar_values(r in 0.2..5.0f64, th in -3.0..3.0f64) {
        let q = DVector::from_vec(vec![r, th]);
        let gamma = christoffel(&Polar, &q).unwrap();
        for j in 0..2 {
            for i in 0..2 {
                for k in 0..2 {
                    prop_assert_eq!(gamma.get(j, i, k), gamma.get(j, k, i));
                }
            }
        }
        prop_assert!((gamma.get(0, 1, 1) + r).abs() <= 1e-7 * r);
        prop_assert!((gamma.get(1, 0, 1) - 1.0 / r).abs() <= 1e-7 / r);
        prop_assert!(gamma.get(0, 0, 0).abs() <= 1e-9);
    }

    #[test]
    fn acceleration_is_affine_in_input(
        v in flocking_velocity(),
        u in prop::array::uniform3(-5.0..5.0f64),
        alpha in -3.0..3.0f64,
    ) {
        let s = state(&[0.0; 8], &v);
        let sys = flock();
        let u = DVector::from_row_slice(&u);
        let a0 = controlled_acceleration(&sys, &s, &DVector::zeros(3)).unwrap();
        let a1 = controlled_acceleration(&sys, &s, &u).unwrap();
        let a = controlled_acceleration(&sys, &s, &(&u * alpha)).unwrap();
        prop_assert!((a - (&a0 + (a1 - &a0) * alpha)).amax() <= 1e-12 * (1.0 + alpha.abs()) * 20.0);
    }

    #[test]
    fn potential_differential_matches_finite_differences(
        q in prop::array::uniform8(-10.0..10.0f64),
        r in 0.2..5.0f64,
    ) {
        let q = DVector::from_row_slice(&q);
        let sys = flock();
        let fd = numdiff::gradient(|x| sys.potential(x), &q);
        prop_assert!(rel_err(&potential_differential(&sys, &q), &fd) <= 1e-6);
        let qp = DVector::from_vec(vec![r, 0.3]);
        let fd = numdiff::gradient(|x| Polar.potential(x), &qp);
        prop_assert!(rel_err(&potential_differential(&Polar, &qp), &fd) <= 1e-6);
    }

    #[test]
    fn usv_jacobians_match_finite_differences(
        q in prop::array::uniform3(-5.0..5.0f64),
        v in prop::array::uniform3(-2.0..2.0f64),
    ) {
        let s = state(&q, &v);
        for form in [UsvConstraint::CounterStream, UsvConstraint::WithStream] {
            let sc = build_usv(&UsvParams { constraint: form, ..anticyclone() }).unwrap();
            let (jq, jv) = fd_jacobians(sc.constraint.as_ref(), &s);
            let c = sc.constraint.as_ref();
            prop_assert!((c.jac_q(&s.q, &s.v) - jq).amax() <= 1e-6 * (1.0 + c.jac_q(&s.q, &s.v).amax()));
            prop_assert!((c.jac_v(&s.q, &s.v) - jv).amax() <= 1e-6 * (1.0 + c.jac_v(&s.q, &s.v).amax()));
        }
    }

    #[test]
    fn coupling_inverse_is_accurate(v in flocking_velocity()) {
        let s = state(&[0.0; 8], &v);
        let cm = coupling_matrix(&Alignment, &flock(), &s).unwrap();
        let id = &cm.forward * &cm.inverse;
        prop_assert!((id - DMatrix::identity(3, 3)).amax() <= 1e-10);
        prop_assert!(rel_err_matrix(&cm.forward, &flocking_coupling(&s)) <= 1e-12);
    }

    #[test]
    fn flocking_control_matches_closed_form(
        v in flocking_velocity(),
        k in prop::array::uniform3(0.1..3.0f64),
    ) {
        let s = state(&[0.0; 8], &v);
        let u = stabilizing_control(&flock(), &Alignment, &GainMatrix::new(k.to_vec()).unwrap(), &s)
            .unwrap()
            .u;
        prop_assert!(rel_err(&u, &flocking_u_star(&s, &k)) <= 1e-10);
        let g = drift_derivative(&Alignment, &flock(), &s).unwrap();
        prop_assert!(rel_err(&g, &flocking_drift_derivative(&s)) <= 1e-12);
    }

    #[test]
    fn sign_flip_leaves_control_unchanged(
        q in prop::array::uniform3(-5.0..5.0f64),
        v in prop::array::uniform3(-2.0..2.0f64),
    ) {
        let s = state(&q, &v);
        let sc = build_usv(&anticyclone()).unwrap();
        let gains = GainMatrix::new(vec![1.5]).unwrap();
        let sys = sc.system.as_ref();
        let a = stabilizing_control(sys, &sc.constraint, &gains, &s);
        let b = stabilizing_control(sys, &Negated(sc.constraint.clone()), &gains, &s);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!((&a.u - &b.u).amax() <= 1e-12 * (1.0 + b.u.amax()));
        }
    }

    #[test]
    fn control_is_affine_in_gains(v in flocking_velocity(), k in 0.1..3.0f64) {
        let s = state(&[0.0; 8], &v);
        let u = |scale: f64| {
            stabilizing_control(&flock(), &Alignment, &GainMatrix::new(vec![k * scale; 3]).unwrap(), &s)
                .unwrap()
                .u
        };
        let (u1, u2, u3) = (u(1.0), u(2.0), u(3.0));
        let scale = 1.0 + u1.amax() + u3.amax();
        prop_assert!(((&u3 - &u2) - (&u2 - &u1)).amax() <= 1e-12 * scale);
    }

    #[test]
    fn closed_loop_rate_identity_with_coupled_inputs(
        q in prop::array::uniform3(-2.0..2.0f64),
        v in prop::array::uniform3(0.5..2.0f64),
        k in prop::array::uniform2(0.1..3.0f64),
    ) {
        let s = state(&q, &v);
        let c = SkewedConstraint;
        let cm = coupling_matrix(&c, &Skewed, &s).unwrap();
        prop_assert!(cm.forward[(0, 1)] != 0.0 || cm.forward[(1, 0)] != 0.0);
        let u = stabilizing_control(&Skewed, &c, &GainMatrix::new(k.to_vec()).unwrap(), &s).unwrap().u;
        let a = controlled_acceleration(&Skewed, &s, &u).unwrap();
        let rate = c.jac_q(&s.q, &s.v) * &s.v + c.jac_v(&s.q, &s.v) * a;
        let phi = evaluate(&c, &s).unwrap();
        let expected = DVector::from_vec(vec![-k[0] * phi[0], -k[1] * phi[1]]);
        prop_assert!((rate - &expected).amax() <= 1e-10 * (1.0 + expected.amax() + u.amax()));
    }

    #[test]
    fn chetaev_force_does_no_virtual_work(
        q in prop::array::uniform3(-5.0..5.0f64),
        v in prop::array::uniform3(-2.0..2.0f64),
    ) {
        let sc = build_usv(&anticyclone()).unwrap();
        let (sys, c) = (sc.system.as_ref(), sc.constraint.as_ref());
        let mut s = state(&q, &v);
        s.v = project_onto_manifold(c, &s.q, &s.v).unwrap();
        let (_, lambda) = chetaev_acceleration(sys, c, &s).unwrap();
        let force = constraint_force(c, &s, &lambda);
        for x in velocity_kernel_basis(sys, c, &s).unwrap() {
            prop_assert!(force.dot(&x).abs() <= 1e-10 * (1.0 + force.amax()));
        }
    }
}

#[test]
fn conservative_drift_conserves_energy() {
    let s0 = state(&[1.0, 0.0], &[0.3, 0.8]);
    let tr = simulate_drift(&Polar, &Radial, &s0, 1e-3, 10.0).unwrap();
    let e0 = tr.energies[0];
    let worst = tr.energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max);
    assert!(worst / e0 < 1e-6, "relative energy drift {worst:e}");
}

/// `phi = rdot`; only used as a recorder.
struct Radial;

impl ConstraintSet for Radial {
    fn count(&self) -> usize {
        1
    }
    fn value(&self, _q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, v[0])
    }
}

#[test]
fn chetaev_flow_on_linear_constraint_conserves_energy() {
    let sys = PlanarParticle { mass: 2.0, g: 10.0 };
    let c = Slope(0.5);
    let s0 = state(&[0.0, 0.0], &[1.0, 0.5]);
    let sol = simulate_constrained(&sys, &c, &s0, 1e-3, 10.0).unwrap();
    let e0 = sol.trajectory.energies[0];
    for e in &sol.trajectory.energies {
        assert!((e - e0).abs() <= 1e-9 * e0.abs().max(1.0));
    }
    for lambda in &sol.multipliers {
        assert!((lambda[0] - 2.0 * 10.0 / 1.25).abs() <= 1e-9, "{lambda}");
    }
}

#[test]
fn usv_drift_from_kinematic_start_stays_kinematic() {
    let mut rng = rng(11);
    for current in [
        Arc::new(UniformCurrent([1.0, 1.0])) as Arc<dyn virtcon::scenarios::CurrentField>,
        Arc::new(LinearCurrent::anticyclone()),
    ] {
        for _ in 0..5 {
            let mut s = random_usv_state(&mut rng);
            s.v[2] = 0.0;
            let kin = virtcon::scenarios::usv::kinematic_velocity(current.as_ref(), &s.q);
            s.v[0] = kin[0];
            s.v[1] = kin[1];
            let params = UsvParams {
                current: current.clone(),
                position: [s.q[0], s.q[1], s.q[2]],
                velocity: [s.v[0], s.v[1], 0.0],
                ..UsvParams::northeast()
            };
            let sc = build_usv(&params).unwrap();
            let tr = simulate_drift(sc.system.as_ref(), sc.constraint.as_ref(), &s, 0.01, 10.0).unwrap();
            for st in &tr.states {
                let [dx, dy] = kinematic_check(&params, st);
                assert!(dx.abs().max(dy.abs()) <= 1e-6, "{dx:e} {dy:e} at t = {}", st.t);
            }
        }
    }
}

#[test]
fn free_particle_is_ballistic_in_closed_loop() {
    let sc = Preset::Flocking.build().unwrap();
    let tr = simulate(
        sc.system.as_ref(),
        sc.constraint.as_ref(),
        &GainMatrix::identity(3),
        &sc.initial,
        0.01,
        20.0,
    )
    .unwrap();
    let (x0, z0, vx, vz) = (10.0, 90.0, 0.6, 0.0);
    for st in &tr.states {
        let t = st.t;
        assert!((st.q[6] - (x0 + vx * t)).abs() <= 1e-9);
        assert!((st.q[7] - (z0 + vz * t - 0.5 * G * t * t)).abs() <= 1e-9 * (1.0 + t * t));
        assert!((st.v[7] - (vz - G * t)).abs() <= 1e-9);
    }
}

#[test]
fn energy_matches_kinetic_plus_potential() {
    let s = state(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], &[1.0; 8]);
    let kinetic = 0.5 * MASS * 8.0;
    let potential = MASS * G * (2.0 + 4.0 + 6.0 + 8.0);
    assert!((energy(&flock(), &s) - kinetic - potential).abs() < 1e-12);
}
