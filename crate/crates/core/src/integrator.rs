//! Fixed-step RK4 integration of closed-loop second-order systems.

use nalgebra::DVector;

use crate::constraint::{evaluate, ConstraintSet, HolonomicPair};
use crate::control::{holonomic_with, stabilizing_with, ControlSignal, GainMatrix, HolonomicGains};
use crate::error::{Error, Result};
use crate::mechanics::{energy, MechanicalSystem, Snapshot};
use crate::state::State;

/// Any state component beyond this magnitude aborts the run.
pub const BLOWUP_LIMIT: f64 = 1e12;

/// Default upper end of the decay-fit window, in seconds after the start.
pub const DECAY_WINDOW: f64 = 10.0;

/// Relative floor below which constraint values are treated as numerical noise.
pub const DECAY_FLOOR: f64 = 1e-12;

/// Uniformly sampled closed-loop trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<ControlSignal>,
    pub constraint_values: Vec<DVector<f64>>,
    pub energies: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("records hold at least the initial sample")
    }

    /// Constraint component `b` over time.
    pub fn constraint_series(&self, b: usize) -> Vec<f64> {
        self.constraint_values.iter().map(|phi| phi[b]).collect()
    }

    pub fn max_abs_constraint(&self) -> f64 {
        self.constraint_values
            .iter()
            .map(|phi| phi.amax())
            .fold(0.0, f64::max)
    }

    pub fn constraint_count(&self) -> usize {
        self.constraint_values.first().map_or(0, |p| p.len())
    }
}

pub(crate) fn check_state(s: &State) -> Result<()> {
    let within = s
        .q
        .iter()
        .chain(s.v.iter())
        .all(|x| x.is_finite() && x.abs() <= BLOWUP_LIMIT);
    if within {
        Ok(())
    } else {
        Err(Error::Blowup { t: s.t })
    }
}

fn check_derivative(a: &DVector<f64>, t: f64) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Blowup { t })
    }
}

fn shifted(s: &State, dq: &DVector<f64>, dv: &DVector<f64>, h: f64) -> State {
    State {
        q: &s.q + dq * h,
        v: &s.v + dv * h,
        t: s.t + h,
    }
}

/// RK4 increments `(dq, dv)` for `q' = v, v' = accel(q, v, t)`, starting from
/// a known first-stage acceleration.
fn rk4_increments<F>(
    accel: &mut F,
    s: &State,
    a1: DVector<f64>,
    dt: f64,
) -> Result<(DVector<f64>, DVector<f64>)>
where
    F: FnMut(&State) -> Result<DVector<f64>>,
{
    check_derivative(&a1, s.t)?;
    let half = 0.5 * dt;
    let v1 = s.v.clone();
    let s2 = shifted(s, &v1, &a1, half);
    let a2 = accel(&s2)?;
    check_derivative(&a2, s2.t)?;
    let v2 = s2.v.clone();
    let s3 = shifted(s, &v2, &a2, half);
    let a3 = accel(&s3)?;
    check_derivative(&a3, s3.t)?;
    let v3 = s3.v.clone();
    let s4 = shifted(s, &v3, &a3, dt);
    let a4 = accel(&s4)?;
    check_derivative(&a4, s4.t)?;
    let v4 = s4.v;
    let w = dt / 6.0;
    Ok((
        (v1 + &v2 * 2.0 + &v3 * 2.0 + v4) * w,
        (a1 + &a2 * 2.0 + &a3 * 2.0 + a4) * w,
    ))
}

pub(crate) fn rk4_from<F>(accel: &mut F, s: &State, a1: DVector<f64>, dt: f64) -> Result<State>
where
    F: FnMut(&State) -> Result<DVector<f64>>,
{
    let (dq, dv) = rk4_increments(accel, s, a1, dt)?;
    let next = State {
        q: &s.q + dq,
        v: &s.v + dv,
        t: s.t + dt,
    };
    check_state(&next)?;
    Ok(next)
}

/// Stepper that accumulates the state with compensated (Kahan) summation, so
/// rounding of `x + dx` does not build up over long runs with large states.
pub(crate) struct Stepper {
    carry_q: DVector<f64>,
    carry_v: DVector<f64>,
}

fn kahan_add(x: &mut DVector<f64>, carry: &mut DVector<f64>, dx: &DVector<f64>) {
    for i in 0..x.len() {
        let y = dx[i] - carry[i];
        let t = x[i] + y;
        carry[i] = (t - x[i]) - y;
        x[i] = t;
    }
}

impl Stepper {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            carry_q: DVector::zeros(n),
            carry_v: DVector::zeros(n),
        }
    }

    /// Advances `s` by one step to time `t_next`.
    pub(crate) fn step<F>(
        &mut self,
        accel: &mut F,
        s: &State,
        a1: DVector<f64>,
        dt: f64,
        t_next: f64,
    ) -> Result<State>
    where
        F: FnMut(&State) -> Result<DVector<f64>>,
    {
        let (dq, dv) = rk4_increments(accel, s, a1, dt)?;
        let mut next = s.clone();
        kahan_add(&mut next.q, &mut self.carry_q, &dq);
        kahan_add(&mut next.v, &mut self.carry_v, &dv);
        next.t = t_next;
        check_state(&next)?;
        Ok(next)
    }
}

/// One RK4 step of the first-order system `(q, v)' = (v, accel(q, v, t))`.
///
/// The acceleration callback is evaluated at every stage state, so feedback
/// laws inside it are applied continuously rather than held over the step.
pub fn rk4_step<F>(mut accel: F, s: &State, dt: f64) -> Result<State>
where
    F: FnMut(&State) -> Result<DVector<f64>>,
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", format!("{dt} is not a positive step")));
    }
    let a1 = accel(s)?;
    rk4_from(&mut accel, s, a1, dt)
}

/// Number of steps `N` with `N * dt = t_final`.
pub fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", format!("{dt} is not a positive step")));
    }
    if !(t_final.is_finite() && t_final >= 0.0) {
        return Err(Error::invalid("t_final", format!("{t_final} is negative or not finite")));
    }
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::invalid(
            "t_final",
            format!("{t_final} is not an integer multiple of dt = {dt}"),
        ));
    }
    Ok(n as usize)
}

/// Integrates under an arbitrary feedback law evaluated on a mechanics snapshot.
pub fn simulate_with<L>(
    sys: &dyn MechanicalSystem,
    c: &dyn ConstraintSet,
    law: L,
    s0: &State,
    dt: f64,
    t_final: f64,
) -> Result<TrajectoryRecord>
where
    L: Fn(&Snapshot, &State) -> Result<DVector<f64>>,
{
    let steps = step_count(dt, t_final)?;
    s0.check_dof(sys.dof())?;
    check_state(s0)?;
    let t0 = s0.t;
    let mut record = TrajectoryRecord {
        dt,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        constraint_values: Vec::with_capacity(steps + 1),
        energies: Vec::with_capacity(steps + 1),
    };
    let mut accel = |s: &State| -> Result<DVector<f64>> {
        let snap = Snapshot::new(sys, s)?;
        let u = law(&snap, s)?;
        snap.controlled(&u)
    };
    let mut s = s0.clone();
    let mut stepper = Stepper::new(s.dof());
    for i in 0..=steps {
        let snap = Snapshot::new(sys, &s)?;
        let u = law(&snap, &s)?;
        check_derivative(&u, s.t)?;
        let a1 = snap.controlled(&u)?;
        record.times.push(s.t);
        record.constraint_values.push(evaluate(c, &s)?);
        record.energies.push(energy(sys, &s));
        record.controls.push(ControlSignal { u, t: s.t });
        if i < steps {
            let next = stepper.step(&mut accel, &s, a1, dt, t0 + (i + 1) as f64 * dt)?;
            record.states.push(std::mem::replace(&mut s, next));
        } else {
            record.states.push(s.clone());
        }
    }
    Ok(record)
}

/// Closed-loop run under the stabilizing law `u*`.
pub fn simulate(
    sys: &dyn MechanicalSystem,
    c: &dyn ConstraintSet,
    gains: &GainMatrix,
    s0: &State,
    dt: f64,
    t_final: f64,
) -> Result<TrajectoryRecord> {
    simulate_with(sys, c, |snap, s| stabilizing_with(snap, c, gains, s), s0, dt, t_final)
}

/// Uncontrolled run; constraint values are still recorded.
pub fn simulate_drift(
    sys: &dyn MechanicalSystem,
    c: &dyn ConstraintSet,
    s0: &State,
    dt: f64,
    t_final: f64,
) -> Result<TrajectoryRecord> {
    let m = sys.inputs();
    simulate_with(sys, c, |_, _| Ok(DVector::zeros(m)), s0, dt, t_final)
}

/// Closed-loop run under the holonomic law; records the position-level constraint.
pub fn simulate_holonomic(
    sys: &dyn MechanicalSystem,
    pair: &HolonomicPair,
    gains: &HolonomicGains,
    s0: &State,
    dt: f64,
    t_final: f64,
) -> Result<TrajectoryRecord> {
    simulate_with(
        sys,
        &pair.position,
        |snap, s| holonomic_with(snap, pair, gains, s),
        s0,
        dt,
        t_final,
    )
}

fn decay_floor(tr: &TrajectoryRecord, b: usize) -> f64 {
    DECAY_FLOOR * (1.0 + tr.constraint_values[0][b].abs())
}

fn check_component(tr: &TrajectoryRecord, b: usize) -> Result<()> {
    if tr.is_empty() {
        return Err(Error::DecayWindow("empty trajectory".into()));
    }
    if b >= tr.constraint_count() {
        return Err(Error::DecayWindow(format!(
            "constraint index {b} out of range (m = {})",
            tr.constraint_count()
        )));
    }
    Ok(())
}

/// Default fit window `[t0, t0 + min(10, T)]`, cut before `|phi^b|` first
/// drops under the noise floor.
pub fn default_decay_window(tr: &TrajectoryRecord, b: usize) -> Result<(f64, f64)> {
    check_component(tr, b)?;
    let t0 = tr.times[0];
    let end = (t0 + DECAY_WINDOW).min(*tr.times.last().unwrap());
    let floor = decay_floor(tr, b);
    let mut last = None;
    for (t, phi) in tr.times.iter().zip(&tr.constraint_values) {
        if *t > end + 1e-9 || phi[b].abs() < floor {
            break;
        }
        last = Some(*t);
    }
    match last {
        Some(t1) if t1 > t0 => Ok((t0, t1)),
        _ => Err(Error::DecayWindow(format!(
            "phi{b} is below the noise floor {floor:e} from the start"
        ))),
    }
}

/// Exponential rate of `phi^b` over `window`: the negated least-squares slope of `ln|phi^b|`.
pub fn decay_rate(tr: &TrajectoryRecord, b: usize, window: (f64, f64)) -> Result<f64> {
    check_component(tr, b)?;
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::DecayWindow(format!("empty window [{t0}, {t1}]")));
    }
    let floor = decay_floor(tr, b);
    let slack = 1e-9 * tr.dt.max(1e-12);
    let samples: Vec<(f64, f64)> = tr
        .times
        .iter()
        .zip(&tr.constraint_values)
        .filter(|(t, _)| **t >= t0 - slack && **t <= t1 + slack)
        .map(|(t, phi)| (*t, phi[b]))
        .collect();
    if samples.len() < 2 {
        return Err(Error::DecayWindow(format!(
            "fewer than two samples in [{t0}, {t1}]"
        )));
    }
    let sign = samples[0].1.signum();
    for &(t, phi) in &samples {
        if phi.abs() < floor {
            return Err(Error::DecayWindow(format!(
                "|phi{b}| = {:e} is below the floor {floor:e} at t = {t}",
                phi.abs()
            )));
        }
        if phi.signum() != sign {
            return Err(Error::DecayWindow(format!("phi{b} changes sign at t = {t}")));
        }
    }
    let n = samples.len() as f64;
    let mean_t = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let logs: Vec<f64> = samples.iter().map(|s| s.1.abs().ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (s, l) in samples.iter().zip(&logs) {
        let dt = s.0 - mean_t;
        sxy += dt * (l - mean_log);
        sxx += dt * dt;
    }
    Ok(-sxy / sxx)
}

/// Rates for every constraint component over their default windows.
pub fn fit_decay_rates(tr: &TrajectoryRecord) -> Vec<Result<f64>> {
    (0..tr.constraint_count())
        .map(|b| default_decay_window(tr, b).and_then(|w| decay_rate(tr, b, w)))
        .collect()
}
