//! Forced mechanical control systems on `R^n`.
//!
//! A system is described by its kinetic-energy metric, a potential, an
//! external force covector `F0(q, v)` and `m` control covectors `f^a(q, v)`.
//! The uncontrolled (drift) acceleration is
//!
//! ```text
//! a = -Gamma(v, v) - G^{-1} dV + G^{-1} F0
//! ```
//!
//! and the control vector fields are `Y^a = G^{-1} f^a`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::numdiff;
use crate::state::State;

/// A mechanical control system. All methods must be pure.
pub trait MechanicalSystem: Send + Sync {
    /// Configuration dimension `n`.
    fn dof(&self) -> usize;

    /// Number of control inputs `m < n`.
    fn inputs(&self) -> usize;

    /// Kinetic-energy metric at `q`.
    fn metric(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// Analytic `d G / d q_k` for every `k`; `None` falls back to finite differences.
    fn metric_partials(&self, _q: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        None
    }

    fn potential(&self, q: &DVector<f64>) -> f64;

    /// Analytic `dV`; `None` falls back to finite differences.
    fn potential_gradient(&self, _q: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    /// External force covector `F0(q, v)`.
    fn external_force(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;

    /// Control covectors as an `n x m` matrix, column `a` is `f^a(q, v)`.
    fn control_covectors(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>;
}

enum Factor {
    /// Diagonal metrics are inverted entrywise, which keeps constant-mass
    /// systems free of factorization round-off.
    Diagonal(DVector<f64>),
    Cholesky(Cholesky<f64, Dyn>),
}

/// Factorization of the metric at one configuration.
pub struct MetricFactor {
    metric: DMatrix<f64>,
    factor: Factor,
}

impl MetricFactor {
    pub fn new(metric: DMatrix<f64>, q: &DVector<f64>) -> Result<Self> {
        let degenerate = || Error::MetricDegenerate {
            q: q.iter().copied().collect(),
        };
        if !metric.is_square() || metric.iter().any(|x| !x.is_finite()) {
            return Err(degenerate());
        }
        let scale = metric.amax().max(1.0);
        if (&metric - metric.transpose()).amax() > 1e-12 * scale {
            return Err(degenerate());
        }
        let n = metric.nrows();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || metric[(i, j)] == 0.0));
        let factor = if diagonal {
            let d = metric.diagonal();
            if d.iter().any(|x| *x <= 0.0) {
                return Err(degenerate());
            }
            Factor::Diagonal(d)
        } else {
            Factor::Cholesky(Cholesky::new(metric.clone()).ok_or_else(degenerate)?)
        };
        Ok(Self { metric, factor })
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    /// Raises an index: `G^{-1} x`.
    pub fn sharp(&self, covector: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Diagonal(d) => covector.component_div(d),
            Factor::Cholesky(chol) => chol.solve(covector),
        }
    }

    pub fn sharp_columns(&self, covectors: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            Factor::Diagonal(d) => {
                let mut out = covectors.clone();
                for (mut row, di) in out.row_iter_mut().zip(d.iter()) {
                    row /= *di;
                }
                out
            }
            Factor::Cholesky(chol) => chol.solve(covectors),
        }
    }
}

pub fn factor_metric(sys: &dyn MechanicalSystem, q: &DVector<f64>) -> Result<MetricFactor> {
    check_dim("configuration", sys.dof(), q.len())?;
    MetricFactor::new(sys.metric(q), q)
}

fn metric_partials(sys: &dyn MechanicalSystem, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
    sys.metric_partials(q)
        .unwrap_or_else(|| numdiff::matrix_partials(|x| sys.metric(x), q))
}

/// `dV(q)`, analytic when the system supplies it.
pub fn potential_differential(sys: &dyn MechanicalSystem, q: &DVector<f64>) -> DVector<f64> {
    sys.potential_gradient(q)
        .unwrap_or_else(|| numdiff::gradient(|x| sys.potential(x), q))
}

/// Christoffel symbols of the Levi-Civita connection, indexed `(upper j, lower i, lower k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn dof(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, i: usize, k: usize) -> f64 {
        self.data[(j * self.n + i) * self.n + k]
    }

    /// `Gamma(v, v)^j = Gamma^j_ik v^i v^k`.
    pub fn contract(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |j, _| {
            let mut acc = 0.0;
            for i in 0..self.n {
                for k in 0..self.n {
                    acc += self.get(j, i, k) * v[i] * v[k];
                }
            }
            acc
        })
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }
}

pub fn christoffel(sys: &dyn MechanicalSystem, q: &DVector<f64>) -> Result<Christoffel> {
    let factor = factor_metric(sys, q)?;
    let n = sys.dof();
    let dg = metric_partials(sys, q);
    let mut data = vec![0.0; n * n * n];
    let mut lowered = DVector::zeros(n);
    for i in 0..n {
        for k in 0..n {
            for l in 0..n {
                lowered[l] = 0.5 * (dg[i][(l, k)] + dg[k][(l, i)] - dg[l][(i, k)]);
            }
            let raised = factor.sharp(&lowered);
            for j in 0..n {
                data[(j * n + i) * n + k] = raised[j];
            }
        }
    }
    Ok(Christoffel { n, data })
}

/// `G(q) Gamma(v, v)`: the quadratic velocity term with its index lowered.
fn lowered_quadratic(dg: &[DMatrix<f64>], v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    let mut out = DVector::zeros(n);
    for (i, dgi) in dg.iter().enumerate() {
        if v[i] != 0.0 {
            out.axpy(v[i], &(dgi * v), 1.0);
        }
    }
    for (l, dgl) in dg.iter().enumerate() {
        out[l] -= 0.5 * v.dot(&(dgl * v));
    }
    out
}

/// Everything the control law needs from the mechanics at a single state.
pub struct Snapshot {
    pub drift: DVector<f64>,
    pub fields: DMatrix<f64>,
    pub factor: MetricFactor,
}

impl Snapshot {
    pub fn new(sys: &dyn MechanicalSystem, s: &State) -> Result<Self> {
        s.check_dof(sys.dof())?;
        let factor = factor_metric(sys, &s.q)?;
        let drift = drift_with(sys, &factor, s);
        let fields = fields_with(sys, &factor, s)?;
        Ok(Self {
            drift,
            fields,
            factor,
        })
    }

    pub fn controlled(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("control", self.fields.ncols(), u.len())?;
        Ok(&self.drift + &self.fields * u)
    }
}

fn drift_with(sys: &dyn MechanicalSystem, factor: &MetricFactor, s: &State) -> DVector<f64> {
    let dg = metric_partials(sys, &s.q);
    let mut force = sys.external_force(&s.q, &s.v) - potential_differential(sys, &s.q);
    if dg.iter().any(|m| m.iter().any(|&x| x != 0.0)) {
        force -= lowered_quadratic(&dg, &s.v);
    }
    factor.sharp(&force)
}

fn fields_with(
    sys: &dyn MechanicalSystem,
    factor: &MetricFactor,
    s: &State,
) -> Result<DMatrix<f64>> {
    let covectors = sys.control_covectors(&s.q, &s.v);
    check_dim("control covector rows", sys.dof(), covectors.nrows())?;
    check_dim("control inputs", sys.inputs(), covectors.ncols())?;
    let fields = factor.sharp_columns(&covectors);
    let scale = fields.amax();
    let rank = if scale > 0.0 {
        fields.rank(1e-10 * scale)
    } else {
        0
    };
    if rank < sys.inputs() {
        return Err(Error::DependentInputs {
            rank,
            inputs: sys.inputs(),
        });
    }
    Ok(fields)
}

/// Acceleration of the uncontrolled forced system.
pub fn drift_acceleration(sys: &dyn MechanicalSystem, s: &State) -> Result<DVector<f64>> {
    s.check_dof(sys.dof())?;
    let factor = factor_metric(sys, &s.q)?;
    Ok(drift_with(sys, &factor, s))
}

/// Control vector fields `Y^a = G^{-1} f^a` as the columns of an `n x m` matrix.
pub fn control_fields(sys: &dyn MechanicalSystem, s: &State) -> Result<DMatrix<f64>> {
    s.check_dof(sys.dof())?;
    let factor = factor_metric(sys, &s.q)?;
    fields_with(sys, &factor, s)
}

pub fn controlled_acceleration(
    sys: &dyn MechanicalSystem,
    s: &State,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("control", sys.inputs(), u.len())?;
    Snapshot::new(sys, s)?.controlled(u)
}

/// Total mechanical energy `1/2 v^T G(q) v + V(q)`.
pub fn energy(sys: &dyn MechanicalSystem, s: &State) -> f64 {
    let g = sys.metric(&s.q);
    0.5 * s.v.dot(&(g * &s.v)) + sys.potential(&s.q)
}
