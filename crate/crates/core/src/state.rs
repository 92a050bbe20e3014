use nalgebra::DVector;

use crate::error::{check_dim, Result};

/// A point of phase space: configuration, velocity and time.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub t: f64,
}

impl State {
    pub fn new(q: DVector<f64>, v: DVector<f64>, t: f64) -> Self {
        Self { q, v, t }
    }

    pub fn from_slices(q: &[f64], v: &[f64], t: f64) -> Self {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(v), t)
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    pub fn check_dof(&self, n: usize) -> Result<()> {
        check_dim("configuration", n, self.q.len())?;
        check_dim("velocity", n, self.v.len())
    }

    /// Flattened `(t, q, v)` used in diagnostics.
    pub fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.t)
            .chain(self.q.iter().copied())
            .chain(self.v.iter().copied())
            .collect()
    }
}
