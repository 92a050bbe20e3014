//! Central finite differences with a scale-aware step `h = sqrt(eps) * (1 + |x|)`.

use nalgebra::{DMatrix, DVector};

pub fn step(x: f64) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + x.abs())
}

/// Step for second differences, where the roundoff term scales as `eps / h^2`.
pub fn second_step(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * (1.0 + x.abs())
}

pub fn gradient<F>(f: F, x: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |k, _| {
        let h = step(x[k]);
        probe[k] = x[k] + h;
        let fp = f(&probe);
        probe[k] = x[k] - h;
        let fm = f(&probe);
        probe[k] = x[k];
        (fp - fm) / (2.0 * h)
    })
}

/// Jacobian of a vector map; row `r` holds the partials of output `r`.
pub fn jacobian<F>(f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut probe = x.clone();
    let mut columns = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let h = step(x[k]);
        probe[k] = x[k] + h;
        let fp = f(&probe);
        probe[k] = x[k] - h;
        let fm = f(&probe);
        probe[k] = x[k];
        columns.push((fp - fm) / (2.0 * h));
    }
    if columns.is_empty() {
        return DMatrix::zeros(f(x).len(), 0);
    }
    DMatrix::from_columns(&columns)
}

/// Partial derivatives `d M / d x_k` of a matrix-valued map, one matrix per coordinate.
pub fn matrix_partials<F>(f: F, x: &DVector<f64>) -> Vec<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut probe = x.clone();
    (0..x.len())
        .map(|k| {
            let h = step(x[k]);
            probe[k] = x[k] + h;
            let fp = f(&probe);
            probe[k] = x[k] - h;
            let fm = f(&probe);
            probe[k] = x[k];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Hessian-vector contraction `sum_i d^2 f / (dx_k dx_i) w_i` for every output row.
pub fn hessian_contraction<F>(f: F, x: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let center = f(x);
    let mut out = DMatrix::zeros(center.len(), n);
    let mut probe = x.clone();
    let mut eval = |k: usize, sk: f64, i: usize, si: f64| {
        probe[k] += sk;
        probe[i] += si;
        let r = f(&probe);
        probe[k] = x[k];
        probe[i] = x[i];
        r
    };
    for k in 0..n {
        let hk = second_step(x[k]);
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let second = if i == k {
                (eval(k, hk, k, 0.0) - &center * 2.0 + eval(k, -hk, k, 0.0)) / (hk * hk)
            } else {
                let hi = second_step(x[i]);
                (eval(k, hk, i, hi) - eval(k, hk, i, -hi) - eval(k, -hk, i, hi)
                    + eval(k, -hk, i, -hi))
                    / (4.0 * hk * hi)
            };
            out.column_mut(k).axpy(w[i], &second, 1.0);
        }
    }
    out
}
