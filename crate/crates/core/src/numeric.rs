//! Small dense helpers shared across modules.

use nalgebra::DMatrix;

/// Central-difference step for a coordinate of magnitude `x`.
#[inline]
pub(crate) fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Central-difference Jacobian of `f` with respect to `x`; `f(x)` has length `rows`.
pub(crate) fn fd_jacobian<F>(x: &[f64], rows: usize, f: F) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        for i in 0..rows {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Central-difference gradient of a scalar function.
pub(crate) fn fd_gradient<F>(x: &[f64], f: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = fd_step(x[j]);
            probe[j] = x[j] + h;
            let plus = f(&probe);
            probe[j] = x[j] - h;
            let minus = f(&probe);
            probe[j] = x[j];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `Mᵀ v` for a column-major matrix and a plain slice.
pub(crate) fn transpose_mul(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.nrows(), v.len());
    (0..m.ncols())
        .map(|j| m.column(j).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Cubic Hermite value at the midpoint of an interval of width `h`.
#[inline]
pub(crate) fn hermite_midpoint(y0: f64, y1: f64, dy0: f64, dy1: f64, h: f64) -> f64 {
    0.5 * (y0 + y1) + 0.125 * h * (dy0 - dy1)
}
