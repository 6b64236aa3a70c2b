//! Independent oracles for the test suites. Nothing here calls the solvers.
#![allow(dead_code)]

use openloop_pmp::{expected_cost, ControlSignal, CostSpec, ControlSystem, TimeGrid, WeightedEnsemble};

/// Closed-form open-loop optimum of the deterministic braking problem
/// `min ∫₀ᵀ u² + k (x₁(T)² + x₂(T)²)`, `x₁' = x₂`, `x₂' = u`.
///
/// Stationarity gives `u(s) = -k (X₁ (T - s) + X₂)` with `(X₁, X₂)` the
/// terminal state, which closes into a 2×2 linear system.
#[derive(Debug, Clone, Copy)]
pub struct BrakingOptimum {
    pub x1_end: f64,
    pub x2_end: f64,
    pub k: f64,
    pub t1: f64,
    pub cost: f64,
}

impl BrakingOptimum {
    pub fn new(x0: f64, v0: f64, k: f64, t1: f64) -> Self {
        let a = x0 + v0 * t1;
        let b = v0;
        let m11 = 1.0 + k * t1.powi(3) / 3.0;
        let m12 = k * t1 * t1 / 2.0;
        let m22 = 1.0 + k * t1;
        let det = m11 * m22 - m12 * m12;
        let x1_end = (a * m22 - m12 * b) / det;
        let x2_end = (m11 * b - m12 * a) / det;
        // ∫₀ᵀ k² (X₁ (T-s) + X₂)² ds
        let energy = k * k * (x1_end * x1_end * t1.powi(3) / 3.0 + x1_end * x2_end * t1 * t1 + x2_end * x2_end * t1);
        let cost = energy + k * (x1_end * x1_end + x2_end * x2_end);
        Self { x1_end, x2_end, k, t1, cost }
    }

    pub fn control(&self, t: f64) -> f64 {
        -self.k * (self.x1_end * (self.t1 - t) + self.x2_end)
    }
}

/// `k · E[noise in x₁(T)² + noise in x₂(T)²]` for initial covariance `Σ`
/// under the double integrator; independent of the control.
pub fn braking_variance_term(k: f64, t1: f64, cov: [[f64; 2]; 2]) -> f64 {
    let var_x1 = cov[0][0] + 2.0 * t1 * cov[0][1] + t1 * t1 * cov[1][1];
    let var_x2 = cov[1][1];
    k * (var_x1 + var_x2)
}

/// `E[k (x₁² + x₂²)]` at time zero for a Gaussian with diagonal variances.
pub fn initial_penalty_mean(k: f64, mean: [f64; 2], variances: [f64; 2]) -> f64 {
    k * (mean[0] * mean[0] + mean[1] * mean[1] + variances[0] + variances[1])
}

/// Central difference of the expected cost with respect to one node value,
/// divided by the node's quadrature weight so it is comparable with a
/// gradient density.
pub fn fd_gradient_density(
    system: &ControlSystem,
    cost: &CostSpec,
    ensemble: &WeightedEnsemble,
    u: &ControlSignal,
    grid: &TimeGrid,
    index: usize,
) -> f64 {
    let h = 1e-6 * (1.0 + u.values()[index].abs());
    let mut plus = u.clone();
    plus.values_mut()[index] += h;
    let mut minus = u.clone();
    minus.values_mut()[index] -= h;
    let jp = expected_cost(system, cost, ensemble, &plus, grid).unwrap();
    let jm = expected_cost(system, cost, ensemble, &minus, grid).unwrap();
    let k = index / u.dim();
    let n = grid.n_steps();
    let w = if k == 0 || k == n { grid.dt() / 2.0 } else { grid.dt() };
    (jp - jm) / (2.0 * h) / w
}

/// Least-squares affine fit `αt + β` of node values and its largest residual.
pub fn affine_fit(times: &[f64], values: &[f64]) -> (f64, f64, f64) {
    let n = times.len() as f64;
    let st: f64 = times.iter().sum();
    let su: f64 = values.iter().sum();
    let stt: f64 = times.iter().map(|t| t * t).sum();
    let stu: f64 = times.iter().zip(values).map(|(t, u)| t * u).sum();
    let alpha = (n * stu - st * su) / (n * stt - st * st);
    let beta = (su - alpha * st) / n;
    let worst = times
        .iter()
        .zip(values)
        .map(|(t, u)| (u - alpha * t - beta).abs())
        .fold(0.0, f64::max);
    (alpha, beta, worst)
}
