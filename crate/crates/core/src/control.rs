//! Open-loop control signals: one control value per grid node, linear in between.

use serde::{Deserialize, Serialize};

use crate::dynamics::TimeGrid;
use crate::error::{contract, Result};

/// A piecewise-linear control on a uniform grid.
///
/// Values are stored node-major: node `k` occupies `values[k*dim..(k+1)*dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl ControlSignal {
    pub fn constant(grid: TimeGrid, value: &[f64]) -> Self {
        let values = (0..grid.n_nodes()).flat_map(|_| value.iter().copied()).collect();
        Self { grid, dim: value.len(), values }
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self::constant(grid, &vec![0.0; dim])
    }

    /// Samples `f` at each node time.
    pub fn from_fn<F>(grid: TimeGrid, dim: usize, f: F) -> Self
    where
        F: Fn(f64) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity(grid.n_nodes() * dim);
        for k in 0..grid.n_nodes() {
            let v = f(grid.time(k));
            assert_eq!(v.len(), dim, "control sample has wrong dimension");
            values.extend(v);
        }
        Self { grid, dim, values }
    }

    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(contract("control dimension must be positive"));
        }
        if values.len() != grid.n_nodes() * dim {
            return Err(contract(format!(
                "expected {} control values, got {}",
                grid.n_nodes() * dim,
                values.len()
            )));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Value halfway between node `k` and node `k + 1`.
    pub fn midpoint(&self, k: usize) -> Vec<f64> {
        self.node(k)
            .iter()
            .zip(self.node(k + 1))
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Linear interpolation at an arbitrary time, clamped to the horizon.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let n = self.grid.n_steps();
        let s = (t / self.grid.dt()).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n);
        if k == n {
            return self.node(n).to_vec();
        }
        let theta = s - k as f64;
        if theta == 0.0 {
            return self.node(k).to_vec();
        }
        self.node(k)
            .iter()
            .zip(self.node(k + 1))
            .map(|(a, b)| a + theta * (b - a))
            .collect()
    }

    /// Largest absolute control component.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Sup-norm distance to another signal on the same grid.
    pub fn sup_distance(&self, other: &ControlSignal) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "signals differ in shape");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Clamps every node componentwise into `[lower, upper]`.
    pub fn clip(&mut self, lower: &[f64], upper: &[f64]) {
        for node in self.values.chunks_mut(self.dim) {
            for ((v, lo), hi) in node.iter_mut().zip(lower).zip(upper) {
                *v = v.clamp(*lo, *hi);
            }
        }
    }

    pub fn within_bounds(&self, lower: &[f64], upper: &[f64]) -> bool {
        self.values.chunks(self.dim).all(|node| {
            node.iter()
                .zip(lower)
                .zip(upper)
                .all(|((v, lo), hi)| *v >= *lo && *v <= *hi)
        })
    }

    /// Quadrature weight of node `k` when integrating a piecewise-linear function:
    /// `Δt` in the interior and `Δt/2` at both ends.
    pub fn node_weight(&self, k: usize) -> f64 {
        node_weight(&self.grid, k)
    }
}

pub(crate) fn node_weight(grid: &TimeGrid, k: usize) -> f64 {
    if k == 0 || k == grid.n_steps() {
        0.5 * grid.dt()
    } else {
        grid.dt()
    }
}
