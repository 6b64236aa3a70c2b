//! Direct transcription oracle.
//!
//! The control node values form a flat decision vector and the expected cost
//! is minimized with central finite-difference gradients. Nothing here
//! touches costates while optimizing; stationarity residuals are attached
//! to the result afterwards so both solvers report the same shape.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::control::{node_weight, ControlSignal};
use crate::cost::{check_horizon, expected_cost, CostSpec};
use crate::distribution::{EnsembleRule, InitialDistribution, WeightedEnsemble};
use crate::dynamics::{ControlSystem, TimeGrid};
use crate::error::{contract, Error, Result};
use crate::hamiltonian::{
    abnormal_gradient_max, residual_norms, stationarity_residual, EnsembleExtremal, ExtremalParameter,
};
use crate::indirect::{bb_step, cost_floor, Diagnostics, SolveResult, SolverConfig, Termination};
use crate::numeric::fd_step;

/// The oracle cannot resolve gradient densities much below this.
pub const DIRECT_GRADIENT_FLOOR: f64 = 1e-6;
const STALL_LIMIT: usize = 8;

/// Negative gradient density of `σJ`, projected at active bounds.
fn descent_density(
    merit: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    values: &[f64],
    grid: &TimeGrid,
    dim: usize,
    lower: &[f64],
    upper: &[f64],
) -> Result<Vec<f64>> {
    let grads: Vec<f64> = (0..values.len())
        .into_par_iter()
        .map(|i| {
            let h = fd_step(values[i]);
            let mut plus = values.to_vec();
            let mut minus = values.to_vec();
            plus[i] += h;
            minus[i] -= h;
            Ok((merit(&plus)? - merit(&minus)?) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    Ok(grads
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let (k, j) = (i / dim, i % dim);
            let d = -g / node_weight(grid, k);
            let at_lower = values[i] <= lower[j] && d < 0.0;
            let at_upper = values[i] >= upper[j] && d > 0.0;
            if at_lower || at_upper {
                0.0
            } else {
                d
            }
        })
        .collect())
}

/// Minimizes the expected cost over node values by finite-difference
/// gradient descent with Barzilai–Borwein steps and Armijo backtracking.
pub fn solve_direct(
    system: &ControlSystem,
    dist: &InitialDistribution,
    cost: &CostSpec,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<SolveResult> {
    let ensemble = dist.discretize(config.ensemble, config.seed)?;
    solve_direct_on(system, &ensemble, cost, grid, config)
}

pub fn solve_direct_on(
    system: &ControlSystem,
    ensemble: &WeightedEnsemble,
    cost: &CostSpec,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let cost = config.effective_cost(cost);
    check_horizon(&cost, grid)?;
    if ensemble.dim() != system.state_dim() {
        return Err(contract("initial distribution dimension differs from the state dimension"));
    }
    let resolved = cost.resolved(system)?;
    let sign = config.objective.sign();
    let dim = system.control_dim();
    let lower = system.control_lower().to_vec();
    let upper = system.control_upper().to_vec();
    let merit = |v: &[f64]| -> Result<f64> {
        let u = ControlSignal::from_values(*grid, dim, v.to_vec())?;
        Ok(sign * expected_cost(system, &resolved, ensemble, &u, grid)?)
    };

    let mut values = config.initial_signal(system, grid)?.into_values();
    let mut j = merit(&values)?;
    let mut d = descent_density(&merit, &values, grid, dim, &lower, &upper)?;
    let mut diagnostics = Diagnostics { monotone: true, ..Diagnostics::default() };
    diagnostics.cost_history.push(sign * j);
    let tolerance = config.tolerance;
    let mut step = config.initial_step;
    let mut iterations = 0;
    let mut stalled = 0;
    let termination;
    loop {
        let dmax = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if dmax <= tolerance {
            termination = Termination::Converged;
            break;
        }
        if iterations >= config.max_iterations || stalled >= STALL_LIMIT {
            termination = if dmax <= DIRECT_GRADIENT_FLOOR.max(tolerance) {
                Termination::Converged
            } else {
                Termination::MaxIterations
            };
            break;
        }
        let mut trial_step = step;
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            let trial: Vec<f64> = values
                .iter()
                .zip(&d)
                .enumerate()
                .map(|(i, (u, g))| (u + trial_step * g).clamp(lower[i % dim], upper[i % dim]))
                .collect();
            let du: Vec<f64> = trial.iter().zip(&values).map(|(a, b)| a - b).collect();
            let predicted = crate::indirect::weighted_dot(grid, dim, &d, &du);
            match merit(&trial) {
                Ok(jt) if jt <= j - config.armijo_c * predicted + cost_floor(j) => {
                    accepted = Some((trial, jt, du, trial_step));
                    break;
                }
                Ok(_) | Err(Error::IntegrationDiverged { .. }) => trial_step *= config.backtrack_factor,
                Err(e) => return Err(e),
            }
        }
        let Some((trial, jt, du, used)) = accepted else {
            termination = if dmax <= DIRECT_GRADIENT_FLOOR.max(tolerance) {
                Termination::Converged
            } else {
                Termination::LineSearchFailed
            };
            break;
        };
        stalled = if (j - jt).abs() <= cost_floor(j) { stalled + 1 } else { 0 };
        let d_next = descent_density(&merit, &trial, grid, dim, &lower, &upper)?;
        let dr: Vec<f64> = d_next.iter().zip(&d).map(|(a, b)| a - b).collect();
        step = bb_step(grid, dim, &du, &dr, config.initial_step);
        values = trial;
        j = jt;
        d = d_next;
        diagnostics.step_sizes.push(used);
        diagnostics.cost_history.push(sign * j);
        iterations += 1;
    }

    // A posteriori residuals through the costate machinery.
    let control = ControlSignal::from_values(*grid, dim, values)?;
    let nu = ExtremalParameter::Normal.nu(config.objective);
    let ext = EnsembleExtremal::build(system, &resolved, ensemble, &control, grid, nu)?;
    let profile = residual_norms(&stationarity_residual(&ext, system, &resolved));
    diagnostics.abnormal_candidate = abnormal_gradient_max(&ext, system, &resolved) <= tolerance;
    Ok(SolveResult {
        expected_cost: ext.expected_cost,
        penalty_offset: resolved.penalty_offset(ensemble),
        residual_max: profile.iter().copied().fold(0.0, f64::max),
        residual_profile: profile,
        control,
        iterations,
        converged: termination == Termination::Converged,
        termination,
        nu,
        extremal: ExtremalParameter::Normal,
        penalty_mode: resolved.penalty_mode(),
        ensemble_rule: config.ensemble,
        seed: config.seed,
        ensemble_size: ensemble.len(),
        diagnostics,
    })
}

/// Outcome of [`grid_search_linear_family`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub alpha: f64,
    pub beta: f64,
    pub expected_cost: f64,
    /// Best sampled point before refinement.
    pub grid_best: (f64, f64, f64),
    pub refined: bool,
}

fn linspace(range: (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (range.0 + range.1)];
    }
    (0..n).map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64).collect()
}

/// Evaluates `u(t) = αt + β`, clipped to the admissible box, on a `resolution × resolution` grid of
/// `(α, β)`, then takes one Newton step on a quadratic fitted to the 3×3
/// neighbourhood of the best sample. The step is kept only if it lowers the cost.
pub fn grid_search_linear_family(
    system: &ControlSystem,
    dist: &InitialDistribution,
    cost: &CostSpec,
    grid: &TimeGrid,
    alpha_range: (f64, f64),
    beta_range: (f64, f64),
    resolution: usize,
) -> Result<LinearFit> {
    let ensemble = dist.discretize(EnsembleRule::default(), 0)?;
    grid_search_linear_family_on(system, &ensemble, cost, grid, alpha_range, beta_range, resolution)
}

pub fn grid_search_linear_family_on(
    system: &ControlSystem,
    ensemble: &WeightedEnsemble,
    cost: &CostSpec,
    grid: &TimeGrid,
    alpha_range: (f64, f64),
    beta_range: (f64, f64),
    resolution: usize,
) -> Result<LinearFit> {
    if system.control_dim() != 1 {
        return Err(contract("the linear family needs a scalar control"));
    }
    let resolved = cost.resolved(system)?;
    let eval = |a: f64, b: f64| -> Result<f64> {
        let mut u = ControlSignal::from_fn(*grid, 1, |t| vec![a * t + b]);
        u.clip(system.control_lower(), system.control_upper());
        expected_cost(system, &resolved, ensemble, &u, grid)
    };
    let resolution = resolution.max(1);
    let alphas = linspace(alpha_range, resolution);
    let betas = linspace(beta_range, resolution);
    let table: Vec<f64> = (0..resolution * resolution)
        .into_par_iter()
        .map(|i| eval(alphas[i / resolution], betas[i % resolution]).unwrap_or(f64::INFINITY))
        .collect();
    let (best, &best_cost) = table
        .iter()
        .enumerate()
        .fold((0, &f64::INFINITY), |acc, (i, c)| if *c < *acc.1 { (i, c) } else { acc });
    let (ia, ib) = (best / resolution, best % resolution);
    let grid_best = (alphas[ia], betas[ib], best_cost);
    let mut fit = LinearFit {
        alpha: grid_best.0,
        beta: grid_best.1,
        expected_cost: best_cost,
        grid_best,
        refined: false,
    };
    if resolution < 3 || !best_cost.is_finite() {
        return Ok(fit);
    }

    // Least-squares quadratic on the 3x3 window, centred at the window middle.
    let ca = ia.clamp(1, resolution - 2);
    let cb = ib.clamp(1, resolution - 2);
    let (a0, b0) = (alphas[ca], betas[cb]);
    let mut rows = Vec::with_capacity(54);
    let mut rhs = Vec::with_capacity(9);
    for da in 0..3 {
        for db in 0..3 {
            let x = alphas[ca + da - 1] - a0;
            let y = betas[cb + db - 1] - b0;
            rows.extend_from_slice(&[1.0, x, y, x * x, x * y, y * y]);
            rhs.push(table[(ca + da - 1) * resolution + cb + db - 1]);
        }
    }
    let a = DMatrix::from_row_slice(9, 6, &rows);
    let Ok(coef) = a.svd(true, true).solve(&DVector::from_vec(rhs), 1e-14) else {
        return Ok(fit);
    };
    let hess = DMatrix::from_row_slice(2, 2, &[2.0 * coef[3], coef[4], coef[4], 2.0 * coef[5]]);
    let grad = DVector::from_vec(vec![coef[1], coef[2]]);
    if let Some(chol) = hess.cholesky() {
        let delta = chol.solve(&(-grad));
        let (na, nb) = (a0 + delta[0], b0 + delta[1]);
        if let Ok(c) = eval(na, nb) {
            if c < fit.expected_cost {
                fit = LinearFit { alpha: na, beta: nb, expected_cost: c, grid_best, refined: true };
            }
        }
    }
    Ok(fit)
}
