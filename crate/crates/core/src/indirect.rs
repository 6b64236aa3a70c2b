//! The expected-Hamiltonian (PMP*) solver.
//!
//! Each iteration rolls every ensemble member forward under the shared
//! control, sweeps each member's costate backward, and moves the control
//! along the stationarity residual `r = ∂E[h^ν]/∂u`, which is an ascent
//! direction of the expected Hamiltonian and a descent direction of the
//! expected cost. Step lengths come from the Barzilai–Borwein rule and are
//! accepted by Armijo backtracking on the expected cost itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::{node_weight, ControlSignal};
use crate::cost::{check_horizon, expected_cost, CostSpec, PenaltyMode};
use crate::distribution::{EnsembleRule, InitialDistribution, WeightedEnsemble};
use crate::dynamics::{ControlSystem, TimeGrid};
use crate::error::{contract, Error, Result};
use crate::hamiltonian::{
    abnormal_gradient_max, hamiltonian_profile, pointwise_maximize, residual_norms, stationarity_residual,
    EnsembleExtremal, ExtremalParameter, Objective, SearchConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Convergence threshold on the largest node residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Step length used on the first iteration and whenever the BB step is unusable.
    pub initial_step: f64,
    /// Sufficient-decrease constant.
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub ensemble: EnsembleRule,
    pub seed: u64,
    /// Overrides the cost's own penalty mode when set.
    pub penalty_mode: Option<PenaltyMode>,
    /// Constant initial control; empty means zero.
    pub initial_control: Vec<f64>,
    pub objective: Objective,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 5000,
            initial_step: 0.5,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 60,
            ensemble: EnsembleRule::default(),
            seed: 0,
            penalty_mode: None,
            initial_control: Vec::new(),
            objective: Objective::Minimize,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(contract("tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(contract("max_iterations must be at least 1"));
        }
        let step_ok = self.initial_step > 0.0 && self.initial_step.is_finite();
        let factor_ok = self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0;
        if !step_ok || !factor_ok {
            return Err(contract("step parameters out of range"));
        }
        Ok(())
    }

    pub(crate) fn effective_cost(&self, cost: &CostSpec) -> CostSpec {
        match self.penalty_mode {
            Some(mode) => cost.clone().with_penalty_mode(mode),
            None => cost.clone(),
        }
    }

    pub(crate) fn initial_signal(&self, system: &ControlSystem, grid: &TimeGrid) -> Result<ControlSignal> {
        let m = system.control_dim();
        let value = if self.initial_control.is_empty() {
            vec![0.0; m]
        } else if self.initial_control.len() == m {
            self.initial_control.clone()
        } else {
            return Err(contract("initial_control has the wrong dimension"));
        };
        let mut u = ControlSignal::constant(*grid, &value);
        u.clip(system.control_lower(), system.control_upper());
        Ok(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub step_sizes: Vec<f64>,
    pub cost_history: Vec<f64>,
    /// Every accepted iterate had cost no larger than its predecessor (up to rounding).
    pub monotone: bool,
    /// The `ν = 0` expected Hamiltonian is flat in `u` at every node.
    pub abnormal_candidate: bool,
    /// Nodes where the pointwise maximization was unbounded.
    pub abnormal_nodes: Vec<usize>,
    /// Largest gap between the control and the pointwise maximizer of `E[h^ν]`.
    pub max_condition_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub control: ControlSignal,
    /// Expected cost in the effective penalty mode.
    pub expected_cost: f64,
    /// `E[I(q0)]` when the penalty was absorbed, zero otherwise.
    pub penalty_offset: f64,
    pub residual_max: f64,
    pub residual_profile: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub nu: f64,
    pub extremal: ExtremalParameter,
    pub penalty_mode: PenaltyMode,
    pub ensemble_rule: EnsembleRule,
    pub seed: u64,
    pub ensemble_size: usize,
    pub diagnostics: Diagnostics,
}

impl SolveResult {
    /// Expected cost including the terminal penalty in either mode.
    pub fn total_cost(&self) -> f64 {
        self.expected_cost + self.penalty_offset
    }
}

/// `⟨a, b⟩` in the node-weighted inner product of piecewise-linear controls.
pub(crate) fn weighted_dot(grid: &TimeGrid, dim: usize, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..grid.n_nodes() {
        let w = node_weight(grid, k);
        for j in 0..dim {
            acc += w * a[k * dim + j] * b[k * dim + j];
        }
    }
    acc
}

/// Rounding allowance when comparing two expected costs.
pub(crate) fn cost_floor(j: f64) -> f64 {
    64.0 * f64::EPSILON * (1.0 + j.abs())
}

pub(crate) fn flatten(residual: &[Vec<f64>]) -> Vec<f64> {
    residual.iter().flatten().copied().collect()
}

/// Barzilai–Borwein step `⟨s,s⟩ / ⟨s,y⟩` for the merit `σJ` whose negative
/// gradient density is `r`, so `y = -(r_new - r_old)`.
pub(crate) fn bb_step(grid: &TimeGrid, dim: usize, du: &[f64], dr: &[f64], fallback: f64) -> f64 {
    let ss = weighted_dot(grid, dim, du, du);
    let sy = -weighted_dot(grid, dim, du, dr);
    if sy > 0.0 && ss > 0.0 {
        (ss / sy).clamp(1e-10, 1e10)
    } else {
        fallback
    }
}

struct Iterate {
    control: ControlSignal,
    extremal: EnsembleExtremal,
    residual: Vec<Vec<f64>>,
    merit: f64,
}

fn evaluate(
    system: &ControlSystem,
    cost: &CostSpec,
    ensemble: &WeightedEnsemble,
    control: ControlSignal,
    nu: f64,
    sign: f64,
) -> Result<Iterate> {
    let grid = *control.grid();
    let extremal = EnsembleExtremal::build(system, cost, ensemble, &control, &grid, nu)?;
    let residual = stationarity_residual(&extremal, system, cost);
    let merit = sign * extremal.expected_cost;
    Ok(Iterate { control, extremal, residual, merit })
}

/// Solves the open-loop problem over an already discretized ensemble.
pub fn solve_on_ensemble(
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
    let nu = ExtremalParameter::Normal.nu(config.objective);
    let dim = system.control_dim();
    let lower = system.control_lower();
    let upper = system.control_upper();

    let mut current = evaluate(system, &resolved, ensemble, config.initial_signal(system, grid)?, nu, sign)?;
    let mut diagnostics = Diagnostics { monotone: true, ..Diagnostics::default() };
    diagnostics.cost_history.push(current.extremal.expected_cost);

    let mut step = config.initial_step;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    loop {
        let rmax = residual_norms(&current.residual).into_iter().fold(0.0, f64::max);
        if rmax <= config.tolerance {
            termination = Termination::Converged;
            break;
        }
        if iterations >= config.max_iterations {
            break;
        }
        let direction = flatten(&current.residual);
        let mut trial_step = step;
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            let mut values: Vec<f64> = current
                .control
                .values()
                .iter()
                .zip(&direction)
                .map(|(u, d)| u + trial_step * d)
                .collect();
            for node in values.chunks_mut(dim) {
                for ((v, lo), hi) in node.iter_mut().zip(lower).zip(upper) {
                    *v = v.clamp(*lo, *hi);
                }
            }
            let du: Vec<f64> = values.iter().zip(current.control.values()).map(|(a, b)| a - b).collect();
            let predicted = weighted_dot(grid, dim, &direction, &du);
            let trial = ControlSignal::from_values(*grid, dim, values)?;
            let candidate = match evaluate(system, &resolved, ensemble, trial, nu, sign) {
                Ok(c) => c,
                Err(Error::IntegrationDiverged { .. }) => {
                    trial_step *= config.backtrack_factor;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if candidate.merit <= current.merit - config.armijo_c * predicted + cost_floor(current.merit) {
                accepted = Some((candidate, trial_step, du));
                break;
            }
            trial_step *= config.backtrack_factor;
        }
        let Some((next, used, du)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        if next.merit > current.merit + cost_floor(current.merit) {
            diagnostics.monotone = false;
        }
        debug_assert!(diagnostics.monotone, "expected cost increased across an accepted step");
        let dr: Vec<f64> = flatten(&next.residual)
            .iter()
            .zip(&direction)
            .map(|(a, b)| a - b)
            .collect();
        step = bb_step(grid, dim, &du, &dr, config.initial_step);
        diagnostics.step_sizes.push(used);
        diagnostics.cost_history.push(next.extremal.expected_cost);
        current = next;
        iterations += 1;
    }

    let profile = residual_norms(&current.residual);
    let residual_max = profile.iter().copied().fold(0.0, f64::max);

    // Pointwise maximum-condition check and abnormal-structure detection.
    let search = SearchConfig::default();
    let mut gap = 0.0_f64;
    for k in 0..grid.n_nodes() {
        match pointwise_maximize(&current.extremal, k, system, &resolved, &search) {
            Ok(best) => {
                for (a, b) in best.iter().zip(current.control.node(k)) {
                    gap = gap.max((a - b).abs());
                }
            }
            Err(Error::AbnormalStructure { node }) => diagnostics.abnormal_nodes.push(node),
            Err(e) => return Err(e),
        }
    }
    diagnostics.max_condition_gap = Some(gap);
    diagnostics.abnormal_candidate =
        abnormal_gradient_max(&current.extremal, system, &resolved) <= config.tolerance;

    Ok(SolveResult {
        penalty_offset: resolved.penalty_offset(ensemble),
        expected_cost: current.extremal.expected_cost,
        control: current.control,
        residual_max,
        residual_profile: profile,
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

/// PMP* solve: discretizes the initial distribution per `config.ensemble`
/// and runs the expected-Hamiltonian iteration in the normal case.
pub fn solve_pmp_star(
    system: &ControlSystem,
    dist: &InitialDistribution,
    cost: &CostSpec,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<SolveResult> {
    let ensemble = dist.discretize(config.ensemble, config.seed)?;
    solve_on_ensemble(system, &ensemble, cost, grid, config)
}

/// Classical deterministic PMP: the same iteration with one ensemble member.
pub fn solve_pmp(
    system: &ControlSystem,
    q0: &[f64],
    cost: &CostSpec,
    grid: &TimeGrid,
    config: &SolverConfig,
) -> Result<SolveResult> {
    solve_on_ensemble(system, &WeightedEnsemble::single(q0.to_vec()), cost, grid, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub residual_tolerance: f64,
    /// Allowed relative spread of `t ↦ E[h^ν]`.
    pub constancy_tolerance: f64,
    pub perturbations: usize,
    /// Sup-norm of each random perturbation, relative to `1 + max|u|`.
    pub perturbation_size: f64,
    /// Allowed cost improvement, relative to `1 + |J|`.
    pub cost_tolerance: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            residual_tolerance: 1e-6,
            constancy_tolerance: 1e-5,
            perturbations: 100,
            perturbation_size: 1e-3,
            cost_tolerance: 1e-9,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub residual_max: f64,
    pub worst_node: usize,
    pub failing_nodes: Vec<usize>,
    pub hamiltonian_spread: f64,
    pub hamiltonian_mean: f64,
    pub constancy_ok: bool,
    pub nontrivial: bool,
    /// Largest cost decrease found among the random perturbations (positive = improvement).
    pub best_improvement: f64,
    pub perturbation_ok: bool,
}

impl VerificationReport {
    pub fn residual_ok(&self) -> bool {
        self.failing_nodes.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.residual_ok() && self.constancy_ok && self.nontrivial && self.perturbation_ok
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.residual_ok() {
            out.push(format!(
                "stationarity: {} node(s) above tolerance, worst node {} ({:e})",
                self.failing_nodes.len(),
                self.worst_node,
                self.residual_max
            ));
        }
        if !self.constancy_ok {
            out.push(format!("expected Hamiltonian varies by {:e}", self.hamiltonian_spread));
        }
        if !self.nontrivial {
            out.push("costates vanish identically with ν = 0".to_string());
        }
        if !self.perturbation_ok {
            out.push(format!("a perturbation lowered the cost by {:e}", self.best_improvement));
        }
        out
    }
}

/// Re-checks a solution from scratch: stationarity, constancy of the expected
/// Hamiltonian, nontriviality, and local optimality under random perturbations.
pub fn verify_extremal(
    result: &SolveResult,
    system: &ControlSystem,
    dist: &InitialDistribution,
    cost: &CostSpec,
    grid: &TimeGrid,
    options: &VerifyOptions,
) -> Result<VerificationReport> {
    let ensemble = dist.discretize(result.ensemble_rule, result.seed)?;
    let cost = cost.clone().with_penalty_mode(result.penalty_mode);
    let resolved = cost.resolved(system)?;
    if result.control.grid() != grid {
        return Err(contract("result was produced on a different grid"));
    }
    let ext = EnsembleExtremal::build(system, &resolved, &ensemble, &result.control, grid, result.nu)?;
    let norms = residual_norms(&stationarity_residual(&ext, system, &resolved));
    let (worst_node, residual_max) = norms
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (k, v)| if v > best.1 { (k, v) } else { best });
    let failing_nodes = norms
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > options.residual_tolerance)
        .map(|(k, _)| k)
        .collect();

    let profile = hamiltonian_profile(&ext, system, &resolved);
    let hmax = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hmin = profile.iter().copied().fold(f64::INFINITY, f64::min);
    let hamiltonian_mean = profile.iter().sum::<f64>() / profile.len() as f64;
    let hamiltonian_spread = hmax - hmin;
    let constancy_ok = hamiltonian_spread <= options.constancy_tolerance * (1.0 + hamiltonian_mean.abs());
    let nontrivial = result.nu != 0.0 || !ext.costates_vanish();

    let sign = if result.nu > 0.0 { -1.0 } else { 1.0 };
    let base = sign * ext.expected_cost;
    let size = options.perturbation_size * (1.0 + result.control.max_abs());
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best_improvement = f64::NEG_INFINITY;
    for _ in 0..options.perturbations {
        let raw: Vec<f64> = (0..result.control.values().len()).map(|_| rng.sample(StandardNormal)).collect();
        let scale = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for direction in [1.0, -1.0] {
            let values = result
                .control
                .values()
                .iter()
                .zip(&raw)
                .map(|(u, d)| u + direction * size * d / scale)
                .collect();
            let mut trial = ControlSignal::from_values(*grid, result.control.dim(), values)?;
            trial.clip(system.control_lower(), system.control_upper());
            let j = sign * expected_cost(system, &resolved, &ensemble, &trial, grid)?;
            best_improvement = best_improvement.max(base - j);
        }
    }
    let perturbation_ok = options.perturbations == 0
        || best_improvement <= options.cost_tolerance * (1.0 + base.abs());

    Ok(VerificationReport {
        residual_max,
        worst_node,
        failing_nodes,
        hamiltonian_spread,
        hamiltonian_mean,
        constancy_ok,
        nontrivial,
        best_improvement,
        perturbation_ok,
    })
}
