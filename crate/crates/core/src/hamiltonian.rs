//! The generalized Hamiltonian family `h_u^ν(λ) = <λ, f(q,u)> + ν φ(q,u)`
//! and its expectation over an ensemble of costates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{node_weight, ControlSignal};
use crate::cost::{rollout_ensemble, weighted_total, CostSpec, MemberRollout, PenaltyMode};
use crate::distribution::WeightedEnsemble;
use crate::dynamics::{integrate_costate_backward, ControlSystem, CostateTrajectory, TimeGrid, Trajectory};
use crate::error::{contract, Error, Result};
use crate::numeric::{dot, transpose_mul};

/// Normalization of the cost multiplier: abnormal `ν = 0` or normal `|ν| = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremalParameter {
    Abnormal,
    Normal,
}

/// Minimization uses `ν ∈ {0, -1}`, maximization `ν ∈ {0, +1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Minimize,
    Maximize,
}

impl Objective {
    /// `+1` when minimizing, `-1` when maximizing.
    pub fn sign(self) -> f64 {
        match self {
            Objective::Minimize => 1.0,
            Objective::Maximize => -1.0,
        }
    }
}

impl ExtremalParameter {
    pub fn nu(self, objective: Objective) -> f64 {
        match self {
            ExtremalParameter::Abnormal => 0.0,
            ExtremalParameter::Normal => -objective.sign(),
        }
    }

    pub fn from_nu(nu: f64) -> Result<Self> {
        if nu == 0.0 {
            Ok(ExtremalParameter::Abnormal)
        } else if nu == -1.0 || nu == 1.0 {
            Ok(ExtremalParameter::Normal)
        } else {
            Err(contract(format!("ν must be 0 or ±1, got {nu}")))
        }
    }
}

/// `<λ, f(q,u)> + ν φ(q,u)`.
pub fn hamiltonian_value(
    lambda: &[f64],
    q: &[f64],
    u: &[f64],
    nu: f64,
    system: &ControlSystem,
    cost: &CostSpec,
) -> f64 {
    let mut h = dot(lambda, &system.eval(q, u));
    if nu != 0.0 {
        h += nu * cost.running(q, u);
    }
    h
}

/// `∂h/∂u = (∂f/∂u)ᵀ λ + ν ∇_u φ`.
pub fn hamiltonian_control_gradient(
    lambda: &[f64],
    q: &[f64],
    u: &[f64],
    nu: f64,
    system: &ControlSystem,
    cost: &CostSpec,
) -> Vec<f64> {
    let mut g = transpose_mul(&system.jac_u(q, u), lambda);
    if nu != 0.0 {
        for (gi, ci) in g.iter_mut().zip(cost.grad_u(q, u)) {
            *gi += nu * ci;
        }
    }
    g
}

/// Per-member states and costates under one shared control.
#[derive(Debug, Clone)]
pub struct EnsembleExtremal {
    pub control: ControlSignal,
    pub weights: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    pub costates: Vec<CostateTrajectory>,
    pub nu: f64,
    /// Expected cost of `control` in the cost's penalty mode.
    pub expected_cost: f64,
}

/// Terminal covector: `ν·DI(q(t1))` under transversality, zero once absorbed.
pub fn terminal_covector(cost: &CostSpec, q_final: &[f64], nu: f64) -> Vec<f64> {
    match (cost.terminal_penalty(), cost.penalty_mode()) {
        (Some(p), PenaltyMode::TerminalTransversality) if nu != 0.0 => {
            p.gradient(q_final).into_iter().map(|g| nu * g).collect()
        }
        _ => vec![0.0; q_final.len()],
    }
}

impl EnsembleExtremal {
    /// Forward rollouts plus backward costate sweeps. `cost` must be resolved.
    pub fn build(
        system: &ControlSystem,
        cost: &CostSpec,
        ensemble: &WeightedEnsemble,
        control: &ControlSignal,
        grid: &TimeGrid,
        nu: f64,
    ) -> Result<Self> {
        let rollouts = rollout_ensemble(system, cost, ensemble, control, grid)?;
        Self::from_rollouts(system, cost, ensemble, control, rollouts, nu)
    }

    pub fn from_rollouts(
        system: &ControlSystem,
        cost: &CostSpec,
        ensemble: &WeightedEnsemble,
        control: &ControlSignal,
        rollouts: Vec<MemberRollout>,
        nu: f64,
    ) -> Result<Self> {
        let expected_cost = weighted_total(&rollouts, ensemble);
        let trajectories: Vec<Trajectory> = rollouts.into_iter().map(|r| r.trajectory).collect();
        let costates = trajectories
            .par_iter()
            .map(|traj| {
                let lambda_t1 = terminal_covector(cost, traj.final_state(), nu);
                integrate_costate_backward(system, traj, control, &lambda_t1, nu, |q, u| cost.grad_q(q, u))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            control: control.clone(),
            weights: ensemble.weights().to_vec(),
            trajectories,
            costates,
            nu,
            expected_cost,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.control.grid()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// True when every member's costate vanishes identically.
    pub fn costates_vanish(&self) -> bool {
        self.costates.iter().all(CostateTrajectory::is_identically_zero)
    }

    fn expected_gradient_at<'a, I>(&self, members: I, u: &[f64], system: &ControlSystem, cost: &CostSpec) -> Vec<f64>
    where
        I: Iterator<Item = (Vec<f64>, Vec<f64>)> + 'a,
    {
        let mut acc = vec![0.0; u.len()];
        for ((q, lambda), w) in members.zip(&self.weights) {
            let g = hamiltonian_control_gradient(&lambda, &q, u, self.nu, system, cost);
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += w * gi;
            }
        }
        acc
    }

    /// `∂/∂u E[h^ν]` at node `k` with the trial control `u`.
    pub fn control_gradient(&self, k: usize, u: &[f64], system: &ControlSystem, cost: &CostSpec) -> Vec<f64> {
        let members = self
            .trajectories
            .iter()
            .zip(&self.costates)
            .map(move |(t, l)| (t.state(k).to_vec(), l.costate(k).to_vec()));
        self.expected_gradient_at(members, u, system, cost)
    }

    fn midpoint_gradient(&self, k: usize, system: &ControlSystem, cost: &CostSpec) -> Vec<f64> {
        let u = self.control.midpoint(k);
        let members = self
            .trajectories
            .iter()
            .zip(&self.costates)
            .map(move |(t, l)| (t.midpoint(k), l.midpoint(k)));
        self.expected_gradient_at(members, &u, system, cost)
    }
}

/// `E[h^ν]` at node `t_index` with the trial control `u` substituted for every member.
pub fn expected_hamiltonian(
    ext: &EnsembleExtremal,
    u: &[f64],
    t_index: usize,
    system: &ControlSystem,
    cost: &CostSpec,
) -> f64 {
    let mut acc = 0.0;
    for ((traj, lam), w) in ext.trajectories.iter().zip(&ext.costates).zip(&ext.weights) {
        acc += w * hamiltonian_value(lam.costate(t_index), traj.state(t_index), u, ext.nu, system, cost);
    }
    acc
}

/// `t_k ↦ E[h^ν]` evaluated with the extremal's own control.
pub fn hamiltonian_profile(ext: &EnsembleExtremal, system: &ControlSystem, cost: &CostSpec) -> Vec<f64> {
    (0..ext.grid().n_nodes())
        .map(|k| expected_hamiltonian(ext, ext.control.node(k), k, system, cost))
        .collect()
}

/// Per-node stationarity residual `r_k ∈ R^m`.
///
/// `r_k` is the average of `∂E[h^ν]/∂u` over the support of node `k`'s
/// piecewise-linear basis function `b_k`, weighted by `b_k`:
/// `r_k = ∫ b_k(t) ∂_u E[h^ν](t) dt / ∫ b_k(t) dt`, evaluated by Simpson's
/// rule on each step with Hermite-interpolated midpoint states and costates.
/// It coincides with the pointwise gradient wherever that gradient is affine
/// across the support, and `-w_k·r_k` is the gradient of the expected cost
/// with respect to the node value (up to discretization error).
///
/// Components at an active bound whose sign points out of the box are zeroed.
pub fn stationarity_residual(ext: &EnsembleExtremal, system: &ControlSystem, cost: &CostSpec) -> Vec<Vec<f64>> {
    let grid = *ext.grid();
    let steps = grid.n_steps();
    let h = grid.dt();
    let at_nodes: Vec<Vec<f64>> = (0..=steps)
        .into_par_iter()
        .map(|k| ext.control_gradient(k, ext.control.node(k), system, cost))
        .collect();
    let at_mids: Vec<Vec<f64>> = (0..steps)
        .into_par_iter()
        .map(|k| ext.midpoint_gradient(k, system, cost))
        .collect();

    let m = ext.control.dim();
    let lower = system.control_lower();
    let upper = system.control_upper();
    (0..=steps)
        .map(|k| {
            let weight = node_weight(&grid, k);
            let mut r = vec![0.0; m];
            for j in 0..m {
                let mut integral = 0.0;
                if k > 0 {
                    integral += h / 6.0 * (2.0 * at_mids[k - 1][j] + at_nodes[k][j]);
                }
                if k < steps {
                    integral += h / 6.0 * (at_nodes[k][j] + 2.0 * at_mids[k][j]);
                }
                r[j] = integral / weight;
                let u = ext.control.node(k)[j];
                if (u >= upper[j] && r[j] > 0.0) || (u <= lower[j] && r[j] < 0.0) {
                    r[j] = 0.0;
                }
            }
            r
        })
        .collect()
}

/// Infinity norm of each node residual.
pub fn residual_norms(residual: &[Vec<f64>]) -> Vec<f64> {
    residual
        .iter()
        .map(|r| r.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        .collect()
}

/// Largest `‖E[(∂f/∂u)ᵀ λ]‖_∞` over nodes, i.e. the control gradient of the
/// abnormal (`ν = 0`) expected Hamiltonian.
pub fn abnormal_gradient_max(ext: &EnsembleExtremal, system: &ControlSystem, cost: &CostSpec) -> f64 {
    let abnormal = EnsembleExtremal { nu: 0.0, ..ext.clone() };
    (0..=ext.grid().n_steps())
        .map(|k| {
            abnormal
                .control_gradient(k, ext.control.node(k), system, cost)
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
        })
        .fold(0.0, f64::max)
}

/// Settings for [`pointwise_maximize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub max_expansions: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_sweeps: 50, max_expansions: 200 }
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Maximizer of `E[h^ν]` over the control box at node `t_index`.
///
/// Ties are broken toward the smallest-magnitude control.
pub fn pointwise_maximize(
    ext: &EnsembleExtremal,
    t_index: usize,
    system: &ControlSystem,
    cost: &CostSpec,
    search: &SearchConfig,
) -> Result<Vec<f64>> {
    let m = system.control_dim();
    let lower = system.control_lower();
    let upper = system.control_upper();
    let value = |u: &[f64]| expected_hamiltonian(ext, u, t_index, system, cost);

    let mut start = vec![0.0; m];
    system.clip_control(&mut start);

    if system.is_control_affine() && cost.is_quadratic_in_u() {
        if let Some(u) = quadratic_maximizer(ext, t_index, system, cost, &start) {
            let mut clipped = u.clone();
            system.clip_control(&mut clipped);
            if clipped == u {
                return Ok(u);
            }
            start = clipped;
        }
    }

    let mut u = start;
    for _ in 0..search.max_sweeps {
        let mut moved = 0.0_f64;
        for j in 0..m {
            let before = u[j];
            let line = |s: f64| {
                let mut trial = u.clone();
                trial[j] = s;
                value(&trial)
            };
            u[j] = maximize_line(line, before, lower[j], upper[j], search)
                .map_err(|_| Error::AbnormalStructure { node: t_index })?;
            moved = moved.max((u[j] - before).abs());
        }
        if moved <= search.tolerance {
            break;
        }
    }
    Ok(u)
}

/// Closed form for a concave quadratic: `u* = u0 − H⁻¹ g(u0)`.
fn quadratic_maximizer(
    ext: &EnsembleExtremal,
    k: usize,
    system: &ControlSystem,
    cost: &CostSpec,
    u0: &[f64],
) -> Option<Vec<f64>> {
    let m = u0.len();
    let g0 = ext.control_gradient(k, u0, system, cost);
    let mut hess = nalgebra::DMatrix::zeros(m, m);
    let mut probe = u0.to_vec();
    for j in 0..m {
        let step = 1.0 + u0[j].abs();
        probe[j] = u0[j] + step;
        let gp = ext.control_gradient(k, &probe, system, cost);
        probe[j] = u0[j] - step;
        let gm = ext.control_gradient(k, &probe, system, cost);
        probe[j] = u0[j];
        for i in 0..m {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let neg = -0.5 * (&hess + hess.transpose());
    let chol = neg.cholesky()?;
    let delta = chol.solve(&nalgebra::DVector::from_vec(g0));
    Some(u0.iter().zip(delta.iter()).map(|(a, d)| a + d).collect())
}

struct Unbounded;

/// One-dimensional maximization over `[lo, hi]` (either end may be infinite).
fn maximize_line<F>(f: F, current: f64, lo: f64, hi: f64, search: &SearchConfig) -> Result<f64, Unbounded>
where
    F: Fn(f64) -> f64,
{
    let zero = 0.0_f64.clamp(lo, hi);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-14 * (1.0 + a.abs().max(b.abs()));

    let (a, b) = if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        // Bracket by expansion from the current point in the ascent direction.
        let s0 = if current.is_finite() { current.clamp(lo, hi) } else { zero };
        let probe = 1.0 + s0.abs();
        let f0 = f(s0);
        let up = if s0 + probe <= hi { f(s0 + probe) } else { f64::NEG_INFINITY };
        let down = if s0 - probe >= lo { f(s0 - probe) } else { f64::NEG_INFINITY };
        if up.is_finite() && down.is_finite() && close(up, f0) && close(down, f0) {
            return Ok(zero);
        }
        let dir = if up > down { 1.0 } else { -1.0 };
        let mut step = probe;
        let mut prev = s0;
        let mut prev_val = f0;
        let mut bracket = None;
        for _ in 0..search.max_expansions {
            let next = (prev + dir * step).clamp(lo, hi);
            let val = f(next);
            if val <= prev_val || next == prev {
                let (x, y) = (prev - dir * step, next);
                bracket = Some((x.min(y).max(lo), x.max(y).min(hi)));
                break;
            }
            prev = next;
            prev_val = val;
            step *= 2.0;
        }
        bracket.ok_or(Unbounded)?
    };

    // Golden-section search, then compare against the interval ends and zero.
    let (mut a, mut b) = (a, b);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > search.tolerance * (1.0 + a.abs().max(b.abs())) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let interior = 0.5 * (a + b);
    let mut candidates = vec![interior];
    for x in [lo, hi, zero] {
        if x.is_finite() {
            candidates.push(x);
        }
    }
    let mut best = candidates[0];
    let mut best_val = f(best);
    for &x in &candidates[1..] {
        let v = f(x);
        if v > best_val && !close(v, best_val) {
            best = x;
            best_val = v;
        } else if close(v, best_val) && x.abs() < best.abs() {
            best = x;
        }
    }
    Ok(best)
}
