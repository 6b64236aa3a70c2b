//! Running cost, terminal penalty, penalty absorption and expected cost.
//!
//! A smooth terminal penalty `I` can be handled two ways:
//!
//! * terminal transversality: `J = ∫ φ dt + I(q(t1))`, costate ends at `ν·DI(q(t1))`;
//! * absorption: `φ̂ = φ + <DI(q), f(q,u)>`, no terminal term, so that
//!   `∫ φ̂ dt = J − I(q0)`; the offset `E[I(q0)]` does not depend on the control.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlSignal;
use crate::distribution::WeightedEnsemble;
use crate::dynamics::{integrate_forward, ControlSystem, TimeGrid, Trajectory};
use crate::error::{contract, Result};
use crate::numeric::{dot, fd_gradient, fd_jacobian, fd_step, transpose_mul};

pub type ScalarField = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type GradientField = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type StateScalar = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type StateGradient = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type StateHessian = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    #[default]
    TerminalTransversality,
    Absorbed,
}

impl PenaltyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PenaltyMode::TerminalTransversality => "terminal",
            PenaltyMode::Absorbed => "absorbed",
        }
    }
}

impl std::str::FromStr for PenaltyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "terminal" | "terminal_transversality" => Ok(PenaltyMode::TerminalTransversality),
            "absorbed" => Ok(PenaltyMode::Absorbed),
            other => Err(format!("unknown penalty mode `{other}` (terminal, absorbed)")),
        }
    }
}

/// Smooth terminal penalty `I(q)` with optional derivatives.
#[derive(Clone)]
pub struct TerminalPenalty {
    value: StateScalar,
    gradient: Option<StateGradient>,
    hessian: Option<StateHessian>,
}

impl TerminalPenalty {
    pub fn new<F>(value: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { value: Arc::new(value), gradient: None, hessian: None }
    }

    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        (self.value)(q)
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// `DI(q)`, central differences when no gradient was supplied.
    pub fn gradient(&self, q: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(q),
            None => fd_gradient(q, |x| self.value(x)),
        }
    }

    /// `D²I(q)·v`.
    fn hessian_times(&self, q: &[f64], v: &[f64]) -> Vec<f64> {
        if let Some(h) = &self.hessian {
            let m = h(q);
            return (0..q.len()).map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect();
        }
        let norm = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if norm == 0.0 {
            return vec![0.0; q.len()];
        }
        let scale = q.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let h = fd_step(scale) / norm;
        let plus: Vec<f64> = q.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = q.iter().zip(v).map(|(a, b)| a - h * b).collect();
        let gp = self.gradient(&plus);
        let gm = self.gradient(&minus);
        gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }
}

impl fmt::Debug for TerminalPenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalPenalty")
            .field("analytic_gradient", &self.gradient.is_some())
            .field("analytic_hessian", &self.hessian.is_some())
            .finish()
    }
}

/// Running cost `φ(q,u)`, optional terminal penalty, horizon and penalty handling.
#[derive(Clone)]
pub struct CostSpec {
    running: ScalarField,
    grad_q: Option<GradientField>,
    grad_u: Option<GradientField>,
    terminal: Option<TerminalPenalty>,
    horizon: f64,
    penalty_mode: PenaltyMode,
    quadratic_in_u: bool,
    /// Penalty already folded into the running cost; kept for the `E[I(q0)]` offset.
    absorbed: Option<TerminalPenalty>,
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostSpec")
            .field("horizon", &self.horizon)
            .field("penalty_mode", &self.penalty_mode)
            .field("terminal", &self.terminal)
            .field("absorbed", &self.absorbed)
            .field("quadratic_in_u", &self.quadratic_in_u)
            .finish()
    }
}

impl CostSpec {
    pub fn new<F>(horizon: f64, running: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(contract(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            running: Arc::new(running),
            grad_q: None,
            grad_u: None,
            terminal: None,
            horizon,
            penalty_mode: PenaltyMode::TerminalTransversality,
            quadratic_in_u: false,
            absorbed: None,
        })
    }

    pub fn with_grad_q<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.grad_q = Some(Arc::new(g));
        self
    }

    pub fn with_grad_u<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.grad_u = Some(Arc::new(g));
        self
    }

    pub fn with_terminal_penalty(mut self, penalty: TerminalPenalty) -> Self {
        self.terminal = Some(penalty);
        self
    }

    pub fn with_penalty_mode(mut self, mode: PenaltyMode) -> Self {
        self.penalty_mode = mode;
        self
    }

    /// Registers `φ` as quadratic in `u` (enables closed-form pointwise maximization).
    pub fn mark_quadratic_in_u(mut self) -> Self {
        self.quadratic_in_u = true;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn penalty_mode(&self) -> PenaltyMode {
        self.penalty_mode
    }

    pub fn terminal_penalty(&self) -> Option<&TerminalPenalty> {
        self.terminal.as_ref()
    }

    pub fn absorbed_penalty(&self) -> Option<&TerminalPenalty> {
        self.absorbed.as_ref()
    }

    pub fn is_quadratic_in_u(&self) -> bool {
        self.quadratic_in_u
    }

    pub fn running(&self, q: &[f64], u: &[f64]) -> f64 {
        (self.running)(q, u)
    }

    pub fn grad_q(&self, q: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.grad_q {
            Some(g) => g(q, u),
            None => fd_gradient(q, |x| self.running(x, u)),
        }
    }

    pub fn grad_u(&self, q: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.grad_u {
            Some(g) => g(q, u),
            None => fd_gradient(u, |v| self.running(q, v)),
        }
    }

    pub fn has_analytic_gradients(&self) -> bool {
        self.grad_q.is_some() && self.grad_u.is_some()
    }

    /// Terminal penalty value added on top of the running cost, if any.
    pub fn terminal_value(&self, q: &[f64]) -> f64 {
        match (&self.terminal, self.penalty_mode) {
            (Some(p), PenaltyMode::TerminalTransversality) => p.value(q),
            _ => 0.0,
        }
    }

    /// The cost actually optimized: absorbs the penalty when the mode asks for it.
    pub fn resolved(&self, system: &ControlSystem) -> Result<CostSpec> {
        match (self.penalty_mode, &self.terminal) {
            (PenaltyMode::Absorbed, Some(_)) => absorb_penalty(self, system),
            _ => Ok(self.clone()),
        }
    }

    /// `E[I(q0)]` for an absorbed penalty; zero otherwise.
    pub fn penalty_offset(&self, ensemble: &WeightedEnsemble) -> f64 {
        match &self.absorbed {
            Some(p) => {
                let mut acc = 0.0;
                for (q, w) in ensemble.points().iter().zip(ensemble.weights()) {
                    acc += w * p.value(q);
                }
                acc
            }
            None => 0.0,
        }
    }

    /// Checks the terminal gradient against central differences at `probes`.
    pub fn check_penalty_gradient(&self, probes: &[Vec<f64>]) -> Option<f64> {
        let p = self.terminal.as_ref().or(self.absorbed.as_ref())?;
        p.gradient.as_ref()?;
        Some(probes.iter().fold(0.0_f64, |m, q| {
            let a = p.gradient(q);
            let fd = fd_gradient(q, |x| p.value(x));
            let diff: f64 = a.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
            m.max(diff / norm.max(1.0))
        }))
    }
}

/// Folds the terminal penalty into the running cost: `φ̂ = φ + <DI(q), f(q,u)>`.
pub fn absorb_penalty(cost: &CostSpec, system: &ControlSystem) -> Result<CostSpec> {
    let penalty = cost
        .terminal
        .clone()
        .ok_or_else(|| contract("absorption needs a terminal penalty"))?;
    if !penalty.has_gradient() {
        return Err(contract("absorption needs the terminal penalty gradient"));
    }
    let base = cost.clone();
    let sys = system.clone();
    let p = penalty.clone();
    let running = move |q: &[f64], u: &[f64]| base.running(q, u) + dot(&p.gradient(q), &sys.eval(q, u));

    let base = cost.clone();
    let sys = system.clone();
    let p = penalty.clone();
    // ∇_q φ̂ = ∇_q φ + (∂f/∂q)ᵀ DI + D²I f
    let grad_q = move |q: &[f64], u: &[f64]| {
        let f = sys.eval(q, u);
        let di = p.gradient(q);
        let mut g = base.grad_q(q, u);
        let a = transpose_mul(&sys.jac_q(q, u), &di);
        let b = p.hessian_times(q, &f);
        for i in 0..g.len() {
            g[i] += a[i] + b[i];
        }
        g
    };

    let base = cost.clone();
    let sys = system.clone();
    let p = penalty.clone();
    // ∇_u φ̂ = ∇_u φ + (∂f/∂u)ᵀ DI
    let grad_u = move |q: &[f64], u: &[f64]| {
        let mut g = base.grad_u(q, u);
        let a = transpose_mul(&sys.jac_u(q, u), &p.gradient(q));
        for (gi, ai) in g.iter_mut().zip(a) {
            *gi += ai;
        }
        g
    };

    Ok(CostSpec {
        running: Arc::new(running),
        grad_q: Some(Arc::new(grad_q)),
        grad_u: Some(Arc::new(grad_u)),
        terminal: None,
        horizon: cost.horizon,
        penalty_mode: PenaltyMode::Absorbed,
        quadratic_in_u: cost.quadratic_in_u && system.is_control_affine(),
        absorbed: Some(penalty),
    })
}

/// The `(n+1)`-dimensional system `(y, q)' = (φ(q,u), f(q,u))`.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    system: ControlSystem,
    base_dim: usize,
}

impl AugmentedSystem {
    pub fn system(&self) -> &ControlSystem {
        &self.system
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    /// `(0, q0)`.
    pub fn initial_state(&self, q0: &[f64]) -> Vec<f64> {
        let mut s = Vec::with_capacity(q0.len() + 1);
        s.push(0.0);
        s.extend_from_slice(q0);
        s
    }

    /// Drops the accumulated-cost coordinate.
    pub fn project(&self, traj: &Trajectory) -> Trajectory {
        Trajectory {
            grid: traj.grid,
            states: traj.states.iter().map(|s| s[1..].to_vec()).collect(),
            rates: traj.rates.iter().map(|s| s[1..].to_vec()).collect(),
        }
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }
}

/// Builds the augmented system; its Jacobians are assembled from the parts.
pub fn augment(system: &ControlSystem, cost: &CostSpec) -> AugmentedSystem {
    let n = system.state_dim();
    let m = system.control_dim();

    let f = system.dynamics_fn().clone();
    let c = cost.clone();
    let dynamics = Arc::new(move |x: &[f64], u: &[f64]| {
        let q = &x[1..];
        let mut out = Vec::with_capacity(n + 1);
        out.push(c.running(q, u));
        out.extend(f(q, u));
        out
    });

    let sys = system.clone();
    let c = cost.clone();
    let jacobian_q = Arc::new(move |x: &[f64], u: &[f64]| {
        let q = &x[1..];
        let inner = match sys.jacobian_q_fn() {
            Some(j) => j(q, u),
            None => fd_jacobian(q, n, |y| sys.eval(y, u)),
        };
        let g = c.grad_q(q, u);
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        for j in 0..n {
            jac[(0, j + 1)] = g[j];
            for i in 0..n {
                jac[(i + 1, j + 1)] = inner[(i, j)];
            }
        }
        jac
    });

    let sys = system.clone();
    let c = cost.clone();
    let jacobian_u = Arc::new(move |x: &[f64], u: &[f64]| {
        let q = &x[1..];
        let inner = sys.jac_u(q, u);
        let g = c.grad_u(q, u);
        let mut jac = DMatrix::zeros(n + 1, m);
        for j in 0..m {
            jac[(0, j)] = g[j];
            for i in 0..n {
                jac[(i + 1, j)] = inner[(i, j)];
            }
        }
        jac
    });

    let augmented = ControlSystem::from_parts(
        n + 1,
        m,
        system.control_lower().to_vec(),
        system.control_upper().to_vec(),
        dynamics,
        Some(jacobian_q),
        Some(jacobian_u),
        false,
    );
    AugmentedSystem { system: augmented, base_dim: n }
}

/// One ensemble member's forward rollout under a shared control.
#[derive(Debug, Clone)]
pub struct MemberRollout {
    pub trajectory: Trajectory,
    pub running_cost: f64,
    pub terminal_cost: f64,
}

impl MemberRollout {
    pub fn total(&self) -> f64 {
        self.running_cost + self.terminal_cost
    }
}

pub(crate) fn check_horizon(cost: &CostSpec, grid: &TimeGrid) -> Result<()> {
    if (grid.t1() - cost.horizon()).abs() > 1e-12 * cost.horizon().max(1.0) {
        return Err(contract(format!(
            "grid horizon {} differs from cost horizon {}",
            grid.t1(),
            cost.horizon()
        )));
    }
    Ok(())
}

/// Integrates every member through the augmented system. `cost` must
/// already be resolved (see [`CostSpec::resolved`]).
pub fn rollout_ensemble(
    system: &ControlSystem,
    cost: &CostSpec,
    ensemble: &WeightedEnsemble,
    u: &ControlSignal,
    grid: &TimeGrid,
) -> Result<Vec<MemberRollout>> {
    check_horizon(cost, grid)?;
    if ensemble.dim() != system.state_dim() {
        return Err(contract("ensemble dimension differs from the state dimension"));
    }
    let aug = augment(system, cost);
    ensemble
        .points()
        .par_iter()
        .map(|q0| {
            let full = integrate_forward(aug.system(), &aug.initial_state(q0), u, grid)?;
            let running_cost = full.final_state()[0];
            let trajectory = aug.project(&full);
            let terminal_cost = cost.terminal_value(trajectory.final_state());
            Ok(MemberRollout { trajectory, running_cost, terminal_cost })
        })
        .collect()
}

/// Probability-weighted total cost of member rollouts, summed in index order.
pub fn weighted_total(rollouts: &[MemberRollout], ensemble: &WeightedEnsemble) -> f64 {
    let mut acc = 0.0;
    for (r, w) in rollouts.iter().zip(ensemble.weights()) {
        acc += w * r.total();
    }
    acc
}

/// `E[∫ φ dt + I(q(t1))]` in the cost's penalty mode. In absorbed mode the
/// value excludes the constant `E[I(q0)]`.
pub fn expected_cost(
    system: &ControlSystem,
    cost: &CostSpec,
    ensemble: &WeightedEnsemble,
    u: &ControlSignal,
    grid: &TimeGrid,
) -> Result<f64> {
    let resolved = cost.resolved(system)?;
    let rollouts = rollout_ensemble(system, &resolved, ensemble, u, grid)?;
    Ok(weighted_total(&rollouts, ensemble))
}
