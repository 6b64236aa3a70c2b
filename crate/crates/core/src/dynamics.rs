//! Controlled vector fields and fixed-step RK4 integration of states and costates.
//!
//! States are integrated forward with the classical fourth-order Runge–Kutta
//! scheme; the control at the half step is the linear interpolant of the two
//! bracketing nodes. Costates are integrated backward with the same scheme on
//! the reversed grid, using the sign convention
//!
//! ```text
//! H = <λ, f(q,u)> + ν φ(q,u),   q' = ∂H/∂λ,   λ' = -∂H/∂q
//! ```
//!
//! State values between nodes are reconstructed by cubic Hermite
//! interpolation from the node states and node velocities.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::ControlSignal;
use crate::error::{contract, Error, Result};
use crate::numeric::{all_finite, fd_jacobian, hermite_midpoint, transpose_mul};

/// `f(q, u)`.
pub type VectorField = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// A Jacobian of `f` with respect to either `q` or `u`.
pub type JacobianField = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Uniform grid on `[0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t1: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t1: f64, n_steps: usize) -> Result<Self> {
        if !(t1 > 0.0 && t1.is_finite()) {
            return Err(contract(format!("horizon must be positive and finite, got {t1}")));
        }
        if n_steps == 0 {
            return Err(contract("grid needs at least one step"));
        }
        Ok(Self { t1, n_steps })
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.t1 / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t1
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|k| self.time(k))
    }
}

/// The controlled system `q' = f(q, u)` with a box of admissible controls.
#[derive(Clone)]
pub struct ControlSystem {
    state_dim: usize,
    control_dim: usize,
    control_lower: Vec<f64>,
    control_upper: Vec<f64>,
    dynamics: VectorField,
    jacobian_q: Option<JacobianField>,
    jacobian_u: Option<JacobianField>,
    control_affine: bool,
}

impl fmt::Debug for ControlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSystem")
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("control_lower", &self.control_lower)
            .field("control_upper", &self.control_upper)
            .field("analytic_jacobian_q", &self.jacobian_q.is_some())
            .field("analytic_jacobian_u", &self.jacobian_u.is_some())
            .field("control_affine", &self.control_affine)
            .finish()
    }
}

impl ControlSystem {
    /// A system with unbounded controls and finite-difference Jacobians.
    pub fn new<F>(state_dim: usize, control_dim: usize, dynamics: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        if state_dim == 0 || control_dim == 0 {
            return Err(contract("state and control dimensions must be positive"));
        }
        Ok(Self {
            state_dim,
            control_dim,
            control_lower: vec![f64::NEG_INFINITY; control_dim],
            control_upper: vec![f64::INFINITY; control_dim],
            dynamics: Arc::new(dynamics),
            jacobian_q: None,
            jacobian_u: None,
            control_affine: false,
        })
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != self.control_dim || upper.len() != self.control_dim {
            return Err(contract("control bounds must have length control_dim"));
        }
        if lower.iter().zip(&upper).any(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi) {
            return Err(contract("control_lower must not exceed control_upper"));
        }
        self.control_lower = lower;
        self.control_upper = upper;
        Ok(self)
    }

    pub fn with_jacobian_q<F>(mut self, jac: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian_q = Some(Arc::new(jac));
        self
    }

    pub fn with_jacobian_u<F>(mut self, jac: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian_u = Some(Arc::new(jac));
        self
    }

    /// Declares that `f` is affine in `u`, which lets the pointwise maximizer
    /// use a closed form when the running cost is also quadratic in `u`.
    pub fn mark_control_affine(mut self) -> Self {
        self.control_affine = true;
        self
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        state_dim: usize,
        control_dim: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        dynamics: VectorField,
        jacobian_q: Option<JacobianField>,
        jacobian_u: Option<JacobianField>,
        control_affine: bool,
    ) -> Self {
        Self {
            state_dim,
            control_dim,
            control_lower: lower,
            control_upper: upper,
            dynamics,
            jacobian_q,
            jacobian_u,
            control_affine,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn control_lower(&self) -> &[f64] {
        &self.control_lower
    }

    pub fn control_upper(&self) -> &[f64] {
        &self.control_upper
    }

    pub fn is_control_affine(&self) -> bool {
        self.control_affine
    }

    pub fn has_analytic_jacobians(&self) -> bool {
        self.jacobian_q.is_some() || self.jacobian_u.is_some()
    }

    pub(crate) fn dynamics_fn(&self) -> &VectorField {
        &self.dynamics
    }

    pub(crate) fn jacobian_q_fn(&self) -> Option<&JacobianField> {
        self.jacobian_q.as_ref()
    }

    /// Evaluates `f(q, u)`.
    pub fn eval(&self, q: &[f64], u: &[f64]) -> Vec<f64> {
        (self.dynamics)(q, u)
    }

    /// `∂f/∂q`, analytic when supplied.
    pub fn jac_q(&self, q: &[f64], u: &[f64]) -> DMatrix<f64> {
        match &self.jacobian_q {
            Some(jac) => jac(q, u),
            None => self.fd_jac_q(q, u),
        }
    }

    /// `∂f/∂u`, analytic when supplied.
    pub fn jac_u(&self, q: &[f64], u: &[f64]) -> DMatrix<f64> {
        match &self.jacobian_u {
            Some(jac) => jac(q, u),
            None => self.fd_jac_u(q, u),
        }
    }

    pub fn fd_jac_q(&self, q: &[f64], u: &[f64]) -> DMatrix<f64> {
        fd_jacobian(q, self.state_dim, |x| self.eval(x, u))
    }

    pub fn fd_jac_u(&self, q: &[f64], u: &[f64]) -> DMatrix<f64> {
        fd_jacobian(u, self.state_dim, |v| self.eval(q, v))
    }

    pub fn clip_control(&self, u: &mut [f64]) {
        for ((v, lo), hi) in u.iter_mut().zip(&self.control_lower).zip(&self.control_upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.control_lower.iter().all(|v| v.is_finite())
            && self.control_upper.iter().all(|v| v.is_finite())
    }
}

/// Node states of one forward integration, plus `f(q_k, u_k)` at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
    pub rates: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k]
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one node")
    }

    /// State halfway through step `k`, by cubic Hermite interpolation.
    pub fn midpoint(&self, k: usize) -> Vec<f64> {
        let h = self.grid.dt();
        (0..self.states[k].len())
            .map(|i| {
                hermite_midpoint(
                    self.states[k][i],
                    self.states[k + 1][i],
                    self.rates[k][i],
                    self.rates[k + 1][i],
                    h,
                )
            })
            .collect()
    }
}

/// Node costates of one backward sweep, plus `λ'` at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    pub grid: TimeGrid,
    pub costates: Vec<Vec<f64>>,
    pub rates: Vec<Vec<f64>>,
}

impl CostateTrajectory {
    pub fn costate(&self, k: usize) -> &[f64] {
        &self.costates[k]
    }

    pub fn initial_costate(&self) -> &[f64] {
        &self.costates[0]
    }

    pub fn midpoint(&self, k: usize) -> Vec<f64> {
        let h = self.grid.dt();
        (0..self.costates[k].len())
            .map(|i| {
                hermite_midpoint(
                    self.costates[k][i],
                    self.costates[k + 1][i],
                    self.rates[k][i],
                    self.rates[k + 1][i],
                    h,
                )
            })
            .collect()
    }

    /// True when every stored costate is exactly zero.
    pub fn is_identically_zero(&self) -> bool {
        self.costates.iter().flatten().all(|v| *v == 0.0)
    }
}

fn check_signal(system: &ControlSystem, u: &ControlSignal, grid: &TimeGrid) -> Result<()> {
    if u.grid() != grid {
        return Err(contract("control signal is defined on a different grid"));
    }
    if u.dim() != system.control_dim() {
        return Err(contract(format!(
            "control has dimension {}, system expects {}",
            u.dim(),
            system.control_dim()
        )));
    }
    Ok(())
}

/// Integrates `q' = f(q, u(t))` from `q0` with fixed-step RK4.
pub fn integrate_forward(
    system: &ControlSystem,
    q0: &[f64],
    u: &ControlSignal,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    check_signal(system, u, grid)?;
    let n = system.state_dim();
    if q0.len() != n {
        return Err(contract(format!("initial state has length {}, expected {n}", q0.len())));
    }
    let h = grid.dt();
    let mut states = Vec::with_capacity(grid.n_nodes());
    let mut rates = Vec::with_capacity(grid.n_nodes());
    states.push(q0.to_vec());
    let mut q = q0.to_vec();
    let mut stage = vec![0.0; n];
    for k in 0..grid.n_steps() {
        let u0 = u.node(k);
        let um = u.midpoint(k);
        let u1 = u.node(k + 1);

        let k1 = system.eval(&q, u0);
        for i in 0..n {
            stage[i] = q[i] + 0.5 * h * k1[i];
        }
        let k2 = system.eval(&stage, &um);
        for i in 0..n {
            stage[i] = q[i] + 0.5 * h * k2[i];
        }
        let k3 = system.eval(&stage, &um);
        for i in 0..n {
            stage[i] = q[i] + h * k3[i];
        }
        let k4 = system.eval(&stage, u1);
        for i in 0..n {
            q[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !all_finite(&q) {
            return Err(Error::IntegrationDiverged { step: k });
        }
        rates.push(k1);
        states.push(q.clone());
    }
    let last = system.eval(&q, u.node(grid.n_steps()));
    if !all_finite(&last) {
        return Err(Error::IntegrationDiverged { step: grid.n_steps() });
    }
    rates.push(last);
    Ok(Trajectory { grid: *grid, states, rates })
}

/// Integrates `λ' = -(∂f/∂q)ᵀ λ - ν ∇_q φ` backward from `λ(t1) = lambda_t1`.
pub fn integrate_costate_backward<G>(
    system: &ControlSystem,
    traj: &Trajectory,
    u: &ControlSignal,
    lambda_t1: &[f64],
    nu: f64,
    running_cost_grad_q: G,
) -> Result<CostateTrajectory>
where
    G: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    let grid = traj.grid;
    check_signal(system, u, &grid)?;
    let n = system.state_dim();
    if lambda_t1.len() != n {
        return Err(contract(format!(
            "terminal covector has length {}, expected {n}",
            lambda_t1.len()
        )));
    }
    if traj.states.len() != grid.n_nodes() {
        return Err(contract("trajectory length does not match its grid"));
    }

    // Rate of λ in reversed time s = t1 - t: dλ/ds = (∂f/∂q)ᵀ λ + ν ∇_q φ.
    let reversed_rate = |jac: &DMatrix<f64>, grad: &[f64], lambda: &[f64]| -> Vec<f64> {
        let mut r = transpose_mul(jac, lambda);
        if nu != 0.0 {
            for (ri, gi) in r.iter_mut().zip(grad) {
                *ri += nu * gi;
            }
        }
        r
    };
    let cost_grad = |q: &[f64], uv: &[f64]| -> Vec<f64> {
        if nu == 0.0 {
            Vec::new()
        } else {
            running_cost_grad_q(q, uv)
        }
    };

    let steps = grid.n_steps();
    let h = grid.dt();
    let mut costates = vec![Vec::new(); grid.n_nodes()];
    let mut rates = vec![Vec::new(); grid.n_nodes()];
    let mut lambda = lambda_t1.to_vec();
    costates[steps] = lambda.clone();

    let mut jac_hi = system.jac_q(traj.state(steps), u.node(steps));
    let mut grad_hi = cost_grad(traj.state(steps), u.node(steps));
    let mut stage = vec![0.0; n];
    for k in (0..steps).rev() {
        let q_mid = traj.midpoint(k);
        let u_mid = u.midpoint(k);
        let jac_mid = system.jac_q(&q_mid, &u_mid);
        let grad_mid = cost_grad(&q_mid, &u_mid);
        let jac_lo = system.jac_q(traj.state(k), u.node(k));
        let grad_lo = cost_grad(traj.state(k), u.node(k));

        let k1 = reversed_rate(&jac_hi, &grad_hi, &lambda);
        for i in 0..n {
            stage[i] = lambda[i] + 0.5 * h * k1[i];
        }
        let k2 = reversed_rate(&jac_mid, &grad_mid, &stage);
        for i in 0..n {
            stage[i] = lambda[i] + 0.5 * h * k2[i];
        }
        let k3 = reversed_rate(&jac_mid, &grad_mid, &stage);
        for i in 0..n {
            stage[i] = lambda[i] + h * k3[i];
        }
        let k4 = reversed_rate(&jac_lo, &grad_lo, &stage);
        for i in 0..n {
            lambda[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !all_finite(&lambda) {
            return Err(Error::IntegrationDiverged { step: k });
        }
        rates[k + 1] = k1.iter().map(|v| -v).collect();
        costates[k] = lambda.clone();
        jac_hi = jac_lo;
        grad_hi = grad_lo;
    }
    rates[0] = reversed_rate(&jac_hi, &grad_hi, &lambda).iter().map(|v| -v).collect();
    Ok(CostateTrajectory { grid, costates, rates })
}

/// Largest relative deviation of the analytic Jacobians from central differences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JacobianReport {
    pub max_deviation_q: Option<f64>,
    pub max_deviation_u: Option<f64>,
}

impl JacobianReport {
    pub fn is_empty(&self) -> bool {
        self.max_deviation_q.is_none() && self.max_deviation_u.is_none()
    }

    pub fn max_deviation(&self) -> f64 {
        self.max_deviation_q
            .unwrap_or(0.0)
            .max(self.max_deviation_u.unwrap_or(0.0))
    }
}

/// Deviation is `‖J_analytic − J_fd‖_F / max(‖J_fd‖_F, 1)`.
pub(crate) fn matrix_deviation(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    if analytic.shape() != fd.shape() {
        return f64::INFINITY;
    }
    (analytic - fd).norm() / fd.norm().max(1.0)
}

/// Compares supplied analytic Jacobians against central differences at `probes`.
pub fn check_jacobians(system: &ControlSystem, probes: &[(Vec<f64>, Vec<f64>)]) -> JacobianReport {
    let mut report = JacobianReport::default();
    for (q, u) in probes {
        if let Some(jac) = &system.jacobian_q {
            let d = matrix_deviation(&jac(q, u), &system.fd_jac_q(q, u));
            report.max_deviation_q = Some(report.max_deviation_q.unwrap_or(0.0).max(d));
        }
        if let Some(jac) = &system.jacobian_u {
            let d = matrix_deviation(&jac(q, u), &system.fd_jac_u(q, u));
            report.max_deviation_u = Some(report.max_deviation_u.unwrap_or(0.0).max(d));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_integrator() -> ControlSystem {
        ControlSystem::new(2, 1, |q, u| vec![q[1], u[0]]).unwrap()
    }

    fn no_cost_grad(_: &[f64], _: &[f64]) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    #[test]
    fn grid_nodes_are_uniform() {
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let t: Vec<f64> = grid.times().collect();
        assert_eq!(t.len(), 9);
        assert_eq!(t[8], 2.0);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - 0.25).abs() < 1e-15);
        }
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn zero_control_from_rest_stays_at_rest() {
        let sys = double_integrator();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let u = ControlSignal::zeros(grid, 1);
        let traj = integrate_forward(&sys, &[0.0, 0.0], &u, &grid).unwrap();
        assert_eq!(traj.states.len(), 11);
        assert!(traj.states.iter().all(|s| s == &vec![0.0, 0.0]));
    }

    #[test]
    fn constant_velocity_drift() {
        let sys = double_integrator();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let u = ControlSignal::zeros(grid, 1);
        let traj = integrate_forward(&sys, &[0.0, 1.0], &u, &grid).unwrap();
        assert_eq!(traj.states[0], vec![0.0, 1.0]);
        let end = traj.final_state();
        assert!((end[0] - 1.0).abs() < 1e-12 && (end[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_acceleration_matches_closed_form() {
        let sys = double_integrator();
        let grid = TimeGrid::new(2.0, 10).unwrap();
        let u = ControlSignal::constant(grid, &[1.0]);
        let traj = integrate_forward(&sys, &[0.0, 0.0], &u, &grid).unwrap();
        for (k, t) in grid.times().enumerate() {
            assert!((traj.states[k][0] - 0.5 * t * t).abs() < 1e-12);
            assert!((traj.states[k][1] - t).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_names_step() {
        let sys = ControlSystem::new(1, 1, |q, _| vec![q[0] * q[0]]).unwrap();
        let grid = TimeGrid::new(10.0, 100).unwrap();
        let u = ControlSignal::zeros(grid, 1);
        let err = integrate_forward(&sys, &[10.0], &u, &grid).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { .. }));
    }

    #[test]
    fn zero_terminal_covector_gives_zero_costate() {
        let sys = double_integrator();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let u = ControlSignal::constant(grid, &[0.3]);
        let traj = integrate_forward(&sys, &[1.0, -1.0], &u, &grid).unwrap();
        let lam = integrate_costate_backward(&sys, &traj, &u, &[0.0, 0.0], 0.0, no_cost_grad).unwrap();
        assert!(lam.is_identically_zero());
    }

    #[test]
    fn double_integrator_adjoint_is_affine() {
        let sys = double_integrator();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let u = ControlSignal::zeros(grid, 1);
        let traj = integrate_forward(&sys, &[0.0, 0.0], &u, &grid).unwrap();
        let lam = integrate_costate_backward(&sys, &traj, &u, &[1.0, 0.0], 0.0, no_cost_grad).unwrap();
        assert_eq!(lam.costates[10], vec![1.0, 0.0]);
        for (k, t) in grid.times().enumerate() {
            assert!((lam.costates[k][0] - 1.0).abs() < 1e-12);
            assert!((lam.costates[k][1] - (1.0 - t)).abs() < 1e-12);
        }
        let l0 = lam.initial_costate();
        assert!((l0[0] - 1.0).abs() < 1e-12 && (l0[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn control_only_cost_does_not_move_costate() {
        let sys = double_integrator();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let u = ControlSignal::from_fn(grid, 1, |t| vec![t - 0.5]);
        let traj = integrate_forward(&sys, &[0.5, 0.2], &u, &grid).unwrap();
        let a = integrate_costate_backward(&sys, &traj, &u, &[0.7, -0.4], 0.0, no_cost_grad).unwrap();
        let b = integrate_costate_backward(&sys, &traj, &u, &[0.7, -0.4], -1.0, no_cost_grad).unwrap();
        assert_eq!(a.costates, b.costates);
    }

    #[test]
    fn jacobian_check_reports() {
        let probes = vec![(vec![0.3, -0.2], vec![0.1]), (vec![1.0, 2.0], vec![-1.0])];
        let plain = double_integrator();
        assert!(check_jacobians(&plain, &probes).is_empty());

        let exact = double_integrator()
            .with_jacobian_q(|_, _| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert!(check_jacobians(&exact, &probes).max_deviation() < 1e-9);

        let faulty = double_integrator()
            .with_jacobian_q(|_, _| DMatrix::from_row_slice(2, 2, &[0.0, 1.1, 0.0, 0.0]));
        let d = check_jacobians(&faulty, &probes).max_deviation();
        assert!((d - 0.1).abs() < 1e-6, "deviation {d}");
    }

    #[test]
    fn bounds_are_validated() {
        assert!(double_integrator().with_bounds(vec![1.0], vec![-1.0]).is_err());
        assert!(double_integrator().with_bounds(vec![-1.0, 0.0], vec![1.0, 1.0]).is_err());
        let sys = double_integrator().with_bounds(vec![-1.0], vec![1.0]).unwrap();
        let mut u = [4.0];
        sys.clip_control(&mut u);
        assert_eq!(u, [1.0]);
    }
}
