//! Built-in scenarios.
//!
//! `cheapest-stop` is a double integrator `x'' = u` whose initial position
//! and velocity are Gaussian around `(x0, v0)` with unit covariance. The
//! running cost is `u²` and the terminal penalty `k (x₁² + x₂²)` softens the
//! stop condition `x(t1) = 0, x'(t1) = 0`; large `k` approaches the hard stop.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cost::{CostSpec, TerminalPenalty};
use crate::distribution::InitialDistribution;
use crate::dynamics::{check_jacobians, ControlSystem, TimeGrid};
use crate::error::{contract, Error, Result};

/// Names accepted by [`Scenario::by_name`].
pub const NAMES: [&str; 3] = ["cheapest-stop", "cheapest-stop-deterministic", "nonlinear-drift"];

/// Expected cost of `cheapest_stop(1, 1, 1, 1)` from the direct oracle at
/// 200 steps and order-7 quadrature.
pub const CHEAPEST_STOP_REFERENCE_COST: f64 = 6.034482758620689;

const CHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlShape {
    Zero,
    AffineInT,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub expected_cost: Option<f64>,
    pub control_shape: ControlShape,
    pub provenance: String,
}

/// Parameters shared by every registered scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub x0: f64,
    pub v0: f64,
    pub k: f64,
    pub t1: f64,
    pub steps: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self { x0: 1.0, v0: 1.0, k: 1.0, t1: 1.0, steps: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: ControlSystem,
    pub distribution: InitialDistribution,
    pub cost: CostSpec,
    pub grid: TimeGrid,
    pub reference: Option<Reference>,
}

impl Scenario {
    /// Assembles a scenario after checking dimensions, any analytic
    /// Jacobians, and the penalty gradient around the distribution mean.
    pub fn new(
        name: impl Into<String>,
        system: ControlSystem,
        distribution: InitialDistribution,
        cost: CostSpec,
        grid: TimeGrid,
    ) -> Result<Self> {
        let n = system.state_dim();
        let m = system.control_dim();
        distribution.validate()?;
        if distribution.dim() != n {
            return Err(contract("distribution dimension differs from the state dimension"));
        }
        if (grid.t1() - cost.horizon()).abs() > 1e-12 * cost.horizon().max(1.0) {
            return Err(contract("grid horizon differs from cost horizon"));
        }
        let mean = distribution.mean();
        let mut probes = Vec::new();
        for shift in [-1.0, 0.0, 0.5] {
            let q: Vec<f64> = mean.iter().enumerate().map(|(i, x)| x + shift * (1.0 + i as f64)).collect();
            let mut u = vec![shift; m];
            system.clip_control(&mut u);
            probes.push((q, u));
        }
        let report = check_jacobians(&system, &probes);
        if report.max_deviation() > CHECK_TOLERANCE {
            return Err(contract(format!("Jacobian check failed (deviation {:e})", report.max_deviation())));
        }
        let states: Vec<Vec<f64>> = probes.iter().map(|(q, _)| q.clone()).collect();
        if let Some(dev) = cost.check_penalty_gradient(&states) {
            if dev > CHECK_TOLERANCE {
                return Err(contract(format!("penalty gradient check failed (deviation {dev:e})")));
            }
        }
        for (q, u) in &probes {
            if system.eval(q, u).len() != n {
                return Err(contract("dynamics returned the wrong dimension"));
            }
        }
        Ok(Self { name: name.into(), system, distribution, cost, grid, reference: None })
    }

    pub fn with_reference(mut self, reference: Reference) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Result<Self> {
        self.grid = TimeGrid::new(self.grid.t1(), steps)?;
        Ok(self)
    }

    pub fn by_name(name: &str, params: &ScenarioParams) -> Result<Self> {
        let p = params;
        let scenario = match name {
            "cheapest-stop" => cheapest_stop(p.x0, p.v0, p.k, p.t1)?,
            "cheapest-stop-deterministic" => cheapest_stop_deterministic(p.x0, p.v0, p.k, p.t1)?,
            "nonlinear-drift" => nonlinear_drift(p.x0, p.v0, p.k, p.t1)?,
            _ => {
                return Err(Error::UnknownScenario {
                    name: name.to_string(),
                    known: NAMES.iter().map(|s| s.to_string()).collect(),
                })
            }
        };
        scenario.with_steps(p.steps)
    }
}

fn double_integrator() -> Result<ControlSystem> {
    Ok(ControlSystem::new(2, 1, |q, u| vec![q[1], u[0]])?
        .with_jacobian_q(|_, _| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]))
        .with_jacobian_u(|_, _| DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
        .mark_control_affine())
}

fn stop_penalty(k: f64) -> TerminalPenalty {
    TerminalPenalty::new(move |q| k * (q[0] * q[0] + q[1] * q[1]))
        .with_gradient(move |q| vec![2.0 * k * q[0], 2.0 * k * q[1]])
        .with_hessian(move |_| DMatrix::from_diagonal_element(2, 2, 2.0 * k))
}

fn energy_cost(k: f64, t1: f64) -> Result<CostSpec> {
    Ok(CostSpec::new(t1, |_, u| u[0] * u[0])?
        .with_grad_q(|_, _| vec![0.0, 0.0])
        .with_grad_u(|_, u| vec![2.0 * u[0]])
        .with_terminal_penalty(stop_penalty(k))
        .mark_quadratic_in_u())
}

fn check_params(k: f64, t1: f64) -> Result<()> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(contract("penalty weight must be finite and nonnegative"));
    }
    if !(t1 > 0.0 && t1.is_finite()) {
        return Err(contract("horizon must be positive"));
    }
    Ok(())
}

fn braking_reference(x0: f64, v0: f64, k: f64, zero_cost: bool) -> Option<Reference> {
    (x0 == 0.0 && v0 == 0.0 || k == 0.0).then(|| Reference {
        expected_cost: zero_cost.then_some(0.0),
        control_shape: ControlShape::Zero,
        provenance: "zero control is optimal".into(),
    })
}

/// Cheapest Stop with unit-covariance Gaussian initial state around `(x0, v0)`.
pub fn cheapest_stop(x0: f64, v0: f64, k: f64, t1: f64) -> Result<Scenario> {
    cheapest_stop_with_covariance(x0, v0, k, t1, DMatrix::identity(2, 2))
}

/// Cheapest Stop with a general initial covariance.
pub fn cheapest_stop_with_covariance(x0: f64, v0: f64, k: f64, t1: f64, covariance: DMatrix<f64>) -> Result<Scenario> {
    check_params(k, t1)?;
    let dist = InitialDistribution::gaussian(vec![x0, v0], covariance)?;
    let scenario = Scenario::new("cheapest-stop", double_integrator()?, dist, energy_cost(k, t1)?, TimeGrid::new(t1, 100)?)?;
    let reference = if (x0, v0, k, t1) == (1.0, 1.0, 1.0, 1.0) {
        Some(Reference {
            expected_cost: Some(CHEAPEST_STOP_REFERENCE_COST),
            control_shape: ControlShape::AffineInT,
            provenance: "direct oracle, 200 steps, order-7 quadrature".into(),
        })
    } else {
        braking_reference(x0, v0, k, k == 0.0).or(Some(Reference {
            expected_cost: None,
            control_shape: ControlShape::AffineInT,
            provenance: "linear dynamics with quadratic cost".into(),
        }))
    };
    Ok(Scenario { reference, ..scenario })
}

/// Cheapest Stop from a known initial state.
pub fn cheapest_stop_deterministic(x0: f64, v0: f64, k: f64, t1: f64) -> Result<Scenario> {
    check_params(k, t1)?;
    let dist = InitialDistribution::dirac(vec![x0, v0]);
    let scenario = Scenario::new(
        "cheapest-stop-deterministic",
        double_integrator()?,
        dist,
        energy_cost(k, t1)?,
        TimeGrid::new(t1, 100)?,
    )?;
    let reference = braking_reference(x0, v0, k, true).or(Some(Reference {
        expected_cost: None,
        control_shape: ControlShape::AffineInT,
        provenance: "linear dynamics with quadratic cost".into(),
    }));
    Ok(Scenario { reference, ..scenario })
}

/// `x₁' = x₂, x₂' = u − 0.1 x₂³` with a small quadratic state cost. Jacobians
/// are left to finite differences.
pub fn nonlinear_drift(x0: f64, v0: f64, k: f64, t1: f64) -> Result<Scenario> {
    check_params(k, t1)?;
    let system = ControlSystem::new(2, 1, |q, u| vec![q[1], u[0] - 0.1 * q[1].powi(3)])?.mark_control_affine();
    let dist = InitialDistribution::gaussian(vec![x0, v0], DMatrix::from_diagonal_element(2, 2, 0.25))?;
    let cost = CostSpec::new(t1, |q, u| u[0] * u[0] + 0.1 * (q[0] * q[0] + q[1] * q[1]))?
        .with_grad_q(|q, _| vec![0.2 * q[0], 0.2 * q[1]])
        .with_grad_u(|_, u| vec![2.0 * u[0]])
        .with_terminal_penalty(stop_penalty(k))
        .mark_quadratic_in_u();
    let scenario = Scenario::new("nonlinear-drift", system, dist, cost, TimeGrid::new(t1, 100)?)?;
    Ok(Scenario {
        reference: Some(Reference {
            expected_cost: None,
            control_shape: ControlShape::Unknown,
            provenance: "none".into(),
        }),
        ..scenario
    })
}

/// Double integrator with running cost `u² + 0.5 u³` on `u ∈ [-1, 1]`.
/// The optimum is not affine in `t`; not registered by name.
pub fn cubic_cost_braking(x0: f64, v0: f64, k: f64, t1: f64) -> Result<Scenario> {
    check_params(k, t1)?;
    let system = double_integrator()?.with_bounds(vec![-1.0], vec![1.0])?;
    let dist = InitialDistribution::gaussian(vec![x0, v0], DMatrix::identity(2, 2))?;
    let cost = CostSpec::new(t1, |_, u| u[0] * u[0] + 0.5 * u[0].powi(3))?
        .with_grad_q(|_, _| vec![0.0, 0.0])
        .with_grad_u(|_, u| vec![2.0 * u[0] + 1.5 * u[0] * u[0]])
        .with_terminal_penalty(stop_penalty(k));
    let scenario = Scenario::new("cubic-cost-braking", system, dist, cost, TimeGrid::new(t1, 100)?)?;
    Ok(Scenario {
        reference: Some(Reference {
            expected_cost: None,
            control_shape: ControlShape::Unknown,
            provenance: "none".into(),
        }),
        ..scenario
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_every_name() {
        for name in NAMES {
            let s = Scenario::by_name(name, &ScenarioParams::default()).unwrap();
            assert_eq!(s.name, name);
            assert_eq!(s.grid.n_steps(), 100);
        }
    }

    #[test]
    fn unknown_name_lists_known() {
        match Scenario::by_name("free-fall", &ScenarioParams::default()) {
            Err(Error::UnknownScenario { known, .. }) => assert_eq!(known.len(), NAMES.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_weight_is_rejected() {
        assert!(cheapest_stop(1.0, 1.0, -1.0, 1.0).is_err());
        assert!(cheapest_stop(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn faulty_jacobian_is_caught_at_registration() {
        let sys = ControlSystem::new(2, 1, |q, u| vec![q[1], u[0]])
            .unwrap()
            .with_jacobian_q(|_, _| DMatrix::from_row_slice(2, 2, &[0.0, 1.1, 0.0, 0.0]));
        let r = Scenario::new(
            "bad",
            sys,
            InitialDistribution::dirac(vec![0.0, 0.0]),
            energy_cost(1.0, 1.0).unwrap(),
            TimeGrid::new(1.0, 10).unwrap(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn trivial_cases_carry_zero_shape() {
        let s = cheapest_stop(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(s.reference.unwrap().control_shape, ControlShape::Zero);
        let s = cheapest_stop(1.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(s.reference.unwrap().control_shape, ControlShape::Zero);
    }
}
