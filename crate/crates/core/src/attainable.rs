//! Monte Carlo probe of the expected attainable set.
//!
//! Each cloud point is the probability-weighted mean, over the discretized
//! initial distribution, of the augmented endpoint `(cost, q(t1))` reached
//! under one random open-loop control. The same control is applied to every
//! realization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::ControlSignal;
use crate::cost::{check_horizon, rollout_ensemble, CostSpec, PenaltyMode};
use crate::distribution::{EnsembleRule, InitialDistribution, WeightedEnsemble};
use crate::dynamics::{ControlSystem, TimeGrid};
use crate::error::{contract, Result};
use crate::indirect::SolveResult;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CloudOptions {
    pub ensemble: EnsembleRule,
    /// Number of evenly spaced knots carrying independent random values,
    /// linearly interpolated in between. `None` draws every node independently.
    pub knots: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedEndpoint {
    /// Expected total cost, terminal penalty included.
    pub cost: f64,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    pub points: Vec<ExpectedEndpoint>,
    pub amplitude: f64,
    pub seed: u64,
}

impl Cloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min_cost(&self) -> Option<f64> {
        self.points.iter().map(|p| p.cost).min_by(f64::total_cmp)
    }
}

/// Draws one random control per cloud point.
pub fn random_controls(
    system: &ControlSystem,
    grid: &TimeGrid,
    n_controls: usize,
    amplitude: f64,
    seed: u64,
    knots: Option<usize>,
) -> Result<Vec<ControlSignal>> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(contract("amplitude must be finite and nonnegative"));
    }
    let m = system.control_dim();
    let n_nodes = grid.n_nodes();
    let knots = knots.unwrap_or(n_nodes);
    if knots < 2 && n_nodes > 1 {
        return Err(contract("at least two knots are needed"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |count: usize| -> Vec<f64> {
        (0..count * m)
            .map(|_| if amplitude > 0.0 { rng.random_range(-amplitude..=amplitude) } else { 0.0 })
            .collect()
    };
    let mut out = Vec::with_capacity(n_controls);
    for _ in 0..n_controls {
        let mut u = if knots == n_nodes {
            ControlSignal::from_values(*grid, m, draw(n_nodes))?
        } else {
            let knot_values = draw(knots);
            let span = grid.t1() / (knots - 1) as f64;
            ControlSignal::from_fn(*grid, m, |t| {
                let pos = (t / span).min((knots - 1) as f64);
                let i = (pos.floor() as usize).min(knots - 2);
                let s = pos - i as f64;
                (0..m)
                    .map(|j| (1.0 - s) * knot_values[i * m + j] + s * knot_values[(i + 1) * m + j])
                    .collect()
            })
        };
        u.clip(system.control_lower(), system.control_upper());
        out.push(u);
    }
    Ok(out)
}

/// Expected augmented endpoint of each control over `ensemble`.
pub fn expected_endpoints(
    system: &ControlSystem,
    ensemble: &WeightedEnsemble,
    cost: &CostSpec,
    grid: &TimeGrid,
    controls: &[ControlSignal],
) -> Result<Vec<ExpectedEndpoint>> {
    check_horizon(cost, grid)?;
    // The accumulated running cost plus the penalty at the reached endpoint.
    let resolved = cost.clone().with_penalty_mode(PenaltyMode::TerminalTransversality).resolved(system)?;
    controls
        .par_iter()
        .map(|u| {
            let rollouts = rollout_ensemble(system, &resolved, ensemble, u, grid)?;
            let mut cost = 0.0;
            let mut state = vec![0.0; system.state_dim()];
            for (r, w) in rollouts.iter().zip(ensemble.weights()) {
                cost += w * r.total();
                for (s, q) in state.iter_mut().zip(r.trajectory.final_state()) {
                    *s += w * q;
                }
            }
            Ok(ExpectedEndpoint { cost, state })
        })
        .collect()
}

/// Samples the expected attainable set with `n_controls` random controls
/// whose values are uniform in `[-amplitude, amplitude]` and clipped to the
/// admissible box.
#[allow(clippy::too_many_arguments)]
pub fn sample_expected_endpoints(
    system: &ControlSystem,
    dist: &InitialDistribution,
    cost: &CostSpec,
    grid: &TimeGrid,
    n_controls: usize,
    amplitude: f64,
    seed: u64,
    options: &CloudOptions,
) -> Result<Cloud> {
    let ensemble = dist.discretize(options.ensemble, seed)?;
    let controls = random_controls(system, grid, n_controls, amplitude, seed, options.knots)?;
    let points = expected_endpoints(system, &ensemble, cost, grid, &controls)?;
    Ok(Cloud { points, amplitude, seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    /// Total expected cost of the solution being checked.
    pub reference_cost: f64,
    pub tolerance: f64,
    pub violations: Vec<usize>,
    pub min_margin: f64,
    pub mean_margin: f64,
    pub max_margin: f64,
    pub warning: Option<String>,
}

impl DominanceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reports every cloud point whose cost coordinate lies more than
/// `tolerance` below the solution's expected total cost.
pub fn dominance_check(result: &SolveResult, cloud: &Cloud, tolerance: f64) -> DominanceReport {
    let reference_cost = result.total_cost();
    if cloud.is_empty() {
        return DominanceReport {
            reference_cost,
            tolerance,
            violations: Vec::new(),
            min_margin: f64::NAN,
            mean_margin: f64::NAN,
            max_margin: f64::NAN,
            warning: Some("empty cloud; dominance holds vacuously".into()),
        };
    }
    let margins: Vec<f64> = cloud.points.iter().map(|p| p.cost - reference_cost).collect();
    let violations = margins
        .iter()
        .enumerate()
        .filter(|(_, m)| **m < -tolerance)
        .map(|(i, _)| i)
        .collect();
    DominanceReport {
        reference_cost,
        tolerance,
        violations,
        min_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        mean_margin: margins.iter().sum::<f64>() / margins.len() as f64,
        max_margin: margins.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        warning: None,
    }
}
