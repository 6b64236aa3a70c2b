//! Open-loop optimal control of deterministic dynamics whose initial state is
//! random.
//!
//! A single control `u(t)`, shared by every realization of the initial
//! condition, is chosen to minimize the expected running cost plus a smooth
//! terminal penalty. The indirect solver drives the gradient of the expected
//! Hamiltonian `E[<λ, f(q,u)> + ν φ(q,u)]` to zero, with one costate per
//! ensemble member; the direct solver minimizes the same expected cost by
//! finite differences and serves as an independent oracle.

pub mod attainable;
pub mod control;
pub mod cost;
pub mod direct;
pub mod distribution;
pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod indirect;
mod numeric;
pub mod scenarios;

pub use control::ControlSignal;
pub use cost::{absorb_penalty, augment, expected_cost, CostSpec, PenaltyMode, TerminalPenalty};
pub use distribution::{
    expectation, quadrature_nodes, sample, EnsembleRule, InitialDistribution, WeightedEnsemble,
};
pub use dynamics::{
    check_jacobians, integrate_costate_backward, integrate_forward, ControlSystem, TimeGrid,
    Trajectory,
};
pub use error::{Error, Result};
pub use hamiltonian::{EnsembleExtremal, ExtremalParameter, Objective};
pub use indirect::{solve_pmp, solve_pmp_star, verify_extremal, SolveResult, SolverConfig};

pub use scenarios::Scenario;
