mod common;

use approx::assert_relative_eq;
use openloop_pmp::direct::{grid_search_linear_family, solve_direct};
use openloop_pmp::scenarios::{
    cheapest_stop, cheapest_stop_deterministic, cubic_cost_braking, nonlinear_drift, CHEAPEST_STOP_REFERENCE_COST,
};
use openloop_pmp::{solve_pmp_star, SolverConfig};

use common::{braking_variance_term, BrakingOptimum};

#[test]
fn origin_stays_at_rest() {
    let s = cheapest_stop_deterministic(0.0, 0.0, 1.0, 1.0).unwrap();
    let r = solve_direct(&s.system, &s.distribution, &s.cost, &s.grid, &SolverConfig::default()).unwrap();
    assert_eq!(r.control.max_abs(), 0.0);
    assert_eq!(r.total_cost(), 0.0);
}

#[test]
fn agrees_with_indirect_on_gaussian_braking() {
    let s = cheapest_stop(1.0, 1.0, 1.0, 1.0).unwrap().with_steps(50).unwrap();
    let cfg = SolverConfig::default();
    let d = solve_direct(&s.system, &s.distribution, &s.cost, &s.grid, &cfg).unwrap();
    let i = solve_pmp_star(&s.system, &s.distribution, &s.cost, &s.grid, &cfg).unwrap();
    assert!(d.converged);
    assert_relative_eq!(d.expected_cost, i.expected_cost, max_relative = 1e-5);
    assert!(d.control.sup_distance(&i.control) <= 1e-3 * (1.0 + d.control.max_abs()));
}

#[test]
fn agrees_with_indirect_beyond_linear_dynamics() {
    let s = nonlinear_drift(1.0, 1.0, 1.0, 1.0).unwrap().with_steps(50).unwrap();
    let cfg = SolverConfig::default();
    let d = solve_direct(&s.system, &s.distribution, &s.cost, &s.grid, &cfg).unwrap();
    let i = solve_pmp_star(&s.system, &s.distribution, &s.cost, &s.grid, &cfg).unwrap();
    assert!((d.expected_cost - i.expected_cost).abs() <= 1e-4 * (1.0 + d.expected_cost.abs()));
    assert!(d.control.sup_distance(&i.control) <= 1e-3 * (1.0 + d.control.max_abs()));
}

#[test]
fn pinned_reference_matches_closed_form() {
    // The pinned value came from the direct oracle; the closed form is independent of it.
    let exact = BrakingOptimum::new(1.0, 1.0, 1.0, 1.0).cost + braking_variance_term(1.0, 1.0, [[1.0, 0.0], [0.0, 1.0]]);
    assert_relative_eq!(CHEAPEST_STOP_REFERENCE_COST, exact, max_relative = 1e-12);
    let s = cheapest_stop(1.0, 1.0, 1.0, 1.0).unwrap();
    let r = solve_pmp_star(&s.system, &s.distribution, &s.cost, &s.grid, &SolverConfig::default()).unwrap();
    assert_relative_eq!(r.total_cost(), CHEAPEST_STOP_REFERENCE_COST, max_relative = 1e-10);
    assert_eq!(s.reference.unwrap().expected_cost, Some(CHEAPEST_STOP_REFERENCE_COST));
}

#[test]
fn linear_family_at_the_origin() {
    let s = cheapest_stop_deterministic(0.0, 0.0, 1.0, 1.0).unwrap();
    let fit = grid_search_linear_family(&s.system, &s.distribution, &s.cost, &s.grid, (-2.0, 2.0), (-2.0, 2.0), 21).unwrap();
    assert!(fit.alpha.abs() < 1e-9 && fit.beta.abs() < 1e-9);
    assert!(fit.expected_cost < 1e-15);
}

#[test]
fn linear_family_contains_the_braking_optimum() {
    let s = cheapest_stop(1.0, 1.0, 1.0, 1.0).unwrap();
    let fit = grid_search_linear_family(&s.system, &s.distribution, &s.cost, &s.grid, (0.0, 3.0), (-3.0, 0.0), 16).unwrap();
    let i = solve_pmp_star(&s.system, &s.distribution, &s.cost, &s.grid, &SolverConfig::default()).unwrap();
    assert!(fit.refined);
    assert_relative_eq!(fit.expected_cost, i.expected_cost, max_relative = 1e-4);
    let oracle = BrakingOptimum::new(1.0, 1.0, 1.0, 1.0);
    assert!((fit.beta - oracle.control(0.0)).abs() < 1e-6);
}

#[test]
fn linear_family_misses_a_non_affine_optimum() {
    let s = cubic_cost_braking(1.0, 1.0, 1.0, 1.0).unwrap().with_steps(40).unwrap();
    let fit = grid_search_linear_family(&s.system, &s.distribution, &s.cost, &s.grid, (-2.0, 2.0), (-1.0, 1.0), 21).unwrap();
    let d = solve_direct(&s.system, &s.distribution, &s.cost, &s.grid, &SolverConfig::default()).unwrap();
    assert!(d.control.within_bounds(&[-1.0], &[1.0]));
    assert!(fit.expected_cost > d.expected_cost + 1e-6, "{} vs {}", fit.expected_cost, d.expected_cost);
}
