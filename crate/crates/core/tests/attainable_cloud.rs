use openloop_pmp::attainable::{dominance_check, random_controls, sample_expected_endpoints, CloudOptions};
use openloop_pmp::scenarios::{cheapest_stop, cheapest_stop_deterministic};
use openloop_pmp::{
    integrate_forward, solve_pmp_star, ControlSystem, CostSpec, InitialDistribution, SolverConfig, TimeGrid,
};

fn double_integrator() -> ControlSystem {
    ControlSystem::new(2, 1, |q, u| vec![q[1], u[0]]).unwrap()
}

#[test]
fn identical_seeds_give_identical_clouds() {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let cost = CostSpec::new(1.0, |_, u| u[0] * u[0]).unwrap();
    let dist = InitialDistribution::dirac(vec![0.0, 0.0]);
    let opts = CloudOptions::default();
    let a = sample_expected_endpoints(&double_integrator(), &dist, &cost, &grid, 1000, 1.0, 7, &opts).unwrap();
    let b = sample_expected_endpoints(&double_integrator(), &dist, &cost, &grid, 1000, 1.0, 7, &opts).unwrap();
    assert_eq!(a, b);
    let c = sample_expected_endpoints(&double_integrator(), &dist, &cost, &grid, 1000, 1.0, 8, &opts).unwrap();
    assert_ne!(a, c);
}

#[test]
fn dirac_cloud_is_the_ordinary_attainable_sample() {
    let s = cheapest_stop_deterministic(0.4, -0.2, 1.0, 1.0).unwrap().with_steps(30).unwrap();
    let opts = CloudOptions { knots: Some(4), ..Default::default() };
    let cloud = sample_expected_endpoints(&s.system, &s.distribution, &s.cost, &s.grid, 50, 1.5, 3, &opts).unwrap();
    let controls = random_controls(&s.system, &s.grid, 50, 1.5, 3, Some(4)).unwrap();
    for (p, u) in cloud.points.iter().zip(&controls) {
        let traj = integrate_forward(&s.system, &[0.4, -0.2], u, &s.grid).unwrap();
        let end = traj.final_state();
        assert!((p.state[0] - end[0]).abs() < 1e-12 && (p.state[1] - end[1]).abs() < 1e-12);
        // ∫u² of a piecewise-linear control, exactly, plus the terminal penalty.
        let dt = s.grid.dt();
        let energy: f64 = u
            .values()
            .windows(2)
            .map(|w| dt * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]) / 3.0)
            .sum();
        let total = energy + end[0] * end[0] + end[1] * end[1];
        assert!((p.cost - total).abs() < 1e-10, "{} vs {total}", p.cost);
    }
}

#[test]
fn expected_endpoint_is_the_weighted_member_mean() {
    let s = cheapest_stop(1.0, -0.5, 1.0, 1.0).unwrap().with_steps(20).unwrap();
    let opts = CloudOptions::default();
    let cloud = sample_expected_endpoints(&s.system, &s.distribution, &s.cost, &s.grid, 5, 1.0, 9, &opts).unwrap();
    let controls = random_controls(&s.system, &s.grid, 5, 1.0, 9, None).unwrap();
    let ensemble = s.distribution.discretize(opts.ensemble, 9).unwrap();
    for (p, u) in cloud.points.iter().zip(&controls) {
        let mut mean = [0.0; 2];
        for (q0, w) in ensemble.points().iter().zip(ensemble.weights()) {
            let end = integrate_forward(&s.system, q0, u, &s.grid).unwrap().final_state().to_vec();
            mean[0] += w * end[0];
            mean[1] += w * end[1];
        }
        assert!((p.state[0] - mean[0]).abs() < 1e-12 && (p.state[1] - mean[1]).abs() < 1e-12);
    }
}

#[test]
fn converged_braking_dominates_a_cloud_and_early_stop_does_not() {
    let s = cheapest_stop(1.0, 1.0, 1.0, 1.0).unwrap().with_steps(40).unwrap();
    let cfg = SolverConfig::default();
    let good = solve_pmp_star(&s.system, &s.distribution, &s.cost, &s.grid, &cfg).unwrap();
    let early =
        solve_pmp_star(&s.system, &s.distribution, &s.cost, &s.grid, &SolverConfig { max_iterations: 1, ..cfg }).unwrap();
    let opts = CloudOptions { knots: Some(2), ..Default::default() };
    let cloud = sample_expected_endpoints(&s.system, &s.distribution, &s.cost, &s.grid, 2000, 2.0, 1, &opts).unwrap();
    assert!(cloud.min_cost().unwrap() >= good.total_cost() - 1e-6);
    let report = dominance_check(&good, &cloud, 1e-6);
    assert!(report.passed());
    assert!(report.min_margin >= -1e-6 && report.max_margin >= report.mean_margin);
    assert!(!dominance_check(&early, &cloud, 1e-6).passed());
}

#[test]
fn empty_cloud_passes_with_a_warning() {
    let s = cheapest_stop(0.0, 0.0, 1.0, 1.0).unwrap().with_steps(10).unwrap();
    let r = solve_pmp_star(&s.system, &s.distribution, &s.cost, &s.grid, &SolverConfig::default()).unwrap();
    let cloud =
        sample_expected_endpoints(&s.system, &s.distribution, &s.cost, &s.grid, 0, 1.0, 0, &CloudOptions::default()).unwrap();
    let report = dominance_check(&r, &cloud, 1e-6);
    assert!(report.passed());
    assert!(report.warning.is_some());
}
