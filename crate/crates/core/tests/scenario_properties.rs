use openloop_pmp::scenarios::{cheapest_stop, nonlinear_drift};
use openloop_pmp::{expected_cost, solve_pmp_star, ControlSignal, PenaltyMode, SolverConfig};
use proptest::prelude::*;

#[test]
fn negating_the_initial_mean_negates_the_control() {
    let cfg = SolverConfig::default();
    for (x0, v0) in [(1.0, 1.0), (0.3, -2.0)] {
        let a = cheapest_stop(x0, v0, 2.0, 1.0).unwrap();
        let b = cheapest_stop(-x0, -v0, 2.0, 1.0).unwrap();
        let ra = solve_pmp_star(&a.system, &a.distribution, &a.cost, &a.grid, &cfg).unwrap();
        let rb = solve_pmp_star(&b.system, &b.distribution, &b.cost, &b.grid, &cfg).unwrap();
        for (u, v) in ra.control.values().iter().zip(rb.control.values()) {
            assert!((u + v).abs() < 1e-8);
        }
    }
}

#[test]
fn large_penalty_approaches_the_hard_stop() {
    let mut previous = f64::INFINITY;
    for k in [1.0, 10.0, 1e3, 1e6] {
        let s = cheapest_stop(1.0, 1.0, k, 1.0).unwrap();
        let r = solve_pmp_star(&s.system, &s.distribution, &s.cost, &s.grid, &SolverConfig::default()).unwrap();
        assert!(r.converged, "k = {k}: residual {:e}", r.residual_max);
        let cost = s.cost.clone().with_penalty_mode(PenaltyMode::TerminalTransversality);
        let energy = openloop_pmp::CostSpec::new(1.0, |_, u| u[0] * u[0]).unwrap();
        let ens = s.distribution.discretize(r.ensemble_rule, r.seed).unwrap();
        let total = expected_cost(&s.system, &cost, &ens, &r.control, &s.grid).unwrap();
        let running = expected_cost(&s.system, &energy, &ens, &r.control, &s.grid).unwrap();
        let miss = (total - running) / k;
        assert!(miss < previous, "k = {k}: {miss} !< {previous}");
        previous = miss;
    }
    // The mean reaches the origin; the unit-variance spread E = 2 + t1² remains.
    assert!((previous - 3.0).abs() < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn modes_differ_by_the_initial_penalty(coeffs in prop::collection::vec(-2.0f64..2.0, 3)) {
        for s in [cheapest_stop(1.0, 1.0, 1.0, 1.0).unwrap(), nonlinear_drift(0.5, -0.5, 2.0, 1.0).unwrap()] {
            let u = ControlSignal::from_fn(s.grid, 1, |t| vec![coeffs[0] + coeffs[1] * t + coeffs[2] * t * t]);
            let ens = s.distribution.discretize(Default::default(), 0).unwrap();
            let tv = s.cost.clone().with_penalty_mode(PenaltyMode::TerminalTransversality);
            let ab = s.cost.clone().with_penalty_mode(PenaltyMode::Absorbed);
            let j_tv = expected_cost(&s.system, &tv, &ens, &u, &s.grid).unwrap();
            let j_ab = expected_cost(&s.system, &ab, &ens, &u, &s.grid).unwrap();
            let offset = ab.resolved(&s.system).unwrap().penalty_offset(&ens);
            prop_assert!((j_tv - j_ab - offset).abs() <= 1e-8 * j_tv.abs());
        }
    }

    #[test]
    fn expected_cost_grows_with_the_penalty_weight(
        k in 0.0f64..5.0,
        dk in 0.0f64..5.0,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let lo = cheapest_stop(1.0, 1.0, k, 1.0).unwrap();
        let hi = cheapest_stop(1.0, 1.0, k + dk, 1.0).unwrap();
        let u = ControlSignal::from_fn(lo.grid, 1, |t| vec![a * t + b]);
        let ens = lo.distribution.discretize(Default::default(), 0).unwrap();
        let j_lo = expected_cost(&lo.system, &lo.cost, &ens, &u, &lo.grid).unwrap();
        let j_hi = expected_cost(&hi.system, &hi.cost, &ens, &u, &hi.grid).unwrap();
        prop_assert!(j_hi >= j_lo);
    }
}
