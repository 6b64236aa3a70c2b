use olp::indirect::SolverConfig;
use olp::{EnsembleRule, PenaltyMode};
use openloop_pmp::solver_config;

#[test]
fn keyword_settings_map_onto_the_solver_config() {
    let cfg = solver_config(3, None, 4, 1e-9, 10, "absorbed").unwrap();
    assert_eq!(cfg.ensemble, EnsembleRule::Quadrature { order: 3 });
    assert_eq!(cfg.penalty_mode, Some(PenaltyMode::Absorbed));
    assert_eq!(cfg.seed, 4);
    assert_eq!(cfg.initial_step, SolverConfig::default().initial_step);
    let cfg = solver_config(3, Some(64), 0, 1e-8, 10, "terminal").unwrap();
    assert_eq!(cfg.ensemble, EnsembleRule::MonteCarlo { samples: 64 });
}

#[test]
fn unknown_penalty_mode_is_rejected() {
    assert!(solver_config(5, None, 0, 1e-8, 10, "soft").is_err());
}
