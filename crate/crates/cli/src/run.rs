//! Subcommands and the run-spec file format.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use openloop_pmp::attainable::{dominance_check, sample_expected_endpoints, CloudOptions};
use openloop_pmp::direct::solve_direct;
use openloop_pmp::indirect::VerifyOptions;
use openloop_pmp::scenarios::{Scenario, ScenarioParams};
use openloop_pmp::{
    integrate_forward, solve_pmp_star, verify_extremal, EnsembleRule, Objective, PenaltyMode, SolveResult,
    SolverConfig,
};

#[derive(Debug, Parser)]
#[command(name = "openloop-pmp", version, about = "Open-loop optimal control under random initial states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a scenario with the expected-Hamiltonian solver.
    Solve(SolveArgs),
    /// Solve with both the indirect and the direct solver and compare.
    Compare(RunArgs),
    /// Solve, then check stationarity, Hamiltonian constancy, local optimality and cloud dominance.
    Verify(VerifyArgs),
    /// Sample the expected attainable set and write it as a table.
    Attainable(AttainableArgs),
}

/// Scenario and solver settings shared by every subcommand. Unset flags fall
/// back to the `--config` file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub v0: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Gauss–Hermite order per dimension.
    #[arg(long, conflicts_with = "samples")]
    pub order: Option<usize>,
    /// Monte Carlo sample count (replaces quadrature).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// `terminal` or `absorbed`.
    #[arg(long)]
    pub penalty_mode: Option<PenaltyMode>,
    /// Flat key-value run spec (same keys as a run summary).
    #[arg(long, conflicts_with = "from_summary")]
    pub config: Option<PathBuf>,
    /// Replay the run spec recorded in a summary file.
    #[arg(long)]
    pub from_summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Omit the timestamp from the summary.
    #[arg(long)]
    pub no_timestamp: bool,
    /// Add per-ensemble-member states to the control table.
    #[arg(long)]
    pub states: bool,
}

#[derive(Debug, Args)]
pub struct CloudArgs {
    /// Number of random controls.
    #[arg(long, default_value_t = 2000)]
    pub controls: usize,
    #[arg(long, default_value_t = 2.0)]
    pub amplitude: f64,
    /// Evenly spaced random knots per control; 0 draws every node.
    #[arg(long, default_value_t = 3)]
    pub knots: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub cloud: CloudArgs,
}

#[derive(Debug, Args)]
pub struct AttainableArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub cloud: CloudArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub scenario: String,
    pub x0: f64,
    pub v0: f64,
    pub k: f64,
    pub t1: f64,
    pub steps: usize,
    /// Zero when Monte Carlo sampling is used.
    pub quadrature_order: usize,
    /// Zero when quadrature is used.
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub penalty_mode: String,
}

impl Default for RunSpec {
    fn default() -> Self {
        let p = ScenarioParams::default();
        let c = SolverConfig::default();
        Self {
            scenario: "cheapest-stop".into(),
            x0: p.x0,
            v0: p.v0,
            k: p.k,
            t1: p.t1,
            steps: p.steps,
            quadrature_order: 5,
            samples: 0,
            seed: c.seed,
            tolerance: c.tolerance,
            max_iterations: c.max_iterations,
            penalty_mode: PenaltyMode::default().as_str().into(),
        }
    }
}

impl RunSpec {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut spec = match (&args.config, &args.from_summary) {
            (Some(path), _) | (None, Some(path)) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            (None, None) => RunSpec::default(),
        };
        if let Some(v) = &args.scenario {
            spec.scenario = v.clone();
        }
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = args.$field { spec.$field = v; } )* };
        }
        take!(x0, v0, k, t1, steps, seed, tolerance, max_iterations);
        if let Some(order) = args.order {
            spec.quadrature_order = order;
            spec.samples = 0;
        }
        if let Some(samples) = args.samples {
            spec.samples = samples;
            spec.quadrature_order = 0;
        }
        if let Some(mode) = args.penalty_mode {
            spec.penalty_mode = mode.as_str().into();
        }
        Ok(spec)
    }

    pub fn params(&self) -> ScenarioParams {
        ScenarioParams { x0: self.x0, v0: self.v0, k: self.k, t1: self.t1, steps: self.steps }
    }

    pub fn ensemble(&self) -> Result<EnsembleRule> {
        match (self.quadrature_order, self.samples) {
            (0, 0) => bail!("either quadrature_order or samples must be positive"),
            (order, 0) => Ok(EnsembleRule::Quadrature { order }),
            (0, samples) => Ok(EnsembleRule::MonteCarlo { samples }),
            _ => bail!("quadrature_order and samples are mutually exclusive"),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let mode: PenaltyMode = self.penalty_mode.parse().map_err(anyhow::Error::msg)?;
        Ok(SolverConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            ensemble: self.ensemble()?,
            seed: self.seed,
            penalty_mode: Some(mode),
            objective: Objective::Minimize,
            ..SolverConfig::default()
        })
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario::by_name(&self.scenario, &self.params())?)
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    #[serde(flatten)]
    spec: &'a RunSpec,
    expected_cost: f64,
    penalty_offset: f64,
    total_cost: f64,
    residual_max: f64,
    iterations: usize,
    converged: bool,
    termination: String,
    nu: f64,
    ensemble_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
}

fn summary_text(spec: &RunSpec, r: &SolveResult, timestamp: bool) -> Result<String> {
    let termination = format!("{:?}", r.termination).to_lowercase();
    let timestamp = if timestamp {
        Some(SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
    } else {
        None
    };
    let summary = Summary {
        spec,
        expected_cost: r.expected_cost,
        penalty_offset: r.penalty_offset,
        total_cost: r.total_cost(),
        residual_max: r.residual_max,
        iterations: r.iterations,
        converged: r.converged,
        termination,
        nu: r.nu,
        ensemble_size: r.ensemble_size,
        timestamp,
    };
    Ok(toml::to_string(&summary)?)
}

fn write_control_table(path: &Path, scenario: &Scenario, spec: &RunSpec, r: &SolveResult, states: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let m = r.control.dim();
    let n = scenario.system.state_dim();
    let members = if states {
        let ensemble = scenario.distribution.discretize(spec.ensemble()?, spec.seed)?;
        ensemble
            .points()
            .iter()
            .map(|q0| integrate_forward(&scenario.system, q0, &r.control, &scenario.grid))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let mut header = vec!["t".to_string()];
    if m == 1 {
        header.push("u".into());
    } else {
        header.extend((1..=m).map(|j| format!("u{j}")));
    }
    for i in 0..members.len() {
        header.extend((1..=n).map(|j| format!("m{i}_x{j}")));
    }
    w.write_record(&header)?;
    for (k, t) in scenario.grid.times().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(r.control.node(k).iter().map(f64::to_string));
        for traj in &members {
            row.extend(traj.state(k).iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn solve(spec: &RunSpec, scenario: &Scenario) -> Result<SolveResult> {
    Ok(solve_pmp_star(&scenario.system, &scenario.distribution, &scenario.cost, &scenario.grid, &spec.solver_config()?)?)
}

fn cloud_options(spec: &RunSpec, args: &CloudArgs) -> Result<CloudOptions> {
    Ok(CloudOptions { ensemble: spec.ensemble()?, knots: (args.knots > 0).then_some(args.knots) })
}

fn exit_status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

pub fn cmd_solve(args: SolveArgs) -> Result<ExitCode> {
    let spec = RunSpec::resolve(&args.run)?;
    let scenario = spec.scenario()?;
    let r = solve(&spec, &scenario)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let text = summary_text(&spec, &r, !args.no_timestamp)?;
    fs::write(args.out_dir.join("summary.toml"), &text)?;
    write_control_table(&args.out_dir.join("control.csv"), &scenario, &spec, &r, args.states)?;
    print!("{text}");
    Ok(exit_status(r.converged))
}

pub fn cmd_compare(args: RunArgs) -> Result<ExitCode> {
    let spec = RunSpec::resolve(&args)?;
    let scenario = spec.scenario()?;
    let indirect = solve(&spec, &scenario)?;
    let direct = solve_direct(&scenario.system, &scenario.distribution, &scenario.cost, &scenario.grid, &spec.solver_config()?)?;
    let cost_diff = (indirect.expected_cost - direct.expected_cost).abs();
    let cost_tol = 1e-4 * (1.0 + direct.expected_cost.abs());
    let sup = indirect.control.sup_distance(&direct.control);
    let sup_tol = 1e-3 * (1.0 + direct.control.max_abs());
    let pass = cost_diff <= cost_tol && sup <= sup_tol;
    println!("indirect_cost = {}", indirect.expected_cost);
    println!("direct_cost = {}", direct.expected_cost);
    println!("cost_difference = {cost_diff:e} (tolerance {cost_tol:e})");
    println!("control_sup_difference = {sup:e} (tolerance {sup_tol:e})");
    println!("indirect_iterations = {}", indirect.iterations);
    println!("direct_iterations = {}", direct.iterations);
    println!("result = {}", if pass { "pass" } else { "fail" });
    Ok(exit_status(pass))
}

pub fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let spec = RunSpec::resolve(&args.run)?;
    let s = spec.scenario()?;
    let r = solve(&spec, &s)?;
    let report = verify_extremal(&r, &s.system, &s.distribution, &s.cost, &s.grid, &VerifyOptions::default())?;
    let cloud = sample_expected_endpoints(
        &s.system,
        &s.distribution,
        &s.cost,
        &s.grid,
        args.cloud.controls,
        args.cloud.amplitude,
        spec.seed,
        &cloud_options(&spec, &args.cloud)?,
    )?;
    let dominance = dominance_check(&r, &cloud, 1e-6);
    println!("converged = {}", r.converged);
    println!("residual_max = {:e} (worst node {})", report.residual_max, report.worst_node);
    println!("hamiltonian_spread = {:e}", report.hamiltonian_spread);
    println!("nontrivial = {}", report.nontrivial);
    println!("best_perturbation_improvement = {:e}", report.best_improvement);
    println!(
        "dominance_violations = {} of {} (min margin {:e})",
        dominance.violations.len(),
        cloud.len(),
        dominance.min_margin
    );
    if let Some(warning) = &dominance.warning {
        println!("warning: {warning}");
    }
    for failure in report.failures() {
        println!("failed: {failure}");
    }
    let pass = r.converged && report.passed() && dominance.passed();
    println!("result = {}", if pass { "pass" } else { "fail" });
    Ok(exit_status(pass))
}

pub fn cmd_attainable(args: AttainableArgs) -> Result<ExitCode> {
    let spec = RunSpec::resolve(&args.run)?;
    let s = spec.scenario()?;
    let cloud = sample_expected_endpoints(
        &s.system,
        &s.distribution,
        &s.cost,
        &s.grid,
        args.cloud.controls,
        args.cloud.amplitude,
        spec.seed,
        &cloud_options(&spec, &args.cloud)?,
    )?;
    fs::create_dir_all(&args.out_dir)?;
    let path = args.out_dir.join("cloud.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["cost".to_string()];
    header.extend((1..=s.system.state_dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for p in &cloud.points {
        let mut row = vec![p.cost.to_string()];
        row.extend(p.state.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("wrote {} points to {}", cloud.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Attainable(a) => cmd_attainable(a),
    }
}
