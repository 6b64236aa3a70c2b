use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_openloop-pmp")).args(args).output().expect("spawn")
}

fn field(summary: &str, key: &str) -> String {
    let table: toml::Table = summary.parse().unwrap();
    table[key].to_string()
}

fn solve_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn solve_writes_summary_and_affine_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_into(
        dir.path(),
        &["--scenario", "cheapest-stop", "--x0", "1", "--v0", "1", "--k", "1", "--t1", "1", "--steps", "100"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert_eq!(field(&summary, "converged"), "true");
    assert_eq!(field(&summary, "nu"), "-1.0");
    assert!(summary.contains("timestamp"));
    let total: f64 = field(&summary, "total_cost").parse().unwrap();
    assert!((total - 175.0 / 29.0).abs() < 1e-9);

    let mut reader = csv::Reader::from_path(dir.path().join("control.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["t", "u"]);
    let rows: Vec<(f64, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 101);
    // Closed-form braking control for (1, 1, 1, 1): u(t) = (42 t - 46) / 29.
    for (t, u) in rows {
        assert!((u - (42.0 * t - 46.0) / 29.0).abs() < 1e-7, "t={t} u={u}");
    }
}

#[test]
fn resting_mean_gives_zero_control() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_into(dir.path(), &["--scenario", "cheapest-stop", "--x0", "0", "--v0", "0", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    let summary = fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert_eq!(field(&summary, "iterations"), "0");
    // Only the control-independent spread k (2 + t1²) remains.
    let total: f64 = field(&summary, "total_cost").parse().unwrap();
    assert!((total - 3.0).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let out = solve_into(dir.path(), &["--scenario", "cheapest-stop-deterministic", "--x0", "0", "--v0", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let summary = fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert_eq!(field(&summary, "total_cost"), "0.0");
}

#[test]
fn reruns_are_byte_identical_without_timestamp() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let flags = ["--scenario", "nonlinear-drift", "--samples", "32", "--seed", "9", "--no-timestamp", "--states"];
    assert_eq!(solve_into(a.path(), &flags).status.code(), Some(0));
    assert_eq!(solve_into(b.path(), &flags).status.code(), Some(0));
    for file in ["summary.toml", "control.csv"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    let mut reader = csv::Reader::from_path(a.path().join("control.csv")).unwrap();
    assert_eq!(reader.headers().unwrap().len(), 2 + 32 * 2);
}

#[test]
fn summary_replays_to_the_same_result() {
    let a = tempfile::tempdir().unwrap();
    let flags = ["--scenario", "cheapest-stop", "--x0", "-0.5", "--k", "3", "--order", "3", "--penalty-mode", "absorbed", "--no-timestamp"];
    assert_eq!(solve_into(a.path(), &flags).status.code(), Some(0));
    let summary = a.path().join("summary.toml");
    let b = tempfile::tempdir().unwrap();
    let out = solve_into(b.path(), &["--from-summary", summary.to_str().unwrap(), "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    for file in ["summary.toml", "control.csv"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "scenario = \"cheapest-stop-deterministic\"\nx0 = 2.0\nv0 = 0.0\nk = 1.0\nsteps = 40\n").unwrap();
    let out = solve_into(dir.path(), &["--config", config.to_str().unwrap(), "--steps", "20", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert_eq!(field(&summary, "scenario"), "\"cheapest-stop-deterministic\"");
    assert_eq!(field(&summary, "steps"), "20");
    assert_eq!(field(&summary, "x0"), "2.0");
}

#[test]
fn unknown_scenario_lists_known_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_into(dir.path(), &["--scenario", "moon-landing"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["cheapest-stop", "cheapest-stop-deterministic", "nonlinear-drift"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn iteration_budget_exhaustion_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = solve_into(dir.path(), &["--max-iterations", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let summary = fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert_eq!(field(&summary, "converged"), "false");
}

#[test]
fn compare_reports_agreement() {
    let out = run(&["compare", "--scenario", "cheapest-stop-deterministic", "--steps", "40"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("result = pass"), "{text}");
    assert!(text.contains("cost_difference"));
}

#[test]
fn verify_passes_on_braking() {
    let out = run(&["verify", "--scenario", "cheapest-stop", "--steps", "40", "--controls", "300"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("dominance_violations = 0 of 300"));
}

#[test]
fn verify_fails_when_stopped_early() {
    let out = run(&["verify", "--scenario", "cheapest-stop", "--steps", "40", "--controls", "10", "--max-iterations", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn attainable_writes_cost_first_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "attainable",
        "--scenario",
        "cheapest-stop",
        "--steps",
        "20",
        "--controls",
        "50",
        "--seed",
        "7",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mut reader = csv::Reader::from_path(dir.path().join("cloud.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["cost", "x1", "x2"]);
    let costs: Vec<f64> = reader.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(costs.len(), 50);
    assert!(costs.iter().all(|c| *c >= 175.0 / 29.0 - 1e-6));
}
