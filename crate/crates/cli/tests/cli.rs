use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hems_cli::commands::CompareRow;
use hems_cli::read_csv;
use hems_cli::sweep::{SweepRow, TimingRow};
use hybrid_ems::admm::parse_trace_csv;
use hybrid_ems::models::Topology;
use hybrid_ems::mpc::{parse_mission_csv, Strategy};
use tempfile::TempDir;

fn hems(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hems")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Twelve five-minute steps keep the closed-loop runs short.
fn coarse_scenario(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("coarse.toml");
    fs::write(&path, format!("schema-version = 1\ndelta = 300.0\n{extra}")).unwrap();
    path
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("`{line}` is not json: {e}"))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn run_default_scenario_writes_a_sixty_step_mission() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let res = hems(&["run", "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["mission.csv", "solver_trace.csv", "summary.txt", "power_split.svg", "soc_mass.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let (topology, records) = parse_mission_csv(&fs::read_to_string(out.join("mission.csv")).unwrap()).unwrap();
    assert_eq!(topology, Topology::Parallel);
    assert_eq!(records.len(), 60);
    assert!(records.iter().all(|r| r.converged));
    let trace = parse_trace_csv(&fs::read_to_string(out.join("solver_trace.csv")).unwrap()).unwrap();
    assert!(!trace.is_empty());
    assert!(trace.windows(2).all(|w| w[1].iteration > w[0].iteration));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("steps: 60"));
}

#[test]
fn missing_loss_table_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let sc = coarse_scenario(dir.path(), "[paths]\nlosses = \"no_such_table.csv\"\n");
    let res = hems(&["run", path_str(&sc), "--out", path_str(&dir.path().join("out"))]);
    assert_eq!(res.status.code(), Some(2));
    let err = stderr_json(&res);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("no_such_table.csv"));
}

#[test]
fn relative_paths_resolve_against_the_scenario_file() {
    let dir = TempDir::new().unwrap();
    fs::create_dir(dir.path().join("data")).unwrap();
    fs::write(dir.path().join("data/losses.csv"), hybrid_ems::schedule::DEFAULT_LOSSES_CSV).unwrap();
    let sc = coarse_scenario(dir.path(), "strategy = \"cdcs\"\n[paths]\nlosses = \"data/losses.csv\"\n");
    // run from elsewhere so only the scenario's directory can make the path work
    let res = Command::new(env!("CARGO_BIN_EXE_hems"))
        .current_dir(std::env::temp_dir())
        .args(["run", path_str(&sc), "--out", path_str(&dir.path().join("out"))])
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn topology_override_gives_series_columns() {
    let dir = TempDir::new().unwrap();
    let sc = coarse_scenario(dir.path(), "");
    let out = dir.path().join("out");
    let res = hems(&["run", path_str(&sc), "--topology", "series", "--strategy", "cdcs", "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("mission.csv")).unwrap();
    let header = text.lines().next().unwrap();
    for col in ["p_el", "p_c", "p_gen", "p_gt"] {
        assert!(header.split(',').any(|c| c == col), "{header}");
    }
    let (topology, records) = parse_mission_csv(&text).unwrap();
    assert_eq!(topology, Topology::Series);
    assert_eq!(records.len(), 12);
    // rule-based strategies do not solve, so the trace has a header only
    assert!(parse_trace_csv(&fs::read_to_string(out.join("solver_trace.csv")).unwrap()).unwrap().is_empty());
}

#[test]
fn unknown_flag_values_are_usage_errors() {
    assert_eq!(hems(&["run", "--topology", "tandem"]).status.code(), Some(2));
    assert_eq!(hems(&["run", "--strategy", "greedy"]).status.code(), Some(2));
    assert_eq!(hems(&["sweep", "--axis", "wingspan", "--values", "1"]).status.code(), Some(2));
}

#[test]
fn compare_needs_two_strategies() {
    let dir = TempDir::new().unwrap();
    let res = hems(&["compare", "--strategy", "cdcs", "--out", path_str(&dir.path().join("out"))]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(stderr_json(&res)["error"], "usage");
}

#[test]
fn compare_same_strategy_twice_saves_nothing() {
    let dir = TempDir::new().unwrap();
    let sc = coarse_scenario(dir.path(), "");
    let out = dir.path().join("out");
    let res = hems(&["compare", path_str(&sc), "--strategy", "admm-variable-mass,admm-variable-mass", "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv_path = out.join("compare.csv");
    let rows: Vec<CompareRow> = read_csv(&fs::read_to_string(&csv_path).unwrap(), &csv_path).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].saving_percent, 0.0);
    assert_eq!(rows[0].fuel_total_kg, rows[1].fuel_total_kg);
    assert!(out.join("battery_power.svg").is_file());
}

#[test]
fn compare_table_orders_strategies_and_topologies() {
    let dir = TempDir::new().unwrap();
    let sc = coarse_scenario(dir.path(), "");
    let out = dir.path().join("out");
    let res = hems(&[
        "compare",
        path_str(&sc),
        "--strategy",
        "cdcs,gas-turbine-only",
        "--topology",
        "parallel,series",
        "--out",
        path_str(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv_path = out.join("compare.csv");
    let rows: Vec<CompareRow> = read_csv(&fs::read_to_string(&csv_path).unwrap(), &csv_path).unwrap();
    let keys: Vec<_> = rows.iter().map(|r| (r.topology, r.strategy)).collect();
    assert_eq!(
        keys,
        [
            (Topology::Parallel, Strategy::Cdcs),
            (Topology::Parallel, Strategy::GasTurbineOnly),
            (Topology::Series, Strategy::Cdcs),
            (Topology::Series, Strategy::GasTurbineOnly),
        ]
    );
    // savings are against the first strategy: turbine-only burns more
    assert!(rows[1].saving_percent < 0.0 && rows[3].saving_percent < 0.0);
    for (t, s) in keys {
        let text = fs::read_to_string(out.join(format!("mission_{t}_{s}.csv"))).unwrap();
        assert_eq!(parse_mission_csv(&text).unwrap().0, t);
    }
}

#[test]
fn solver_side_failures_exit_three() {
    // the rule-based strategy empties the battery early and cannot hold the cap
    let dir = TempDir::new().unwrap();
    let sc = dir.path().join("capped.toml");
    fs::write(&sc, "schema-version = 1\nstrategy = \"cdcs\"\n[schedule]\ngt_power_cap = 3.0\n").unwrap();
    let res = hems(&["run", path_str(&sc), "--out", path_str(&dir.path().join("out"))]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(stderr_json(&res)["error"], "solver");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let sc = coarse_scenario(dir.path(), "");
    let outs: Vec<PathBuf> = (0..2).map(|k| dir.path().join(format!("out{k}"))).collect();
    for out in &outs {
        let res = hems(&["run", path_str(&sc), "--out", path_str(out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    for f in ["mission.csv", "solver_trace.csv", "summary.txt", "power_split.svg", "soc_mass.svg"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn random_sweep_is_reproducible_from_its_seed() {
    let dir = TempDir::new().unwrap();
    let sc = coarse_scenario(dir.path(), "");
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let res = hems(&["sweep", path_str(&sc), "--axis", "random", "--values", "2,0,1", "--seed", seed, "--out", path_str(&out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        out
    };
    let a = run("7", "a");
    let b = run("7", "b");
    let c = run("8", "c");
    let text = fs::read_to_string(a.join("sweep.csv")).unwrap();
    assert_eq!(text, fs::read_to_string(b.join("sweep.csv")).unwrap());
    assert_ne!(text, fs::read_to_string(c.join("sweep.csv")).unwrap());

    let rows: Vec<SweepRow> = read_csv(&text, &a.join("sweep.csv")).unwrap();
    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    assert_eq!(values, [0.0, 1.0, 2.0], "merged by sorted value");
    for r in &rows {
        assert!(r.converged);
        assert!(r.relative_gap.abs() < 1e-3, "gap {}", r.relative_gap);
    }
    let timing_path = a.join("sweep_timing.csv");
    let timings: Vec<TimingRow> = read_csv(&fs::read_to_string(&timing_path).unwrap(), &timing_path).unwrap();
    assert_eq!(timings.len(), 3);
    assert!(timings.iter().all(|t| t.admm_seconds > 0.0 && t.barrier_seconds > 0.0));
}

#[test]
fn horizon_sweep_writes_a_scaling_plot() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let res = hems(&["sweep", "--axis", "N", "--values", "24,12", "--jobs", "1", "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("scaling.svg").is_file());
    let path = out.join("sweep.csv");
    let rows: Vec<SweepRow> = read_csv(&fs::read_to_string(&path).unwrap(), &path).unwrap();
    assert_eq!(rows.iter().map(|r| r.steps).collect::<Vec<_>>(), [12, 24]);
}

#[test]
fn empty_sweep_values_are_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let sc = coarse_scenario(dir.path(), "[sweep]\naxis = \"eps_rel\"\nvalues = []\n");
    let res = hems(&["sweep", path_str(&sc), "--out", path_str(&dir.path().join("out"))]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(stderr_json(&res)["error"], "usage");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validate_prints_a_document_that_validates() {
    let dir = TempDir::new().unwrap();
    let sc = coarse_scenario(dir.path(), "[params]\nbattery_mass = 9000.0\n");
    let res = hems(&["validate", path_str(&sc)]);
    assert!(res.status.success());
    let full = dir.path().join("full.toml");
    fs::write(&full, &res.stdout).unwrap();
    let again = hems(&["validate", path_str(&full)]);
    assert!(again.status.success());
    assert_eq!(res.stdout, again.stdout);
    assert!(String::from_utf8_lossy(&res.stdout).contains("battery_mass = 9000.0"));
}

#[test]
fn validate_rejects_unknown_keys_and_versions() {
    let dir = TempDir::new().unwrap();
    for (name, body) in [("a.toml", "schema-version = 1\ncolour = \"red\"\n"), ("b.toml", "schema-version = 9\n"), ("c.toml", "delta = 60.0\n")] {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        let res = hems(&["validate", path_str(&p)]);
        assert_eq!(res.status.code(), Some(2), "{name}");
        assert_eq!(stderr_json(&res)["error"], "config");
    }
}

#[test]
fn shipped_scenarios_validate() {
    let dir = repo_root().join("scenarios");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let res = hems(&["validate", path_str(&p)]);
            assert!(res.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&res.stderr));
            count += 1;
        }
    }
    assert!(count >= 1);
}

#[test]
fn reference_scenario_matches_the_built_in_defaults() {
    let path = repo_root().join("scenarios/reference.toml");
    let shipped = hems_cli::scenario::ScenarioFile::load(&path).unwrap();
    assert_eq!(shipped, hems_cli::scenario::ScenarioFile::default());
}
