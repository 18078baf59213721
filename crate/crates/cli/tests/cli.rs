use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pfcc_cli::commands::{
    compare_gains, validate_file, CompareOptions, EXIT_ASSUMPTION, EXIT_EXCITATION, EXIT_FAILURE,
    EXIT_NO_CONVERGENCE, EXIT_OK, EXIT_SCHEMA, EXIT_USAGE,
};
use pfcc_cli::scenario::{RegressionFile, ScenarioError, ScenarioFile};

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn network() -> ScenarioFile {
    ScenarioFile::load(&bundled("network.json")).unwrap()
}

fn pfcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfcc")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_scenario(dir: &Path, file: &ScenarioFile) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, file.to_json()).unwrap();
    path
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Table {
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap().split(',').map(String::from).collect();
        let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
        Table { header, rows }
    }

    fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).unwrap()
    }

    fn value(&self, row: &[String], name: &str) -> f64 {
        row[self.col(name)].parse().unwrap()
    }
}

fn run_to(dir: &Path, scenario: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", scenario.to_str().unwrap(), "--out", out];
    args.extend_from_slice(extra);
    pfcc(&args)
}

#[test]
fn scenario_round_trips_through_json() {
    let file = network();
    let again = ScenarioFile::from_str(&file.to_json()).unwrap();
    assert_eq!(again, file);
    let cfg = again.to_config().unwrap();
    assert_eq!(cfg.topology.n_followers(), 4);
    assert_eq!(cfg.topology.n_leaders(), 6);
}

#[test]
fn unknown_keys_are_schema_errors() {
    let text = network().to_json().replacen("\"horizon\"", "\"horizon_ticks\": 1,\n  \"horizon\"", 1);
    assert!(matches!(ScenarioFile::from_str(&text), Err(ScenarioError::Parse { .. })));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, text).unwrap();
    let out = pfcc(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_SCHEMA);
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon_ticks"));
}

#[test]
fn ragged_matrices_are_rejected() {
    let mut file = network();
    file.followers[0].a[1].push(0.0);
    assert!(file.to_config().is_err());
}

#[test]
fn isolated_follower_is_named() {
    let mut file = network();
    file.edges.retain(|e| e.to != "F3");
    let report = validate_file(&file).unwrap();
    assert!(!report.passed());
    let a1 = report.check(1).unwrap();
    assert!(a1.failures.iter().any(|f| f.contains("F3")), "{a1:?}");

    let dir = tempfile::tempdir().unwrap();
    let out = pfcc(&["validate", write_scenario(dir.path(), &file).to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_ASSUMPTION);
    assert!(String::from_utf8_lossy(&out.stdout).contains("F3"));
}

#[test]
fn nonpositive_propensity_fails_assumption_two() {
    let mut file = network();
    file.schedule[0].propensities.insert("L2".into(), 0.0);
    let report = validate_file(&file).unwrap();
    let a2 = report.check(2).unwrap();
    assert!(!a2.passed());
    assert!(a2.failures.iter().any(|f| f.contains("L2")));
}

#[test]
fn bundled_scenario_validates() {
    let out = pfcc(&["validate", bundled("network.json").to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn zero_horizon_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to(dir.path(), &bundled("network.json"), &["--horizon", "0"]);
    assert_eq!(code(&out), EXIT_OK);
    let table = Table::read(&dir.path().join("trace.csv"));
    assert!(table.rows.is_empty());
    assert_eq!(table.header[0], "tick");
    assert_eq!(table.header.last().unwrap(), "phases");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(meta["records"], 0);
    assert_eq!(meta["status"], "ok");
}

#[test]
fn mode_flag_selects_the_controller() {
    let scenario = bundled("network.json");
    let phases_at_end = |mode: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = run_to(dir.path(), &scenario, &["--mode", mode, "--horizon", "400", "--sample-interval", "10"]);
        assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
        assert_eq!(meta["mode"], mode);
        let table = Table::read(&dir.path().join("trace.csv"));
        table.rows.last().unwrap()[table.col("phases")].clone()
    };
    assert_eq!(phases_at_end("model_based_oracle"), "MMMMMMMMMM");
    assert_eq!(phases_at_end("fcc_baseline"), "MMMMMMMMMM");
    let learned = phases_at_end("data_driven");
    assert_eq!(&learned[4..], "KKKKKK");
    assert!(learned[..4].chars().all(|c| "CVK".contains(c)), "{learned}");

    let out = pfcc(&["run", scenario.to_str().unwrap(), "--mode", "oracle"]);
    assert_eq!(code(&out), EXIT_USAGE);
}

#[test]
fn baseline_weights_ignore_propensities() {
    let mut file = network();
    file.record_states = true;
    file.sample_interval = 2;
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &file);
    let final_f1 = |mode: &str| {
        let out_dir = dir.path().join(mode);
        let out = run_to(&out_dir, &scenario, &["--mode", mode]);
        assert_eq!(code(&out), EXIT_OK);
        let table = Table::read(&out_dir.join("trace.csv"));
        let row = table.rows.last().unwrap();
        (table.value(row, "x_F1_1"), table.value(row, "x_F1_2"))
    };
    let (px, py) = final_f1("model_based_oracle");
    assert!((px - 5.0 / 3.0).abs() < 1e-4 && (py - 1.0 / 3.0).abs() < 1e-4, "{px} {py}");
    let (bx, by) = final_f1("fcc_baseline");
    assert!((bx - 1.0).abs() < 1e-4 && (by - 1.0).abs() < 1e-4, "{bx} {by}");
}

#[test]
fn observers_ignore_follower_plants() {
    let observer_columns = |file: &ScenarioFile| {
        let dir = tempfile::tempdir().unwrap();
        let scenario = write_scenario(dir.path(), file);
        let out = run_to(dir.path(), &scenario, &["--mode", "model_based_oracle", "--horizon", "600"]);
        assert_eq!(code(&out), EXIT_OK);
        let table = Table::read(&dir.path().join("trace.csv"));
        let cols: Vec<usize> = (0..table.header.len()).filter(|&c| table.header[c].starts_with("observer_")).collect();
        table
            .rows
            .iter()
            .map(|r| cols.iter().map(|&c| r[c].clone()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let base = network();
    let mut other = base.clone();
    for f in &mut other.followers {
        f.a[1] = vec![0.5, 0.5];
        f.initial_gain = None;
    }
    assert_eq!(observer_columns(&base), observer_columns(&other));
}

#[test]
fn strict_regression_on_closed_loop_data_reports_excitation() {
    let mut file = network();
    file.learner.regression = RegressionFile::Strict { max_condition: 1e12 };
    file.horizon = 400;
    let dir = tempfile::tempdir().unwrap();
    let out = run_to(dir.path(), &write_scenario(dir.path(), &file), &[]);
    assert_eq!(code(&out), EXIT_EXCITATION);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "failed");
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let mut file = network();
    file.learner.max_iterations = 1;
    file.horizon = 400;
    let dir = tempfile::tempdir().unwrap();
    let out = run_to(dir.path(), &write_scenario(dir.path(), &file), &[]);
    assert_eq!(code(&out), EXIT_NO_CONVERGENCE);
}

#[test]
fn missing_file_is_an_io_failure() {
    let out = pfcc(&["validate", "/nonexistent/scenario.json"]);
    assert_eq!(code(&out), EXIT_FAILURE);
}

#[test]
fn static_variant_fails_regulation_solvability() {
    let out = pfcc(&["validate", bundled("network_static.json").to_str().unwrap()]);
    assert_eq!(code(&out), EXIT_ASSUMPTION);
    assert!(String::from_utf8_lossy(&out.stdout).contains("assumption 5"));
}

#[test]
fn perturbed_cost_shows_up_as_gain_gaps() {
    let file = network();
    let exact = compare_gains(&file, &CompareOptions::default()).unwrap();
    assert!(exact.iter().all(|r| r.within(1e-3)));
    let perturbed = compare_gains(
        &file,
        &CompareOptions {
            q_perturbation: 1.0,
            ..CompareOptions::default()
        },
    )
    .unwrap();
    assert!(perturbed.iter().any(|r| !r.within(1e-3)));

    let out = pfcc(&["compare-gains", bundled("network.json").to_str().unwrap(), "--q-perturbation", "1.0"]);
    assert_eq!(code(&out), EXIT_FAILURE);
}
