use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use pfcc_core::learning::{learn_from_episodes, LearnerConfig, NoiseSource, Regression};
use pfcc_core::matops::{frobenius_gap, spectral_radius};
use pfcc_core::model_control::{
    build_follower_augmented, build_leader_augmented, min_norm_regulation_solution, riccati_value_iteration_with,
    AugmentedSystem, FormationDynamics,
};
use pfcc_core::propagation::{init_knowledge, propagation_fixed_point, Knowledge};
use pfcc_core::simulation::{run, ScenarioConfig};
use pfcc_core::topology::verify_assumption1;
use pfcc_core::{Node, PfccError};

use crate::export::{write_exports, ExportPaths};
use crate::scenario::{matrix, node_name, parse_node, ModeFile, ScenarioError, ScenarioFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SCHEMA: i32 = 3;
pub const EXIT_ASSUMPTION: i32 = 4;
pub const EXIT_EXCITATION: i32 = 5;
pub const EXIT_NO_CONVERGENCE: i32 = 6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Assumptions(ValidationReport),
    #[error(transparent)]
    Model(#[from] PfccError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Exit status for a model error.
pub fn model_exit_code(e: &PfccError) -> i32 {
    match e.root() {
        PfccError::Excitation(_) => EXIT_EXCITATION,
        PfccError::NoConvergence { .. } => EXIT_NO_CONVERGENCE,
        _ => EXIT_FAILURE,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(ScenarioError::Io { .. }) | CliError::Io { .. } => EXIT_FAILURE,
            CliError::Scenario(_) => EXIT_SCHEMA,
            CliError::Assumptions(_) => EXIT_ASSUMPTION,
            CliError::Model(e) => model_exit_code(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub id: u8,
    pub name: &'static str,
    pub failures: Vec<String>,
}

impl AssumptionCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(AssumptionCheck::passed)
    }

    pub fn check(&self, id: u8) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.passed() { "pass" } else { "FAIL" };
            writeln!(f, "assumption {} ({}): {mark}", c.id, c.name)?;
            for msg in &c.failures {
                writeln!(f, "  - {msg}")?;
            }
        }
        Ok(())
    }
}

fn propensity_check(file: &ScenarioFile) -> AssumptionCheck {
    let mut failures = Vec::new();
    let (n_f, n_l) = (file.followers.len(), file.leaders.len());
    for entry in &file.schedule {
        for (name, &v) in &entry.propensities {
            if !(v > 0.0) || !v.is_finite() {
                failures.push(format!("{name} has propensity {v} at tick {}", entry.tick));
            }
            if !matches!(parse_node(name, n_f, n_l), Ok(Node::Leader(_))) {
                failures.push(format!("{name} at tick {} is not a leader", entry.tick));
            }
        }
    }
    match file.schedule.first() {
        Some(first) => {
            for q in 1..=n_l {
                if !first.propensities.contains_key(&format!("L{q}")) {
                    failures.push(format!("L{q} has no initial propensity"));
                }
            }
        }
        None => failures.push("propensity schedule is empty".into()),
    }
    AssumptionCheck {
        id: 2,
        name: "every leader has a positive propensity",
        failures,
    }
}

fn marginal_stability_check(file: &ScenarioFile) -> Result<AssumptionCheck, ScenarioError> {
    let mut failures = Vec::new();
    let a0 = matrix(&file.tracking.a0, "tracking.a0")?;
    let mut targets = vec![("tracking leader A0".to_string(), a0)];
    for (q, l) in file.leaders.iter().enumerate() {
        targets.push((format!("L{} formation S", q + 1), matrix(&l.s, &format!("leaders[{q}].s"))?));
    }
    for (name, m) in targets {
        if !m.is_square() {
            return Err(ScenarioError::Schema(format!("{name} is not square")));
        }
        let rho = spectral_radius(&m);
        if rho > 1.0 + 1e-9 {
            failures.push(format!("{name} has spectral radius {rho:.6}"));
        }
    }
    Ok(AssumptionCheck {
        id: 4,
        name: "exosystem eigenvalues have modulus at most 1",
        failures,
    })
}

/// Influential-leader sets at the propagation fixed point of the initial
/// propensities.
pub fn fixed_point_knowledge(cfg: &ScenarioConfig) -> Result<Knowledge, PfccError> {
    let k0 = init_knowledge(&cfg.topology, cfg.schedule.initial())?;
    Ok(propagation_fixed_point(&k0, &cfg.topology)?.0)
}

fn model_checks(cfg: &ScenarioConfig) -> Result<Vec<AssumptionCheck>, PfccError> {
    let report = verify_assumption1(&cfg.topology);
    let mut a1 = Vec::new();
    for node in &report.unreachable_from_root {
        a1.push(format!("{} is not reachable from the tracking leader", node_name(*node)));
    }
    for &i in &report.followers_without_leader {
        a1.push(format!("F{} is not reachable from any leader", i + 1));
    }
    let mut a3 = Vec::new();
    let mut a5 = Vec::new();
    let mut a6 = Vec::new();
    let a0 = &cfg.tracking.a0;
    let knowledge = if report.passed() { Some(fixed_point_knowledge(cfg)?) } else { None };
    let agents = cfg
        .leaders
        .iter()
        .enumerate()
        .map(|(q, l)| (Node::Leader(q), &l.dynamics, vec![q]))
        .chain(cfg.followers.iter().enumerate().map(|(i, f)| {
            let ifl = knowledge
                .as_ref()
                .map(|k| k.followers[i].ifl.iter().copied().collect())
                .unwrap_or_default();
            (Node::Follower(i), &f.dynamics, ifl)
        }));
    for (node, dyn_, leaders) in agents {
        let name = node_name(node);
        if !dyn_.is_stabilizable() {
            a3.push(format!("({name}: A, B) is not stabilizable"));
        }
        for q in leaders {
            if let Err(e) = min_norm_regulation_solution(&dyn_.a, &dyn_.b, &cfg.leaders[q].formation.s) {
                a5.push(format!("{name}: S of L{} − A is outside the range of B ({e})", q + 1));
            }
        }
        if let Err(e) = min_norm_regulation_solution(&dyn_.a, &dyn_.b, a0) {
            a6.push(format!("{name}: A0 − A is outside the range of B ({e})"));
        }
    }
    Ok(vec![
        AssumptionCheck {
            id: 1,
            name: "spanning tree rooted at the tracking leader; every follower led",
            failures: a1,
        },
        AssumptionCheck {
            id: 3,
            name: "every (A, B) pair is stabilizable",
            failures: a3,
        },
        AssumptionCheck {
            id: 5,
            name: "formation regulation equations are solvable",
            failures: a5,
        },
        AssumptionCheck {
            id: 6,
            name: "tracking regulation equations are solvable",
            failures: a6,
        },
    ])
}

/// Schema and assumption report for a scenario file.
pub fn cmd_validate(path: &Path) -> Result<ValidationReport, CliError> {
    let file = ScenarioFile::load(path)?;
    validate_file(&file)
}

pub fn validate_file(file: &ScenarioFile) -> Result<ValidationReport, CliError> {
    let mut checks = vec![propensity_check(file), marginal_stability_check(file)?];
    if checks.iter().all(AssumptionCheck::passed) {
        let cfg = file.to_config()?;
        checks.extend(model_checks(&cfg)?);
    }
    checks.sort_by_key(|c| c.id);
    Ok(ValidationReport { checks })
}

#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub mode: Option<ModeFile>,
    pub sample_interval: Option<u64>,
}

impl RunOverrides {
    pub fn apply(&self, file: &mut ScenarioFile) {
        if let Some(s) = self.seed {
            file.seed = s;
        }
        if let Some(h) = self.horizon {
            file.horizon = h;
        }
        if let Some(m) = self.mode {
            file.mode = m;
        }
        if let Some(i) = self.sample_interval {
            file.sample_interval = i;
        }
    }
}

pub struct RunOutcome {
    pub paths: ExportPaths,
    pub records: usize,
    pub error: Option<PfccError>,
}

/// Runs a scenario and writes `trace.csv` and `trace.json` into `out`. A
/// mid-run failure still writes the partial trace and is returned in
/// `error`.
pub fn cmd_run(path: &Path, overrides: &RunOverrides, out: &Path) -> Result<RunOutcome, CliError> {
    let mut file = ScenarioFile::load(path)?;
    overrides.apply(&mut file);
    let cfg = file.to_config()?;
    let n = cfg.state_order();
    let (log, error) = match run(cfg) {
        Ok(log) => (log, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    let msg = error.as_ref().map(|e| e.to_string());
    let paths = write_exports(out, &file, &log, n, msg.as_deref()).map_err(|source| CliError::Io {
        path: out.display().to_string(),
        source,
    })?;
    Ok(RunOutcome {
        paths,
        records: log.records.len(),
        error,
    })
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub seed: Option<u64>,
    pub episode_len: usize,
    /// Added to `Q[0][0]` of the oracle problem only; a nonzero value is a
    /// negative control that must show up as gaps.
    pub q_perturbation: f64,
    pub tolerance: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            seed: None,
            episode_len: 2,
            q_perturbation: 0.0,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainComparison {
    pub agent: String,
    pub k_gap: f64,
    pub k_relative: f64,
    pub p_gap: f64,
    pub p_relative: f64,
    pub iterations: usize,
    pub error: Option<String>,
}

impl GainComparison {
    pub fn within(&self, tol: f64) -> bool {
        self.error.is_none() && self.k_relative < tol && self.p_relative < tol
    }
}

/// Augmented system of every agent at the propagation fixed point, leaders
/// first.
pub fn agent_systems(cfg: &ScenarioConfig) -> Result<Vec<(Node, AugmentedSystem, DMatrix<f64>)>, PfccError> {
    let knowledge = fixed_point_knowledge(cfg)?;
    let a0 = &cfg.tracking.a0;
    let mut out = Vec::new();
    for (q, l) in cfg.leaders.iter().enumerate() {
        let sys = build_leader_augmented(&l.dynamics, &l.formation, a0, &l.q)?;
        out.push((Node::Leader(q), sys, l.initial_gain.clone()));
    }
    for (i, f) in cfg.followers.iter().enumerate() {
        let kn = &knowledge.followers[i];
        let forms: Vec<&FormationDynamics> = kn.ifl.iter().map(|&q| &cfg.leaders[q].formation).collect();
        let alpha: Vec<f64> = kn.ifl.iter().map(|&q| kn.alpha[q]).collect();
        let sys = build_follower_augmented(&f.dynamics, &forms, a0, &alpha, &f.q)?;
        out.push((Node::Follower(i), sys, f.initial_gain.clone()));
    }
    Ok(out)
}

/// Learns every agent's gain from seeded exploration episodes and compares
/// it with model-based value iteration on the true model.
pub fn cmd_compare_gains(path: &Path, opts: &CompareOptions) -> Result<Vec<GainComparison>, CliError> {
    let file = ScenarioFile::load(path)?;
    compare_gains(&file, opts)
}

pub fn compare_gains(file: &ScenarioFile, opts: &CompareOptions) -> Result<Vec<GainComparison>, CliError> {
    let cfg = file.to_config()?;
    let seed = opts.seed.unwrap_or(file.seed);
    let learner = LearnerConfig {
        regression: Regression::default(),
        rng_seed: seed,
        ..cfg.learner.clone()
    };
    let mut rows = Vec::new();
    for (idx, (node, sys, plant_gain)) in agent_systems(&cfg)?.into_iter().enumerate() {
        let mut oracle_sys = sys.clone();
        oracle_sys.q[(0, 0)] += opts.q_perturbation;
        let oracle = riccati_value_iteration_with(&oracle_sys, &cfg.vi)?;
        let mut k0 = DMatrix::zeros(sys.inputs(), sys.dim());
        k0.view_mut((0, 0), plant_gain.shape()).copy_from(&plant_gain);
        let mut noise = NoiseSource::new(seed, idx as u64);
        let row = match learn_from_episodes(&sys, &k0, &learner, opts.episode_len, &mut noise) {
            Ok((ctrl, _)) => {
                let k_gap = frobenius_gap(&ctrl.k_hat, &oracle.k);
                let p_gap = frobenius_gap(ctrl.p_hat.as_matrix(), oracle.p.as_matrix());
                GainComparison {
                    agent: node_name(node),
                    k_gap,
                    k_relative: k_gap / oracle.k.norm().max(f64::MIN_POSITIVE),
                    p_gap,
                    p_relative: p_gap / oracle.p.as_matrix().norm().max(f64::MIN_POSITIVE),
                    iterations: ctrl.iterations,
                    error: None,
                }
            }
            Err(e) => GainComparison {
                agent: node_name(node),
                k_gap: f64::NAN,
                k_relative: f64::NAN,
                p_gap: f64::NAN,
                p_relative: f64::NAN,
                iterations: 0,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

pub fn format_comparison(rows: &[GainComparison], tol: f64) -> String {
    let mut out = format!(
        "{:<6} {:>12} {:>12} {:>12} {:>12} {:>6}  status\n",
        "agent", "|dK|_F", "rel dK", "|dP|_F", "rel dP", "iters"
    );
    for r in rows {
        let status = match &r.error {
            Some(e) => format!("error: {e}"),
            None if r.within(tol) => "ok".into(),
            None => format!("gap above {tol:e}"),
        };
        out.push_str(&format!(
            "{:<6} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e} {:>6}  {status}\n",
            r.agent, r.k_gap, r.k_relative, r.p_gap, r.p_relative, r.iterations
        ));
    }
    out
}
