//! JSON scenario files.
//!
//! Matrices are row-major nested arrays. Nodes are named `T` (tracking
//! leader), `F1`… and `L1`…; propensities are keyed by leader name.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use pfcc_core::learning::{LearnerConfig, Regression};
use pfcc_core::matops::pinv;
use pfcc_core::model_control::{AgentDynamics, FormationDynamics, ViOptions};
use pfcc_core::observers::ObserverConfig;
use pfcc_core::propagation::PropensitySchedule;
use pfcc_core::simulation::{FollowerSpec, LeaderSpec, Mode, ScenarioConfig, TrackingSpec};
use pfcc_core::{DirectedTopology, Edge, Node, PfccError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("schema error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] PfccError),
}

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeFile {
    pub from: String,
    pub to: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverFile {
    pub xi: f64,
    pub lambda: f64,
    pub mu: f64,
    pub gain: Matrix,
    pub l0_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingFile {
    pub a0: Matrix,
    pub x0: Vec<f64>,
    pub observer: ObserverFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderFile {
    pub a: Matrix,
    pub b: Matrix,
    pub s: Matrix,
    pub h0: Vec<f64>,
    pub q: Matrix,
    pub x0: Vec<f64>,
    /// Defaults to `−B⁺A`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_gain: Option<Matrix>,
    pub observer: ObserverFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerFile {
    pub a: Matrix,
    pub b: Matrix,
    pub q: Matrix,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_gain: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub tick: u64,
    pub propensities: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressionFile {
    Strict { max_condition: f64 },
    MinNorm { rcond: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerFile {
    pub noise_std: f64,
    pub gain_delta_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub relearn_on_alpha_change: bool,
    pub regression: RegressionFile,
    pub settle_tolerance: f64,
    pub iterations_per_tick: usize,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViFile {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModeFile {
    DataDriven,
    ModelBasedOracle,
    FccBaseline,
}

impl From<ModeFile> for Mode {
    fn from(m: ModeFile) -> Mode {
        match m {
            ModeFile::DataDriven => Mode::DataDriven,
            ModeFile::ModelBasedOracle => Mode::ModelBasedOracle,
            ModeFile::FccBaseline => Mode::FccBaseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub followers: Vec<FollowerFile>,
    pub leaders: Vec<LeaderFile>,
    pub tracking: TrackingFile,
    pub edges: Vec<EdgeFile>,
    pub schedule: Vec<ScheduleEntry>,
    pub learner: LearnerFile,
    pub vi: ViFile,
    pub horizon: u64,
    pub sample_interval: u64,
    pub mode: ModeFile,
    pub seed: u64,
    #[serde(default)]
    pub record_states: bool,
}

impl ScenarioFile {
    pub fn from_str(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Builds the simulation configuration, checking every matrix shape.
    pub fn to_config(&self) -> Result<ScenarioConfig, ScenarioError> {
        let n_f = self.followers.len();
        let n_l = self.leaders.len();
        let edges = self
            .edges
            .iter()
            .map(|e| {
                Ok(Edge::new(
                    parse_node(&e.from, n_f, n_l)?,
                    parse_node(&e.to, n_f, n_l)?,
                    e.weight,
                ))
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let topology = DirectedTopology::from_edges(n_f, n_l, &edges)?;
        let tracking = TrackingSpec {
            a0: matrix(&self.tracking.a0, "tracking.a0")?,
            x0: DVector::from_vec(self.tracking.x0.clone()),
            observer: observer(&self.tracking.observer, "tracking.observer")?,
        };
        let leaders = self
            .leaders
            .iter()
            .enumerate()
            .map(|(q, l)| {
                let ctx = format!("leaders[{q}]");
                let dynamics = dynamics(&l.a, &l.b, &ctx)?;
                let initial_gain = initial_gain(&l.initial_gain, &dynamics, &ctx)?;
                Ok(LeaderSpec {
                    formation: FormationDynamics::new(
                        matrix(&l.s, &format!("{ctx}.s"))?,
                        DVector::from_vec(l.h0.clone()),
                    )?,
                    q: matrix(&l.q, &format!("{ctx}.q"))?,
                    observer: observer(&l.observer, &format!("{ctx}.observer"))?,
                    x0: DVector::from_vec(l.x0.clone()),
                    initial_gain,
                    dynamics,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let followers = self
            .followers
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let ctx = format!("followers[{i}]");
                let dynamics = dynamics(&f.a, &f.b, &ctx)?;
                Ok(FollowerSpec {
                    q: matrix(&f.q, &format!("{ctx}.q"))?,
                    x0: DVector::from_vec(f.x0.clone()),
                    initial_gain: initial_gain(&f.initial_gain, &dynamics, &ctx)?,
                    dynamics,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let entries = self
            .schedule
            .iter()
            .map(|e| {
                let map = e
                    .propensities
                    .iter()
                    .map(|(k, &v)| match parse_node(k, n_f, n_l)? {
                        Node::Leader(q) => Ok((q, v)),
                        _ => Err(ScenarioError::Schema(format!("propensity key {k} is not a leader"))),
                    })
                    .collect::<Result<BTreeMap<_, _>, ScenarioError>>()?;
                Ok((e.tick, map))
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let schedule = PropensitySchedule::new(entries)?;
        let l = &self.learner;
        let learner = LearnerConfig {
            noise_std: l.noise_std,
            gain_delta_threshold: l.gain_delta_threshold,
            window: l.window,
            rng_seed: self.seed,
            relearn_on_alpha_change: l.relearn_on_alpha_change,
            regression: match l.regression {
                RegressionFile::Strict { max_condition } => Regression::Strict { max_condition },
                RegressionFile::MinNorm { rcond } => Regression::MinNorm { rcond },
            },
            settle_tolerance: l.settle_tolerance,
            iterations_per_tick: l.iterations_per_tick,
            max_iterations: l.max_iterations,
        };
        Ok(ScenarioConfig {
            topology,
            tracking,
            leaders,
            followers,
            schedule,
            learner,
            horizon: self.horizon,
            sample_interval: self.sample_interval,
            mode: self.mode.into(),
            vi: ViOptions {
                tol: self.vi.tol,
                max_iter: self.vi.max_iter,
                ..ViOptions::default()
            },
            record_states: self.record_states,
        })
    }
}

pub fn parse_node(name: &str, n_followers: usize, n_leaders: usize) -> Result<Node, ScenarioError> {
    let bad = || ScenarioError::Schema(format!("unknown node {name:?}; expected T, F1..F{n_followers} or L1..L{n_leaders}"));
    if name == "T" {
        return Ok(Node::Tracking);
    }
    let (kind, num) = name.split_at(name.char_indices().nth(1).map_or(name.len(), |(i, _)| i));
    let k: usize = num.parse().map_err(|_| bad())?;
    match kind {
        "F" if (1..=n_followers).contains(&k) => Ok(Node::Follower(k - 1)),
        "L" if (1..=n_leaders).contains(&k) => Ok(Node::Leader(k - 1)),
        _ => Err(bad()),
    }
}

pub fn node_name(node: Node) -> String {
    match node {
        Node::Tracking => "T".into(),
        Node::Follower(i) => format!("F{}", i + 1),
        Node::Leader(q) => format!("L{}", q + 1),
    }
}

pub fn matrix(rows: &Matrix, ctx: &str) -> Result<DMatrix<f64>, ScenarioError> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 {
        return Err(ScenarioError::Schema(format!("{ctx}: empty matrix")));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(ScenarioError::Schema(format!("{ctx}: rows have different lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ScenarioError::Schema(format!("{ctx}: non-finite entry")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Matrix {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn dynamics(a: &Matrix, b: &Matrix, ctx: &str) -> Result<AgentDynamics, ScenarioError> {
    Ok(AgentDynamics::new(
        matrix(a, &format!("{ctx}.a"))?,
        matrix(b, &format!("{ctx}.b"))?,
    )?)
}

fn initial_gain(k: &Option<Matrix>, dyn_: &AgentDynamics, ctx: &str) -> Result<DMatrix<f64>, ScenarioError> {
    let gain = match k {
        Some(rows) => matrix(rows, &format!("{ctx}.initial_gain"))?,
        None => -pinv(&dyn_.b) * &dyn_.a,
    };
    if gain.shape() != (dyn_.m(), dyn_.n()) {
        return Err(ScenarioError::Schema(format!(
            "{ctx}.initial_gain must be {}x{}",
            dyn_.m(),
            dyn_.n()
        )));
    }
    Ok(gain)
}

fn observer(o: &ObserverFile, ctx: &str) -> Result<ObserverConfig, ScenarioError> {
    Ok(ObserverConfig::new(
        o.xi,
        o.lambda,
        o.mu,
        matrix(&o.gain, &format!("{ctx}.gain"))?,
        o.l0_scale,
    )?)
}
