//! Closed-loop simulation of the whole network.
//!
//! Each tick runs, in order: scheduled propensity changes, one propagation
//! round, controls from the tick-`k` snapshot, observer prediction, plant and
//! exosystem advance, observer correction with the tick-`k+1` errors, and
//! finally the learners.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{PfccError, Result};
use crate::learning::{
    exploration_noise, learning_step, DataBuffer, LearnedController, LearnerConfig, LearnerStatus, NoiseSource,
    PreparedWindow,
};
use crate::model_control::{
    build_follower_augmented, build_leader_augmented, follower_control, leader_control, riccati_value_iteration_with,
    split_gains, AgentDynamics, AugmentedSystem, FormationDynamics, GainLayout, ViOptions,
};
use crate::observers::{consensus_error, formation_consensus_error, GatedEstimate, ObserverConfig, RlsObserver};
use crate::propagation::{
    apply_propensities, init_knowledge, laplacian_weights, step_propagation, Knowledge, PropensitySchedule,
};
use crate::topology::{verify_assumption1, DirectedTopology, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Gains learned online from measured data.
    DataDriven,
    /// Gains from model-based value iteration.
    ModelBasedOracle,
    /// Containment weights from the Laplacian instead of propensities,
    /// model-based gains.
    FccBaseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::DataDriven => "data-driven",
            Mode::ModelBasedOracle => "model-based",
            Mode::FccBaseline => "fcc-baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderSpec {
    pub dynamics: AgentDynamics,
    pub formation: FormationDynamics,
    pub q: DMatrix<f64>,
    /// Parameters of every observer estimating this leader's formation state.
    pub observer: ObserverConfig,
    pub x0: DVector<f64>,
    /// Plant block of the gain applied while the first window is collected.
    pub initial_gain: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerSpec {
    pub dynamics: AgentDynamics,
    pub q: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub initial_gain: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSpec {
    pub a0: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// Parameters of every observer estimating the tracking state.
    pub observer: ObserverConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub topology: DirectedTopology,
    pub tracking: TrackingSpec,
    pub leaders: Vec<LeaderSpec>,
    pub followers: Vec<FollowerSpec>,
    pub schedule: PropensitySchedule,
    pub learner: LearnerConfig,
    pub horizon: u64,
    pub sample_interval: u64,
    pub mode: Mode,
    pub vi: ViOptions,
    pub record_states: bool,
}

impl ScenarioConfig {
    /// Shape and graph checks needed before a run can start.
    pub fn validate(&self) -> Result<()> {
        let topo = &self.topology;
        if self.leaders.len() != topo.n_leaders() || self.followers.len() != topo.n_followers() {
            return Err(PfccError::Config(format!(
                "topology has {} followers and {} leaders, scenario lists {} and {}",
                topo.n_followers(),
                topo.n_leaders(),
                self.followers.len(),
                self.leaders.len()
            )));
        }
        let n = self.tracking.a0.nrows();
        if !self.tracking.a0.is_square() || self.tracking.x0.len() != n || self.tracking.observer.gain.nrows() != n {
            return Err(PfccError::Dimension("tracking leader blocks must share one order".into()));
        }
        for (q, l) in self.leaders.iter().enumerate() {
            let ok = l.dynamics.n() == n
                && l.formation.s.nrows() == n
                && l.x0.len() == n
                && l.observer.gain.nrows() == n
                && l.initial_gain.shape() == (l.dynamics.m(), n);
            if !ok {
                return Err(PfccError::Dimension(format!("leader L{} does not match state order {n}", q + 1)));
            }
            l.observer.validate()?;
        }
        for (i, f) in self.followers.iter().enumerate() {
            if f.dynamics.n() != n || f.x0.len() != n || f.initial_gain.shape() != (f.dynamics.m(), n) {
                return Err(PfccError::Dimension(format!("follower F{} does not match state order {n}", i + 1)));
            }
        }
        self.tracking.observer.validate()?;
        self.learner.validate()?;
        if self.sample_interval == 0 {
            return Err(PfccError::Config("sample interval must be positive".into()));
        }
        let report = verify_assumption1(topo);
        if !report.passed() {
            return Err(PfccError::Topology(report.to_string()));
        }
        init_knowledge(topo, self.schedule.initial())?;
        Ok(())
    }

    pub fn state_order(&self) -> usize {
        self.tracking.a0.nrows()
    }
}

/// Control law currently attached to an agent.
#[derive(Debug, Clone)]
pub enum Controller {
    /// No influential leader known yet; the agent applies zero input.
    Idle,
    Model {
        gain: DMatrix<f64>,
        iterations: usize,
    },
    Learned {
        ctrl: LearnedController,
        buffer: DataBuffer,
        window: Option<PreparedWindow>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentPhase {
    Idle,
    Model,
    Collecting,
    Iterating,
    Converged,
}

impl AgentPhase {
    pub fn code(self) -> char {
        match self {
            AgentPhase::Idle => 'I',
            AgentPhase::Model => 'M',
            AgentPhase::Collecting => 'C',
            AgentPhase::Iterating => 'V',
            AgentPhase::Converged => 'K',
        }
    }
}

impl Controller {
    pub fn phase(&self) -> AgentPhase {
        match self {
            Controller::Idle => AgentPhase::Idle,
            Controller::Model { .. } => AgentPhase::Model,
            Controller::Learned { ctrl, window, .. } => match ctrl.status {
                LearnerStatus::Converged => AgentPhase::Converged,
                _ if window.is_some() => AgentPhase::Iterating,
                _ => AgentPhase::Collecting,
            },
        }
    }

    pub fn gain(&self) -> Option<&DMatrix<f64>> {
        match self {
            Controller::Idle => None,
            Controller::Model { gain, .. } => Some(gain),
            Controller::Learned { ctrl, .. } => Some(ctrl.applied_gain()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub node: Node,
    pub x: DVector<f64>,
    pub tracking: RlsObserver,
    /// Estimates of the formation states of the known influential leaders.
    pub formation: BTreeMap<usize, RlsObserver>,
    pub layout: GainLayout,
    pub alpha: Vec<f64>,
    pub controller: Controller,
    noise: NoiseSource,
    last_xhat: Option<DVector<f64>>,
    last_input: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub tick: u64,
    pub xo: DVector<f64>,
    pub h: Vec<DVector<f64>>,
    /// Followers first, then leaders.
    pub agents: Vec<AgentState>,
    pub knowledge: Knowledge,
}

impl WorldState {
    pub fn agent(&self, node: Node) -> Option<&AgentState> {
        let n = self.knowledge.followers.len();
        match node {
            Node::Follower(i) => self.agents.get(i),
            Node::Leader(q) => self.agents.get(n + q),
            Node::Tracking => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub tick: u64,
    /// `‖x_q − h_q − x_o‖` per leader.
    pub formation_errors: Vec<f64>,
    /// `‖x_i − Σ α_q (h_q + x_o)‖` per follower, with propensity coefficients.
    pub containment_errors: Vec<f64>,
    /// Summed observer error norm per agent, followers first.
    pub observer_errors: Vec<f64>,
    pub phases: Vec<AgentPhase>,
    /// `[x_o, x_F1, …, x_L1, …]` when states are recorded.
    pub states: Option<Vec<DVector<f64>>>,
}

impl TraceRecord {
    pub fn max_formation_error(&self) -> f64 {
        self.formation_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_containment_error(&self) -> f64 {
        self.containment_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_observer_error(&self) -> f64 {
        self.observer_errors.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceEvent {
    pub tick: u64,
    pub node: Node,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    pub records: Vec<TraceRecord>,
    pub convergence: Vec<ConvergenceEvent>,
}

#[derive(Debug)]
pub struct RunFailure {
    pub partial: TraceLog,
    pub error: PfccError,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} trace records kept)", self.error, self.partial.records.len())
    }
}

impl std::error::Error for RunFailure {}

/// Stepwise driver around a [`WorldState`].
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ScenarioConfig,
    world: WorldState,
    baseline: Option<DMatrix<f64>>,
    log: TraceLog,
}

fn node_of(idx: usize, n_followers: usize) -> Node {
    if idx < n_followers {
        Node::Follower(idx)
    } else {
        Node::Leader(idx - n_followers)
    }
}

fn concat(parts: &[&DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(p);
        at += p.len();
    }
    out
}

struct Snapshot {
    tracking: Vec<DVector<f64>>,
    formation: Vec<BTreeMap<usize, DVector<f64>>>,
}

impl Snapshot {
    fn take(agents: &[AgentState]) -> Self {
        Snapshot {
            tracking: agents.iter().map(|a| a.tracking.x_hat.clone()).collect(),
            formation: agents
                .iter()
                .map(|a| a.formation.iter().map(|(&q, o)| (q, o.x_hat.clone())).collect())
                .collect(),
        }
    }
}

/// Consensus errors of one agent: tracking first, then per formation leader.
struct AgentErrors {
    tracking: DVector<f64>,
    formation: BTreeMap<usize, DVector<f64>>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let topo = &cfg.topology;
        let n = cfg.state_order();
        let knowledge = init_knowledge(topo, cfg.schedule.initial())?;
        let baseline = match cfg.mode {
            Mode::FccBaseline => Some(laplacian_weights(topo)?),
            _ => None,
        };
        let n_f = topo.n_followers();
        let mut agents = Vec::with_capacity(n_f + topo.n_leaders());
        for idx in 0..n_f + topo.n_leaders() {
            let node = node_of(idx, n_f);
            let x = match node {
                Node::Follower(i) => cfg.followers[i].x0.clone(),
                Node::Leader(q) => cfg.leaders[q].x0.clone(),
                Node::Tracking => unreachable!(),
            };
            agents.push(AgentState {
                node,
                x,
                tracking: RlsObserver::new(cfg.tracking.observer.clone(), n)?,
                formation: BTreeMap::new(),
                layout: match node {
                    Node::Leader(q) => GainLayout::Leader(q),
                    _ => GainLayout::Follower(Vec::new()),
                },
                alpha: Vec::new(),
                controller: Controller::Idle,
                noise: NoiseSource::new(cfg.learner.rng_seed, idx as u64),
                last_xhat: None,
                last_input: None,
            });
        }
        let world = WorldState {
            tick: 0,
            xo: cfg.tracking.x0.clone(),
            h: cfg.leaders.iter().map(|l| l.formation.h0.clone()).collect(),
            agents,
            knowledge,
        };
        let mut sim = Simulation {
            cfg,
            world,
            baseline,
            log: TraceLog::default(),
        };
        for idx in 0..sim.world.agents.len() {
            sim.sync_agent(idx).map_err(|e| e.at(0, node_of(idx, n_f).to_string()))?;
        }
        Ok(sim)
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn log(&self) -> &TraceLog {
        &self.log
    }

    pub fn into_log(self) -> TraceLog {
        self.log
    }

    fn n_followers(&self) -> usize {
        self.cfg.topology.n_followers()
    }

    fn coefficients(&self, node: Node, leaders: &[usize]) -> Vec<f64> {
        let kn = self.world.knowledge.agent(node).expect("agent node");
        match (node, &self.baseline) {
            (Node::Leader(_), _) => vec![1.0],
            (Node::Follower(i), Some(w)) => {
                let total: f64 = leaders.iter().map(|&q| w[(i, q)]).sum();
                leaders.iter().map(|&q| w[(i, q)] / total).collect()
            }
            _ => leaders.iter().map(|&q| kn.alpha[q]).collect(),
        }
    }

    fn augmented(&self, node: Node, leaders: &[usize], alpha: &[f64]) -> Result<AugmentedSystem> {
        let a0 = &self.cfg.tracking.a0;
        match node {
            Node::Leader(q) => {
                let l = &self.cfg.leaders[q];
                build_leader_augmented(&l.dynamics, &l.formation, a0, &l.q)
            }
            Node::Follower(i) => {
                let f = &self.cfg.followers[i];
                let forms: Vec<&FormationDynamics> = leaders.iter().map(|&q| &self.cfg.leaders[q].formation).collect();
                build_follower_augmented(&f.dynamics, &forms, a0, alpha, &f.q)
            }
            Node::Tracking => Err(PfccError::Config("the tracking leader has no controller".into())),
        }
    }

    /// Aligns an agent's observers, layout and controller with its current
    /// knowledge.
    fn sync_agent(&mut self, idx: usize) -> Result<()> {
        let n = self.cfg.state_order();
        let node = self.world.agents[idx].node;
        let ifl = self.world.knowledge.agent(node).expect("agent node").ifl.clone();
        {
            let agent = &mut self.world.agents[idx];
            agent.formation.retain(|q, _| ifl.contains(q));
            for &q in &ifl {
                if !agent.formation.contains_key(&q) {
                    agent
                        .formation
                        .insert(q, RlsObserver::new(self.cfg.leaders[q].observer.clone(), n)?);
                }
            }
        }
        let leaders: Vec<usize> = ifl.iter().copied().collect();
        let layout = match node {
            Node::Leader(q) => GainLayout::Leader(q),
            _ => GainLayout::Follower(leaders.clone()),
        };
        if matches!(node, Node::Follower(_)) && leaders.is_empty() {
            let agent = &mut self.world.agents[idx];
            agent.layout = layout;
            agent.alpha.clear();
            agent.controller = Controller::Idle;
            return Ok(());
        }
        let alpha = self.coefficients(node, &layout.leaders());
        let agent = &self.world.agents[idx];
        let layout_changed = agent.layout != layout || matches!(agent.controller, Controller::Idle);
        let alpha_changed = agent.alpha != alpha;
        if !layout_changed && !alpha_changed {
            return Ok(());
        }
        if !layout_changed && self.cfg.mode == Mode::DataDriven && !self.cfg.learner.relearn_on_alpha_change {
            self.world.agents[idx].alpha = alpha;
            return Ok(());
        }
        let sys = self.augmented(node, &layout.leaders(), &alpha)?;
        let controller = match self.cfg.mode {
            Mode::DataDriven => {
                let behaviour = match (&agent.controller, layout_changed) {
                    (Controller::Learned { ctrl, .. }, false) => ctrl.k_hat.clone(),
                    _ => {
                        let plant = match node {
                            Node::Leader(q) => &self.cfg.leaders[q].initial_gain,
                            Node::Follower(i) => &self.cfg.followers[i].initial_gain,
                            Node::Tracking => unreachable!(),
                        };
                        let mut k0 = DMatrix::zeros(sys.inputs(), sys.dim());
                        k0.view_mut((0, 0), plant.shape()).copy_from(plant);
                        k0
                    }
                };
                let (d, m) = (sys.dim(), sys.inputs());
                Controller::Learned {
                    ctrl: LearnedController::new(behaviour),
                    buffer: DataBuffer::new(d, m, self.cfg.learner.window_for(d, m)?),
                    window: None,
                    c: sys.c.clone(),
                    q: sys.q.clone(),
                }
            }
            Mode::ModelBasedOracle | Mode::FccBaseline => {
                let sol = riccati_value_iteration_with(&sys, &self.cfg.vi)?;
                Controller::Model {
                    gain: sol.k,
                    iterations: sol.iterations,
                }
            }
        };
        let agent = &mut self.world.agents[idx];
        agent.layout = layout;
        agent.alpha = alpha;
        agent.controller = controller;
        Ok(())
    }

    fn xhat(&self, agent: &AgentState) -> DVector<f64> {
        match agent.node {
            Node::Leader(q) => concat(&[&agent.x, &self.world.h[q], &agent.tracking.x_hat]),
            _ => {
                let mut parts: Vec<&DVector<f64>> = vec![&agent.x];
                for q in agent.layout.leaders() {
                    parts.push(&agent.formation[&q].x_hat);
                }
                parts.push(&agent.tracking.x_hat);
                concat(&parts)
            }
        }
    }

    fn control(&mut self, idx: usize) -> Result<DVector<f64>> {
        let agent = &self.world.agents[idx];
        let m = match agent.node {
            Node::Leader(q) => self.cfg.leaders[q].dynamics.m(),
            Node::Follower(i) => self.cfg.followers[i].dynamics.m(),
            Node::Tracking => unreachable!(),
        };
        let n = self.cfg.state_order();
        let Some(k) = agent.controller.gain() else {
            return Ok(DVector::zeros(m));
        };
        let gains = split_gains(k, n, &agent.layout)?;
        let mut u = match agent.node {
            Node::Leader(q) => leader_control(&gains, &agent.x, &self.world.h[q], &agent.tracking.x_hat)?,
            _ => {
                let est: BTreeMap<usize, DVector<f64>> =
                    agent.formation.iter().map(|(&q, o)| (q, o.x_hat.clone())).collect();
                follower_control(&gains, &agent.x, &agent.tracking.x_hat, &est)?
            }
        };
        let status = match &agent.controller {
            Controller::Learned { ctrl, .. } => Some(ctrl.status),
            _ => None,
        };
        if let Some(status) = status {
            let cfg = self.cfg.learner.clone();
            u += exploration_noise(&mut self.world.agents[idx].noise, &cfg, m, status);
        }
        Ok(u)
    }

    fn consensus_errors(&self, snap: &Snapshot, xo: &DVector<f64>, h: &[DVector<f64>]) -> Vec<AgentErrors> {
        let n_f = self.n_followers();
        let topo = &self.cfg.topology;
        let slot = |node: Node| match node {
            Node::Follower(i) => i,
            Node::Leader(q) => n_f + q,
            Node::Tracking => usize::MAX,
        };
        (0..self.world.agents.len())
            .map(|idx| {
                let node = node_of(idx, n_f);
                let inn = topo.in_neighbors(node);
                let own = &snap.tracking[idx];
                let tracking = consensus_error(
                    own,
                    inn.iter().map(|&(src, w)| match src {
                        Node::Tracking => (w, xo),
                        other => (w, &snap.tracking[slot(other)]),
                    }),
                );
                let formation = snap.formation[idx]
                    .iter()
                    .map(|(&q, own)| {
                        let mut pin = 0.0;
                        let mut gated = Vec::new();
                        for &(src, w) in &inn {
                            match src {
                                Node::Tracking => {}
                                Node::Leader(j) if j == q => pin = w,
                                other => {
                                    let est = snap.formation[slot(other)].get(&q);
                                    if let Some(estimate) = est {
                                        gated.push(GatedEstimate {
                                            weight: w,
                                            influenced: true,
                                            estimate,
                                        });
                                    }
                                }
                            }
                        }
                        (q, formation_consensus_error(own, &gated, pin, &h[q]))
                    })
                    .collect();
                AgentErrors { tracking, formation }
            })
            .collect()
    }

    fn settled(&self, agent: &AgentState, errs: &AgentErrors) -> bool {
        let tol = self.cfg.learner.settle_tolerance;
        let mut worst = errs.tracking.norm();
        if let Node::Follower(_) = agent.node {
            for q in agent.layout.leaders() {
                worst = worst.max(errs.formation.get(&q).map_or(f64::INFINITY, |e| e.norm()));
            }
        }
        worst < tol
    }

    fn record(&mut self) {
        let w = &self.world;
        let n_f = self.n_followers();
        let formation_errors = (0..self.cfg.leaders.len())
            .map(|q| (&w.agents[n_f + q].x - &w.h[q] - &w.xo).norm())
            .collect();
        let containment_errors = (0..n_f)
            .map(|i| {
                let kn = &w.knowledge.followers[i];
                let mut target = DVector::zeros(w.xo.len());
                for &q in &kn.ifl {
                    target += (&w.h[q] + &w.xo) * kn.alpha[q];
                }
                (&w.agents[i].x - target).norm()
            })
            .collect();
        let observer_errors = w
            .agents
            .iter()
            .map(|a| {
                a.tracking.state_error(&w.xo)
                    + a.formation.iter().map(|(&q, o)| o.state_error(&w.h[q])).sum::<f64>()
            })
            .collect();
        let states = self.cfg.record_states.then(|| {
            std::iter::once(w.xo.clone())
                .chain(w.agents.iter().map(|a| a.x.clone()))
                .collect()
        });
        self.log.records.push(TraceRecord {
            tick: w.tick,
            formation_errors,
            containment_errors,
            observer_errors,
            phases: w.agents.iter().map(|a| a.controller.phase()).collect(),
            states,
        });
    }

    /// Advances one tick, recording the pre-step state on sampled ticks.
    pub fn step(&mut self) -> Result<()> {
        let k = self.world.tick;
        if k % self.cfg.sample_interval == 0 {
            self.record();
        }
        let n_f = self.n_followers();
        let count = self.world.agents.len();
        let at = |e: PfccError, idx: usize| e.at(k, node_of(idx, n_f).to_string());

        if let Some(changes) = self.cfg.schedule.changes_at(k) {
            let changes = changes.clone();
            apply_propensities(&mut self.world.knowledge, &changes).map_err(|e| e.at(k, "schedule"))?;
        }
        self.world.knowledge =
            step_propagation(&self.world.knowledge, &self.cfg.topology).map_err(|e| e.at(k, "propagation"))?;
        for idx in 0..count {
            self.sync_agent(idx).map_err(|e| at(e, idx))?;
        }

        let mut inputs = Vec::with_capacity(count);
        for idx in 0..count {
            let xh = self.xhat(&self.world.agents[idx]);
            let u = self.control(idx).map_err(|e| at(e, idx))?;
            self.world.agents[idx].last_xhat = Some(xh);
            inputs.push(u);
        }

        let snap = Snapshot::take(&self.world.agents);
        let errs = self.consensus_errors(&snap, &self.world.xo, &self.world.h);
        for (idx, e) in errs.iter().enumerate() {
            let agent = &mut self.world.agents[idx];
            agent.tracking.predict(&e.tracking).map_err(|err| at(err, idx))?;
            for (q, obs) in agent.formation.iter_mut() {
                obs.predict(&e.formation[q]).map_err(|err| at(err, idx))?;
            }
        }

        for (idx, u) in inputs.iter().enumerate() {
            let dynamics = match node_of(idx, n_f) {
                Node::Follower(i) => &self.cfg.followers[i].dynamics,
                Node::Leader(q) => &self.cfg.leaders[q].dynamics,
                Node::Tracking => unreachable!(),
            };
            let agent = &mut self.world.agents[idx];
            agent.x = &dynamics.a * &agent.x + &dynamics.b * u;
            agent.last_input = Some(u.clone());
        }
        for (q, h) in self.world.h.iter_mut().enumerate() {
            *h = &self.cfg.leaders[q].formation.s * &*h;
        }
        self.world.xo = &self.cfg.tracking.a0 * &self.world.xo;

        let snap_next = Snapshot::take(&self.world.agents);
        let errs_next = self.consensus_errors(&snap_next, &self.world.xo, &self.world.h);
        for (idx, e) in errs_next.iter().enumerate() {
            let agent = &mut self.world.agents[idx];
            agent.tracking.correct(&e.tracking).map_err(|err| at(err, idx))?;
            for (q, obs) in agent.formation.iter_mut() {
                obs.correct(&e.formation[q]).map_err(|err| at(err, idx))?;
            }
        }

        for idx in 0..count {
            self.learn(idx, &errs[idx]).map_err(|e| at(e, idx))?;
        }
        self.world.tick += 1;
        Ok(())
    }

    fn learn(&mut self, idx: usize, errs: &AgentErrors) -> Result<()> {
        if !matches!(self.world.agents[idx].controller, Controller::Learned { .. }) {
            return Ok(());
        }
        let settled = self.settled(&self.world.agents[idx], errs);
        let x_next = self.xhat(&self.world.agents[idx]);
        let cfg = self.cfg.learner.clone();
        let tick = self.world.tick;
        let agent = &mut self.world.agents[idx];
        let Controller::Learned {
            ctrl,
            buffer,
            window,
            c,
            q,
        } = &mut agent.controller
        else {
            unreachable!()
        };
        if ctrl.status == LearnerStatus::Converged {
            return Ok(());
        }
        if window.is_none() {
            let (Some(x), Some(u)) = (&agent.last_xhat, &agent.last_input) else {
                return Ok(());
            };
            if !settled {
                buffer.clear();
                return Ok(());
            }
            buffer.record_sample(x, u, &x_next)?;
            if !buffer.is_full() {
                return Ok(());
            }
            *window = Some(PreparedWindow::new(buffer, cfg.regression)?);
        }
        let prepared = window.as_ref().expect("prepared window");
        for _ in 0..cfg.iterations_per_tick {
            *ctrl = learning_step(ctrl, prepared, q, c, &cfg)?;
            if ctrl.status == LearnerStatus::Converged {
                self.log.convergence.push(ConvergenceEvent {
                    tick,
                    node: agent.node,
                    iterations: ctrl.iterations,
                });
                break;
            }
        }
        Ok(())
    }

    /// Steps until the horizon.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.world.tick < self.cfg.horizon {
            self.step()?;
        }
        Ok(())
    }
}

/// `‖x_q − h_q − x_o‖` for leader `q`.
pub fn formation_error(world: &WorldState, leader: usize) -> f64 {
    let n_f = world.knowledge.followers.len();
    (&world.agents[n_f + leader].x - &world.h[leader] - &world.xo).norm()
}

/// `‖x_i − Σ α_q (h_q + x_o)‖` for follower `i` with its current coefficients.
pub fn containment_error(world: &WorldState, follower: usize) -> f64 {
    let kn = &world.knowledge.followers[follower];
    let mut target = DVector::zeros(world.xo.len());
    for &q in &kn.ifl {
        target += (&world.h[q] + &world.xo) * kn.alpha[q];
    }
    (&world.agents[follower].x - target).norm()
}

/// Runs a scenario to its horizon. On failure the trace up to the failing
/// tick is returned with the error.
pub fn run(cfg: ScenarioConfig) -> std::result::Result<TraceLog, RunFailure> {
    let mut sim = match Simulation::new(cfg) {
        Ok(s) => s,
        Err(error) => {
            return Err(RunFailure {
                partial: TraceLog::default(),
                error,
            })
        }
    };
    match sim.run_to_end() {
        Ok(()) => Ok(sim.into_log()),
        Err(error) => Err(RunFailure {
            partial: sim.into_log(),
            error,
        }),
    }
}

/// Advances `world` by one tick under `cfg`. Trace sampling is left to [`Simulation`].
pub fn step_world(world: WorldState, cfg: &ScenarioConfig) -> Result<WorldState> {
    let mut sim = Simulation::new(cfg.clone())?;
    sim.world = world;
    sim.step()?;
    Ok(sim.world)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::Regression;
    use crate::topology::Edge;
    use nalgebra::{dmatrix, dvector};

    fn tiny(mode: Mode) -> ScenarioConfig {
        let topo = DirectedTopology::from_edges(
            1,
            1,
            &[
                Edge::new(Node::Tracking, Node::Leader(0), 1.0),
                Edge::new(Node::Leader(0), Node::Follower(0), 1.0),
            ],
        )
        .unwrap();
        let swap = dmatrix![0.0, 1.0; 1.0, 0.0];
        let obs = ObserverConfig::new(4.0, 8.0, 0.7, dmatrix![0.1, 0.5; 0.5, 0.1], 0.05).unwrap();
        let dynamics = AgentDynamics::new(dmatrix![0.0, 1.0; -0.5, 1.0], dmatrix![0.0; 1.0]).unwrap();
        let k0 = dmatrix![0.5, -1.0];
        ScenarioConfig {
            topology: topo,
            tracking: TrackingSpec {
                a0: swap.clone(),
                x0: dvector![0.0, 0.0],
                observer: obs.clone(),
            },
            leaders: vec![LeaderSpec {
                dynamics: dynamics.clone(),
                formation: FormationDynamics::new(swap, dvector![2.0, 0.0]).unwrap(),
                q: DMatrix::identity(2, 2) * 2.0,
                observer: obs,
                x0: dvector![0.0, 0.0],
                initial_gain: k0.clone(),
            }],
            followers: vec![FollowerSpec {
                dynamics,
                q: DMatrix::identity(2, 2),
                x0: dvector![0.0, 0.0],
                initial_gain: k0,
            }],
            schedule: PropensitySchedule::constant(&[1.0]).unwrap(),
            learner: LearnerConfig {
                regression: Regression::MinNorm { rcond: 1e-10 },
                ..LearnerConfig::default()
            },
            horizon: 1000,
            sample_interval: 1,
            mode,
            vi: ViOptions::default(),
            record_states: true,
        }
    }

    #[test]
    fn model_based_run_reaches_targets() {
        let log = run(tiny(Mode::ModelBasedOracle)).unwrap();
        let last = log.records.last().unwrap();
        assert!(last.max_formation_error() < 1e-6, "{last:?}");
        assert!(last.max_containment_error() < 1e-6, "{last:?}");
        assert_eq!(log.records.len(), 1000);
    }

    #[test]
    fn data_driven_run_learns_and_converges() {
        let log = run(tiny(Mode::DataDriven)).unwrap();
        assert_eq!(log.convergence.len(), 2, "{:?}", log.convergence);
        let last = log.records.last().unwrap();
        assert!(last.max_formation_error() < 1e-5, "{last:?}");
        assert!(last.max_containment_error() < 1e-5, "{last:?}");
    }

    #[test]
    fn step_world_swaps_formation_and_holds_tracking_at_zero() {
        let cfg = tiny(Mode::ModelBasedOracle);
        let mut world = Simulation::new(cfg.clone()).unwrap().world().clone();
        for k in 0..6 {
            let expect = if k % 2 == 0 { dvector![2.0, 0.0] } else { dvector![0.0, 2.0] };
            assert_eq!(world.h[0], expect);
            assert_eq!(world.xo, dvector![0.0, 0.0]);
            world = step_world(world, &cfg).unwrap();
            assert_eq!(world.tick, k + 1);
        }
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let mut cfg = tiny(Mode::ModelBasedOracle);
        cfg.followers[0].x0 = dvector![0.0, 1.0, 2.0];
        assert!(matches!(Simulation::new(cfg), Err(PfccError::Dimension(_))));
    }

    #[test]
    fn failure_keeps_partial_trace() {
        let mut cfg = tiny(Mode::DataDriven);
        cfg.learner.max_iterations = 1;
        let err = run(cfg).unwrap_err();
        assert!(matches!(err.error.root(), PfccError::NoConvergence { .. }));
        assert!(!err.partial.records.is_empty());
    }
}
