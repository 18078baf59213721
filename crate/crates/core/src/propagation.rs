//! Distributed propagation of influential-leader sets, propensity
//! dictionaries and convex coefficients.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::DMatrix;

use crate::error::{PfccError, Result};
use crate::topology::{build_laplacian, DirectedTopology, Node};

/// Coefficients are rounded to this grid so that scaling every propensity by
/// a common factor reproduces them bit for bit.
const ALPHA_GRID: f64 = (1u64 << 40) as f64;

/// What one agent currently knows about the formation leaders.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentKnowledge {
    /// Influential leaders (zero-based leader indices).
    pub ifl: BTreeSet<usize>,
    /// Propensity per known leader; its domain equals `ifl`.
    pub propensities: BTreeMap<usize, f64>,
    /// Reach flag per leader (`ḡ` for followers, `ā` for leaders).
    pub reach: Vec<bool>,
    /// Convex coefficient per leader; zero outside `ifl`.
    pub alpha: Vec<f64>,
}

impl AgentKnowledge {
    fn new(n_leaders: usize, propensities: BTreeMap<usize, f64>) -> Self {
        let mut k = AgentKnowledge {
            ifl: propensities.keys().copied().collect(),
            propensities,
            reach: vec![false; n_leaders],
            alpha: vec![0.0; n_leaders],
        };
        k.refresh();
        k
    }

    fn refresh(&mut self) {
        for (q, r) in self.reach.iter_mut().enumerate() {
            *r = self.ifl.contains(&q);
        }
        self.alpha = convex_coefficients(&self.propensities, self.reach.len());
    }

    pub fn knows(&self, leader: usize) -> bool {
        self.ifl.contains(&leader)
    }

    /// Coefficients of the influential leaders in ascending leader order.
    pub fn ordered_alpha(&self) -> Vec<(usize, f64)> {
        self.ifl.iter().map(|&q| (q, self.alpha[q])).collect()
    }
}

/// `α_q = ϑ_q / Σ ϑ`, quantized to a `2⁻⁴⁰` grid.
pub fn convex_coefficients(propensities: &BTreeMap<usize, f64>, n_leaders: usize) -> Vec<f64> {
    let mut alpha = vec![0.0; n_leaders];
    let total: f64 = propensities.values().sum();
    if total > 0.0 {
        for (&q, &p) in propensities {
            alpha[q] = (p / total * ALPHA_GRID).round() / ALPHA_GRID;
        }
    }
    alpha
}

/// Knowledge of every agent at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Knowledge {
    pub followers: Vec<AgentKnowledge>,
    pub leaders: Vec<AgentKnowledge>,
    /// Propensity each leader currently broadcasts.
    pub broadcast: Vec<f64>,
}

impl Knowledge {
    pub fn agent(&self, node: Node) -> Option<&AgentKnowledge> {
        match node {
            Node::Follower(i) => self.followers.get(i),
            Node::Leader(q) => self.leaders.get(q),
            Node::Tracking => None,
        }
    }

    fn same_sets(&self, other: &Knowledge) -> bool {
        self.followers.iter().zip(&other.followers).all(|(a, b)| a.ifl == b.ifl)
            && self.leaders.iter().zip(&other.leaders).all(|(a, b)| a.ifl == b.ifl)
    }
}

/// Propensity changes keyed by activation tick.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensitySchedule {
    entries: Vec<(u64, BTreeMap<usize, f64>)>,
}

impl PropensitySchedule {
    /// The first entry must activate at tick 0.
    pub fn new(entries: Vec<(u64, BTreeMap<usize, f64>)>) -> Result<Self> {
        match entries.first() {
            None => return Err(PfccError::Config("propensity schedule is empty".into())),
            Some((t, _)) if *t != 0 => {
                return Err(PfccError::Config("propensity schedule must start at tick 0".into()))
            }
            _ => {}
        }
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(PfccError::Config(format!(
                    "propensity schedule ticks must increase strictly ({} after {})",
                    w[1].0, w[0].0
                )));
            }
        }
        for (_, map) in &entries {
            for (&q, &v) in map {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(PfccError::NonPositivePropensity { leader: q, value: v });
                }
            }
        }
        Ok(PropensitySchedule { entries })
    }

    pub fn constant(values: &[f64]) -> Result<Self> {
        Self::new(vec![(0, values.iter().copied().enumerate().collect())])
    }

    pub fn initial(&self) -> &BTreeMap<usize, f64> {
        &self.entries[0].1
    }

    pub fn entries(&self) -> &[(u64, BTreeMap<usize, f64>)] {
        &self.entries
    }

    /// Changes activating exactly at `tick` (tick 0 excluded: it is the initial map).
    pub fn changes_at(&self, tick: u64) -> Option<&BTreeMap<usize, f64>> {
        if tick == 0 {
            return None;
        }
        self.entries.iter().find(|(t, _)| *t == tick).map(|(_, m)| m)
    }

    /// Every propensity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.entries
                .iter()
                .map(|(t, m)| (*t, m.iter().map(|(&q, &v)| (q, v * factor)).collect()))
                .collect(),
        )
    }
}

fn check_propensities(theta: &BTreeMap<usize, f64>, n_leaders: usize) -> Result<Vec<f64>> {
    (0..n_leaders)
        .map(|q| match theta.get(&q) {
            None => Err(PfccError::MissingPropensity(q)),
            Some(&v) if !(v > 0.0) || !v.is_finite() => Err(PfccError::NonPositivePropensity { leader: q, value: v }),
            Some(&v) => Ok(v),
        })
        .collect()
}

/// Followers start from their direct leader in-neighbours, leaders from their
/// leader in-neighbours.
pub fn init_knowledge(topo: &DirectedTopology, theta: &BTreeMap<usize, f64>) -> Result<Knowledge> {
    let m = topo.n_leaders();
    let broadcast = check_propensities(theta, m)?;
    let direct = |node: Node| -> BTreeMap<usize, f64> {
        topo.in_neighbors(node)
            .into_iter()
            .filter_map(|(src, _)| match src {
                Node::Leader(q) => Some((q, broadcast[q])),
                _ => None,
            })
            .collect()
    };
    Ok(Knowledge {
        followers: (0..topo.n_followers()).map(|i| AgentKnowledge::new(m, direct(Node::Follower(i)))).collect(),
        leaders: (0..m).map(|q| AgentKnowledge::new(m, direct(Node::Leader(q)))).collect(),
        broadcast,
    })
}

fn merge_into(dst: &mut BTreeMap<usize, f64>, leader: usize, value: f64) -> Result<()> {
    match dst.get(&leader) {
        Some(&existing) if existing != value => Err(PfccError::PropensityConflict {
            leader,
            first: existing,
            second: value,
        }),
        Some(_) => Ok(()),
        None => {
            dst.insert(leader, value);
            Ok(())
        }
    }
}

/// One synchronous round: every agent merges the previous-tick sets and
/// dictionaries of its in-neighbours.
pub fn step_propagation(k: &Knowledge, topo: &DirectedTopology) -> Result<Knowledge> {
    let m = topo.n_leaders();
    let gather = |node: Node, own: &AgentKnowledge| -> Result<AgentKnowledge> {
        let mut dic = own.propensities.clone();
        for (src, _) in topo.in_neighbors(node) {
            match src {
                Node::Leader(q) => {
                    merge_into(&mut dic, q, k.broadcast[q])?;
                    for (&p, &v) in &k.leaders[q].propensities {
                        merge_into(&mut dic, p, v)?;
                    }
                }
                Node::Follower(j) => {
                    for (&p, &v) in &k.followers[j].propensities {
                        merge_into(&mut dic, p, v)?;
                    }
                }
                Node::Tracking => {}
            }
        }
        Ok(AgentKnowledge::new(m, dic))
    };
    let followers = k
        .followers
        .iter()
        .enumerate()
        .map(|(i, own)| gather(Node::Follower(i), own))
        .collect::<Result<Vec<_>>>()?;
    let leaders = k
        .leaders
        .iter()
        .enumerate()
        .map(|(q, own)| gather(Node::Leader(q), own))
        .collect::<Result<Vec<_>>>()?;
    Ok(Knowledge {
        followers,
        leaders,
        broadcast: k.broadcast.clone(),
    })
}

/// Iterates [`step_propagation`] until no set changes. The returned count
/// includes the final round that confirmed the fixed point.
pub fn propagation_fixed_point(k: &Knowledge, topo: &DirectedTopology) -> Result<(Knowledge, usize)> {
    let bound = (topo.n_followers() + topo.n_leaders()).saturating_sub(1).max(1);
    let mut current = k.clone();
    for iteration in 1..=bound {
        let next = step_propagation(&current, topo)?;
        if next.same_sets(&current) {
            return Ok((next, iteration));
        }
        current = next;
    }
    Err(PfccError::PropagationBound(bound))
}

/// Resets the propensity of every known leader listed in `changes` and
/// recomputes the coefficients. Sets are left untouched.
pub fn apply_propensities(k: &mut Knowledge, changes: &BTreeMap<usize, f64>) -> Result<()> {
    for (&q, &v) in changes {
        if q >= k.broadcast.len() {
            return Err(PfccError::Config(format!("propensity given for unknown leader L{}", q + 1)));
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(PfccError::NonPositivePropensity { leader: q, value: v });
        }
        k.broadcast[q] = v;
    }
    for agent in k.followers.iter_mut().chain(k.leaders.iter_mut()) {
        for (q, v) in agent.propensities.iter_mut() {
            if let Some(&nv) = changes.get(q) {
                *v = nv;
            }
        }
        agent.refresh();
    }
    Ok(())
}

/// Leaders relaying each leader's influence: for leader `q`, the leaders `m`
/// with `q ∈ N_m^L` that reach some follower which `q` reaches only through
/// other leaders.
pub fn itfl_sets(k: &Knowledge, topo: &DirectedTopology) -> Vec<BTreeSet<usize>> {
    let n = topo.n_followers();
    let m = topo.n_leaders();
    (0..m)
        .map(|q| {
            let direct = leader_free_followers(topo, q);
            let reached = topo.reachable_from(&[Node::Leader(q)]);
            let lacking: Vec<usize> = (0..n)
                .filter(|&i| reached[topo.index(Node::Follower(i))] && !direct[i])
                .collect();
            (0..m)
                .filter(|&r| r != q && k.leaders[r].knows(q))
                .filter(|&r| {
                    let from_r = topo.reachable_from(&[Node::Leader(r)]);
                    lacking.iter().any(|&i| from_r[topo.index(Node::Follower(i))])
                })
                .collect()
        })
        .collect()
}

/// Followers reachable from leader `q` through followers only.
fn leader_free_followers(topo: &DirectedTopology, q: usize) -> Vec<bool> {
    let n = topo.n_followers();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        if topo.leader_to_follower()[(i, q)] > 0.0 {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if topo.follower_adjacency()[(i, j)] > 0.0 && !seen[i] {
                seen[i] = true;
                queue.push_back(i);
            }
        }
    }
    seen
}

/// Containment weights without propensities: rows of `−L₁⁻¹L₂`.
pub fn laplacian_weights(topo: &DirectedTopology) -> Result<DMatrix<f64>> {
    let blocks = build_laplacian(topo);
    let inv = blocks.l1.clone().try_inverse().ok_or_else(|| {
        PfccError::Topology("L1 is singular; some follower is not reachable from a leader".into())
    })?;
    Ok(-(inv * blocks.l2))
}
