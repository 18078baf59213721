//! Directed communication graph over one tracking leader, `M` formation
//! leaders and `N` followers.
//!
//! Global node order: tracking leader `0`, followers `1..=N`, leaders
//! `N+1..=N+M`. Followers and leaders are addressed by zero-based local
//! indices everywhere else in the crate.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{PfccError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Tracking,
    Follower(usize),
    Leader(usize),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Tracking => write!(f, "tracking leader"),
            Node::Follower(i) => write!(f, "F{}", i + 1),
            Node::Leader(q) => write!(f, "L{}", q + 1),
        }
    }
}

/// Weighted edge `from → to` (information flows from `from` to `to`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: Node,
    pub to: Node,
    pub weight: f64,
}

impl Edge {
    pub fn new(from: Node, to: Node, weight: f64) -> Self {
        Edge { from, to, weight }
    }
}

/// Row index is the receiver: `follower_adjacency[(i, j)] = a_ij` is the
/// weight of `Fj → Fi`, `leader_to_follower[(i, q)] = g_i^q`,
/// `leader_adjacency[(q, m)] = a_qm`, `tracking_to_leader[q] = g_q^0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedTopology {
    n_followers: usize,
    n_leaders: usize,
    follower_adjacency: DMatrix<f64>,
    leader_adjacency: DMatrix<f64>,
    leader_to_follower: DMatrix<f64>,
    tracking_to_leader: DVector<f64>,
}

impl DirectedTopology {
    pub fn new(
        follower_adjacency: DMatrix<f64>,
        leader_adjacency: DMatrix<f64>,
        leader_to_follower: DMatrix<f64>,
        tracking_to_leader: DVector<f64>,
    ) -> Result<Self> {
        let n = follower_adjacency.nrows();
        let m = leader_adjacency.nrows();
        if follower_adjacency.ncols() != n
            || leader_adjacency.ncols() != m
            || leader_to_follower.shape() != (n, m)
            || tracking_to_leader.len() != m
        {
            return Err(PfccError::Dimension(format!(
                "topology blocks disagree on {n} followers and {m} leaders"
            )));
        }
        let all = follower_adjacency
            .iter()
            .chain(leader_adjacency.iter())
            .chain(leader_to_follower.iter())
            .chain(tracking_to_leader.iter());
        for &w in all {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(PfccError::Topology(format!("edge weight {w} is not a nonnegative number")));
            }
        }
        for i in 0..n {
            if follower_adjacency[(i, i)] != 0.0 {
                return Err(PfccError::Topology(format!("self-loop on F{}", i + 1)));
            }
        }
        for q in 0..m {
            if leader_adjacency[(q, q)] != 0.0 {
                return Err(PfccError::Topology(format!("self-loop on L{}", q + 1)));
            }
        }
        Ok(DirectedTopology {
            n_followers: n,
            n_leaders: m,
            follower_adjacency,
            leader_adjacency,
            leader_to_follower,
            tracking_to_leader,
        })
    }

    pub fn empty(n_followers: usize, n_leaders: usize) -> Self {
        DirectedTopology {
            n_followers,
            n_leaders,
            follower_adjacency: DMatrix::zeros(n_followers, n_followers),
            leader_adjacency: DMatrix::zeros(n_leaders, n_leaders),
            leader_to_follower: DMatrix::zeros(n_followers, n_leaders),
            tracking_to_leader: DVector::zeros(n_leaders),
        }
    }

    pub fn from_edges(n_followers: usize, n_leaders: usize, edges: &[Edge]) -> Result<Self> {
        let mut t = Self::empty(n_followers, n_leaders);
        for e in edges {
            let bad = |why: &str| PfccError::Topology(format!("edge {} -> {}: {why}", e.from, e.to));
            if !(e.weight >= 0.0) || !e.weight.is_finite() {
                return Err(bad("weight must be a nonnegative number"));
            }
            let in_range = |node: Node| match node {
                Node::Tracking => true,
                Node::Follower(i) => i < n_followers,
                Node::Leader(q) => q < n_leaders,
            };
            if !in_range(e.from) || !in_range(e.to) {
                return Err(bad("node index out of range"));
            }
            if e.from == e.to {
                return Err(bad("self-loop"));
            }
            let slot = match (e.from, e.to) {
                (Node::Follower(j), Node::Follower(i)) => &mut t.follower_adjacency[(i, j)],
                (Node::Leader(m), Node::Leader(q)) => &mut t.leader_adjacency[(q, m)],
                (Node::Leader(q), Node::Follower(i)) => &mut t.leader_to_follower[(i, q)],
                (Node::Tracking, Node::Leader(q)) => &mut t.tracking_to_leader[q],
                (Node::Follower(_), Node::Leader(_)) => return Err(bad("followers never transmit to leaders")),
                (_, Node::Tracking) => return Err(bad("the tracking leader receives nothing")),
                (Node::Tracking, Node::Follower(_)) => {
                    return Err(bad("the tracking leader only transmits to formation leaders"))
                }
            };
            if *slot != 0.0 {
                return Err(bad("duplicate edge"));
            }
            *slot = e.weight;
        }
        Ok(t)
    }

    pub fn n_followers(&self) -> usize {
        self.n_followers
    }

    pub fn n_leaders(&self) -> usize {
        self.n_leaders
    }

    pub fn node_count(&self) -> usize {
        1 + self.n_followers + self.n_leaders
    }

    pub fn follower_adjacency(&self) -> &DMatrix<f64> {
        &self.follower_adjacency
    }

    pub fn leader_adjacency(&self) -> &DMatrix<f64> {
        &self.leader_adjacency
    }

    pub fn leader_to_follower(&self) -> &DMatrix<f64> {
        &self.leader_to_follower
    }

    pub fn tracking_to_leader(&self) -> &DVector<f64> {
        &self.tracking_to_leader
    }

    pub fn index(&self, node: Node) -> usize {
        match node {
            Node::Tracking => 0,
            Node::Follower(i) => 1 + i,
            Node::Leader(q) => 1 + self.n_followers + q,
        }
    }

    pub fn node(&self, index: usize) -> Node {
        assert!(index < self.node_count(), "node index {index} out of range");
        if index == 0 {
            Node::Tracking
        } else if index <= self.n_followers {
            Node::Follower(index - 1)
        } else {
            Node::Leader(index - 1 - self.n_followers)
        }
    }

    /// Weight of the edge `from → to`, zero when absent or structurally impossible.
    pub fn weight(&self, from: Node, to: Node) -> f64 {
        match (from, to) {
            (Node::Follower(j), Node::Follower(i)) => self.follower_adjacency[(i, j)],
            (Node::Leader(m), Node::Leader(q)) => self.leader_adjacency[(q, m)],
            (Node::Leader(q), Node::Follower(i)) => self.leader_to_follower[(i, q)],
            (Node::Tracking, Node::Leader(q)) => self.tracking_to_leader[q],
            _ => 0.0,
        }
    }

    /// In-neighbours of `node` with their weights, in global node order.
    pub fn in_neighbors(&self, node: Node) -> Vec<(Node, f64)> {
        (0..self.node_count())
            .map(|k| self.node(k))
            .filter_map(|src| {
                let w = self.weight(src, node);
                (w > 0.0).then_some((src, w))
            })
            .collect()
    }

    /// Full `(N+M+1)²` adjacency, row = receiver.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let k = self.node_count();
        DMatrix::from_fn(k, k, |r, c| self.weight(self.node(c), self.node(r)))
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for from in 0..self.node_count() {
            for to in 0..self.node_count() {
                let (f, t) = (self.node(from), self.node(to));
                let w = self.weight(f, t);
                if w > 0.0 {
                    out.push(Edge::new(f, t, w));
                }
            }
        }
        out
    }

    /// Nodes reachable from `sources` along directed edges (sources included).
    pub fn reachable_from(&self, sources: &[Node]) -> Vec<bool> {
        let k = self.node_count();
        let adj = self.adjacency();
        let mut seen = vec![false; k];
        let mut queue = VecDeque::new();
        for &s in sources {
            let i = self.index(s);
            if !seen[i] {
                seen[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(u) = queue.pop_front() {
            for v in 0..k {
                if adj[(v, u)] > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

/// Blocks of `L = D − A` with rows and columns ordered tracking, followers, leaders.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBlocks {
    /// `M × 1`: leader rows, tracking column.
    pub l0: DMatrix<f64>,
    /// `N × N`: follower rows and columns.
    pub l1: DMatrix<f64>,
    /// `N × M`: follower rows, leader columns.
    pub l2: DMatrix<f64>,
    /// `M × M`: leader rows and columns.
    pub l3: DMatrix<f64>,
}

pub fn laplacian(topo: &DirectedTopology) -> DMatrix<f64> {
    let a = topo.adjacency();
    let k = a.nrows();
    let mut l = -a.clone();
    for r in 0..k {
        l[(r, r)] = a.row(r).sum();
    }
    l
}

pub fn build_laplacian(topo: &DirectedTopology) -> LaplacianBlocks {
    let l = laplacian(topo);
    let n = topo.n_followers();
    let m = topo.n_leaders();
    LaplacianBlocks {
        l0: l.view((1 + n, 0), (m, 1)).into_owned(),
        l1: l.view((1, 1), (n, n)).into_owned(),
        l2: l.view((1, 1 + n), (n, m)).into_owned(),
        l3: l.view((1 + n, 1 + n), (m, m)).into_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    /// Nodes with no directed path from the tracking leader.
    pub unreachable_from_root: Vec<Node>,
    /// Followers no formation leader can reach.
    pub followers_without_leader: Vec<usize>,
}

impl ValidationReport {
    pub fn spanning_tree(&self) -> bool {
        self.unreachable_from_root.is_empty()
    }

    pub fn every_follower_led(&self) -> bool {
        self.followers_without_leader.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.spanning_tree() && self.every_follower_led()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "spanning tree rooted at the tracking leader; every follower reachable from a leader");
        }
        let mut parts = Vec::new();
        if !self.spanning_tree() {
            let names: Vec<String> = self.unreachable_from_root.iter().map(|n| n.to_string()).collect();
            parts.push(format!("not reachable from the tracking leader: {}", names.join(", ")));
        }
        if !self.every_follower_led() {
            let names: Vec<String> = self.followers_without_leader.iter().map(|i| format!("F{}", i + 1)).collect();
            parts.push(format!("no formation leader reaches: {}", names.join(", ")));
        }
        write!(f, "{}", parts.join("; "))
    }
}

pub fn verify_assumption1(topo: &DirectedTopology) -> ValidationReport {
    let from_root = topo.reachable_from(&[Node::Tracking]);
    let unreachable_from_root = (0..topo.node_count())
        .filter(|&k| !from_root[k])
        .map(|k| topo.node(k))
        .collect();
    let leaders: Vec<Node> = (0..topo.n_leaders()).map(Node::Leader).collect();
    let from_leaders = topo.reachable_from(&leaders);
    let followers_without_leader = (0..topo.n_followers())
        .filter(|&i| !from_leaders[topo.index(Node::Follower(i))])
        .collect();
    ValidationReport {
        unreachable_from_root,
        followers_without_leader,
    }
}
