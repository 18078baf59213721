use thiserror::Error;

pub type Result<T> = std::result::Result<T, PfccError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PfccError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("no propensity given for leader L{}", .0 + 1)]
    MissingPropensity(usize),
    #[error("propensity must be positive, leader L{} has {}", .leader + 1, .value)]
    NonPositivePropensity { leader: usize, value: f64 },
    #[error("conflicting propensities for leader L{}: {} vs {}", .leader + 1, .first, .second)]
    PropensityConflict { leader: usize, first: f64, second: f64 },
    #[error("propagation exceeded its {0}-iteration bound without reaching a fixed point")]
    PropagationBound(usize),
    #[error("agent does not track leader L{}", .0 + 1)]
    NotInfluential(usize),
    #[error("empty influential leader set")]
    EmptyLeaderSet,
    #[error("convex coefficients sum to {0}, expected 1")]
    CoefficientSum(f64),
    #[error("regulation equation has no solution (residual {0:e}); stabilizing gains cannot realize the target")]
    Unsolvable(f64),
    #[error("value iteration did not converge after {iterations} iterations (last change {delta:e})")]
    NoConvergence { iterations: usize, delta: f64 },
    #[error("persistent excitation violated: {0}")]
    Excitation(String),
    #[error("consensus matrix is not Schur (spectral radius {0})")]
    NotSchur(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("tick {tick}, {agent}: {source}")]
    AtTick {
        tick: u64,
        agent: String,
        source: Box<PfccError>,
    },
}

impl PfccError {
    pub fn at(self, tick: u64, agent: impl Into<String>) -> Self {
        PfccError::AtTick {
            tick,
            agent: agent.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, with tick annotations stripped.
    pub fn root(&self) -> &PfccError {
        match self {
            PfccError::AtTick { source, .. } => source.root(),
            other => other,
        }
    }
}
