//! Distributed adaptive observers: each agent estimates a target's model
//! matrix and state from consensus errors with an RLS-weighted correction.
//!
//! The regressor of an estimate `x̂` is `x̄ = Iₙ ⊗ x̂` (`n² × n`). The model
//! estimate is corrected as `Â ← Â − Λ (M η₊) x̂ᵀ` with
//! `M = (L₊⁻¹ + ξI)⁻¹`, which is the row-stacked form of
//! `Â^vec ← Â^vec − Λ x̄ M η₊`.

use nalgebra::{DMatrix, DVector};

use crate::error::{PfccError, Result};
use crate::matops::{kron, sigma_max, spd_inverse, spectral_radius};
use crate::propagation::AgentKnowledge;

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverConfig {
    pub xi: f64,
    pub lambda: f64,
    pub mu: f64,
    pub gain: DMatrix<f64>,
    pub l0_scale: f64,
}

impl ObserverConfig {
    pub fn new(xi: f64, lambda: f64, mu: f64, gain: DMatrix<f64>, l0_scale: f64) -> Result<Self> {
        let cfg = ObserverConfig {
            xi,
            lambda,
            mu,
            gain,
            l0_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 1.0) {
            return Err(PfccError::Config(format!("observer xi must be at least 1, got {}", self.xi)));
        }
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu), ("l0_scale", self.l0_scale)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PfccError::Config(format!("observer {name} must be positive, got {v}")));
            }
        }
        if !self.gain.is_square() {
            return Err(PfccError::Dimension("observer gain F must be square".into()));
        }
        Ok(())
    }
}

/// `Iₙ ⊗ x̂`.
pub fn regressor(x_hat: &DVector<f64>) -> DMatrix<f64> {
    let n = x_hat.len();
    kron(&DMatrix::identity(n, n), &DMatrix::from_column_slice(n, 1, x_hat.as_slice()))
}

/// `L₊ = L − L x̄ᵀ (I + x̄ L x̄ᵀ)⁻¹ x̄ L`, which equals `(L⁻¹ + x̄ᵀx̄)⁻¹`.
#[allow(non_snake_case)]
pub fn rls_update_L(l: &DMatrix<f64>, x_bar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !l.is_square() || x_bar.ncols() != l.nrows() {
        return Err(PfccError::Dimension(format!(
            "RLS update with L {}x{} and regressor {}x{}",
            l.nrows(),
            l.ncols(),
            x_bar.nrows(),
            x_bar.ncols()
        )));
    }
    if l.clone().cholesky().is_none() {
        return Err(PfccError::NotPositiveDefinite);
    }
    let lxt = l * x_bar.transpose();
    let inner = DMatrix::identity(x_bar.nrows(), x_bar.nrows()) + x_bar * &lxt;
    let inner_inv = spd_inverse(&inner)?;
    let next = l - &lxt * inner_inv * lxt.transpose();
    Ok((&next + next.transpose()) * 0.5)
}

/// Adaptive observer of one target (the tracking state or one leader's
/// formation state).
#[derive(Debug, Clone, PartialEq)]
pub struct RlsObserver {
    pub l: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub x_hat: DVector<f64>,
    pub config: ObserverConfig,
    previous: DVector<f64>,
}

impl RlsObserver {
    /// `L = βI`, `Â = 0`, `x̂ = 0`.
    pub fn new(config: ObserverConfig, n: usize) -> Result<Self> {
        Self::with_state(config, DMatrix::zeros(n, n), DVector::zeros(n))
    }

    pub fn with_state(config: ObserverConfig, a_hat: DMatrix<f64>, x_hat: DVector<f64>) -> Result<Self> {
        config.validate()?;
        let n = x_hat.len();
        if a_hat.shape() != (n, n) || config.gain.nrows() != n {
            return Err(PfccError::Dimension(format!("observer of order {n} with mismatched blocks")));
        }
        Ok(RlsObserver {
            l: DMatrix::identity(n, n) * config.l0_scale,
            a_hat,
            previous: x_hat.clone(),
            x_hat,
            config,
        })
    }

    pub fn order(&self) -> usize {
        self.x_hat.len()
    }

    fn check(&self, eta: &DVector<f64>) -> Result<()> {
        if eta.len() != self.order() {
            return Err(PfccError::Dimension(format!(
                "consensus error of length {} for an observer of order {}",
                eta.len(),
                self.order()
            )));
        }
        Ok(())
    }

    /// State prediction `Â x̂ − μ F η` without mutating the observer.
    pub fn predicted_state(&self, eta: &DVector<f64>) -> DVector<f64> {
        &self.a_hat * &self.x_hat - &self.config.gain * eta * self.config.mu
    }

    /// First half of a tick: downdates `L` with the current regressor and
    /// advances `x̂` using the current model estimate.
    pub fn predict(&mut self, eta: &DVector<f64>) -> Result<()> {
        self.check(eta)?;
        let next = self.predicted_state(eta);
        self.l = rls_update_L(&self.l, &regressor(&self.x_hat))?;
        self.previous = std::mem::replace(&mut self.x_hat, next);
        Ok(())
    }

    /// Second half of a tick: corrects `Â` with the consensus error formed
    /// from the neighbours' predicted estimates.
    pub fn correct(&mut self, eta_next: &DVector<f64>) -> Result<()> {
        self.check(eta_next)?;
        let n = self.order();
        let l_inv = spd_inverse(&self.l)?;
        let m = spd_inverse(&(l_inv + DMatrix::identity(n, n) * self.config.xi))?;
        let step = (m * eta_next) * self.previous.transpose() * self.config.lambda;
        self.a_hat -= step;
        Ok(())
    }

    /// `(L⁻¹ + ξI)⁻¹` for the current `L`.
    pub fn gain_block(&self) -> Result<DMatrix<f64>> {
        let n = self.order();
        spd_inverse(&(spd_inverse(&self.l)? + DMatrix::identity(n, n) * self.config.xi))
    }

    pub fn state_error(&self, target: &DVector<f64>) -> f64 {
        (&self.x_hat - target).norm()
    }
}

/// `Σ w (own − estimate)` over the supplied neighbours.
pub fn consensus_error<'a>(
    own: &DVector<f64>,
    neighbours: impl IntoIterator<Item = (f64, &'a DVector<f64>)>,
) -> DVector<f64> {
    let mut eta = DVector::zeros(own.len());
    for (w, est) in neighbours {
        if w != 0.0 {
            eta += (own - est) * w;
        }
    }
    eta
}

/// One full tick of the tracking-state observer given both consensus errors.
pub fn observer_step_tracking_leader(
    obs: &RlsObserver,
    eta: &DVector<f64>,
    eta_next: &DVector<f64>,
) -> Result<RlsObserver> {
    let mut next = obs.clone();
    next.predict(eta)?;
    next.correct(eta_next)?;
    Ok(next)
}

/// A neighbour's estimate of leader `q`'s formation state, with the gate
/// saying whether that neighbour is influenced by `q`.
#[derive(Debug, Clone, Copy)]
pub struct GatedEstimate<'a> {
    pub weight: f64,
    pub influenced: bool,
    pub estimate: &'a DVector<f64>,
}

/// Consensus error of agent `m`'s estimate of `h_q`: gated neighbour terms
/// plus the direct pin `g_m^q (ĥ − h_q)`.
pub fn formation_consensus_error(
    own: &DVector<f64>,
    neighbours: &[GatedEstimate<'_>],
    pin: f64,
    target: &DVector<f64>,
) -> DVector<f64> {
    let gated = neighbours
        .iter()
        .filter(|g| g.influenced)
        .map(|g| (g.weight, g.estimate))
        .chain(std::iter::once((pin, target)));
    consensus_error(own, gated)
}

/// One full tick of agent `m`'s observer of leader `leader`'s formation state.
pub fn observer_step_formation(
    obs: &RlsObserver,
    knowledge: &AgentKnowledge,
    leader: usize,
    eta: &DVector<f64>,
    eta_next: &DVector<f64>,
) -> Result<RlsObserver> {
    if !knowledge.knows(leader) {
        return Err(PfccError::NotInfluential(leader));
    }
    observer_step_tracking_leader(obs, eta, eta_next)
}

/// `S = I ⊗ A − μ G ⊗ F`.
pub fn consensus_matrix(a_target: &DMatrix<f64>, mu: f64, gain: &DMatrix<f64>, graph_block: &DMatrix<f64>) -> DMatrix<f64> {
    let k = graph_block.nrows();
    kron(&DMatrix::identity(k, k), a_target) - kron(graph_block, gain) * mu
}

pub fn check_schur_consensus(a_target: &DMatrix<f64>, mu: f64, gain: &DMatrix<f64>, graph_block: &DMatrix<f64>) -> bool {
    spectral_radius(&consensus_matrix(a_target, mu, gain, graph_block)) < 1.0 - 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainBound {
    /// The regressor vanished; any positive coupling gain satisfies the bound.
    Unconstrained,
    Bound(f64),
    /// `W − SᵀWS` is not positive definite; the bound is reported as 0.
    Degenerate,
}

impl GainBound {
    pub fn value(&self) -> f64 {
        match self {
            GainBound::Unconstrained => f64::INFINITY,
            GainBound::Bound(b) => *b,
            GainBound::Degenerate => 0.0,
        }
    }
}

/// Upper bound on the coupling gain `Λ`:
/// `λ_min(W − SᵀWS) / (σ²_max(G) Γ)` with `W = ½L̄(G⊗I) + ½(G⊗I)ᵀL̄` and
/// `Γ = σ²_max(ζ) / (ξ + σ²_max(ζ))`.
pub fn coupling_gain_bound(
    zeta: &DMatrix<f64>,
    l_bar: &DMatrix<f64>,
    graph_block: &DMatrix<f64>,
    s: &DMatrix<f64>,
    xi: f64,
) -> Result<GainBound> {
    let rho = spectral_radius(s);
    if rho >= 1.0 {
        return Err(PfccError::NotSchur(rho));
    }
    let k = graph_block.nrows();
    if k == 0 || s.nrows() % k != 0 || l_bar.shape() != s.shape() {
        return Err(PfccError::Dimension("coupling bound blocks disagree".into()));
    }
    let n = s.nrows() / k;
    let sz = sigma_max(zeta);
    let gamma = sz * sz / (xi + sz * sz);
    if gamma == 0.0 {
        return Ok(GainBound::Unconstrained);
    }
    let gi = kron(graph_block, &DMatrix::identity(n, n));
    let w = (l_bar * &gi + gi.transpose() * l_bar) * 0.5;
    let d = &w - s.transpose() * &w * s;
    let d = (&d + d.transpose()) * 0.5;
    let lam_min = d.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if !(lam_min > 0.0) {
        return Ok(GainBound::Degenerate);
    }
    let sg = sigma_max(graph_block);
    Ok(GainBound::Bound(lam_min / (sg * sg * gamma)))
}
