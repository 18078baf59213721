//! Data-driven value iteration on an agent's augmented state.
//!
//! Every sample `(X, u, X⁺)` gives `X⁺ᵀPX⁺ = XᵀΞ₁X + 2uᵀΞ₂X + uᵀΞ₃u` with
//! `Ξ₁ = ĀᵀPĀ`, `Ξ₂ = B̄ᵀPĀ`, `Ξ₃ = B̄ᵀPB̄`. In regression form the row is
//! `θ = [vecv(X), 2·(X ⊗ u), vecv(u)]` and the unknown is
//! `[vecm(Ξ₁); vec(Ξ₂); vecm(Ξ₃)]`. The identity holds for any input, so
//! exploratory data identifies the blocks and the greedy policy is evaluated
//! off-policy from them.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{PfccError, Result};
use crate::matops::{
    condition_number, kron_vec, pinv, pinv_rcond, sym_len, unvec, unvecm, vec, vecm_sym, vecv, SymmetricMatrix,
};
use crate::model_control::AugmentedSystem;

/// Number of regression columns of `Θ` for state width `d` and input width `m`.
pub fn theta_columns(d: usize, m: usize) -> usize {
    sym_len(d) + d * m + sym_len(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub x_next: DVector<f64>,
}

/// Rolling window of transitions of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBuffer {
    d: usize,
    m: usize,
    window: usize,
    rows: VecDeque<Sample>,
}

impl DataBuffer {
    pub fn new(d: usize, m: usize, window: usize) -> Self {
        DataBuffer {
            d,
            m,
            window: window.max(1),
            rows: VecDeque::new(),
        }
    }

    /// Window of `columns(Θ) + 10` rows.
    pub fn with_default_window(d: usize, m: usize) -> Self {
        Self::new(d, m, theta_columns(d, m) + 10)
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() >= self.window
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    /// Flushes the window and adopts a new augmented layout.
    pub fn reset_layout(&mut self, d: usize, m: usize, window: usize) {
        *self = DataBuffer::new(d, m, window);
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.rows.iter()
    }

    pub fn record_sample(&mut self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        if x.len() != self.d || x_next.len() != self.d || u.len() != self.m {
            return Err(PfccError::Dimension(format!(
                "sample ({}, {}, {}) does not fit a buffer for state {} and input {}",
                x.len(),
                u.len(),
                x_next.len(),
                self.d,
                self.m
            )));
        }
        if self.rows.len() == self.window {
            self.rows.pop_front();
        }
        self.rows.push_back(Sample {
            x: x.clone(),
            u: u.clone(),
            x_next: x_next.clone(),
        });
        Ok(())
    }

    fn stack(&self, cols: usize, row: impl Fn(&Sample) -> DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows.len(), cols);
        for (r, s) in self.rows.iter().enumerate() {
            out.row_mut(r).copy_from(&row(s).transpose());
        }
        out
    }

    /// Rows `vecv(X_k)`.
    pub fn psi(&self) -> DMatrix<f64> {
        self.stack(sym_len(self.d), |s| vecv(&s.x))
    }

    /// Rows `vecv(X_{k+1})`.
    pub fn psi_next(&self) -> DMatrix<f64> {
        self.stack(sym_len(self.d), |s| vecv(&s.x_next))
    }

    /// Rows `X_k ⊗ u_k`.
    pub fn tau(&self) -> DMatrix<f64> {
        self.stack(self.d * self.m, |s| kron_vec(&s.x, &s.u))
    }

    /// Rows `vecv(u_k)`.
    pub fn omega(&self) -> DMatrix<f64> {
        self.stack(sym_len(self.m), |s| vecv(&s.u))
    }

    /// `[Ψ, 2Τ, Ω]`.
    pub fn theta(&self) -> DMatrix<f64> {
        self.stack(theta_columns(self.d, self.m), |s| theta_row(&s.x, &s.u))
    }
}

fn theta_row(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let a = vecv(x);
    let b = kron_vec(x, u) * 2.0;
    let c = vecv(u);
    let mut out = DVector::zeros(a.len() + b.len() + c.len());
    out.rows_mut(0, a.len()).copy_from(&a);
    out.rows_mut(a.len(), b.len()).copy_from(&b);
    out.rows_mut(a.len() + b.len(), c.len()).copy_from(&c);
    out
}

/// How rank deficiency of the regressions is handled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regression {
    /// Fails with an excitation error when `cond(MᵀM)` exceeds the limit.
    Strict { max_condition: f64 },
    /// Minimum-norm least squares with relative singular-value cutoff `rcond`.
    MinNorm { rcond: f64 },
}

impl Default for Regression {
    fn default() -> Self {
        Regression::Strict { max_condition: 1e12 }
    }
}

/// Rows are scaled by `1/(‖X‖² + ‖u‖²)` so samples of different magnitude
/// weigh alike. Zero rows keep weight 0.
fn row_weights(buf: &DataBuffer) -> Vec<f64> {
    buf.samples()
        .map(|s| {
            let e = s.x.norm_squared() + s.u.norm_squared();
            if e > 0.0 {
                1.0 / e
            } else {
                0.0
            }
        })
        .collect()
}

fn weighted(m: DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut m = m;
    for (r, &wr) in w.iter().enumerate() {
        m.row_mut(r).scale_mut(wr);
    }
    m
}

fn regression_inverse(a: &DMatrix<f64>, reg: Regression, what: &str) -> Result<DMatrix<f64>> {
    match reg {
        Regression::Strict { max_condition } => {
            if a.nrows() < a.ncols() {
                return Err(PfccError::Excitation(format!(
                    "{what}: {} samples for {} unknowns; collect more data",
                    a.nrows(),
                    a.ncols()
                )));
            }
            let c = condition_number(a);
            let cond = c * c;
            if !(cond <= max_condition) {
                return Err(PfccError::Excitation(format!(
                    "{what}: condition number {cond:.3e} of the normal matrix exceeds {max_condition:.1e}; \
                     collect more or noisier data"
                )));
            }
            Ok(pinv(a))
        }
        Regression::MinNorm { rcond } => Ok(pinv_rcond(a, rcond)),
    }
}

/// The three `Ξ` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct XiBlocks {
    pub xi1: SymmetricMatrix,
    pub xi2: DMatrix<f64>,
    pub xi3: SymmetricMatrix,
}

impl XiBlocks {
    fn from_vector(v: &DVector<f64>, d: usize, m: usize) -> Result<Self> {
        let a = sym_len(d);
        let b = d * m;
        Ok(XiBlocks {
            xi1: unvecm(&v.rows(0, a).into_owned(), d)?,
            xi2: unvec(&v.rows(a, b).into_owned(), m, d)?,
            xi3: unvecm(&v.rows(a + b, sym_len(m)).into_owned(), m)?,
        })
    }

    fn to_vector(&self) -> DVector<f64> {
        let a = vecm_sym(&self.xi1);
        let b = vec(&self.xi2);
        let c = vecm_sym(&self.xi3);
        let mut out = DVector::zeros(a.len() + b.len() + c.len());
        out.rows_mut(0, a.len()).copy_from(&a);
        out.rows_mut(a.len(), b.len()).copy_from(&b);
        out.rows_mut(a.len() + b.len(), c.len()).copy_from(&c);
        out
    }
}

fn cost_matrix(q: &DMatrix<f64>, c: &DMatrix<f64>, d: usize) -> Result<SymmetricMatrix> {
    if c.ncols() != d || q.nrows() != c.nrows() || !q.is_square() {
        return Err(PfccError::Dimension("C and Q do not match the augmented layout".into()));
    }
    SymmetricMatrix::new(c.transpose() * q * c)
}

/// A frozen window with its weighted regressors factored once, so repeated
/// value-iteration steps reduce to matrix-vector products.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    d: usize,
    m: usize,
    weights: Vec<f64>,
    states: Vec<DVector<f64>>,
    psi: DMatrix<f64>,
    psi_next: DMatrix<f64>,
    psi_inv: DMatrix<f64>,
    theta_inv: Option<DMatrix<f64>>,
}

impl PreparedWindow {
    pub fn new(buf: &DataBuffer, reg: Regression) -> Result<Self> {
        Self::build(buf, reg, true)
    }

    fn build(buf: &DataBuffer, reg: Regression, with_theta: bool) -> Result<Self> {
        if buf.is_empty() {
            return Err(PfccError::Excitation("empty data buffer".into()));
        }
        let w = row_weights(buf);
        let psi = weighted(buf.psi(), &w);
        let theta_inv = if with_theta {
            Some(regression_inverse(&weighted(buf.theta(), &w), reg, "model-block regression")?)
        } else {
            None
        };
        Ok(PreparedWindow {
            d: buf.state_dim(),
            m: buf.input_dim(),
            states: buf.samples().map(|s| s.x.clone()).collect(),
            psi_next: weighted(buf.psi_next(), &w),
            psi_inv: regression_inverse(&psi, reg, "value regression")?,
            theta_inv,
            psi,
            weights: w,
        })
    }

    fn check_p(&self, p: &SymmetricMatrix) -> Result<()> {
        if p.order() != self.d {
            return Err(PfccError::Dimension(format!(
                "P of order {} for augmented state of width {}",
                p.order(),
                self.d
            )));
        }
        Ok(())
    }

    /// `Ψ vecm(P⁺) = Ψ vecm(CᵀQC) + Ψ₊ vecm(P)`.
    pub fn on_policy_backup(&self, q: &DMatrix<f64>, c: &DMatrix<f64>, p: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        self.check_p(p)?;
        let cost = cost_matrix(q, c, self.d)?;
        let rhs = &self.psi * vecm_sym(&cost) + &self.psi_next * vecm_sym(p);
        unvecm(&(&self.psi_inv * rhs), self.d)
    }

    /// `Θ [vecm(Ξ₁); vec(Ξ₂); vecm(Ξ₃)] = Ψ₊ vecm(P)`.
    pub fn xi(&self, p: &SymmetricMatrix) -> Result<XiBlocks> {
        self.check_p(p)?;
        let inv = self
            .theta_inv
            .as_ref()
            .ok_or_else(|| PfccError::Excitation("window prepared without the model-block regressor".into()))?;
        let v = inv * (&self.psi_next * vecm_sym(p));
        XiBlocks::from_vector(&v, self.d, self.m)
    }

    /// `XᵀP⁺X = XᵀCᵀQCX + θ(X, kX)·Ξ`: evaluation of gain `k` from data
    /// produced by any input.
    pub fn target_policy_backup(
        &self,
        q: &DMatrix<f64>,
        c: &DMatrix<f64>,
        xi: &XiBlocks,
        k: &DMatrix<f64>,
    ) -> Result<SymmetricMatrix> {
        if k.shape() != (self.m, self.d) {
            return Err(PfccError::Dimension("target gain does not match the buffer layout".into()));
        }
        let cost = cost_matrix(q, c, self.d)?;
        let xi_vec = xi.to_vector();
        let rhs = DVector::from_iterator(
            self.states.len(),
            self.states.iter().zip(&self.weights).map(|(x, &wr)| {
                let u = k * x;
                let stage = (x.transpose() * cost.as_matrix() * x)[(0, 0)];
                wr * (stage + theta_row(x, &u).dot(&xi_vec))
            }),
        );
        unvecm(&(&self.psi_inv * rhs), self.d)
    }
}

/// On-policy evaluation step on the window: least-squares solution of
/// `Ψ vecm(P⁺) = Ψ vecm(CᵀQC) + Ψ₊ vecm(P)`.
#[allow(non_snake_case)]
pub fn vi_update_P(buf: &DataBuffer, q: &DMatrix<f64>, c: &DMatrix<f64>, p: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    vi_update_P_with(buf, q, c, p, Regression::default())
}

#[allow(non_snake_case)]
pub fn vi_update_P_with(
    buf: &DataBuffer,
    q: &DMatrix<f64>,
    c: &DMatrix<f64>,
    p: &SymmetricMatrix,
    reg: Regression,
) -> Result<SymmetricMatrix> {
    PreparedWindow::build(buf, reg, false)?.on_policy_backup(q, c, p)
}

/// Least-squares solution of `Θ [vecm(Ξ₁); vec(Ξ₂); vecm(Ξ₃)] = Ψ₊ vecm(P)`.
#[allow(non_snake_case)]
pub fn vi_update_Xi(buf: &DataBuffer, p: &SymmetricMatrix) -> Result<XiBlocks> {
    vi_update_Xi_with(buf, p, Regression::default())
}

#[allow(non_snake_case)]
pub fn vi_update_Xi_with(buf: &DataBuffer, p: &SymmetricMatrix, reg: Regression) -> Result<XiBlocks> {
    PreparedWindow::new(buf, reg)?.xi(p)
}

/// Relative cutoff for the pseudo-inverse of `Ξ₃`. Over-actuated agents have
/// a singular `Ξ₃` whose null directions come back from regression as noise.
const XI3_RCOND: f64 = 1e-9;

/// `K = −Ξ₃⁺ Ξ₂`.
#[allow(non_snake_case)]
pub fn vi_update_K(xi2: &DMatrix<f64>, xi3: &SymmetricMatrix) -> DMatrix<f64> {
    -pinv_rcond(xi3.as_matrix(), XI3_RCOND) * xi2
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub noise_std: f64,
    pub gain_delta_threshold: f64,
    /// `None` selects `columns(Θ) + 10`.
    pub window: Option<usize>,
    pub rng_seed: u64,
    pub relearn_on_alpha_change: bool,
    pub regression: Regression,
    /// Samples are recorded only while every observer feeding the augmented
    /// state has consensus error below this norm.
    pub settle_tolerance: f64,
    /// Value-iteration steps the simulation runs per tick on a full window.
    pub iterations_per_tick: usize,
    pub max_iterations: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            noise_std: 0.1,
            gain_delta_threshold: 1e-6,
            window: None,
            rng_seed: 0,
            relearn_on_alpha_change: true,
            regression: Regression::default(),
            settle_tolerance: 1e-6,
            iterations_per_tick: 200,
            max_iterations: 20_000,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) || !(self.gain_delta_threshold > 0.0) || !(self.settle_tolerance > 0.0) {
            return Err(PfccError::Config(
                "learner noise must be nonnegative; thresholds must be positive".into(),
            ));
        }
        if self.iterations_per_tick == 0 || self.max_iterations == 0 {
            return Err(PfccError::Config("learner iteration counts must be positive".into()));
        }
        Ok(())
    }

    pub fn window_for(&self, d: usize, m: usize) -> Result<usize> {
        let need = theta_columns(d, m);
        match self.window {
            None => Ok(need + 10),
            Some(s) if s >= need => Ok(s),
            Some(s) => Err(PfccError::Config(format!(
                "window {s} is smaller than the {need} regression columns"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerStatus {
    Collecting,
    Iterating,
    Converged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedController {
    pub p_hat: SymmetricMatrix,
    pub xi_hat: Option<XiBlocks>,
    pub k_hat: DMatrix<f64>,
    /// Gain applied while data is collected (plus exploration noise).
    pub behaviour: DMatrix<f64>,
    pub status: LearnerStatus,
    pub iterations: usize,
    pub last_delta: f64,
}

impl LearnedController {
    /// Starts from `P̂⁰ = 0` and `K̂⁰ = behaviour`.
    pub fn new(behaviour: DMatrix<f64>) -> Self {
        let d = behaviour.ncols();
        LearnedController {
            p_hat: SymmetricMatrix::zeros(d),
            xi_hat: None,
            k_hat: behaviour.clone(),
            behaviour,
            status: LearnerStatus::Collecting,
            iterations: 0,
            last_delta: f64::INFINITY,
        }
    }

    /// Gain currently applied to the augmented state.
    pub fn applied_gain(&self) -> &DMatrix<f64> {
        match self.status {
            LearnerStatus::Converged => &self.k_hat,
            _ => &self.behaviour,
        }
    }
}

/// One value-iteration step on a full window:
/// `P̂ʲ⁺¹` by off-policy evaluation of `K̂ʲ`, then `Ξʲ` from `P̂ʲ⁺¹`, then
/// `K̂ʲ⁺¹ = −(Ξʲ₃)⁺Ξʲ₂`. Converges when `‖K̂ʲ⁺¹ − K̂ʲ‖_F` drops below the
/// threshold; the controller then applies `K̂` without noise.
pub fn learning_tick(
    ctrl: &LearnedController,
    buf: &DataBuffer,
    q: &DMatrix<f64>,
    c: &DMatrix<f64>,
    cfg: &LearnerConfig,
) -> Result<LearnedController> {
    if ctrl.status == LearnerStatus::Converged {
        return Ok(ctrl.clone());
    }
    if !buf.is_full() {
        return Err(PfccError::Excitation(format!(
            "window holds {} of {} samples",
            buf.len(),
            buf.window()
        )));
    }
    learning_step(ctrl, &PreparedWindow::new(buf, cfg.regression)?, q, c, cfg)
}

/// [`learning_tick`] on an already factored window.
pub fn learning_step(
    ctrl: &LearnedController,
    window: &PreparedWindow,
    q: &DMatrix<f64>,
    c: &DMatrix<f64>,
    cfg: &LearnerConfig,
) -> Result<LearnedController> {
    if ctrl.status == LearnerStatus::Converged {
        return Ok(ctrl.clone());
    }
    if ctrl.iterations >= cfg.max_iterations {
        return Err(PfccError::NoConvergence {
            iterations: ctrl.iterations,
            delta: ctrl.last_delta,
        });
    }
    let xi_now = match &ctrl.xi_hat {
        Some(xi) => xi.clone(),
        None => window.xi(&ctrl.p_hat)?,
    };
    let p_next = window.target_policy_backup(q, c, &xi_now, &ctrl.k_hat)?;
    let xi_next = window.xi(&p_next)?;
    let k_next = vi_update_K(&xi_next.xi2, &xi_next.xi3);
    let delta = (&k_next - &ctrl.k_hat).norm();
    let status = if delta < cfg.gain_delta_threshold {
        LearnerStatus::Converged
    } else {
        LearnerStatus::Iterating
    };
    Ok(LearnedController {
        p_hat: p_next,
        xi_hat: Some(xi_next),
        k_hat: k_next,
        behaviour: ctrl.behaviour.clone(),
        status,
        iterations: ctrl.iterations + 1,
        last_delta: delta,
    })
}

/// Seeded Gaussian stream, one per agent.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseSource { rng }
    }

    pub fn standard_normal(&mut self, len: usize) -> DVector<f64> {
        DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(&mut self.rng)))
    }

    pub fn normal(&mut self, std: f64, len: usize) -> DVector<f64> {
        match Normal::new(0.0, std) {
            Ok(dist) => DVector::from_iterator(len, (0..len).map(|_| dist.sample(&mut self.rng))),
            Err(_) => DVector::zeros(len),
        }
    }
}

/// Zero-mean Gaussian exploration input; zero once the learner has converged.
pub fn exploration_noise(
    source: &mut NoiseSource,
    cfg: &LearnerConfig,
    width: usize,
    status: LearnerStatus,
) -> DVector<f64> {
    if status == LearnerStatus::Converged || cfg.noise_std == 0.0 {
        return DVector::zeros(width);
    }
    source.normal(cfg.noise_std, width)
}

/// Runs the model as a data source: short episodes from random augmented
/// states under `behaviour` plus exploration noise fill a window, then value
/// iteration runs on it until convergence. Only the recorded samples reach
/// the learner.
pub fn learn_from_episodes(
    sys: &AugmentedSystem,
    behaviour: &DMatrix<f64>,
    cfg: &LearnerConfig,
    episode_len: usize,
    noise: &mut NoiseSource,
) -> Result<(LearnedController, DataBuffer)> {
    let (d, m) = (sys.dim(), sys.inputs());
    let mut buf = DataBuffer::new(d, m, cfg.window_for(d, m)?);
    while !buf.is_full() {
        let mut x = noise.standard_normal(d);
        for _ in 0..episode_len.max(1) {
            let u = behaviour * &x + exploration_noise(noise, cfg, m, LearnerStatus::Collecting);
            let next = &sys.a_bar * &x + &sys.b_bar * &u;
            buf.record_sample(&x, &u, &next)?;
            x = next;
            if buf.is_full() {
                break;
            }
        }
    }
    let window = PreparedWindow::new(&buf, cfg.regression)?;
    let mut ctrl = LearnedController::new(behaviour.clone());
    while ctrl.status != LearnerStatus::Converged {
        ctrl = learning_step(&ctrl, &window, &sys.q, &sys.c, cfg)?;
    }
    Ok((ctrl, buf))
}
