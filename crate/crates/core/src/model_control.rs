//! Model-based synthesis: augmented systems, Riccati value iteration with
//! pseudo-inverse gains, regulation solutions and the resulting controllers.
//! This is the oracle the data-driven learner is checked against.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{PfccError, Result};
use crate::matops::{block_diag, pinv, spectral_radius, SymmetricMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AgentDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(PfccError::Dimension(format!(
                "A is {}x{} and B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(AgentDynamics { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Eigenvalues with `|λ| ≥ 1` that fail the PBH rank test.
    pub fn unstabilizable_modes(&self) -> Vec<Complex<f64>> {
        let n = self.n();
        let ac: DMatrix<Complex<f64>> = self.a.map(|x| Complex::new(x, 0.0));
        let bc: DMatrix<Complex<f64>> = self.b.map(|x| Complex::new(x, 0.0));
        let mut bad = Vec::new();
        for lam in self.a.complex_eigenvalues().iter() {
            if lam.norm() < 1.0 {
                continue;
            }
            let mut pbh = DMatrix::<Complex<f64>>::zeros(n, n + self.m());
            pbh.view_mut((0, 0), (n, n))
                .copy_from(&(&ac - DMatrix::<Complex<f64>>::identity(n, n) * *lam));
            pbh.view_mut((0, n), (n, self.m())).copy_from(&bc);
            let sv = pbh.singular_values();
            let tol = sv.max().max(1.0) * 1e-9;
            if sv.iter().filter(|&&s| s > tol).count() < n {
                bad.push(*lam);
            }
        }
        bad
    }

    pub fn is_stabilizable(&self) -> bool {
        self.unstabilizable_modes().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormationDynamics {
    pub s: DMatrix<f64>,
    pub h0: DVector<f64>,
}

impl FormationDynamics {
    pub fn new(s: DMatrix<f64>, h0: DVector<f64>) -> Result<Self> {
        if !s.is_square() || s.nrows() != h0.len() {
            return Err(PfccError::Dimension("formation matrix and h0 disagree".into()));
        }
        let rho = spectral_radius(&s);
        if rho > 1.0 + 1e-9 {
            return Err(PfccError::Config(format!(
                "formation matrix has spectral radius {rho} > 1"
            )));
        }
        Ok(FormationDynamics { s, h0 })
    }
}

/// `X⁺ = Ā X + B̄ u`, error output `C X`, stage cost `XᵀCᵀQCX`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Plant order `n`; the state is `n · (2 + formation blocks)` long.
    pub n: usize,
}

impl AugmentedSystem {
    pub fn dim(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b_bar.ncols()
    }

    pub fn formation_blocks(&self) -> usize {
        self.dim() / self.n - 2
    }

    pub fn cost_matrix(&self) -> SymmetricMatrix {
        SymmetricMatrix::symmetrize(&(self.c.transpose() * &self.q * &self.c))
    }
}

fn check_weight(q: &DMatrix<f64>, n: usize) -> Result<()> {
    if q.shape() != (n, n) {
        return Err(PfccError::Dimension(format!("Q must be {n}x{n}")));
    }
    if q.clone().cholesky().is_none() {
        return Err(PfccError::NotPositiveDefinite);
    }
    Ok(())
}

fn assemble(
    dyn_: &AgentDynamics,
    forms: &[&DMatrix<f64>],
    a0: &DMatrix<f64>,
    weights: &[f64],
    q: &DMatrix<f64>,
) -> Result<AugmentedSystem> {
    let n = dyn_.n();
    if a0.shape() != (n, n) || forms.iter().any(|s| s.shape() != (n, n)) {
        return Err(PfccError::Dimension(format!("augmented blocks must all be {n}x{n}")));
    }
    check_weight(q, n)?;
    let mut blocks: Vec<&DMatrix<f64>> = vec![&dyn_.a];
    blocks.extend_from_slice(forms);
    blocks.push(a0);
    let a_bar = block_diag(&blocks);
    let d = a_bar.nrows();
    let mut b_bar = DMatrix::zeros(d, dyn_.m());
    b_bar.view_mut((0, 0), (n, dyn_.m())).copy_from(&dyn_.b);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut c = DMatrix::zeros(n, d);
    c.view_mut((0, 0), (n, n)).copy_from(&eye);
    for (k, w) in weights.iter().enumerate() {
        c.view_mut((0, n * (k + 1)), (n, n)).copy_from(&(&eye * -*w));
    }
    c.view_mut((0, d - n), (n, n)).copy_from(&(-&eye));
    Ok(AugmentedSystem {
        a_bar,
        b_bar,
        c,
        q: q.clone(),
        n,
    })
}

/// `Ā = diag(A, S, A₀)`, `C = [I, −I, −I]`.
pub fn build_leader_augmented(
    dyn_: &AgentDynamics,
    form: &FormationDynamics,
    a0: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<AugmentedSystem> {
    assemble(dyn_, &[&form.s], a0, &[1.0], q)
}

/// `Ā = diag(A, S_φ(1), …, S_φ(I), A₀)`, `C = [I, −α₁I, …, −α_I I, −I]`.
pub fn build_follower_augmented(
    dyn_: &AgentDynamics,
    forms: &[&FormationDynamics],
    a0: &DMatrix<f64>,
    alpha: &[f64],
    q: &DMatrix<f64>,
) -> Result<AugmentedSystem> {
    if forms.is_empty() {
        return Err(PfccError::EmptyLeaderSet);
    }
    if forms.len() != alpha.len() {
        return Err(PfccError::Dimension(format!(
            "{} formation blocks but {} coefficients",
            forms.len(),
            alpha.len()
        )));
    }
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(PfccError::CoefficientSum(total));
    }
    let s: Vec<&DMatrix<f64>> = forms.iter().map(|f| &f.s).collect();
    assemble(dyn_, &s, a0, alpha, q)
}

/// `K = −(B̄ᵀPB̄)⁺ B̄ᵀPĀ`.
pub fn greedy_gain(sys: &AugmentedSystem, p: &SymmetricMatrix) -> DMatrix<f64> {
    let p = p.as_matrix();
    let btp = sys.b_bar.transpose() * p;
    -pinv(&(&btp * &sys.b_bar)) * (btp * &sys.a_bar)
}

/// `CᵀQC + (Ā+B̄K)ᵀ P (Ā+B̄K)`.
pub fn bellman_backup(sys: &AugmentedSystem, p: &SymmetricMatrix, k: &DMatrix<f64>) -> SymmetricMatrix {
    let acl = &sys.a_bar + &sys.b_bar * k;
    let next = sys.cost_matrix().into_inner() + acl.transpose() * p.as_matrix() * acl;
    SymmetricMatrix::symmetrize(&next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial value `P⁰ = p0_scale · I`.
    pub p0_scale: f64,
}

impl Default for ViOptions {
    fn default() -> Self {
        ViOptions {
            tol: 1e-10,
            max_iter: 10_000,
            p0_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: SymmetricMatrix,
    pub k: DMatrix<f64>,
    pub iterations: usize,
    /// `‖P − backup(P, K(P))‖_F` at the returned point.
    pub residual: f64,
}

/// Value iteration `Pʲ⁺¹ = CᵀQC + (Ā+B̄Kʲ)ᵀPʲ(Ā+B̄Kʲ)` with `Kʲ` greedy for
/// `Pʲ`, stopped when `‖Pʲ⁺¹ − Pʲ‖_F < tol`.
pub fn riccati_value_iteration(sys: &AugmentedSystem, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    riccati_value_iteration_with(
        sys,
        &ViOptions {
            tol,
            max_iter,
            ..ViOptions::default()
        },
    )
}

pub fn riccati_value_iteration_with(sys: &AugmentedSystem, opts: &ViOptions) -> Result<RiccatiSolution> {
    let d = sys.dim();
    let mut p = SymmetricMatrix::symmetrize(&(DMatrix::identity(d, d) * opts.p0_scale));
    let mut delta = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let k = greedy_gain(sys, &p);
        let next = bellman_backup(sys, &p, &k);
        delta = (next.as_matrix() - p.as_matrix()).norm();
        if !delta.is_finite() || next.as_matrix().amax() > 1e14 {
            return Err(PfccError::NoConvergence {
                iterations: iteration,
                delta,
            });
        }
        p = next;
        if delta < opts.tol {
            let k = greedy_gain(sys, &p);
            let residual = (bellman_backup(sys, &p, &k).as_matrix() - p.as_matrix()).norm();
            return Ok(RiccatiSolution {
                p,
                k,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(PfccError::NoConvergence {
        iterations: opts.max_iter,
        delta,
    })
}

/// Gain blocks in augmented-state order. For followers, `kh[k]` acts on the
/// estimate of leader `leaders[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub k1: DMatrix<f64>,
    pub kh: Vec<DMatrix<f64>>,
    pub ko: DMatrix<f64>,
    pub leaders: Vec<usize>,
}

impl GainSet {
    pub fn full(&self) -> DMatrix<f64> {
        let mut blocks: Vec<&DMatrix<f64>> = vec![&self.k1];
        blocks.extend(self.kh.iter());
        blocks.push(&self.ko);
        let rows = self.k1.nrows();
        let cols = blocks.iter().map(|b| b.ncols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut c = 0;
        for b in blocks {
            out.view_mut((0, c), b.shape()).copy_from(b);
            c += b.ncols();
        }
        out
    }
}

/// Column layout of an agent's augmented state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GainLayout {
    /// Leader `q`: `[x, h_q, x̂ᵒ]`.
    Leader(usize),
    /// Follower: `[x, ĥ_φ(1), …, ĥ_φ(I), x̂ᵒ]`.
    Follower(Vec<usize>),
}

impl GainLayout {
    pub fn leaders(&self) -> Vec<usize> {
        match self {
            GainLayout::Leader(q) => vec![*q],
            GainLayout::Follower(v) => v.clone(),
        }
    }

    pub fn blocks(&self) -> usize {
        2 + self.leaders().len()
    }
}

pub fn split_gains(k: &DMatrix<f64>, n: usize, layout: &GainLayout) -> Result<GainSet> {
    let blocks = layout.blocks();
    if k.ncols() != blocks * n {
        return Err(PfccError::Dimension(format!(
            "gain has {} columns, layout needs {}",
            k.ncols(),
            blocks * n
        )));
    }
    let col = |b: usize| k.columns(b * n, n).into_owned();
    Ok(GainSet {
        k1: col(0),
        kh: (1..blocks - 1).map(col).collect(),
        ko: col(blocks - 1),
        leaders: layout.leaders(),
    })
}

/// `Ū = B⁺(S − A)`, the minimum-norm solution of `S = A + BU`.
pub fn min_norm_regulation_solution(a: &DMatrix<f64>, b: &DMatrix<f64>, s_target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != s_target.shape() || b.nrows() != a.nrows() {
        return Err(PfccError::Dimension("regulation equation blocks disagree".into()));
    }
    let rhs = s_target - a;
    let u = pinv(b) * &rhs;
    let residual = (b * &u - &rhs).amax();
    if residual > 1e-8 * rhs.amax().max(1.0) {
        return Err(PfccError::Unsolvable(residual));
    }
    Ok(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    /// `‖K₁ + K_h/α − Ūʰ‖_F` per formation block.
    pub formation_residuals: Vec<f64>,
    /// `‖K₁ + K_o − Ūᵒ‖_F`.
    pub tracking_residual: f64,
    /// `ρ(A + BK₁)`.
    pub closed_loop_radius: f64,
}

impl IdentityReport {
    pub fn max_residual(&self) -> f64 {
        self.formation_residuals
            .iter()
            .copied()
            .fold(self.tracking_residual, f64::max)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.max_residual() < tol && self.closed_loop_radius < 1.0
    }
}

/// Residuals of `K₁ + K_h/α = B⁺(S − A)` per block and `K₁ + K_o = B⁺(A₀ − A)`.
/// For a leader pass `alpha = [1.0]`.
pub fn verify_gain_identities(
    gains: &GainSet,
    dyn_: &AgentDynamics,
    forms: &[&DMatrix<f64>],
    a0: &DMatrix<f64>,
    alpha: &[f64],
) -> Result<IdentityReport> {
    if forms.len() != gains.kh.len() || alpha.len() != gains.kh.len() {
        return Err(PfccError::Dimension("identity check needs one S and one alpha per block".into()));
    }
    let mut formation_residuals = Vec::with_capacity(forms.len());
    for ((kh, s), &al) in gains.kh.iter().zip(forms).zip(alpha) {
        let u = min_norm_regulation_solution(&dyn_.a, &dyn_.b, s)?;
        formation_residuals.push((&gains.k1 + kh / al - u).norm());
    }
    let uo = min_norm_regulation_solution(&dyn_.a, &dyn_.b, a0)?;
    Ok(IdentityReport {
        formation_residuals,
        tracking_residual: (&gains.k1 + &gains.ko - uo).norm(),
        closed_loop_radius: spectral_radius(&(&dyn_.a + &dyn_.b * &gains.k1)),
    })
}

/// `u = K₁x + K_h h + K_o x̂ᵒ`.
pub fn leader_control(gains: &GainSet, x: &DVector<f64>, h: &DVector<f64>, xo_hat: &DVector<f64>) -> Result<DVector<f64>> {
    if gains.kh.len() != 1 {
        return Err(PfccError::Dimension("leader gains need exactly one formation block".into()));
    }
    check_len(&gains.k1, x)?;
    check_len(&gains.kh[0], h)?;
    check_len(&gains.ko, xo_hat)?;
    Ok(&gains.k1 * x + &gains.kh[0] * h + &gains.ko * xo_hat)
}

/// `u = K₁x + Σ_q K_h^q ĥ_q + K_o x̂ᵒ`, with the raw blocks of the augmented
/// gain (each `K_h^q` already carries its leader's coefficient).
pub fn follower_control(
    gains: &GainSet,
    x: &DVector<f64>,
    xo_hat: &DVector<f64>,
    h_hat: &BTreeMap<usize, DVector<f64>>,
) -> Result<DVector<f64>> {
    check_len(&gains.k1, x)?;
    check_len(&gains.ko, xo_hat)?;
    let mut u = &gains.k1 * x + &gains.ko * xo_hat;
    for (q, kh) in gains.leaders.iter().zip(&gains.kh) {
        let h = h_hat.get(q).ok_or_else(|| {
            PfccError::Config(format!("no formation estimate for influential leader L{}", q + 1))
        })?;
        check_len(kh, h)?;
        u += kh * h;
    }
    Ok(u)
}

fn check_len(k: &DMatrix<f64>, v: &DVector<f64>) -> Result<()> {
    if k.ncols() != v.len() {
        return Err(PfccError::Dimension(format!(
            "gain block with {} columns applied to a vector of length {}",
            k.ncols(),
            v.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar_leader(a: f64, b: f64, s: f64, a0: f64, q: f64) -> AugmentedSystem {
        build_leader_augmented(
            &AgentDynamics::new(dmatrix![a], dmatrix![b]).unwrap(),
            &FormationDynamics::new(dmatrix![s], dvector![1.0]).unwrap(),
            &dmatrix![a0],
            &dmatrix![q],
        )
        .unwrap()
    }

    #[test]
    fn scalar_leader_layout() {
        let sys = scalar_leader(0.5, 2.0, 0.9, 0.8, 1.0);
        assert_eq!(sys.a_bar, DMatrix::from_diagonal(&dvector![0.5, 0.9, 0.8]));
        assert_eq!(sys.b_bar, dmatrix![2.0; 0.0; 0.0]);
        assert_eq!(sys.c, dmatrix![1.0, -1.0, -1.0]);
        let zero_b = build_leader_augmented(
            &AgentDynamics::new(dmatrix![0.5], dmatrix![0.0]).unwrap(),
            &FormationDynamics::new(dmatrix![1.0], dvector![1.0]).unwrap(),
            &dmatrix![1.0],
            &dmatrix![1.0],
        )
        .unwrap();
        assert_eq!(zero_b.b_bar, DMatrix::zeros(3, 1));
    }

    #[test]
    fn scalar_riccati_satisfies_identities() {
        let sys = scalar_leader(0.5, 1.0, 1.0, 1.0, 1.0);
        let sol = riccati_value_iteration(&sys, 1e-12, 10_000).unwrap();
        assert!(sol.residual < 1e-9);
        let gains = split_gains(&sol.k, 1, &GainLayout::Leader(0)).unwrap();
        let dyn_ = AgentDynamics::new(dmatrix![0.5], dmatrix![1.0]).unwrap();
        let report = verify_gain_identities(&gains, &dyn_, &[&dmatrix![1.0]], &dmatrix![1.0], &[1.0]).unwrap();
        assert!(report.holds(1e-6), "{report:?}");
    }

    #[test]
    fn zero_input_reduces_to_lyapunov() {
        let sys = build_leader_augmented(
            &AgentDynamics::new(dmatrix![0.5], dmatrix![0.0]).unwrap(),
            &FormationDynamics::new(dmatrix![0.6], dvector![1.0]).unwrap(),
            &dmatrix![0.7],
            &dmatrix![1.0],
        )
        .unwrap();
        let sol = riccati_value_iteration(&sys, 1e-13, 10_000).unwrap();
        assert_eq!(sol.k, DMatrix::zeros(1, 3));
        let p = sol.p.as_matrix();
        let lyap = sys.cost_matrix().into_inner() + sys.a_bar.transpose() * p * &sys.a_bar;
        assert!((lyap - p).amax() < 1e-10);
    }

    #[test]
    fn follower_builder_checks() {
        let dyn_ = AgentDynamics::new(dmatrix![0.0, 1.0; 1.0, 3.0], dmatrix![0.0; 1.0]).unwrap();
        let f = FormationDynamics::new(dmatrix![0.0, 1.0; 1.0, 0.0], dvector![2.0, 0.0]).unwrap();
        let a0 = dmatrix![0.0, 1.0; 1.0, 0.0];
        let q = DMatrix::identity(2, 2);
        let one = build_follower_augmented(&dyn_, &[&f], &a0, &[1.0], &q).unwrap();
        assert_eq!(one.dim(), 6);
        let two = build_follower_augmented(&dyn_, &[&f, &f], &a0, &[0.5, 0.5], &q).unwrap();
        assert_eq!(two.dim(), 8);
        assert_eq!(two.c.columns(2, 2), DMatrix::identity(2, 2) * -0.5);
        assert!(matches!(
            build_follower_augmented(&dyn_, &[], &a0, &[], &q),
            Err(PfccError::EmptyLeaderSet)
        ));
        assert!(matches!(
            build_follower_augmented(&dyn_, &[&f, &f], &a0, &[0.5, 0.6], &q),
            Err(PfccError::CoefficientSum(_))
        ));
    }

    #[test]
    fn split_layouts() {
        let k = dmatrix![1.0, 2.0, 3.0];
        let g = split_gains(&k, 1, &GainLayout::Leader(0)).unwrap();
        assert_eq!((g.k1[(0, 0)], g.kh[0][(0, 0)], g.ko[(0, 0)]), (1.0, 2.0, 3.0));
        let g = split_gains(&DMatrix::zeros(1, 8), 2, &GainLayout::Follower(vec![0, 2])).unwrap();
        assert_eq!(g.kh.len(), 2);
        assert_eq!(g.full(), DMatrix::zeros(1, 8));
        assert!(split_gains(&k, 2, &GainLayout::Leader(0)).is_err());
    }

    #[test]
    fn regulation_solutions() {
        let b = dmatrix![2.0, 1.0; 0.0, 1.0];
        let a = dmatrix![0.0, 1.0; 1.0, 0.0];
        let s = dmatrix![1.0, 0.0; 0.0, 1.0];
        let u = min_norm_regulation_solution(&a, &b, &s).unwrap();
        assert!((u - b.clone().try_inverse().unwrap() * (&s - &a)).amax() < 1e-12);
        // F1 of the bundled scenario.
        let u = min_norm_regulation_solution(
            &dmatrix![0.0, 1.0; 1.0, 3.0],
            &dmatrix![0.0; 1.0],
            &dmatrix![0.0, 1.0; 1.0, 0.0],
        )
        .unwrap();
        assert!((u - dmatrix![0.0, -3.0]).amax() < 1e-12);
        assert!(matches!(
            min_norm_regulation_solution(&dmatrix![0.0, 1.0; 1.0, 3.0], &dmatrix![0.0; 1.0], &DMatrix::identity(2, 2)),
            Err(PfccError::Unsolvable(_))
        ));
    }

    #[test]
    fn perturbed_gain_is_reported() {
        let sys = scalar_leader(0.5, 1.0, 1.0, 1.0, 1.0);
        let sol = riccati_value_iteration(&sys, 1e-12, 10_000).unwrap();
        let mut gains = split_gains(&sol.k, 1, &GainLayout::Leader(0)).unwrap();
        gains.kh[0][(0, 0)] += 0.1;
        let dyn_ = AgentDynamics::new(dmatrix![0.5], dmatrix![1.0]).unwrap();
        let r = verify_gain_identities(&gains, &dyn_, &[&dmatrix![1.0]], &dmatrix![1.0], &[1.0]).unwrap();
        assert!((r.formation_residuals[0] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn controllers() {
        let g = GainSet {
            k1: dmatrix![1.0, 0.0],
            kh: vec![dmatrix![0.0, 2.0], dmatrix![1.0, 1.0]],
            ko: dmatrix![3.0, 0.0],
            leaders: vec![0, 3],
        };
        let z = DVector::zeros(2);
        let est = BTreeMap::from([(0, z.clone()), (3, z.clone())]);
        assert_eq!(follower_control(&g, &z, &z, &est).unwrap(), DVector::zeros(1));
        let est = BTreeMap::from([(0, dvector![1.0, 1.0]), (3, dvector![1.0, -1.0])]);
        let u = follower_control(&g, &dvector![1.0, 0.0], &dvector![1.0, 0.0], &est).unwrap();
        assert_eq!(u, dvector![1.0 + 2.0 + 0.0 + 3.0]);
        assert!(follower_control(&g, &z, &z, &BTreeMap::from([(0, z.clone())])).is_err());
        let lg = GainSet {
            k1: dmatrix![1.0],
            kh: vec![dmatrix![2.0]],
            ko: dmatrix![3.0],
            leaders: vec![0],
        };
        assert_eq!(leader_control(&lg, &dvector![1.0], &dvector![1.0], &dvector![1.0]).unwrap(), dvector![6.0]);
    }

    #[test]
    fn pbh_flags_uncontrollable_unstable_mode() {
        let d = AgentDynamics::new(dmatrix![2.0, 0.0; 0.0, 0.5], dmatrix![0.0; 1.0]).unwrap();
        assert!(!d.is_stabilizable());
        let d = AgentDynamics::new(dmatrix![0.5, 0.0; 0.0, 2.0], dmatrix![0.0; 1.0]).unwrap();
        assert!(d.is_stabilizable());
    }
}
