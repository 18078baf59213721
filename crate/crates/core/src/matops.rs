//! Vectorizations, Kronecker products, pseudo-inverse and least squares.
//!
//! `vecv` and `vecm` share the upper-triangular row-major order
//! `(1,1), (1,2), .., (1,n), (2,2), .., (n,n)` with off-diagonal entries
//! scaled by √2, so that `vecv(x)·vecm(P) = xᵀPx`. `vec` stacks columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{PfccError, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Number of free entries of an `n × n` symmetric matrix.
pub fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Dense matrix known to be symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Accepts `m` when it equals its transpose to within `1e-12` (scaled by the
    /// largest entry once that exceeds one). The stored matrix is symmetrized.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(PfccError::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let asym = asymmetry(&m);
        if asym > SYMMETRY_TOL * m.amax().max(1.0) {
            return Err(PfccError::NotSymmetric(asym));
        }
        Ok(Self::symmetrize(&m))
    }

    /// `(m + mᵀ)/2`, without a tolerance check.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        SymmetricMatrix((m + m.transpose()) * 0.5)
    }

    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(n, n))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        if self.order() == 0 {
            return 0.0;
        }
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `[d₁², √2d₁d₂, …, √2d₁dₙ, d₂², …, dₙ²]`.
pub fn vecv(d: &DVector<f64>) -> DVector<f64> {
    let n = d.len();
    let mut out = Vec::with_capacity(sym_len(n));
    for i in 0..n {
        out.push(d[i] * d[i]);
        for j in (i + 1)..n {
            out.push(std::f64::consts::SQRT_2 * d[i] * d[j]);
        }
    }
    DVector::from_vec(out)
}

/// `[S₁₁, √2S₁₂, …, √2S₁ₙ, S₂₂, …, Sₙₙ]`; fails on asymmetric input.
pub fn vecm(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let s = SymmetricMatrix::new(s.clone())?;
    Ok(vecm_sym(&s))
}

pub fn vecm_sym(s: &SymmetricMatrix) -> DVector<f64> {
    let m = s.as_matrix();
    let n = m.nrows();
    let mut out = Vec::with_capacity(sym_len(n));
    for i in 0..n {
        out.push(m[(i, i)]);
        for j in (i + 1)..n {
            out.push(std::f64::consts::SQRT_2 * m[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`vecm`].
pub fn unvecm(v: &DVector<f64>, n: usize) -> Result<SymmetricMatrix> {
    if v.len() != sym_len(n) {
        return Err(PfccError::Dimension(format!(
            "unvecm expects {} entries for order {n}, got {}",
            sym_len(n),
            v.len()
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        m[(i, i)] = v[k];
        k += 1;
        for j in (i + 1)..n {
            let x = v[k] / std::f64::consts::SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    Ok(SymmetricMatrix(m))
}

/// Column stacking.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(PfccError::Dimension(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `a ⊗ b` for column vectors.
pub fn kron_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a.iter() {
        for &y in b.iter() {
            out.push(x * y);
        }
    }
    DVector::from_vec(out)
}

fn default_cutoff(b: &DMatrix<f64>, sigma_max: f64) -> f64 {
    sigma_max * b.nrows().max(b.ncols()) as f64 * f64::EPSILON
}

/// Thin singular value decomposition `B = U diag(σ) Vᵀ`, `σ` unsorted.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.iter().copied().fold(0.0, f64::max)
    }

    /// `Σ_{σₖ > cutoff} vₖ uₖᵀ / σₖ`.
    pub fn pinv(&self, cutoff: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.v.nrows(), self.u.nrows());
        for (k, &s) in self.sigma.iter().enumerate() {
            if s > cutoff && s > 0.0 {
                out += self.v.column(k) * (self.u.column(k).transpose() / s);
            }
        }
        out
    }
}

const JACOBI_SWEEPS: usize = 80;

/// One-sided Jacobi SVD. Column pairs are rotated until mutually orthogonal,
/// which keeps small singular values accurate to working precision.
pub fn svd(b: &DMatrix<f64>) -> ThinSvd {
    if b.nrows() < b.ncols() {
        let t = svd(&b.transpose());
        return ThinSvd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
    }
    let (rows, cols) = b.shape();
    let mut a = b.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);
    let tol = rows as f64 * f64::EPSILON;
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut u = DMatrix::zeros(rows, cols);
    let mut sigma = DVector::zeros(cols);
    for k in 0..cols {
        let n = a.column(k).norm();
        sigma[k] = n;
        if n > 0.0 {
            u.set_column(k, &(a.column(k) / n));
        }
    }
    ThinSvd { u, sigma, v }
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, p)], m[(r, q)]);
        m[(r, p)] = c * x - s * y;
        m[(r, q)] = s * x + c * y;
    }
}

/// Moore–Penrose pseudo-inverse via SVD, discarding singular values below
/// `σ_max · max(rows, cols) · ε`.
pub fn pinv(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = b.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let d = svd(b);
    let cutoff = default_cutoff(b, d.sigma_max());
    d.pinv(cutoff)
}

/// Pseudo-inverse discarding singular values below `rcond · σ_max` (and
/// never keeping more than [`pinv`] would).
pub fn pinv_rcond(b: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (r, c) = b.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let d = svd(b);
    let smax = d.sigma_max();
    d.pinv((rcond * smax).max(default_cutoff(b, smax)))
}

/// Numerical rank with the same cutoff as [`pinv`].
pub fn rank(b: &DMatrix<f64>) -> usize {
    if b.is_empty() {
        return 0;
    }
    let s = svd(b).sigma;
    let cutoff = default_cutoff(b, s.max());
    s.iter().filter(|&&x| x > cutoff && x > 0.0).count()
}

/// 2-norm condition number (infinite when rank-deficient).
pub fn condition_number(b: &DMatrix<f64>) -> f64 {
    if b.is_empty() {
        return f64::INFINITY;
    }
    let s = svd(b).sigma;
    let min = s.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        s.max() / min
    }
}

pub fn sigma_max(b: &DMatrix<f64>) -> f64 {
    if b.is_empty() {
        0.0
    } else {
        svd(b).sigma_max()
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solution of a least-squares problem plus the rank used.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub rank: usize,
    pub condition: f64,
}

/// Minimum-norm least squares: singular values below `rcond · σ_max` are
/// treated as zero.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Result<LeastSquares> {
    if a.nrows() != b.len() {
        return Err(PfccError::Dimension(format!(
            "least squares with {} rows but {} targets",
            a.nrows(),
            b.len()
        )));
    }
    if a.ncols() == 0 {
        return Ok(LeastSquares {
            solution: DVector::zeros(0),
            rank: 0,
            condition: f64::INFINITY,
        });
    }
    let d = svd(a);
    let s = &d.sigma;
    let smax = s.max();
    let smin = s.min();
    let cutoff = (rcond * smax).max(default_cutoff(a, smax));
    let rank = s.iter().filter(|&&x| x > cutoff && x > 0.0).count();
    let condition = if smin == 0.0 { f64::INFINITY } else { smax / smin };
    let mut x = DVector::zeros(a.ncols());
    for (k, &sk) in s.iter().enumerate() {
        if sk > cutoff && sk > 0.0 {
            let coef = d.u.column(k).dot(b) / sk;
            x += d.v.column(k) * coef;
        }
    }
    Ok(LeastSquares {
        solution: x,
        rank,
        condition,
    })
}

/// Frobenius norm of `a − b`.
pub fn frobenius_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(PfccError::NotPositiveDefinite)
}

/// Block-diagonal stacking of square or rectangular blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    const R2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn vecv_small_cases() {
        assert_eq!(vecv(&dvector![1.0, 2.0]), dvector![1.0, 2.0 * R2, 4.0]);
        assert_eq!(vecv(&DVector::zeros(3)), DVector::zeros(6));
    }

    #[test]
    fn vecm_small_cases() {
        assert_eq!(vecm(&DMatrix::identity(2, 2)).unwrap(), dvector![1.0, 0.0, 1.0]);
        assert_eq!(
            vecm(&dmatrix![1.0, 3.0; 3.0, 2.0]).unwrap(),
            dvector![1.0, 3.0 * R2, 2.0]
        );
        assert!(matches!(
            vecm(&dmatrix![1.0, 3.0; 2.0, 2.0]),
            Err(PfccError::NotSymmetric(_))
        ));
    }

    #[test]
    fn unvecm_small_cases() {
        assert_eq!(unvecm(&DVector::zeros(3), 2).unwrap(), SymmetricMatrix::zeros(2));
        assert_eq!(
            unvecm(&dvector![1.0, 0.0, 1.0], 2).unwrap(),
            SymmetricMatrix::identity(2)
        );
        assert!(unvecm(&dvector![1.0, 0.0], 2).is_err());
    }

    #[test]
    fn vec_stacks_columns() {
        assert_eq!(vec(&dmatrix![1.0, 2.0; 3.0, 4.0]), dvector![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&DMatrix::zeros(2, 3)), DVector::zeros(6));
        let m = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
        assert_eq!(unvec(&vec(&m), 2, 3).unwrap(), m);
    }

    #[test]
    fn vec_kronecker_identity() {
        let a = dmatrix![1.0, -2.0, 0.5; 0.0, 3.0, 1.0; 2.0, 1.0, -1.0];
        let x = dmatrix![0.3, 1.0, -1.0; 2.0, 0.0, 0.7; -0.4, 1.5, 2.0];
        let b = dmatrix![1.0, 0.0, 2.0; -1.0, 1.0, 0.0; 0.5, 0.5, 3.0];
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn kron_vec_matches_matrix_kron() {
        let a = dvector![1.0, 2.0];
        let b = dvector![3.0, -1.0, 0.5];
        let m = kron(&DMatrix::from_column_slice(2, 1, a.as_slice()), &DMatrix::from_column_slice(3, 1, b.as_slice()));
        assert_eq!(kron_vec(&a, &b).as_slice(), m.as_slice());
    }

    #[test]
    fn pinv_small_cases() {
        let b = dmatrix![2.0, 1.0; 1.0, 3.0];
        let inv = b.clone().try_inverse().unwrap();
        assert!((pinv(&b) - inv).amax() < 1e-14);
        assert_eq!(pinv(&dmatrix![1.0; 0.0]), dmatrix![1.0, 0.0]);
        assert_eq!(pinv(&DMatrix::zeros(2, 3)), DMatrix::zeros(3, 2));
    }

    #[test]
    fn spectral_radius_small_cases() {
        assert!((spectral_radius(&DMatrix::identity(3, 3)) - 1.0).abs() < 1e-14);
        assert!((spectral_radius(&dmatrix![0.0, 1.0; 1.0, 0.0]) - 1.0).abs() < 1e-14);
        // λ² − 4λ + 2 = 0  →  λ = 2 ± √2
        let expected = 2.0 + 2.0_f64.sqrt();
        assert!((spectral_radius(&dmatrix![0.0, 1.0; -2.0, 4.0]) - expected).abs() < 1e-12);
        // complex pair with modulus √2
        assert!((spectral_radius(&dmatrix![1.0, -1.0; 1.0, 1.0]) - R2).abs() < 1e-12);
    }

    #[test]
    fn lstsq_min_norm_picks_smallest_solution() {
        let a = dmatrix![1.0, 1.0];
        let b = dvector![2.0];
        let ls = lstsq_min_norm(&a, &b, 1e-12).unwrap();
        assert_eq!(ls.rank, 1);
        assert!((ls.solution - dvector![1.0, 1.0]).amax() < 1e-14);
    }

    #[test]
    fn block_diag_layout() {
        let a = dmatrix![1.0];
        let b = dmatrix![2.0, 3.0; 4.0, 5.0];
        let d = block_diag(&[&a, &b]);
        assert_eq!(d, dmatrix![1.0, 0.0, 0.0; 0.0, 2.0, 3.0; 0.0, 4.0, 5.0]);
    }
}
