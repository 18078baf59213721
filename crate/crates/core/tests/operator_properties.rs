use nalgebra::{DMatrix, DVector};
use pfcc_core::matops::{pinv, sigma_max, unvecm, vecm_sym, vecv, SymmetricMatrix};
use pfcc_core::model_control::min_norm_regulation_solution;
use pfcc_core::observers::{regressor, rls_update_L};
use proptest::prelude::*;

const POOL: usize = 64;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(1000)
}

fn take(pool: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, &pool[..rows * cols])
}

fn orthonormal(pool: &[f64], n: usize) -> DMatrix<f64> {
    let m = take(pool, n, n) + DMatrix::identity(n, n) * 3.0;
    m.qr().q()
}

/// `U Σ Vᵀ` with singular values in `[0.1, 10]` and the trailing `rank_drop`
/// values set to zero.
fn shaped(pool: &[f64], rows: usize, cols: usize, sigmas: &[f64], rank_drop: usize) -> DMatrix<f64> {
    let u = orthonormal(pool, rows);
    let v = orthonormal(&pool[POOL / 2..], cols);
    let k = rows.min(cols);
    let mut s = DMatrix::zeros(rows, cols);
    for i in 0..k.saturating_sub(rank_drop) {
        s[(i, i)] = 0.1 + 9.9 * sigmas[i].abs();
    }
    u * s * v.transpose()
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * a.amax().max(b.amax()).max(1.0)
}

/// Symmetric root of a positive definite matrix.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn quadratic_form_matches_vectorization(
        n in 1usize..7,
        xs in prop::collection::vec(-1.0f64..1.0, 6),
        ps in prop::collection::vec(-1.0f64..1.0, 36),
    ) {
        let x = DVector::from_column_slice(&xs[..n]);
        let p = SymmetricMatrix::symmetrize(&take(&ps, n, n));
        let lhs = vecv(&x).dot(&vecm_sym(&p));
        let rhs = (x.transpose() * p.as_matrix() * &x)[(0, 0)];
        prop_assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn symmetric_vectorization_round_trips(
        n in 1usize..7,
        ps in prop::collection::vec(-5.0f64..5.0, 36),
    ) {
        let p = SymmetricMatrix::symmetrize(&take(&ps, n, n));
        let back = unvecm(&vecm_sym(&p), n).unwrap();
        prop_assert!(close(back.as_matrix(), p.as_matrix(), 1e-14));
    }

    #[test]
    fn pseudo_inverse_properties(
        rows in 1usize..5,
        cols in 1usize..5,
        rank_drop in 0usize..3,
        pool in prop::collection::vec(-1.0f64..1.0, POOL),
        sigmas in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let b = shaped(&pool, rows, cols, &sigmas, rank_drop);
        let bp = pinv(&b);
        let bt = b.transpose();
        let btb = &bt * &b;
        prop_assert!(close(&(&bp * &b * &bp), &bp, 1e-10), "B+BB+ = B+");
        prop_assert!(close(&pinv(&btb), &(&bp * pinv(&bt)), 1e-10), "(BtB)+ = B+(Bt)+");
        prop_assert!(close(&bp, &(pinv(&btb) * &bt), 1e-10), "B+ = (BtB)+Bt");
        prop_assert!(close(&(&b * &bp * &b), &b, 1e-10), "BB+B = B");
    }

    #[test]
    fn pseudo_inverse_of_invertible_is_inverse(
        n in 1usize..5,
        pool in prop::collection::vec(-1.0f64..1.0, POOL),
        sigmas in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let b = shaped(&pool, n, n, &sigmas, 0);
        let inv = b.clone().try_inverse().unwrap();
        prop_assert!(close(&pinv(&b), &inv, 1e-10));
    }

    #[test]
    fn min_norm_solution_is_fixed_by_projection(
        n in 1usize..5,
        m in 1usize..5,
        rank_drop in 0usize..2,
        pool in prop::collection::vec(-1.0f64..1.0, POOL),
        sigmas in prop::collection::vec(0.0f64..1.0, 4),
        extra in prop::collection::vec(-1.0f64..1.0, 32),
    ) {
        let b = shaped(&pool, n, m, &sigmas, rank_drop);
        let a = take(&extra, n, n);
        let u = take(&extra[16..], m, n);
        let s = &a + &b * &u;
        let m_bar = min_norm_regulation_solution(&a, &b, &s).unwrap();
        let bp = pinv(&b);
        prop_assert!(close(&(&bp * &b * &m_bar), &m_bar, 1e-10));
        prop_assert!(close(&(&a + &b * &m_bar), &s, 1e-10));
    }

    #[test]
    fn rls_gain_bounds_hold_along_trajectories(
        n in 1usize..4,
        big in any::<bool>(),
        xi in 1.0f64..10.0,
        steps in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 9), 1..20),
    ) {
        let beta = if big { 100.0 } else { 1.0 };
        let mut l = DMatrix::identity(n, n) * beta;
        for step in &steps {
            let x_hat = DVector::from_column_slice(&step[..n]);
            let x_bar = regressor(&x_hat);
            l = rls_update_L(&l, &x_bar).unwrap();
            let l_inv = l.clone().try_inverse().unwrap();
            let gram = x_bar.transpose() * &x_bar;
            let gap = SymmetricMatrix::symmetrize(&(&l_inv - &gram)).min_eigenvalue();
            prop_assert!(gap > 0.0, "L⁻¹ − x̄ᵀx̄ has eigenvalue {gap}");

            let s2 = sigma_max(&x_bar).powi(2);
            let bound = s2 / (xi + s2);
            let r = sym_sqrt(&(l_inv + DMatrix::identity(n, n) * xi).try_inverse().unwrap());
            let sym = &r * &gram * &r;
            let top = SymmetricMatrix::symmetrize(&sym).as_matrix().clone().symmetric_eigen().eigenvalues.max();
            prop_assert!(top < bound, "{top} ≥ {bound}");
        }
    }
}
