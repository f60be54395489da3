use magd_core::numerics::{
    dense_solve, frobenius_norm, orthonormal_columns, row_cosine, softmax_lastaxis, spmm, CsrMatrix, DenseMatrix,
};
use magd_core::seed;
use proptest::prelude::*;
use rand::Rng as _;

fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

fn random_dense(rows: usize, cols: usize, scale: f64, s: u64) -> DenseMatrix {
    let mut rng = seed::rng(s);
    DenseMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..=1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spmm_agrees_with_dense_product(s in any::<u64>(), density in 0.0f64..1.0) {
        let mut rng = seed::rng(s);
        let dense = DenseMatrix::from_fn(20, 20, |_, _| {
            if rng.random::<f64>() < density { rng.random_range(-1.0..=1.0) } else { 0.0 }
        });
        let a = CsrMatrix::from_dense(&dense);
        let b = random_dense(20, 20, 1.0, s ^ 1);
        let got = spmm(&a, &b).unwrap();
        prop_assert!(got.max_abs_diff(&naive_matmul(&dense, &b)) <= 1e-12);
        prop_assert_eq!(spmm(&CsrMatrix::identity(20), &b).unwrap(), b);
    }

    #[test]
    fn softmax_rows_are_distributions(s in any::<u64>(), scale in 1.0f64..1e4) {
        let x = random_dense(6, 7, scale, s);
        let p = softmax_lastaxis(&x);
        for r in 0..6 {
            prop_assert!(p.row(r).iter().all(|&v| v >= 0.0));
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_symmetric_and_scale_invariant(s in any::<u64>(), ca in 1e-3f64..1e3, cb in 1e-3f64..1e3) {
        let a = random_dense(1, 5, 1.0, s);
        let b = random_dense(1, 5, 1.0, s ^ 7);
        let c = row_cosine(&a, &b, 0, 0).unwrap();
        prop_assert!((c - row_cosine(&b, &a, 0, 0).unwrap()).abs() <= 1e-12);
        let mut sa = a.clone();
        sa.scale(ca);
        let mut sb = b.clone();
        sb.scale(cb);
        prop_assert!((c - row_cosine(&sa, &sb, 0, 0).unwrap()).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn solve_residual_up_to_condition_1e6(s in any::<u64>(), log_cond in 0.0f64..6.0) {
        let n = 10;
        let mut rng = seed::rng(s);
        let q = orthonormal_columns(n, n, &mut rng).unwrap();
        // Q diag(σ) Qᵀ with σ log-spaced from 1 down to 10^-log_cond
        let sig: Vec<f64> = (0..n).map(|i| 10f64.powf(-log_cond * i as f64 / (n - 1) as f64)).collect();
        let a = DenseMatrix::from_fn(n, n, |i, j| (0..n).map(|k| q.get(i, k) * sig[k] * q.get(j, k)).sum());
        let b = random_dense(n, 3, 1.0, s ^ 3);
        let x = dense_solve(&a, &b).unwrap();
        let mut r = naive_matmul(&a, &x);
        r.add_scaled(-1.0, &b).unwrap();
        prop_assert!(frobenius_norm(&r) <= 1e-8 * frobenius_norm(&b));
    }
}
