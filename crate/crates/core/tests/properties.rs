use nalgebra::DMatrix;
use proptest::prelude::*;
use rte_lowrank::linalg::{
    expmv, orthonormality_defect, weighted_inner, weighted_mgs, weighted_singular_values, weighted_truncated_svd,
    DenseOperator, WeightVector,
};

fn matrix(n: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
}

fn weights(n: usize) -> impl Strategy<Value = WeightVector> {
    prop::collection::vec(0.05f64..3.0, n).prop_map(|v| WeightVector::new(v).unwrap())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mgs_factors_are_orthonormal_and_exact((a, w) in (3usize..12, 1usize..4).prop_flat_map(|(m, r)| (matrix(m, r.min(m)), weights(m)))) {
        let qr = weighted_mgs(&a, &w).unwrap();
        prop_assert!(orthonormality_defect(&qr.q, &w).unwrap() < 1e-12);
        if qr.replaced_columns.is_empty() {
            prop_assert!((&qr.q * &qr.r_factor - &a).amax() < 1e-12);
        }
    }

    #[test]
    fn mgs_of_dependent_columns_stays_orthonormal(a in matrix(10, 2), w in weights(10)) {
        let mut b = DMatrix::zeros(10, 4);
        b.columns_mut(0, 2).copy_from(&a);
        b.set_column(2, &(a.column(0) * 2.0 - a.column(1)));
        b.set_column(3, &a.column(1));
        let qr = weighted_mgs(&b, &w).unwrap();
        prop_assert!(orthonormality_defect(&qr.q, &w).unwrap() < 1e-12);
        prop_assert!((&qr.q * &qr.r_factor - &b).amax() < 1e-10);
    }

    #[test]
    fn expmv_is_a_semigroup(a in matrix(8, 8), v in prop::collection::vec(-1.0f64..1.0, 8), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let op = DenseOperator::new("random", a);
        let tol = 1e-12;
        let two_steps = expmv(&op, t, &expmv(&op, s, &v, tol).unwrap(), tol).unwrap();
        let one_step = expmv(&op, s + t, &v, tol).unwrap();
        let diff: Vec<f64> = two_steps.iter().zip(&one_step).map(|(x, y)| x - y).collect();
        prop_assert!(norm(&diff) <= 1e-9 * norm(&one_step).max(1.0));
    }

    #[test]
    fn expmv_of_skew_operator_preserves_norm(a in matrix(8, 8), v in prop::collection::vec(-1.0f64..1.0, 8), t in 0.0f64..3.0) {
        let skew = &a - a.transpose();
        let out = expmv(&DenseOperator::new("skew", skew), t, &v, 1e-12).unwrap();
        prop_assert!((norm(&out) - norm(&v)).abs() <= 1e-9 * norm(&v).max(1e-300));
    }

    #[test]
    fn truncated_svd_is_idempotent(
        (f, wx, wmu, r) in (4usize..10, 3usize..7, 1usize..3)
            .prop_flat_map(|(n, m, r)| (matrix(n, m), weights(n), weights(m), Just(r)))
    ) {
        let first = weighted_truncated_svd(&f, r, &wx, &wmu).unwrap();
        let fr = &first.x * &first.s * first.v.transpose();
        let second = weighted_truncated_svd(&fr, r, &wx, &wmu).unwrap();
        let again = &second.x * &second.s * second.v.transpose();
        prop_assert!((&again - &fr).amax() <= 1e-10 * fr.amax().max(1.0));
        prop_assert!(second.sigma_tail <= 1e-10 * second.sigma[0].max(1e-300));
    }

    #[test]
    fn truncation_error_is_the_singular_value_tail(
        (f, wx, wmu, r) in (4usize..10, 3usize..7, 1usize..3)
            .prop_flat_map(|(n, m, r)| (matrix(n, m), weights(n), weights(m), Just(r)))
    ) {
        let svd = weighted_truncated_svd(&f, r, &wx, &wmu).unwrap();
        let resid = &f - &svd.x * &svd.s * svd.v.transpose();
        // weighted Frobenius norm of the residual
        let rw = weighted_inner(&resid, &resid, &wx).unwrap();
        let err2: f64 = (0..rw.ncols()).map(|j| rw[(j, j)] * wmu.as_slice()[j]).sum();
        let tail2: f64 = weighted_singular_values(&f, &wx, &wmu).unwrap()[r..].iter().map(|s| s * s).sum();
        prop_assert!((err2.sqrt() - tail2.sqrt()).abs() <= 1e-10 * svd.sigma[0]);
    }
}
