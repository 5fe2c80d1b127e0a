//! Action of the matrix exponential on a vector by a scaled truncated Taylor
//! series, plus a restarted GMRES for the implicit-Euler alternative.

use super::sparse::{norm2, LinearOperator};
use crate::error::{Result, RteError};

pub const DEFAULT_EXPMV_TOL: f64 = 1e-10;

/// Taylor terms per substep.
const MAX_TERMS: usize = 60;
/// Beyond this many substeps the Taylor route is refused.
const MAX_SUBSTEPS: f64 = 5e6;

/// Number of Taylor substeps `expmv` would use for `(op, t)`.
pub fn taylor_substeps<A: LinearOperator + ?Sized>(op: &A, t: f64) -> f64 {
    (op.norm_estimate() * t.abs()).ceil().max(1.0)
}

/// `exp(t·A)·v` to relative accuracy `tol`.
///
/// The interval is split into `m` substeps so that `‖(t/m)·A‖ ≤ 1` and on
/// each substep the Taylor series is summed until two consecutive terms are
/// below `(tol/m)·‖partial sum‖`, with at most 60 terms.
pub fn expmv<A: LinearOperator + ?Sized>(op: &A, t: f64, v: &[f64], tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(RteError::invalid(format!("expmv tolerance must be positive, got {tol}")));
    }
    if v.len() != op.dim() {
        return Err(RteError::invalid(format!(
            "expmv vector has length {} but `{}` has dimension {}",
            v.len(),
            op.label(),
            op.dim()
        )));
    }
    if t == 0.0 {
        return Ok(v.to_vec());
    }
    let m = taylor_substeps(op, t);
    if !m.is_finite() || m > MAX_SUBSTEPS {
        return Err(RteError::NumericalFailure {
            operator: op.label().to_string(),
            t,
            detail: format!("‖tA‖ ≈ {m:e} is too stiff for the Taylor expmv"),
        });
    }
    let steps = m as usize;
    let h = t / m;
    let step_tol = (tol / m).max(f64::EPSILON);
    let mut f = v.to_vec();
    let mut term = vec![0.0; v.len()];
    let mut next = vec![0.0; v.len()];
    for _ in 0..steps {
        term.copy_from_slice(&f);
        let mut prev_norm = f64::INFINITY;
        for k in 1..=MAX_TERMS {
            op.apply_into(&term, &mut next);
            let c = h / k as f64;
            for (tk, nk) in term.iter_mut().zip(&next) {
                *tk = c * nk;
            }
            for (fi, ti) in f.iter_mut().zip(&term) {
                *fi += ti;
            }
            let tn = norm2(&term);
            let fnorm = norm2(&f);
            if !fnorm.is_finite() {
                return Err(RteError::NumericalFailure {
                    operator: op.label().to_string(),
                    t,
                    detail: "non-finite entries in the Taylor sum".into(),
                });
            }
            if tn + prev_norm <= step_tol * fnorm || fnorm == 0.0 {
                break;
            }
            prev_norm = tn;
        }
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(RteError::NumericalFailure {
            operator: op.label().to_string(),
            t,
            detail: "non-finite entries in the result".into(),
        });
    }
    Ok(f)
}

/// Restarted GMRES for `M x = b` with `M` given by its action.
pub fn gmres(
    label: &str,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let restart = restart.clamp(1, n.max(1));
    let mut total = 0usize;
    loop {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        if beta <= tol * bnorm {
            return Ok(x);
        }
        if total >= max_iter {
            return Err(RteError::NumericalFailure {
                operator: label.to_string(),
                t: 0.0,
                detail: format!("GMRES stalled at relative residual {:e}", beta / bnorm),
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            total += 1;
            let mut w = apply(&basis[k]);
            for (j, q) in basis.iter().enumerate() {
                let hij: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
                h[j][k] = hij;
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= hij * qi);
            }
            let wn = norm2(&w);
            h[k + 1][k] = wn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if g[k + 1].abs() <= tol * bnorm || wn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            x.iter_mut().zip(&basis[j]).for_each(|(xi, qi)| *xi += yj * qi);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RteError::NumericalFailure {
                operator: label.to_string(),
                t: 0.0,
                detail: "GMRES produced non-finite iterate".into(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm::dense_expm;
    use crate::linalg::sparse::{CsrMatrix, SparseOperator};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn zero_time_is_identity() {
        let op = SparseOperator::new("a", CsrMatrix::identity(3));
        let v = vec![1.0, -2.0, 0.5];
        assert_eq!(expmv(&op, 0.0, &v, 1e-10).unwrap(), v);
    }

    #[test]
    fn diagonal_operator() {
        let d = [-3.0, 0.5, 2.0, -40.0];
        let trip: Vec<_> = d.iter().enumerate().map(|(i, &x)| (i, i, x)).collect();
        let op = SparseOperator::new("diag", CsrMatrix::from_triplets(4, 4, &trip));
        let v = vec![1.0, 1.0, -1.0, 2.0];
        let w = expmv(&op, 0.7, &v, 1e-12).unwrap();
        for i in 0..4 {
            let want = (0.7 * d[i]).exp() * v[i];
            assert!((w[i] - want).abs() <= 1e-10 * want.abs().max(1e-2), "i={i}");
        }
    }

    #[test]
    fn random_dense_operator_matches_expm() {
        // fixed pseudo-random 20x20 with entries in [-1, 1]
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let a = DMatrix::from_fn(20, 20, |_, _| next());
        let v: Vec<f64> = (0..20).map(|_| next()).collect();
        let op = SparseOperator::new("rand", CsrMatrix::from_dense(&a));
        let w = expmv(&op, 1.0, &v, 1e-10).unwrap();
        let want = dense_expm(&a).unwrap() * DVector::from_vec(v);
        let err = (DVector::from_vec(w) - &want).norm() / want.norm();
        assert!(err <= 1e-9, "err={err}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let op = SparseOperator::new("a", CsrMatrix::identity(3));
        assert!(expmv(&op, 1.0, &[1.0, 2.0], 1e-10).is_err());
        assert!(expmv(&op, 1.0, &[1.0, 2.0, 3.0], 0.0).is_err());
    }

    #[test]
    fn overflow_reports_operator() {
        let op = SparseOperator::new("blowup", CsrMatrix::identity(2).scaled(800.0));
        let err = expmv(&op, 1.0, &[1.0, 1.0], 1e-10).unwrap_err();
        match err {
            RteError::NumericalFailure { operator, .. } => assert_eq!(operator, "blowup"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gmres_solves_shifted_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, -1.0, 3.0, 0.5, 0.0, 0.2, 2.0]);
        let b = [1.0, 2.0, 3.0];
        let x = gmres("m", |v| (&a * DVector::from_column_slice(v)).as_slice().to_vec(), &b, 1e-14, 3, 50).unwrap();
        let r = &a * DVector::from_vec(x) - DVector::from_column_slice(&b);
        assert!(r.norm() <= 1e-12);
    }
}
