//! Dense matrix exponential by Padé approximation with scaling and squaring
//! (Higham's 2005 degree selection).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Result, RteError};

/// Largest dimension accepted by [`dense_expm`].
pub const DEFAULT_DENSE_LIMIT: usize = 2000;

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068;
const THETA_13: f64 = 5.371920351148152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// `exp(a)` for `a.nrows() ≤ DEFAULT_DENSE_LIMIT`.
pub fn dense_expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    dense_expm_with_limit(a, DEFAULT_DENSE_LIMIT)
}

pub fn dense_expm_with_limit(a: &DMatrix<f64>, limit: usize) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(RteError::invalid(format!("expm of non-square {}x{} matrix", a.nrows(), a.ncols())));
    }
    if a.nrows() > limit {
        return Err(RteError::invalid(format!(
            "expm of a {n}x{n} matrix exceeds the dense limit {limit}",
            n = a.nrows()
        )));
    }
    let e = expm_unchecked(a);
    if e.iter().any(|v| !v.is_finite()) {
        return Err(RteError::NumericalFailure {
            operator: "dense_expm".into(),
            t: 1.0,
            detail: "exponential overflowed".into(),
        });
    }
    Ok(e)
}

fn norm_one(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn lincomb(n: usize, terms: &[(&DMatrix<f64>, f64)], identity_coeff: f64) -> DMatrix<f64> {
    let mut out = DMatrix::from_diagonal_element(n, n, identity_coeff);
    for (m, c) in terms {
        out += *m * *c;
    }
    out
}

/// Padé/scaling-and-squaring exponential without size checks. Non-finite
/// output is left to the caller to detect.
pub(crate) fn expm_unchecked(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = norm_one(a);
    if !norm.is_finite() {
        return DMatrix::from_element(n, n, f64::NAN);
    }
    let (u, v, squarings) = if norm <= THETA_3 {
        let a2 = a * a;
        let b = PADE_3;
        let u = a * lincomb(n, &[(&a2, b[3])], b[1]);
        let v = lincomb(n, &[(&a2, b[2])], b[0]);
        (u, v, 0)
    } else if norm <= THETA_5 {
        let a2 = a * a;
        let a4 = &a2 * &a2;
        let b = PADE_5;
        let u = a * lincomb(n, &[(&a4, b[5]), (&a2, b[3])], b[1]);
        let v = lincomb(n, &[(&a4, b[4]), (&a2, b[2])], b[0]);
        (u, v, 0)
    } else if norm <= THETA_7 {
        let a2 = a * a;
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let b = PADE_7;
        let u = a * lincomb(n, &[(&a6, b[7]), (&a4, b[5]), (&a2, b[3])], b[1]);
        let v = lincomb(n, &[(&a6, b[6]), (&a4, b[4]), (&a2, b[2])], b[0]);
        (u, v, 0)
    } else if norm <= THETA_9 {
        let a2 = a * a;
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let a8 = &a6 * &a2;
        let b = PADE_9;
        let u = a * lincomb(n, &[(&a8, b[9]), (&a6, b[7]), (&a4, b[5]), (&a2, b[3])], b[1]);
        let v = lincomb(n, &[(&a8, b[8]), (&a6, b[6]), (&a4, b[4]), (&a2, b[2])], b[0]);
        (u, v, 0)
    } else {
        let s = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
        let scaled = a * 2f64.powi(-s);
        let a2 = &scaled * &scaled;
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let b = PADE_13;
        let inner_u = &a6 * lincomb(n, &[(&a6, b[13]), (&a4, b[11]), (&a2, b[9])], 0.0);
        let u = &scaled * (inner_u + lincomb(n, &[(&a6, b[7]), (&a4, b[5]), (&a2, b[3])], b[1]));
        let inner_v = &a6 * lincomb(n, &[(&a6, b[12]), (&a4, b[10]), (&a2, b[8])], 0.0);
        let v = inner_v + lincomb(n, &[(&a6, b[6]), (&a4, b[4]), (&a2, b[2])], b[0]);
        (u, v, s)
    };
    let numer = &v + &u;
    let denom = v - u;
    let mut r = match denom.lu().solve(&numer) {
        Some(r) => r,
        None => return DMatrix::from_element(n, n, f64::NAN),
    };
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// `exp(a)` for a complex matrix, through the real embedding
/// `[[Re, −Im], [Im, Re]]`.
pub(crate) fn complex_expm(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    let embedded = embed_complex(a);
    let e = expm_unchecked(&embedded);
    DMatrix::from_fn(n, n, |i, j| Complex64::new(e[(i, j)], e[(i + n, j)]))
}

pub(crate) fn embed_complex(a: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let z = a[(i, j)];
            m[(i, j)] = z.re;
            m[(i + n, j + n)] = z.re;
            m[(i + n, j)] = z.im;
            m[(i, j + n)] = -z.im;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    #[test]
    fn zero_gives_identity() {
        let e = dense_expm(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(e, DMatrix::identity(4, 4));
    }

    #[test]
    fn diagonal_case() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        let e = dense_expm(&a).unwrap();
        let want = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1f64.exp(), (-1f64).exp()]));
        assert!(max_diff(&e, &want) <= 1e-13);
    }

    #[test]
    fn rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = dense_expm(&a).unwrap();
        let (s, c) = 1f64.sin_cos();
        let want = DMatrix::from_row_slice(2, 2, &[c, s, -s, c]);
        assert!(max_diff(&e, &want) <= 1e-12);
    }

    #[test]
    fn every_pade_branch_matches_taylor() {
        // nilpotent-free 3x3 with known series; compare against a long Taylor sum
        let base = DMatrix::from_row_slice(3, 3, &[0.1, -0.3, 0.2, 0.4, -0.2, 0.1, -0.1, 0.3, 0.05]);
        for scale in [1e-3, 0.1, 0.5, 1.5, 4.0, 30.0] {
            let a = &base * scale;
            let e = dense_expm(&a).unwrap();
            // reference: squaring of a high-order Taylor at small norm
            let s = 10;
            let small = &a / 2f64.powi(s);
            let mut term = DMatrix::identity(3, 3);
            let mut sum = DMatrix::identity(3, 3);
            for k in 1..30 {
                term = &term * &small / k as f64;
                sum += &term;
            }
            for _ in 0..s {
                sum = &sum * &sum;
            }
            let rel = max_diff(&e, &sum) / sum.amax();
            assert!(rel <= 1e-12, "scale={scale} rel={rel}");
        }
    }

    #[test]
    fn dense_limit_enforced() {
        let a = DMatrix::zeros(5, 5);
        assert!(matches!(dense_expm_with_limit(&a, 4), Err(RteError::InvalidArgument(_))));
    }

    #[test]
    fn complex_embedding_matches_scalar() {
        let z = Complex64::new(-0.3, 2.0);
        let a = DMatrix::from_element(1, 1, z);
        let e = complex_expm(&a);
        assert!((e[(0, 0)] - z.exp()).norm() <= 1e-14);
    }
}
