//! One-sided Jacobi SVD.
//!
//! nalgebra 0.35's bidiagonal SVD returns wrong singular values on some
//! numerically rank-deficient inputs (a weighted rank-one 16×8 matrix is
//! enough), so the weighted SVD routes through this instead. Jacobi also
//! computes small singular values to high relative accuracy.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_SWEEPS: usize = 60;
/// Singular values at or below this fraction of the largest span no
/// meaningful direction; their vectors are replaced by seeded random ones.
pub const NULL_THRESHOLD: f64 = 1e-12;
const FILL_SEED: u64 = 0x5eed_0005;

/// Thin SVD `a = u diag(sigma) vᵀ` with `k = min(n, m)` columns, `sigma`
/// descending. `u` and `v` are orthonormal even where `sigma` vanishes; the
/// null directions are filled from a fixed seeded stream so they stay
/// generic rather than aligned with coordinate axes.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn thin_svd(a: &DMatrix<f64>) -> ThinSvd {
    if a.nrows() < a.ncols() {
        let t = thin_svd(&a.transpose());
        return ThinSvd { u: t.v, sigma: t.sigma, v: t.u };
    }
    let (n, m) = a.shape();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(m, m);
    let tol = f64::EPSILON * (n as f64).sqrt();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..m {
            for q in p + 1..m {
                let (alpha, beta, gamma) = {
                    let cp = w.column(p);
                    let cq = w.column(q);
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..m).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let top = sigma.first().copied().unwrap_or(0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(FILL_SEED);
    let mut u = DMatrix::zeros(n, m);
    let mut vs = DMatrix::zeros(m, m);
    for (col, &j) in order.iter().enumerate() {
        if norms[j] > NULL_THRESHOLD * top {
            vs.set_column(col, &v.column(j));
            let cand = w.column(j) / norms[j];
            u.set_column(col, &orthonormal_fill(&u, col, cand, &mut rng));
        } else {
            let vc = orthonormal_fill(&vs, col, DVector::zeros(m), &mut rng);
            vs.set_column(col, &vc);
            u.set_column(col, &orthonormal_fill(&u, col, DVector::zeros(n), &mut rng));
        }
    }
    ThinSvd { u, sigma, v: vs }
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let a = m[(i, p)];
        let b = m[(i, q)];
        m[(i, p)] = c * a - s * b;
        m[(i, q)] = s * a + c * b;
    }
}

/// Cleans `cand` against the first `k` columns of `u`. Falls back to random
/// draws when `cand` carries no new direction.
fn orthonormal_fill(u: &DMatrix<f64>, k: usize, cand: DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let clean = |mut z: DVector<f64>| {
        for _ in 0..2 {
            for j in 0..k {
                let c = u.column(j).dot(&z);
                z.axpy(-c, &u.column(j), 1.0);
            }
        }
        z
    };
    let mut z = clean(cand);
    while z.norm() <= 0.5 {
        let draw = DVector::from_fn(u.nrows(), |_, _| rng.random_range(-1.0..1.0));
        let before = draw.norm();
        z = clean(draw);
        if z.norm() > 1e-6 * before {
            break;
        }
    }
    let nz = z.norm();
    z / nz
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(a: &DMatrix<f64>) -> ThinSvd {
        let svd = thin_svd(a);
        let k = a.nrows().min(a.ncols());
        let rec = &svd.u * DMatrix::from_diagonal(&DVector::from_vec(svd.sigma.clone())) * svd.v.transpose();
        assert!((rec - a).amax() <= 1e-13 * a.amax().max(1.0));
        assert!((svd.u.transpose() * &svd.u - DMatrix::identity(k, k)).amax() < 1e-13);
        assert!((svd.v.transpose() * &svd.v - DMatrix::identity(k, k)).amax() < 1e-13);
        assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
        svd
    }

    #[test]
    fn weighted_rank_one_case() {
        let n = 16;
        let q = crate::grid::gauss_legendre(8).unwrap();
        let a = DMatrix::from_fn(n, 8, |i, j| {
            let x = 2.0 * i as f64 / n as f64;
            let mu = q.nodes[j];
            ((x - 1.0f64).powi(2) + 1.0) * (1.0 + mu * mu) * (0.125 * q.weights[j]).sqrt()
        });
        let svd = check(&a);
        assert!((svd.sigma[0] - a.norm()).abs() < 1e-13 * a.norm());
        assert!(svd.sigma[1] < 1e-14 * svd.sigma[0]);
    }

    #[test]
    fn random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(n, m) in &[(1, 1), (7, 3), (3, 7), (40, 40), (60, 12)] {
            let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let svd = check(&a);
            let fro: f64 = svd.sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
            assert!((fro - a.norm()).abs() < 1e-13 * a.norm());
        }
    }

    #[test]
    fn graded_spectrum_is_resolved() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q1 = DMatrix::from_fn(30, 10, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let q2 = DMatrix::from_fn(10, 10, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let want: Vec<f64> = (0..10).map(|k| 10f64.powi(-k)).collect();
        let a = &q1 * DMatrix::from_diagonal(&DVector::from_vec(want.clone())) * q2.transpose();
        let svd = check(&a);
        for (got, w) in svd.sigma.iter().zip(&want) {
            assert!((got - w).abs() <= 1e-6 * w + 1e-15, "{got} vs {w}");
        }
    }

    #[test]
    fn zero_matrix_has_orthonormal_factors() {
        let svd = check(&DMatrix::zeros(5, 3));
        assert!(svd.sigma.iter().all(|&s| s == 0.0));
        check(&DMatrix::zeros(4, 4));
    }

    #[test]
    fn null_directions_are_generic_and_repeatable() {
        let a = DMatrix::from_fn(50, 6, |i, j| ((i + 1) * (j + 2)) as f64);
        let svd = check(&a);
        let again = thin_svd(&a);
        assert_eq!(svd.u, again.u);
        // no coordinate-axis fill: every null column spreads over many entries
        for col in 1..6 {
            let c = svd.u.column(col);
            assert!(c.amax() < 0.6, "column {col} peaks at {}", c.amax());
        }
    }
}
