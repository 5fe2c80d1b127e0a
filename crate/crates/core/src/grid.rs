//! Spatial grid, periodic finite-difference matrices, and the Gauss–Legendre
//! rule that defines the discrete angular measure.

use std::f64::consts::PI;

use crate::error::{Result, RteError};
use crate::linalg::sparse::CsrMatrix;

/// Uniform periodic grid on `[a, b)`. The right endpoint is identified with
/// `a` and is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub a: f64,
    pub b: f64,
    pub n_x: usize,
    pub dx: f64,
    pub points: Vec<f64>,
}

impl SpatialGrid {
    pub fn len(&self) -> usize {
        self.n_x
    }

    pub fn is_empty(&self) -> bool {
        self.n_x == 0
    }

    /// Grid weights for the discrete `L²(dx)` inner product.
    pub fn weights(&self) -> Vec<f64> {
        vec![self.dx; self.n_x]
    }
}

pub fn uniform_grid(a: f64, b: f64, n_x: usize) -> Result<SpatialGrid> {
    if !(a.is_finite() && b.is_finite()) || b <= a {
        return Err(RteError::invalid(format!("grid interval [{a}, {b}) is empty or non-finite")));
    }
    if n_x < 2 {
        return Err(RteError::invalid(format!("grid needs at least 2 points, got {n_x}")));
    }
    let dx = (b - a) / n_x as f64;
    let points = (0..n_x).map(|i| a + i as f64 * dx).collect();
    Ok(SpatialGrid { a, b, n_x, dx, points })
}

/// Gauss–Legendre nodes (ascending) and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularQuadrature {
    pub n_mu: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AngularQuadrature {
    pub fn len(&self) -> usize {
        self.n_mu
    }

    pub fn is_empty(&self) -> bool {
        self.n_mu == 0
    }

    /// Quadrature of `g` sampled at the nodes.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&mu, &w)| w * g(mu)).sum()
    }
}

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Evaluates `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// `n`-point Gauss–Legendre rule by Newton iteration from Chebyshev-like
/// initial guesses.
pub fn gauss_legendre(n: usize) -> Result<AngularQuadrature> {
    if n == 0 {
        return Err(RteError::invalid("Gauss–Legendre rule needs n ≥ 1"));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // i-th largest root
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() <= NEWTON_TOL * x.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        // the middle root is exactly zero
        let mid = n / 2;
        nodes[mid] = 0.0;
        let (_, d) = legendre_with_derivative(n, 0.0);
        weights[mid] = 2.0 / (d * d);
    }
    Ok(AngularQuadrature { n_mu: n, nodes, weights })
}

/// Periodic centered difference matrices on a uniform grid.
#[derive(Debug, Clone)]
pub struct DiffMatrices {
    /// First derivative, `(u[i+1] − u[i−1]) / 2dx`.
    pub d_x: CsrMatrix,
    /// Second derivative, `(u[i+1] − 2u[i] + u[i−1]) / dx²`.
    pub d_xx: CsrMatrix,
}

pub fn build_diff_matrices(grid: &SpatialGrid) -> DiffMatrices {
    let n = grid.n_x;
    let dx = grid.dx;
    let mut dx_trip = Vec::with_capacity(2 * n);
    let mut dxx_trip = Vec::with_capacity(3 * n);
    for i in 0..n {
        let right = (i + 1) % n;
        let left = (i + n - 1) % n;
        dx_trip.push((i, right, 1.0 / (2.0 * dx)));
        dx_trip.push((i, left, -1.0 / (2.0 * dx)));
        dxx_trip.push((i, i, -2.0 / (dx * dx)));
        dxx_trip.push((i, right, 1.0 / (dx * dx)));
        dxx_trip.push((i, left, 1.0 / (dx * dx)));
    }
    DiffMatrices {
        d_x: CsrMatrix::from_triplets(n, n, &dx_trip),
        d_xx: CsrMatrix::from_triplets(n, n, &dxx_trip),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_point_rule_is_midpoint() {
        let q = gauss_legendre(1).unwrap();
        assert_eq!(q.nodes, vec![0.0]);
        assert_abs_diff_eq!(q.weights[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_rule_matches_closed_form() {
        let q = gauss_legendre(2).unwrap();
        let r = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(q.nodes[0], -r, epsilon = 1e-15);
        assert_abs_diff_eq!(q.nodes[1], r, epsilon = 1e-15);
        assert_abs_diff_eq!(q.weights[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.weights[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_points_rejected() {
        assert!(matches!(gauss_legendre(0), Err(RteError::InvalidArgument(_))));
    }

    #[test]
    fn twenty_points_second_moment() {
        let q = gauss_legendre(20).unwrap();
        assert_abs_diff_eq!(q.integrate(|m| m * m), 2.0 / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn rules_up_to_64_are_positive_symmetric_and_exact() {
        for n in 1..=64 {
            let q = gauss_legendre(n).unwrap();
            assert!(q.weights.iter().all(|&w| w > 0.0), "n={n}");
            assert!(q.nodes.windows(2).all(|p| p[0] < p[1]), "n={n}");
            assert!((q.weights.iter().sum::<f64>() - 2.0).abs() <= 1e-13, "n={n}");
            for j in 0..n {
                assert!((q.nodes[j] + q.nodes[n - 1 - j]).abs() <= 1e-13);
            }
            for k in 0..(2 * n) {
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                let got = q.integrate(|m| m.powi(k as i32));
                if k % 2 == 1 {
                    assert!(got.abs() <= 1e-13, "n={n} k={k} got={got}");
                } else {
                    assert!((got - exact).abs() <= 1e-12 * exact, "n={n} k={k}");
                }
            }
        }
    }

    #[test]
    fn uniform_grid_examples() {
        let g = uniform_grid(0.0, 2.0, 4).unwrap();
        assert_eq!(g.points, vec![0.0, 0.5, 1.0, 1.5]);
        assert_eq!(g.dx, 0.5);
        let g = uniform_grid(0.0, 2.0, 1000).unwrap();
        assert_abs_diff_eq!(g.dx, 0.002, epsilon = 1e-18);
        assert_abs_diff_eq!(g.points[999] + g.dx, 2.0, epsilon = 1e-14);
        let g = uniform_grid(0.0, 1.0, 2).unwrap();
        assert_eq!(g.points, vec![0.0, 0.5]);
    }

    #[test]
    fn uniform_grid_rejects_bad_input() {
        assert!(uniform_grid(1.0, 1.0, 4).is_err());
        assert!(uniform_grid(2.0, 1.0, 4).is_err());
        assert!(uniform_grid(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn derivative_stencil_row_with_wrap() {
        let g = uniform_grid(0.0, 2.0, 4).unwrap();
        let d = build_diff_matrices(&g);
        let dense = d.d_x.to_dense();
        let row: Vec<f64> = dense.row(0).iter().copied().collect();
        assert_eq!(row, vec![0.0, 1.0, 0.0, -1.0]);
    }

    #[test]
    fn stencil_structure() {
        let g = uniform_grid(0.0, 2.0, 37).unwrap();
        let d = build_diff_matrices(&g);
        let dx = d.d_x.to_dense();
        let dxx = d.d_xx.to_dense();
        let skew = &dx + dx.transpose();
        assert!(skew.amax() <= 1e-15);
        assert!((&dxx - dxx.transpose()).amax() <= 1e-15);
        for i in 0..37 {
            assert!(dx.row(i).sum().abs() <= 1e-15 * 37.0);
            assert!(dx.column(i).sum().abs() <= 1e-15 * 37.0);
            assert!(dxx.row(i).sum().abs() <= 1e-15 / (g.dx * g.dx));
        }
        let ones = vec![1.0; 37];
        assert!(d.d_x.matvec(&ones).iter().all(|v| v.abs() <= 1e-15));
    }

    #[test]
    fn derivative_of_sine_is_second_order() {
        let g = uniform_grid(0.0, 2.0, 200).unwrap();
        let d = build_diff_matrices(&g);
        let u: Vec<f64> = g.points.iter().map(|x| (PI * x).sin()).collect();
        let du = d.d_x.matvec(&u);
        let bound = (PI * g.dx).powi(2) * PI / 6.0 * 2.0;
        for (i, x) in g.points.iter().enumerate() {
            assert!((du[i] - PI * (PI * x).cos()).abs() <= bound);
        }
    }

    #[test]
    fn fourier_modes_are_eigenvectors() {
        let g = uniform_grid(0.0, 2.0, 64).unwrap();
        let d = build_diff_matrices(&g);
        for k in [1usize, 3, 7, 20] {
            let th = k as f64 * PI;
            let c: Vec<f64> = g.points.iter().map(|x| (th * x).cos()).collect();
            let s: Vec<f64> = g.points.iter().map(|x| (th * x).sin()).collect();
            // D e^{ikπx} = i sin(kπ dx)/dx e^{ikπx}
            let lam = (th * g.dx).sin() / g.dx;
            let dc = d.d_x.matvec(&c);
            let ds = d.d_x.matvec(&s);
            for i in 0..64 {
                assert!((dc[i] + lam * s[i]).abs() <= 1e-12);
                assert!((ds[i] - lam * c[i]).abs() <= 1e-12);
            }
        }
    }
}
