//! The discrete scaled transport operator
//!
//! ```text
//!     Ḟ = −(1/ε) D_x F diag(μ) + (1/ε²) (F W_μ − F),    W_μ = ½ w_μ 1ᵀ,
//! ```
//!
//! and the reduced operators the low-rank substeps propagate.

mod kron;

pub use kron::{Circulant, ExpMethod, KronForm, KronOperator};

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RteError};
use crate::grid::{build_diff_matrices, gauss_legendre, uniform_grid, AngularQuadrature, DiffMatrices, SpatialGrid};
use crate::linalg::expm::{dense_expm, DEFAULT_DENSE_LIMIT};
use crate::linalg::expmv::{expmv, DEFAULT_EXPMV_TOL};
use crate::linalg::sparse::SparseOperator;
use crate::linalg::weighted::{orthonormality_defect, scale_rows, WeightVector};
use crate::state::LowRankState;

/// Bases handed to the substep assembly must be orthonormal to this level.
pub const BASIS_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct RteModel {
    pub grid: SpatialGrid,
    pub quad: AngularQuadrature,
    pub diff: DiffMatrices,
    pub eps: f64,
    /// `½ w_μ 1ᵀ`.
    pub w_mu_matrix: DMatrix<f64>,
    wx: WeightVector,
    wmu: WeightVector,
    circulant: Circulant,
}

/// Reduced matrices for one substep.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstepMatrices {
    /// `Xᵀ diag(dx) D_x X`
    pub a_x: DMatrix<f64>,
    /// `Vᵀ diag(μ) diag(w) V`
    pub b_mu: DMatrix<f64>,
    /// `Vᵀ W_μ diag(w) V = ½ (Vᵀw)(Vᵀw)ᵀ`
    pub c_mu: DMatrix<f64>,
}

impl RteModel {
    pub fn new(grid: SpatialGrid, quad: AngularQuadrature, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 10.0) {
            return Err(RteError::invalid(format!("ε must lie in (0, 10], got {eps}")));
        }
        let diff = build_diff_matrices(&grid);
        let n_mu = quad.n_mu;
        let w_mu_matrix = DMatrix::from_fn(n_mu, n_mu, |i, _| 0.5 * quad.weights[i]);
        let wx = WeightVector::new(grid.weights())?;
        let wmu = WeightVector::new(quad.weights.clone())?;
        let circulant = Circulant::new(diff.d_x.clone());
        Ok(RteModel { grid, quad, diff, eps, w_mu_matrix, wx, wmu, circulant })
    }

    /// Uniform periodic grid on `[a, b)` with `n_x` points and an `n_mu`-point
    /// Gauss–Legendre rule.
    pub fn build(a: f64, b: f64, n_x: usize, n_mu: usize, eps: f64) -> Result<Self> {
        Self::new(uniform_grid(a, b, n_x)?, gauss_legendre(n_mu)?, eps)
    }

    /// Same discretization with a different ε.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 10.0) {
            return Err(RteError::invalid(format!("ε must lie in (0, 10], got {eps}")));
        }
        Ok(RteModel { eps, ..self.clone() })
    }

    pub fn n_x(&self) -> usize {
        self.grid.n_x
    }

    pub fn n_mu(&self) -> usize {
        self.quad.n_mu
    }

    pub fn wx(&self) -> &WeightVector {
        &self.wx
    }

    pub fn wmu(&self) -> &WeightVector {
        &self.wmu
    }

    fn check_shape(&self, f: &DMatrix<f64>, what: &str) -> Result<()> {
        if f.shape() != (self.n_x(), self.n_mu()) {
            return Err(RteError::invalid(format!(
                "{what}: expected a {}x{} matrix, got {}x{}",
                self.n_x(),
                self.n_mu(),
                f.nrows(),
                f.ncols()
            )));
        }
        Ok(())
    }

    /// `(1/ε²)(Wᵀ − I)`, the collision block shared by the angular operators.
    fn collision_block(&self) -> DMatrix<f64> {
        let n = self.n_mu();
        (self.w_mu_matrix.transpose() - DMatrix::identity(n, n)) / (self.eps * self.eps)
    }

    fn mu_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.quad.nodes))
    }

    pub fn full_rhs(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_shape(f, "full_rhs")?;
        let inv_eps = 1.0 / self.eps;
        let mut transport = self.diff.d_x.mul_dense(f);
        for (j, &mu) in self.quad.nodes.iter().enumerate() {
            transport.column_mut(j).scale_mut(-inv_eps * mu);
        }
        let rho2 = f * DVector::from_column_slice(&self.quad.weights) * 0.5;
        let mut out = transport;
        let c = inv_eps * inv_eps;
        for j in 0..self.n_mu() {
            for i in 0..self.n_x() {
                out[(i, j)] += c * (rho2[i] - f[(i, j)]);
            }
        }
        Ok(out)
    }

    /// `−(1/ε) diag(μ) ⊗ D_x + (1/ε²)(W_μᵀ ⊗ I − I)` on column-major `vec(F)`.
    pub fn full_operator(&self) -> KronOperator {
        KronOperator::circulant("full", self.circulant.clone(), self.mu_diag() * (-1.0 / self.eps), self.collision_block())
    }

    pub fn a_x_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_basis(x, &self.wx, self.n_x(), "X")?;
        let dx_x = self.diff.d_x.mul_dense(x);
        Ok(x.transpose() * scale_rows(&dx_x, self.wx.as_slice()))
    }

    /// `(B_μ, C_μ)` for an angular basis.
    pub fn angular_matrices(&self, v: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_basis(v, &self.wmu, self.n_mu(), "V")?;
        let mw: Vec<f64> = self.quad.nodes.iter().zip(&self.quad.weights).map(|(m, w)| m * w).collect();
        let b = v.transpose() * scale_rows(v, &mw);
        let vtw = v.transpose() * DVector::from_column_slice(&self.quad.weights);
        let c = &vtw * vtw.transpose() * 0.5;
        Ok((b, c))
    }

    pub fn assemble_substeps(&self, x: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<SubstepMatrices> {
        let a_x = self.a_x_matrix(x)?;
        let (b_mu, c_mu) = self.angular_matrices(v)?;
        Ok(SubstepMatrices { a_x, b_mu, c_mu })
    }

    fn check_basis(&self, q: &DMatrix<f64>, w: &WeightVector, rows: usize, name: &str) -> Result<()> {
        if q.nrows() != rows {
            return Err(RteError::invalid(format!("basis {name} has {} rows, expected {rows}", q.nrows())));
        }
        let defect = orthonormality_defect(q, w)?;
        if !(defect <= BASIS_TOLERANCE) {
            return Err(RteError::Precondition(format!(
                "basis {name} is not orthonormal in its weighted inner product (defect {defect:e})"
            )));
        }
        Ok(())
    }

    /// `−(1/ε) A_x ⊗ diag(μ) + (1/ε²)(I_r ⊗ W_μᵀ − I)` on `vec(V Sᵀ)`.
    pub fn operator_l(&self, a_x: &DMatrix<f64>) -> KronOperator {
        KronOperator::skew_slow("L-step", a_x * (-1.0 / self.eps), self.mu_diag(), self.collision_block())
    }

    /// `−(1/ε) B_μᵀ ⊗ D_x + (1/ε²)(C_μᵀ ⊗ I − I)` on `vec(K)`.
    pub fn operator_k(&self, b_mu: &DMatrix<f64>, c_mu: &DMatrix<f64>) -> KronOperator {
        let r = b_mu.nrows();
        let q = (c_mu.transpose() - DMatrix::identity(r, r)) / (self.eps * self.eps);
        KronOperator::circulant("K-step", self.circulant.clone(), b_mu.transpose() * (-1.0 / self.eps), q)
    }

    /// Matrix of the Galerkin coefficient map
    /// `S ↦ −(1/ε) A_x S B_μ + (1/ε²)(S C_μ − S)` on column-major `vec(S)`.
    pub fn galerkin_matrix(&self, sub: &SubstepMatrices) -> DMatrix<f64> {
        let r = sub.a_x.nrows();
        let transport = sub.b_mu.transpose().kronecker(&sub.a_x) * (-1.0 / self.eps);
        let collision = (sub.c_mu.transpose().kronecker(&DMatrix::identity(r, r)) - DMatrix::identity(r * r, r * r))
            / (self.eps * self.eps);
        transport + collision
    }

    /// `ρ = ½ F w_μ`.
    pub fn density(&self, f: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_shape(f, "density")?;
        Ok(f * DVector::from_column_slice(&self.quad.weights) * 0.5)
    }

    /// `exp((t/3) D_xx) ρ0`.
    pub fn diffusion_limit_density(&self, rho0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        if !(t >= 0.0) {
            return Err(RteError::invalid(format!("diffusion time must be non-negative, got {t}")));
        }
        if rho0.len() != self.n_x() {
            return Err(RteError::invalid(format!("density has length {}, expected {}", rho0.len(), self.n_x())));
        }
        if t == 0.0 {
            return Ok(rho0.clone());
        }
        // the heat flow conserves the mean exactly; only the fluctuation is
        // propagated, which keeps constants fixed to roundoff
        let mean = rho0.mean();
        let fluct = rho0.add_scalar(-mean);
        let out = if self.n_x() <= DEFAULT_DENSE_LIMIT {
            dense_expm(&(self.diff.d_xx.to_dense() * (t / 3.0)))? * fluct
        } else {
            let op = SparseOperator::new("diffusion", self.diff.d_xx.scaled(1.0 / 3.0));
            DVector::from_vec(expmv(&op, t, fluct.as_slice(), DEFAULT_EXPMV_TOL * 1e-2)?)
        };
        Ok(out.add_scalar(mean))
    }

    /// `dx · 1ᵀ F w_μ`.
    pub fn mass(&self, f: &DMatrix<f64>) -> f64 {
        let dx = self.grid.dx;
        let mut total = 0.0;
        for (j, w) in self.quad.weights.iter().enumerate() {
            total += w * f.column(j).sum();
        }
        dx * total
    }

    /// `⟨F, G⟩ = Σ dx w_j F_ij G_ij`.
    pub fn weighted_dot(&self, f: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for (j, w) in self.quad.weights.iter().enumerate() {
            total += w * f.column(j).dot(&g.column(j));
        }
        self.grid.dx * total
    }

    pub fn weighted_norm(&self, f: &DMatrix<f64>) -> f64 {
        self.weighted_dot(f, f).max(0.0).sqrt()
    }

    /// Norm of the part of `full_rhs(XSVᵀ)` that leaves the tangent space at
    /// the state, `‖(I − P_X) R (I − P_V)‖`.
    pub fn tangent_residual(&self, state: &LowRankState) -> Result<f64> {
        self.check_basis(&state.x, &self.wx, self.n_x(), "X")?;
        self.check_basis(&state.v, &self.wmu, self.n_mu(), "V")?;
        let f = state.reconstruct();
        let rhs = self.full_rhs(&f)?;
        let x = &state.x;
        let v = &state.v;
        let px = |z: &DMatrix<f64>| x * (x.transpose() * scale_rows(z, self.wx.as_slice()));
        let weighted_v = scale_rows(v, self.wmu.as_slice());
        let pv = |z: &DMatrix<f64>| z * &weighted_v * v.transpose();
        let left = &rhs - px(&rhs);
        let res = &left - pv(&left);
        Ok(self.weighted_norm(&res))
    }
}
