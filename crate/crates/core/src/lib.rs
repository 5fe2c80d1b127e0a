//! Dynamical low-rank time integration of the scaled 1x1v radiative transfer
//! equation
//!
//! ```text
//!     ∂t f + (1/ε) μ ∂x f = (1/ε²) (ρ − f),    ρ = ½ ∫ f dμ,
//! ```
//!
//! on a periodic interval with Gauss–Legendre collocation in angle.
//!
//! The crate provides the Galerkin Alternating Projection integrator
//! ([`integrators::gap_step`]) together with the projector-splitting
//! ([`integrators::psi_step`]) and basis-update Galerkin
//! ([`integrators::bug_step`]) baselines, a full-rank reference solver, and
//! the experiment drivers behind the `rte` command-line tool.
//!
//! Layout:
//!
//! - [`grid`]: spatial grid, periodic difference matrices, angular quadrature
//! - [`linalg`]: weighted inner products, Gram–Schmidt, truncated SVD,
//!   matrix exponentials and their action on vectors
//! - [`model`]: the discrete transport operator and its Kronecker substep
//!   operators
//! - [`state`]: the `X·S·Vᵀ` factorization and error metrics
//! - [`integrators`]: one-step maps and the time loop
//! - [`experiments`]: config-driven runs and sweeps

pub mod error;
pub mod experiments;
pub mod grid;
pub mod integrators;
pub mod linalg;
pub mod model;
pub mod state;

pub use error::{Result, RteError};
pub use grid::{build_diff_matrices, gauss_legendre, uniform_grid, AngularQuadrature, DiffMatrices, SpatialGrid};
pub use integrators::{
    bug_step, gap_step, integrate, psi_step, reference_step, Initial, IntegrationOutput, Scheme, StepConfig,
    SubstepSolver,
};
pub use model::{RteModel, SubstepMatrices};
pub use state::{ErrorReport, LowRankState};
