//! Numerical kernels shared by every integrator substep.

pub mod expm;
pub mod expmv;
pub mod sparse;
pub mod svd;
pub mod weighted;

pub use expm::{dense_expm, dense_expm_with_limit, DEFAULT_DENSE_LIMIT};
pub use expmv::{expmv, gmres, DEFAULT_EXPMV_TOL};
pub use sparse::{CsrMatrix, DenseOperator, LinearOperator, SparseOperator};
pub use svd::{thin_svd, ThinSvd};
pub use weighted::{
    orthonormality_defect, weighted_inner, weighted_mgs, weighted_mgs_with, weighted_singular_values,
    weighted_truncated_svd, MgsOptions, QrResult, WeightVector, WeightedSvd,
};
