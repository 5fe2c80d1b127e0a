//! Low-rank states `F ≈ X S Vᵀ` with `X` orthonormal in `diag(dx)` and `V`
//! orthonormal in `diag(w_μ)`, plus error metrics against full matrices.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RteError};
use crate::linalg::weighted::{orthonormality_defect, weighted_singular_values, weighted_truncated_svd, WeightVector};
use crate::model::RteModel;

const HEADER: &str = "lowrank-state v1";

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankState {
    /// `n_x × r`
    pub x: DMatrix<f64>,
    /// `r × r`, generally not diagonal
    pub s: DMatrix<f64>,
    /// `n_mu × r`
    pub v: DMatrix<f64>,
}

impl LowRankState {
    pub fn new(x: DMatrix<f64>, s: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let r = s.nrows();
        if !s.is_square() || x.ncols() != r || v.ncols() != r || r == 0 {
            return Err(RteError::invalid(format!(
                "inconsistent factor shapes: x {}x{}, s {}x{}, v {}x{}",
                x.nrows(),
                x.ncols(),
                s.nrows(),
                s.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        Ok(LowRankState { x, s, v })
    }

    /// Best weighted rank-`r` approximation of `f` and the weighted norm of
    /// the discarded part.
    pub fn from_full(f: &DMatrix<f64>, r: usize, model: &RteModel) -> Result<(Self, f64)> {
        Self::from_full_weighted(f, r, model.wx(), model.wmu())
    }

    pub fn from_full_weighted(f: &DMatrix<f64>, r: usize, wx: &WeightVector, wmu: &WeightVector) -> Result<(Self, f64)> {
        let svd = weighted_truncated_svd(f, r, wx, wmu)?;
        let delta0 = svd.sigma[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
        Ok((LowRankState { x: svd.x, s: svd.s, v: svd.v }, delta0))
    }

    pub fn rank(&self) -> usize {
        self.s.nrows()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.x * &self.s * self.v.transpose()
    }

    /// Weighted norm of the reconstruction, which equals `‖S‖_F` for
    /// orthonormal factors.
    pub fn weighted_norm(&self) -> f64 {
        self.s.norm()
    }

    /// `(defect of X, defect of V)`.
    pub fn orthonormality_defects(&self, model: &RteModel) -> Result<(f64, f64)> {
        Ok((orthonormality_defect(&self.x, model.wx())?, orthonormality_defect(&self.v, model.wmu())?))
    }

    pub fn error_report(&self, reference: &DMatrix<f64>, model: &RteModel) -> Result<ErrorReport> {
        error_report(&self.reconstruct(), reference, model)
    }

    /// Writes the text checkpoint format described in the README.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut buf = String::new();
        writeln!(buf, "{HEADER}").unwrap();
        writeln!(buf, "n_x {} n_mu {} rank {}", self.x.nrows(), self.v.nrows(), self.rank()).unwrap();
        for (name, m) in [("x", &self.x), ("s", &self.s), ("v", &self.v)] {
            writeln!(buf, "{name}").unwrap();
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
                writeln!(buf, "{}", row.join(" ")).unwrap();
            }
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let bad = |msg: String| RteError::invalid(format!("state file: {msg}"));
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            match lines.next() {
                Some(l) => Ok(l?),
                None => Err(RteError::invalid("state file: unexpected end of input")),
            }
        };
        if next()?.trim() != HEADER {
            return Err(bad(format!("missing `{HEADER}` header")));
        }
        let dims = next()?;
        let tok: Vec<&str> = dims.split_whitespace().collect();
        if tok.len() != 6 || tok[0] != "n_x" || tok[2] != "n_mu" || tok[4] != "rank" {
            return Err(bad(format!("malformed dimension line `{dims}`")));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("dimension `{s}`: {e}")));
        let (n_x, n_mu, r) = (parse(tok[1])?, parse(tok[3])?, parse(tok[5])?);
        let mut block = |name: &str, rows: usize| -> Result<DMatrix<f64>> {
            let tag = next()?;
            if tag.trim() != name {
                return Err(bad(format!("expected block `{name}`, found `{tag}`")));
            }
            let mut m = DMatrix::zeros(rows, r);
            for i in 0..rows {
                let line = next()?;
                let vals: Vec<&str> = line.split_whitespace().collect();
                if vals.len() != r {
                    return Err(bad(format!("block `{name}` row {i} has {} entries, expected {r}", vals.len())));
                }
                for (j, v) in vals.iter().enumerate() {
                    m[(i, j)] = v.parse().map_err(|e| bad(format!("block `{name}` entry ({i},{j}): {e}")))?;
                }
            }
            Ok(m)
        };
        let x = block("x", n_x)?;
        let s = block("s", r)?;
        let v = block("v", n_mu)?;
        LowRankState::new(x, s, v)
    }
}

/// Errors of an approximation against a full reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `‖ρ_a − ρ_r‖_dx / ‖ρ_r‖_dx`
    pub rel_l2_density: f64,
    /// Weighted Frobenius analogue on the full distribution.
    pub rel_l2_full: f64,
    /// `dx 1ᵀ F w_μ` of the approximation.
    pub mass: f64,
    /// Weighted singular values of the reference, descending.
    pub sigma_spectrum: Vec<f64>,
}

pub fn error_report(approx: &DMatrix<f64>, reference: &DMatrix<f64>, model: &RteModel) -> Result<ErrorReport> {
    if approx.shape() != reference.shape() {
        return Err(RteError::invalid(format!(
            "approximation is {}x{} but reference is {}x{}",
            approx.nrows(),
            approx.ncols(),
            reference.nrows(),
            reference.ncols()
        )));
    }
    let rho_a = model.density(approx)?;
    let rho_r = model.density(reference)?;
    let ref_rho_norm = rho_r.norm();
    let ref_norm = model.weighted_norm(reference);
    if ref_rho_norm == 0.0 || ref_norm == 0.0 {
        return Err(RteError::DivisionGuard("reference has zero norm".into()));
    }
    // dx cancels in the density ratio
    let rel_l2_density = (&rho_a - &rho_r).norm() / ref_rho_norm;
    let rel_l2_full = model.weighted_norm(&(approx - reference)) / ref_norm;
    Ok(ErrorReport {
        rel_l2_density,
        rel_l2_full,
        mass: model.mass(approx),
        sigma_spectrum: weighted_singular_values(reference, model.wx(), model.wmu())?,
    })
}
