//! Linear algebra in the diagonally weighted inner products `⟨a, b⟩_w = aᵀ diag(w) b`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RteError};
use crate::linalg::svd::thin_svd;

/// Strictly positive weights of a diagonal inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some((i, w)) = entries.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(RteError::invalid(format!("weight {i} is {w}, weights must be positive")));
        }
        Ok(WeightVector(entries))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn sqrt(&self) -> Vec<f64> {
        self.0.iter().map(|w| w.sqrt()).collect()
    }
}

/// Scales row `i` of `m` by `s[i]`.
pub(crate) fn scale_rows(m: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        for (i, si) in s.iter().enumerate() {
            out[(i, j)] *= si;
        }
    }
    out
}

/// `aᵀ · diag(w) · b`.
pub fn weighted_inner(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &WeightVector) -> Result<DMatrix<f64>> {
    if a.nrows() != w.len() || b.nrows() != w.len() {
        return Err(RteError::invalid(format!(
            "weighted inner product of {}-row and {}-row matrices with {} weights",
            a.nrows(),
            b.nrows(),
            w.len()
        )));
    }
    Ok(a.tr_mul(&scale_rows(b, w.as_slice())))
}

/// `‖qᵀ diag(w) q − I‖_max`.
pub fn orthonormality_defect(q: &DMatrix<f64>, w: &WeightVector) -> Result<f64> {
    let g = weighted_inner(q, q, w)?;
    Ok((g - DMatrix::identity(q.ncols(), q.ncols())).amax())
}

/// Weighted QR factors `a = q · r_factor` with `qᵀ diag(w) q = I`.
#[derive(Debug, Clone)]
pub struct QrResult {
    pub q: DMatrix<f64>,
    pub r_factor: DMatrix<f64>,
    /// Columns whose residual after projection fell below the rank threshold;
    /// the matching columns of `q` are fill-in vectors.
    pub replaced_columns: Vec<usize>,
    /// Seed of the fill-in vector stream.
    pub seed: u64,
    /// Whether the Householder prepass was taken.
    pub householder_prepass: bool,
}

pub const DEFAULT_MGS_SEED: u64 = 0x6a09_e667_f3bc_c908;

#[derive(Debug, Clone, Copy)]
pub struct MgsOptions {
    /// Relative rank-deficiency threshold.
    pub tau: f64,
    pub seed: u64,
    /// Estimated condition number above which the Householder prepass runs.
    pub condition_limit: f64,
}

impl Default for MgsOptions {
    fn default() -> Self {
        MgsOptions { tau: 1e-10, seed: DEFAULT_MGS_SEED, condition_limit: 1e8 }
    }
}

pub fn weighted_mgs(a: &DMatrix<f64>, w: &WeightVector) -> Result<QrResult> {
    weighted_mgs_with(a, w, MgsOptions::default())
}

/// Two-pass modified Gram–Schmidt in the `w`-inner product.
///
/// Columns are first normalized. A column whose residual after projection is
/// below `tau` times its original norm (absolute floor `f64::MIN_POSITIVE`)
/// is replaced by a vector from a seeded stream, orthonormalized against the
/// others; its row of `r_factor` keeps the tiny true projections. When the
/// retained columns look worse conditioned than `condition_limit`, the
/// orthogonalization is run on the Householder `Q` factor instead.
pub fn weighted_mgs_with(a: &DMatrix<f64>, w: &WeightVector, opts: MgsOptions) -> Result<QrResult> {
    let (m, r) = a.shape();
    if w.len() != m {
        return Err(RteError::invalid(format!("MGS of {m}-row matrix with {} weights", w.len())));
    }
    if r == 0 || m < r {
        return Err(RteError::invalid(format!("MGS needs m ≥ r ≥ 1, got {m}x{r}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(RteError::NumericalFailure {
            operator: "weighted_mgs".into(),
            t: 0.0,
            detail: "input contains non-finite entries".into(),
        });
    }
    let sw = w.sqrt();
    let b = scale_rows(a, &sw);
    let norms: Vec<f64> = b.column_iter().map(|c| c.norm()).collect();
    if let Some(j) = norms.iter().position(|n| !n.is_finite()) {
        return Err(RteError::NumericalFailure {
            operator: "weighted_mgs".into(),
            t: 0.0,
            detail: format!("norm of column {j} overflows"),
        });
    }
    let mut unit = b.clone();
    for (j, &n) in norms.iter().enumerate() {
        if n > 0.0 {
            unit.column_mut(j).scale_mut(1.0 / n);
        }
    }

    let (mut qt, mut rt, replaced) = two_pass_mgs(&unit, opts);
    let min_retained = (0..r).filter(|j| !replaced.contains(j)).map(|j| rt[(j, j)].abs()).fold(f64::INFINITY, f64::min);
    let mut householder_prepass = false;
    if min_retained.is_finite() && 1.0 / min_retained > opts.condition_limit {
        householder_prepass = true;
        let qr = unit.clone().qr();
        let qh = qr.q();
        let rh = qr.r();
        let (q2, r2, _) = two_pass_mgs(&qh, opts);
        qt = q2;
        rt = r2 * rh;
    }

    let mut r_factor = rt;
    for (j, &n) in norms.iter().enumerate() {
        r_factor.column_mut(j).scale_mut(n);
    }
    let inv_sw: Vec<f64> = sw.iter().map(|s| 1.0 / s).collect();
    let q = scale_rows(&qt, &inv_sw);
    Ok(QrResult { q, r_factor, replaced_columns: replaced, seed: opts.seed, householder_prepass })
}

/// Unweighted two-pass MGS on columns of unit (or zero) norm.
fn two_pass_mgs(unit: &DMatrix<f64>, opts: MgsOptions) -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>) {
    let (m, r) = unit.shape();
    let mut q = DMatrix::<f64>::zeros(m, r);
    let mut rf = DMatrix::<f64>::zeros(r, r);
    let mut replaced = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for j in 0..r {
        let mut v = unit.column(j).clone_owned();
        for _pass in 0..2 {
            for i in 0..j {
                let c = q.column(i).dot(&v);
                v.axpy(-c, &q.column(i), 1.0);
                rf[(i, j)] += c;
            }
        }
        let nu = v.norm();
        if nu >= opts.tau {
            rf[(j, j)] = nu;
            q.set_column(j, &(v / nu));
            continue;
        }
        replaced.push(j);
        let fill = loop {
            let mut z = nalgebra::DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            for _pass in 0..2 {
                for i in 0..j {
                    let c = q.column(i).dot(&z);
                    z.axpy(-c, &q.column(i), 1.0);
                }
            }
            let zn = z.norm();
            if zn > 1e-3 {
                break z / zn;
            }
        };
        rf[(j, j)] = fill.dot(&v);
        q.set_column(j, &fill);
    }
    (q, rf, replaced)
}

/// Best rank-`r` approximation in the weighted Frobenius norm.
#[derive(Debug, Clone)]
pub struct WeightedSvd {
    /// `n_x × r`, orthonormal in `wx`.
    pub x: DMatrix<f64>,
    /// `r × r` diagonal, nonincreasing.
    pub s: DMatrix<f64>,
    /// `n_mu × r`, orthonormal in `wmu`.
    pub v: DMatrix<f64>,
    /// Full weighted spectrum, descending.
    pub sigma: Vec<f64>,
    /// `σ_{r+1}`, or 0 when `r` is the full rank.
    pub sigma_tail: f64,
}

/// Full weighted singular values of `f`, descending.
pub fn weighted_singular_values(f: &DMatrix<f64>, wx: &WeightVector, wmu: &WeightVector) -> Result<Vec<f64>> {
    check_svd_shapes(f, wx, wmu)?;
    let g = scale_rows(&scale_rows(f, &wx.sqrt()).transpose(), &wmu.sqrt());
    Ok(thin_svd(&g).sigma)
}

fn check_svd_shapes(f: &DMatrix<f64>, wx: &WeightVector, wmu: &WeightVector) -> Result<()> {
    if f.nrows() != wx.len() || f.ncols() != wmu.len() {
        return Err(RteError::invalid(format!(
            "{}x{} matrix with {} row and {} column weights",
            f.nrows(),
            f.ncols(),
            wx.len(),
            wmu.len()
        )));
    }
    Ok(())
}

pub fn weighted_truncated_svd(f: &DMatrix<f64>, r: usize, wx: &WeightVector, wmu: &WeightVector) -> Result<WeightedSvd> {
    check_svd_shapes(f, wx, wmu)?;
    let full = f.nrows().min(f.ncols());
    if r == 0 || r > full {
        return Err(RteError::invalid(format!("rank {r} outside 1..={full}")));
    }
    let swx = wx.sqrt();
    let swmu = wmu.sqrt();
    let mut g = scale_rows(f, &swx);
    for (j, s) in swmu.iter().enumerate() {
        g.column_mut(j).scale_mut(*s);
    }
    let svd = thin_svd(&g);
    let sigma = svd.sigma;

    let mut x = DMatrix::zeros(f.nrows(), r);
    let mut v = DMatrix::zeros(f.ncols(), r);
    for col in 0..r {
        let mut xc: Vec<f64> = (0..f.nrows()).map(|i| svd.u[(i, col)] / swx[i]).collect();
        let mut vc: Vec<f64> = (0..f.ncols()).map(|i| svd.v[(i, col)] / swmu[i]).collect();
        let peak = xc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(first) = xc.iter().find(|v| v.abs() > 1e-12 * peak) {
            if *first < 0.0 {
                xc.iter_mut().for_each(|v| *v = -*v);
                vc.iter_mut().for_each(|v| *v = -*v);
            }
        }
        x.set_column(col, &nalgebra::DVector::from_vec(xc));
        v.set_column(col, &nalgebra::DVector::from_vec(vc));
    }
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(r, sigma.iter().take(r).copied()));
    let sigma_tail = sigma.get(r).copied().unwrap_or(0.0);
    Ok(WeightedSvd { x, s, v, sigma, sigma_tail })
}
