//! Compressed-row sparse matrices and the linear-operator abstraction used by
//! the exponential and linear solvers.

use nalgebra::DMatrix;

/// Real CSR matrix. Column indices within a row are sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|t| t.2 != 0.0);
        let mut row_ptr = vec![0usize; n_rows + 1];
        for t in &merged {
            row_ptr[t.0 + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = merged.iter().map(|t| t.1).collect();
        let values = merged.iter().map(|t| t.2).collect();
        CsrMatrix { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut trip = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    trip.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trip)
    }

    pub fn nrows(&self) -> usize {
        self.n_rows
    }

    pub fn ncols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates the stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            out.extend(self.row(i).map(|(j, v)| (i, j, v)));
        }
        out
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `self · m` for a dense right-hand side.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.n_cols);
        let mut out = DMatrix::zeros(self.n_rows, m.ncols());
        for j in 0..m.ncols() {
            let col = m.column(j);
            for i in 0..self.n_rows {
                let mut acc = 0.0;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += self.values[k] * col[self.col_idx[k]];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.n_cols, self.n_rows, &trip)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// First column as a dense vector (the generating column of a circulant).
    pub fn first_column(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_rows];
        for (i, c_i) in c.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                if j == 0 {
                    *c_i = v;
                }
            }
        }
        c
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn add(&self, other: &CsrMatrix) -> Self {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut trip = self.triplets();
        trip.extend(other.triplets());
        Self::from_triplets(self.n_rows, self.n_cols, &trip)
    }

    /// Kronecker product `a ⊗ b`.
    pub fn kron(a: &CsrMatrix, b: &CsrMatrix) -> Self {
        let mut trip = Vec::with_capacity(a.nnz() * b.nnz());
        for (ia, ja, va) in a.triplets() {
            for (ib, jb, vb) in b.triplets() {
                trip.push((ia * b.n_rows + ib, ja * b.n_cols + jb, va * vb));
            }
        }
        Self::from_triplets(a.n_rows * b.n_rows, a.n_cols * b.n_cols, &trip)
    }

    pub fn norm_one(&self) -> f64 {
        let mut cols = vec![0.0; self.n_cols];
        for (_, j, v) in self.triplets() {
            cols[j] += v.abs();
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n_rows).map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// A square real linear map exposed through its action on vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y ← A x`.
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// Name used in diagnostics.
    fn label(&self) -> &str {
        "operator"
    }

    /// Upper estimate of the 2-norm used to choose Taylor substeps.
    fn norm_estimate(&self) -> f64 {
        power_norm_estimate(self, 8)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }
}

/// Power iteration: repeatedly applies `A` to a fixed
/// start vector and returns the largest observed growth factor, inflated by 2
/// since the ratio is a lower bound of the norm.
pub fn power_norm_estimate<A: LinearOperator + ?Sized>(op: &A, iterations: usize) -> f64 {
    let n = op.dim();
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
    let mut best: f64 = 0.0;
    let mut w = vec![0.0; n];
    for _ in 0..iterations {
        let nv = norm2(&v);
        if nv == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        op.apply_into(&v, &mut w);
        let nw = norm2(&w);
        best = best.max(nw);
        std::mem::swap(&mut v, &mut w);
    }
    2.0 * best
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// An explicitly assembled sparse operator.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    label: String,
    matrix: CsrMatrix,
}

impl SparseOperator {
    pub fn new(label: impl Into<String>, matrix: CsrMatrix) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "operator must be square");
        SparseOperator { label: label.into(), matrix }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec_into(x, y)
    }

    fn label(&self) -> &str {
        &self.label
    }

    /// `‖A‖₂ ≤ sqrt(‖A‖₁ ‖A‖∞)`.
    fn norm_estimate(&self) -> f64 {
        (self.matrix.norm_one() * self.matrix.norm_inf()).sqrt()
    }
}

/// A dense operator, used for the small coefficient-matrix flows.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    label: String,
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(label: impl Into<String>, matrix: DMatrix<f64>) -> Self {
        assert!(matrix.is_square());
        DenseOperator { label: label.into(), matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        for (i, yi) in y.iter_mut().enumerate().take(n) {
            *yi = (0..n).map(|j| self.matrix[(i, j)] * x[j]).sum();
        }
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn norm_estimate(&self) -> f64 {
        let one = (0..self.dim()).map(|j| self.matrix.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let inf = (0..self.dim()).map(|i| self.matrix.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        (one * inf).sqrt()
    }
}
