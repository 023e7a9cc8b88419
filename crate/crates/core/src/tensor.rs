//! Dense third-order tensor algebra.
//!
//! Storage convention: a tensor of shape `(I1, I2, I3)` keeps its entries in a
//! flat vector with the first index running fastest, i.e. entry `[a, b, c]`
//! lives at `a + I1 * (b + I2 * c)`. The mode-n unfoldings follow the same
//! rule: the row index enumerates the two remaining indices with the lower
//! mode fastest and the column index is the mode-n index, so that
//!
//! ```text
//! unfold(X, 1) = (C ⊙ B) diag(λ) Aᵀ      shape (I2·I3) × I1
//! unfold(X, 2) = (C ⊙ A) diag(λ) Bᵀ      shape (I1·I3) × I2
//! unfold(X, 3) = (B ⊙ A) diag(λ) Cᵀ      shape (I1·I2) × I3
//! ```
//!
//! for `X = reconstruct(λ, A, B, C)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the model tensor inside the KL divergence.
pub const KL_FLOOR: f64 = 1e-12;

/// Dense nonnegative tensor of order three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: [usize; 3],
    values: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            values: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Builds a tensor from values laid out first-index-fastest.
    pub fn from_values(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {dims:?}"
            )));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::DimensionMismatch(format!(
                "{} values for tensor of shape {dims:?}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "tensor entries must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn offset(&self, a: usize, b: usize, c: usize) -> usize {
        a + self.dims[0] * (b + self.dims[1] * c)
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.values[self.offset(a, b, c)]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// True when the entries sum to one within `tol`.
    pub fn is_probability(&self, tol: f64) -> bool {
        (self.sum() - 1.0).abs() <= tol
    }
}

/// Nonnegative matrix whose columns are typically discretized conditional PMFs.
/// Entries are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FactorMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "factor shape must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} factor",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "factor entries must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a factor from its columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch(
                "columns have different lengths".into(),
            ));
        }
        let mut values = vec![0.0; rows * cols];
        for (r, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * cols + r] = *v;
            }
        }
        Self::new(rows, cols, values)
    }

    /// Every column equal to `1 / rows`.
    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![1.0 / rows as f64; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, r: usize) -> f64 {
        self.values[i * self.cols + r]
    }

    pub fn column(&self, r: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, r)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.values.chunks_exact(self.cols) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn is_column_stochastic(&self, tol: f64) -> bool {
        self.column_sums().iter().all(|s| (s - 1.0).abs() <= tol)
    }

    /// Returns a copy with columns reordered so that new column `r` is old
    /// column `order[r]`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for (r, &src) in order.iter().enumerate() {
                values[i * self.cols + r] = self.get(i, src);
            }
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            values,
        }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Plain dense real matrix, row-major. Used for unfoldings and Khatri-Rao products.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    /// `self · diag(weights) · otherᵀ`.
    pub fn scaled_product_transpose(&self, weights: &[f64], other: &FactorMatrix) -> Result<Matrix> {
        if self.cols != weights.len() || other.cols() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "inner dimensions {} / {} / {}",
                self.cols,
                weights.len(),
                other.cols()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows());
        for i in 0..self.rows {
            for j in 0..other.rows() {
                let v = (0..self.cols)
                    .map(|r| self.get(i, r) * weights[r] * other.get(j, r))
                    .sum();
                out.set(i, j, v);
            }
        }
        Ok(out)
    }
}

fn check_rank(weights: &[f64], factors: &[&FactorMatrix]) -> Result<usize> {
    let rank = weights.len();
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    for f in factors {
        if f.cols() != rank {
            return Err(Error::DimensionMismatch(format!(
                "factor has {} columns but the weight vector has length {rank}",
                f.cols()
            )));
        }
    }
    Ok(rank)
}

/// `Y[a,b,c] = Σ_r λ[r] A[a,r] B[b,r] C[c,r]`.
pub fn reconstruct(
    weights: &[f64],
    a: &FactorMatrix,
    b: &FactorMatrix,
    c: &FactorMatrix,
) -> Result<Tensor3> {
    check_rank(weights, &[a, b, c])?;
    let mut out = Tensor3::zeros([a.rows(), b.rows(), c.rows()]);
    let mut scratch = vec![0.0; weights.len()];
    reconstruct_into(weights, a, b, c, &mut scratch, out.values_mut());
    Ok(out)
}

/// Unchecked reconstruction into a caller-owned buffer; `scratch` has length R.
pub(crate) fn reconstruct_into(
    weights: &[f64],
    a: &FactorMatrix,
    b: &FactorMatrix,
    c: &FactorMatrix,
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let rank = weights.len();
    let (i1, i2, i3) = (a.rows(), b.rows(), c.rows());
    let av = a.values();
    for ic in 0..i3 {
        for ib in 0..i2 {
            for r in 0..rank {
                scratch[r] = weights[r] * b.get(ib, r) * c.get(ic, r);
            }
            let base = i1 * (ib + i2 * ic);
            for ia in 0..i1 {
                let row = &av[ia * rank..(ia + 1) * rank];
                out[base + ia] = row.iter().zip(scratch.iter()).map(|(x, y)| x * y).sum();
            }
        }
    }
}

/// Columnwise Kronecker product. Column `r` of the result is
/// `B[:,r] ⊗ A[:,r]`, so row `b * I1 + a` holds `B[b,r] A[a,r]`.
pub fn khatri_rao(b: &FactorMatrix, a: &FactorMatrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "Khatri-Rao operands have {} and {} columns",
            b.cols(),
            a.cols()
        )));
    }
    let rank = a.cols();
    let mut out = Matrix::zeros(a.rows() * b.rows(), rank);
    for ib in 0..b.rows() {
        for ia in 0..a.rows() {
            for r in 0..rank {
                out.set(ib * a.rows() + ia, r, b.get(ib, r) * a.get(ia, r));
            }
        }
    }
    Ok(out)
}

/// Mode-n unfolding (`mode` in 1..=3), see the module docs for the layout.
pub fn unfold(x: &Tensor3, mode: usize) -> Result<Matrix> {
    let [i1, i2, i3] = x.dims();
    let mut out = match mode {
        1 => Matrix::zeros(i2 * i3, i1),
        2 => Matrix::zeros(i1 * i3, i2),
        3 => Matrix::zeros(i1 * i2, i3),
        m => return Err(Error::InvalidMode(m)),
    };
    for c in 0..i3 {
        for b in 0..i2 {
            for a in 0..i1 {
                let v = x.get(a, b, c);
                match mode {
                    1 => out.set(b + i2 * c, a, v),
                    2 => out.set(a + i1 * c, b, v),
                    _ => out.set(a + i1 * b, c, v),
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn refold(m: &Matrix, mode: usize, dims: [usize; 3]) -> Result<Tensor3> {
    let [i1, i2, i3] = dims;
    let expected = match mode {
        1 => (i2 * i3, i1),
        2 => (i1 * i3, i2),
        3 => (i1 * i2, i3),
        m => return Err(Error::InvalidMode(m)),
    };
    if (m.rows(), m.cols()) != expected {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix cannot be refolded along mode {mode} into {dims:?}",
            m.rows(),
            m.cols()
        )));
    }
    let mut out = Tensor3::zeros(dims);
    for c in 0..i3 {
        for b in 0..i2 {
            for a in 0..i1 {
                let v = match mode {
                    1 => m.get(b + i2 * c, a),
                    2 => m.get(a + i1 * c, b),
                    _ => m.get(a + i1 * b, c),
                };
                let off = out.offset(a, b, c);
                out.values_mut()[off] = v;
            }
        }
    }
    Ok(out)
}

fn check_same_dims(x: &Tensor3, y: &Tensor3) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::DimensionMismatch(format!(
            "tensor shapes {:?} and {:?}",
            x.dims(),
            y.dims()
        )));
    }
    Ok(())
}

/// `Σ X log(X / Y)`, skipping cells with `X = 0` and flooring `Y` at [`KL_FLOOR`].
pub fn kl_div(x: &Tensor3, y: &Tensor3) -> Result<f64> {
    check_same_dims(x, y)?;
    Ok(kl_terms(x.values(), y.values()))
}

#[inline]
pub(crate) fn kl_terms(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .filter(|(xv, _)| **xv > 0.0)
        .map(|(xv, yv)| xv * (xv / yv.max(KL_FLOOR)).ln())
        .sum()
}

/// `Σ (X - Y)²`.
pub fn fro_div(x: &Tensor3, y: &Tensor3) -> Result<f64> {
    check_same_dims(x, y)?;
    Ok(fro_terms(x.values(), y.values()))
}

#[inline]
pub(crate) fn fro_terms(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}
