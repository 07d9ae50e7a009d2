//! Dense multiway arrays and the handful of multilinear kernels the solver
//! is built on: mode unfolding, mode products, Khatri–Rao products, the
//! Hadamard-of-Grams identity and MTTKRP.
//!
//! Storage is row-major ("C order"): the last index varies fastest. Mode
//! unfoldings follow the Kolda–Bader convention, where the column index is
//! built from the remaining indices with the *earlier* modes varying fastest.
//! Modes are zero-based throughout.

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{shape_err, MpbError, Result};

/// Dense `f64` matrix used for every 2-D quantity in the crate.
pub type Matrix = DMatrix<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return shape_err("a tensor needs at least one mode");
        }
        if dims.contains(&0) {
            return shape_err(format!("all dims must be positive, got {dims:?}"));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return shape_err(format!(
                "data length {} does not match dims {dims:?} (expected {len})",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![0.0; len])
    }

    /// Builds a tensor by calling `f` on every multi-index in storage order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, &dims);
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.dims != other.dims {
            return shape_err(format!("dims {:?} vs {:?}", self.dims, other.dims));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        DenseTensor::new(self.dims.clone(), data)
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.dims != other.dims {
            return shape_err(format!("dims {:?} vs {:?}", self.dims, other.dims));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        DenseTensor::new(self.dims.clone(), data)
    }

    /// Size of the last mode (the subject mode for observation tensors).
    pub fn last_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    /// Keeps the given slices of the last mode, in the given order.
    pub fn select_last(&self, indices: &[usize]) -> Result<DenseTensor> {
        let n = self.last_dim();
        if indices.is_empty() || indices.iter().any(|&i| i >= n) {
            return shape_err(format!("invalid last-mode selection {indices:?} of {n}"));
        }
        let rows = self.len() / n;
        let mut data = Vec::with_capacity(rows * indices.len());
        for r in 0..rows {
            let row = &self.data[r * n..(r + 1) * n];
            data.extend(indices.iter().map(|&i| row[i]));
        }
        let mut dims = self.dims.clone();
        *dims.last_mut().unwrap() = indices.len();
        DenseTensor::new(dims, data)
    }

    /// Mean over the last mode, returned with the last mode dropped
    /// (or kept with size one when the tensor has a single mode).
    pub fn mean_over_last(&self) -> DenseTensor {
        let n = self.last_dim();
        let rows = self.len() / n;
        let data: Vec<f64> = (0..rows)
            .map(|r| self.data[r * n..(r + 1) * n].iter().sum::<f64>() / n as f64)
            .collect();
        let dims = if self.ndim() > 1 {
            self.dims[..self.ndim() - 1].to_vec()
        } else {
            vec![1]
        };
        DenseTensor { dims, data }
    }

    /// Adds (`sign = 1`) or subtracts (`sign = -1`) a tensor broadcast over the last mode.
    pub fn broadcast_last(&self, other: &DenseTensor, sign: f64) -> Result<DenseTensor> {
        let n = self.last_dim();
        let rows = self.len() / n;
        if other.len() != rows || other.dims() != &self.dims[..self.ndim() - 1] {
            return shape_err(format!(
                "cannot broadcast {:?} over the last mode of {:?}",
                other.dims, self.dims
            ));
        }
        let mut data = self.data.clone();
        for (r, &m) in other.data.iter().enumerate() {
            for v in &mut data[r * n..(r + 1) * n] {
                *v += sign * m;
            }
        }
        DenseTensor::new(self.dims.clone(), data)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.ndim() {
            return Err(MpbError::ModeOutOfRange { mode, ndim: self.ndim() });
        }
        Ok(())
    }

    /// Sizes (left, n, right) of the row-major view `(prod dims[..mode], dims[mode], prod dims[mode+1..])`.
    fn split_at_mode(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.dims[..mode].iter().product();
        let right = self.dims[mode + 1..].iter().product();
        (left, self.dims[mode], right)
    }

    /// Mode-`mode` unfolding: an `n_mode x prod(other dims)` matrix.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        self.check_mode(mode)?;
        let strides = kolda_strides(&self.dims, mode);
        let cols = self.len() / self.dims[mode];
        let mut out = Matrix::zeros(self.dims[mode], cols);
        let mut idx = vec![0usize; self.ndim()];
        for &v in &self.data {
            let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out[(idx[mode], col)] = v;
            increment(&mut idx, &self.dims);
        }
        Ok(out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &Matrix, mode: usize, dims: &[usize]) -> Result<DenseTensor> {
        if mode >= dims.len() {
            return Err(MpbError::ModeOutOfRange { mode, ndim: dims.len() });
        }
        let len: usize = dims.iter().product();
        if m.nrows() != dims[mode] || m.nrows() * m.ncols() != len {
            return shape_err(format!(
                "{}x{} matrix cannot fold into {dims:?} along mode {mode}",
                m.nrows(),
                m.ncols()
            ));
        }
        let strides = kolda_strides(dims, mode);
        DenseTensor::from_fn(dims.to_vec(), |idx| {
            let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            m[(idx[mode], col)]
        })
    }

    /// Mode product `self x_mode m`; `m` must have `dims[mode]` columns.
    pub fn mode_multiply(&self, m: &Matrix, mode: usize) -> Result<DenseTensor> {
        self.check_mode(mode)?;
        let (left, n, right) = self.split_at_mode(mode);
        if m.ncols() != n {
            return shape_err(format!(
                "mode-{mode} product needs {n} columns, matrix is {}x{}",
                m.nrows(),
                m.ncols()
            ));
        }
        let rows = m.nrows();
        let mut dims = self.dims.clone();
        dims[mode] = rows;
        let mut out = vec![0.0; left * rows * right];
        if right == 1 {
            // out (left x rows, row-major) = T (left x n) * m'
            let t_t = DMatrixView::from_slice(&self.data, n, left);
            let res = m * t_t;
            out.copy_from_slice(res.as_slice());
        } else {
            let m_t = m.transpose();
            for l in 0..left {
                let block = &self.data[l * n * right..(l + 1) * n * right];
                let block_t = DMatrixView::from_slice(block, right, n);
                let res = block_t * &m_t;
                out[l * rows * right..(l + 1) * rows * right].copy_from_slice(res.as_slice());
            }
        }
        DenseTensor::new(dims, out)
    }
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for k in (0..dims.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

fn kolda_strides(dims: &[usize], mode: usize) -> Vec<usize> {
    let mut strides = vec![0usize; dims.len()];
    let mut acc = 1;
    for (k, &n) in dims.iter().enumerate() {
        if k != mode {
            strides[k] = acc;
            acc *= n;
        }
    }
    strides
}

fn common_cols(mats: &[&Matrix]) -> Result<usize> {
    let first = mats
        .first()
        .ok_or_else(|| MpbError::InvalidArgument("empty matrix list".into()))?;
    let k = first.ncols();
    if let Some(bad) = mats.iter().find(|m| m.ncols() != k) {
        return shape_err(format!(
            "column count mismatch: {} vs {}",
            k,
            bad.ncols()
        ));
    }
    Ok(k)
}

/// Column-wise Kronecker product; the first matrix's row index varies slowest.
pub fn khatri_rao(mats: &[&Matrix]) -> Result<Matrix> {
    let k = common_cols(mats)?;
    let mut acc = mats[0].clone();
    for m in &mats[1..] {
        let rows = acc.nrows() * m.nrows();
        let mut next = Matrix::zeros(rows, k);
        for c in 0..k {
            for i in 0..acc.nrows() {
                let a = acc[(i, c)];
                for j in 0..m.nrows() {
                    next[(i * m.nrows() + j, c)] = a * m[(j, c)];
                }
            }
        }
        acc = next;
    }
    Ok(acc)
}

/// `khatri_rao(mats)' * khatri_rao(mats)` as the Hadamard product of the
/// per-factor Gram matrices.
pub fn gram_of_khatri_rao(mats: &[&Matrix]) -> Result<Matrix> {
    let k = common_cols(mats)?;
    let mut out = Matrix::from_element(k, k, 1.0);
    for m in mats {
        out.component_mul_assign(&m.tr_mul(m));
    }
    Ok(out)
}

/// Matricized tensor times Khatri–Rao product for `mode`.
///
/// `factors` holds one matrix per mode other than `mode`, in mode order; each
/// must have as many rows as the corresponding tensor dimension. The result
/// equals `t.unfold(mode) * khatri_rao(reversed factors)` without forming the
/// full Khatri–Rao product.
pub fn mttkrp(t: &DenseTensor, factors: &[&Matrix], mode: usize) -> Result<Matrix> {
    t.check_mode(mode)?;
    if factors.len() + 1 != t.ndim() {
        return shape_err(format!(
            "mttkrp on a {}-mode tensor needs {} factors, got {}",
            t.ndim(),
            t.ndim() - 1,
            factors.len()
        ));
    }
    let k = common_cols(factors)?;
    for (j, f) in factors.iter().enumerate() {
        let tmode = if j < mode { j } else { j + 1 };
        if f.nrows() != t.dims[tmode] {
            return shape_err(format!(
                "factor for mode {tmode} has {} rows, tensor dim is {}",
                f.nrows(),
                t.dims[tmode]
            ));
        }
    }
    let (left, n, right) = t.split_at_mode(mode);
    let left_kr = partial_kr(&factors[..mode], k)?;
    let right_kr = partial_kr(&factors[mode..], k)?;

    if right == 1 {
        // trailing modes of size 1 still carry factor values
        let t_t = DMatrixView::from_slice(&t.data, n, left);
        let mut out = t_t * left_kr;
        for c in 0..k {
            out.column_mut(c).scale_mut(right_kr[(0, c)]);
        }
        return Ok(out);
    }
    let mut out = Matrix::zeros(n, k);
    for l in 0..left {
        let block = &t.data[l * n * right..(l + 1) * n * right];
        let block_t = DMatrixView::from_slice(block, right, n);
        let tmp = block_t.tr_mul(&right_kr);
        for c in 0..k {
            out.column_mut(c).axpy(left_kr[(l, c)], &tmp.column(c), 1.0);
        }
    }
    Ok(out)
}

fn partial_kr(mats: &[&Matrix], k: usize) -> Result<Matrix> {
    if mats.is_empty() {
        Ok(Matrix::from_element(1, k, 1.0))
    } else {
        khatri_rao(mats)
    }
}

/// Sum of outer products of matching factor columns; tensor dims are the
/// factor row counts.
pub fn cp_reconstruct(factors: &[&Matrix]) -> Result<DenseTensor> {
    common_cols(factors)?;
    let dims: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
    let (last, rest) = factors.split_last().unwrap();
    if rest.is_empty() {
        let data = last.column_sum().as_slice().to_vec();
        return DenseTensor::new(dims, data);
    }
    let kr = khatri_rao(rest)?;
    // (last * kr') is column-major n_last x rows, i.e. row-major rows x n_last
    let res = *last * kr.transpose();
    DenseTensor::new(dims, res.as_slice().to_vec())
}

/// Frobenius inner product of two equally shaped tensors.
pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.dims != b.dims {
        return shape_err(format!("dims {:?} vs {:?}", a.dims, b.dims));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}
