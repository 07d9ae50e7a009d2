//! Isometric compression of gridded observations onto the column spaces of
//! the basis evaluation matrices, plus the matching penalty transform.
//!
//! With `Phi_d = U_d diag(s_d) V_d'`, the fitting problem on the raw grid is
//! equivalent to one on the compressed tensor `Y x_1 U_1' ... x_D U_D'` in
//! the rotated coordinates `C~_d = diag(s_d) V_d' C_d`.

use nalgebra::{DVector, SVD};

use crate::basis::symmetrize;
use crate::error::{shape_err, MpbError, Result};
use crate::tensor::{DenseTensor, Matrix};

/// Smallest admissible ratio of the smallest to the largest singular value.
pub const RANK_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct MarginalFactorization {
    /// `n x m` with orthonormal columns.
    pub u: Matrix,
    /// Singular values, nonincreasing.
    pub s: DVector<f64>,
    /// `m x m` orthogonal.
    pub v: Matrix,
}

/// Thin SVD of a basis evaluation matrix. `dim` only labels errors.
pub fn factorize(phi: &Matrix, dim: usize) -> Result<MarginalFactorization> {
    let (n, m) = phi.shape();
    if n < m {
        return shape_err(format!(
            "dimension {dim}: grid has {n} points but the basis has rank {m}; need at least as many points"
        ));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(MpbError::NonFinite(format!("basis evaluation for dimension {dim}")));
    }
    let svd = SVD::new(phi.clone(), true, true);
    let u = svd.u.ok_or_else(|| MpbError::Numerical("SVD did not return U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| MpbError::Numerical("SVD did not return V".into()))?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = DVector::from_iterator(m, order.iter().map(|&i| svd.singular_values[i]));
    let u = Matrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let v = Matrix::from_columns(&order.iter().map(|&i| v_t.row(i).transpose()).collect::<Vec<_>>());
    let ratio = if s[0] > 0.0 { s[m - 1] / s[0] } else { 0.0 };
    if ratio < RANK_THRESHOLD {
        return Err(MpbError::RankDeficient { dim, ratio });
    }
    Ok(MarginalFactorization { u, s, v })
}

impl MarginalFactorization {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// `T = diag(s)^-1 V' R V diag(s)^-1`, so that `tr(C~' T C~) = tr(C' R C)`.
    pub fn penalty_transform(&self, r: &Matrix) -> Result<Matrix> {
        let m = self.rank();
        if r.shape() != (m, m) {
            return shape_err(format!("penalty matrix must be {m}x{m}, got {:?}", r.shape()));
        }
        let mut vd = self.v.clone();
        for (j, s) in self.s.iter().enumerate() {
            vd.column_mut(j).scale_mut(1.0 / s);
        }
        let mut t = vd.tr_mul(&(r * &vd));
        symmetrize(&mut t);
        Ok(t)
    }

    /// `C = V diag(s)^-1 C~`.
    pub fn back_transform(&self, c_tilde: &Matrix) -> Result<Matrix> {
        if c_tilde.nrows() != self.rank() {
            return shape_err(format!("expected {} rows, got {}", self.rank(), c_tilde.nrows()));
        }
        let mut scaled = c_tilde.clone();
        for (i, s) in self.s.iter().enumerate() {
            scaled.row_mut(i).scale_mut(1.0 / s);
        }
        Ok(&self.v * scaled)
    }

    /// `C~ = diag(s) V' C`.
    pub fn forward_transform(&self, c: &Matrix) -> Result<Matrix> {
        if c.nrows() != self.rank() {
            return shape_err(format!("expected {} rows, got {}", self.rank(), c.nrows()));
        }
        let mut out = self.v.tr_mul(c);
        for (i, s) in self.s.iter().enumerate() {
            out.row_mut(i).scale_mut(*s);
        }
        Ok(out)
    }
}

fn check_dims(t: &DenseTensor, facs: &[MarginalFactorization], rows: impl Fn(&MarginalFactorization) -> usize) -> Result<()> {
    if t.ndim() != facs.len() + 1 {
        return shape_err(format!(
            "tensor has {} modes, expected {} (one per dimension plus subjects)",
            t.ndim(),
            facs.len() + 1
        ));
    }
    for (d, f) in facs.iter().enumerate() {
        if t.dims()[d] != rows(f) {
            return shape_err(format!(
                "mode {d} has size {} but the factorization expects {}",
                t.dims()[d],
                rows(f)
            ));
        }
    }
    Ok(())
}

/// `Y x_1 U_1' ... x_D U_D'`; the trailing subject mode is untouched.
pub fn compress(y: &DenseTensor, facs: &[MarginalFactorization]) -> Result<DenseTensor> {
    check_dims(y, facs, |f| f.u.nrows())?;
    let mut g = y.clone();
    for (d, f) in facs.iter().enumerate() {
        g = g.mode_multiply(&f.u.transpose(), d)?;
    }
    Ok(g)
}

/// `G x_1 U_1 ... x_D U_D`, mapping compressed data back onto the grid.
pub fn decompress(g: &DenseTensor, facs: &[MarginalFactorization]) -> Result<DenseTensor> {
    check_dims(g, facs, |f| f.rank())?;
    let mut y = g.clone();
    for (d, f) in facs.iter().enumerate() {
        y = y.mode_multiply(&f.u, d)?;
    }
    Ok(y)
}
