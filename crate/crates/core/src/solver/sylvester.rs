//! Sylvester equations `X M + P X = Q` with symmetric `M` and `P`, solved
//! in the joint eigenbasis of the two coefficient matrices.

use nalgebra::SymmetricEigen;

use crate::error::{shape_err, MpbError, Result};
use crate::tensor::Matrix;

/// Relative gap below which `eig(P)_i + eig(M)_j` is treated as zero.
const OVERLAP_TOL: f64 = 1e-13;

/// Eigendecomposition of one symmetric coefficient, reusable across solves.
#[derive(Clone, Debug)]
pub struct SymmetricFactor {
    values: Vec<f64>,
    vectors: Matrix,
}

impl SymmetricFactor {
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return shape_err(format!("expected a square matrix, got {:?}", a.shape()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(MpbError::NonFinite("Sylvester coefficient".into()));
        }
        let scale = a.amax().max(f64::MIN_POSITIVE);
        if (a - a.transpose()).amax() > 1e-10 * scale {
            return Err(MpbError::InvalidArgument(
                "Sylvester coefficients must be symmetric".into(),
            ));
        }
        let sym = (a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        Ok(Self { values: eig.eigenvalues.as_slice().to_vec(), vectors: eig.eigenvectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    fn spectral_radius(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Solves `X M + P X = Q` given factored `M` (k x k) and `P` (m x m).
pub fn solve_factored(m: &SymmetricFactor, p: &SymmetricFactor, q: &Matrix) -> Result<Matrix> {
    check_rhs(m, p, q)?;
    let scale = m.spectral_radius() + p.spectral_radius();
    let gap = min_gap(&m.values, &p.values);
    if !(gap > OVERLAP_TOL * scale) || scale == 0.0 {
        return Err(MpbError::SpectralOverlap { gap });
    }
    Ok(solve_with(m, &m.values, p, &p.values, q))
}

/// Variant for `M = G + mu I` with `G` PSD and `P` PSD, as in the factor
/// update. Eigenvalues are clamped to their exact-arithmetic bounds
/// (`>= mu` and `>= 0`), so the system is singular only when `mu = 0` and
/// both spectra touch zero.
pub fn solve_factored_psd(m: &SymmetricFactor, p: &SymmetricFactor, q: &Matrix, mu: f64) -> Result<Matrix> {
    check_rhs(m, p, q)?;
    let mv: Vec<f64> = m.values.iter().map(|v| v.max(mu)).collect();
    let pv: Vec<f64> = p.values.iter().map(|v| v.max(0.0)).collect();
    let gap = min_gap(&mv, &pv);
    if !(gap > 0.0) {
        return Err(MpbError::SpectralOverlap { gap });
    }
    Ok(solve_with(m, &mv, p, &pv, q))
}

fn check_rhs(m: &SymmetricFactor, p: &SymmetricFactor, q: &Matrix) -> Result<()> {
    if q.shape() != (p.dim(), m.dim()) {
        return shape_err(format!(
            "right-hand side is {:?}, expected ({}, {})",
            q.shape(),
            p.dim(),
            m.dim()
        ));
    }
    Ok(())
}

fn min_gap(mv: &[f64], pv: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for &a in pv {
        for &b in mv {
            gap = gap.min((a + b).abs());
        }
    }
    gap
}

fn solve_with(m: &SymmetricFactor, mv: &[f64], p: &SymmetricFactor, pv: &[f64], q: &Matrix) -> Matrix {
    let mut y = p.vectors.tr_mul(q) * &m.vectors;
    for (j, b) in mv.iter().enumerate() {
        for (i, a) in pv.iter().enumerate() {
            y[(i, j)] /= a + b;
        }
    }
    &p.vectors * y * m.vectors.transpose()
}

/// Solves `X M + P X = Q` for symmetric `M` (k x k) and `P` (m x m).
pub fn sylvester_solve(m: &Matrix, p: &Matrix, q: &Matrix) -> Result<Matrix> {
    solve_factored(&SymmetricFactor::new(m)?, &SymmetricFactor::new(p)?, q)
}
