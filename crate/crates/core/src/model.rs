//! Continuous representation of a fitted sample: `K` separable functions
//! `zeta_k(x) = prod_d xi_{k,d}(x_d)` with `xi_{k,d} = phi_d' c_{d,k}`, and
//! per-subject coefficients so that `U_i(x) = sum_k B(i, k) zeta_k(x)`.

use nalgebra::Cholesky;

use crate::basis::{symmetrize, MarginalBasis};
use crate::error::{shape_err, MpbError, Result};
use crate::tensor::{cp_reconstruct, gram_of_khatri_rao, khatri_rao, mttkrp, DenseTensor, Matrix};

/// A mean surface known only on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedMean {
    pub grid: Vec<Vec<f64>>,
    /// Dims are the grid sizes.
    pub values: DenseTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpbModel {
    bases: Vec<MarginalBasis>,
    coefs: Vec<Matrix>,
    subject_coefs: Matrix,
    mean: Option<GriddedMean>,
}

/// Least-squares coefficients of new observations on the model's functions.
#[derive(Clone, Debug)]
pub struct Projection {
    /// `N_new x K`.
    pub coefs: Matrix,
    /// Per-subject Euclidean norm of the grid residual.
    pub residual_norms: Vec<f64>,
}

impl MpbModel {
    pub fn new(bases: Vec<MarginalBasis>, coefs: Vec<Matrix>, subject_coefs: Matrix) -> Result<Self> {
        if bases.is_empty() {
            return Err(MpbError::InvalidArgument("a model needs at least one dimension".into()));
        }
        if bases.len() != coefs.len() {
            return shape_err(format!("{} bases but {} coefficient matrices", bases.len(), coefs.len()));
        }
        let k = subject_coefs.ncols();
        if k == 0 {
            return Err(MpbError::InvalidArgument("rank must be at least 1".into()));
        }
        for (d, (b, c)) in bases.iter().zip(&coefs).enumerate() {
            if c.shape() != (b.rank(), k) {
                return shape_err(format!(
                    "coefficient matrix {d} is {:?}, expected ({}, {k})",
                    c.shape(),
                    b.rank()
                ));
            }
        }
        let all_finite = coefs.iter().chain([&subject_coefs]).all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(MpbError::NonFinite("model coefficients".into()));
        }
        Ok(Self { bases, coefs, subject_coefs, mean: None })
    }

    /// Attaches a gridded mean that evaluations on the same grid add back.
    pub fn with_mean(mut self, mean: GriddedMean) -> Result<Self> {
        self.check_grid(&mean.grid)?;
        let sizes: Vec<usize> = mean.grid.iter().map(|g| g.len()).collect();
        if mean.values.dims() != sizes.as_slice() {
            return shape_err(format!("mean has dims {:?}, grid sizes are {sizes:?}", mean.values.dims()));
        }
        self.mean = Some(mean);
        Ok(self)
    }

    pub fn ndim(&self) -> usize {
        self.bases.len()
    }

    pub fn rank(&self) -> usize {
        self.subject_coefs.ncols()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_coefs.nrows()
    }

    pub fn bases(&self) -> &[MarginalBasis] {
        &self.bases
    }

    pub fn coefs(&self) -> &[Matrix] {
        &self.coefs
    }

    pub fn subject_coefs(&self) -> &Matrix {
        &self.subject_coefs
    }

    pub fn mean(&self) -> Option<&GriddedMean> {
        self.mean.as_ref()
    }

    /// Same functions, different subject coefficients (mean dropped).
    pub fn with_subject_coefs(&self, b: Matrix) -> Result<Self> {
        MpbModel::new(self.bases.clone(), self.coefs.clone(), b)
    }

    fn check_grid(&self, grid: &[Vec<f64>]) -> Result<()> {
        if grid.len() != self.ndim() {
            return shape_err(format!("grid has {} dimensions, model has {}", grid.len(), self.ndim()));
        }
        if let Some(d) = grid.iter().position(|g| g.is_empty()) {
            return shape_err(format!("grid for dimension {d} is empty"));
        }
        Ok(())
    }

    /// `Phi_d^(deriv)(points) C_d`: the `deriv`-th derivatives of
    /// `xi_{1,d}, ..., xi_{K,d}` at the points.
    pub fn marginal_values(&self, d: usize, points: &[f64], deriv: usize) -> Result<Matrix> {
        let basis = self
            .bases
            .get(d)
            .ok_or(MpbError::ModeOutOfRange { mode: d, ndim: self.ndim() })?;
        Ok(basis.evaluate(points, deriv)? * &self.coefs[d])
    }

    /// `zeta_k` at scattered points, one row per point.
    pub fn evaluate_basis(&self, points: &[Vec<f64>]) -> Result<Matrix> {
        if let Some(p) = points.iter().find(|p| p.len() != self.ndim()) {
            return shape_err(format!("point has {} coordinates, model has {} dimensions", p.len(), self.ndim()));
        }
        let mut out = Matrix::from_element(points.len(), self.rank(), 1.0);
        for d in 0..self.ndim() {
            let xs: Vec<f64> = points.iter().map(|p| p[d]).collect();
            out.component_mul_assign(&self.marginal_values(d, &xs, 0)?);
        }
        Ok(out)
    }

    fn grid_values(&self, grid: &[Vec<f64>]) -> Result<Vec<Matrix>> {
        self.check_grid(grid)?;
        grid.iter().enumerate().map(|(d, g)| self.marginal_values(d, g, 0)).collect()
    }

    /// `zeta_k` on a tensor grid; rows follow the grid in row-major order.
    pub fn evaluate_basis_grid(&self, grid: &[Vec<f64>]) -> Result<Matrix> {
        let xi = self.grid_values(grid)?;
        khatri_rao(&xi.iter().collect::<Vec<_>>())
    }

    /// `sum_k coef(i, k) zeta_k` on a grid for every row `i` of `coef`,
    /// as a tensor with dims `(|g_1|, ..., |g_D|, coef.nrows())`. No mean added.
    pub fn evaluate_combinations(&self, grid: &[Vec<f64>], coef: &Matrix) -> Result<DenseTensor> {
        if coef.ncols() != self.rank() {
            return shape_err(format!("coefficients have {} columns, model rank is {}", coef.ncols(), self.rank()));
        }
        let xi = self.grid_values(grid)?;
        let mut factors: Vec<&Matrix> = xi.iter().collect();
        factors.push(coef);
        cp_reconstruct(&factors)
    }

    /// Subject functions on a grid, plus the stored mean when the grid is
    /// the one the mean was recorded on.
    pub fn evaluate_subjects(&self, grid: &[Vec<f64>]) -> Result<DenseTensor> {
        let fitted = self.evaluate_combinations(grid, &self.subject_coefs)?;
        match &self.mean {
            None => Ok(fitted),
            Some(m) if m.grid.as_slice() == grid => fitted.broadcast_last(&m.values, 1.0),
            Some(_) => Err(MpbError::InvalidArgument(
                "model carries a gridded mean recorded on a different grid; evaluate on that grid".into(),
            )),
        }
    }

    /// `J(i, j) = integral of zeta_i zeta_j`.
    pub fn gram_zeta(&self) -> Result<Matrix> {
        let k = self.rank();
        let mut out = Matrix::from_element(k, k, 1.0);
        for (b, c) in self.bases.iter().zip(&self.coefs) {
            out.component_mul_assign(&c.tr_mul(&(b.gram_matrix()? * c)));
        }
        symmetrize(&mut out);
        Ok(out)
    }

    /// `R(i, j) = integral of Lap(zeta_i) Lap(zeta_j)`, assembled from the
    /// marginal Gram, second-derivative penalty and cross matrices.
    pub fn laplacian_penalty_zeta(&self) -> Result<Matrix> {
        let k = self.rank();
        let dcount = self.ndim();
        let mut gram = Vec::with_capacity(dcount);
        let mut rough = Vec::with_capacity(dcount);
        let mut cross = Vec::with_capacity(dcount);
        for (b, c) in self.bases.iter().zip(&self.coefs) {
            gram.push(c.tr_mul(&(b.gram_matrix()? * c)));
            rough.push(c.tr_mul(&(b.penalty_matrix(2)? * c)));
            // cross[d](i, j) = integral of xi_{i,d} xi_{j,d}''
            cross.push(c.tr_mul(&(b.cross_matrix()? * c)));
        }
        let others = |skip: &[usize]| {
            let mut p = Matrix::from_element(k, k, 1.0);
            for (b, g) in gram.iter().enumerate() {
                if !skip.contains(&b) {
                    p.component_mul_assign(g);
                }
            }
            p
        };
        let mut out = Matrix::zeros(k, k);
        for d in 0..dcount {
            out += others(&[d]).component_mul(&rough[d]);
            for a in 0..dcount {
                if a == d {
                    continue;
                }
                // integral over dim d of xi_{i,d}'' xi_{j,d} times over dim a of xi_{i,a} xi_{j,a}''
                let mixed = cross[d].transpose().component_mul(&cross[a]);
                out += others(&[d, a]).component_mul(&mixed);
            }
        }
        let asym = (&out - out.transpose()).amax();
        if asym > 1e-8 * out.amax().max(f64::MIN_POSITIVE) {
            return Err(MpbError::Numerical(format!("Laplacian penalty asymmetry {asym:.3e}")));
        }
        symmetrize(&mut out);
        Ok(out)
    }

    /// Least-squares coefficients of gridded observations (dims
    /// `(|g_1|, ..., |g_D|, N_new)`) on the span of the evaluated `zeta`.
    /// The stored mean is subtracted first when the grid matches it.
    pub fn project(&self, y: &DenseTensor, grid: &[Vec<f64>]) -> Result<Projection> {
        self.check_grid(grid)?;
        let sizes: Vec<usize> = grid.iter().map(|g| g.len()).collect();
        if y.ndim() != self.ndim() + 1 || y.dims()[..self.ndim()] != sizes[..] {
            return shape_err(format!("observations have dims {:?}, grid sizes are {sizes:?}", y.dims()));
        }
        let centered;
        let y = match &self.mean {
            Some(m) if m.grid.as_slice() == grid => {
                centered = y.broadcast_last(&m.values, -1.0)?;
                &centered
            }
            Some(_) => {
                return Err(MpbError::InvalidArgument(
                    "model carries a gridded mean recorded on a different grid".into(),
                ))
            }
            None => y,
        };
        let xi = self.grid_values(grid)?;
        let refs: Vec<&Matrix> = xi.iter().collect();
        let gram = gram_of_khatri_rao(&refs)?;
        let rhs = mttkrp(y, &refs, self.ndim())?;
        let chol = Cholesky::new(gram).ok_or_else(|| {
            MpbError::NotPositiveDefinite("evaluated basis Gram in projection; functions are collinear on this grid".into())
        })?;
        let coefs = chol.solve(&rhs.transpose()).transpose();
        let mut factors = refs;
        factors.push(&coefs);
        let fitted = cp_reconstruct(&factors)?;
        let resid = y.sub(&fitted)?;
        let n = y.last_dim();
        let mut sq = vec![0.0; n];
        for (i, v) in resid.data().iter().enumerate() {
            sq[i % n] += v * v;
        }
        Ok(Projection { coefs, residual_norms: sq.into_iter().map(f64::sqrt).collect() })
    }
}
