//! End-to-end fitting on gridded data: evaluate and factor the marginal
//! bases, compress the observations, run the solver and map the solution
//! back to basis coordinates.

use crate::basis::MarginalBasis;
use crate::error::{shape_err, MpbError, Result};
use crate::model::{GriddedMean, MpbModel};
use crate::reduction::{compress, factorize, MarginalFactorization};
use crate::solver::{fit, fit_from, residual_sq, SolverConfig, SolverState};
use crate::tensor::{DenseTensor, Matrix};

/// Bases, grid and the quantities derived from them that do not depend on data.
#[derive(Clone, Debug)]
pub struct Problem {
    bases: Vec<MarginalBasis>,
    grid: Vec<Vec<f64>>,
    facs: Vec<MarginalFactorization>,
    /// Penalty matrices in compressed coordinates (unscaled by lambda).
    t_mats: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: MpbModel,
    pub state: SolverState,
    /// `|Y|^2` of the (centered) data.
    pub data_norm_sq: f64,
    /// `|G|^2` of the compressed data.
    pub compressed_norm_sq: f64,
    /// `|G - model|^2` in compressed coordinates.
    pub compressed_residual_sq: f64,
}

impl FitResult {
    /// `|Y - fitted|^2 / |Y|^2` on the observation grid (centered data when
    /// the fit was centered).
    pub fn residual_ratio(&self) -> f64 {
        if self.data_norm_sq == 0.0 {
            return 0.0;
        }
        let outside = (self.data_norm_sq - self.compressed_norm_sq).max(0.0);
        (self.compressed_residual_sq + outside) / self.data_norm_sq
    }

    /// `|G - model|^2 / |G|^2`.
    pub fn compressed_residual_ratio(&self) -> f64 {
        if self.compressed_norm_sq == 0.0 {
            return 0.0;
        }
        self.compressed_residual_sq / self.compressed_norm_sq
    }
}

impl Problem {
    /// `penalty_orders[d]` is the derivative order of the roughness penalty on dimension `d`.
    pub fn new(bases: Vec<MarginalBasis>, grid: Vec<Vec<f64>>, penalty_orders: &[usize]) -> Result<Self> {
        if bases.is_empty() {
            return Err(MpbError::InvalidArgument("at least one dimension is required".into()));
        }
        if grid.len() != bases.len() || penalty_orders.len() != bases.len() {
            return shape_err(format!(
                "{} bases, {} grids and {} penalty orders",
                bases.len(),
                grid.len(),
                penalty_orders.len()
            ));
        }
        let mut facs = Vec::with_capacity(bases.len());
        let mut t_mats = Vec::with_capacity(bases.len());
        for (d, ((b, g), &order)) in bases.iter().zip(&grid).zip(penalty_orders).enumerate() {
            let phi = b.evaluate(g, 0)?;
            let f = factorize(&phi, d)?;
            t_mats.push(f.penalty_transform(&b.penalty_matrix(order)?)?);
            facs.push(f);
        }
        Ok(Self { bases, grid, facs, t_mats })
    }

    pub fn bases(&self) -> &[MarginalBasis] {
        &self.bases
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn factorizations(&self) -> &[MarginalFactorization] {
        &self.facs
    }

    pub fn penalty_transforms(&self) -> &[Matrix] {
        &self.t_mats
    }

    pub fn ndim(&self) -> usize {
        self.bases.len()
    }

    pub fn check_data(&self, y: &DenseTensor) -> Result<()> {
        let sizes: Vec<usize> = self.grid.iter().map(|g| g.len()).collect();
        if y.ndim() != self.ndim() + 1 || y.dims()[..self.ndim()] != sizes[..] {
            return shape_err(format!(
                "data dims {:?} do not match grid sizes {sizes:?} plus a subject mode",
                y.dims()
            ));
        }
        if !y.is_finite() {
            return Err(MpbError::NonFinite("observation tensor".into()));
        }
        Ok(())
    }

    pub fn compress(&self, y: &DenseTensor) -> Result<DenseTensor> {
        self.check_data(y)?;
        compress(y, &self.facs)
    }

    /// Solver output mapped back to basis coordinates.
    pub fn to_model(&self, state: &SolverState) -> Result<MpbModel> {
        let coefs = self
            .facs
            .iter()
            .zip(&state.c_tilde)
            .map(|(f, c)| f.back_transform(c))
            .collect::<Result<Vec<_>>>()?;
        MpbModel::new(self.bases.clone(), coefs, state.b.clone())
    }

    /// Fits `y` (dims `(|g_1|, ..., |g_D|, N)`). With `center`, the sample
    /// mean over subjects is removed first and stored in the model.
    pub fn fit(&self, y: &DenseTensor, config: &SolverConfig, center: bool) -> Result<FitResult> {
        self.fit_inner(y, config, center, None)
    }

    /// Like [`Problem::fit`] but starting from the given compressed factors.
    pub fn fit_warm(&self, y: &DenseTensor, config: &SolverConfig, center: bool, c_tilde: Vec<Matrix>) -> Result<FitResult> {
        self.fit_inner(y, config, center, Some(c_tilde))
    }

    fn fit_inner(&self, y: &DenseTensor, config: &SolverConfig, center: bool, start: Option<Vec<Matrix>>) -> Result<FitResult> {
        self.check_data(y)?;
        let (data, mean) = if center {
            let mean = y.mean_over_last();
            (y.broadcast_last(&mean, -1.0)?, Some(mean))
        } else {
            (y.clone(), None)
        };
        let g_hat = compress(&data, &self.facs)?;
        let state = match start {
            None => fit(&g_hat, &self.t_mats, config)?,
            Some(c) => fit_from(&g_hat, &self.t_mats, config, c)?,
        };
        let mut model = self.to_model(&state)?;
        if let Some(values) = mean {
            model = model.with_mean(GriddedMean { grid: self.grid.clone(), values })?;
        }
        let compressed_residual_sq = residual_sq(&g_hat, &state.c_tilde, &state.b)?;
        Ok(FitResult {
            model,
            state,
            data_norm_sq: data.norm_sq(),
            compressed_norm_sq: g_hat.norm_sq(),
            compressed_residual_sq,
        })
    }
}
