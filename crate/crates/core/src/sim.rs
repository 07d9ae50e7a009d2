//! Simulation designs and error metrics.
//!
//! Two generators: a marginal-product Gaussian model with Fourier marginal
//! functions on `[0,1]^D`, and a 2-D Gaussian process built from the
//! orthonormalized tensor-product spline system on `[0,1]^2`. Both derive
//! per-replication random streams from a single master seed.

use nalgebra::{DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{linspace, MarginalBasis};
use crate::error::{shape_err, MpbError, Result};
use crate::model::MpbModel;
use crate::tensor::{cp_reconstruct, DenseTensor, Matrix};

/// Random stream `stream` of the master seed. Stream 0 holds per-setting
/// quantities, stream `r + 1` belongs to replication `r`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

fn add_noise(t: &DenseTensor, var: f64, rng: &mut ChaCha8Rng) -> Result<DenseTensor> {
    let mut out = t.clone();
    if var > 0.0 {
        let sd = var.sqrt();
        for v in out.data_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += sd * e;
        }
    }
    Ok(out)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal moved into `Q`.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let qr = normal_matrix(rng, n, n, 1.0).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `exp(-rate * k)` for `k = 1..=n`.
pub fn decay_spectrum(rate: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| (-rate * k as f64).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProductSimConfig {
    pub ndim: usize,
    /// Fourier basis size of every true marginal function (odd).
    pub marginal_rank: usize,
    pub true_rank: usize,
    pub coef_sd: f64,
    pub decay: f64,
    pub noise_var: f64,
    /// Grid points per dimension.
    pub points: usize,
    pub subjects: usize,
    /// Grid points per dimension for MISE quadrature.
    pub eval_points: usize,
    /// Draw the marginal factors and covariance once per setting instead of
    /// once per replication.
    pub fixed_factors: bool,
    pub seed: u64,
}

impl Default for ProductSimConfig {
    fn default() -> Self {
        Self {
            ndim: 3,
            marginal_rank: 11,
            true_rank: 10,
            coef_sd: 0.3,
            decay: 0.7,
            noise_var: 0.5,
            points: 30,
            subjects: 5,
            eval_points: 61,
            fixed_factors: true,
            seed: 0,
        }
    }
}

impl ProductSimConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.ndim, self.marginal_rank, self.true_rank, self.points, self.subjects, self.eval_points];
        if counts.contains(&0) {
            return Err(MpbError::InvalidArgument("simulation sizes must be positive".into()));
        }
        if self.marginal_rank.is_multiple_of(2) {
            return Err(MpbError::InvalidArgument("marginal_rank must be odd for a Fourier basis".into()));
        }
        if self.points < 2 || self.eval_points < 2 {
            return Err(MpbError::InvalidArgument("grids need at least 2 points".into()));
        }
        let reals = [self.coef_sd, self.decay];
        if reals.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(MpbError::InvalidArgument("coef_sd and decay must be positive, noise_var nonnegative".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<Vec<f64>> {
        vec![linspace(0.0, 1.0, self.points); self.ndim]
    }

    pub fn eval_grid(&self) -> Vec<Vec<f64>> {
        vec![linspace(0.0, 1.0, self.eval_points); self.ndim]
    }

    /// `Sigma_A = O diag(exp(-decay k)) O'`.
    pub fn score_covariance(&self, orth: &Matrix) -> Matrix {
        let d = DVector::from_vec(decay_spectrum(self.decay, self.true_rank));
        orth * Matrix::from_diagonal(&d) * orth.transpose()
    }
}

/// Per-setting draw: marginal coefficients and the orthogonal matrix.
#[derive(Clone, Debug)]
pub struct ProductSimSetting {
    pub coefs: Vec<Matrix>,
    pub orth: Matrix,
}

fn draw_product_setting(cfg: &ProductSimConfig, rng: &mut ChaCha8Rng) -> ProductSimSetting {
    let coefs = (0..cfg.ndim)
        .map(|_| normal_matrix(rng, cfg.marginal_rank, cfg.true_rank, cfg.coef_sd))
        .collect();
    ProductSimSetting { coefs, orth: random_orthogonal(rng, cfg.true_rank) }
}

/// Subject scores `A ~ N(0, O D O')`, one row per subject.
pub fn draw_scores(rng: &mut ChaCha8Rng, orth: &Matrix, spectrum: &[f64], n: usize) -> Matrix {
    let k = spectrum.len();
    let sd = DVector::from_iterator(k, spectrum.iter().map(|v| v.sqrt()));
    let mut z = normal_matrix(rng, n, k, 1.0);
    for (j, s) in sd.iter().enumerate() {
        z.column_mut(j).scale_mut(*s);
    }
    z * orth.transpose()
}

#[derive(Clone, Debug)]
pub struct ProductSimData {
    pub grid: Vec<Vec<f64>>,
    pub truth: DenseTensor,
    pub noisy: DenseTensor,
    /// The true functions as an exact marginal-product model.
    pub model: MpbModel,
}

pub fn generate_product_sim(cfg: &ProductSimConfig, replication: usize) -> Result<ProductSimData> {
    cfg.validate()?;
    let mut rep_rng = stream_rng(cfg.seed, replication as u64 + 1);
    let setting = if cfg.fixed_factors {
        draw_product_setting(cfg, &mut stream_rng(cfg.seed, 0))
    } else {
        draw_product_setting(cfg, &mut rep_rng)
    };
    let spectrum = decay_spectrum(cfg.decay, cfg.true_rank);
    let scores = draw_scores(&mut rep_rng, &setting.orth, &spectrum, cfg.subjects);
    let basis = MarginalBasis::fourier(0.0, 1.0, cfg.marginal_rank, 1.0)?;
    let model = MpbModel::new(vec![basis; cfg.ndim], setting.coefs, scores)?;
    let grid = cfg.grid();
    let truth = model.evaluate_subjects(&grid)?;
    let noisy = add_noise(&truth, cfg.noise_var, &mut rep_rng)?;
    Ok(ProductSimData { grid, truth, noisy, model })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSimConfig {
    /// Cubic B-spline sizes of the two marginal systems.
    pub marginal_ranks: [usize; 2],
    pub decay: f64,
    /// Grid points per dimension.
    pub points: usize,
    pub train_subjects: usize,
    pub test_subjects: usize,
    pub replications: usize,
    pub noise_var: f64,
    pub seed: u64,
}

impl Default for FieldSimConfig {
    fn default() -> Self {
        Self {
            marginal_ranks: [10, 8],
            decay: 0.7,
            points: 200,
            train_subjects: 100,
            test_subjects: 50,
            replications: 25,
            noise_var: 0.0,
            seed: 0,
        }
    }
}

impl FieldSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.marginal_ranks.iter().any(|&m| m < 4) {
            return Err(MpbError::InvalidArgument("cubic B-spline systems need rank >= 4".into()));
        }
        if self.points < 2 || self.train_subjects == 0 || self.test_subjects == 0 || self.replications == 0 {
            return Err(MpbError::InvalidArgument("simulation sizes must be positive".into()));
        }
        if !(self.decay.is_finite() && self.decay > 0.0) || !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(MpbError::InvalidArgument("decay must be positive, noise_var nonnegative".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<Vec<f64>> {
        vec![linspace(0.0, 1.0, self.points); 2]
    }

    pub fn bases(&self) -> Result<Vec<MarginalBasis>> {
        self.marginal_ranks.iter().map(|&m| MarginalBasis::bspline(0.0, 1.0, m, 3)).collect()
    }
}

/// Orthonormal eigenfunctions of the tensor-product spline system and
/// their score variances.
#[derive(Clone, Debug)]
pub struct FieldSimTruth {
    pub bases: Vec<MarginalBasis>,
    /// Column `k` holds the tensor-product coefficients of eigenfunction
    /// `k` (index `a * m_2 + b` for `phi_1a phi_2b`).
    pub eigen_coefs: Matrix,
    pub variances: Vec<f64>,
}

impl FieldSimTruth {
    pub fn new(cfg: &FieldSimConfig) -> Result<Self> {
        cfg.validate()?;
        let bases = cfg.bases()?;
        let j = bases[0].gram_matrix()?.kronecker(&bases[1].gram_matrix()?);
        let eig = SymmetricEigen::new(j);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let n = order.len();
        let mut coefs = Matrix::zeros(n, n);
        for (k, &src) in order.iter().enumerate() {
            let gamma = eig.eigenvalues[src];
            if gamma <= 0.0 {
                return Err(MpbError::NotPositiveDefinite("tensor-product spline Gram".into()));
            }
            let mut col = eig.eigenvectors.column(src) / gamma.sqrt();
            let lead = col.iamax();
            if col[lead] < 0.0 {
                col.neg_mut();
            }
            coefs.set_column(k, &col);
        }
        Ok(Self { bases, eigen_coefs: coefs, variances: decay_spectrum(cfg.decay, n) })
    }

    pub fn n_functions(&self) -> usize {
        self.variances.len()
    }

    /// Tensor-product fields on a grid, one per row of `coefs`
    /// (`n x m_1 m_2`); dims `(|g_1|, |g_2|, n)`.
    pub fn evaluate_fields(&self, grid: &[Vec<f64>], coefs: &Matrix) -> Result<DenseTensor> {
        let (m1, m2) = (self.bases[0].rank(), self.bases[1].rank());
        if grid.len() != 2 {
            return shape_err(format!("expected a 2-D grid, got {} dimensions", grid.len()));
        }
        if coefs.ncols() != m1 * m2 {
            return shape_err(format!("coefficients have {} columns, expected {}", coefs.ncols(), m1 * m2));
        }
        let n = coefs.nrows();
        let theta = DenseTensor::from_fn(vec![m1, m2, n], |i| coefs[(i[2], i[0] * m2 + i[1])])?;
        theta
            .mode_multiply(&self.bases[0].evaluate(&grid[0], 0)?, 0)?
            .mode_multiply(&self.bases[1].evaluate(&grid[1], 0)?, 1)
    }

    /// The first `count` eigenfunctions on a grid, dims `(|g_1|, |g_2|, count)`.
    pub fn eigenfunctions(&self, grid: &[Vec<f64>], count: usize) -> Result<DenseTensor> {
        if count == 0 || count > self.n_functions() {
            return Err(MpbError::InvalidArgument(format!("requested {count} of {} eigenfunctions", self.n_functions())));
        }
        let sel = self.eigen_coefs.columns(0, count).transpose();
        self.evaluate_fields(grid, &sel)
    }

    /// Tensor-product coefficients of `n` random fields, one per row.
    pub fn draw_coefs(&self, rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let k = self.n_functions();
        let mut z = normal_matrix(rng, n, k, 1.0);
        for (j, v) in self.variances.iter().enumerate() {
            z.column_mut(j).scale_mut(v.sqrt());
        }
        z * self.eigen_coefs.transpose()
    }
}

#[derive(Clone, Debug)]
pub struct FieldSimData {
    pub grid: Vec<Vec<f64>>,
    pub train: DenseTensor,
    /// Noise-free test fields.
    pub test: DenseTensor,
    pub train_coefs: Matrix,
    pub test_coefs: Matrix,
}

pub fn generate_field_sim(cfg: &FieldSimConfig, truth: &FieldSimTruth, replication: usize) -> Result<FieldSimData> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, replication as u64 + 1);
    let grid = cfg.grid();
    let train_coefs = truth.draw_coefs(&mut rng, cfg.train_subjects);
    let test_coefs = truth.draw_coefs(&mut rng, cfg.test_subjects);
    let train = add_noise(&truth.evaluate_fields(&grid, &train_coefs)?, cfg.noise_var, &mut rng)?;
    let test = truth.evaluate_fields(&grid, &test_coefs)?;
    Ok(FieldSimData { grid, train, test, train_coefs, test_coefs })
}

/// Composite trapezoid weights for sorted points.
pub fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let n = points.len();
    let mut w = vec![0.0; n];
    for i in 1..n {
        let h = 0.5 * (points[i] - points[i - 1]);
        w[i - 1] += h;
        w[i] += h;
    }
    w
}

fn grid_weights(grid: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    for (d, g) in grid.iter().enumerate() {
        if g.len() < 2 || g.windows(2).any(|p| p[1] <= p[0]) {
            return Err(MpbError::InvalidArgument(format!("quadrature grid {d} must be increasing with >= 2 points")));
        }
    }
    Ok(grid.iter().map(|g| trapezoid_weights(g)).collect())
}

/// Per-subject trapezoid integrals of `f * g` for tensors of dims
/// `(|g_1|, ..., |g_D|, N)`; returns an `N_f x N_g` matrix.
pub fn inner_products(f: &DenseTensor, g: &DenseTensor, grid: &[Vec<f64>]) -> Result<Matrix> {
    let sizes: Vec<usize> = grid.iter().map(|g| g.len()).collect();
    for t in [f, g] {
        if t.ndim() != sizes.len() + 1 || t.dims()[..sizes.len()] != sizes[..] {
            return shape_err(format!("tensor dims {:?} do not match grid sizes {sizes:?}", t.dims()));
        }
    }
    let w = grid_weights(grid)?;
    let cells = f.len() / f.last_dim();
    let mut wf = Matrix::zeros(cells, f.last_dim());
    let gm = Matrix::from_row_slice(cells, g.last_dim(), g.data());
    let fm = Matrix::from_row_slice(cells, f.last_dim(), f.data());
    let mut idx = vec![0usize; sizes.len()];
    for c in 0..cells {
        let wc: f64 = idx.iter().zip(&w).map(|(&i, wd)| wd[i]).product();
        wf.row_mut(c).copy_from(&(fm.row(c) * wc));
        for k in (0..sizes.len()).rev() {
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(wf.tr_mul(&gm))
}

/// `sum_i integral (truth_i - estimate_i)^2` by the trapezoid rule.
pub fn mise(truth: &DenseTensor, estimate: &DenseTensor, grid: &[Vec<f64>]) -> Result<f64> {
    if truth.dims() != estimate.dims() {
        return shape_err(format!("truth dims {:?} vs estimate dims {:?}", truth.dims(), estimate.dims()));
    }
    let diff = truth.sub(estimate)?;
    Ok(inner_products(&diff, &diff, grid)?.trace())
}

/// Mean over replications.
pub fn momise(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `replication,mise` rows.
pub fn mise_csv(values: &[f64]) -> String {
    let mut out = String::from("replication,mise\n");
    for (r, v) in values.iter().enumerate() {
        out.push_str(&format!("{r},{v:?}\n"));
    }
    out
}

/// For each estimated function, the fraction of its squared norm lying in
/// the span of the reference functions (both given on a grid).
pub fn subspace_capture(estimated: &DenseTensor, reference: &DenseTensor, grid: &[Vec<f64>]) -> Result<Vec<f64>> {
    let gram = inner_products(reference, reference, grid)?;
    let cross = inner_products(reference, estimated, grid)?;
    let norms = inner_products(estimated, estimated, grid)?;
    let chol = nalgebra::Cholesky::new(gram)
        .ok_or_else(|| MpbError::NotPositiveDefinite("reference functions are linearly dependent".into()))?;
    let coef = chol.solve(&cross);
    Ok((0..estimated.last_dim())
        .map(|j| cross.column(j).dot(&coef.column(j)) / norms[(j, j)])
        .collect())
}

/// MISE of a fitted model against the true functions of a marginal-product
/// replication, integrated on `eval_grid`.
pub fn score_product_sim(data: &ProductSimData, fitted: &MpbModel, eval_grid: &[Vec<f64>]) -> Result<f64> {
    let truth = model_fields(&data.model, eval_grid)?;
    let est = match fitted.mean() {
        None => fitted.evaluate_subjects(eval_grid)?,
        Some(_) if eval_grid == data.grid.as_slice() => fitted.evaluate_subjects(eval_grid)?,
        Some(_) => {
            return Err(MpbError::InvalidArgument(
                "a centered fit can only be scored on its observation grid".into(),
            ))
        }
    };
    mise(&truth, &est, eval_grid)
}

/// Test-set MISE of the least-squares expansion of each test field on the
/// fitted functions.
pub fn score_field_sim(data: &FieldSimData, fitted: &MpbModel) -> Result<f64> {
    let proj = fitted.project(&data.test, &data.grid)?;
    let mut est = fitted.evaluate_combinations(&data.grid, &proj.coefs)?;
    if let Some(m) = fitted.mean() {
        est = est.broadcast_last(&m.values, 1.0)?;
    }
    mise(&data.test, &est, &data.grid)
}

/// Evaluates `f(r)` for `r = 0..n`, in parallel when the feature is on.
pub fn replicate<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Reconstructs a marginal-product truth on a grid without any mean.
pub fn model_fields(model: &MpbModel, grid: &[Vec<f64>]) -> Result<DenseTensor> {
    let xi = (0..model.ndim())
        .map(|d| model.marginal_values(d, &grid[d], 0))
        .collect::<Result<Vec<_>>>()?;
    let mut f: Vec<&Matrix> = xi.iter().collect();
    f.push(model.subject_coefs());
    cp_reconstruct(&f)
}
