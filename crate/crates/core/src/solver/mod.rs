//! Block coordinate descent for the penalized CP fit of a compressed
//! observation tensor `G` (dims `m_1 x ... x m_D x N`).
//!
//! Each sweep updates the marginal factors `C~_d` one at a time by solving a
//! Sylvester equation, then the subject coefficients `B` in closed form
//! (ridge) or by ADMM (lasso).

mod admm;
mod sylvester;

use log::{debug, warn};
use nalgebra::{Cholesky, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use admm::{soft_threshold, AdmmOutcome};
pub use sylvester::{solve_factored, solve_factored_psd, sylvester_solve, SymmetricFactor};

use crate::error::{shape_err, MpbError, Result};
use crate::tensor::{cp_reconstruct, gram_of_khatri_rao, mttkrp, DenseTensor, Matrix};

/// Tensors with at most this many entries have their residual formed
/// explicitly when evaluating the objective, which avoids the cancellation
/// in `|G|^2 - 2<G, M> + |M|^2`.
const MATERIALIZE_LIMIT: usize = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefPenalty {
    Ridge,
    Lasso,
}

/// ADMM step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    /// `|W'W|_F / K`, recomputed each time `B` is updated.
    GramNorm,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Independent standard normal entries, columns scaled to unit norm.
    RandomNormal { seed: u64 },
    /// Leading left singular vectors of each unfolding; columns beyond the
    /// mode size are filled randomly from `seed`.
    Hosvd { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rank: usize,
    pub lambda_marginal: Vec<f64>,
    pub lambda_coef: f64,
    pub coef_penalty: CoefPenalty,
    pub max_outer_iters: usize,
    pub outer_tol: f64,
    pub admm_tol_primal: f64,
    pub admm_tol_dual: f64,
    pub admm_max_iters: usize,
    pub proximal_mu: f64,
    pub gamma_rule: GammaRule,
    pub init: Init,
}

impl SolverConfig {
    /// Defaults for a `ndim`-dimensional problem: no penalties, ridge
    /// coefficient penalty, random initialization with seed 0.
    pub fn new(rank: usize, ndim: usize) -> Self {
        Self {
            rank,
            lambda_marginal: vec![0.0; ndim],
            lambda_coef: 0.0,
            coef_penalty: CoefPenalty::Ridge,
            max_outer_iters: 200,
            outer_tol: 1e-8,
            admm_tol_primal: 1e-6,
            admm_tol_dual: 1e-6,
            admm_max_iters: 500,
            proximal_mu: 1e-8,
            gamma_rule: GammaRule::GramNorm,
            init: Init::RandomNormal { seed: 0 },
        }
    }

    pub fn validate(&self, ndim: usize) -> Result<()> {
        let bad = |msg: String| Err(MpbError::InvalidArgument(msg));
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if self.lambda_marginal.len() != ndim {
            return bad(format!(
                "expected {ndim} marginal penalty weights, got {}",
                self.lambda_marginal.len()
            ));
        }
        if self
            .lambda_marginal
            .iter()
            .chain([&self.lambda_coef, &self.proximal_mu])
            .any(|l| !(l.is_finite() && *l >= 0.0))
        {
            return bad("penalty weights and proximal_mu must be finite and nonnegative".into());
        }
        if [self.outer_tol, self.admm_tol_primal, self.admm_tol_dual]
            .iter()
            .any(|t| !(t.is_finite() && *t > 0.0))
        {
            return bad("tolerances must be positive".into());
        }
        if self.max_outer_iters == 0 || self.admm_max_iters == 0 {
            return bad("iteration caps must be positive".into());
        }
        if let GammaRule::Fixed(g) = self.gamma_rule {
            if !(g.is_finite() && g > 0.0) {
                return bad(format!("fixed ADMM gamma must be positive, got {g}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolverState {
    /// Marginal factors in compressed coordinates, `m_d x K` each.
    pub c_tilde: Vec<Matrix>,
    /// Subject coefficients, `N x K`.
    pub b: Matrix,
    /// ADMM split variable (`B'` at consensus), `K x N`.
    pub z: Matrix,
    /// Scaled ADMM dual, `N x K`.
    pub a_star: Matrix,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iters: usize,
    /// Set when some ADMM solve hit its iteration cap.
    pub admm_warning: bool,
    /// Step size of the last ADMM solve (0 before the first), used to
    /// rescale `A*` when the step changes.
    pub admm_gamma: f64,
}

impl SolverState {
    /// State with the given factors, `B = 0` and ADMM variables at zero.
    pub fn from_parts(c_tilde: Vec<Matrix>, b: Matrix) -> Self {
        let z = b.transpose();
        let a_star = Matrix::zeros(b.nrows(), b.ncols());
        Self {
            c_tilde,
            b,
            z,
            a_star,
            objective_trace: Vec::new(),
            converged: false,
            iters: 0,
            admm_warning: false,
            admm_gamma: 0.0,
        }
    }

    pub fn rank(&self) -> usize {
        self.b.ncols()
    }

    fn max_abs(&self) -> f64 {
        self.c_tilde.iter().chain([&self.b]).fold(0.0, |m, c| m.max(c.amax()))
    }

    fn is_finite(&self) -> bool {
        self.b.iter().all(|v| v.is_finite()) && self.c_tilde.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

fn check_problem(g_hat: &DenseTensor, t_mats: &[Matrix]) -> Result<()> {
    let ndim = g_hat.ndim() - 1;
    if ndim == 0 {
        return shape_err("observation tensor needs at least one functional mode plus the subject mode");
    }
    if t_mats.len() != ndim {
        return shape_err(format!("expected {ndim} penalty matrices, got {}", t_mats.len()));
    }
    for (d, t) in t_mats.iter().enumerate() {
        let m = g_hat.dims()[d];
        if t.shape() != (m, m) {
            return shape_err(format!("penalty matrix {d} is {:?}, expected {m}x{m}", t.shape()));
        }
    }
    Ok(())
}

fn check_state(g_hat: &DenseTensor, state: &SolverState) -> Result<()> {
    let ndim = g_hat.ndim() - 1;
    let k = state.rank();
    if state.c_tilde.len() != ndim {
        return shape_err(format!("state has {} factors, expected {ndim}", state.c_tilde.len()));
    }
    for (d, c) in state.c_tilde.iter().enumerate() {
        if c.shape() != (g_hat.dims()[d], k) {
            return shape_err(format!("factor {d} is {:?}, expected ({}, {k})", c.shape(), g_hat.dims()[d]));
        }
    }
    if state.b.nrows() != g_hat.last_dim() {
        return shape_err(format!("B has {} rows, tensor has {} subjects", state.b.nrows(), g_hat.last_dim()));
    }
    Ok(())
}

fn refs(c: &[Matrix]) -> Vec<&Matrix> {
    c.iter().collect()
}

/// Squared Frobenius norm of `G - sum_k c~_{1,k} o ... o c~_{D,k} o b_k`.
pub fn residual_sq(g_hat: &DenseTensor, c_tilde: &[Matrix], b: &Matrix) -> Result<f64> {
    let mut factors = refs(c_tilde);
    factors.push(b);
    if g_hat.len() <= MATERIALIZE_LIMIT {
        let model = cp_reconstruct(&factors)?;
        return Ok(g_hat.sub(&model)?.norm_sq());
    }
    residual_sq_fast(g_hat, &factors)
}

/// Residual via `|G|^2 - 2<G, model> + 1' (Hadamard of Grams) 1`.
pub fn residual_sq_fast(g_hat: &DenseTensor, factors: &[&Matrix]) -> Result<f64> {
    let last = factors.len() - 1;
    let q = mttkrp(g_hat, &factors[..last], last)?;
    let cross = q.component_mul(factors[last]).sum();
    let model_sq = gram_of_khatri_rao(factors)?.sum();
    Ok((g_hat.norm_sq() - 2.0 * cross + model_sq).max(0.0))
}

fn coef_penalty_value(b: &Matrix, kind: CoefPenalty) -> f64 {
    match kind {
        CoefPenalty::Ridge => b.norm_squared(),
        CoefPenalty::Lasso => b.iter().map(|v| v.abs()).sum(),
    }
}

/// Penalized objective: residual plus marginal roughness and coefficient penalties.
pub fn objective(g_hat: &DenseTensor, state: &SolverState, t_mats: &[Matrix], config: &SolverConfig) -> Result<f64> {
    check_problem(g_hat, t_mats)?;
    check_state(g_hat, state)?;
    if !state.is_finite() {
        return Err(MpbError::NonFinite("solver state".into()));
    }
    let mut f = residual_sq(g_hat, &state.c_tilde, &state.b)?;
    for ((c, t), lam) in state.c_tilde.iter().zip(t_mats).zip(&config.lambda_marginal) {
        if *lam > 0.0 {
            f += lam * c.tr_mul(&(t * c)).trace();
        }
    }
    if config.lambda_coef > 0.0 {
        f += config.lambda_coef * coef_penalty_value(&state.b, config.coef_penalty);
    }
    if !f.is_finite() {
        return Err(MpbError::NonFinite("objective".into()));
    }
    Ok(f)
}

/// Gram `W_d'W_d` and cross term `W_d'G_(d)'` (as `m_d x K`) for factor `d`.
fn factor_system(g_hat: &DenseTensor, state: &SolverState, d: usize) -> Result<(Matrix, Matrix)> {
    let mut others: Vec<&Matrix> = state.c_tilde.iter().enumerate().filter(|(j, _)| *j != d).map(|(_, c)| c).collect();
    others.push(&state.b);
    let gram = gram_of_khatri_rao(&others)?;
    let q = mttkrp(g_hat, &others, d)?;
    Ok((gram, q))
}

/// Gram `W'W` and cross term `G_(D+1) W` (as `N x K`) for the subject coefficients.
fn coef_system(g_hat: &DenseTensor, c_tilde: &[Matrix]) -> Result<(Matrix, Matrix)> {
    let factors = refs(c_tilde);
    let gram = gram_of_khatri_rao(&factors)?;
    let q = mttkrp(g_hat, &factors, c_tilde.len())?;
    Ok((gram, q))
}

/// New `C~_d` minimizing the conditional objective plus `mu |C~ - C~_old|^2`.
///
/// `penalty` is the factored `lambda_d T_d`.
pub fn update_factor_with(
    g_hat: &DenseTensor,
    state: &SolverState,
    d: usize,
    penalty: &SymmetricFactor,
    mu: f64,
) -> Result<Matrix> {
    let (mut gram, mut q) = factor_system(g_hat, state, d)?;
    if mu > 0.0 {
        for i in 0..gram.nrows() {
            gram[(i, i)] += mu;
        }
        q += &state.c_tilde[d] * mu;
    }
    let m = SymmetricFactor::new(&gram)?;
    solve_factored_psd(&m, penalty, &q, mu)
}

/// Factor update for dimension `d` using penalty matrix `t_d`.
pub fn update_factor(
    state: &SolverState,
    g_hat: &DenseTensor,
    d: usize,
    t_d: &Matrix,
    config: &SolverConfig,
) -> Result<Matrix> {
    check_state(g_hat, state)?;
    if d >= state.c_tilde.len() {
        return Err(MpbError::ModeOutOfRange { mode: d, ndim: state.c_tilde.len() });
    }
    let p = SymmetricFactor::new(&(t_d * config.lambda_marginal[d]))?;
    update_factor_with(g_hat, state, d, &p, config.proximal_mu)
}

/// Closed-form ridge update `B = G_(D+1) W (W'W + lambda I)^-1`.
pub fn update_b_ridge(state: &SolverState, g_hat: &DenseTensor, config: &SolverConfig) -> Result<Matrix> {
    check_state(g_hat, state)?;
    let (mut gram, q) = coef_system(g_hat, &state.c_tilde)?;
    let lambda = config.lambda_coef;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    // B (W'W + l I) = Q  <=>  (W'W + l I) B' = Q'
    if let Some(chol) = Cholesky::new(gram.clone()) {
        return Ok(chol.solve(&q.transpose()).transpose());
    }
    if lambda > 0.0 {
        // W'W is PSD; rounding can push it below -lambda when factor scales
        // are extreme, so clamp its spectrum at zero.
        let eig = SymmetricEigen::new(gram);
        let vals = eig.eigenvalues.map(|v| v.max(lambda));
        let rot = q * &eig.eigenvectors;
        let scaled = Matrix::from_fn(rot.nrows(), rot.ncols(), |i, j| rot[(i, j)] / vals[j]);
        return Ok(scaled * eig.eigenvectors.transpose());
    }
    Err(MpbError::NotPositiveDefinite(
        "normal matrix of the subject update; the marginal factors are collinear (add lambda_coef > 0)".into(),
    ))
}

/// Lasso update of `B` by ADMM, warm-started from the state's `Z` and `A*`.
pub fn update_b_admm(
    state: &SolverState,
    g_hat: &DenseTensor,
    config: &SolverConfig,
) -> Result<(Matrix, Matrix, Matrix, AdmmOutcome)> {
    check_state(g_hat, state)?;
    let (gram, q) = coef_system(g_hat, &state.c_tilde)?;
    admm::lasso_admm(&gram, &q, state, config)
}

fn random_unit_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    m
}

fn initial_factors(g_hat: &DenseTensor, k: usize, init: Init) -> Result<Vec<Matrix>> {
    let ndim = g_hat.ndim() - 1;
    match init {
        Init::RandomNormal { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..ndim).map(|d| random_unit_columns(&mut rng, g_hat.dims()[d], k)).collect())
        }
        Init::Hosvd { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::with_capacity(ndim);
            for d in 0..ndim {
                let unf = g_hat.unfold(d)?;
                let eig = SymmetricEigen::new(&unf * unf.transpose());
                let m = unf.nrows();
                let mut order: Vec<usize> = (0..m).collect();
                order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
                let mut c = random_unit_columns(&mut rng, m, k);
                for (col, &i) in order.iter().take(k).enumerate() {
                    c.set_column(col, &eig.eigenvectors.column(i));
                }
                out.push(c);
            }
            Ok(out)
        }
    }
}

/// Factor entries beyond this magnitude are treated as divergence.
const SCALE_LIMIT: f64 = 1e150;

fn diverged() -> MpbError {
    MpbError::Numerical(
        "factor scales diverged: the coefficient penalty is being traded against an unpenalized \
         (e.g. linear) marginal direction; lower lambda_marginal or lambda_coef"
            .into(),
    )
}

/// Cached per-problem data for repeated sweeps.
struct Fitter<'a> {
    g_hat: &'a DenseTensor,
    t_mats: &'a [Matrix],
    config: &'a SolverConfig,
    penalties: Vec<SymmetricFactor>,
}

impl<'a> Fitter<'a> {
    fn new(g_hat: &'a DenseTensor, t_mats: &'a [Matrix], config: &'a SolverConfig) -> Result<Self> {
        check_problem(g_hat, t_mats)?;
        config.validate(g_hat.ndim() - 1)?;
        let penalties = t_mats
            .iter()
            .zip(&config.lambda_marginal)
            .map(|(t, lam)| SymmetricFactor::new(&(t * *lam)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { g_hat, t_mats, config, penalties })
    }

    fn update_b(&self, state: &mut SolverState) -> Result<()> {
        match self.config.coef_penalty {
            CoefPenalty::Ridge => state.b = update_b_ridge(state, self.g_hat, self.config)?,
            CoefPenalty::Lasso => {
                let (gram, q) = coef_system(self.g_hat, &state.c_tilde)?;
                let (b, z, a_star, outcome) = admm::lasso_admm(&gram, &q, state, self.config)?;
                if !outcome.converged {
                    state.admm_warning = true;
                }
                // ADMM is inexact; never accept a worse subject block.
                let lam = self.config.lambda_coef;
                let old = admm::conditional_lasso(&gram, &q, &state.b, lam);
                let new = admm::conditional_lasso(&gram, &q, &b, lam);
                if new <= old || state.b.iter().all(|v| *v == 0.0) {
                    state.b = b;
                }
                state.z = z;
                state.a_star = a_star;
                state.admm_gamma = outcome.gamma;
            }
        }
        if state.b.iter().any(|v| !v.is_finite()) {
            return Err(MpbError::NonFinite("subject coefficient update".into()));
        }
        Ok(())
    }

    fn sweep(&self, state: &mut SolverState) -> Result<()> {
        for d in 0..state.c_tilde.len() {
            let c = update_factor_with(self.g_hat, state, d, &self.penalties[d], self.config.proximal_mu)?;
            if c.iter().any(|v| !v.is_finite()) {
                return Err(MpbError::NonFinite(format!("factor update for dimension {d}")));
            }
            state.c_tilde[d] = c;
        }
        self.update_b(state)
    }

    fn run(&self, mut state: SolverState) -> Result<SolverState> {
        let f0 = objective(self.g_hat, &state, self.t_mats, self.config)?;
        state.objective_trace = vec![f0];
        let mut prev = f0;
        // changes this small are rounding noise relative to the data
        let noise_floor = 64.0 * f64::EPSILON * self.g_hat.norm_sq();
        for it in 0..self.config.max_outer_iters {
            match self.sweep(&mut state) {
                Err(MpbError::NonFinite(_)) => return Err(diverged()),
                Err(e) => return Err(e),
                Ok(()) => {}
            }
            if state.max_abs() > SCALE_LIMIT {
                return Err(diverged());
            }
            let f = objective(self.g_hat, &state, self.t_mats, self.config)?;
            state.objective_trace.push(f);
            state.iters = it + 1;
            let change = (prev - f).abs() / prev.abs().max(f64::MIN_POSITIVE);
            debug!("sweep {}: objective {f:.6e} (relative change {change:.3e})", it + 1);
            let prev_f = prev;
            prev = f;
            if f == 0.0 || change < self.config.outer_tol || (prev_f - f).abs() <= noise_floor {
                state.converged = true;
                break;
            }
        }
        if !state.converged {
            warn!(
                "solver stopped after {} sweeps without reaching outer_tol {:e}",
                state.iters, self.config.outer_tol
            );
        }
        if state.admm_warning {
            warn!("at least one ADMM solve hit admm_max_iters; returned its best iterate");
        }
        normalize_gauge(&mut state);
        Ok(state)
    }
}

/// Runs block coordinate descent from the configured initialization.
pub fn fit(g_hat: &DenseTensor, t_mats: &[Matrix], config: &SolverConfig) -> Result<SolverState> {
    let fitter = Fitter::new(g_hat, t_mats, config)?;
    let k = config.rank;
    let n = g_hat.last_dim();
    let ndim = g_hat.ndim() - 1;
    let total: usize = g_hat.dims()[..ndim].iter().product();
    if k > total {
        warn!("rank {k} exceeds the number of compressed coefficients per subject ({total})");
    }
    if g_hat.norm_sq() == 0.0 {
        let c = g_hat.dims()[..ndim].iter().map(|&m| Matrix::zeros(m, k)).collect();
        let mut state = SolverState::from_parts(c, Matrix::zeros(n, k));
        state.objective_trace = vec![0.0];
        state.converged = true;
        return Ok(state);
    }
    let c = initial_factors(g_hat, k, config.init)?;
    let mut state = SolverState::from_parts(c, Matrix::zeros(n, k));
    // Starting from B = 0 would make every factor update return zero.
    fitter.update_b(&mut state)?;
    fitter.run(state)
}

/// Runs block coordinate descent from caller-supplied factors (e.g. a
/// previous fit at a smaller rank padded with new columns). `B` is
/// recomputed from the factors before the first sweep.
pub fn fit_from(g_hat: &DenseTensor, t_mats: &[Matrix], config: &SolverConfig, c_tilde: Vec<Matrix>) -> Result<SolverState> {
    let fitter = Fitter::new(g_hat, t_mats, config)?;
    let n = g_hat.last_dim();
    let mut state = SolverState::from_parts(c_tilde, Matrix::zeros(n, config.rank));
    check_state(g_hat, &state)?;
    fitter.update_b(&mut state)?;
    fitter.run(state)
}

/// Fixes the scale, order and sign indeterminacy of a CP solution: columns
/// sorted by descending `|b_k| prod_d |c~_{d,k}|`, factor columns unit-norm
/// with magnitudes moved into `B`, and the largest-magnitude entry of every
/// factor column positive.
pub fn normalize_gauge(state: &mut SolverState) {
    let k = state.rank();
    let mut magnitude = vec![0.0; k];
    for col in 0..k {
        let mut scale = 1.0;
        for c in state.c_tilde.iter_mut() {
            let n = c.column(col).norm();
            if n > 0.0 {
                c.column_mut(col).scale_mut(1.0 / n);
            }
            scale *= n;
        }
        state.b.column_mut(col).scale_mut(scale);
        state.a_star.column_mut(col).scale_mut(scale);
        for c in state.c_tilde.iter_mut() {
            let (idx, _) = c
                .column(col)
                .iter()
                .enumerate()
                .fold((0, 0.0), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
            if c[(idx, col)] < 0.0 {
                c.column_mut(col).neg_mut();
                state.b.column_mut(col).neg_mut();
                state.a_star.column_mut(col).neg_mut();
            }
        }
        magnitude[col] = state.b.column(col).norm();
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| magnitude[b].total_cmp(&magnitude[a]));
    let permute = |m: &Matrix| Matrix::from_columns(&order.iter().map(|&i| m.column(i)).collect::<Vec<_>>());
    for c in state.c_tilde.iter_mut() {
        *c = permute(c);
    }
    state.b = permute(&state.b);
    state.a_star = permute(&state.a_star);
    state.z = state.b.transpose();
}
