//! ADMM for the lasso-penalized subject update
//! `min_B |G_(D+1) - B W'|^2 + lambda |B|_1`, split as `Z = B'`.

use nalgebra::Cholesky;

use super::{GammaRule, SolverConfig, SolverState};
use crate::error::{MpbError, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmmOutcome {
    pub iters: usize,
    pub converged: bool,
    pub primal: f64,
    pub dual: f64,
    pub gamma: f64,
}

/// Entrywise `sign(x) max(|x| - kappa, 0)`.
pub fn soft_threshold(x: &Matrix, kappa: f64) -> Matrix {
    x.map(|v| v.signum() * (v.abs() - kappa).max(0.0))
}

/// Lasso objective in `B` up to the constant `|G|^2`, given `W'W` and `G W`.
pub(crate) fn conditional_lasso(gram: &Matrix, q: &Matrix, b: &Matrix, lambda: f64) -> f64 {
    let fit = (b.tr_mul(b)).component_mul(gram).sum() - 2.0 * b.component_mul(q).sum();
    fit + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
}

/// Runs ADMM from the state's `Z`, `A*` and returns `(B, Z, A*, outcome)`.
/// Without convergence the best `B` seen (by lasso objective) is returned.
pub(crate) fn lasso_admm(
    gram: &Matrix,
    q: &Matrix,
    state: &SolverState,
    config: &SolverConfig,
) -> Result<(Matrix, Matrix, Matrix, AdmmOutcome)> {
    let (n, k) = q.shape();
    let gamma = match config.gamma_rule {
        GammaRule::Fixed(g) => g,
        GammaRule::GramNorm => {
            let g = gram.norm() / k as f64;
            if g > 0.0 {
                g
            } else {
                1.0
            }
        }
    };
    let mut shifted = gram.clone();
    for i in 0..k {
        shifted[(i, i)] += gamma;
    }
    let chol = Cholesky::new(shifted)
        .ok_or_else(|| MpbError::NotPositiveDefinite("ADMM split system".into()))?;

    let mut z = if state.z.shape() == (k, n) { state.z.clone() } else { state.b.transpose() };
    let mut a = if state.a_star.shape() == (n, k) { state.a_star.clone() } else { Matrix::zeros(n, k) };
    if state.admm_gamma > 0.0 {
        a *= state.admm_gamma / gamma;
    }
    let kappa = config.lambda_coef / (2.0 * gamma);
    let scale = ((n * k) as f64).sqrt();
    let tol_p = config.admm_tol_primal * scale;
    let tol_d = config.admm_tol_dual * scale;
    let qt = q.transpose();

    let mut b = soft_threshold(&(z.transpose() - &a), kappa);
    let mut best = (f64::INFINITY, b.clone());
    let mut outcome = AdmmOutcome { iters: 0, converged: false, primal: f64::INFINITY, dual: f64::INFINITY, gamma };
    for it in 1..=config.admm_max_iters {
        b = soft_threshold(&(z.transpose() - &a), kappa);
        let rhs = &qt + (&b + &a).transpose() * gamma;
        let z_new = chol.solve(&rhs);
        let gap = &b - z_new.transpose();
        a += &gap;
        outcome.primal = gap.norm();
        outcome.dual = gamma * (&z_new - &z).norm();
        outcome.iters = it;
        z = z_new;
        let f = conditional_lasso(gram, q, &b, config.lambda_coef);
        if f < best.0 {
            best = (f, b.clone());
        }
        if outcome.primal <= tol_p && outcome.dual <= tol_d {
            outcome.converged = true;
            break;
        }
    }
    if !(outcome.primal.is_finite() && outcome.dual.is_finite()) {
        return Err(MpbError::NonFinite("ADMM iterates".into()));
    }
    if !outcome.converged {
        b = best.1;
    }
    Ok((b, z, a, outcome))
}
