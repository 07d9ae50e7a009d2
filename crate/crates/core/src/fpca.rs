//! Penalized functional PCA in the coordinates of a fitted model.
//!
//! With `J` the Gram matrix of the model functions, `R` their Laplacian
//! penalty and `S` the covariance of the subject coefficients, the
//! eigenfunctions `psi_j = sum_k s_{jk} zeta_k` solve
//! `J S J s = nu (J + lambda R) s`, normalized so that `s' J s = 1`.

use nalgebra::{Cholesky, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, MpbError, Result};
use crate::model::MpbModel;
use crate::tensor::Matrix;

/// Default cumulative-variance threshold for choosing the number of components.
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.99;

/// Slack for comparing cumulative variance fractions against a threshold.
const THRESHOLD_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Count(usize),
    /// Smallest number of components whose cumulative share of the total
    /// eigenvalue sum reaches the threshold.
    VarianceThreshold(f64),
}

#[derive(Clone, Debug)]
pub struct FpcaResult {
    /// `K x K'` eigenvector coordinates, one column per component.
    pub s: Matrix,
    /// Nonincreasing eigenvalues of the retained components.
    pub nu: Vec<f64>,
    /// `N x K'` subject scores; empty (zero rows) when no subjects were given.
    pub scores: Matrix,
    pub lambda: f64,
    /// Cumulative share of the total eigenvalue sum, per retained component.
    pub var_explained: Vec<f64>,
}

impl FpcaResult {
    pub fn n_components(&self) -> usize {
        self.nu.len()
    }
}

/// Sample covariance of the rows of `b` (divisor `N - 1`).
pub fn coef_covariance(b: &Matrix) -> Result<Matrix> {
    let n = b.nrows();
    if n < 2 {
        return Err(MpbError::InvalidArgument(format!(
            "covariance needs at least 2 subjects, got {n}"
        )));
    }
    let mean = b.row_mean();
    let mut centered = b.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
    crate::basis::symmetrize(&mut cov);
    Ok(cov)
}

/// Number of components selected by a truncation rule from a full,
/// nonincreasing spectrum.
pub fn choose_components(nu: &[f64], rule: Truncation) -> Result<usize> {
    match rule {
        Truncation::Count(k) => {
            if k == 0 || k > nu.len() {
                return Err(MpbError::InvalidArgument(format!(
                    "component count must be in 1..={}, got {k}",
                    nu.len()
                )));
            }
            Ok(k)
        }
        Truncation::VarianceThreshold(t) => {
            if !(t > 0.0 && t <= 1.0) {
                return Err(MpbError::InvalidArgument(format!("variance threshold must be in (0, 1], got {t}")));
            }
            let total: f64 = nu.iter().sum();
            if total <= 0.0 {
                return Ok(1);
            }
            let mut acc = 0.0;
            for (i, v) in nu.iter().enumerate() {
                acc += v;
                if acc / total >= t - THRESHOLD_SLACK {
                    return Ok(i + 1);
                }
            }
            Ok(nu.len())
        }
    }
}

/// Solves the generalized eigenproblem and keeps the components selected
/// by `rule`. Scores are left empty.
pub fn solve_fpca(j: &Matrix, r: &Matrix, sigma: &Matrix, lambda: f64, rule: Truncation) -> Result<FpcaResult> {
    let k = j.nrows();
    if j.shape() != (k, k) || r.shape() != (k, k) || sigma.shape() != (k, k) {
        return shape_err(format!(
            "J {:?}, R {:?} and covariance {:?} must share a square shape",
            j.shape(),
            r.shape(),
            sigma.shape()
        ));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(MpbError::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    let lhs = j + r * lambda;
    let chol = Cholesky::new(lhs.clone()).ok_or_else(|| {
        let eig = lhs.clone().symmetric_eigenvalues();
        MpbError::NotPositiveDefinite(format!(
            "J + lambda R (eigenvalues in [{:.3e}, {:.3e}]); the model functions may be collinear",
            eig.min(),
            eig.max()
        ))
    })?;
    let l = chol.l();
    let jsj = j * sigma * j;
    // A = L^-1 (J S J) L^-T
    let tmp = l
        .solve_lower_triangular(&jsj)
        .ok_or_else(|| MpbError::Numerical("triangular solve".into()))?;
    let mut a = l
        .solve_lower_triangular(&tmp.transpose())
        .ok_or_else(|| MpbError::Numerical("triangular solve".into()))?;
    crate::basis::symmetrize(&mut a);
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));

    let top = eig.eigenvalues[order[0]].abs().max(1.0);
    // rounding in the reduction grows with the conditioning of J + lambda R
    let diag = l.diagonal();
    let cond = (diag.max() / diag.min()).powi(2);
    let neg_tol = 1e-10f64.max(64.0 * f64::EPSILON * cond);
    let mut nu_all = Vec::with_capacity(k);
    for &i in &order {
        let v = eig.eigenvalues[i];
        if v < -neg_tol * top {
            return Err(MpbError::Numerical(format!(
                "negative eigenvalue {v:.3e}; the coefficient covariance is not PSD"
            )));
        }
        nu_all.push(v.max(0.0));
    }
    let kept = choose_components(&nu_all, rule)?;
    let total: f64 = nu_all.iter().sum();

    let lt = l.transpose();
    let mut s = Matrix::zeros(k, kept);
    for (col, &i) in order.iter().take(kept).enumerate() {
        let v = eig.eigenvectors.column(i).into_owned();
        let mut sj = lt
            .solve_upper_triangular(&v)
            .ok_or_else(|| MpbError::Numerical("triangular solve".into()))?;
        let norm = (sj.transpose() * j * &sj)[(0, 0)];
        if !(norm > 0.0) {
            return Err(MpbError::Numerical("eigenfunction with zero norm".into()));
        }
        sj /= norm.sqrt();
        let (idx, _) = sj
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) });
        if sj[idx] < 0.0 {
            sj.neg_mut();
        }
        s.set_column(col, &sj);
    }
    let mut acc = 0.0;
    let var_explained = nu_all[..kept]
        .iter()
        .map(|v| {
            acc += v;
            if total > 0.0 {
                acc / total
            } else {
                0.0
            }
        })
        .collect();
    Ok(FpcaResult {
        s,
        nu: nu_all[..kept].to_vec(),
        scores: Matrix::zeros(0, kept),
        lambda,
        var_explained,
    })
}

/// `score(i, j) = b_i' J s_j`, the inner product of subject `i` with `psi_j`.
pub fn scores(b: &Matrix, j: &Matrix, s: &Matrix) -> Result<Matrix> {
    if b.ncols() != j.nrows() || s.nrows() != j.nrows() {
        return shape_err(format!("B {:?}, J {:?}, s {:?}", b.shape(), j.shape(), s.shape()));
    }
    Ok(b * j * s)
}

/// Full pipeline on a fitted model: covariance of its subject coefficients,
/// eigenproblem with the model's analytic Gram and Laplacian penalty, scores.
pub fn fpca(model: &MpbModel, lambda: f64, rule: Truncation) -> Result<FpcaResult> {
    let j = model.gram_zeta()?;
    let r = if lambda > 0.0 {
        model.laplacian_penalty_zeta()?
    } else {
        Matrix::zeros(model.rank(), model.rank())
    };
    let sigma = coef_covariance(model.subject_coefs())?;
    let mut res = solve_fpca(&j, &r, &sigma, lambda, rule)?;
    res.scores = scores(model.subject_coefs(), &j, &res.s)?;
    Ok(res)
}

/// The estimated eigenfunctions as a model whose "subjects" are `psi_j`.
pub fn eigenfunction_model(model: &MpbModel, result: &FpcaResult) -> Result<MpbModel> {
    if result.s.nrows() != model.rank() {
        return shape_err(format!(
            "eigenvectors have {} rows, model rank is {}",
            result.s.nrows(),
            model.rank()
        ));
    }
    model.with_subject_coefs(result.s.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, k: usize, shift: f64) -> Matrix {
        let a = Matrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        a.tr_mul(&a) + Matrix::identity(k, k) * shift
    }

    #[test]
    fn covariance_cases() {
        let b = Matrix::from_row_slice(2, 3, &[1., 2., 3., 1., 2., 3.]);
        assert_eq!(coef_covariance(&b).unwrap(), Matrix::zeros(3, 3));
        let x = Matrix::from_column_slice(4, 1, &[1., 2., 3., 6.]);
        // mean 3, squared deviations 4+1+0+9 = 14, over 3
        assert!((coef_covariance(&x).unwrap()[(0, 0)] - 14.0 / 3.0).abs() < 1e-14);
        assert!(coef_covariance(&Matrix::zeros(1, 2)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Matrix::from_fn(9, 3, |_, _| rng.random_range(-2.0..2.0));
        let cov = coef_covariance(&b).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                let mp = (0..9).map(|i| b[(i, p)]).sum::<f64>() / 9.0;
                let mq = (0..9).map(|i| b[(i, q)]).sum::<f64>() / 9.0;
                let c = (0..9).map(|i| (b[(i, p)] - mp) * (b[(i, q)] - mq)).sum::<f64>() / 8.0;
                assert!((cov[(p, q)] - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_gram_recovers_axes() {
        let j = Matrix::identity(3, 3);
        let sigma = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let res = solve_fpca(&j, &Matrix::zeros(3, 3), &sigma, 0.0, Truncation::Count(3)).unwrap();
        for (got, want) in res.nu.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((res.s.clone() - Matrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn generalized_residual_and_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let j = random_spd(&mut rng, 5, 0.5);
            let r = random_spd(&mut rng, 5, 0.0);
            let sigma = random_spd(&mut rng, 5, 0.0);
            let lambda = 0.3;
            let res = solve_fpca(&j, &r, &sigma, lambda, Truncation::Count(5)).unwrap();
            let jsj = &j * &sigma * &j;
            let lhs = &j + &r * lambda;
            for c in 0..5 {
                let s = res.s.column(c);
                let resid = &jsj * s - (&lhs * s) * res.nu[c];
                assert!(resid.norm() <= 1e-8 * jsj.norm());
                assert!(((s.transpose() * &j * s)[(0, 0)] - 1.0).abs() < 1e-8);
                for c2 in 0..c {
                    let s2 = res.s.column(c2);
                    assert!((s.transpose() * &lhs * s2)[(0, 0)].abs() < 1e-8);
                }
            }
            assert!(res.nu.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn unpenalized_eigenvalues_match_dense_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let j = random_spd(&mut rng, 4, 1.0);
        let sigma = random_spd(&mut rng, 4, 0.0);
        let res = solve_fpca(&j, &Matrix::zeros(4, 4), &sigma, 0.0, Truncation::Count(4)).unwrap();
        // J S J s = nu J s  <=>  S J s = nu s: eigenvalues of J^1/2 S J^1/2
        let e = SymmetricEigen::new(j.clone());
        let half = &e.eigenvectors
            * Matrix::from_diagonal(&e.eigenvalues.map(f64::sqrt))
            * e.eigenvectors.transpose();
        let mut want: Vec<f64> = (&half * &sigma * &half).symmetric_eigenvalues().iter().copied().collect();
        want.sort_by(|a, b| b.total_cmp(a));
        for (g, w) in res.nu.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9 * want[0]);
        }
    }

    #[test]
    fn variance_threshold_on_constructed_spectrum() {
        let nu = [0.6, 0.3, 0.09, 0.01];
        assert_eq!(choose_components(&nu, Truncation::VarianceThreshold(0.99)).unwrap(), 3);
        assert_eq!(choose_components(&nu, Truncation::VarianceThreshold(0.5)).unwrap(), 1);
        assert!(choose_components(&nu, Truncation::Count(5)).is_err());
    }

    #[test]
    fn scores_variance_equals_eigenvalues_without_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = Matrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let j = random_spd(&mut rng, 4, 0.5);
        let sigma = coef_covariance(&b).unwrap();
        let res = solve_fpca(&j, &Matrix::zeros(4, 4), &sigma, 0.0, Truncation::Count(4)).unwrap();
        let sc = scores(&b, &j, &res.s).unwrap();
        let var = coef_covariance(&sc).unwrap();
        for c in 0..4 {
            assert!((var[(c, c)] - res.nu[c]).abs() < 1e-8 * res.nu[0]);
        }
        assert_eq!(scores(&Matrix::zeros(3, 4), &j, &res.s).unwrap(), Matrix::zeros(3, 4));
    }

    #[test]
    fn roughness_does_not_increase_with_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let j = random_spd(&mut rng, 6, 0.5);
            let r = random_spd(&mut rng, 6, 0.0);
            let sigma = random_spd(&mut rng, 6, 0.0);
            let rough = |lambda: f64| {
                let res = solve_fpca(&j, &r, &sigma, lambda, Truncation::Count(6)).unwrap();
                (0..6).map(|c| (res.s.column(c).transpose() * &r * res.s.column(c))[(0, 0)]).sum::<f64>()
            };
            let mut prev = rough(0.0);
            for lambda in [0.01, 0.1, 1.0, 10.0] {
                let cur = rough(lambda);
                assert!(cur <= prev * (1.0 + 1e-9) + 1e-12, "lambda {lambda}: {cur} > {prev}");
                prev = cur;
            }
        }
    }

    #[test]
    fn indefinite_lhs_is_reported() {
        let j = Matrix::from_diagonal_element(2, 2, -1.0);
        let err = solve_fpca(&j, &Matrix::zeros(2, 2), &Matrix::identity(2, 2), 0.0, Truncation::Count(1));
        assert!(matches!(err, Err(MpbError::NotPositiveDefinite(_))));
    }
}
