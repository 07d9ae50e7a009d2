//! Data-driven choice of marginal ranks, global rank and penalty weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::basis::MarginalBasis;
use crate::error::{MpbError, Result};
use crate::pipeline::Problem;
use crate::reduction::{compress, factorize};
use crate::solver::{residual_sq, SolverConfig, SolverState};
use crate::tensor::{DenseTensor, Matrix};

pub const DEFAULT_MARGINAL_THRESHOLD: f64 = 0.90;
pub const DEFAULT_GLOBAL_THRESHOLD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    MarginalVariance,
    NormalizedResidual,
    CvError,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub params: Vec<f64>,
    pub value: f64,
    pub chosen: bool,
    /// Per-fold errors for cross-validation, empty otherwise.
    pub folds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionReport {
    pub kind: CriterionKind,
    pub param_names: Vec<String>,
    pub candidates: Vec<Candidate>,
}

impl SelectionReport {
    pub fn chosen(&self) -> &Candidate {
        self.candidates.iter().find(|c| c.chosen).expect("exactly one candidate is chosen")
    }

    /// CSV with one column per parameter, then `criterion,chosen`.
    pub fn to_csv(&self) -> String {
        let mut out = self.param_names.join(",");
        out.push_str(",criterion,chosen\n");
        for c in &self.candidates {
            for p in &c.params {
                out.push_str(&format!("{p:?},"));
            }
            out.push_str(&format!("{:?},{}\n", c.value, c.chosen));
        }
        out
    }
}

/// Share of the data energy captured by the marginal bases:
/// `|Y x_1 U_1' ... x_D U_D'|^2 / |Y|^2`.
pub fn marginal_rank_criterion(y: &DenseTensor, bases: &[MarginalBasis], grid: &[Vec<f64>]) -> Result<f64> {
    let total = y.norm_sq();
    if total == 0.0 {
        return Err(MpbError::InvalidArgument("data tensor has zero norm".into()));
    }
    if bases.len() != grid.len() {
        return Err(MpbError::Shape(format!("{} bases for {} grids", bases.len(), grid.len())));
    }
    let facs = bases
        .iter()
        .zip(grid)
        .enumerate()
        .map(|(d, (b, g))| factorize(&b.evaluate(g, 0)?, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(compress(y, &facs)?.norm_sq() / total)
}

/// Evaluates every candidate basis set and chooses the first (in the given
/// order) whose criterion reaches `threshold`, or the best one if none does.
pub fn marginal_rank_sweep(
    y: &DenseTensor,
    grid: &[Vec<f64>],
    candidates: &[Vec<MarginalBasis>],
    threshold: f64,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(MpbError::InvalidArgument("no candidate ranks given".into()));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for bases in candidates {
        let value = marginal_rank_criterion(y, bases, grid)?;
        let params = bases.iter().map(|b| b.rank() as f64).collect();
        rows.push(Candidate { params, value, chosen: false, folds: Vec::new() });
    }
    let pick = rows
        .iter()
        .position(|c| c.value >= threshold)
        .unwrap_or_else(|| argmax(rows.iter().map(|c| c.value)));
    rows[pick].chosen = true;
    let ndim = candidates[0].len();
    Ok(SelectionReport {
        kind: CriterionKind::MarginalVariance,
        param_names: (0..ndim).map(|d| format!("rank_{d}")).collect(),
        candidates: rows,
    })
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Normalized residual `|G - model|^2 / |G|^2` of a fitted state.
pub fn global_rank_criterion(g: &DenseTensor, state: &SolverState) -> Result<f64> {
    let total = g.norm_sq();
    if total == 0.0 {
        return Err(MpbError::InvalidArgument("compressed tensor has zero norm".into()));
    }
    Ok(residual_sq(g, &state.c_tilde, &state.b)? / total)
}

/// Fits each rank in increasing order, warm-starting every fit from the
/// previous solution padded with random columns, and chooses the smallest
/// rank whose normalized residual is at most `threshold` (the largest rank
/// if none is).
pub fn global_rank_sweep(
    problem: &Problem,
    y: &DenseTensor,
    config: &SolverConfig,
    ranks: &[usize],
    threshold: f64,
    center: bool,
) -> Result<SelectionReport> {
    let mut ranks = ranks.to_vec();
    ranks.sort_unstable();
    ranks.dedup();
    if ranks.is_empty() || ranks[0] == 0 {
        return Err(MpbError::InvalidArgument("rank grid must be nonempty and positive".into()));
    }
    let seed = match config.init {
        crate::solver::Init::RandomNormal { seed } | crate::solver::Init::Hosvd { seed } => seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_6a1b);
    let mut prev: Option<Vec<Matrix>> = None;
    let mut rows = Vec::with_capacity(ranks.len());
    for &k in &ranks {
        let mut cfg = config.clone();
        cfg.rank = k;
        let res = match prev.take() {
            None => problem.fit(y, &cfg, center)?,
            Some(c) => {
                let padded = c
                    .iter()
                    .map(|m| {
                        let mut p = m.clone().resize_horizontally(k, 0.0);
                        for col in m.ncols()..k {
                            let mut v: nalgebra::DVector<f64> =
                                nalgebra::DVector::from_fn(m.nrows(), |_, _| StandardNormal.sample(&mut rng));
                            v /= v.norm().max(f64::MIN_POSITIVE);
                            p.set_column(col, &v);
                        }
                        p
                    })
                    .collect();
                problem.fit_warm(y, &cfg, center, padded)?
            }
        };
        let value = res.compressed_residual_ratio();
        rows.push(Candidate { params: vec![k as f64], value, chosen: false, folds: Vec::new() });
        prev = Some(res.state.c_tilde);
    }
    let pick = rows
        .iter()
        .position(|c| c.value <= threshold)
        .unwrap_or(rows.len() - 1);
    rows[pick].chosen = true;
    Ok(SelectionReport { kind: CriterionKind::NormalizedResidual, param_names: vec!["rank".into()], candidates: rows })
}

/// `values` log-spaced points per axis over `[lo, hi]` on both axes.
pub fn log_grid(lo: f64, hi: f64, values: usize) -> Vec<(f64, f64)> {
    let axis: Vec<f64> = if values == 1 {
        vec![lo]
    } else {
        let (a, b) = (lo.log10(), hi.log10());
        (0..values).map(|i| 10f64.powf(a + (b - a) * i as f64 / (values - 1) as f64)).collect()
    };
    axis.iter().flat_map(|&f| axis.iter().map(move |&c| (f, c))).collect()
}

/// Default 5 x 5 grid over `[1e-10, 1e-2]^2`.
pub fn default_lambda_grid() -> Vec<(f64, f64)> {
    log_grid(1e-10, 1e-2, 5)
}

/// Subject folds: a seeded shuffle followed by round-robin assignment.
pub fn subject_folds(n: usize, n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_folds < 2 || n_folds > n {
        return Err(MpbError::InvalidArgument(format!(
            "need 2 <= folds <= subjects, got {n_folds} folds for {n} subjects"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); n_folds];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % n_folds].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Mean squared held-out projection residual for one `(lambda_f, lambda_coef)`
/// pair, per fold.
fn cv_errors(problem: &Problem, y: &DenseTensor, config: &SolverConfig, point: (f64, f64), folds: &[Vec<usize>], center: bool) -> Result<Vec<f64>> {
    let mut cfg = config.clone();
    cfg.lambda_marginal = vec![point.0; problem.ndim()];
    cfg.lambda_coef = point.1;
    let n = y.last_dim();
    let cells: usize = y.len() / n;
    folds
        .iter()
        .map(|test| {
            let train: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
            let fit = problem.fit(&y.select_last(&train)?, &cfg, center)?;
            let proj = fit.model.project(&y.select_last(test)?, problem.grid())?;
            let sq: f64 = proj.residual_norms.iter().map(|r| r * r).sum();
            Ok(sq / (cells * test.len()) as f64)
        })
        .collect()
}

/// Cross-validation over `(lambda_f, lambda_coef)` pairs, with the same
/// `lambda_f` on every dimension. Ties go to the larger penalties.
pub fn cv_lambda_grid(
    problem: &Problem,
    y: &DenseTensor,
    config: &SolverConfig,
    grid: &[(f64, f64)],
    n_folds: usize,
    seed: u64,
    center: bool,
) -> Result<SelectionReport> {
    if grid.is_empty() {
        return Err(MpbError::InvalidArgument("lambda grid is empty".into()));
    }
    problem.check_data(y)?;
    let folds = subject_folds(y.last_dim(), n_folds, seed)?;
    let run = |p: &(f64, f64)| cv_errors(problem, y, config, *p, &folds, center);
    #[cfg(feature = "parallel")]
    let errors: Vec<Result<Vec<f64>>> = {
        use rayon::prelude::*;
        grid.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let errors: Vec<Result<Vec<f64>>> = grid.iter().map(run).collect();

    let mut rows = Vec::with_capacity(grid.len());
    for (p, e) in grid.iter().zip(errors) {
        let folds = e?;
        let value = folds.iter().sum::<f64>() / folds.len() as f64;
        rows.push(Candidate { params: vec![p.0, p.1], value, chosen: false, folds });
    }
    let mut best = 0;
    for i in 1..rows.len() {
        let (a, b) = (rows[i].value, rows[best].value);
        let tie = (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        let larger = (rows[i].params[0], rows[i].params[1]) > (rows[best].params[0], rows[best].params[1]);
        if (!tie && a < b) || (tie && larger) {
            best = i;
        }
    }
    rows[best].chosen = true;
    Ok(SelectionReport {
        kind: CriterionKind::CvError,
        param_names: vec!["lambda_f".into(), "lambda_coef".into()],
        candidates: rows,
    })
}
