use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use mpb_core::fpca::{eigenfunction_model, Truncation, DEFAULT_VARIANCE_THRESHOLD};
use mpb_core::io::{load_model, load_tensor, save_model, save_tensor};
use mpb_core::model::MpbModel;
use mpb_core::pipeline::Problem;
use mpb_core::selection::{cv_lambda_grid, global_rank_sweep, marginal_rank_sweep};
use mpb_core::sim::{
    generate_product_sim, generate_field_sim, mise_csv, momise, replicate, score_product_sim, score_field_sim, FieldSimTruth,
};
use mpb_core::{DenseTensor, Matrix};
use serde::{Deserialize, Serialize};

use crate::config::{load_json, RunConfig, ProductSimRun, FieldSimRun, SimFitSpec};
use crate::{CliError, Completion, Design, SelectMode};

fn out_dir(flag: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = flag.or_else(|| config.out_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."));
    make_dir(&dir)?;
    Ok(dir)
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Core(e.into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    text.push('\n');
    write_text(path, &text)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = load_json(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.check()?;
    Ok(cfg)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<Matrix, CliError> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Input(format!("field `{what}`: every row needs {ncols} entries")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), ncols, &flat))
}

/// `header` columns named `prefix_0, prefix_1, ...` after a leading index column.
fn matrix_csv(index: &str, prefix: &str, m: &Matrix) -> String {
    let mut out = String::from(index);
    for j in 0..m.ncols() {
        out.push_str(&format!(",{prefix}_{j}"));
    }
    out.push('\n');
    for (i, row) in m.row_iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row.iter() {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Timings {
    setup_ms: f64,
    fit_ms: f64,
    write_ms: f64,
}

#[derive(Serialize)]
struct FitReport {
    rank: usize,
    subjects: usize,
    seed: u64,
    iterations: usize,
    converged: bool,
    admm_warning: bool,
    residual_ratio: f64,
    compressed_residual_ratio: f64,
    objective_trace: Vec<f64>,
    timings: Timings,
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn fit(config: &Path, tensor: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<Completion, CliError> {
    let cfg = load_config(config, seed)?;
    let out = out_dir(out, &cfg)?;
    let y = load_tensor(tensor)?;
    let t0 = Instant::now();
    let problem = Problem::new(cfg.bases()?, cfg.grid(), &cfg.penalty_orders())?;
    let solver = cfg.solver_config()?;
    let setup_ms = millis(t0);
    let t1 = Instant::now();
    info!("fitting rank {} to a tensor with dims {:?}", solver.rank, y.dims());
    let res = problem.fit(&y, &solver, cfg.center)?;
    let fit_ms = millis(t1);
    let t2 = Instant::now();
    save_model(out.join("model.mpbm"), &res.model)?;
    let trace_csv: String = std::iter::once("iteration,objective\n".to_string())
        .chain(res.state.objective_trace.iter().enumerate().map(|(i, v)| format!("{i},{v:?}\n")))
        .collect();
    write_text(&out.join("objective_trace.csv"), &trace_csv)?;
    let write_ms = millis(t2);
    let report = FitReport {
        rank: solver.rank,
        subjects: y.last_dim(),
        seed: cfg.seed,
        iterations: res.state.iters,
        converged: res.state.converged,
        admm_warning: res.state.admm_warning,
        residual_ratio: res.residual_ratio(),
        compressed_residual_ratio: res.compressed_residual_ratio(),
        objective_trace: res.state.objective_trace.clone(),
        timings: Timings { setup_ms, fit_ms, write_ms },
    };
    write_json(&out.join("fit_report.json"), &report)?;
    println!(
        "rank {} fit: {} iterations, converged {}, residual ratio {:.6e}",
        report.rank, report.iterations, report.converged, report.residual_ratio
    );
    Ok(if res.state.converged { Completion::Done } else { Completion::NotConverged })
}

/// Stored FPCA output, re-read by `verify`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpcaFile {
    lambda: f64,
    components: usize,
    eigenvalues: Vec<f64>,
    cumulative_variance: Vec<f64>,
    /// `K x components`, one row per model function.
    eigenvectors: Vec<Vec<f64>>,
    /// `N x components`.
    scores: Vec<Vec<f64>>,
}

pub fn fpca(
    model_path: &Path,
    out: &Path,
    lambda: f64,
    components: Option<usize>,
    threshold: Option<f64>,
) -> Result<Completion, CliError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(CliError::Input(format!("--lambda must be finite and nonnegative, got {lambda}")));
    }
    let rule = match components {
        Some(k) => Truncation::Count(k),
        None => Truncation::VarianceThreshold(threshold.unwrap_or(DEFAULT_VARIANCE_THRESHOLD)),
    };
    let model = load_model(model_path)?;
    make_dir(out)?;
    let res = mpb_core::fpca::fpca(&model, lambda, rule)?;
    let file = FpcaFile {
        lambda,
        components: res.n_components(),
        eigenvalues: res.nu.clone(),
        cumulative_variance: res.var_explained.clone(),
        eigenvectors: rows(&res.s),
        scores: rows(&res.scores),
    };
    write_json(&out.join("fpca.json"), &file)?;
    let mut table = String::from("component,eigenvalue,cumulative_variance\n");
    for (j, (nu, cum)) in res.nu.iter().zip(&res.var_explained).enumerate() {
        table.push_str(&format!("{j},{nu:?},{cum:?}\n"));
    }
    write_text(&out.join("eigenvalues.csv"), &table)?;
    write_text(&out.join("scores.csv"), &matrix_csv("subject", "score", &res.scores))?;
    save_model(out.join("eigenfunctions.mpbm"), &eigenfunction_model(&model, &res)?)?;
    println!("{:>9}  {:>14}  {:>10}", "component", "eigenvalue", "cumulative");
    for (j, (nu, cum)) in res.nu.iter().zip(&res.var_explained).enumerate() {
        println!("{j:>9}  {nu:>14.6e}  {cum:>10.6}");
    }
    Ok(Completion::Done)
}

pub fn select(
    mode: SelectMode,
    config: &Path,
    tensor: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<Completion, CliError> {
    let cfg = load_config(config, seed)?;
    let out = out_dir(out, &cfg)?;
    let y = load_tensor(tensor)?;
    let grid = cfg.grid();
    let report = match mode {
        SelectMode::MarginalRank => {
            marginal_rank_sweep(&y, &grid, &cfg.marginal_candidates()?, cfg.select.marginal_threshold)?
        }
        SelectMode::GlobalRank => {
            let problem = Problem::new(cfg.bases()?, grid, &cfg.penalty_orders())?;
            let solver = cfg.solver_config()?;
            global_rank_sweep(&problem, &y, &solver, &cfg.select.global_ranks, cfg.select.global_threshold, cfg.center)?
        }
        SelectMode::Cv => {
            let problem = Problem::new(cfg.bases()?, grid, &cfg.penalty_orders())?;
            let solver = cfg.solver_config()?;
            cv_lambda_grid(&problem, &y, &solver, &cfg.select.cv_lambdas, cfg.select.cv_folds, cfg.seed, cfg.center)?
        }
    };
    write_text(&out.join("selection.csv"), &report.to_csv())?;
    write_json(&out.join("selection.json"), &report)?;
    let chosen = report.chosen();
    let params: Vec<String> = report
        .param_names
        .iter()
        .zip(&chosen.params)
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    println!("chosen {} (criterion {:.6e}) among {} candidates", params.join(", "), chosen.value, report.candidates.len());
    Ok(Completion::Done)
}

#[derive(Serialize)]
struct SimSummary<'a, C: Serialize> {
    design: &'a str,
    config: &'a C,
    replications: usize,
    momise: Option<f64>,
    mise: Option<Vec<f64>>,
}

fn rep_name(r: usize, what: &str) -> String {
    format!("rep{r:03}_{what}")
}

fn fit_and_score<F>(
    spec: &SimFitSpec,
    truth_bases: &[mpb_core::MarginalBasis],
    grid: Vec<Vec<f64>>,
    seed: u64,
    r: usize,
    y: &DenseTensor,
    score: F,
) -> mpb_core::Result<f64>
where
    F: FnOnce(&MpbModel) -> mpb_core::Result<f64>,
{
    let bases = spec.bases(truth_bases)?;
    let orders = vec![spec.penalty_order; bases.len()];
    let problem = Problem::new(bases, grid, &orders)?;
    let solver = spec.solver.build(problem.ndim(), seed.wrapping_add(r as u64))?;
    let res = problem.fit(y, &solver, spec.center)?;
    if !res.state.converged {
        log::warn!("replication {r}: solver stopped after {} iterations", res.state.iters);
    }
    score(&res.model)
}

fn finish_sim<C: Serialize>(out: &Path, design: &str, config: &C, replications: usize, mise: Option<Vec<f64>>) -> Result<Completion, CliError> {
    let m = mise.as_ref().map(|v| momise(v));
    if let Some(v) = &mise {
        write_text(&out.join("metrics.csv"), &mise_csv(v))?;
    }
    write_json(&out.join("simulation.json"), &SimSummary { design, config, replications, momise: m, mise })?;
    match m {
        Some(m) => println!("{design}: moMISE {m:.6e} over {replications} replications"),
        None => println!("{design}: wrote {replications} replications"),
    }
    Ok(Completion::Done)
}

pub fn simulate(design: Design, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<Completion, CliError> {
    make_dir(out)?;
    match design {
        Design::Product => {
            let mut run: ProductSimRun = config.map(load_json).transpose()?.unwrap_or_default();
            if let Some(s) = seed {
                run.sim.seed = s;
            }
            run.sim.validate()?;
            if run.replications == 0 {
                return Err(CliError::Input("field `replications`: must be at least 1".into()));
            }
            let cfg = &run.sim;
            let eval_grid = cfg.eval_grid();
            let scores = replicate(run.replications, |r| {
                let data = generate_product_sim(cfg, r)?;
                save_tensor(out.join(rep_name(r, "truth.mpbt")), &data.truth)?;
                save_tensor(out.join(rep_name(r, "noisy.mpbt")), &data.noisy)?;
                save_model(out.join(rep_name(r, "model.mpbm")), &data.model)?;
                info!("replication {r} written");
                run.fit
                    .as_ref()
                    .map(|spec| {
                        fit_and_score(spec, data.model.bases(), data.grid.clone(), cfg.seed, r, &data.noisy, |m| {
                            score_product_sim(&data, m, &eval_grid)
                        })
                    })
                    .transpose()
            })?;
            let mise = run.fit.as_ref().map(|_| scores.into_iter().flatten().collect());
            finish_sim(out, "product", &run, run.replications, mise)
        }
        Design::Field => {
            let mut run: FieldSimRun = config.map(load_json).transpose()?.unwrap_or_default();
            if let Some(s) = seed {
                run.sim.seed = s;
            }
            run.sim.validate()?;
            let cfg = &run.sim;
            let truth = FieldSimTruth::new(cfg)?;
            let grid = cfg.grid();
            save_tensor(out.join("eigenfunctions.mpbt"), &truth.eigenfunctions(&grid, truth.n_functions())?)?;
            let variances = DenseTensor::new(vec![truth.variances.len()], truth.variances.clone())?;
            save_tensor(out.join("eigenvalues.mpbt"), &variances)?;
            let scores = replicate(cfg.replications, |r| {
                let data = generate_field_sim(cfg, &truth, r)?;
                save_tensor(out.join(rep_name(r, "train.mpbt")), &data.train)?;
                save_tensor(out.join(rep_name(r, "test.mpbt")), &data.test)?;
                let coefs = |m: &Matrix| DenseTensor::new(vec![m.nrows(), m.ncols()], rows(m).concat());
                save_tensor(out.join(rep_name(r, "train_scores.mpbt")), &coefs(&data.train_coefs)?)?;
                save_tensor(out.join(rep_name(r, "test_scores.mpbt")), &coefs(&data.test_coefs)?)?;
                info!("replication {r} written");
                run.fit
                    .as_ref()
                    .map(|spec| {
                        fit_and_score(spec, &truth.bases, data.grid.clone(), cfg.seed, r, &data.train, |m| {
                            score_field_sim(&data, m)
                        })
                    })
                    .transpose()
            })?;
            let mise = run.fit.as_ref().map(|_| scores.into_iter().flatten().collect());
            finish_sim(out, "field", &run, cfg.replications, mise)
        }
    }
}

fn check(name: &str, value: f64, tol: f64, failures: &mut Vec<String>) {
    let ok = value <= tol;
    println!("{name}: {} ({value:.3e}, tolerance {tol:.1e})", if ok { "ok" } else { "FAILED" });
    if !ok {
        failures.push(format!("{name} = {value:.3e} exceeds {tol:.1e}"));
    }
}

pub fn verify(tensor: Option<&Path>, model: Option<&Path>, fpca: Option<&Path>, tol: f64) -> Result<Completion, CliError> {
    if tensor.is_none() && model.is_none() {
        return Err(CliError::Input("give --tensor, --model or --model with --fpca".into()));
    }
    let mut failures = Vec::new();
    if let Some(p) = tensor {
        let t = load_tensor(p)?;
        println!("tensor {}: ok, dims {:?}", p.display(), t.dims());
    }
    if let Some(p) = model {
        let m = load_model(p)?;
        println!("model {}: ok, rank {}, {} subjects", p.display(), m.rank(), m.n_subjects());
        if let Some(f) = fpca {
            let file: FpcaFile = load_json(f)?;
            let k = m.rank();
            let s = from_rows(&file.eigenvectors, file.components, "eigenvectors")?;
            if s.nrows() != k || file.eigenvalues.len() != file.components {
                return Err(CliError::Input(format!(
                    "{}: {} eigenvector rows and {} eigenvalues for a rank-{k} model with {} components",
                    f.display(),
                    s.nrows(),
                    file.eigenvalues.len(),
                    file.components
                )));
            }
            let j = m.gram_zeta()?;
            let sjs = s.transpose() * &j * &s;
            let norm_err = (0..s.ncols()).map(|a| (sjs[(a, a)] - 1.0).abs()).fold(0.0, f64::max);
            check("unit norm s'Js = 1", norm_err, tol, &mut failures);
            let mut pen = j.clone();
            if file.lambda > 0.0 {
                pen += m.laplacian_penalty_zeta()? * file.lambda;
            }
            let spp = s.transpose() * pen * &s;
            let mut off: f64 = 0.0;
            for a in 0..s.ncols() {
                for b in 0..s.ncols() {
                    if a != b {
                        off = off.max(spp[(a, b)].abs() / (spp[(a, a)] * spp[(b, b)]).sqrt());
                    }
                }
            }
            check("penalized orthogonality", off, tol, &mut failures);
            let scores = from_rows(&file.scores, file.components, "scores")?;
            if file.lambda == 0.0 && scores.nrows() >= 2 {
                let n = scores.nrows() as f64;
                let worst = scores
                    .column_iter()
                    .zip(&file.eigenvalues)
                    .map(|(c, nu)| {
                        let mean = c.mean();
                        let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                        (var - nu).abs() / nu.abs().max(1.0)
                    })
                    .fold(0.0, f64::max);
                check("score variance equals eigenvalue", worst, tol, &mut failures);
            }
        }
    }
    if failures.is_empty() {
        Ok(Completion::Done)
    } else {
        Err(CliError::Check(failures.join("; ")))
    }
}

#[derive(Serialize)]
struct ModelInfo<'a> {
    format: &'static str,
    rank: usize,
    subjects: usize,
    bases: &'a [mpb_core::MarginalBasis],
    mean_grid_sizes: Option<Vec<usize>>,
}

pub fn info(tensor: Option<&Path>, model: Option<&Path>) -> Result<Completion, CliError> {
    if let Some(p) = tensor {
        let t = load_tensor(p)?;
        let (lo, hi) = t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let summary = serde_json::json!({
            "format": "MPBT v1",
            "dims": t.dims(),
            "entries": t.len(),
            "min": lo,
            "max": hi,
            "frobenius_norm": t.frobenius_norm(),
        });
        println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::Core(e.into()))?);
    }
    if let Some(p) = model {
        let m = load_model(p)?;
        let summary = ModelInfo {
            format: "MPBM v1",
            rank: m.rank(),
            subjects: m.n_subjects(),
            bases: m.bases(),
            mean_grid_sizes: m.mean().map(|g| g.grid.iter().map(|x| x.len()).collect()),
        };
        println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::Core(e.into()))?);
    }
    if tensor.is_none() && model.is_none() {
        println!("mpb {}", env!("CARGO_PKG_VERSION"));
        println!("tensor files (MPBT v1): magic, version, ndim, u64 LE dims, f64 LE entries, last index fastest");
        println!("model files (MPBM v1): magic, version, u64 LE header length, JSON header, f64 LE coefficients");
    }
    Ok(Completion::Done)
}
