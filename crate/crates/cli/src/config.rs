//! JSON configuration documents for the `fit`, `select` and `simulate` commands.

use std::path::Path;

use mpb_core::basis::linspace;
use mpb_core::selection::{default_lambda_grid, DEFAULT_GLOBAL_THRESHOLD, DEFAULT_MARGINAL_THRESHOLD};
use mpb_core::sim::{ProductSimConfig, FieldSimConfig};
use mpb_core::solver::{CoefPenalty, GammaRule, Init, SolverConfig};
use mpb_core::{MarginalBasis, MpbError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Parses a JSON document, reporting the path of the offending field on failure.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::Input(format!("{}: field `{field}`: {}", path.display(), e.inner()))
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    Bspline {
        rank: usize,
        #[serde(default = "default_degree")]
        degree: usize,
    },
    /// `period` defaults to the domain length.
    Fourier { rank: usize, period: Option<f64> },
}

fn default_degree() -> usize {
    3
}

impl BasisSpec {
    pub fn with_rank(&self, rank: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            BasisSpec::Bspline { rank: r, .. } | BasisSpec::Fourier { rank: r, .. } => *r = rank,
        }
        out
    }

    pub fn build(&self, domain: [f64; 2]) -> mpb_core::Result<MarginalBasis> {
        let [lo, hi] = domain;
        match *self {
            BasisSpec::Bspline { rank, degree } => MarginalBasis::bspline(lo, hi, rank, degree),
            BasisSpec::Fourier { rank, period } => MarginalBasis::fourier(lo, hi, rank, period.unwrap_or(hi - lo)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Equispaced { equispaced: usize },
    Points(Vec<f64>),
}

impl GridSpec {
    pub fn points(&self, domain: [f64; 2]) -> Vec<f64> {
        match self {
            GridSpec::Equispaced { equispaced } => linspace(domain[0], domain[1], *equispaced),
            GridSpec::Points(p) => p.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSpec {
    pub domain: [f64; 2],
    pub basis: BasisSpec,
    pub grid: GridSpec,
    #[serde(default = "default_penalty_order")]
    pub penalty_order: usize,
}

fn default_penalty_order() -> usize {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Random,
    Hosvd,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub rank: usize,
    pub lambda_marginal: OneOrMany,
    pub lambda_coef: f64,
    pub coef_penalty: CoefPenalty,
    pub max_outer_iters: usize,
    pub outer_tol: f64,
    pub admm_tol_primal: f64,
    pub admm_tol_dual: f64,
    pub admm_max_iters: usize,
    pub proximal_mu: f64,
    /// Fixed ADMM step size; the Gram-norm rule when absent.
    pub admm_gamma: Option<f64>,
    pub init: InitKind,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let base = SolverConfig::new(1, 1);
        Self {
            rank: 1,
            lambda_marginal: OneOrMany::One(0.0),
            lambda_coef: 0.0,
            coef_penalty: base.coef_penalty,
            max_outer_iters: base.max_outer_iters,
            outer_tol: base.outer_tol,
            admm_tol_primal: base.admm_tol_primal,
            admm_tol_dual: base.admm_tol_dual,
            admm_max_iters: base.admm_max_iters,
            proximal_mu: base.proximal_mu,
            admm_gamma: None,
            init: InitKind::Random,
        }
    }
}

impl SolverSpec {
    pub fn build(&self, ndim: usize, seed: u64) -> mpb_core::Result<SolverConfig> {
        let lambda_marginal = match &self.lambda_marginal {
            OneOrMany::One(l) => vec![*l; ndim],
            OneOrMany::Many(v) => v.clone(),
        };
        let cfg = SolverConfig {
            rank: self.rank,
            lambda_marginal,
            lambda_coef: self.lambda_coef,
            coef_penalty: self.coef_penalty,
            max_outer_iters: self.max_outer_iters,
            outer_tol: self.outer_tol,
            admm_tol_primal: self.admm_tol_primal,
            admm_tol_dual: self.admm_tol_dual,
            admm_max_iters: self.admm_max_iters,
            proximal_mu: self.proximal_mu,
            gamma_rule: self.admm_gamma.map_or(GammaRule::GramNorm, GammaRule::Fixed),
            init: match self.init {
                InitKind::Random => Init::RandomNormal { seed },
                InitKind::Hosvd => Init::Hosvd { seed },
            },
        };
        cfg.validate(ndim)?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankCandidates {
    /// The same rank on every dimension.
    Uniform(Vec<usize>),
    PerDimension(Vec<Vec<usize>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSpec {
    pub marginal_ranks: RankCandidates,
    pub marginal_threshold: f64,
    pub global_ranks: Vec<usize>,
    pub global_threshold: f64,
    /// `(lambda_marginal, lambda_coef)` pairs.
    pub cv_lambdas: Vec<(f64, f64)>,
    pub cv_folds: usize,
}

impl Default for SelectSpec {
    fn default() -> Self {
        Self {
            marginal_ranks: RankCandidates::Uniform(vec![4, 6, 8, 10, 12, 15, 20]),
            marginal_threshold: DEFAULT_MARGINAL_THRESHOLD,
            global_ranks: (1..=10).collect(),
            global_threshold: DEFAULT_GLOBAL_THRESHOLD,
            cv_lambdas: default_lambda_grid(),
            cv_folds: 5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimensions: Vec<DimensionSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    /// Remove the sample mean over subjects before fitting.
    #[serde(default)]
    pub center: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub select: SelectSpec,
    /// Output directory used when `--out` is not given.
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn ndim(&self) -> usize {
        self.dimensions.len()
    }

    pub fn check(&self) -> Result<(), CliError> {
        if self.dimensions.is_empty() {
            return Err(CliError::Input("field `dimensions`: at least one dimension is required".into()));
        }
        for (d, dim) in self.dimensions.iter().enumerate() {
            let [lo, hi] = dim.domain;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CliError::Input(format!("field `dimensions[{d}].domain`: need lo < hi, got [{lo}, {hi}]")));
            }
            if let GridSpec::Equispaced { equispaced } = dim.grid {
                if equispaced < 2 {
                    return Err(CliError::Input(format!("field `dimensions[{d}].grid`: need at least 2 points")));
                }
            }
        }
        Ok(())
    }

    pub fn bases(&self) -> mpb_core::Result<Vec<MarginalBasis>> {
        self.dimensions.iter().map(|d| d.basis.build(d.domain)).collect()
    }

    pub fn grid(&self) -> Vec<Vec<f64>> {
        self.dimensions.iter().map(|d| d.grid.points(d.domain)).collect()
    }

    pub fn penalty_orders(&self) -> Vec<usize> {
        self.dimensions.iter().map(|d| d.penalty_order).collect()
    }

    pub fn solver_config(&self) -> mpb_core::Result<SolverConfig> {
        self.solver.build(self.ndim(), self.seed)
    }

    /// Candidate basis systems for the marginal-rank sweep.
    pub fn marginal_candidates(&self) -> Result<Vec<Vec<MarginalBasis>>, CliError> {
        let ranks: Vec<Vec<usize>> = match &self.select.marginal_ranks {
            RankCandidates::Uniform(r) => r.iter().map(|&m| vec![m; self.ndim()]).collect(),
            RankCandidates::PerDimension(r) => r.clone(),
        };
        ranks
            .iter()
            .map(|row| {
                if row.len() != self.ndim() {
                    return Err(CliError::Input(format!(
                        "field `select.marginal_ranks`: candidate {row:?} has {} entries for {} dimensions",
                        row.len(),
                        self.ndim()
                    )));
                }
                self.dimensions
                    .iter()
                    .zip(row)
                    .map(|(d, &m)| d.basis.with_rank(m).build(d.domain).map_err(CliError::from))
                    .collect()
            })
            .collect()
    }
}

/// How each simulated replication is fitted and scored.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimFitSpec {
    /// Size of the cubic B-spline system on each dimension; when absent the
    /// generating bases are used.
    pub basis_rank: Option<usize>,
    pub penalty_order: usize,
    pub solver: SolverSpec,
    pub center: bool,
}

impl Default for SimFitSpec {
    fn default() -> Self {
        Self {
            basis_rank: None,
            penalty_order: 2,
            solver: SolverSpec { rank: 10, init: InitKind::Hosvd, ..Default::default() },
            center: false,
        }
    }
}

impl SimFitSpec {
    pub fn bases(&self, truth: &[MarginalBasis]) -> mpb_core::Result<Vec<MarginalBasis>> {
        match self.basis_rank {
            None => Ok(truth.to_vec()),
            Some(m) => truth
                .iter()
                .map(|b| {
                    let (lo, hi) = b.domain();
                    MarginalBasis::bspline(lo, hi, m, 3)
                })
                .collect(),
        }
    }
}

fn default_fit() -> Option<SimFitSpec> {
    Some(SimFitSpec::default())
}

fn default_replications() -> usize {
    5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSimRun {
    #[serde(default)]
    pub sim: ProductSimConfig,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// `null` skips fitting and scoring.
    #[serde(default = "default_fit")]
    pub fit: Option<SimFitSpec>,
}

impl Default for ProductSimRun {
    fn default() -> Self {
        Self { sim: ProductSimConfig::default(), replications: default_replications(), fit: default_fit() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSimRun {
    #[serde(default)]
    pub sim: FieldSimConfig,
    #[serde(default = "default_fit")]
    pub fit: Option<SimFitSpec>,
}

impl Default for FieldSimRun {
    fn default() -> Self {
        Self { sim: FieldSimConfig::default(), fit: default_fit() }
    }
}

impl From<MpbError> for CliError {
    fn from(e: MpbError) -> Self {
        CliError::Core(e)
    }
}
