//! Browser bindings: basis curves, a 2-D fit of simulated fields, and
//! penalized FPCA of the fitted model. Every array crosses the boundary as
//! a flat `Float64Array`; 2-D fields are row-major `points x points`.

use mpb_core::basis::linspace;
use mpb_core::fpca::{eigenfunction_model, fpca, Truncation};
use mpb_core::model::MpbModel;
use mpb_core::pipeline::Problem;
use mpb_core::sim::{generate_field_sim, inner_products, subspace_capture, FieldSimConfig, FieldSimData, FieldSimTruth};
use mpb_core::solver::{Init, SolverConfig};
use mpb_core::{DenseTensor, MarginalBasis, MpbError, Result};
use wasm_bindgen::prelude::*;

fn js(e: MpbError) -> JsError {
    JsError::new(&e.to_string())
}

fn build_basis(kind: &str, rank: usize) -> Result<MarginalBasis> {
    match kind {
        "bspline" => MarginalBasis::bspline(0.0, 1.0, rank, 3),
        "fourier" => MarginalBasis::fourier(0.0, 1.0, rank, 1.0),
        other => Err(MpbError::InvalidArgument(format!("unknown basis kind {other:?}"))),
    }
}

fn basis_values(kind: &str, rank: usize, points: usize) -> Result<Vec<f64>> {
    let phi = build_basis(kind, rank)?.evaluate(&linspace(0.0, 1.0, points), 0)?;
    // column-major storage already holds one function per contiguous run
    Ok(phi.iter().copied().collect())
}

/// Values of every basis function on `points` equispaced points of `[0, 1]`,
/// laid out function-major (`rank` rows of `points`).
#[wasm_bindgen]
pub fn basis_curves(kind: &str, rank: usize, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    basis_values(kind, rank, points).map_err(js)
}

/// Slice `index` of the last mode of a `(p, p, n)` tensor, row-major.
fn slice_last(t: &DenseTensor, index: usize) -> Vec<f64> {
    let (p0, p1) = (t.dims()[0], t.dims()[1]);
    let mut out = Vec::with_capacity(p0 * p1);
    for a in 0..p0 {
        for b in 0..p1 {
            out.push(t.get(&[a, b, index]));
        }
    }
    out
}

/// Simulated 2-D fields with a known eigen-decomposition, a fitted model and
/// its principal components.
#[wasm_bindgen]
pub struct FieldDemo {
    truth: FieldSimTruth,
    data: FieldSimData,
    /// Noise-free fields behind `data.train`.
    clean: DenseTensor,
    model: Option<MpbModel>,
    eigen: Option<(Vec<f64>, DenseTensor)>,
}

impl FieldDemo {
    fn create(seed: u64, subjects: usize, points: usize, noise_var: f64) -> Result<Self> {
        let cfg = FieldSimConfig {
            points,
            train_subjects: subjects,
            test_subjects: 1,
            replications: 1,
            noise_var,
            seed,
            ..Default::default()
        };
        cfg.validate()?;
        let truth = FieldSimTruth::new(&cfg)?;
        let data = generate_field_sim(&cfg, &truth, 0)?;
        let clean = truth.evaluate_fields(&data.grid, &data.train_coefs)?;
        Ok(Self { truth, data, clean, model: None, eigen: None })
    }

    fn run_fit(&mut self, rank: usize, lambda: f64) -> Result<f64> {
        let bases = vec![MarginalBasis::bspline(0.0, 1.0, 12, 3)?; 2];
        let problem = Problem::new(bases, self.data.grid.clone(), &[2, 2])?;
        let mut cfg = SolverConfig::new(rank, 2);
        cfg.lambda_marginal = vec![lambda; 2];
        cfg.lambda_coef = lambda;
        cfg.max_outer_iters = 100;
        cfg.init = Init::Hosvd { seed: 0 };
        let res = problem.fit(&self.data.train, &cfg, false)?;
        let ratio = res.residual_ratio();
        self.model = Some(res.model);
        self.eigen = None;
        Ok(ratio)
    }

    fn fitted_model(&self) -> Result<&MpbModel> {
        self.model.as_ref().ok_or_else(|| MpbError::InvalidArgument("call fit first".into()))
    }

    fn run_fpca(&mut self, lambda: f64, count: usize) -> Result<Vec<f64>> {
        let model = self.fitted_model()?;
        let count = count.min(model.rank()).min(self.truth.n_functions());
        let res = fpca(model, lambda, Truncation::Count(count))?;
        let mut fields = eigenfunction_model(model, &res)?.evaluate_subjects(&self.data.grid)?;
        // flip signs to match the true eigenfunctions
        let reference = self.truth.eigenfunctions(&self.data.grid, count)?;
        let cross = inner_products(&reference, &fields, &self.data.grid)?;
        let p = fields.dims()[0] * fields.dims()[1];
        for j in 0..count {
            if cross[(j, j)] < 0.0 {
                for v in fields.data_mut().iter_mut().skip(j).step_by(count).take(p) {
                    *v = -*v;
                }
            }
        }
        let nu = res.nu.clone();
        self.eigen = Some((nu.clone(), fields));
        Ok(nu)
    }

    fn capture(&self) -> Result<Vec<f64>> {
        let (_, fields) = self.eigen.as_ref().ok_or_else(|| MpbError::InvalidArgument("call fpca first".into()))?;
        let reference = self.truth.eigenfunctions(&self.data.grid, fields.last_dim())?;
        subspace_capture(fields, &reference, &self.data.grid)
    }
}

#[wasm_bindgen]
impl FieldDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, subjects: usize, points: usize, noise_var: f64) -> std::result::Result<FieldDemo, JsError> {
        Self::create(seed, subjects, points, noise_var).map_err(js)
    }

    pub fn points(&self) -> usize {
        self.data.grid[0].len()
    }

    pub fn subjects(&self) -> usize {
        self.data.train.last_dim()
    }

    /// Observed (noisy) field of one subject.
    pub fn observed(&self, subject: usize) -> Vec<f64> {
        slice_last(&self.data.train, subject.min(self.subjects() - 1))
    }

    /// Noise-free field of one subject.
    pub fn clean(&self, subject: usize) -> Vec<f64> {
        slice_last(&self.clean, subject.min(self.subjects() - 1))
    }

    /// Fits a rank-`rank` model with the same penalty weight on both
    /// dimensions and on the coefficients; returns the residual ratio.
    pub fn fit(&mut self, rank: usize, lambda: f64) -> std::result::Result<f64, JsError> {
        self.run_fit(rank, lambda).map_err(js)
    }

    /// Fitted field of one subject.
    pub fn fitted(&self, subject: usize) -> std::result::Result<Vec<f64>, JsError> {
        let model = self.fitted_model().map_err(js)?;
        let fields = model.evaluate_subjects(&self.data.grid).map_err(js)?;
        Ok(slice_last(&fields, subject.min(self.subjects() - 1)))
    }

    /// Runs FPCA on the fitted model and returns the leading eigenvalues.
    pub fn fpca(&mut self, lambda: f64, count: usize) -> std::result::Result<Vec<f64>, JsError> {
        self.run_fpca(lambda, count).map_err(js)
    }

    /// True score variances of the simulated fields.
    pub fn true_eigenvalues(&self, count: usize) -> Vec<f64> {
        self.truth.variances.iter().take(count).copied().collect()
    }

    /// Estimated eigenfunction `j` from the last FPCA run.
    pub fn eigenfunction(&self, j: usize) -> std::result::Result<Vec<f64>, JsError> {
        let (_, fields) = self.eigen.as_ref().ok_or_else(|| JsError::new("call fpca first"))?;
        Ok(slice_last(fields, j.min(fields.last_dim() - 1)))
    }

    /// True eigenfunction `j`.
    pub fn true_eigenfunction(&self, j: usize) -> std::result::Result<Vec<f64>, JsError> {
        let fields = self.truth.eigenfunctions(&self.data.grid, j + 1).map_err(js)?;
        Ok(slice_last(&fields, j))
    }

    /// Share of each estimated eigenfunction's norm inside the span of the
    /// same number of true eigenfunctions.
    pub fn subspace_capture(&self) -> std::result::Result<Vec<f64>, JsError> {
        self.capture().map_err(js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_curves_are_function_major() {
        let v = basis_values("bspline", 5, 11).unwrap();
        assert_eq!(v.len(), 55);
        // each point is covered by B-splines summing to one
        for x in 0..11 {
            let s: f64 = (0..5).map(|f| v[f * 11 + x]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(basis_values("wavelet", 5, 11).is_err());
    }

    #[test]
    fn fit_and_fpca_recover_the_leading_components() {
        let mut demo = FieldDemo::create(3, 40, 30, 0.0).unwrap();
        assert!(demo.run_fpca(0.0, 3).is_err());
        let ratio = demo.run_fit(15, 1e-8).unwrap();
        assert!(ratio < 1e-2, "residual ratio {ratio}");
        let nu = demo.run_fpca(0.0, 3).unwrap();
        assert_eq!(nu.len(), 3);
        assert!(nu.windows(2).all(|w| w[0] >= w[1]));
        let capture = demo.capture().unwrap();
        assert!(capture.iter().all(|&c| c > 0.9), "{capture:?}");
        assert_eq!(slice_last(&demo.clean, 0).len(), 900);
    }
}
