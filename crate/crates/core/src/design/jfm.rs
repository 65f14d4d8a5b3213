//! Joint frailty model power via a Monte Carlo estimate of the per-subject
//! Fisher information at the planning values.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{finalize_n, ncp_for_power, power_from_ncp, DesignError, DesignInputs};
use crate::jfm::{JfmModel, JfmParams, JfmSpec};
use crate::sim::{replicate_seed, simulate_dataset, ScenarioSpec, TREATMENT};

/// Per-subject information at the planning values together with the
/// parameter vector it was evaluated at (optimizer scale).
#[derive(Debug, Clone)]
pub struct JfmDesign {
    pub names: Vec<String>,
    pub omega: Vec<f64>,
    pub info: DMatrix<f64>,
    pub n_subjects_total: usize,
}

impl JfmDesign {
    /// Contrast selecting the named parameters, one row each.
    pub fn contrast(&self, names: &[&str]) -> Result<DMatrix<f64>, DesignError> {
        let mut c = DMatrix::zeros(names.len(), self.omega.len());
        for (r, n) in names.iter().enumerate() {
            let j = self
                .names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| DesignError::InvalidInput(format!("unknown parameter {n}")))?;
            c[(r, j)] = 1.0;
        }
        Ok(c)
    }

    /// Joint contrast of the two treatment effects.
    pub fn treatment_contrast(&self) -> Result<DMatrix<f64>, DesignError> {
        self.contrast(&[&format!("beta_r.{TREATMENT}"), &format!("beta_d.{TREATMENT}")])
    }

    /// Noncentrality per subject: `(CΩ)ᵀ(C I⁻¹ Cᵀ)⁻¹(CΩ)`.
    pub fn ncp_per_subject(&self, c: &DMatrix<f64>) -> Result<f64, DesignError> {
        if c.ncols() != self.omega.len() {
            return Err(DesignError::InvalidInput("contrast width does not match the parameter vector".into()));
        }
        let inv = self
            .info
            .clone()
            .cholesky()
            .ok_or_else(|| DesignError::InvalidInput("Monte Carlo information is singular".into()))?
            .inverse();
        let co = c * DVector::from_column_slice(&self.omega);
        if co.iter().all(|v| *v == 0.0) {
            return Err(DesignError::NullEffect);
        }
        let block = c * inv * c.transpose();
        let chol = block
            .cholesky()
            .ok_or_else(|| DesignError::InvalidInput("contrast block of the inverse information is singular".into()))?;
        Ok(co.dot(&chol.solve(&co)))
    }
}

/// Monte Carlo Fisher information: the average outer product of per-subject
/// scores at the planning values, with scores by central differences
/// (step `1e-5·max(1, |p|)`). Datasets use seeds derived from `seed` and
/// are reduced in dataset order; subject terms are summed in sorted order.
pub fn fisher_info_mc(
    scenario: &ScenarioSpec,
    spec: &JfmSpec,
    n_datasets: usize,
    seed: u64,
) -> Result<JfmDesign, DesignError> {
    if n_datasets == 0 {
        return Err(DesignError::InvalidInput("need at least one dataset".into()));
    }
    let params = JfmParams::from_scenario(scenario, spec)?;
    let parts: Vec<Result<(DMatrix<f64>, usize, Vec<String>, Vec<f64>), DesignError>> = (0..n_datasets)
        .into_par_iter()
        .map(|m| {
            let ds = simulate_dataset(scenario, replicate_seed(seed, m as u64));
            let model = JfmModel::new(&ds, spec)?;
            let omega = params.to_vector(&model.layout);
            let k = omega.len();
            let n = model.n_subjects();
            let mut scores = vec![vec![0.0; k]; n];
            let mut p = omega.clone();
            for j in 0..k {
                let h = 1e-5 * omega[j].abs().max(1.0);
                p[j] = omega[j] + h;
                let up = model.subject_logliks(&p, spec.nodes[0])?;
                p[j] = omega[j] - h;
                let dn = model.subject_logliks(&p, spec.nodes[0])?;
                p[j] = omega[j];
                for i in 0..n {
                    scores[i][j] = (up[i] - dn[i]) / (2.0 * h);
                }
            }
            if scores.iter().flatten().any(|v| !v.is_finite()) {
                return Err(DesignError::NonFiniteScore { dataset: m });
            }
            let mut sum = DMatrix::zeros(k, k);
            let mut terms = vec![0.0; n];
            for a in 0..k {
                for b in a..k {
                    for (i, t) in terms.iter_mut().enumerate() {
                        *t = scores[i][a] * scores[i][b];
                    }
                    terms.sort_unstable_by(f64::total_cmp);
                    let s: f64 = terms.iter().sum();
                    sum[(a, b)] = s;
                    sum[(b, a)] = s;
                }
            }
            Ok((sum, n, model.param_names(), omega))
        })
        .collect();

    let mut total: Option<DMatrix<f64>> = None;
    let mut count = 0;
    let mut meta = None;
    for part in parts {
        let (sum, n, names, omega) = part?;
        total = Some(match total {
            Some(t) => t + sum,
            None => sum,
        });
        count += n;
        meta.get_or_insert((names, omega));
    }
    let (names, omega) = meta.expect("at least one dataset");
    let info = total.expect("at least one dataset") / count as f64;
    Ok(JfmDesign { names, omega, info, n_subjects_total: count })
}

/// Total sample size for the Wald test of `CΩ = 0`, inflated and rounded up
/// to even per `inputs`.
pub fn jfm_sample_size(design: &JfmDesign, c: &DMatrix<f64>, inputs: &DesignInputs) -> Result<u64, DesignError> {
    inputs.validate()?;
    let mu = ncp_for_power(c.nrows(), inputs.alpha, inputs.power)?;
    let per = design.ncp_per_subject(c)?;
    Ok(finalize_n(mu / per, inputs.inflation))
}

/// Power of the Wald test of `CΩ = 0` with `n` subjects in total.
pub fn jfm_power(design: &JfmDesign, c: &DMatrix<f64>, n: f64, alpha: f64) -> Result<f64, DesignError> {
    let per = design.ncp_per_subject(c)?;
    Ok(power_from_ncp(c.nrows(), alpha, n * per))
}

/// Fisher information for a planning scenario under the model implied by
/// the scenario's baselines, with treatment as the only covariate.
pub fn jfm_design(scenario: &ScenarioSpec, n_datasets: usize, seed: u64) -> Result<JfmDesign, DesignError> {
    let spec = JfmSpec::default().with_covariates(&[TREATMENT], &[TREATMENT]);
    fisher_info_mc(scenario, &spec, n_datasets, seed)
}
