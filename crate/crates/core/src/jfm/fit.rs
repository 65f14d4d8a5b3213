//! Maximum likelihood fitting, observed-information standard errors and
//! Wald tests.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use super::likelihood::{JfmModel, JfmParams, JfmSpec};
use super::optim::{maximize, BfgsOptions};
use super::JfmError;
use crate::data::Dataset;
use crate::dist::{chisq_sf, normal_quantile};
use crate::sim::TREATMENT;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Starting point on the optimizer scale; defaults to [`JfmModel::initial`].
    pub init: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 100, grad_tol: 1e-5, step_tol: 1e-8, init: None }
    }
}

/// A fitted joint frailty model. Estimates, standard errors and the
/// covariance are on the natural scale (θ and baseline parameters
/// positive); `opt_params` holds the optimizer-scale solution.
#[derive(Debug, Clone)]
pub struct JfmFit {
    pub spec: JfmSpec,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub ses: Option<Vec<f64>>,
    pub covariance: Option<DMatrix<f64>>,
    pub opt_params: Vec<f64>,
    pub opt_covariance: Option<DMatrix<f64>>,
    pub log_scaled: Vec<usize>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `None` when the α = 1 closed form was used.
    pub nodes_used: Option<usize>,
    pub grad_norm: f64,
    pub n_subjects: usize,
    /// Set when the observed information was not positive definite.
    pub hessian_error: Option<JfmError>,
}

impl JfmFit {
    pub fn index(&self, name: &str) -> Result<usize, JfmError> {
        self.names.iter().position(|n| n == name).ok_or_else(|| JfmError::UnknownParameter(name.into()))
    }

    pub fn estimate(&self, name: &str) -> Result<f64, JfmError> {
        Ok(self.estimates[self.index(name)?])
    }

    pub fn se(&self, name: &str) -> Result<f64, JfmError> {
        let i = self.index(name)?;
        self.ses.as_ref().map(|s| s[i]).ok_or_else(|| JfmError::MissingSE(name.into()))
    }

    /// 95% interval: Wald on the natural scale for regression coefficients
    /// and α, Wald on the log scale for θ and baseline parameters.
    pub fn ci95(&self, name: &str) -> Result<(f64, f64), JfmError> {
        let i = self.index(name)?;
        let cov = self.opt_covariance.as_ref().ok_or_else(|| JfmError::MissingSE(name.into()))?;
        let z = normal_quantile(0.975);
        let se = cov[(i, i)].sqrt();
        let p = self.opt_params[i];
        Ok(if self.log_scaled.contains(&i) {
            ((p - z * se).exp(), (p + z * se).exp())
        } else {
            (p - z * se, p + z * se)
        })
    }

    pub fn theta(&self) -> f64 {
        self.estimate("theta").expect("theta is always a parameter")
    }

    pub fn alpha(&self) -> f64 {
        self.estimate("alpha").unwrap_or(match self.spec.alpha {
            super::AlphaSpec::Fixed(a) => a,
            super::AlphaSpec::Estimated => f64::NAN,
        })
    }

    pub fn params(&self) -> JfmParams {
        let p_r = self.spec.recurrent_covariates.len();
        let p_d = self.spec.terminal_covariates.len();
        let rec = self.spec.recurrent_baseline.n_params();
        let start = self.names.len() - rec - self.spec.terminal_baseline.n_params();
        JfmParams {
            beta_r: self.estimates[..p_r].to_vec(),
            beta_d: self.estimates[p_r..p_r + p_d].to_vec(),
            theta: self.theta(),
            alpha: self.alpha(),
            recurrent: self.estimates[start..start + rec].to_vec(),
            terminal: self.estimates[start + rec..].to_vec(),
        }
    }

    /// Report with estimates, standard errors, hazard ratios and any tests.
    pub fn to_json(&self, tests: &[Value]) -> Value {
        let mut estimates = serde_json::Map::new();
        let mut ses = serde_json::Map::new();
        let mut hr = serde_json::Map::new();
        let mut hr_ci = serde_json::Map::new();
        for (i, n) in self.names.iter().enumerate() {
            estimates.insert(n.clone(), json!(self.estimates[i]));
            ses.insert(n.clone(), json!(self.ses.as_ref().map(|s| s[i])));
            if n.starts_with("beta_") {
                hr.insert(n.clone(), json!(self.estimates[i].exp()));
                hr_ci.insert(n.clone(), json!(self.ci95(n).ok().map(|(l, u)| [l.exp(), u.exp()])));
            }
        }
        json!({
            "estimates": estimates,
            "ses": ses,
            "hr": hr,
            "hr_ci95": hr_ci,
            "theta": self.theta(),
            "theta_ci95": self.ci95("theta").ok(),
            "alpha": self.alpha(),
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "nodes_used": self.nodes_used,
            "grad_norm": self.grad_norm,
            "n_subjects": self.n_subjects,
            "hessian_error": self.hessian_error.as_ref().map(|e| e.kind()),
            "tests": tests,
        })
    }
}

/// Fit by BFGS on the unconstrained scale. On failure at one quadrature
/// size the next rung of the node ladder is tried; the last error is
/// returned if every rung fails.
pub fn fit_jfm(ds: &Dataset, spec: &JfmSpec, opts: &FitOptions) -> Result<JfmFit, JfmError> {
    let model = JfmModel::new(ds, spec)?;
    let (rec, deaths) = model.event_totals();
    if rec == 0 {
        return Err(JfmError::NoEvents("recurrent"));
    }
    if deaths == 0 {
        return Err(JfmError::NoEvents("terminal"));
    }
    let init = match &opts.init {
        Some(p) if p.len() != model.n_params() => {
            return Err(JfmError::DimensionMismatch { got: p.len(), expected: model.n_params() })
        }
        Some(p) => p.clone(),
        None => model.initial(),
    };
    let closed = matches!(spec.alpha, super::AlphaSpec::Fixed(a) if a == 1.0);
    let ladder: Vec<Option<usize>> = if closed { vec![None] } else { spec.nodes.iter().map(|&n| Some(n)).collect() };
    let bfgs = BfgsOptions { max_iter: opts.max_iter, grad_tol: opts.grad_tol, step_tol: opts.step_tol, ..Default::default() };

    let mut last = JfmError::NonFiniteLikelihood;
    for nodes in ladder {
        let n = nodes.unwrap_or(0);
        let res = match maximize(|p| model.loglik_grad(p, n), &init, &bfgs) {
            Ok(r) => r,
            Err(e) => {
                last = e;
                continue;
            }
        };
        if !res.converged {
            last = JfmError::NotConverged { iterations: res.iterations, grad_norm: res.grad_norm() };
            continue;
        }
        let g = res.grad_norm();
        return Ok(finish(&model, res.x, res.value, res.iterations, nodes, g, ds.len()));
    }
    Err(last)
}

fn finish(
    model: &JfmModel,
    x: Vec<f64>,
    loglik: f64,
    iterations: usize,
    nodes: Option<usize>,
    grad_norm: f64,
    n_subjects: usize,
) -> JfmFit {
    let n = nodes.unwrap_or(0);
    let log_scaled = model.layout.log_scaled();
    let estimates: Vec<f64> =
        x.iter().enumerate().map(|(i, v)| if log_scaled.contains(&i) { v.exp() } else { *v }).collect();

    let (opt_cov, hessian_error) = match observed_information(model, &x, n).and_then(invert_pd) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e)),
    };
    let covariance = opt_cov.as_ref().map(|c| {
        let jac = DVector::from_iterator(
            x.len(),
            x.iter().enumerate().map(|(i, v)| if log_scaled.contains(&i) { v.exp() } else { 1.0 }),
        );
        DMatrix::from_fn(x.len(), x.len(), |i, j| jac[i] * c[(i, j)] * jac[j])
    });
    let ses = covariance.as_ref().map(|c| (0..x.len()).map(|i| c[(i, i)].sqrt()).collect());
    JfmFit {
        spec: model.spec.clone(),
        names: model.param_names(),
        estimates,
        ses,
        covariance,
        opt_params: x,
        opt_covariance: opt_cov,
        log_scaled,
        loglik,
        converged: true,
        iterations,
        nodes_used: nodes,
        grad_norm,
        n_subjects,
        hessian_error,
    }
}

/// Negative Hessian by central differences of the analytic gradient,
/// symmetrised.
fn observed_information(model: &JfmModel, x: &[f64], n_nodes: usize) -> Result<DMatrix<f64>, JfmError> {
    let k = x.len();
    let mut h = DMatrix::zeros(k, k);
    let mut p = x.to_vec();
    for j in 0..k {
        let step = 1e-5 * x[j].abs().max(1.0);
        p[j] = x[j] + step;
        let (_, gp) = model.loglik_grad(&p, n_nodes)?;
        p[j] = x[j] - step;
        let (_, gm) = model.loglik_grad(&p, n_nodes)?;
        p[j] = x[j];
        for i in 0..k {
            h[(i, j)] = -(gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

fn invert_pd(info: DMatrix<f64>) -> Result<DMatrix<f64>, JfmError> {
    let chol = info.cholesky().ok_or(JfmError::SingularHessian)?;
    let inv = chol.inverse();
    if inv.iter().all(|v| v.is_finite()) && (0..inv.nrows()).all(|i| inv[(i, i)] > 0.0) {
        Ok(inv)
    } else {
        Err(JfmError::SingularHessian)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnivariateWald {
    pub stat: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointWald {
    pub stat: f64,
    pub df: usize,
    pub p: f64,
}

/// `W = (ψ̂ − ψ₀)² / Var(ψ̂)` against χ²₁.
pub fn wald_univariate(fit: &JfmFit, name: &str, null: f64) -> Result<UnivariateWald, JfmError> {
    let est = fit.estimate(name)?;
    let se = fit.se(name)?;
    let stat = (est - null).powi(2) / (se * se);
    Ok(UnivariateWald { stat, p: chisq_sf(stat, 1.0) })
}

/// `W = (CΩ̂)ᵀ (C V̂ Cᵀ)⁻¹ (CΩ̂)` against χ² with rank(C) degrees of freedom.
pub fn wald_joint(fit: &JfmFit, c: &DMatrix<f64>) -> Result<JointWald, JfmError> {
    let k = fit.estimates.len();
    if c.ncols() != k {
        return Err(JfmError::DimensionMismatch { got: c.ncols(), expected: k });
    }
    let q = c.nrows();
    if q == 0 || c.clone().svd(false, false).rank(1e-10 * c.amax().max(1.0)) < q {
        return Err(JfmError::RankDeficientC);
    }
    let v = fit.covariance.as_ref().ok_or_else(|| JfmError::MissingSE("covariance".into()))?;
    let omega = DVector::from_column_slice(&fit.estimates);
    let co = c * omega;
    let block = c * v * c.transpose();
    let chol = block.cholesky().ok_or(JfmError::SingularBlock)?;
    let stat = co.dot(&chol.solve(&co));
    if !stat.is_finite() {
        return Err(JfmError::SingularBlock);
    }
    Ok(JointWald { stat, df: q, p: chisq_sf(stat, q as f64) })
}

/// Two-row contrast selecting the treatment effects on the recurrent and
/// terminal processes.
pub fn treatment_contrast(fit: &JfmFit) -> Result<DMatrix<f64>, JfmError> {
    let ir = fit.index(&format!("beta_r.{TREATMENT}"))?;
    let id = fit.index(&format!("beta_d.{TREATMENT}"))?;
    let mut c = DMatrix::zeros(2, fit.estimates.len());
    c[(0, ir)] = 1.0;
    c[(1, id)] = 1.0;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{benchmark_scenario, simulate_dataset};

    #[test]
    fn scenario_one_fit_is_sensible() {
        let sc = benchmark_scenario(1);
        let ds = simulate_dataset(&sc, 7);
        let spec = JfmSpec::default().with_covariates(&["trt", "z2"], &["trt"]);
        let fit = fit_jfm(&ds, &spec, &FitOptions::default()).unwrap();
        assert!(fit.converged && fit.ses.is_some());
        let b = fit.estimate("beta_r.trt").unwrap();
        assert!((b - 0.7f64.ln()).abs() < 0.5, "{b}");
        assert!(fit.theta() > 0.0);

        // single-coordinate contrast reduces to the univariate test
        let i = fit.index("beta_d.trt").unwrap();
        let mut c = DMatrix::zeros(1, fit.estimates.len());
        c[(0, i)] = 1.0;
        let j = wald_joint(&fit, &c).unwrap();
        let u = wald_univariate(&fit, "beta_d.trt", 0.0).unwrap();
        assert!((j.stat - u.stat).abs() < 1e-10 * u.stat.max(1.0));
        assert!((j.p - u.p).abs() < 1e-12);

        let rank_def = DMatrix::from_fn(2, fit.estimates.len(), |_, col| if col == i { 1.0 } else { 0.0 });
        assert_eq!(wald_joint(&fit, &rank_def).unwrap_err(), JfmError::RankDeficientC);
    }

    #[test]
    fn univariate_at_null_value() {
        let sc = benchmark_scenario(1).with_n(200);
        let ds = simulate_dataset(&sc, 3);
        let fit = fit_jfm(&ds, &JfmSpec::default(), &FitOptions::default()).unwrap();
        let b = fit.estimate("beta_r.trt").unwrap();
        let w = wald_univariate(&fit, "beta_r.trt", b).unwrap();
        assert_eq!(w.stat, 0.0);
        assert_eq!(w.p, 1.0);
    }
}
