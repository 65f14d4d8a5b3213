//! Marginal log-likelihood of the gamma-frailty joint model on the calendar
//! time scale, with its analytic gradient.
//!
//! Parameter vector (optimizer scale):
//! `[β_R…, β_D…, log θ, α (when estimated), recurrent baseline, terminal baseline]`
//! where an exponential baseline contributes `log rate` and a Weibull
//! baseline `log shape, log scale` with `R₀(t) = (t/scale)^shape`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::quadrature::{integral_quadrature, FrailtyIntegral, LaguerreRule};
use super::JfmError;
use crate::data::Dataset;
use crate::sim::{HazardSpec, ScenarioSpec, TREATMENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineFamily {
    Exponential,
    Weibull,
}

impl BaselineFamily {
    pub fn n_params(self) -> usize {
        match self {
            BaselineFamily::Exponential => 1,
            BaselineFamily::Weibull => 2,
        }
    }

    fn names(self) -> &'static [&'static str] {
        match self {
            BaselineFamily::Exponential => &["rate"],
            BaselineFamily::Weibull => &["shape", "scale"],
        }
    }

    /// log h₀(t) and its derivative in each baseline parameter.
    #[inline]
    fn log_hazard(self, p: &[f64], log_t: f64) -> (f64, [f64; 2]) {
        match self {
            BaselineFamily::Exponential => (p[0], [1.0, 0.0]),
            BaselineFamily::Weibull => {
                let k = p[0].exp();
                let u = log_t - p[1];
                (p[0] - p[1] + (k - 1.0) * u, [1.0 + k * u, -k])
            }
        }
    }

    /// H₀(t) and its derivative in each baseline parameter.
    #[inline]
    fn cumulative(self, p: &[f64], t: f64, log_t: f64) -> (f64, [f64; 2]) {
        match self {
            BaselineFamily::Exponential => {
                let h = p[0].exp() * t;
                (h, [h, 0.0])
            }
            BaselineFamily::Weibull => {
                let k = p[0].exp();
                let u = log_t - p[1];
                let h = (k * u).exp();
                (h, [h * k * u, -k * h])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum AlphaSpec {
    Fixed(f64),
    Estimated,
}

/// Model specification for a joint frailty fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JfmSpec {
    pub recurrent_baseline: BaselineFamily,
    pub terminal_baseline: BaselineFamily,
    pub recurrent_covariates: Vec<String>,
    pub terminal_covariates: Vec<String>,
    pub alpha: AlphaSpec,
    /// Quadrature node ladder tried in order.
    pub nodes: Vec<usize>,
}

impl Default for JfmSpec {
    fn default() -> Self {
        JfmSpec {
            recurrent_baseline: BaselineFamily::Weibull,
            terminal_baseline: BaselineFamily::Weibull,
            recurrent_covariates: vec![TREATMENT.into()],
            terminal_covariates: vec![TREATMENT.into()],
            alpha: AlphaSpec::Fixed(1.0),
            nodes: vec![50, 32, 20],
        }
    }
}

impl JfmSpec {
    pub fn with_covariates(mut self, recurrent: &[&str], terminal: &[&str]) -> Self {
        self.recurrent_covariates = recurrent.iter().map(|s| s.to_string()).collect();
        self.terminal_covariates = terminal.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn validate(&self) -> Result<(), JfmError> {
        if self.nodes.is_empty() || self.nodes.contains(&0) || self.nodes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(JfmError::InvalidSpec("node ladder must be positive and decreasing".into()));
        }
        if let AlphaSpec::Fixed(a) = self.alpha {
            if !a.is_finite() {
                return Err(JfmError::InvalidSpec("alpha must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Positions of each block in the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub p_r: usize,
    pub p_d: usize,
    pub alpha_estimated: bool,
    pub alpha_fixed: f64,
    pub rec: BaselineFamily,
    pub term: BaselineFamily,
}

impl Layout {
    pub fn theta(&self) -> usize {
        self.p_r + self.p_d
    }
    pub fn alpha(&self) -> Option<usize> {
        self.alpha_estimated.then_some(self.theta() + 1)
    }
    pub fn rec_start(&self) -> usize {
        self.theta() + 1 + usize::from(self.alpha_estimated)
    }
    pub fn term_start(&self) -> usize {
        self.rec_start() + self.rec.n_params()
    }
    pub fn len(&self) -> usize {
        self.term_start() + self.term.n_params()
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Indices whose optimizer value is the log of the natural parameter.
    pub fn log_scaled(&self) -> Vec<usize> {
        std::iter::once(self.theta()).chain(self.rec_start()..self.len()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Subject {
    xr: Vec<f64>,
    xd: Vec<f64>,
    log_times: Vec<f64>,
    follow_up: f64,
    log_follow_up: f64,
    died: bool,
}

/// Dataset prepared for likelihood evaluation under a given specification.
#[derive(Debug, Clone)]
pub struct JfmModel {
    pub spec: JfmSpec,
    pub layout: Layout,
    subjects: Vec<Subject>,
}

fn design_value(s: &crate::data::SubjectHistory, name: &str) -> Result<f64, JfmError> {
    if name == TREATMENT {
        return Ok(s.arm().indicator());
    }
    s.covariate(name).ok_or_else(|| JfmError::MissingCovariate { id: s.id().to_string(), name: name.to_string() })
}

impl JfmModel {
    pub fn new(ds: &Dataset, spec: &JfmSpec) -> Result<Self, JfmError> {
        spec.validate()?;
        let layout = Layout {
            p_r: spec.recurrent_covariates.len(),
            p_d: spec.terminal_covariates.len(),
            alpha_estimated: spec.alpha == AlphaSpec::Estimated,
            alpha_fixed: match spec.alpha {
                AlphaSpec::Fixed(a) => a,
                AlphaSpec::Estimated => 1.0,
            },
            rec: spec.recurrent_baseline,
            term: spec.terminal_baseline,
        };
        let subjects = ds
            .subjects()
            .iter()
            .map(|s| {
                Ok(Subject {
                    xr: spec.recurrent_covariates.iter().map(|c| design_value(s, c)).collect::<Result<_, _>>()?,
                    xd: spec.terminal_covariates.iter().map(|c| design_value(s, c)).collect::<Result<_, _>>()?,
                    log_times: s.recurrent_times().iter().map(|t| t.ln()).collect(),
                    follow_up: s.follow_up(),
                    log_follow_up: s.follow_up().ln(),
                    died: s.died(),
                })
            })
            .collect::<Result<Vec<_>, JfmError>>()?;
        Ok(JfmModel { spec: spec.clone(), layout, subjects })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    /// Total recurrences and deaths in the data.
    pub fn event_totals(&self) -> (usize, usize) {
        let rec = self.subjects.iter().map(|s| s.log_times.len()).sum();
        let deaths = self.subjects.iter().filter(|s| s.died).count();
        (rec, deaths)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::with_capacity(self.n_params());
        names.extend(self.spec.recurrent_covariates.iter().map(|c| format!("beta_r.{c}")));
        names.extend(self.spec.terminal_covariates.iter().map(|c| format!("beta_d.{c}")));
        names.push("theta".into());
        if self.layout.alpha_estimated {
            names.push("alpha".into());
        }
        names.extend(self.layout.rec.names().iter().map(|n| format!("rec.{n}")));
        names.extend(self.layout.term.names().iter().map(|n| format!("term.{n}")));
        names
    }

    /// β = 0, θ = 0.5, α = 1, Weibull shape 1 with the scale of the
    /// exponential maximum likelihood fit.
    pub fn initial(&self) -> Vec<f64> {
        let l = &self.layout;
        let mut p = vec![0.0; l.len()];
        p[l.theta()] = 0.5f64.ln();
        if let Some(i) = l.alpha() {
            p[i] = 1.0;
        }
        let exposure: f64 = self.subjects.iter().map(|s| s.follow_up).sum();
        let (rec, deaths) = self.event_totals();
        let rate = |events: usize| (events.max(1) as f64 / exposure).ln();
        let mut fill = |start: usize, fam: BaselineFamily, log_rate: f64| match fam {
            BaselineFamily::Exponential => p[start] = log_rate,
            BaselineFamily::Weibull => {
                p[start] = 0.0;
                p[start + 1] = -log_rate;
            }
        };
        fill(l.rec_start(), l.rec, rate(rec));
        fill(l.term_start(), l.term, rate(deaths));
        p
    }

    fn alpha_value(&self, p: &[f64]) -> f64 {
        match self.layout.alpha() {
            Some(i) => p[i],
            None => self.layout.alpha_fixed,
        }
    }

    fn closed_form(&self) -> bool {
        !self.layout.alpha_estimated && self.layout.alpha_fixed == 1.0
    }

    /// Quadrature rules for every distinct `a` that occurs at `p`, plus the
    /// rules at `a ± h` used to differentiate the quadrature in `a` when a
    /// gradient is requested.
    fn rules(&self, p: &[f64], n_nodes: usize, with_shifts: bool) -> BTreeMap<u64, LaguerreRule> {
        let mut out = BTreeMap::new();
        if self.closed_form() {
            return out;
        }
        let kappa = (-p[self.layout.theta()]).exp();
        let alpha = self.alpha_value(p);
        for s in &self.subjects {
            let a = shape_a(s, kappa, alpha);
            let shifts: &[f64] = if with_shifts { &[0.0, -1.0, 1.0] } else { &[0.0] };
            for &sgn in shifts {
                let x = a + sgn * a_step(a);
                out.entry(x.to_bits()).or_insert_with(|| LaguerreRule::new(n_nodes, x - 1.0));
            }
        }
        out
    }

    fn check(&self, p: &[f64]) -> Result<(), JfmError> {
        if p.len() != self.n_params() || p.iter().any(|v| !v.is_finite()) {
            return Err(JfmError::InvalidParams);
        }
        let kappa = (-p[self.layout.theta()]).exp();
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(JfmError::InvalidParams);
        }
        Ok(())
    }

    /// Per-subject log-likelihood contributions in subject order.
    pub fn subject_logliks(&self, p: &[f64], n_nodes: usize) -> Result<Vec<f64>, JfmError> {
        self.check(p)?;
        let rules = self.rules(p, n_nodes, false);
        let out: Vec<f64> = self
            .subjects
            .par_iter()
            .map(|s| self.subject_term(p, s, &rules, None))
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(JfmError::NonFiniteLikelihood);
        }
        Ok(out)
    }

    pub fn loglik(&self, p: &[f64], n_nodes: usize) -> Result<f64, JfmError> {
        Ok(ordered_sum(self.subject_logliks(p, n_nodes)?))
    }

    /// Log-likelihood and analytic gradient. Every total is accumulated in
    /// sorted order of its terms, so the result depends neither on the
    /// thread count nor on the order of subjects in the data.
    pub fn loglik_grad(&self, p: &[f64], n_nodes: usize) -> Result<(f64, Vec<f64>), JfmError> {
        self.check(p)?;
        let rules = self.rules(p, n_nodes, true);
        let np = self.n_params();
        let parts: Vec<(f64, Vec<f64>)> = self
            .subjects
            .par_iter()
            .map(|s| {
                let mut g = vec![0.0; np];
                let v = self.subject_term(p, s, &rules, Some(&mut g));
                (v, g)
            })
            .collect();
        let total = ordered_sum(parts.iter().map(|(v, _)| *v).collect());
        let grad: Vec<f64> = (0..np).map(|k| ordered_sum(parts.iter().map(|(_, g)| g[k]).collect())).collect();
        if !total.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(JfmError::NonFiniteLikelihood);
        }
        Ok((total, grad))
    }

    fn subject_term(
        &self,
        p: &[f64],
        s: &Subject,
        rules: &BTreeMap<u64, LaguerreRule>,
        grad: Option<&mut Vec<f64>>,
    ) -> f64 {
        let l = &self.layout;
        let beta_r = &p[..l.p_r];
        let beta_d = &p[l.p_r..l.theta()];
        let kappa = (-p[l.theta()]).exp();
        let alpha = self.alpha_value(p);
        let rec_p = &p[l.rec_start()..l.term_start()];
        let term_p = &p[l.term_start()..l.len()];

        let eta_r: f64 = s.xr.iter().zip(beta_r).map(|(x, b)| x * b).sum();
        let eta_d: f64 = s.xd.iter().zip(beta_d).map(|(x, b)| x * b).sum();
        let n = s.log_times.len() as f64;
        let delta = if s.died { 1.0 } else { 0.0 };

        let mut value = n * eta_r + delta * eta_d;
        let mut d_rec_log = [0.0; 2];
        for &lt in &s.log_times {
            let (lh, d) = l.rec.log_hazard(rec_p, lt);
            value += lh;
            d_rec_log[0] += d[0];
            d_rec_log[1] += d[1];
        }
        let mut d_term_log = [0.0; 2];
        if s.died {
            let (lh, d) = l.term.log_hazard(term_p, s.log_follow_up);
            value += lh;
            d_term_log = d;
        }
        let (r0, d_r0) = l.rec.cumulative(rec_p, s.follow_up, s.log_follow_up);
        let (l0, d_l0) = l.term.cumulative(term_p, s.follow_up, s.log_follow_up);
        let er = eta_r.exp();
        let ed = eta_d.exp();
        let xr = er * r0;
        let c = ed * l0;

        let ft = if self.closed_form() {
            frailty_closed_form(kappa, n + delta, xr + c)
        } else {
            let a = shape_a(s, kappa, alpha);
            let rule = &rules[&a.to_bits()];
            let b = kappa + xr;
            let mut fi = integral_quadrature(rule, a, b, c, alpha);
            if grad.is_some() {
                // Partials of the quadrature approximation itself, so the
                // gradient is that of the objective actually maximised. The
                // rule depends on `a` and the scale on every argument.
                let q = |a: f64, b: f64, c: f64, al: f64| integral_quadrature(&rules[&a.to_bits()], a, b, c, al).log_value;
                let ha = a_step(a);
                fi.d_a = (q(a + ha, b, c, alpha) - q(a - ha, b, c, alpha)) / (2.0 * ha);
                let h = 1e-5_f64;
                let (up, dn) = (h.exp(), (-h).exp());
                fi.d_b = (q(a, b * up, c, alpha) - q(a, b * dn, c, alpha)) / (2.0 * h * b);
                fi.d_c = (q(a, b, c * up, alpha) - q(a, b, c * dn, alpha)) / (2.0 * h * c);
                let hal = 1e-5 * alpha.abs().max(1.0);
                fi.d_alpha = (q(a, b, c, alpha + hal) - q(a, b, c, alpha - hal)) / (2.0 * hal);
            }
            frailty_general(kappa, delta, fi)
        };
        value += ft.value;

        if let Some(g) = grad {
            for (j, x) in s.xr.iter().enumerate() {
                g[j] += x * (n + ft.d_xr * xr);
            }
            for (j, x) in s.xd.iter().enumerate() {
                g[l.p_r + j] += x * (delta + ft.d_c * c);
            }
            g[l.theta()] += -kappa * ft.d_kappa;
            if let Some(i) = l.alpha() {
                g[i] += ft.d_alpha;
            }
            for k in 0..l.rec.n_params() {
                g[l.rec_start() + k] += d_rec_log[k] + ft.d_xr * er * d_r0[k];
            }
            for k in 0..l.term.n_params() {
                g[l.term_start() + k] += delta * d_term_log[k] + ft.d_c * ed * d_l0[k];
            }
        }
        value
    }
}

fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    v.iter().sum()
}

#[inline]
fn a_step(a: f64) -> f64 {
    1e-5 * a.max(1.0)
}

#[inline]
fn shape_a(s: &Subject, kappa: f64, alpha: f64) -> f64 {
    s.log_times.len() as f64 + if s.died { alpha } else { 0.0 } + kappa
}

/// Frailty part of a subject's contribution and its partial derivatives.
struct FrailtyTerm {
    value: f64,
    d_kappa: f64,
    /// derivative in e^{η_R}R₀(T*)
    d_xr: f64,
    /// derivative in e^{η_D}Λ₀(T*)
    d_c: f64,
    d_alpha: f64,
}

/// α = 1 with integer `m = n + δ`, written to avoid cancellation between
/// lnΓ(κ) and κ log κ when κ is large:
/// `Σ_{j<m} log(κ+j) − m log(κ+x) − κ log(1 + x/κ)`.
fn frailty_closed_form(kappa: f64, m: f64, x: f64) -> FrailtyTerm {
    let mi = m as usize;
    let mut value = 0.0;
    let mut d_kappa = 0.0;
    for j in 0..mi {
        value += (kappa + j as f64).ln();
        d_kappa += 1.0 / (kappa + j as f64);
    }
    let kx = kappa + x;
    value -= m * kx.ln() + kappa * (x / kappa).ln_1p();
    d_kappa += (x - m) / kx - (x / kappa).ln_1p();
    let d_x = -(m + kappa) / kx;
    FrailtyTerm { value, d_kappa, d_xr: d_x, d_c: d_x, d_alpha: 0.0 }
}

fn frailty_general(kappa: f64, delta: f64, fi: FrailtyIntegral) -> FrailtyTerm {
    FrailtyTerm {
        value: -ln_gamma(kappa) + kappa * kappa.ln() + fi.log_value,
        d_kappa: -digamma(kappa) + kappa.ln() + 1.0 + fi.d_a + fi.d_b,
        d_xr: fi.d_b,
        d_c: fi.d_c,
        d_alpha: delta * fi.d_a + fi.d_alpha,
    }
}

/// Natural-scale parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JfmParams {
    pub beta_r: Vec<f64>,
    pub beta_d: Vec<f64>,
    pub theta: f64,
    pub alpha: f64,
    /// rate, or (shape, scale)
    pub recurrent: Vec<f64>,
    pub terminal: Vec<f64>,
}

impl JfmParams {
    pub fn to_vector(&self, layout: &Layout) -> Vec<f64> {
        let mut p = Vec::with_capacity(layout.len());
        p.extend(&self.beta_r);
        p.extend(&self.beta_d);
        p.push(self.theta.ln());
        if layout.alpha_estimated {
            p.push(self.alpha);
        }
        p.extend(self.recurrent.iter().map(|v| v.ln()));
        p.extend(self.terminal.iter().map(|v| v.ln()));
        p
    }

    /// Planning values implied by a scenario for the given model.
    pub fn from_scenario(sc: &ScenarioSpec, spec: &JfmSpec) -> Result<Self, JfmError> {
        let baseline = |h: &HazardSpec, fam: BaselineFamily| -> Result<Vec<f64>, JfmError> {
            match (*h, fam) {
                (HazardSpec::Exponential { rate }, BaselineFamily::Exponential) => Ok(vec![rate]),
                (HazardSpec::Exponential { rate }, BaselineFamily::Weibull) => Ok(vec![1.0, 1.0 / rate]),
                (HazardSpec::Weibull { shape, scale }, BaselineFamily::Weibull) => Ok(vec![shape, scale]),
                (HazardSpec::Weibull { shape, scale }, BaselineFamily::Exponential) if shape == 1.0 => {
                    Ok(vec![1.0 / scale])
                }
                _ => Err(JfmError::InvalidSpec("scenario baseline is not representable by the model".into())),
            }
        };
        let coef = |m: &BTreeMap<String, f64>, names: &[String]| -> Vec<f64> {
            names.iter().map(|n| m.get(n).copied().unwrap_or(0.0)).collect()
        };
        Ok(JfmParams {
            beta_r: coef(&sc.beta_r, &spec.recurrent_covariates),
            beta_d: coef(&sc.beta_d, &spec.terminal_covariates),
            theta: sc.theta,
            alpha: sc.alpha,
            recurrent: baseline(&sc.recurrent, spec.recurrent_baseline)?,
            terminal: baseline(&sc.terminal, spec.terminal_baseline)?,
        })
    }
}

/// Marginal log-likelihood of `ds` at optimizer-scale parameters `p`.
pub fn marginal_loglik(p: &[f64], ds: &Dataset, spec: &JfmSpec, n_nodes: usize) -> Result<f64, JfmError> {
    JfmModel::new(ds, spec)?.loglik(p, n_nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawSubject;

    fn one(times: &[f64], death: Option<f64>, censor: f64) -> Dataset {
        Dataset::from_raw([RawSubject {
            id: "1".into(),
            recurrent_times: times.to_vec(),
            death_time: death,
            censor_time: censor,
            ..Default::default()
        }])
        .unwrap()
    }

    #[test]
    fn vanishing_frailty_limit() {
        // no events, z = 0: contribution → −R₀(T*) − Λ₀(T*)
        let ds = one(&[], None, 2.0);
        let spec = JfmSpec::default().with_covariates(&[], &[]);
        let m = JfmModel::new(&ds, &spec).unwrap();
        let p = vec![(1e-6f64).ln(), 1.3f64.ln(), 1.5f64.ln(), 1.2f64.ln(), 4.0f64.ln()];
        let r0 = (2.0f64 / 1.5).powf(1.3);
        let l0 = (2.0f64 / 4.0).powf(1.2);
        let v = m.loglik(&p, 50).unwrap();
        assert!((v + r0 + l0).abs() < 1e-4, "{v} vs {}", -r0 - l0);
    }

    #[test]
    fn closed_form_path_matches_general_formula() {
        let ds = one(&[0.4, 1.1], Some(1.7), 3.0);
        let spec = JfmSpec::default().with_covariates(&[], &[]);
        let m = JfmModel::new(&ds, &spec).unwrap();
        let p = vec![0.7f64.ln(), 0.1, 0.5, -0.2, 0.9];
        let fast = m.loglik(&p, 50).unwrap();
        let mut est = spec.clone();
        est.alpha = AlphaSpec::Estimated;
        let m2 = JfmModel::new(&ds, &est).unwrap();
        let mut p2 = p.clone();
        p2.insert(1, 1.0);
        let slow = m2.loglik(&p2, 50).unwrap();
        assert!((fast - slow).abs() < 1e-10 * fast.abs().max(1.0), "{fast} vs {slow}");
    }
}
