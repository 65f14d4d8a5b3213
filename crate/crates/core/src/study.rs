//! Monte Carlo replicate studies: simulate a scenario repeatedly, analyse
//! each dataset with a list of methods and summarise bias, coverage and
//! power per method.
//!
//! Replicate `r` (0-based) uses dataset seed `seed + r`, so a study with
//! seed 1 and 200 replicates analyses datasets 1 to 200. Replicates run in
//! parallel; results are collected in replicate order, so every output is
//! independent of the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::Dataset;
use crate::inference::{wr_stratified, wr_unstratified};
use crate::jfm::{fit_jfm, wald_joint, FitOptions, JfmFit, JfmSpec};
use crate::metrics::{binomial_summary, replicate_summary, EmpiricalPower, PerformanceRow, ReplicateEstimate};
use crate::rules::WinRule;
use crate::sim::{simulate_dataset, ScenarioSpec, SCHEMA_VERSION, TREATMENT};

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_alpha() -> f64 {
    0.05
}

/// Versioned study document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub scenario: ScenarioSpec,
    pub methods: Vec<MethodSpec>,
    pub reps: usize,
    pub seed: u64,
    /// Two-sided level of every test.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    /// Win ratio under a rule, optionally stratified on a covariate.
    Wr {
        rule: WinRule,
        #[serde(default)]
        stratify: Option<String>,
        /// Reference value for bias and coverage.
        #[serde(default)]
        true_wr: Option<f64>,
    },
    /// Joint frailty model. Without a spec, recurrences use every covariate
    /// with a recurrent coefficient and death every covariate with a
    /// terminal coefficient, treatment always included.
    Jfm {
        #[serde(default)]
        spec: Option<JfmSpec>,
        /// Parameters tested jointly against zero; defaults to the two
        /// treatment effects.
        #[serde(default)]
        test: Option<Vec<String>>,
    },
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Wr { rule, stratify: None, .. } => format!("wr-{rule}"),
            MethodSpec::Wr { rule, stratify: Some(c), .. } => format!("wr-{rule}-strat-{c}"),
            MethodSpec::Jfm { .. } => "jfm".into(),
        }
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let c: StudyConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", self.schema_version));
        }
        self.scenario.validate().map_err(|e| e.to_string())?;
        if self.reps == 0 || self.methods.is_empty() {
            return Err("a study needs at least one replicate and one method".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err("alpha must lie in (0, 1)".into());
        }
        let mut labels: Vec<String> = self.methods.iter().map(MethodSpec::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.methods.len() {
            return Err("methods must be distinct".into());
        }
        Ok(())
    }

    /// The JFM specification used for a method on this scenario.
    pub fn jfm_spec(&self, spec: &Option<JfmSpec>) -> JfmSpec {
        spec.clone().unwrap_or_else(|| {
            let pick = |b: &BTreeMap<String, f64>| {
                let mut v = vec![TREATMENT.to_string()];
                v.extend(b.keys().filter(|k| *k != TREATMENT).cloned());
                v
            };
            JfmSpec {
                recurrent_covariates: pick(&self.scenario.beta_r),
                terminal_covariates: pick(&self.scenario.beta_d),
                ..JfmSpec::default()
            }
        })
    }

    /// Generating value of a JFM parameter, when the scenario defines one.
    fn jfm_truth(&self, name: &str) -> Option<f64> {
        if let Some(c) = name.strip_prefix("beta_r.") {
            return Some(self.scenario.beta_r.get(c).copied().unwrap_or(0.0));
        }
        if let Some(c) = name.strip_prefix("beta_d.") {
            return Some(self.scenario.beta_d.get(c).copied().unwrap_or(0.0));
        }
        match name {
            "theta" => Some(self.scenario.theta),
            "alpha" => Some(self.scenario.alpha),
            _ => None,
        }
    }
}

/// One parameter's result in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamEstimate {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

/// Outcome of one method on one replicate. `status` is "ok" or the error
/// kind of a failed analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub seed: u64,
    pub method: String,
    pub status: String,
    pub p: Option<f64>,
    pub params: Vec<ParamEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub models_fitted: String,
    pub n_ok: usize,
    pub n_reps: usize,
    pub failures: BTreeMap<String, usize>,
    /// Rejection rate over replicates with a p-value.
    pub power: Option<EmpiricalPower>,
    pub rows: Vec<PerformanceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub methods: Vec<MethodSummary>,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

fn wr_record(ds: &Dataset, rule: WinRule, stratify: &Option<String>) -> Result<(f64, ParamEstimate), String> {
    let res = match stratify {
        None => wr_unstratified(ds, rule),
        Some(c) => {
            let s = ds.stratified_by_covariate(c).map_err(|e| kind_of(&format!("{e:?}")))?;
            wr_stratified(&s, rule)
        }
    }
    .map_err(|e| kind_of(&format!("{e:?}")))?;
    Ok((res.p_two_sided, ParamEstimate { name: "wr".into(), estimate: res.wr, se: Some(res.se_wr), ci: Some(res.ci95) }))
}

/// Variant name of a derived `Debug` rendering.
fn kind_of(debug: &str) -> String {
    debug.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

fn jfm_record(fit: &JfmFit, test: &[String]) -> (Option<f64>, Vec<ParamEstimate>) {
    let params = fit
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| ParamEstimate {
            name: name.clone(),
            estimate: fit.estimates[i],
            se: fit.ses.as_ref().map(|s| s[i]),
            ci: fit.ci95(name).ok(),
        })
        .collect();
    let idx: Option<Vec<usize>> = test.iter().map(|t| fit.index(t).ok()).collect();
    let p = idx.and_then(|idx| {
        let mut c = nalgebra::DMatrix::zeros(idx.len(), fit.names.len());
        for (r, j) in idx.into_iter().enumerate() {
            c[(r, j)] = 1.0;
        }
        wald_joint(fit, &c).ok().map(|w| w.p)
    });
    (p, params)
}

/// Run every method on `reps` simulated datasets.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport, String> {
    config.validate()?;
    let jfm_specs: Vec<Option<(JfmSpec, Vec<String>)>> = config
        .methods
        .iter()
        .map(|m| match m {
            MethodSpec::Jfm { spec, test } => {
                let s = config.jfm_spec(spec);
                let t = test.clone().unwrap_or_else(|| {
                    let mut t = Vec::new();
                    if s.recurrent_covariates.iter().any(|c| c == TREATMENT) {
                        t.push(format!("beta_r.{TREATMENT}"));
                    }
                    if s.terminal_covariates.iter().any(|c| c == TREATMENT) {
                        t.push(format!("beta_d.{TREATMENT}"));
                    }
                    t
                });
                Some((s, t))
            }
            _ => None,
        })
        .collect();

    let per_rep: Vec<Vec<ReplicateRecord>> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let seed = config.seed.wrapping_add(r as u64);
            let ds = simulate_dataset(&config.scenario, seed);
            config
                .methods
                .iter()
                .zip(&jfm_specs)
                .map(|(m, js)| {
                    let mut rec =
                        ReplicateRecord { rep: r, seed, method: m.label(), status: "ok".into(), p: None, params: Vec::new() };
                    match m {
                        MethodSpec::Wr { rule, stratify, .. } => match wr_record(&ds, *rule, stratify) {
                            Ok((p, est)) => {
                                rec.p = Some(p);
                                rec.params.push(est);
                            }
                            Err(kind) => rec.status = kind,
                        },
                        MethodSpec::Jfm { .. } => {
                            let (spec, test) = js.as_ref().expect("jfm method has a resolved spec");
                            match fit_jfm(&ds, spec, &FitOptions::default()) {
                                Ok(fit) => {
                                    let (p, params) = jfm_record(&fit, test);
                                    rec.p = p;
                                    rec.params = params;
                                }
                                Err(e) => rec.status = e.kind().to_string(),
                            }
                        }
                    }
                    rec
                })
                .collect()
        })
        .collect();
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();

    let mut methods = Vec::new();
    for m in &config.methods {
        let label = m.label();
        let mine: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == label).collect();
        let ok: Vec<&&ReplicateRecord> = mine.iter().filter(|r| r.status == "ok").collect();
        let mut failures = BTreeMap::new();
        for r in mine.iter().filter(|r| r.status != "ok") {
            *failures.entry(r.status.clone()).or_insert(0) += 1;
        }
        let ps: Vec<f64> = ok.iter().filter_map(|r| r.p).collect();
        let power = (!ps.is_empty())
            .then(|| binomial_summary(ps.iter().filter(|p| **p < config.alpha).count(), ps.len()));
        let names: Vec<String> = ok.first().map(|r| r.params.iter().map(|p| p.name.clone()).collect()).unwrap_or_default();
        let mut rows = Vec::new();
        for name in names {
            let truth = match m {
                MethodSpec::Wr { true_wr, .. } => *true_wr,
                MethodSpec::Jfm { .. } => config.jfm_truth(&name),
            };
            let Some(truth) = truth else { continue };
            let reps: Vec<ReplicateEstimate> = ok
                .iter()
                .filter_map(|r| r.params.iter().find(|p| p.name == name))
                .map(|p| ReplicateEstimate { estimate: p.estimate, se: p.se, ci: p.ci })
                .collect();
            if let Ok(row) = replicate_summary(&name, &reps, truth) {
                rows.push(row);
            }
        }
        methods.push(MethodSummary {
            method: label,
            models_fitted: format!("{}/{}", ok.len(), mine.len()),
            n_ok: ok.len(),
            n_reps: mine.len(),
            failures,
            power,
            rows,
        });
    }
    Ok(StudyReport { config: config.clone(), methods, records })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StudyReport {
    /// Summary document with the resolved configuration and seed.
    pub fn to_json(&self) -> Value {
        json!({
            "seed": self.config.seed,
            "config": self.config,
            "methods": self.methods,
        })
    }

    /// Per-replicate dump, one row per parameter (one row per failed
    /// analysis, with an empty parameter).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rep", "seed", "method", "status", "p", "parameter", "estimate", "se", "ci_lo", "ci_hi"])?;
        for r in &self.records {
            let head = [r.rep.to_string(), r.seed.to_string(), r.method.clone(), r.status.clone(), opt(r.p)];
            if r.params.is_empty() {
                w.write_record(head.iter().cloned().chain(std::iter::repeat_n(String::new(), 5)))?;
            }
            for p in &r.params {
                let tail = [
                    p.name.clone(),
                    p.estimate.to_string(),
                    opt(p.se),
                    opt(p.ci.map(|c| c.0)),
                    opt(p.ci.map(|c| c.1)),
                ];
                w.write_record(head.iter().cloned().chain(tail))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Tables in the layout of a simulation performance table.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let sc = &self.config.scenario;
        let _ = writeln!(s, "# Replicate study: {}\n", if sc.name.is_empty() { "unnamed scenario" } else { &sc.name });
        let _ = writeln!(s, "Seed {}, {} replicates of n = {}, α = {}.\n", self.config.seed, self.config.reps, sc.n_subjects, self.config.alpha);
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "–".into());
        for m in &self.methods {
            let _ = write!(s, "## {}\n\nModels fitted = {}", m.method, m.models_fitted);
            if let Some(p) = &m.power {
                let _ = write!(s, "; Power = {:.3}; MCSE = {:.3}", p.power, p.mcse);
            }
            let _ = writeln!(s, "\n");
            if !m.failures.is_empty() {
                let list: Vec<String> = m.failures.iter().map(|(k, v)| format!("{k} {v}")).collect();
                let _ = writeln!(s, "Failures: {}\n", list.join(", "));
            }
            if m.rows.is_empty() {
                continue;
            }
            let _ = writeln!(s, "| Parameter | True | Mean | Abs. bias | Rel. bias (%) | Empirical SE | Asymptotic SE | Coverage (%) |");
            let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
            for r in &m.rows {
                let _ = writeln!(
                    s,
                    "| {} | {:.4} | {:.4} | {:.4} | {} | {:.4} | {} | {} |",
                    r.parameter,
                    r.truth,
                    r.mean_estimate,
                    r.abs_bias,
                    f(r.rel_bias_pct),
                    r.empirical_se,
                    f(r.mean_asymptotic_se),
                    r.coverage_pct.map(|c| format!("{c:.2}")).unwrap_or_else(|| "–".into())
                );
            }
            let _ = writeln!(s);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::benchmark_scenario;

    fn config(reps: usize) -> StudyConfig {
        StudyConfig {
            schema_version: SCHEMA_VERSION,
            scenario: benchmark_scenario(1).with_n(120),
            methods: vec![
                MethodSpec::Wr { rule: WinRule::Lwr, stratify: None, true_wr: Some(1.2253) },
                MethodSpec::Wr { rule: WinRule::Lwr, stratify: Some("z2".into()), true_wr: None },
                MethodSpec::Jfm { spec: None, test: None },
            ],
            reps,
            seed: 7,
            alpha: 0.05,
        }
    }

    #[test]
    fn study_summaries_and_outputs() {
        let rep = run_study(&config(6)).unwrap();
        assert_eq!(rep.methods.len(), 3);
        assert_eq!(rep.methods[0].models_fitted, "6/6");
        assert_eq!(rep.methods[0].rows[0].parameter, "wr");
        assert!(rep.methods[1].rows.is_empty());
        let jfm = &rep.methods[2];
        let names: Vec<&str> = jfm.rows.iter().map(|r| r.parameter.as_str()).collect();
        assert_eq!(names, ["beta_r.trt", "beta_r.z2", "beta_d.trt", "theta"]);
        let mut csv = Vec::new();
        rep.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("rep,seed,method,status"));
        assert!(rep.to_markdown().contains("Models fitted = "));
        let back: StudyConfig = serde_json::from_value(rep.to_json()["config"].clone()).unwrap();
        assert_eq!(back, rep.config);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = serde_json::to_value(config(1)).unwrap();
        v["extra"] = json!(1);
        assert!(StudyConfig::from_json(&v.to_string()).is_err());
    }
}
