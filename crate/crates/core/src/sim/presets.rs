//! Ready-made scenarios: six benchmark settings and two families of trial
//! planning designs.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use super::{
    Allocation, BaselineOverride, Censoring, CovariateGen, HazardSpec, RecurrenceClock,
    ScenarioSpec, SCHEMA_VERSION, TREATMENT,
};

fn coefs(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Simulation scenarios 1 to 6: n = 400, administrative censoring at 3,
/// β_R = (log 0.7, log 0.9) on (trt, z2), β_D = log 0.8 on trt, α = 1.
///
/// # Panics
/// For `k` outside 1..=6.
pub fn benchmark_scenario(k: u8) -> ScenarioSpec {
    let exp = |rate: f64| HazardSpec::Exponential { rate };
    let (theta, recurrent, terminal) = match k {
        1 => (0.5, exp(1.5), exp(0.5)),
        2 => (0.01, exp(1.5), exp(0.5)),
        3 => (1.0, exp(1.5), exp(0.5)),
        4 => (0.5, exp(0.2), exp(2.0)),
        5 => (0.5, exp(2.0), exp(1.0 / 7.0)),
        6 => (
            0.5,
            HazardSpec::LogLogistic { shape: 1.4, scale: 2.0 },
            HazardSpec::LogLogistic { shape: 1.2, scale: 3.0 },
        ),
        _ => panic!("scenario {k} is not defined"),
    };
    ScenarioSpec {
        schema_version: SCHEMA_VERSION,
        name: format!("scenario-{k}"),
        n_subjects: 400,
        allocation: 0.5,
        allocation_mode: Allocation::Deterministic,
        recurrent,
        terminal,
        beta_r: coefs(&[(TREATMENT, 0.7f64.ln()), ("z2", 0.9f64.ln())]),
        beta_d: coefs(&[(TREATMENT, 0.8f64.ln())]),
        theta,
        alpha: 1.0,
        covariates: vec![CovariateGen { name: "z2".into(), p: 0.5 }],
        censoring: Censoring::Fixed { time: 3.0 },
        recurrence_clock: RecurrenceClock::Gap,
        recurrence_cap: None,
        baseline_overrides: Vec::new(),
        seed: 1,
    }
}

/// Scenario 5 with both baseline rates shifted by −0.1 when z2 = 0 and by
/// +0.1 when z2 = 1, so that z2 separates baseline risk.
pub fn stratified_power_variant() -> ScenarioSpec {
    let mut s = benchmark_scenario(5);
    s.name = "scenario-5-shifted-baselines".into();
    let shifted = |d: f64| BaselineOverride {
        covariate: "z2".into(),
        value: if d < 0.0 { 0.0 } else { 1.0 },
        recurrent: Some(HazardSpec::Exponential { rate: 2.0 + d }),
        terminal: Some(HazardSpec::Exponential { rate: 1.0 / 7.0 + d }),
    };
    s.baseline_overrides = vec![shifted(-0.1), shifted(0.1)];
    s
}

/// Shape assumptions for the trial planning designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanningHazards {
    /// Shapes 1 and 1.
    Constant,
    /// Hospitalisation shape 1.5, death shape 2.
    Increasing,
}

/// Planning design in months: control medians of 3.6 months to first
/// hospitalisation and 28 months to death, uniform accrual over 36 months
/// and study end at 48 months. Recurrences are not capped; the control arm
/// then averages about three hospitalisations per subject.
pub fn planning_design(hazards: PlanningHazards, theta: f64, hr_recurrent: f64, hr_death: f64) -> ScenarioSpec {
    let (shape_r, shape_d) = match hazards {
        PlanningHazards::Constant => (1.0, 1.0),
        PlanningHazards::Increasing => (1.5, 2.0),
    };
    // Weibull scale with median m: m / (ln 2)^(1/shape)
    let scale = |median: f64, shape: f64| median / LN_2.powf(1.0 / shape);
    ScenarioSpec {
        schema_version: SCHEMA_VERSION,
        name: format!("planning-{hazards:?}").to_lowercase(),
        n_subjects: 1000,
        allocation: 0.5,
        allocation_mode: Allocation::Deterministic,
        recurrent: HazardSpec::Weibull { shape: shape_r, scale: scale(3.6, shape_r) },
        terminal: HazardSpec::Weibull { shape: shape_d, scale: scale(28.0, shape_d) },
        beta_r: coefs(&[(TREATMENT, hr_recurrent.ln())]),
        beta_d: coefs(&[(TREATMENT, hr_death.ln())]),
        theta,
        alpha: 1.0,
        covariates: Vec::new(),
        censoring: Censoring::Design { accrual: 36.0, study_end: 48.0, dropout_rate: 0.0 },
        recurrence_clock: RecurrenceClock::Calendar,
        recurrence_cap: None,
        baseline_overrides: Vec::new(),
        seed: 42,
    }
}

/// Constant-hazard design used for the simulation-based LWR sample size.
pub fn lwr_design(theta: f64, hr_recurrent: f64, hr_death: f64) -> ScenarioSpec {
    let mut s = planning_design(PlanningHazards::Constant, theta, hr_recurrent, hr_death);
    s.name = "lwr-design".into();
    s
}
