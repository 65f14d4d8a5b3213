//! Simulation of recurrent and terminal events from a gamma-frailty joint
//! model by inverse transform sampling.
//!
//! Every subject draws from its own ChaCha stream selected by the subject
//! index, so a dataset depends only on `(spec, seed)`.

mod presets;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{validate_history, Dataset, RawSubject, SubjectHistory};

pub use presets::{
    planning_design, lwr_design, benchmark_scenario, stratified_power_variant, PlanningHazards,
};

/// Name of the covariate carrying the arm indicator.
pub const TREATMENT: &str = "trt";

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("invalid hazard: {0}")]
    Hazard(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
}

/// Parametric baseline hazard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum HazardSpec {
    /// A zero rate is allowed and never produces an event.
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    /// H₀(t) = log(1 + (t/scale)^shape); the median equals `scale`.
    LogLogistic { shape: f64, scale: f64 },
}

impl HazardSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let ok = match *self {
            HazardSpec::Exponential { rate } => rate.is_finite() && rate >= 0.0,
            HazardSpec::Weibull { shape, scale } | HazardSpec::LogLogistic { shape, scale } => {
                shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SpecError::Hazard(format!("{self:?}")))
        }
    }

    pub fn cumulative(&self, t: f64) -> f64 {
        match *self {
            HazardSpec::Exponential { rate } => rate * t,
            HazardSpec::Weibull { shape, scale } => (t / scale).powf(shape),
            HazardSpec::LogLogistic { shape, scale } => (t / scale).powf(shape).ln_1p(),
        }
    }

    /// H₀⁻¹(h).
    pub fn inverse_cumulative(&self, h: f64) -> f64 {
        match *self {
            HazardSpec::Exponential { rate } => {
                if rate == 0.0 {
                    f64::INFINITY
                } else {
                    h / rate
                }
            }
            HazardSpec::Weibull { shape, scale } => scale * h.powf(1.0 / shape),
            HazardSpec::LogLogistic { shape, scale } => scale * h.exp_m1().powf(1.0 / shape),
        }
    }

    pub fn hazard(&self, t: f64) -> f64 {
        match *self {
            HazardSpec::Exponential { rate } => rate,
            HazardSpec::Weibull { shape, scale } => shape / scale * (t / scale).powf(shape - 1.0),
            HazardSpec::LogLogistic { shape, scale } => {
                let r = (t / scale).powf(shape);
                shape / t * r / (1.0 + r)
            }
        }
    }

    pub fn median(&self) -> f64 {
        self.inverse_cumulative(std::f64::consts::LN_2)
    }
}

/// T = H₀⁻¹(E·e^{−η}) with E ~ Exp(1).
pub fn sample_event_time<R: Rng + ?Sized>(hazard: &HazardSpec, eta: f64, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    hazard.inverse_cumulative(e * (-eta).exp())
}

/// Gamma frailty with unit mean and variance θ; θ = 0 gives exactly 1.
pub fn draw_frailty<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> f64 {
    if theta <= 0.0 {
        return 1.0;
    }
    Gamma::new(1.0 / theta, theta).expect("positive theta").sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Censoring {
    /// Administrative censoring at a common time.
    Fixed { time: f64 },
    /// Uniform accrual over `[0, accrual]`, study end at `study_end`, and
    /// exponential loss to follow-up.
    Design {
        accrual: f64,
        study_end: f64,
        #[serde(default)]
        dropout_rate: f64,
    },
}

/// Time scale on which recurrences are generated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrenceClock {
    /// Gap times drawn afresh from the baseline after each event.
    #[default]
    Gap,
    /// Calendar-time intensity r₀(t): each event continues the same clock.
    Calendar,
}

/// Optional per-subject ceiling on the number of recurrences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RecurrenceCap {
    Fixed { max: u32 },
    /// Ceiling drawn per subject from Poisson(mean).
    Poisson { mean: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Interleaved assignment giving exactly round(q·n) treated subjects.
    #[default]
    Deterministic,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateGen {
    pub name: String,
    /// Bernoulli success probability.
    pub p: f64,
}

/// Baselines used for subjects whose covariate equals `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineOverride {
    pub covariate: String,
    pub value: f64,
    #[serde(default)]
    pub recurrent: Option<HazardSpec>,
    #[serde(default)]
    pub terminal: Option<HazardSpec>,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_q() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    1.0
}

/// Full generative description of a simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub n_subjects: usize,
    #[serde(default = "default_q")]
    pub allocation: f64,
    #[serde(default)]
    pub allocation_mode: Allocation,
    pub recurrent: HazardSpec,
    pub terminal: HazardSpec,
    #[serde(default)]
    pub beta_r: BTreeMap<String, f64>,
    #[serde(default)]
    pub beta_d: BTreeMap<String, f64>,
    pub theta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub covariates: Vec<CovariateGen>,
    pub censoring: Censoring,
    #[serde(default)]
    pub recurrence_clock: RecurrenceClock,
    #[serde(default)]
    pub recurrence_cap: Option<RecurrenceCap>,
    #[serde(default)]
    pub baseline_overrides: Vec<BaselineOverride>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SpecError::SchemaVersion(self.schema_version));
        }
        let bad = |m: &str| Err(SpecError::Scenario(m.to_string()));
        if !(self.allocation > 0.0 && self.allocation < 1.0) {
            return bad("allocation must lie in (0, 1)");
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad("theta must be finite and >= 0");
        }
        if !self.alpha.is_finite() {
            return bad("alpha must be finite");
        }
        self.recurrent.validate()?;
        self.terminal.validate()?;
        for o in &self.baseline_overrides {
            if let Some(h) = &o.recurrent {
                h.validate()?;
            }
            if let Some(h) = &o.terminal {
                h.validate()?;
            }
        }
        for c in &self.covariates {
            if c.name == TREATMENT || !(0.0..=1.0).contains(&c.p) {
                return bad("covariate generators need a non-reserved name and p in [0, 1]");
            }
        }
        let known = |k: &String| k == TREATMENT || self.covariates.iter().any(|c| &c.name == k);
        if !self.beta_r.keys().chain(self.beta_d.keys()).all(known) {
            return bad("coefficient for an unknown covariate");
        }
        match self.censoring {
            Censoring::Fixed { time } if !(time > 0.0 && time.is_finite()) => bad("censoring time must be > 0"),
            Censoring::Design { accrual, study_end, dropout_rate }
                if !(accrual >= 0.0 && accrual < study_end && dropout_rate >= 0.0) =>
            {
                bad("design censoring needs 0 <= accrual < study_end and dropout_rate >= 0")
            }
            _ => Ok(()),
        }?;
        if let Some(RecurrenceCap::Poisson { mean }) = self.recurrence_cap {
            if !(mean > 0.0) {
                return bad("Poisson cap needs a positive mean");
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| e.to_string())?;
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n_subjects = n;
        self
    }

    /// The same design with every treatment coefficient set to zero.
    pub fn null_version(&self) -> Self {
        let mut s = self.clone();
        s.beta_r.remove(TREATMENT);
        s.beta_d.remove(TREATMENT);
        s
    }

    /// Names of the covariates, treatment first.
    pub fn covariate_names(&self) -> Vec<String> {
        std::iter::once(TREATMENT.to_string()).chain(self.covariates.iter().map(|c| c.name.clone())).collect()
    }

    fn baselines(&self, cov: &BTreeMap<String, f64>) -> (HazardSpec, HazardSpec) {
        let mut rec = self.recurrent;
        let mut term = self.terminal;
        for o in &self.baseline_overrides {
            if cov.get(&o.covariate) == Some(&o.value) {
                if let Some(h) = o.recurrent {
                    rec = h;
                }
                if let Some(h) = o.terminal {
                    term = h;
                }
                break;
            }
        }
        (rec, term)
    }
}

fn linear_predictor(beta: &BTreeMap<String, f64>, cov: &BTreeMap<String, f64>) -> f64 {
    beta.iter().map(|(k, b)| b * cov.get(k).copied().unwrap_or(0.0)).sum()
}

/// splitmix64 finaliser, used to spread user seeds over the key space.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of replicate `r` in a Monte Carlo loop driven by `seed`.
pub fn replicate_seed(seed: u64, r: u64) -> u64 {
    splitmix(splitmix(seed) ^ splitmix(r.wrapping_add(0x5EED)))
}

/// Generator for one stream of a seed. Streams are independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut s = seed;
    for chunk in key.chunks_mut(8) {
        s = splitmix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

const ALLOCATION_STREAM: u64 = u64::MAX;

fn treated_flags(spec: &ScenarioSpec, seed: u64) -> Vec<bool> {
    let q = spec.allocation;
    match spec.allocation_mode {
        Allocation::Deterministic => (0..spec.n_subjects)
            .map(|i| ((i + 1) as f64 * q).round() > (i as f64 * q).round())
            .collect(),
        Allocation::Bernoulli => {
            let mut rng = stream_rng(seed, ALLOCATION_STREAM);
            (0..spec.n_subjects).map(|_| rng.random::<f64>() < q).collect()
        }
    }
}

/// Draw one subject with the given arm.
pub fn simulate_subject<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    id: String,
    treated: bool,
    rng: &mut R,
) -> SubjectHistory {
    let u = draw_frailty(spec.theta, rng);
    let mut cov = BTreeMap::new();
    for g in &spec.covariates {
        let x = if rng.random::<f64>() < g.p { 1.0 } else { 0.0 };
        cov.insert(g.name.clone(), x);
    }
    let mut lp_cov = cov.clone();
    lp_cov.insert(TREATMENT.to_string(), if treated { 1.0 } else { 0.0 });
    let (rec_h, term_h) = spec.baselines(&lp_cov);
    let log_u = u.ln();
    let eta_d = linear_predictor(&spec.beta_d, &lp_cov) + spec.alpha * log_u;
    let eta_r = linear_predictor(&spec.beta_r, &lp_cov) + log_u;

    let death = sample_event_time(&term_h, eta_d, rng);
    let censor = match spec.censoring {
        Censoring::Fixed { time } => time,
        Censoring::Design { accrual, study_end, dropout_rate } => {
            let entry = accrual * rng.random::<f64>();
            let admin = study_end - entry;
            if dropout_rate > 0.0 {
                let d: f64 = Exp1.sample(rng);
                admin.min(d / dropout_rate)
            } else {
                admin
            }
        }
    };
    let cap = match spec.recurrence_cap {
        None => usize::MAX,
        Some(RecurrenceCap::Fixed { max }) => max as usize,
        Some(RecurrenceCap::Poisson { mean }) => {
            Poisson::new(mean).expect("positive mean").sample(rng) as usize
        }
    };

    let stop = death.min(censor);
    let scale = (-eta_r).exp();
    let mut times = Vec::new();
    let mut t = 0.0_f64;
    while t < stop && times.len() < cap {
        let e: f64 = Exp1.sample(rng);
        let next = match spec.recurrence_clock {
            RecurrenceClock::Gap => t + rec_h.inverse_cumulative(e * scale),
            RecurrenceClock::Calendar => rec_h.inverse_cumulative(rec_h.cumulative(t) + e * scale),
        };
        if next < stop && next > t {
            times.push(next);
            t = next;
        } else {
            break;
        }
    }

    let raw = RawSubject {
        id,
        treated,
        recurrent_times: times,
        death_time: (death < censor).then_some(death),
        censor_time: censor,
        covariates: cov,
        stratum: None,
    };
    validate_history(raw).expect("simulated subjects satisfy the history invariants")
}

/// Simulate `spec.n_subjects` subjects from `seed`.
pub fn simulate_dataset(spec: &ScenarioSpec, seed: u64) -> Dataset {
    let flags = treated_flags(spec, seed);
    let subjects = flags
        .iter()
        .enumerate()
        .map(|(i, &treated)| {
            let mut rng = stream_rng(seed, i as u64);
            simulate_subject(spec, (i + 1).to_string(), treated, &mut rng)
        })
        .collect();
    Dataset::new(subjects).expect("generated ids are unique")
}
