//! Sample size and power: Schoenfeld event counts with accrual-averaged
//! event probabilities, noncentral chi-square machinery, the joint frailty
//! model calculation, the model-based standard win ratio formula and the
//! simulation-based last-event-assisted win ratio search.

mod jfm;
mod lwr;

use thiserror::Error;

use crate::dist::{chisq_quantile, noncentral_chisq_cdf, normal_quantile};
use crate::jfm::JfmError;
use crate::rules::WinError;

pub use jfm::{fisher_info_mc, jfm_design, jfm_power, jfm_sample_size, JfmDesign};
pub use lwr::{lwr_power_curve, lwr_sim_sample_size, select_n, GridPoint, LwrSimResult, SampleGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("hazard ratio of 1 gives no effect to detect")]
    NullHR,
    #[error("the alternative has no effect on the tested parameters")]
    NullEffect,
    #[error("no sample size on the grid reaches the target power with acceptable type I error")]
    NoFeasibleN,
    #[error("non-finite score in dataset {dataset}")]
    NonFiniteScore { dataset: usize },
    #[error("invalid design input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Jfm(#[from] JfmError),
    #[error(transparent)]
    Win(#[from] WinError),
}

/// Error rates, allocation and dropout inflation shared by the calculators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignInputs {
    /// Two-sided type I error.
    pub alpha: f64,
    pub power: f64,
    /// Fraction allocated to the experimental arm.
    pub allocation: f64,
    /// Post-hoc inflation for loss to follow-up, e.g. 0.05.
    pub inflation: f64,
}

impl Default for DesignInputs {
    fn default() -> Self {
        DesignInputs { alpha: 0.05, power: 0.8, allocation: 0.5, inflation: 0.0 }
    }
}

impl DesignInputs {
    pub fn validate(&self) -> Result<(), DesignError> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.alpha) || !unit(self.power) || !unit(self.allocation) {
            return Err(DesignError::InvalidInput("alpha, power and allocation must lie in (0, 1)".into()));
        }
        if !(self.inflation >= 0.0 && self.inflation.is_finite()) {
            return Err(DesignError::InvalidInput("inflation must be non-negative".into()));
        }
        Ok(())
    }

    /// z_{1−α/2} + z_{power}
    pub fn z_sum(&self) -> f64 {
        normal_quantile(1.0 - self.alpha / 2.0) + normal_quantile(self.power)
    }
}

/// Smallest even integer not below `x`.
pub fn even_up(x: f64) -> u64 {
    let n = x.ceil() as u64;
    n + n % 2
}

/// Inflate for dropout and round up to an even total: `even_up(⌈n⌉·(1+f))`.
pub fn finalize_n(n: f64, inflation: f64) -> u64 {
    even_up(n.ceil() * (1.0 + inflation))
}

/// Required number of events for a log-rank comparison.
pub fn schoenfeld_events(alpha: f64, power: f64, p: f64, hr: f64) -> Result<u64, DesignError> {
    if !(hr > 0.0) {
        return Err(DesignError::InvalidInput("hazard ratio must be positive".into()));
    }
    let lhr = hr.ln();
    if lhr == 0.0 {
        return Err(DesignError::NullHR);
    }
    let z = normal_quantile(1.0 - alpha / 2.0) + normal_quantile(power);
    Ok((z * z / (lhr * lhr * p * (1.0 - p))).ceil() as u64)
}

/// Probability of an event by study end under a constant hazard `rate`,
/// uniform accrual over `[0, accrual]` and administrative end at
/// `study_end`: `1 − (e^{−λ(F−A)} − e^{−λF}) / (Aλ)`.
pub fn accrual_event_prob(rate: f64, accrual: f64, study_end: f64) -> f64 {
    let x = rate * accrual;
    // (e^{−λ(F−A)} − e^{−λF}) / (Aλ) = e^{−λ(F−A)}·(1 − e^{−λA}) / (λA)
    let ratio = if x.abs() < 1e-8 { 1.0 - 0.5 * x } else { -(-x).exp_m1() / x };
    1.0 - (-rate * (study_end - accrual)).exp() * ratio
}

/// Total sample size from a required event count and the mean event
/// probability.
pub fn schoenfeld_n(events: u64, mean_prob: f64, inflation: f64) -> Result<u64, DesignError> {
    if !(mean_prob > 0.0 && mean_prob <= 1.0) {
        return Err(DesignError::InvalidInput("event probability must lie in (0, 1]".into()));
    }
    Ok(finalize_n(events as f64 / mean_prob, inflation))
}

/// Intermediate values of the event-driven calculation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchoenfeldPlan {
    pub rate_control: f64,
    pub rate_treated: f64,
    pub hr: f64,
    pub events: u64,
    pub prob_control: f64,
    pub prob_treated: f64,
    pub mean_prob: f64,
    pub n: u64,
}

/// Event-driven plan from one-year control event probability `p_control`
/// and a ratio applied to the two-year event probability (for example
/// 30% at one year and an 11% relative reduction at two).
pub fn schoenfeld_plan(
    p_control: f64,
    two_year_ratio: f64,
    inputs: &DesignInputs,
    accrual: f64,
    study_end: f64,
) -> Result<SchoenfeldPlan, DesignError> {
    inputs.validate()?;
    let rate_control = -(1.0 - p_control).ln();
    let rate_treated = -0.5 * (1.0 - two_year_ratio * (1.0 - (-2.0 * rate_control).exp())).ln();
    let hr = rate_treated / rate_control;
    let events = schoenfeld_events(inputs.alpha, inputs.power, inputs.allocation, hr)?;
    let prob_control = accrual_event_prob(rate_control, accrual, study_end);
    let prob_treated = accrual_event_prob(rate_treated, accrual, study_end);
    let mean_prob = 0.5 * (prob_control + prob_treated);
    let n = schoenfeld_n(events, mean_prob, inputs.inflation)?;
    Ok(SchoenfeldPlan { rate_control, rate_treated, hr, events, prob_control, prob_treated, mean_prob, n })
}

/// Power of a χ²_Q Wald test with noncentrality `ncp` at two-sided level `alpha`.
pub fn power_from_ncp(q: usize, alpha: f64, ncp: f64) -> f64 {
    let c = chisq_quantile(1.0 - alpha, q as f64);
    1.0 - noncentral_chisq_cdf(c, q as f64, ncp)
}

/// Noncentrality at which a χ²_Q Wald test at level `alpha` has the given
/// power: bracket by doubling, then bisect to 1e-8.
pub fn ncp_for_power(q: usize, alpha: f64, power: f64) -> Result<f64, DesignError> {
    if q == 0 || !(alpha > 0.0 && alpha < 1.0) || !(power > 0.0 && power < 1.0) {
        return Err(DesignError::InvalidInput("need Q ≥ 1 and probabilities in (0, 1)".into()));
    }
    if power <= alpha {
        return Ok(0.0);
    }
    let f = |mu: f64| power_from_ncp(q, alpha, mu) - power;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(DesignError::InvalidInput("power not reachable".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Model-based sample size for the standard win ratio:
/// `n = ζ₀²(z_{1−α/2} + z_{power})² / (q(1−q)(δ₀ᵀξ)²)`, rounded up to even.
pub fn wr_model_based_n(zeta0: f64, delta0: &[f64], xi: &[f64], inputs: &DesignInputs) -> Result<u64, DesignError> {
    inputs.validate()?;
    if delta0.len() != xi.len() {
        return Err(DesignError::InvalidInput("δ₀ and ξ must have the same length".into()));
    }
    Ok(finalize_n(wr_model_based_raw(zeta0, delta0, xi, inputs)?, inputs.inflation))
}

/// Unrounded value of [`wr_model_based_n`].
pub fn wr_model_based_raw(zeta0: f64, delta0: &[f64], xi: &[f64], inputs: &DesignInputs) -> Result<f64, DesignError> {
    let effect: f64 = delta0.iter().zip(xi).map(|(d, x)| d * x).sum();
    if effect == 0.0 || !effect.is_finite() {
        return Err(DesignError::NullEffect);
    }
    let q = inputs.allocation;
    let z = inputs.z_sum();
    Ok(zeta0 * zeta0 * z * z / (q * (1.0 - q) * effect * effect))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schoenfeld_pipeline() {
        let plan = schoenfeld_plan(0.30, 0.89, &DesignInputs::default(), 3.0, 4.0).unwrap();
        assert!((plan.hr - 0.8480).abs() < 5e-4);
        assert!((plan.hr.ln() + 0.1648).abs() < 5e-4);
        assert_eq!(plan.events, 1156);
        assert_eq!(plan.n, 2132);
        assert!((plan.prob_control - 0.5702).abs() < 5e-4);
        let p90 = schoenfeld_plan(0.30, 0.89, &DesignInputs { power: 0.9, ..Default::default() }, 3.0, 4.0).unwrap();
        assert_eq!((p90.events, p90.n), (1548, 2856));
    }

    #[test]
    fn schoenfeld_edge_cases() {
        assert_eq!(schoenfeld_events(0.05, 0.8, 0.5, 1.0), Err(DesignError::NullHR));
        assert_eq!(schoenfeld_n(100, 1.0, 0.0).unwrap(), 100);
        assert!(accrual_event_prob(1e-8, 3.0, 4.0) < 1e-6);
    }

    #[test]
    fn one_df_noncentrality() {
        use crate::dist::normal_cdf;
        for &a in &[0.01, 0.05, 0.1] {
            let c = normal_quantile(1.0 - a / 2.0);
            for &p in &[0.7, 0.8, 0.9, 0.95] {
                let mu = ncp_for_power(1, a, p).unwrap();
                // exact: P(|N(√μ, 1)| > c) = p
                let m = mu.sqrt();
                let exact = normal_cdf(m - c) + normal_cdf(-m - c);
                assert!((exact - p).abs() < 1e-9, "α {a} power {p}");
                // the (z + z)² identity drops the opposite tail
                let z = c + normal_quantile(p);
                assert!((mu - z * z).abs() < 1e-3);
            }
        }
        assert!((ncp_for_power(1, 0.05, 0.8).unwrap() - 7.8489).abs() < 1e-3);
        assert!((ncp_for_power(1, 0.05, 0.9).unwrap() - 10.5074).abs() < 1e-3);
        assert!((ncp_for_power(2, 0.05, 0.8).unwrap() - 9.6347).abs() < 1e-3);
    }

    #[test]
    fn wr_formula_homogeneity() {
        let i = DesignInputs::default();
        let a = wr_model_based_raw(1.0, &[0.3, 0.2], &[-0.1, -0.2], &i).unwrap();
        let b = wr_model_based_raw(2.0, &[0.3, 0.2], &[-0.1, -0.2], &i).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
        let skew = wr_model_based_raw(1.0, &[0.3, 0.2], &[-0.1, -0.2], &DesignInputs { allocation: 0.4, ..i }).unwrap();
        assert!(skew > a);
        assert_eq!(wr_model_based_n(1.0, &[1.0, 1.0], &[1.0, -1.0], &i), Err(DesignError::NullEffect));
    }

    #[test]
    fn even_rounding() {
        assert_eq!(even_up(1271.2), 1272);
        assert_eq!(even_up(1272.0), 1272);
        assert_eq!(finalize_n(1061.4, 0.05), 1116);
    }
}
