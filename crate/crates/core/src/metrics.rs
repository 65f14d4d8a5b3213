//! Replicate-level performance summaries and the large-sample "true" win
//! ratio of a scenario.

use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::rules::{count_wins, WinError, WinRule};
use crate::sim::{replicate_seed, simulate_dataset, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no replicates to summarise")]
    EmptyInput,
    #[error(transparent)]
    Win(#[from] WinError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// One replicate's estimate of a parameter. `se` and `ci` are absent when
/// the fit produced no standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateEstimate {
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceRow {
    pub parameter: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub abs_bias: f64,
    /// `None` when the truth is zero.
    pub rel_bias_pct: Option<f64>,
    /// Standard deviation of the estimates (n − 1 denominator).
    pub empirical_se: f64,
    /// Mean of the available asymptotic SEs.
    pub mean_asymptotic_se: Option<f64>,
    /// Share of available intervals that contain the truth, in percent.
    pub coverage_pct: Option<f64>,
    pub n_fits: usize,
    /// Replicates without a standard error; excluded from the SE and
    /// coverage columns.
    pub n_missing_se: usize,
}

/// Bias, spread, mean asymptotic SE and coverage of a set of estimates.
pub fn replicate_summary(
    parameter: &str,
    reps: &[ReplicateEstimate],
    truth: f64,
) -> Result<PerformanceRow, MetricsError> {
    if reps.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let k = reps.len() as f64;
    let mean = reps.iter().map(|r| r.estimate).sum::<f64>() / k;
    let empirical_se = if reps.len() > 1 {
        (reps.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let ses: Vec<f64> = reps.iter().filter_map(|r| r.se).collect();
    let cis: Vec<(f64, f64)> = reps.iter().filter_map(|r| r.ci).collect();
    let abs_bias = (mean - truth).abs();
    Ok(PerformanceRow {
        parameter: parameter.to_string(),
        truth,
        mean_estimate: mean,
        abs_bias,
        rel_bias_pct: (truth != 0.0).then(|| 100.0 * abs_bias / truth.abs()),
        empirical_se,
        mean_asymptotic_se: (!ses.is_empty()).then(|| ses.iter().sum::<f64>() / ses.len() as f64),
        coverage_pct: (!cis.is_empty())
            .then(|| 100.0 * cis.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count() as f64 / cis.len() as f64),
        n_fits: reps.len(),
        n_missing_se: reps.len() - ses.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalPower {
    pub power: f64,
    pub mcse: f64,
    /// Clopper–Pearson 95% interval.
    pub ci95: (f64, f64),
    pub rejections: usize,
    pub replicates: usize,
}

/// Share of p-values below `alpha` with its Monte Carlo standard error and
/// an exact binomial interval.
pub fn empirical_power(p_values: &[f64], alpha: f64) -> Result<EmpiricalPower, MetricsError> {
    if p_values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let x = p_values.iter().filter(|p| **p < alpha).count();
    Ok(binomial_summary(x, p_values.len()))
}

/// Power summary from a rejection count.
pub fn binomial_summary(x: usize, k: usize) -> EmpiricalPower {
    let p = x as f64 / k as f64;
    let lo = if x == 0 { 0.0 } else { beta_quantile(0.025, x as f64, (k - x + 1) as f64) };
    let hi = if x == k { 1.0 } else { beta_quantile(0.975, (x + 1) as f64, (k - x) as f64) };
    EmpiricalPower { power: p, mcse: (p * (1.0 - p) / k as f64).sqrt(), ci95: (lo, hi), rejections: x, replicates: k }
}

fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("positive shape parameters").inverse_cdf(p)
}

/// Large-sample win ratio of a scenario: the mean of `n_reps` estimates
/// ŵ/ℓ̂, each from a dataset of `n_big` subjects. With `stratify` set the
/// pooled stratified estimate over that covariate is used. Pairs are
/// counted on the fly, so memory stays linear in `n_big`.
pub fn asymptotic_true_wr(
    scenario: &ScenarioSpec,
    rule: WinRule,
    stratify: Option<&str>,
    n_big: usize,
    n_reps: usize,
    seed: u64,
) -> Result<f64, MetricsError> {
    if n_reps == 0 || n_big < 2 {
        return Err(MetricsError::EmptyInput);
    }
    let spec = scenario.clone().with_n(n_big);
    let mut total = 0.0;
    for r in 0..n_reps {
        let mut ds = simulate_dataset(&spec, replicate_seed(seed, r as u64));
        if let Some(name) = stratify {
            ds = ds.stratified_by_covariate(name).map_err(|e| MetricsError::InvalidInput(e.to_string()))?;
        }
        let (counts, strata) = count_wins(&ds, rule, stratify.is_some())?;
        let (w, l) = if strata.is_empty() {
            (counts.wins as f64 / counts.n_pairs as f64, counts.losses as f64 / counts.n_pairs as f64)
        } else {
            let n = ds.len() as f64;
            strata.iter().filter(|s| s.counts.n_pairs > 0).fold((0.0, 0.0), |(w, l), s| {
                let om = s.size as f64 / n;
                let np = s.counts.n_pairs as f64;
                (w + om * s.counts.wins as f64 / np, l + om * s.counts.losses as f64 / np)
            })
        };
        if w == 0.0 || l == 0.0 {
            return Err(WinError::DegenerateWR { wins: counts.wins, losses: counts.losses }.into());
        }
        total += w / l;
    }
    Ok(total / n_reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(e: f64, ci: Option<(f64, f64)>) -> ReplicateEstimate {
        ReplicateEstimate { estimate: e, se: ci.map(|_| 0.1), ci }
    }

    #[test]
    fn summary_of_exact_estimates() {
        let r = replicate_summary("b", &[rep(2.0, Some((1.0, 3.0))); 5], 2.0).unwrap();
        assert_eq!((r.abs_bias, r.coverage_pct, r.empirical_se), (0.0, Some(100.0), 0.0));
        assert_eq!(r.rel_bias_pct, Some(0.0));
    }

    #[test]
    fn summary_spread_and_missing_se() {
        let r = replicate_summary("b", &[rep(0.0, Some((-1.0, 0.5))), rep(2.0, None)], 1.0).unwrap();
        assert_eq!(r.abs_bias, 0.0);
        assert!((r.empirical_se - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!((r.n_fits, r.n_missing_se), (2, 1));
        assert_eq!(r.coverage_pct, Some(0.0));
        assert_eq!(replicate_summary("b", &[], 1.0), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn power_and_mcse() {
        let all = empirical_power(&[0.0; 20], 0.05).unwrap();
        assert_eq!((all.power, all.mcse, all.ci95.1), (1.0, 0.0, 1.0));
        let s = binomial_summary(410, 500);
        assert!((s.mcse - 0.0172).abs() < 1e-4);
        assert!((binomial_summary(346, 500).mcse - 0.0206).abs() < 1e-4);
        assert!(s.ci95.0 < 0.82 && 0.82 < s.ci95.1);
        // Clopper–Pearson with x = 0: upper = 1 − 0.025^(1/k)
        let z = binomial_summary(0, 50);
        assert!((z.ci95.1 - (1.0 - 0.025f64.powf(1.0 / 50.0))).abs() < 1e-9);
    }

    #[test]
    fn power_shrinks_with_alpha() {
        let p: Vec<f64> = (0..200).map(|i| i as f64 / 400.0).collect();
        let mut last = 1.0;
        for a in [0.5, 0.2, 0.1, 0.05, 0.01] {
            let v = empirical_power(&p, a).unwrap().power;
            assert!(v <= last);
            last = v;
        }
    }
}
