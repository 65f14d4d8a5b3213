//! Simulation-based sample size for the last-event-assisted win ratio.
//!
//! Every replicate simulates the largest grid size once under each
//! hypothesis; smaller sizes use the leading subjects of the same draw, so
//! the power curve is built from common random numbers.

use rayon::prelude::*;
use serde::Serialize;

use super::DesignError;
use crate::data::Dataset;
use crate::inference::wr_unstratified;
use crate::rules::WinRule;
use crate::sim::{replicate_seed, simulate_dataset, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SampleGrid {
    pub min: usize,
    pub max: usize,
    pub step: usize,
}

impl SampleGrid {
    pub fn sizes(&self) -> Vec<usize> {
        if self.step == 0 || self.min > self.max {
            return Vec::new();
        }
        (self.min..=self.max).step_by(self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub n: usize,
    pub power: f64,
    pub power_mcse: f64,
    pub type1: f64,
    pub type1_mcse: f64,
    /// Replicates where the WR was undefined (no wins or no losses); they
    /// count as non-rejections.
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LwrSimResult {
    pub chosen: usize,
    pub curve: Vec<GridPoint>,
    pub n_sim: usize,
    pub alpha: f64,
    pub target_power: f64,
}

fn prefix(ds: &Dataset, n: usize) -> Dataset {
    Dataset::new(ds.subjects()[..n].to_vec()).expect("prefix of a valid dataset")
}

/// Rejection rates of the unstratified LWR Wald test at each grid size
/// under the alternative and the null.
pub fn lwr_power_curve(
    alternative: &ScenarioSpec,
    null: &ScenarioSpec,
    grid: &SampleGrid,
    n_sim: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<GridPoint>, DesignError> {
    let sizes = grid.sizes();
    if sizes.is_empty() || sizes[0] < 2 {
        return Err(DesignError::InvalidInput("empty sample size grid".into()));
    }
    if n_sim == 0 {
        return Err(DesignError::InvalidInput("n_sim must be positive".into()));
    }
    let n_max = *sizes.last().expect("non-empty");
    // per replicate and grid size: (alternative rejects, null rejects, degenerate)
    let outcomes: Vec<Vec<(bool, bool, bool)>> = (0..n_sim as u64)
        .into_par_iter()
        .map(|r| {
            let s = replicate_seed(seed, r);
            let alt = simulate_dataset(&alternative.clone().with_n(n_max), s);
            let nul = simulate_dataset(&null.clone().with_n(n_max), s);
            sizes
                .iter()
                .map(|&n| {
                    let test = |ds: &Dataset| match wr_unstratified(&prefix(ds, n), WinRule::Lwr) {
                        Ok(w) => (w.p_two_sided < alpha, false),
                        Err(_) => (false, true),
                    };
                    let (ra, da) = test(&alt);
                    let (r0, d0) = test(&nul);
                    (ra, r0, da || d0)
                })
                .collect()
        })
        .collect();
    let k = n_sim as f64;
    let mcse = |p: f64| (p * (1.0 - p) / k).sqrt();
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(g, &n)| {
            let power = outcomes.iter().filter(|o| o[g].0).count() as f64 / k;
            let type1 = outcomes.iter().filter(|o| o[g].1).count() as f64 / k;
            GridPoint {
                n,
                power,
                power_mcse: mcse(power),
                type1,
                type1_mcse: mcse(type1),
                degenerate: outcomes.iter().filter(|o| o[g].2).count(),
            }
        })
        .collect())
}

/// Smallest grid size with power at least `target` and type I error at
/// most `alpha`.
pub fn lwr_sim_sample_size(
    alternative: &ScenarioSpec,
    null: &ScenarioSpec,
    grid: &SampleGrid,
    n_sim: usize,
    alpha: f64,
    target: f64,
    seed: u64,
) -> Result<LwrSimResult, DesignError> {
    let curve = lwr_power_curve(alternative, null, grid, n_sim, alpha, seed)?;
    let chosen = select_n(&curve, alpha, target).ok_or(DesignError::NoFeasibleN)?;
    Ok(LwrSimResult { chosen, curve, n_sim, alpha, target_power: target })
}

/// Selection rule applied to an existing power curve.
pub fn select_n(curve: &[GridPoint], alpha: f64, target: f64) -> Option<usize> {
    curve.iter().find(|p| p.power >= target && p.type1 <= alpha).map(|p| p.n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::lwr_design;

    #[test]
    fn identical_hypotheses_are_infeasible() {
        let sc = lwr_design(0.5, 1.0, 1.0);
        let grid = SampleGrid { min: 100, max: 200, step: 100 };
        let curve = lwr_power_curve(&sc, &sc, &grid, 100, 0.05, 3).unwrap();
        for p in &curve {
            assert_eq!(p.power, p.type1);
            assert!(p.power < 0.2);
        }
        assert_eq!(
            lwr_sim_sample_size(&sc, &sc, &grid, 100, 0.05, 0.8, 3).unwrap_err(),
            DesignError::NoFeasibleN
        );
    }
}
