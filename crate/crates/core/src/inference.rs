//! Win-ratio point estimates, U-statistic variances and Wald tests.

use serde::Serialize;
use serde_json::{json, Value};

use crate::data::{Arm, Dataset, SubjectHistory};
use crate::dist::{normal_cdf, normal_quantile, two_sided_p};
use crate::rules::{require_arms, split_arms, strata, tally_pairs, PairCounts, PairTally, WinError, WinRule};

const Z975: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumSummary {
    pub label: String,
    pub size: usize,
    pub weight: f64,
    pub win_frac: f64,
    pub loss_frac: f64,
    pub counts: PairCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WRResult {
    pub rule: WinRule,
    pub stratified: bool,
    pub n: usize,
    pub n_experimental: usize,
    pub n_control: usize,
    pub counts: PairCounts,
    pub win_frac: f64,
    pub loss_frac: f64,
    pub tie_frac: f64,
    pub wr: f64,
    pub log_wr: f64,
    /// σ̂/√n on the log scale.
    pub se_log_wr: f64,
    /// Delta-method SE on the WR scale, `wr * se_log_wr`.
    pub se_wr: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub ci95: (f64, f64),
    /// Entries of Σ̂ as (11, 12, 22).
    pub sigma: (f64, f64, f64),
    pub per_stratum: Vec<StratumSummary>,
    pub warnings: Vec<String>,
}

impl WRResult {
    pub fn to_json(&self) -> Value {
        json!({
            "rule": self.rule,
            "stratified": self.stratified,
            "n": self.n,
            "n_experimental": self.n_experimental,
            "n_control": self.n_control,
            "n_pairs": self.counts.n_pairs,
            "wins": self.counts.wins,
            "losses": self.counts.losses,
            "ties": self.counts.ties,
            "win_frac": self.win_frac,
            "loss_frac": self.loss_frac,
            "tie_frac": self.tie_frac,
            "wr": self.wr,
            "log_wr": self.log_wr,
            "se_log_wr": self.se_log_wr,
            "se_wr": self.se_wr,
            "z": self.z,
            "p": self.p_two_sided,
            "ci95": [self.ci95.0, self.ci95.1],
            "strata": self.per_stratum,
            "warnings": self.warnings,
        })
    }

    /// True when the 95% interval covers `truth` (on the WR scale).
    pub fn covers(&self, truth: f64) -> bool {
        self.ci95.0 <= truth && truth <= self.ci95.1
    }
}

/// Sums needed from one comparison group (the whole sample or one stratum).
struct GroupStats {
    n_e: usize,
    n_c: usize,
    w: f64,
    l: f64,
    counts: PairCounts,
    /// Σ u_t u_tᵀ and Σ u_c u_cᵀ, packed as (11, 12, 22).
    outer_t: [f64; 3],
    outer_c: [f64; 3],
}

fn group_stats(rule: WinRule, treated: &[&SubjectHistory], control: &[&SubjectHistory]) -> GroupStats {
    let PairTally { counts, treated: rows, control: cols } = tally_pairs(rule, treated, control);
    let (n_e, n_c) = (treated.len(), control.len());
    let mut g = GroupStats { n_e, n_c, w: 0.0, l: 0.0, counts, outer_t: [0.0; 3], outer_c: [0.0; 3] };
    if n_e == 0 || n_c == 0 {
        return g;
    }
    let pairs = counts.n_pairs as f64;
    g.w = counts.wins as f64 / pairs;
    g.l = counts.losses as f64 / pairs;
    let accumulate = |acc: &mut [f64; 3], tallies: &[(u64, u64)], denom: f64| {
        for &(a, b) in tallies {
            let u1 = a as f64 / denom - g.w;
            let u2 = b as f64 / denom - g.l;
            acc[0] += u1 * u1;
            acc[1] += u1 * u2;
            acc[2] += u2 * u2;
        }
    };
    let mut ot = [0.0; 3];
    let mut oc = [0.0; 3];
    accumulate(&mut ot, &rows, n_c as f64);
    accumulate(&mut oc, &cols, n_e as f64);
    g.outer_t = ot;
    g.outer_c = oc;
    g
}

fn log_variance(w: f64, l: f64, s: (f64, f64, f64)) -> f64 {
    s.0 / (w * w) - 2.0 * s.1 / (w * l) + s.2 / (l * l)
}

fn finish(
    rule: WinRule,
    stratified: bool,
    ds: &Dataset,
    counts: PairCounts,
    w: f64,
    l: f64,
    tie: f64,
    sigma: (f64, f64, f64),
    per_stratum: Vec<StratumSummary>,
    warnings: Vec<String>,
) -> Result<WRResult, WinError> {
    if counts.wins == 0 || counts.losses == 0 {
        return Err(WinError::DegenerateWR { wins: counts.wins, losses: counts.losses });
    }
    let n = ds.len();
    let wr = w / l;
    let log_wr = wr.ln();
    let sigma2 = log_variance(w, l, sigma).max(0.0);
    let se = (sigma2 / n as f64).sqrt();
    let z = log_wr / se;
    Ok(WRResult {
        rule,
        stratified,
        n,
        n_experimental: ds.n_experimental(),
        n_control: ds.n_control(),
        counts,
        win_frac: w,
        loss_frac: l,
        tie_frac: tie,
        wr,
        log_wr,
        se_log_wr: se,
        se_wr: wr * se,
        z,
        p_two_sided: two_sided_p(z),
        ci95: ((log_wr - Z975 * se).exp(), (log_wr + Z975 * se).exp()),
        sigma,
        per_stratum,
        warnings,
    })
}

/// Unstratified win ratio over all n_E·n_Ē pairs.
pub fn wr_unstratified(ds: &Dataset, rule: WinRule) -> Result<WRResult, WinError> {
    require_arms(ds)?;
    let (t, c) = split_arms(ds.subjects().iter());
    let g = group_stats(rule, &t, &c);
    let n = ds.len() as f64;
    let (ae, ac) = (n / (g.n_e as f64).powi(2), n / (g.n_c as f64).powi(2));
    let sigma = (
        ae * g.outer_t[0] + ac * g.outer_c[0],
        ae * g.outer_t[1] + ac * g.outer_c[1],
        ae * g.outer_t[2] + ac * g.outer_c[2],
    );
    let tie = g.counts.ties as f64 / g.counts.n_pairs as f64;
    finish(rule, false, ds, g.counts, g.w, g.l, tie, sigma, Vec::new(), Vec::new())
}

/// Stratified win ratio using the stratum labels carried by the subjects.
///
/// Strata missing one arm contribute no pairs but keep their weight n^(s)/n.
pub fn wr_stratified(ds: &Dataset, rule: WinRule) -> Result<WRResult, WinError> {
    require_arms(ds)?;
    let n = ds.len() as f64;
    let mut counts = PairCounts::default();
    let (mut w, mut l, mut tie) = (0.0, 0.0, 0.0);
    let mut sigma = (0.0, 0.0, 0.0);
    let mut per = Vec::new();
    let mut warnings = Vec::new();
    for (label, members) in strata(ds)? {
        let (t, c) = split_arms(members.iter().copied());
        let g = group_stats(rule, &t, &c);
        let omega = members.len() as f64 / n;
        counts.add(&g.counts);
        if g.n_e == 0 || g.n_c == 0 {
            let missing = if g.n_e == 0 { Arm::Experimental } else { Arm::Control };
            warnings.push(format!("stratum {label} has no {missing} subjects and contributes no pairs"));
        } else {
            w += omega * g.w;
            l += omega * g.l;
            tie += omega * g.counts.ties as f64 / g.counts.n_pairs as f64;
            let (ae, ac) = (omega * omega / (g.n_e as f64).powi(2), omega * omega / (g.n_c as f64).powi(2));
            sigma.0 += n * (ae * g.outer_t[0] + ac * g.outer_c[0]);
            sigma.1 += n * (ae * g.outer_t[1] + ac * g.outer_c[1]);
            sigma.2 += n * (ae * g.outer_t[2] + ac * g.outer_c[2]);
        }
        per.push(StratumSummary {
            label,
            size: members.len(),
            weight: omega,
            win_frac: g.w,
            loss_frac: g.l,
            counts: g.counts,
        });
    }
    if counts.n_pairs == 0 {
        return Err(WinError::AllStrataSingleArm);
    }
    finish(rule, true, ds, counts, w, l, tie, sigma, per, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sidedness {
    TwoSided,
    /// Rejects for large positive z only.
    OneSidedBenefit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldTest {
    pub z: f64,
    pub p: f64,
    pub reject: bool,
}

/// Wald test of log WR = 0. Rejection uses a strict inequality against the
/// normal quantile.
pub fn wald_test(log_wr: f64, se_log_wr: f64, sidedness: Sidedness, alpha: f64) -> WaldTest {
    let z = log_wr / se_log_wr;
    match sidedness {
        Sidedness::TwoSided => {
            let crit = normal_quantile(1.0 - alpha / 2.0);
            WaldTest { z, p: two_sided_p(z), reject: z.abs() > crit }
        }
        Sidedness::OneSidedBenefit => {
            let crit = normal_quantile(1.0 - alpha);
            WaldTest { z, p: normal_cdf(-z), reject: z > crit }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawSubject;

    fn raw(id: &str, treated: bool, times: &[f64], death: Option<f64>, censor: f64, stratum: &str) -> RawSubject {
        RawSubject {
            id: id.into(),
            treated,
            recurrent_times: times.to_vec(),
            death_time: death,
            censor_time: censor,
            stratum: Some(stratum.into()),
            ..Default::default()
        }
    }

    fn toy() -> Dataset {
        Dataset::from_raw(vec![
            raw("t1", true, &[0.5], None, 3.0, "a"),
            raw("t2", true, &[], Some(2.5), 3.0, "a"),
            raw("t3", true, &[0.4, 1.1], None, 2.0, "b"),
            raw("c1", false, &[0.3, 0.8], None, 3.0, "a"),
            raw("c2", false, &[], Some(1.0), 3.0, "b"),
            raw("c3", false, &[1.5], None, 2.5, "b"),
            raw("c4", false, &[2.2], Some(2.6), 3.0, "a"),
        ])
        .unwrap()
    }

    #[test]
    fn wald_boundaries() {
        let t = wald_test(0.0, 0.3, Sidedness::TwoSided, 0.05);
        assert_eq!((t.z, t.p, t.reject), (0.0, 1.0, false));
        let q = normal_quantile(0.975);
        let t = wald_test(q, 1.0, Sidedness::TwoSided, 0.05);
        assert!((t.p - 0.05).abs() < 1e-10);
        assert!(!t.reject);
        assert!(wald_test(q + 1e-9, 1.0, Sidedness::TwoSided, 0.05).reject);
        assert!(!wald_test(1.6, 1.0, Sidedness::OneSidedBenefit, 0.05).reject);
        assert!(wald_test(1.7, 1.0, Sidedness::OneSidedBenefit, 0.05).reject);
    }

    #[test]
    fn single_stratum_matches_unstratified() {
        let ds = toy().map_subjects(|s| s.clone().with_stratum(Some("all".into())));
        let u = wr_unstratified(&ds, WinRule::Lwr).unwrap();
        let s = wr_stratified(&ds, WinRule::Lwr).unwrap();
        assert!((u.wr - s.wr).abs() < 1e-14);
        assert!((u.se_log_wr - s.se_log_wr).abs() < 1e-14);
    }

    #[test]
    fn arm_swap_reciprocity() {
        let ds = toy();
        let a = wr_unstratified(&ds, WinRule::Lwr).unwrap();
        let b = wr_unstratified(&ds.swapped_arms(), WinRule::Lwr).unwrap();
        assert!((a.wr * b.wr - 1.0).abs() < 1e-12);
        assert!((a.se_log_wr - b.se_log_wr).abs() < 1e-12);
    }

    #[test]
    fn single_arm_stratum_warns() {
        let mut raws: Vec<RawSubject> = toy().subjects().iter().map(|s| s.to_raw()).collect();
        raws.push(raw("c9", false, &[], None, 3.0, "z"));
        let ds = Dataset::from_raw(raws).unwrap();
        let r = wr_stratified(&ds, WinRule::Lwr).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.per_stratum.last().unwrap().weight, 1.0 / 8.0);
    }
}
