//! Win functions for treated-control pairs and exhaustive pair counting.
//!
//! A missing death is an infinite death time. All comparisons are strict and
//! recurrences count towards `N(τ)` when they happen at or before `τ`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Arm, Dataset, SubjectHistory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WinError {
    #[error("arm {0} has no subjects")]
    EmptyArm(Arm),
    #[error("horizon {given} differs from min follow-up {expected}")]
    HorizonMismatch { given: f64, expected: f64 },
    #[error("win ratio undefined: {wins} wins and {losses} losses")]
    DegenerateWR { wins: u64, losses: u64 },
    #[error("no stratum contains both arms")]
    AllStrataSingleArm,
    #[error("subject {0} has no stratum label")]
    MissingStratum(String),
    #[error("unknown win rule {0:?}")]
    UnknownRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WinRule {
    Swr,
    Nwr,
    Fwr,
    Lwr,
}

impl WinRule {
    pub const ALL: [WinRule; 4] = [WinRule::Swr, WinRule::Nwr, WinRule::Fwr, WinRule::Lwr];
}

impl fmt::Display for WinRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WinRule::Swr => "swr",
            WinRule::Nwr => "nwr",
            WinRule::Fwr => "fwr",
            WinRule::Lwr => "lwr",
        };
        f.write_str(s)
    }
}

impl FromStr for WinRule {
    type Err = WinError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "swr" => Ok(WinRule::Swr),
            "nwr" => Ok(WinRule::Nwr),
            "fwr" => Ok(WinRule::Fwr),
            "lwr" => Ok(WinRule::Lwr),
            _ => Err(WinError::UnknownRule(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairOutcome {
    TreatedWin,
    ControlWin,
    Tie,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub n_pairs: u64,
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
}

impl PairCounts {
    pub fn add(&mut self, other: &PairCounts) {
        self.n_pairs += other.n_pairs;
        self.wins += other.wins;
        self.losses += other.losses;
        self.ties += other.ties;
    }
}

/// τ = min(X_e, X_ē).
pub fn shared_horizon(e: &SubjectHistory, c: &SubjectHistory) -> f64 {
    e.follow_up().min(c.follow_up())
}

/// Evaluate `rule` on the pair, checking that `tau` is the shared horizon.
pub fn evaluate(
    rule: WinRule,
    e: &SubjectHistory,
    c: &SubjectHistory,
    tau: f64,
) -> Result<PairOutcome, WinError> {
    let expected = shared_horizon(e, c);
    if tau != expected {
        return Err(WinError::HorizonMismatch { given: tau, expected });
    }
    Ok(decode(compare(rule, &Compact::of(e), &Compact::of(c))))
}

/// Outcome at the shared horizon without the horizon check.
pub fn outcome(rule: WinRule, e: &SubjectHistory, c: &SubjectHistory) -> PairOutcome {
    decode(compare(rule, &Compact::of(e), &Compact::of(c)))
}

/// Outcome at an arbitrary horizon. Used to probe horizon stability.
pub fn evaluate_at(rule: WinRule, e: &SubjectHistory, c: &SubjectHistory, tau: f64) -> PairOutcome {
    decode(compare_at(rule, &Compact::of(e), &Compact::of(c), tau))
}

fn decode(v: i8) -> PairOutcome {
    match v {
        1 => PairOutcome::TreatedWin,
        -1 => PairOutcome::ControlWin,
        _ => PairOutcome::Tie,
    }
}

/// Borrowed view of what a comparison needs.
#[derive(Clone, Copy)]
pub(crate) struct Compact<'a> {
    follow_up: f64,
    death: f64,
    times: &'a [f64],
}

impl<'a> Compact<'a> {
    pub(crate) fn of(s: &'a SubjectHistory) -> Self {
        Compact { follow_up: s.follow_up(), death: s.death_or_inf(), times: s.recurrent_times() }
    }

    #[inline]
    fn count(&self, tau: f64) -> usize {
        // small slices dominate, a linear scan from the back is cheapest
        let mut n = self.times.len();
        while n > 0 && self.times[n - 1] > tau {
            n -= 1;
        }
        n
    }

    #[inline]
    fn first(&self) -> f64 {
        self.times.first().copied().unwrap_or(f64::INFINITY)
    }
}

#[inline]
pub(crate) fn compare(rule: WinRule, e: &Compact, c: &Compact) -> i8 {
    compare_at(rule, e, c, e.follow_up.min(c.follow_up))
}

/// +1 treated win, -1 control win, 0 tie.
#[inline]
pub(crate) fn compare_at(rule: WinRule, e: &Compact, c: &Compact, tau: f64) -> i8 {
    if c.death < e.death && c.death <= tau {
        return 1;
    }
    if e.death < c.death && e.death <= tau {
        return -1;
    }
    if !(e.death > tau && c.death > tau) {
        return 0;
    }
    if rule == WinRule::Swr {
        let (te, tc) = (e.first(), c.first());
        if tc < te && tc <= tau {
            return 1;
        }
        if te < tc && te <= tau {
            return -1;
        }
        return 0;
    }
    let ne = e.count(tau);
    let nc = c.count(tau);
    if ne < nc {
        return 1;
    }
    if nc < ne {
        return -1;
    }
    if ne == 0 {
        return 0;
    }
    let (te, tc) = match rule {
        WinRule::Fwr => (e.times[0], c.times[0]),
        WinRule::Lwr => (e.times[ne - 1], c.times[nc - 1]),
        _ => return 0,
    };
    if tc < te {
        1
    } else if te < tc {
        -1
    } else {
        0
    }
}

/// Pair counts plus per-subject win and loss tallies.
///
/// `treated[i]` holds (wins, losses) of treated subject i over all controls;
/// `control[j]` holds (wins, losses) from the treated perspective over all
/// treated subjects, so `control[j].0` counts pairs control j lost.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTally {
    pub counts: PairCounts,
    pub treated: Vec<(u64, u64)>,
    pub control: Vec<(u64, u64)>,
}

const BLOCK: usize = 64;

/// Enumerate all treated-control pairs of the given slices.
pub fn tally_pairs(rule: WinRule, treated: &[&SubjectHistory], control: &[&SubjectHistory]) -> PairTally {
    let tc: Vec<Compact> = treated.iter().map(|s| Compact::of(s)).collect();
    let cc: Vec<Compact> = control.iter().map(|s| Compact::of(s)).collect();
    let nc = cc.len();

    let (treated_rows, control_cols) = tc
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut rows = Vec::with_capacity(chunk.len());
            let mut cols = vec![(0u64, 0u64); nc];
            for e in chunk {
                let (mut w, mut l) = (0u64, 0u64);
                for (j, c) in cc.iter().enumerate() {
                    match compare(rule, e, c) {
                        1 => {
                            w += 1;
                            cols[j].0 += 1;
                        }
                        -1 => {
                            l += 1;
                            cols[j].1 += 1;
                        }
                        _ => {}
                    }
                }
                rows.push((w, l));
            }
            (rows, cols)
        })
        .reduce(
            || (Vec::new(), vec![(0u64, 0u64); nc]),
            |(mut ra, mut ca), (rb, cb)| {
                ra.extend(rb);
                for (a, b) in ca.iter_mut().zip(cb) {
                    a.0 += b.0;
                    a.1 += b.1;
                }
                (ra, ca)
            },
        );

    let wins: u64 = treated_rows.iter().map(|r| r.0).sum();
    let losses: u64 = treated_rows.iter().map(|r| r.1).sum();
    let n_pairs = (tc.len() * nc) as u64;
    PairTally {
        counts: PairCounts { n_pairs, wins, losses, ties: n_pairs - wins - losses },
        treated: treated_rows,
        control: control_cols,
    }
}

/// Per-stratum counts for a stratified comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumCounts {
    pub label: String,
    pub size: usize,
    pub counts: PairCounts,
}

/// Exhaustive win/loss/tie counts over all treated-control pairs, or over
/// within-stratum pairs when `stratified` is set.
pub fn count_wins(
    ds: &Dataset,
    rule: WinRule,
    stratified: bool,
) -> Result<(PairCounts, Vec<StratumCounts>), WinError> {
    if !stratified {
        require_arms(ds)?;
        let (t, c) = split_arms(ds.subjects().iter());
        return Ok((tally_pairs(rule, &t, &c).counts, Vec::new()));
    }
    let groups = strata(ds)?;
    let mut total = PairCounts::default();
    let mut per = Vec::new();
    for (label, members) in groups {
        let (t, c) = split_arms(members.iter().copied());
        let counts = tally_pairs(rule, &t, &c).counts;
        total.add(&counts);
        per.push(StratumCounts { label, size: members.len(), counts });
    }
    if per.iter().all(|s| s.counts.n_pairs == 0) {
        return Err(WinError::AllStrataSingleArm);
    }
    Ok((total, per))
}

pub(crate) fn require_arms(ds: &Dataset) -> Result<(), WinError> {
    for arm in [Arm::Experimental, Arm::Control] {
        if ds.n_arm(arm) == 0 {
            return Err(WinError::EmptyArm(arm));
        }
    }
    Ok(())
}

pub(crate) fn split_arms<'a>(
    it: impl Iterator<Item = &'a SubjectHistory>,
) -> (Vec<&'a SubjectHistory>, Vec<&'a SubjectHistory>) {
    it.partition(|s| s.arm() == Arm::Experimental)
}

/// Subjects grouped by stratum label, labels in sorted order.
pub(crate) fn strata(ds: &Dataset) -> Result<Vec<(String, Vec<&SubjectHistory>)>, WinError> {
    let mut map: std::collections::BTreeMap<String, Vec<&SubjectHistory>> = Default::default();
    for s in ds.subjects() {
        let label = s.stratum().ok_or_else(|| WinError::MissingStratum(s.id().to_string()))?;
        map.entry(label.to_string()).or_default().push(s);
    }
    Ok(map.into_iter().collect())
}
