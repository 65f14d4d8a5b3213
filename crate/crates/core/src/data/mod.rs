//! Subject-level event histories and the validated [`Dataset`] container.
//!
//! Times are plain `f64` in whatever unit the caller uses. A subject is
//! observed on `(0, follow_up]`, with `follow_up = min(censor_time, death_time)`.

mod csv_io;

pub use csv_io::{
    export_counting_process, export_wide, load_counting_process, load_wide, ColumnMap,
};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("subject {id}: recurrent times are not strictly increasing")]
    NonMonotoneTimes { id: String },
    #[error("subject {id}: recurrent event at {time} after follow-up {follow_up}")]
    EventAfterFollowUp { id: String, time: f64, follow_up: f64 },
    #[error("subject {id}: non-positive or non-finite time {time}")]
    NegativeTime { id: String, time: f64 },
    #[error("subject {id}: death time {death} after censoring time {censor}")]
    DeathAfterCensor { id: String, death: f64, censor: f64 },
    #[error("subject {id}: follow-up {given} inconsistent with min(censor, death) = {expected}")]
    FollowUpMismatch { id: String, given: f64, expected: f64 },
    #[error("duplicate subject id {0}")]
    DuplicateId(String),
    #[error("subject {id}: gap or overlap between intervals at t = {at}")]
    GapOrOverlapInIntervals { id: String, at: f64 },
    #[error("subject {id}: empty or reversed interval ({start}, {stop}]")]
    EmptyInterval { id: String, start: f64, stop: f64 },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("subject {id}: death flagged on more than one row or before the last row")]
    MultipleDeathRows { id: String },
    #[error("line {line}: cannot parse `{value}` in column `{column}`")]
    Parse { line: usize, column: String, value: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("arm `{0}` has no subjects")]
    EmptyArm(Arm),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Experimental,
}

impl Arm {
    pub fn from_indicator(trt: bool) -> Self {
        if trt {
            Arm::Experimental
        } else {
            Arm::Control
        }
    }

    pub fn indicator(self) -> f64 {
        match self {
            Arm::Control => 0.0,
            Arm::Experimental => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Arm::Control => Arm::Experimental,
            Arm::Experimental => Arm::Control,
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arm::Control => f.write_str("control"),
            Arm::Experimental => f.write_str("experimental"),
        }
    }
}

/// Unvalidated subject record, as read from a file or produced by a generator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawSubject {
    pub id: String,
    pub treated: bool,
    pub recurrent_times: Vec<f64>,
    pub death_time: Option<f64>,
    pub censor_time: f64,
    pub covariates: BTreeMap<String, f64>,
    pub stratum: Option<String>,
}

/// One subject's observed recurrent/terminal event history.
///
/// Construct through [`validate_history`]; fields are read-only afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectHistory {
    id: String,
    arm: Arm,
    recurrent_times: Vec<f64>,
    death_time: Option<f64>,
    censor_time: f64,
    follow_up: f64,
    covariates: BTreeMap<String, f64>,
    stratum: Option<String>,
}

fn check_time(id: &str, t: f64) -> Result<(), DataError> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(DataError::NegativeTime { id: id.to_string(), time: t })
    }
}

/// Validate a raw record against the event-history invariants.
pub fn validate_history(raw: RawSubject) -> Result<SubjectHistory, DataError> {
    let id = raw.id;
    check_time(&id, raw.censor_time)?;
    if let Some(d) = raw.death_time {
        check_time(&id, d)?;
        if d > raw.censor_time {
            return Err(DataError::DeathAfterCensor { id, death: d, censor: raw.censor_time });
        }
    }
    let follow_up = raw.death_time.unwrap_or(raw.censor_time);
    for &t in &raw.recurrent_times {
        check_time(&id, t)?;
    }
    if raw.recurrent_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DataError::NonMonotoneTimes { id });
    }
    if let Some(&last) = raw.recurrent_times.last() {
        if last > follow_up {
            return Err(DataError::EventAfterFollowUp { id, time: last, follow_up });
        }
    }
    Ok(SubjectHistory {
        id,
        arm: Arm::from_indicator(raw.treated),
        recurrent_times: raw.recurrent_times,
        death_time: raw.death_time,
        censor_time: raw.censor_time,
        follow_up,
        covariates: raw.covariates,
        stratum: raw.stratum,
    })
}

impl SubjectHistory {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn recurrent_times(&self) -> &[f64] {
        &self.recurrent_times
    }

    pub fn death_time(&self) -> Option<f64> {
        self.death_time
    }

    pub fn censor_time(&self) -> f64 {
        self.censor_time
    }

    pub fn follow_up(&self) -> f64 {
        self.follow_up
    }

    pub fn died(&self) -> bool {
        self.death_time.is_some()
    }

    pub fn covariates(&self) -> &BTreeMap<String, f64> {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<f64> {
        self.covariates.get(name).copied()
    }

    pub fn stratum(&self) -> Option<&str> {
        self.stratum.as_deref()
    }

    pub fn n_recurrences(&self) -> usize {
        self.recurrent_times.len()
    }

    /// N_H(t): number of recurrences at or before `t`.
    pub fn recurrences_by(&self, t: f64) -> usize {
        self.recurrent_times.partition_point(|&x| x <= t)
    }

    /// Death time, or +inf when no death was observed.
    pub fn death_or_inf(&self) -> f64 {
        self.death_time.unwrap_or(f64::INFINITY)
    }

    pub fn to_raw(&self) -> RawSubject {
        RawSubject {
            id: self.id.clone(),
            treated: self.arm == Arm::Experimental,
            recurrent_times: self.recurrent_times.clone(),
            death_time: self.death_time,
            censor_time: self.censor_time,
            covariates: self.covariates.clone(),
            stratum: self.stratum.clone(),
        }
    }

    /// Projection onto what a counting-process file can carry: the censoring
    /// time of a subject who died is not observable and becomes the death time.
    pub fn observed(&self) -> SubjectHistory {
        let mut s = self.clone();
        s.censor_time = s.follow_up;
        s
    }

    pub fn with_arm(mut self, arm: Arm) -> Self {
        self.arm = arm;
        self
    }

    pub fn with_stratum(mut self, stratum: Option<String>) -> Self {
        self.stratum = stratum;
        self
    }

    /// Multiply every time by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> SubjectHistory {
        let mut s = self.clone();
        s.recurrent_times.iter_mut().for_each(|t| *t *= factor);
        s.death_time = s.death_time.map(|d| d * factor);
        s.censor_time *= factor;
        s.follow_up *= factor;
        s
    }

    /// Keep at most the first `k` recurrences.
    pub fn truncated(&self, k: usize) -> SubjectHistory {
        let mut s = self.clone();
        s.recurrent_times.truncate(k);
        s
    }
}

/// Validated collection of subjects; immutable once built.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    subjects: Vec<SubjectHistory>,
}

impl Dataset {
    pub fn new(subjects: Vec<SubjectHistory>) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(subjects.len());
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(DataError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Dataset { subjects })
    }

    pub fn from_raw(raw: impl IntoIterator<Item = RawSubject>) -> Result<Self, DataError> {
        let subjects = raw.into_iter().map(validate_history).collect::<Result<Vec<_>, _>>()?;
        Dataset::new(subjects)
    }

    pub fn subjects(&self) -> &[SubjectHistory] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_arm(&self, arm: Arm) -> usize {
        self.subjects.iter().filter(|s| s.arm == arm).count()
    }

    pub fn n_experimental(&self) -> usize {
        self.n_arm(Arm::Experimental)
    }

    pub fn n_control(&self) -> usize {
        self.n_arm(Arm::Control)
    }

    pub fn arm(&self, arm: Arm) -> impl Iterator<Item = &SubjectHistory> {
        self.subjects.iter().filter(move |s| s.arm == arm)
    }

    /// Stratum label -> subject count, over subjects that carry a label.
    pub fn stratum_table(&self) -> BTreeMap<String, usize> {
        let mut table = BTreeMap::new();
        for s in &self.subjects {
            if let Some(label) = &s.stratum {
                *table.entry(label.clone()).or_insert(0) += 1;
            }
        }
        table
    }

    /// Union of covariate names over all subjects.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .subjects
            .iter()
            .flat_map(|s| s.covariates.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        names.sort();
        names
    }

    /// Relabel every subject's stratum from a covariate value (e.g. `z2` -> "0"/"1").
    pub fn stratified_by_covariate(&self, name: &str) -> Result<Dataset, DataError> {
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let v = s.covariate(name).ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
                Ok(s.clone().with_stratum(Some(format_value(v))))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(Dataset { subjects })
    }

    pub fn map_subjects(&self, f: impl FnMut(&SubjectHistory) -> SubjectHistory) -> Dataset {
        Dataset { subjects: self.subjects.iter().map(f).collect() }
    }

    pub fn observed(&self) -> Dataset {
        self.map_subjects(SubjectHistory::observed)
    }

    pub fn swapped_arms(&self) -> Dataset {
        self.map_subjects(|s| s.clone().with_arm(s.arm.flipped()))
    }

    pub fn require_both_arms(&self) -> Result<(), DataError> {
        for arm in [Arm::Experimental, Arm::Control] {
            if self.n_arm(arm) == 0 {
                return Err(DataError::EmptyArm(arm));
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> DatasetSummary {
        let n = self.len().max(1) as f64;
        let deaths = self.subjects.iter().filter(|s| s.died()).count();
        let recurrences: usize = self.subjects.iter().map(|s| s.n_recurrences()).sum();
        let zero_event =
            self.subjects.iter().filter(|s| !s.died() && s.n_recurrences() == 0).count();
        DatasetSummary {
            n_subjects: self.len(),
            n_experimental: self.n_experimental(),
            n_control: self.n_control(),
            death_rate: deaths as f64 / n,
            recurrences_per_subject: recurrences as f64 / n,
            zero_event_rate: zero_event as f64 / n,
            max_recurrences: self.subjects.iter().map(|s| s.n_recurrences()).max().unwrap_or(0),
        }
    }
}

/// Descriptive summary matching the usual simulation data tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n_subjects: usize,
    pub n_experimental: usize,
    pub n_control: usize,
    pub death_rate: f64,
    pub recurrences_per_subject: f64,
    pub zero_event_rate: f64,
    pub max_recurrences: usize,
}

pub(crate) fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
