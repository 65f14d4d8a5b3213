//! Recurrent-event win ratios, gamma-frailty joint models for recurrent and
//! terminal events, and the trial design calculators built on them.

pub mod data;
pub mod design;
pub mod dist;
pub mod inference;
pub mod jfm;
pub mod metrics;
pub mod rules;
pub mod sim;
pub mod study;

pub use data::{Arm, DataError, Dataset, RawSubject, SubjectHistory};
pub use inference::{wald_test, wr_stratified, wr_unstratified, Sidedness, WRResult};
pub use rules::{count_wins, evaluate, shared_horizon, PairCounts, PairOutcome, WinError, WinRule};
