//! Property tests for the pair rules, the win ratio estimator, CSV
//! round trips and the simulator.

use std::collections::BTreeMap;

use proptest::prelude::*;
use recwin::data::{export_counting_process, export_wide, load_counting_process, load_wide, ColumnMap};
use recwin::jfm::{fit_jfm, FitOptions, JfmSpec};
use recwin::rules::{evaluate, evaluate_at, outcome};
use recwin::sim::{benchmark_scenario, simulate_dataset};
use recwin::{
    count_wins, shared_horizon, wr_stratified, wr_unstratified, Dataset, PairOutcome, RawSubject, SubjectHistory,
    WinRule,
};

const RULES: [WinRule; 4] = [WinRule::Swr, WinRule::Nwr, WinRule::Fwr, WinRule::Lwr];

fn flip(o: PairOutcome) -> PairOutcome {
    match o {
        PairOutcome::TreatedWin => PairOutcome::ControlWin,
        PairOutcome::ControlWin => PairOutcome::TreatedWin,
        PairOutcome::Tie => PairOutcome::Tie,
    }
}

/// Histories on a half-unit grid so that tied times are common.
fn raw_subject() -> impl Strategy<Value = (bool, Vec<u32>, Option<u32>, u32, bool)> {
    (any::<bool>(), prop::collection::btree_set(1u32..20, 0..6), prop::option::of(1u32..24), 1u32..24, any::<bool>())
        .prop_map(|(trt, set, death, censor, z)| (trt, set.into_iter().collect(), death, censor, z))
}

fn build(id: usize, (trt, ticks, death, censor, z): (bool, Vec<u32>, Option<u32>, u32, bool)) -> SubjectHistory {
    let censor = censor.max(death.unwrap_or(0));
    let follow = death.unwrap_or(censor);
    let times: Vec<f64> = ticks.into_iter().filter(|t| *t <= follow).map(|t| t as f64 * 0.5).collect();
    let raw = RawSubject {
        id: format!("s{id}"),
        treated: trt,
        recurrent_times: times,
        death_time: death.map(|d| d as f64 * 0.5),
        censor_time: censor as f64 * 0.5,
        covariates: BTreeMap::from([("z".to_string(), if z { 1.0 } else { 0.0 })]),
        stratum: Some(if z { "b" } else { "a" }.to_string()),
    };
    recwin::data::validate_history(raw).unwrap()
}

fn dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(raw_subject(), 4..40).prop_filter_map("needs both arms", |subjects| {
        let ds = Dataset::new(subjects.into_iter().enumerate().map(|(i, s)| build(i, s)).collect()).unwrap();
        (ds.n_experimental() > 0 && ds.n_control() > 0).then_some(ds)
    })
}

fn pair() -> impl Strategy<Value = (SubjectHistory, SubjectHistory)> {
    (raw_subject(), raw_subject()).prop_map(|(a, b)| (build(0, a), build(1, b)))
}

/// Drop everything after `tau` and censor there.
fn truncate(s: &SubjectHistory, tau: f64) -> SubjectHistory {
    let death = s.death_time().filter(|d| *d <= tau);
    let raw = RawSubject {
        id: s.id().to_string(),
        treated: s.arm().indicator() == 1.0,
        recurrent_times: s.recurrent_times().iter().copied().filter(|t| *t <= tau).collect(),
        death_time: death,
        censor_time: death.unwrap_or(tau).max(tau.min(s.censor_time())),
        covariates: s.covariates().clone(),
        stratum: s.stratum().map(str::to_string),
    };
    recwin::data::validate_history(raw).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn swapping_roles_flips_the_outcome((a, b) in pair()) {
        let tau = shared_horizon(&a, &b);
        for rule in RULES {
            let ab = evaluate(rule, &a, &b, tau).unwrap();
            let ba = evaluate(rule, &b, &a, tau).unwrap();
            prop_assert_eq!(ab, flip(ba));
            prop_assert_eq!(evaluate(rule, &a, &a, shared_horizon(&a, &a)).unwrap(), PairOutcome::Tie);
        }
    }

    #[test]
    fn outcome_depends_only_on_the_shared_window((a, b) in pair()) {
        let tau = shared_horizon(&a, &b);
        let (ta, tb) = (truncate(&a, tau), truncate(&b, tau));
        for rule in RULES {
            let full = outcome(rule, &a, &b);
            prop_assert_eq!(full, evaluate_at(rule, &a, &b, tau));
            prop_assert_eq!(full, outcome(rule, &ta, &tb));
        }
    }

    #[test]
    fn wrong_horizon_is_rejected((a, b) in pair()) {
        let tau = shared_horizon(&a, &b);
        prop_assert!(evaluate(WinRule::Lwr, &a, &b, tau + 0.25).is_err());
    }

    #[test]
    fn pair_counts_are_conserved(ds in dataset()) {
        let n_pairs = (ds.n_experimental() * ds.n_control()) as u64;
        for rule in RULES {
            let (c, _) = count_wins(&ds, rule, false).unwrap();
            prop_assert_eq!(c.n_pairs, n_pairs);
            prop_assert_eq!(c.wins + c.losses + c.ties, n_pairs);
            let Ok((s, strata)) = count_wins(&ds, rule, true) else {
                continue;
            };
            prop_assert_eq!(s.wins + s.losses + s.ties, s.n_pairs);
            prop_assert_eq!(strata.iter().map(|x| x.counts.n_pairs).sum::<u64>(), s.n_pairs);
            prop_assert_eq!(strata.iter().map(|x| x.size).sum::<usize>(), ds.len());
        }
    }

    #[test]
    fn arm_swap_inverts_the_ratio(ds in dataset()) {
        for rule in RULES {
            let (Ok(a), Ok(b)) = (wr_unstratified(&ds, rule), wr_unstratified(&ds.swapped_arms(), rule)) else {
                continue;
            };
            prop_assert!(close(a.wr * b.wr, 1.0, 1e-12));
            prop_assert!(close(a.se_log_wr, b.se_log_wr, 1e-10));
            prop_assert!(close(a.p_two_sided, b.p_two_sided, 1e-9));
            prop_assert_eq!((a.counts.wins, a.counts.losses), (b.counts.losses, b.counts.wins));
        }
    }

    #[test]
    fn time_rescaling_changes_nothing(ds in dataset(), k in 1u32..40) {
        let factor = k as f64 / 8.0;
        let scaled = ds.map_subjects(|s| s.scaled(factor));
        for rule in RULES {
            prop_assert_eq!(count_wins(&ds, rule, true), count_wins(&scaled, rule, true));
            if let (Ok(a), Ok(b)) = (wr_stratified(&ds, rule), wr_stratified(&scaled, rule)) {
                prop_assert_eq!(a.wr, b.wr);
                prop_assert!(close(a.se_log_wr, b.se_log_wr, 1e-12));
            }
        }
    }

    #[test]
    fn sandwich_matrix_is_psd(ds in dataset()) {
        for rule in RULES {
            for res in [wr_unstratified(&ds, rule), wr_stratified(&ds, rule)].into_iter().flatten() {
                let (a, b, c) = res.sigma;
                prop_assert!(a >= 0.0 && c >= 0.0);
                prop_assert!(a * c - b * b >= -1e-12 * (a * c).max(1e-300));
                prop_assert!(res.se_log_wr >= 0.0);
            }
        }
    }

    #[test]
    fn csv_round_trips(ds in dataset()) {
        let map = ColumnMap::default();
        let mut long = Vec::new();
        export_counting_process(&ds, &mut long).unwrap();
        let back = load_counting_process(long.as_slice(), &map).unwrap();
        let mut wide = Vec::new();
        export_wide(&ds, &mut wide).unwrap();
        let back_wide = load_wide(wide.as_slice(), &map).unwrap();
        for other in [&back, &back_wide] {
            prop_assert_eq!(other.len(), ds.len());
            for (x, y) in ds.subjects().iter().zip(other.subjects()) {
                prop_assert_eq!(x.id(), y.id());
                prop_assert_eq!(x.arm(), y.arm());
                prop_assert_eq!(x.recurrent_times(), y.recurrent_times());
                prop_assert_eq!(x.death_time(), y.death_time());
                prop_assert_eq!(x.follow_up(), y.follow_up());
                prop_assert_eq!(x.covariate("z"), y.covariate("z"));
            }
            for rule in RULES {
                prop_assert_eq!(count_wins(&ds, rule, false).unwrap(), count_wins(other, rule, false).unwrap());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulation_is_a_function_of_the_seed(seed in any::<u64>(), k in 1u8..=6) {
        let spec = benchmark_scenario(k).with_n(60);
        let a = simulate_dataset(&spec, seed);
        let b = simulate_dataset(&spec, seed);
        let mut ea = Vec::new();
        let mut eb = Vec::new();
        export_counting_process(&a, &mut ea).unwrap();
        export_counting_process(&b, &mut eb).unwrap();
        prop_assert_eq!(&ea, &eb);
        let mut ec = Vec::new();
        export_counting_process(&simulate_dataset(&spec, seed ^ 1), &mut ec).unwrap();
        prop_assert_ne!(ec, eb);
    }

    #[test]
    fn subject_streams_do_not_depend_on_sample_size(seed in any::<u64>()) {
        let spec = benchmark_scenario(1);
        let small = simulate_dataset(&spec.clone().with_n(20), seed);
        let big = simulate_dataset(&spec.with_n(40), seed);
        // deterministic interleaving keeps the arms of the first 20 aligned
        for (a, b) in small.subjects().iter().zip(big.subjects()) {
            if a.arm() == b.arm() {
                prop_assert_eq!(a.recurrent_times(), b.recurrent_times());
                prop_assert_eq!(a.death_time(), b.death_time());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn jfm_covariance_is_symmetric_psd(seed in 0u64..1000) {
        let ds = simulate_dataset(&benchmark_scenario(1).with_n(200), seed);
        let spec = JfmSpec::default().with_covariates(&["trt", "z2"], &["trt"]);
        let fit = fit_jfm(&ds, &spec, &FitOptions::default()).unwrap();
        let cov = fit.covariance.clone().expect("standard errors available");
        prop_assert!((&cov - cov.transpose()).amax() <= 1e-10 * cov.amax());
        let eig = cov.symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|v| *v > 0.0), "{:?}", eig.eigenvalues);
        // refitting gives bit-identical estimates
        let again = fit_jfm(&ds, &spec, &FitOptions::default()).unwrap();
        prop_assert_eq!(&fit.estimates, &again.estimates);
    }
}
