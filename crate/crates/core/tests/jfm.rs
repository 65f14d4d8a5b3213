use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recwin::jfm::quadrature::{integral_quadrature, LaguerreRule};
use recwin::jfm::*;
use recwin::sim::{benchmark_scenario, simulate_dataset};
use recwin::{Dataset, RawSubject};
use statrs::function::gamma::ln_gamma;

/// log ∫₀^∞ ω^{a−1} exp(−bω − cω^α) dω by adaptive Simpson on ω = m·eˣ.
fn oracle_log_integral(a: f64, b: f64, c: f64, alpha: f64) -> f64 {
    let logf = |w: f64| (a - 1.0) * w.ln() - b * w - c * w.powf(alpha);
    // crude mode search on a log grid
    let mut best = (f64::NEG_INFINITY, 1.0);
    for k in -4000..=4000 {
        let w = (k as f64 / 200.0).exp();
        let v = logf(w) + w.ln();
        if v > best.0 {
            best = (v, w);
        }
    }
    let (peak, m) = best;
    let g = |x: f64| {
        let w = m * x.exp();
        (logf(w) + w.ln() - peak).exp()
    };
    fn simpson(g: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (g(lm), g(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        simpson(g, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + simpson(g, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let mut total = 0.0;
    for k in 0..720 {
        let lo = -60.0 + 0.1 * k as f64;
        let hi = lo + 0.1;
        let (fa, fm, fb) = (g(lo), g(0.5 * (lo + hi)), g(hi));
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        total += simpson(&g, lo, hi, fa, fm, fb, whole, 1e-16, 30);
    }
    peak + total.ln()
}

fn random_subject(rng: &mut ChaCha8Rng, id: usize, max_events: usize) -> RawSubject {
    let censor = rng.random_range(0.5..4.0);
    let n = rng.random_range(0..=max_events);
    let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..censor * 0.95)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let death = rng.random_bool(0.4).then(|| censor * rng.random_range(0.96..0.999));
    RawSubject {
        id: id.to_string(),
        treated: rng.random_bool(0.5),
        recurrent_times: times,
        death_time: death,
        censor_time: censor,
        covariates: [("z2".to_string(), if rng.random_bool(0.5) { 1.0 } else { 0.0 })].into_iter().collect(),
        stratum: None,
    }
}

fn full_spec() -> JfmSpec {
    JfmSpec::default().with_covariates(&["trt", "z2"], &["trt"])
}

#[test]
fn quadrature_matches_adaptive_oracle_at_alpha_1_3() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let a = rng.random_range(0.6..25.0);
        let b = rng.random_range(0.3..20.0);
        let c = rng.random_range(0.0..5.0);
        let rule = LaguerreRule::new(50, a - 1.0);
        let q = integral_quadrature(&rule, a, b, c, 1.3).log_value;
        let o = oracle_log_integral(a, b, c, 1.3);
        // relative error of the integral itself
        assert!((q - o).abs() < 1e-6, "a {a} b {b} c {c}: {q} vs {o}");
    }
}

#[test]
fn one_subject_loglik_matches_oracle_at_alpha_1_3() {
    let ds = Dataset::from_raw([RawSubject {
        id: "a".into(),
        recurrent_times: vec![0.3, 0.9, 1.4],
        death_time: Some(2.1),
        censor_time: 3.0,
        ..Default::default()
    }])
    .unwrap();
    let mut spec = JfmSpec::default().with_covariates(&[], &[]);
    spec.recurrent_baseline = BaselineFamily::Exponential;
    spec.terminal_baseline = BaselineFamily::Exponential;
    spec.alpha = AlphaSpec::Estimated;
    let (theta, alpha, r, l) = (0.6f64, 1.3f64, 1.4f64, 0.5f64);
    let p = vec![theta.ln(), alpha, r.ln(), l.ln()];
    let got = marginal_loglik(&p, &ds, &spec, 50).unwrap();
    let kappa = 1.0 / theta;
    let t = 2.1;
    let want = 3.0 * r.ln() + l.ln() - ln_gamma(kappa) + kappa * kappa.ln()
        + oracle_log_integral(3.0 + alpha + kappa, kappa + r * t, l * t, alpha);
    assert!((got - want).abs() < 1e-6 * want.abs(), "{got} vs {want}");
}

#[test]
fn closed_form_equals_quadrature_per_subject() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let subjects: Vec<RawSubject> = (0..1000).map(|i| random_subject(&mut rng, i, 12)).collect();
    let ds = Dataset::from_raw(subjects).unwrap();
    let fast = JfmModel::new(&ds, &full_spec()).unwrap();
    let mut est = full_spec();
    est.alpha = AlphaSpec::Estimated;
    let slow = JfmModel::new(&ds, &est).unwrap();
    for theta in [0.08f64, 0.5, 2.0] {
        let p = vec![-0.3, 0.1, -0.2, theta.ln(), 0.2, 0.4, -0.1, 0.8];
        let mut p2 = p.clone();
        p2.insert(4, 1.0);
        let a = fast.subject_logliks(&p, 50).unwrap();
        let b = slow.subject_logliks(&p2, 50).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-8 * x.abs(), "θ {theta}: {x} vs {y}");
        }
    }
}

fn check_gradient(model: &JfmModel, p: &[f64], nodes: usize) {
    let (_, g) = model.loglik_grad(p, nodes).unwrap();
    for k in 0..p.len() {
        let h = 1e-5 * p[k].abs().max(1.0);
        let mut pp = p.to_vec();
        pp[k] += h;
        let up = model.loglik(&pp, nodes).unwrap();
        pp[k] -= 2.0 * h;
        let dn = model.loglik(&pp, nodes).unwrap();
        let num = (up - dn) / (2.0 * h);
        assert!((num - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "param {k}: numeric {num} analytic {}", g[k]);
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let ds = simulate_dataset(&benchmark_scenario(1).with_n(200), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fixed = JfmModel::new(&ds, &full_spec()).unwrap();
    let mut est = full_spec();
    est.alpha = AlphaSpec::Estimated;
    est.terminal_baseline = BaselineFamily::Exponential;
    let estimated = JfmModel::new(&ds, &est).unwrap();
    for _ in 0..10 {
        let mut p: Vec<f64> = fixed.initial();
        for v in p.iter_mut() {
            *v += rng.random_range(-0.4..0.4);
        }
        check_gradient(&fixed, &p, 50);

        let mut q = estimated.initial();
        for v in q.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        check_gradient(&estimated, &q, 32);
    }
}

#[test]
fn quadrature_converges_between_rungs() {
    let ds = simulate_dataset(&benchmark_scenario(1), 2);
    let mut est = full_spec();
    est.alpha = AlphaSpec::Estimated;
    let m = JfmModel::new(&ds, &est).unwrap();
    for alpha in [1.0, 0.8, 1.3] {
        let p = vec![0.7f64.ln(), 0.9f64.ln(), 0.8f64.ln(), 0.5f64.ln(), alpha, 0.0, -(1.5f64.ln()), 0.0, -(0.5f64.ln())];
        let a = m.loglik(&p, 50).unwrap();
        let b = m.loglik(&p, 32).unwrap();
        assert!((a - b).abs() / ds.len() as f64 <= 1e-6, "α {alpha}: {a} vs {b}");
    }
}

#[test]
fn loglik_is_invariant_to_order_and_labels() {
    let ds = simulate_dataset(&benchmark_scenario(1).with_n(300), 4);
    let p = {
        let m = JfmModel::new(&ds, &full_spec()).unwrap();
        let mut p = m.initial();
        p[0] = -0.3;
        p
    };
    let base = marginal_loglik(&p, &ds, &full_spec(), 50).unwrap();
    let mut raw: Vec<RawSubject> = ds.subjects().iter().map(|s| s.to_raw()).collect();
    raw.reverse();
    for (k, r) in raw.iter_mut().enumerate() {
        r.id = format!("subject-{}", 7 * k + 3);
    }
    let shuffled = Dataset::from_raw(raw).unwrap();
    let again = marginal_loglik(&p, &shuffled, &full_spec(), 50).unwrap();
    assert_eq!(base.to_bits(), again.to_bits());
}

#[test]
fn optimum_is_a_local_maximum_within_three_se() {
    let ds = simulate_dataset(&benchmark_scenario(1), 21);
    let fit = fit_jfm(&ds, &full_spec(), &FitOptions::default()).unwrap();
    let model = JfmModel::new(&ds, &full_spec()).unwrap();
    let cov = fit.opt_covariance.as_ref().unwrap();
    for k in 0..fit.opt_params.len() {
        let se = cov[(k, k)].sqrt();
        for sign in [-1.0, 1.0] {
            let mut p = fit.opt_params.clone();
            p[k] += sign * 3.0 * se;
            assert!(model.loglik(&p, 50).unwrap() < fit.loglik, "param {k}");
        }
    }
    for s in fit.ses.as_ref().unwrap() {
        assert!(*s >= 0.0);
    }
}

#[test]
fn hand_computed_wald_statistic() {
    let ds = simulate_dataset(&benchmark_scenario(1), 1);
    let fit = fit_jfm(&ds, &full_spec(), &FitOptions::default()).unwrap();
    let b = fit.estimate("beta_r.trt").unwrap();
    let se = fit.se("beta_r.trt").unwrap();
    let w = wald_univariate(&fit, "beta_r.trt", 0.0).unwrap();
    assert!((w.stat - (b / se).powi(2)).abs() < 1e-12 * w.stat);
    let z = b.abs() / se;
    let p = 2.0 * (1.0 - statrs::function::erf::erf(z / 2f64.sqrt()) * 0.5 - 0.5);
    assert!((w.p - p).abs() < 1e-9, "{} vs {p}", w.p);

    let c = treatment_contrast(&fit).unwrap();
    let j = wald_joint(&fit, &c).unwrap();
    assert_eq!(j.df, 2);
    assert!(j.stat > 0.0 && j.p > 0.0 && j.p < 1.0);
}

#[test]
fn missing_events_are_rejected() {
    let ds = Dataset::from_raw((0..6).map(|i| RawSubject {
        id: i.to_string(),
        treated: i % 2 == 0,
        recurrent_times: vec![0.5],
        death_time: None,
        censor_time: 1.0,
        covariates: [("z2".to_string(), 0.0)].into_iter().collect(),
        stratum: None,
    }))
    .unwrap();
    assert_eq!(fit_jfm(&ds, &full_spec(), &FitOptions::default()).unwrap_err(), JfmError::NoEvents("terminal"));
}
