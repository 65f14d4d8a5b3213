//! Distribution helpers: normal and chi-square tails, and the noncentral
//! chi-square CDF by Poisson mixing.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::gamma_lr;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided normal p-value, computed from the lower tail to keep precision.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * normal_cdf(-z.abs())).min(1.0)
}

pub fn chisq_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(df).expect("positive df").cdf(x)
}

pub fn chisq_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).expect("positive df").sf(x)
}

pub fn chisq_quantile(p: f64, df: f64) -> f64 {
    ChiSquared::new(df).expect("positive df").inverse_cdf(p)
}

/// CDF of a noncentral chi-square with `df` degrees of freedom.
///
/// Sums the Poisson(ncp/2) mixture of central chi-squares outward from the
/// Poisson mode until the remaining Poisson mass drops below 1e-12 relative
/// to what has been accumulated.
pub fn noncentral_chisq_cdf(x: f64, df: f64, ncp: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if ncp <= 0.0 {
        return chisq_cdf(x, df);
    }
    let lam = 0.5 * ncp;
    let half_x = 0.5 * x;
    let mode = lam.floor() as i64;
    let log_pois = |k: i64| -> f64 {
        let kf = k as f64;
        -lam + kf * lam.ln() - statrs::function::gamma::ln_gamma(kf + 1.0)
    };
    let term = |k: i64| gamma_lr(0.5 * df + k as f64, half_x);

    let mut total = 0.0;
    let mut mass = 0.0;
    // upward from the mode
    let mut k = mode;
    loop {
        let w = log_pois(k).exp();
        total += w * term(k);
        mass += w;
        if (1.0 - mass) < 1e-12 || (w < 1e-16 * mass.max(1e-300) && k > mode + 10) {
            break;
        }
        k += 1;
        if k > mode + 100_000 {
            break;
        }
    }
    // downward from the mode
    let mut k = mode - 1;
    while k >= 0 {
        let w = log_pois(k).exp();
        total += w * term(k);
        mass += w;
        if w < 1e-16 * mass {
            break;
        }
        k -= 1;
    }
    total.clamp(0.0, 1.0)
}
