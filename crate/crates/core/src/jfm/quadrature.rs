//! Generalized Gauss–Laguerre rules and the frailty integral
//! `∫₀^∞ ω^{a−1} exp(−bω − cω^α) dω`.

use statrs::function::gamma::{digamma, ln_gamma};

/// Nodes and log-weights for the weight function `y^γ e^{−y}` on (0, ∞).
#[derive(Debug, Clone)]
pub struct LaguerreRule {
    pub gamma: f64,
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl LaguerreRule {
    /// Golub–Welsch: eigen-decomposition of the Jacobi matrix, tracking only
    /// the first component of each eigenvector.
    pub fn new(n: usize, gamma: f64) -> Self {
        assert!(n >= 1 && gamma > -1.0);
        let mut d: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + gamma + 1.0).collect();
        // e[k] couples k and k+1
        let mut e: Vec<f64> = (1..n).map(|k| (k as f64 * (k as f64 + gamma)).sqrt()).collect();
        e.push(0.0);
        let mut z = vec![0.0; n];
        z[0] = 1.0;
        tridiagonal_ql(&mut d, &mut e, &mut z);

        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
        let log_mu0 = ln_gamma(gamma + 1.0);
        let nodes = idx.iter().map(|&i| d[i]).collect();
        let log_weights = idx.iter().map(|&i| log_mu0 + 2.0 * z[i].abs().ln()).collect();
        LaguerreRule { gamma, nodes, log_weights }
    }
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix.
/// `z` is the first row of the accumulated rotation matrix.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], z: &mut [f64]) {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
}

/// Value and partial derivatives of `log ∫ ω^{a−1} exp(−bω − cω^α) dω`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrailtyIntegral {
    pub log_value: f64,
    /// ∂/∂a = E[log ω]
    pub d_a: f64,
    /// ∂/∂b = −E[ω]
    pub d_b: f64,
    /// ∂/∂c = −E[ω^α]
    pub d_c: f64,
    /// ∂/∂α with a held fixed = −c E[ω^α log ω]
    pub d_alpha: f64,
}

/// Closed form for α = 1: Γ(a)/(b+c)^a.
pub fn integral_closed_form(a: f64, b: f64, c: f64) -> FrailtyIntegral {
    let s = b + c;
    let ls = s.ln();
    let m = a / s;
    FrailtyIntegral {
        log_value: ln_gamma(a) - a * ls,
        d_a: digamma(a) - ls,
        d_b: -m,
        d_c: -m,
        // E[ω log ω] under Gamma(a, rate s)
        d_alpha: -c * m * (digamma(a + 1.0) - ls),
    }
}

/// Scale matching the rule's peak `y = a − 1` to the integrand's mode.
fn matching_scale(a: f64, b: f64, c: f64, alpha: f64) -> f64 {
    if c == 0.0 || alpha == 1.0 {
        return b + c;
    }
    // mode of (a−1) log ω − bω − cω^α, by Newton in log ω
    let mut x = if a > 1.0 { ((a - 1.0) / (b + c)).ln() } else { (a / (b + c)).ln() };
    let target = (a - 1.0).max(0.5 * a);
    for _ in 0..50 {
        let w = x.exp();
        let cw = c * alpha * w.powf(alpha);
        let f = target - b * w - cw;
        let fp = -b * w - alpha * cw;
        let step = f / fp;
        x -= step.clamp(-2.0, 2.0);
        if step.abs() < 1e-12 {
            break;
        }
    }
    target / x.exp()
}

/// Quadrature evaluation with a rule whose γ equals `a − 1`.
///
/// With `ω = y/B` the integrand is `B^{−a} y^{a−1} e^{−y} g(ω)` where
/// `g(ω) = exp((B − b)ω − cω^α)`. `E[log ω]` is split into its exact value
/// under the Gamma(a, B) reference, `ψ(a) − log B`, plus a quadrature of
/// `(g − 1) log ω`, which vanishes at the origin; the direct quadrature of
/// `log ω` converges slowly because of the singularity there.
pub fn integral_quadrature(rule: &LaguerreRule, a: f64, b: f64, c: f64, alpha: f64) -> FrailtyIntegral {
    debug_assert!((rule.gamma - (a - 1.0)).abs() <= 1e-12 * a.max(1.0));
    let big_b = matching_scale(a, b, c, alpha);
    let log_big_b = big_b.ln();
    let n = rule.nodes.len();
    let mut expo = Vec::with_capacity(n);
    let mut max = f64::NEG_INFINITY;
    for k in 0..n {
        let omega = rule.nodes[k] / big_b;
        let u = (big_b - b) * omega - c * omega.powf(alpha);
        max = max.max(rule.log_weights[k] + u);
        expo.push(u);
    }
    let (mut s0, mut s_glog, mut s_w, mut s_wa, mut s_wal) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        let q = (rule.log_weights[k] - max).exp();
        let p = q * expo[k].exp();
        let omega = rule.nodes[k] / big_b;
        let lo = omega.ln();
        let wa = omega.powf(alpha);
        s0 += p;
        s_glog += q * expo[k].exp_m1() * lo;
        s_w += p * omega;
        s_wa += p * wa;
        s_wal += p * wa * lo;
    }
    let ref_mass = (ln_gamma(a) - max).exp();
    FrailtyIntegral {
        log_value: max + s0.ln() - a * log_big_b,
        d_a: ((digamma(a) - log_big_b) * ref_mass + s_glog) / s0,
        d_b: -s_w / s0,
        d_c: -s_wa / s0,
        d_alpha: -c * s_wal / s0,
    }
}
