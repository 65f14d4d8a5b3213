//! BFGS maximisation with a backtracking Armijo line search.

/// Stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Sup-norm of the gradient.
    pub grad_tol: f64,
    /// Largest |Δx_i| / max(1, |x_i|) over an accepted step.
    pub step_tol: f64,
    /// Cap on the Euclidean length of a single step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 100, grad_tol: 1e-5, step_tol: 1e-8, max_step: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl BfgsResult {
    pub fn grad_norm(&self) -> f64 {
        sup_norm(&self.grad)
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximise `f`, which returns the value and gradient. Errors from `f` at
/// the starting point are returned; during the line search they count as
/// rejected trial points.
pub fn maximize<E>(
    f: impl Fn(&[f64]) -> Result<(f64, Vec<f64>), E>,
    x0: &[f64],
    opts: &BfgsOptions,
) -> Result<BfgsResult, E> {
    let n = x0.len();
    let mut x = x0.to_vec();
    // work with the negated objective
    let (v, g) = f(&x)?;
    let mut fx = -v;
    let mut gx: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut h = identity(n, 1.0 / sup_norm(&gx).max(1.0));
    let mut fresh = true;

    for iter in 0..opts.max_iter {
        if sup_norm(&gx) < opts.grad_tol {
            return Ok(done(x, fx, gx, iter, true));
        }
        let mut d = mat_vec(&h, &gx).into_iter().map(|v| -v).collect::<Vec<_>>();
        let mut slope = dot(&d, &gx);
        if slope >= 0.0 {
            // lost descent: restart from a scaled steepest descent direction
            h = identity(n, 1.0 / sup_norm(&gx).max(1.0));
            fresh = true;
            d = gx.iter().map(|v| -v * h[0]).collect();
            slope = dot(&d, &gx);
        }
        let len = dot(&d, &d).sqrt();
        if len > opts.max_step {
            let s = opts.max_step / len;
            d.iter_mut().for_each(|v| *v *= s);
            slope *= s;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Ok((v, g)) = f(&trial) {
                let ft = -v;
                if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft, g.iter().map(|v| -v).collect::<Vec<f64>>()));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if fresh {
                return Ok(done(x, fx, gx, iter, false));
            }
            h = identity(n, 1.0 / sup_norm(&gx).max(1.0));
            fresh = true;
            continue;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let rel = s.iter().zip(&xn).fold(0.0f64, |m, (si, xi)| m.max(si.abs() / xi.abs().max(1.0)));
        x = xn;
        fx = fnew;
        gx = gn;
        if rel < opts.step_tol {
            return Ok(done(x, fx, gx, iter + 1, true));
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                h = identity(n, scale);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
    }
    let converged = sup_norm(&gx) < opts.grad_tol;
    Ok(done(x, fx, gx, opts.max_iter, converged))
}

fn done(x: Vec<f64>, fx: f64, gx: Vec<f64>, iterations: usize, converged: bool) -> BfgsResult {
    BfgsResult { x, value: -fx, grad: gx.iter().map(|v| -v).collect(), iterations, converged }
}

fn identity(n: usize, scale: f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = scale;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

/// Inverse-Hessian update H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_maximum() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> {
            let (a, b) = (x[0], x[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            let g = vec![2.0 * (1.0 - a) + 400.0 * a * (b - a * a), -200.0 * (b - a * a)];
            Ok((v, g))
        };
        let opts = BfgsOptions { max_iter: 500, ..Default::default() };
        let r = maximize(f, &[-1.2, 1.0], &opts).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn quadratic_in_few_steps() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> {
            Ok((-(x[0] - 3.0).powi(2) - 4.0 * (x[1] + 1.0).powi(2), vec![-2.0 * (x[0] - 3.0), -8.0 * (x[1] + 1.0)]))
        };
        let r = maximize(f, &[0.0, 0.0], &BfgsOptions::default()).unwrap();
        assert!(r.converged && r.iterations < 20);
    }
}
