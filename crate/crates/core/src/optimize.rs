//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use crate::linalg::{dot, norm};

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub grad_tol: f64,
    pub max_iter: u64,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: u64,
    /// The line search could not decrease the objective any further.
    pub stalled: bool,
}

/// Minimizes `f`, which returns the value and writes the gradient.
pub fn lbfgs<F>(f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    lbfgs_preconditioned(f, |_: &mut [f64]| {}, x0, opts)
}

/// L-BFGS whose initial inverse Hessian is `γ P⁻¹`; `precond` applies `P⁻¹`
/// in place and `γ` is the usual `sᵀy / yᵀP⁻¹y` scaling.
pub fn lbfgs_preconditioned<F, P>(mut f: F, mut precond: P, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: FnMut(&mut [f64]),
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory];
    let mut iterations = 0;
    let mut stalled = false;
    let mut retried = false;
    let mut negligible = 0;

    while iterations < opts.max_iter {
        let gnorm = norm(&g);
        if gnorm <= opts.grad_tol || !fx.is_finite() {
            break;
        }
        // two-loop recursion for -H g
        dir.copy_from_slice(&g);
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[i] = a;
            for j in 0..n {
                dir[j] -= a * y[j];
            }
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => {
                py.copy_from_slice(y);
                precond(&mut py);
                dot(s, y) / dot(y, &py)
            }
            None => {
                py.copy_from_slice(&g);
                precond(&mut py);
                1.0 / norm(&py).max(1.0)
            }
        };
        precond(&mut dir);
        dir.iter_mut().for_each(|v| *v *= gamma);
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let b = rho * dot(y, &dir);
            for j in 0..n {
                dir[j] += s[j] * (alpha_buf[i] - b);
            }
        }
        dir.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir.copy_from_slice(&g);
            precond(&mut dir);
            let scale = 1.0 / norm(&dir).max(1.0);
            dir.iter_mut().for_each(|v| *v *= -scale);
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            for j in 0..n {
                x_new[j] = x[j] + step * dir[j];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) {
                    if hist.len() == opts.memory {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                let decrease = fx - f_new;
                fx = f_new;
                accepted = true;
                if decrease <= 4.0 * f64::EPSILON * fx.abs() {
                    negligible += 1;
                } else {
                    negligible = 0;
                    retried = false;
                }
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            if hist.is_empty() || retried {
                stalled = true;
                break;
            }
            // retry once from the preconditioned steepest descent
            hist.clear();
            retried = true;
            continue;
        }
        if negligible >= 5 {
            stalled = true;
            break;
        }
    }
    LbfgsResult {
        grad_norm: norm(&g),
        x,
        value: fx,
        iterations,
        stalled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let r = lbfgs(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            vec![-1.2, 1.0],
            &LbfgsOptions {
                memory: 10,
                grad_tol: 1e-10,
                max_iter: 1000,
            },
        );
        assert!(r.grad_norm <= 1e-10, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
    }
}
