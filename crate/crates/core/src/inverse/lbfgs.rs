use std::collections::VecDeque;
use std::fmt;

use crate::numerics::{axpy, dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    /// No step satisfied sufficient decrease; the best iterate is returned.
    LineSearchFailed,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::LineSearchFailed => "line_search_failed",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub history: usize,
    pub max_iters: usize,
    /// Stop once the gradient norm drops below this.
    pub tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 10,
            max_iters: 500,
            tolerance: 1e-8,
            c1: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Two-loop recursion: `H g` for the implicit inverse Hessian.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alpha[k] = rho * dot(s, &q);
        axpy(-alpha[k], y, &mut q);
    }
    if let Some((s, y, _)) = pairs.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let beta = rho * dot(y, &q);
        axpy(alpha[k] - beta, s, &mut q);
    }
    q
}

/// Limited-memory BFGS with Armijo backtracking (step halving).
///
/// `eval` returns the objective and gradient. A non-finite objective at a
/// trial point counts as insufficient decrease; errors abort the run.
pub fn minimize<E>(
    mut eval: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    x0: &[f64],
    opts: &LbfgsOptions,
) -> Result<LbfgsResult, E> {
    let mut x = x0.to_vec();
    let (mut f, mut g) = eval(&x)?;
    let mut trace = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.history);
    let mut gnorm = norm(&g);
    let mut status = SolveStatus::MaxIters;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if gnorm < opts.tolerance {
            status = SolveStatus::Converged;
            break;
        }
        let mut d: Vec<f64> = two_loop(&g, &pairs).iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut step = if pairs.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut trial = x.clone();
            axpy(step, &d, &mut trial);
            let (ft, gt) = eval(&trial)?;
            if ft.is_finite() && ft <= f + opts.c1 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            status = SolveStatus::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if pairs.len() == opts.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        gnorm = norm(&g);
        trace.push(f);
        iterations += 1;
    }
    if status == SolveStatus::MaxIters && gnorm < opts.tolerance {
        status = SolveStatus::Converged;
    }
    Ok(LbfgsResult {
        x,
        value: f,
        grad_norm: gnorm,
        trace,
        iterations,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>), Infallible> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_converges_and_zero_iters_is_start() {
        let quad = |x: &[f64]| -> Result<(f64, Vec<f64>), Infallible> {
            Ok((
                x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v * v).sum(),
                x.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * v).collect(),
            ))
        };
        let r = minimize(quad, &[1.0, -2.0, 3.0], &LbfgsOptions::default()).unwrap();
        assert!(r.x.iter().all(|v| v.abs() < 1e-8));
        let opts = LbfgsOptions {
            max_iters: 0,
            ..LbfgsOptions::default()
        };
        let r = minimize(quad, &[1.0, 1.0, 1.0], &opts).unwrap();
        assert_eq!((r.iterations, r.status, r.x), (0, SolveStatus::MaxIters, vec![1.0; 3]));
    }

    #[test]
    fn flags_line_search_failure() {
        // gradient points the wrong way, so no step decreases f
        let bad = |x: &[f64]| -> Result<(f64, Vec<f64>), Infallible> { Ok((x[0], vec![-1.0])) };
        let r = minimize(bad, &[0.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::LineSearchFailed);
        assert_eq!(r.x, vec![0.0]);
    }
}
