//! Limited-memory BFGS ascent with backtracking (Armijo) line search.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub memory: usize,
    pub max_backtracks: usize,
    /// Sufficient-increase constant.
    pub c1: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iters: 1000,
            grad_tol: 1e-4,
            memory: 10,
            max_backtracks: 40,
            c1: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `(value, ‖grad‖∞)` at the start and after every accepted step.
    pub trace: Vec<(f64, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Maximise `f`. The callback returns `None` when the point is unusable
/// (non-finite value, failed factorisation); such trial steps are shrunk.
///
/// Returns `None` only if the starting point itself is unusable.
pub fn maximize<F>(x0: Vec<f64>, mut f: F, opts: LbfgsOptions) -> Option<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (mut fx, mut g) = f(&x0)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut x = x0;
    let n = x.len();
    let mut trace = vec![(fx, inf_norm(&g))];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = inf_norm(&g) <= opts.grad_tol;

    while !converged && iterations < opts.max_iters {
        // two-loop recursion on the ascent problem (minimising −f)
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            for k in 0..n {
                q[k] -= a * y[k];
            }
            alphas.push(a);
        }
        let scale = match mem.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / inf_norm(&g).max(1.0),
        };
        for v in q.iter_mut() {
            *v *= scale;
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for k in 0..n {
                q[k] += s[k] * (a - b);
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope > 0.0) {
            mem.clear();
            let sc = 1.0 / inf_norm(&g).max(1.0);
            dir = g.iter().map(|v| v * sc).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let xt: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if let Some((ft, gt)) = f(&xt) {
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft >= fx + opts.c1 * step * slope {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xt, ft, gt)) = accepted else {
            if mem.is_empty() {
                break;
            }
            // retry from steepest ascent before giving up
            mem.clear();
            continue;
        };
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        // curvature of −f
        let y: Vec<f64> = g.iter().zip(&gt).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let stalled = ft - fx <= 1e-14 * fx.abs().max(1.0);
        x = xt;
        fx = ft;
        g = gt;
        iterations += 1;
        trace.push((fx, inf_norm(&g)));
        converged = inf_norm(&g) <= opts.grad_tol;
        if stalled && !converged {
            // no representable progress left
            break;
        }
    }
    Some(LbfgsOutcome {
        x,
        value: fx,
        grad: g,
        iterations,
        converged,
        trace,
    })
}
