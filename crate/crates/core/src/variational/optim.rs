//! Limited-memory BFGS for maximization with backtracking line search.

use std::collections::VecDeque;

pub(crate) struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

pub(crate) struct LbfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub memory: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Maximizes `f`, which returns the value and gradient or `None` where the
/// objective is not defined (treated as minus infinity).
pub(crate) fn maximize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Option<Maximum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (mut value, mut grad) = f(&x0)?;
    let mut x = x0;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stall = 0;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it;
        if inf_norm(&grad) <= opts.grad_tol * (1.0 + value.abs()) {
            break;
        }
        // two-loop recursion; H approximates the inverse Hessian of -f, so
        // H grad is an ascent direction
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / (1.0 + inf_norm(&grad)),
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir = q;
        let mut slope = dot(&grad, &dir);
        if !(slope > 0.0) {
            history.clear();
            dir = grad.iter().map(|g| g / (1.0 + inf_norm(&grad))).collect();
            slope = dot(&grad, &dir);
        }
        let mut t = 1.0;
        let mut step = None;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            if let Some((v, g)) = f(&trial) {
                if v >= value + 1e-4 * t * slope {
                    step = Some((trial, v, g));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((nx, nv, ng)) = step else {
            break;
        };
        let s: Vec<f64> = nx.iter().zip(&x).map(|(a, b)| a - b).collect();
        // y for the minimization of -f
        let y: Vec<f64> = ng.iter().zip(&grad).map(|(a, b)| b - a).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > opts.memory {
                history.pop_front();
            }
        }
        if nv - value <= 1e-15 * (1.0 + value.abs()) {
            stall += 1;
        } else {
            stall = 0;
        }
        x = nx;
        value = nv;
        grad = ng;
        iterations = it + 1;
        if stall >= 3 {
            break;
        }
    }
    Some(Maximum {
        grad_norm: inf_norm(&grad),
        x,
        value,
        iterations,
    })
}
