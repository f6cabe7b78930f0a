//! Limited-memory quasi-Newton minimizer used by the fitting routines.
//!
//! The caller supplies a joint value-and-gradient closure. Iterations follow
//! the standard two-loop recursion with an (s.y / y.y)-scaled identity seed,
//! except the very first step, which has no curvature history: there the
//! descent direction is the raw gradient scaled by `first_step`, which keeps
//! the opening move small enough that grid seeds far from any basin do not
//! blow up. Line search is plain backtracking (halve until the objective
//! strictly improves); a step that cannot improve within the halving budget
//! ends the run with `converged = false`.

use std::collections::VecDeque;

pub(crate) struct Options {
    pub max_iterations: u32,
    pub history: usize,
    /// Scale on the gradient for the first (history-free) direction.
    pub first_step: f64,
    /// Relative-improvement stopping threshold.
    pub rel_tol: f64,
}

pub(crate) struct Outcome<const N: usize> {
    pub x: [f64; N],
    #[allow(dead_code)] // selection reads rmse, not the objective; tests read this
    pub value: f64,
    pub iterations: u32,
    /// True only when the relative-improvement test ended the run.
    pub converged: bool,
}

const MAX_HALVINGS: u32 = 60;

pub(crate) fn minimize<const N: usize, F>(f: F, x0: [f64; N], opts: &Options) -> Outcome<N>
where
    F: Fn(&[f64; N]) -> (f64, [f64; N]),
{
    let mut x = x0;
    let (mut value, mut grad) = f(&x);
    let mut history: VecDeque<([f64; N], [f64; N])> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;

    if value.is_finite() {
        for it in 1..=opts.max_iterations {
            iterations = it;
            let direction = if history.is_empty() {
                let mut d = grad;
                for v in &mut d {
                    *v *= -opts.first_step;
                }
                d
            } else {
                let mut d = two_loop(&grad, &history);
                for v in &mut d {
                    *v = -*v;
                }
                d
            };

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let mut xn = x;
                for k in 0..N {
                    xn[k] += t * direction[k];
                }
                let (vn, gn) = f(&xn);
                // NaN compares false, so a poisoned step is rejected too
                if vn < value {
                    accepted = Some((xn, vn, gn));
                    break;
                }
                t *= 0.5;
            }
            let Some((xn, vn, gn)) = accepted else { break };

            let mut s = [0.0; N];
            let mut y = [0.0; N];
            for k in 0..N {
                s[k] = xn[k] - x[k];
                y[k] = gn[k] - grad[k];
            }
            // keep the pair only when curvature is safely positive
            if dot(&s, &y) > 1e-10 * norm(&s) * norm(&y) {
                history.push_back((s, y));
                if history.len() > opts.history {
                    history.pop_front();
                }
            }

            let rel = (value - vn) / value.abs().max(1e-30);
            x = xn;
            value = vn;
            grad = gn;
            if rel < opts.rel_tol {
                converged = true;
                break;
            }
        }
    }

    Outcome {
        x,
        value,
        iterations,
        converged,
    }
}

fn two_loop<const N: usize>(grad: &[f64; N], history: &VecDeque<([f64; N], [f64; N])>) -> [f64; N] {
    let mut q = *grad;
    let mut alphas = vec![0.0; history.len()];
    for (i, (s, y)) in history.iter().enumerate().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        alphas[i] = a;
        for k in 0..N {
            q[k] -= a * y[k];
        }
    }
    let (s_last, y_last) = history.back().expect("two_loop needs history");
    let scale = dot(s_last, y_last) / dot(y_last, y_last);
    for v in &mut q {
        *v *= scale;
    }
    for (i, (s, y)) in history.iter().enumerate() {
        let rho = 1.0 / dot(y, s);
        let b = rho * dot(y, &q);
        for k in 0..N {
            q[k] += (alphas[i] - b) * s[k];
        }
    }
    q
}

fn dot<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    let mut acc = 0.0;
    for k in 0..N {
        acc += a[k] * b[k];
    }
    acc
}

fn norm<const N: usize>(a: &[f64; N]) -> f64 {
    dot(a, a).sqrt()
}
