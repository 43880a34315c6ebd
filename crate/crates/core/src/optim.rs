//! Flat-vector limited-memory BFGS with backtracking Armijo line search.
//! Used by the Euclidean fits (GasOpInf); the manifold variant lives in the
//! training module.

use std::collections::VecDeque;

use crate::numerics::Vector;

#[derive(Debug, Clone, Copy)]
pub struct LineSearchParams {
    pub initial_step: f64,
    pub contraction: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        LineSearchParams {
            initial_step: 1.0,
            contraction: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsParams {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub line_search: LineSearchParams,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        LbfgsParams {
            memory: 10,
            max_iters: 200,
            grad_tol: 1e-9,
            line_search: LineSearchParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vector,
    pub loss: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Minimize `f` (which must return the value and gradient; non-finite values
/// are treated as rejected territory by the line search).
pub fn lbfgs_flat(
    mut f: impl FnMut(&Vector) -> (f64, Vector),
    x0: Vector,
    params: &LbfgsParams,
) -> LbfgsOutcome {
    let mut x = x0;
    let (mut fx, mut gx) = f(&x);
    let mut history = vec![fx];
    let mut memory: VecDeque<(Vector, Vector, f64)> = VecDeque::with_capacity(params.memory);
    let mut restarted = false;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..params.max_iters {
        let gnorm = gx.norm();
        if gnorm <= params.grad_tol {
            converged = true;
            break;
        }
        // Two-loop recursion.
        let mut dir = gx.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * s.dot(&dir);
            dir.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = memory.back() {
            let gamma = s.dot(y) / y.dot(y);
            if gamma.is_finite() && gamma > 0.0 {
                dir *= gamma;
            }
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&dir);
            dir.axpy(a - b, s, 1.0);
        }
        dir = -dir;
        let mut slope = gx.dot(&dir);
        if !(slope < 0.0) {
            dir = -gx.clone();
            slope = -gnorm * gnorm;
        }

        // Backtracking Armijo. If the very first trial passes, expand the
        // step while it keeps strictly improving (prevents stagnation when
        // the model direction is far too short); finally refine the accepted
        // step with one quadratic interpolation (exact on quadratics).
        let ls = &params.line_search;
        let mut step = ls.initial_step;
        let mut accepted = None;
        let mut first_trial_ok = false;
        for k in 0..ls.max_backtracks {
            let cand = &x + &dir * step;
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc <= fx + ls.sufficient_decrease * step * slope {
                accepted = Some((cand, fc, gc, step));
                first_trial_ok = k == 0;
                break;
            }
            step *= ls.contraction;
        }
        if first_trial_ok {
            for _ in 0..40 {
                let (_, f_best, _, s_best) = accepted.as_ref().unwrap();
                let s_try = s_best / ls.contraction;
                let cand = &x + &dir * s_try;
                let (fc, gc) = f(&cand);
                if fc.is_finite() && fc < *f_best && fc <= fx + ls.sufficient_decrease * s_try * slope
                {
                    accepted = Some((cand, fc, gc, s_try));
                } else {
                    break;
                }
            }
        }
        if let Some((_, fc, _, step)) = &accepted {
            let curv = 2.0 * (fc - fx - slope * step);
            if curv > 0.0 {
                let alpha = -slope * step * step / curv;
                if alpha.is_finite() && alpha > 0.0 {
                    let cand2 = &x + &dir * alpha;
                    let (fc2, gc2) = f(&cand2);
                    if fc2.is_finite()
                        && fc2 < *fc
                        && fc2 <= fx + ls.sufficient_decrease * alpha * slope
                    {
                        accepted = Some((cand2, fc2, gc2, alpha));
                    }
                }
            }
        }
        let (x_new, f_new, g_new, step) = match accepted {
            Some(t) => t,
            None => {
                if !restarted && !memory.is_empty() {
                    // One memory restart, then steepest descent next round.
                    memory.clear();
                    restarted = true;
                    continue;
                }
                break;
            }
        };

        let s_vec = &dir * step;
        let y_vec = &g_new - &gx;
        let sy = s_vec.dot(&y_vec);
        if sy > 1e-12 * s_vec.norm() * y_vec.norm() {
            if memory.len() == params.memory {
                memory.pop_front();
            }
            memory.push_back((s_vec, y_vec, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        gx = g_new;
        history.push(fx);
        iterations += 1;
    }
    if gx.norm() <= params.grad_tol {
        converged = true;
    }
    LbfgsOutcome {
        x,
        loss: fx,
        iterations,
        history,
        converged,
    }
}
