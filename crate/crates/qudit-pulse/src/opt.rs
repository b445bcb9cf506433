//! Shared optimization machinery: a box-bounded limited-memory quasi-Newton
//! descent (projected L-BFGS with Armijo backtracking) and golden-section
//! line search.

use std::collections::VecDeque;

/// Golden-section minimization of a unimodal-ish function on `[0, b]`.
///
/// Returns the best evaluated point, its value and the number of function
/// evaluations. The caller supplies the interval endpoint value semantics;
/// the endpoints themselves are not evaluated.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    b: f64,
    tol: f64,
    max_evals: usize,
) -> (f64, f64, usize) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut lo = 0.0;
    let mut hi = b;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut evals = 2usize;
    let (mut best_x, mut best_f) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    while hi - lo > tol && evals < max_evals {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        evals += 1;
        if f1 < best_f {
            best_f = f1;
            best_x = x1;
        }
        if f2 < best_f {
            best_f = f2;
            best_x = x2;
        }
    }
    (best_x, best_f, evals)
}

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    /// Number of curvature pairs retained.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop as soon as the best value drops to this level.
    pub target: f64,
    /// Stop when the projected gradient norm falls below this.
    pub grad_tol: f64,
    /// Box half-width: iterates stay in `[-bound, bound]^n`.
    pub bound: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iterations: 2000,
            target: f64::NEG_INFINITY,
            grad_tol: 1e-10,
            bound: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// True when the target value was reached.
    pub reached_target: bool,
    /// Best value after each iteration; non-increasing by construction.
    pub best_history: Vec<f64>,
}

fn project(x: &mut [f64], bound: f64) {
    if bound.is_finite() {
        for v in x.iter_mut() {
            *v = v.clamp(-bound, bound);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Gradient with the components pointing out of the box zeroed at active
/// bounds; its norm is the first-order optimality measure.
fn projected_gradient(x: &[f64], g: &[f64], bound: f64) -> Vec<f64> {
    let mut pg = g.to_vec();
    if bound.is_finite() {
        for k in 0..x.len() {
            if (x[k] >= bound && g[k] < 0.0) || (x[k] <= -bound && g[k] > 0.0) {
                pg[k] = 0.0;
            }
        }
    }
    pg
}

/// Minimize `f` over the box via projected L-BFGS.
///
/// `f_grad` returns the value and gradient at a point. The best iterate seen
/// is always returned, so the reported value is monotone in the iteration
/// budget.
pub fn minimize_box<F>(mut f_grad: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> LbfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0;
    project(&mut x, cfg.bound);
    let (mut fx, mut g) = f_grad(&x);
    let mut best_x = x.clone();
    let mut best_f = fx;
    let mut best_history = vec![best_f];

    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut rho_hist: VecDeque<f64> = VecDeque::new();
    let mut gamma = 1.0f64;
    let mut consecutive_failures = 0usize;

    for iter in 0..cfg.max_iterations {
        if best_f <= cfg.target {
            return LbfgsOutcome {
                x: best_x,
                value: best_f,
                iterations: iter,
                reached_target: true,
                best_history,
            };
        }
        let pg = projected_gradient(&x, &g, cfg.bound);
        if norm(&pg) < cfg.grad_tol {
            break;
        }

        // Two-loop recursion.
        let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for ((s, y), &rho) in s_hist.iter().zip(&y_hist).zip(&rho_hist).rev() {
            let alpha = rho * dot(s, &dir);
            for k in 0..n {
                dir[k] -= alpha * y[k];
            }
            alphas.push(alpha);
        }
        for v in dir.iter_mut() {
            *v *= gamma;
        }
        for (((s, y), &rho), &alpha) in s_hist
            .iter()
            .zip(&y_hist)
            .zip(&rho_hist)
            .zip(alphas.iter().rev())
        {
            let beta = rho * dot(y, &dir);
            for k in 0..n {
                dir[k] += (alpha - beta) * s[k];
            }
        }
        if dot(&dir, &g) > -1e-12 * norm(&dir) * norm(&g) {
            // Not a descent direction; restart from steepest descent.
            dir = g.iter().map(|v| -v).collect();
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            gamma = 1.0;
        }

        // Backtracking Armijo search on the projected path.
        let mut alpha = if iter == 0 {
            (1.0 / norm(&g).max(1e-12)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = fx;
        let mut g_new = g.clone();
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut trial, cfg.bound);
            let displacement: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            let slope = dot(&g, &displacement);
            if norm(&displacement) < 1e-16 {
                break;
            }
            let (ft, gt) = f_grad(&trial);
            if ft <= fx + 1e-4 * slope.min(0.0) && ft < fx {
                x_new = trial;
                f_new = ft;
                g_new = gt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }

        if !accepted {
            consecutive_failures += 1;
            if consecutive_failures == 1 {
                // Drop the memory once and retry with steepest descent.
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
                gamma = 1.0;
                best_history.push(best_f);
                continue;
            }
            break;
        }
        consecutive_failures = 0;

        let s_vec: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y_vec: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s_vec, &y_vec);
        if sy > 1e-12 * norm(&s_vec) * norm(&y_vec) {
            gamma = sy / dot(&y_vec, &y_vec).max(1e-300);
            s_hist.push_back(s_vec);
            y_hist.push_back(y_vec);
            rho_hist.push_back(1.0 / sy);
            if s_hist.len() > cfg.memory {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        x = x_new;
        fx = f_new;
        g = g_new;
        if fx < best_f {
            best_f = fx;
            best_x = x.clone();
        }
        best_history.push(best_f);
    }

    let reached = best_f <= cfg.target;
    LbfgsOutcome {
        x: best_x,
        value: best_f,
        iterations: best_history.len() - 1,
        reached_target: reached,
        best_history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_quadratic_minimum() {
        let (x, fx, evals) = golden_section(|t| (t - 0.7) * (t - 0.7), 2.0, 1e-8, 100);
        assert!((x - 0.7).abs() < 1e-6);
        assert!(fx < 1e-12);
        assert!(evals <= 100);
    }

    #[test]
    fn lbfgs_minimizes_rosenbrock() {
        let rosen = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (f, g)
        };
        let cfg = LbfgsConfig {
            max_iterations: 500,
            ..Default::default()
        };
        let out = minimize_box(rosen, vec![-1.2, 1.0], &cfg);
        assert!(out.value < 1e-10, "f = {}", out.value);
        assert!((out.x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn lbfgs_respects_box() {
        // Unconstrained minimum at (3, -3); box clamps to 1.
        let f = |x: &[f64]| {
            let f = (x[0] - 3.0).powi(2) + (x[1] + 3.0).powi(2);
            (f, vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 3.0)])
        };
        let cfg = LbfgsConfig {
            bound: 1.0,
            max_iterations: 200,
            ..Default::default()
        };
        let out = minimize_box(f, vec![0.0, 0.0], &cfg);
        assert!((out.x[0] - 1.0).abs() < 1e-8);
        assert!((out.x[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn lbfgs_best_history_is_monotone() {
        let f = |x: &[f64]| {
            let f = x[0].powi(4) + (x[1] - 2.0).powi(2) + (x[0] * x[1]).sin();
            let g = vec![
                4.0 * x[0].powi(3) + x[1] * (x[0] * x[1]).cos(),
                2.0 * (x[1] - 2.0) + x[0] * (x[0] * x[1]).cos(),
            ];
            (f, g)
        };
        let out = minimize_box(f, vec![1.5, -1.0], &LbfgsConfig::default());
        for w in out.best_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }
}
