//! Restarted GMRES for matrix-free operators on `R^n`. The shooting solver
//! flattens traceless Hermitian matrices onto an orthonormal basis and feeds
//! the regularized normal-equations operator through here.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub solution: DVector<f64>,
    pub relative_residual: f64,
    /// Total operator applications.
    pub iterations: usize,
    pub converged: bool,
}

/// Solve `A x = b` with restarted GMRES; `apply` computes `A·v`.
///
/// Stops when the preconditioner-free relative residual drops below
/// `rel_tol` or after `max_iters` operator applications, returning the best
/// iterate either way.
pub fn gmres<F>(
    mut apply: F,
    b: &DVector<f64>,
    rel_tol: f64,
    max_iters: usize,
    restart: usize,
) -> GmresOutcome
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return GmresOutcome {
            solution: DVector::zeros(n),
            relative_residual: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let restart = restart.max(1).min(max_iters.max(1));
    let mut x = DVector::<f64>::zeros(n);
    let mut total_iters = 0usize;

    loop {
        let r = b - apply(&x);
        total_iters += 1;
        let beta = r.norm();
        if beta / b_norm < rel_tol {
            return GmresOutcome {
                solution: x,
                relative_residual: beta / b_norm,
                iterations: total_iters,
                converged: true,
            };
        }
        // Arnoldi with Givens-rotated Hessenberg.
        let mut basis: Vec<DVector<f64>> = vec![&r / beta];
        let mut h = DMatrix::<f64>::zeros(restart + 1, restart);
        let mut cs = vec![0.0f64; restart];
        let mut sn = vec![0.0f64; restart];
        let mut g = DVector::<f64>::zeros(restart + 1);
        g[0] = beta;
        let mut k_used = 0usize;

        for k in 0..restart {
            if total_iters >= max_iters {
                break;
            }
            let mut w = apply(&basis[k]);
            total_iters += 1;
            for i in 0..=k {
                h[(i, k)] = w.dot(&basis[i]);
                w.axpy(-h[(i, k)], &basis[i], 1.0);
            }
            // One re-orthogonalization pass keeps the basis clean.
            for i in 0..=k {
                let corr = w.dot(&basis[i]);
                h[(i, k)] += corr;
                w.axpy(-corr, &basis[i], 1.0);
            }
            h[(k + 1, k)] = w.norm();
            let happy = h[(k + 1, k)] < 1e-14 * b_norm.max(1.0);
            if !happy {
                basis.push(&w / h[(k + 1, k)]);
            }
            // Apply the accumulated rotations, then form a new one.
            for i in 0..k {
                let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
                h[(i, k)] = t;
            }
            let denom = (h[(k, k)] * h[(k, k)] + h[(k + 1, k)] * h[(k + 1, k)]).sqrt();
            if denom == 0.0 {
                k_used = k + 1;
                break;
            }
            cs[k] = h[(k, k)] / denom;
            sn[k] = h[(k + 1, k)] / denom;
            h[(k, k)] = denom;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if g[k + 1].abs() / b_norm < rel_tol || happy {
                break;
            }
        }

        if k_used > 0 {
            // Back-substitution for the least-squares coefficients.
            let mut y = vec![0.0f64; k_used];
            for i in (0..k_used).rev() {
                let mut acc = g[i];
                for j in i + 1..k_used {
                    acc -= h[(i, j)] * y[j];
                }
                y[i] = acc / h[(i, i)];
            }
            for (j, coeff) in y.iter().enumerate() {
                x.axpy(*coeff, &basis[j], 1.0);
            }
        }

        let res = (b - apply(&x)).norm() / b_norm;
        total_iters += 1;
        if res < rel_tol {
            return GmresOutcome {
                solution: x,
                relative_residual: res,
                iterations: total_iters,
                converged: true,
            };
        }
        if total_iters >= max_iters || k_used == 0 {
            return GmresOutcome {
                solution: x,
                relative_residual: res,
                iterations: total_iters,
                converged: false,
            };
        }
    }
}
