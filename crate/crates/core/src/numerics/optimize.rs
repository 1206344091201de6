//! Damped Newton minimization for smooth unconstrained problems.

use super::diff::fd_jacobian;
use super::linalg::{backward_solve, cholesky, dot, forward_solve, norm, Matrix};
use super::quadrature::Tolerances;
use crate::error::{Error, Result};

const MAX_ITER: usize = 500;

/// Minimizes `f` from `x0` with Hessians taken by differencing `grad`.
pub fn minimize(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    tol: &Tolerances,
) -> Result<Vec<f64>> {
    let step = tol.fd_step;
    let hess = |x: &[f64]| -> Result<Matrix> { Ok(fd_jacobian(|p| Ok(grad(p)), x, step)?.symmetrized()) };
    minimize_with_hessian(&f, &grad, hess, x0, tol)
}

/// Damped Newton with a Levenberg shift for indefinite Hessians, Armijo
/// backtracking, and steepest descent as the fallback direction.
pub fn minimize_with_hessian(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    hess: impl Fn(&[f64]) -> Result<Matrix>,
    x0: &[f64],
    tol: &Tolerances,
) -> Result<Vec<f64>> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite("objective at the starting point"));
    }
    for _ in 0..MAX_ITER {
        let g = grad(&x);
        let gnorm = norm(&g);
        if !gnorm.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        if gnorm <= tol.opt_grad_tol {
            return Ok(x);
        }

        let newton = hess(&x).ok().and_then(|h| shifted_newton_direction(&h, &g));
        let mut directions = Vec::with_capacity(2);
        if let Some(d) = newton {
            if dot(&d, &g) < 0.0 {
                directions.push(d);
            }
        }
        directions.push(g.iter().map(|v| -v).collect::<Vec<_>>());

        let mut moved = false;
        for d in &directions {
            let slope = dot(&g, d);
            let mut t = 1.0;
            while t > 1e-16 {
                let trial: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
                let ft = f(&trial);
                if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                    x = trial;
                    fx = ft;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            // Near a minimizer `f` is flat to rounding; accept a Newton step
            // when it still reduces the gradient.
            let Some(d) = directions.first().filter(|_| directions.len() == 2) else {
                return Err(Error::NonConvergence {
                    what: "minimize (line search)",
                    iterations: MAX_ITER,
                    last: x,
                });
            };
            let trial: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + b).collect();
            let gt = norm(&grad(&trial));
            if gt < gnorm && f(&trial).is_finite() {
                fx = f(&trial).min(fx);
                x = trial;
            } else {
                return Err(Error::NonConvergence {
                    what: "minimize (line search)",
                    iterations: MAX_ITER,
                    last: x,
                });
            }
        }
        debug_assert_eq!(x.len(), n);
    }
    Err(Error::NonConvergence {
        what: "minimize",
        iterations: MAX_ITER,
        last: x,
    })
}

fn shifted_newton_direction(h: &Matrix, g: &[f64]) -> Option<Vec<f64>> {
    let scale = h.max_abs().max(1.0);
    let mut shift = 0.0;
    for _ in 0..40 {
        let mut hs = h.clone();
        for i in 0..hs.rows() {
            hs[(i, i)] += shift;
        }
        if let Ok(l) = cholesky(&hs) {
            let d = backward_solve(&l, &forward_solve(&l, g));
            return Some(d.into_iter().map(|v| -v).collect());
        }
        shift = if shift == 0.0 { 1e-8 * scale } else { shift * 10.0 };
    }
    None
}
