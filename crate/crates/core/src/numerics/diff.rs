//! Central finite differences.

use super::linalg::{norm, Matrix};
use crate::error::{Error, Result};

fn step_at(x: &[f64], rel: f64) -> f64 {
    rel * (1.0 + norm(x))
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("finite-difference evaluation"))
    }
}

/// Central-difference gradient with step `rel·(1+‖x‖)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], rel: f64) -> Result<Vec<f64>> {
    let h = step_at(x, rel);
    let mut p = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let fp = finite(f(&p))?;
        p[i] = x[i] - h;
        let fm = finite(f(&p))?;
        p[i] = x[i];
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

/// Central-difference Hessian, symmetrized as `(H + Hᵀ)/2`.
pub fn fd_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], rel: f64) -> Result<Matrix> {
    let n = x.len();
    let h = step_at(x, rel);
    let mut p = x.to_vec();
    let mut eval = |di: (usize, f64), dj: (usize, f64)| -> Result<f64> {
        p.copy_from_slice(x);
        p[di.0] += di.1;
        p[dj.0] += dj.1;
        finite(f(&p))
    };
    let mut hess = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = (eval((i, h), (j, h))? - eval((i, h), (j, -h))? - eval((i, -h), (j, h))? + eval((i, -h), (j, -h))?)
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess.symmetrized())
}

/// Central-difference Jacobian of a vector map, `m × n` for `F: ℝⁿ → ℝᵐ`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Result<Vec<f64>>, x: &[f64], rel: f64) -> Result<Matrix> {
    let h = step_at(x, rel);
    let mut p = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let fp = f(&p)?;
        p[i] = x[i] - h;
        let fm = f(&p)?;
        p[i] = x[i];
        let col: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        cols.push(col);
    }
    let m = cols.first().map_or(0, Vec::len);
    Ok(Matrix::from_fn(m, x.len(), |r, c| cols[c][r]))
}
