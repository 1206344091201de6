use std::f64::consts::PI;

use super::ForwardModel;
use crate::error::{Error, Result};

const SOURCE: f64 = 100.0;
const OBSERVATIONS: usize = 7;

/// `−(a(x, z) u′)′ = 100x` on `[0, 1]` with `u(0) = u(1) = 0` and
/// `a(x, z) = exp(Σ_j z_j (0.1/j) sin(jπx))`, discretized by the
/// three-point conservative stencil on `m` cells. Observations are the
/// nodal values at `x = 1/8, …, 7/8`.
#[derive(Debug, Clone)]
pub struct PdeModel {
    s: usize,
    m: usize,
}

impl PdeModel {
    pub fn new(s: usize, m: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::config("model.s must be at least 1"));
        }
        if m < 8 || m % 8 != 0 {
            return Err(Error::config(format!(
                "model.mesh must be a positive multiple of 8 so the observation points are nodes, got {m}"
            )));
        }
        Ok(Self { s, m })
    }

    /// Number of cells.
    pub fn cells(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Observation node indices.
    pub fn observation_nodes(&self) -> Vec<usize> {
        (1..=OBSERVATIONS).map(|k| k * self.m / 8).collect()
    }

    /// `log a(x, z)`.
    pub fn log_coefficient(&self, x: f64, z: &[f64]) -> f64 {
        z.iter()
            .enumerate()
            .map(|(j, &zj)| {
                let j = (j + 1) as f64;
                zj * 0.1 / j * (j * PI * x).sin()
            })
            .sum()
    }

    /// Nodal solution `u_0, …, u_m` (boundary zeros included).
    pub fn solve(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.s {
            return Err(Error::Dimension {
                context: "PDE parameter",
                expected: self.s,
                got: z.len(),
            });
        }
        let m = self.m;
        let h = self.h();
        let a: Vec<f64> = (0..m)
            .map(|i| self.log_coefficient((i as f64 + 0.5) * h, z).exp())
            .collect();
        if a.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::NonFinite("PDE coefficient"));
        }
        // Thomas algorithm for the interior nodes 1..m-1.
        let k = m - 1;
        let mut c = vec![0.0; k];
        let mut d = vec![0.0; k];
        for i in 0..k {
            let node = i + 1;
            let diag = a[node - 1] + a[node];
            let rhs = SOURCE * node as f64 * h * h * h;
            let (prev_c, prev_d) = if i == 0 { (0.0, 0.0) } else { (c[i - 1], d[i - 1]) };
            let lower = if i == 0 { 0.0 } else { -a[node - 1] };
            let denom = diag - lower * prev_c;
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::Factorization { pivot: i, value: denom });
            }
            c[i] = -a[node] / denom;
            d[i] = (rhs - lower * prev_d) / denom;
        }
        let mut u = vec![0.0; m + 1];
        u[k] = d[k - 1];
        for i in (0..k - 1).rev() {
            u[i + 1] = d[i] - c[i] * u[i + 2];
        }
        Ok(u)
    }

    /// The exact solution for `z = 0`, `(50/3) x (1 − x²)`.
    pub fn reference_solution(x: f64) -> f64 {
        SOURCE / 6.0 * x * (1.0 - x * x)
    }

    /// Largest deviation of the piecewise-linear interpolant of `nodes`
    /// from `exact`, sampled at `per_cell` points in each cell.
    pub fn interpolant_error(nodes: &[f64], exact: impl Fn(f64) -> f64, per_cell: usize) -> f64 {
        let m = nodes.len() - 1;
        let h = 1.0 / m as f64;
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for k in 0..=per_cell {
                let t = k as f64 / per_cell as f64;
                let x = (i as f64 + t) * h;
                let v = nodes[i] * (1.0 - t) + nodes[i + 1] * t;
                worst = worst.max((v - exact(x)).abs());
            }
        }
        worst
    }
}

impl ForwardModel for PdeModel {
    fn input_dim(&self) -> usize {
        self.s
    }

    fn output_dim(&self) -> usize {
        OBSERVATIONS
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let u = self.solve(z)?;
        Ok(self.observation_nodes().into_iter().map(|i| u[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_coefficient_matches_cubic() {
        let p = PdeModel::new(4, 64).unwrap();
        let u = p.solve(&[0.0; 4]).unwrap();
        assert!((u[32] - 6.25).abs() < 1e-10);
        for (i, v) in u.iter().enumerate() {
            let x = i as f64 * p.h();
            assert!((v - PdeModel::reference_solution(x)).abs() < 1e-10);
        }
        let g = p.forward(&[0.0; 4]).unwrap();
        for (k, v) in g.iter().enumerate() {
            let t = (k + 1) as f64 / 8.0;
            assert!((v - 50.0 / 3.0 * t * (1.0 - t * t)).abs() < 1e-10);
        }
    }

    #[test]
    fn positive_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PdeModel::new(8, 64).unwrap();
        for _ in 0..50 {
            let z: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
            let u = p.solve(&z).unwrap();
            assert!(u[1..64].iter().all(|&v| v > 0.0));
        }
    }

    fn interp_error(m: usize) -> f64 {
        let u = PdeModel::new(1, m).unwrap().solve(&[0.0]).unwrap();
        PdeModel::interpolant_error(&u, PdeModel::reference_solution, 64)
    }

    #[test]
    fn second_order() {
        let ms = [16usize, 32, 64, 128, 256];
        let errs: Vec<f64> = ms.iter().map(|&m| interp_error(m)).collect();
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((3.2..=4.8).contains(&r), "ratio {r}");
        }
        let hs: Vec<f64> = ms.iter().map(|&m| 1.0 / m as f64).collect();
        let slope = crate::wce::fit_decay_rate(&hs, &errs).unwrap();
        assert!((1.7..=2.3).contains(&slope), "slope {slope}");
    }

    #[test]
    fn richardson_between_meshes() {
        let ones = vec![1.0; 8];
        let g: Vec<Vec<f64>> = [64usize, 128, 256]
            .iter()
            .map(|&m| PdeModel::new(8, m).unwrap().forward(&ones).unwrap())
            .collect();
        let d1: f64 = g[0].iter().zip(&g[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let d2: f64 = g[1].iter().zip(&g[2]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d1 < 50.0 / 64.0f64.powi(2), "{d1}");
        assert!((3.2..=4.8).contains(&(d1 / d2)), "{}", d1 / d2);
    }

    #[test]
    fn data_is_reproducible() {
        let a = PdeModel::new(8, 64).unwrap().forward(&[1.0; 8]).unwrap();
        let b = PdeModel::new(8, 64).unwrap().forward(&[1.0; 8]).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn lipschitz_in_parameters() {
        let p = PdeModel::new(8, 64).unwrap();
        let z = vec![0.5; 8];
        let base = p.forward(&z).unwrap();
        for j in 0..8 {
            let mut zp = z.clone();
            zp[j] += 1e-6;
            let g = p.forward(&zp).unwrap();
            for (a, b) in g.iter().zip(&base) {
                assert!((a - b).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn mesh_must_hit_observations() {
        assert!(PdeModel::new(8, 60).is_err());
        assert!(PdeModel::new(8, 4).is_err());
        assert_eq!(
            PdeModel::new(8, 16).unwrap().observation_nodes(),
            vec![2, 4, 6, 8, 10, 12, 14]
        );
    }
}
