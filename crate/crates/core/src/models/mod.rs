//! Bayesian inverse problems: Gaussian prior, scaled Gaussian noise, a
//! forward map, and the potential `Ψ(z) = ½‖y − G(z)‖²_Γ`.

mod pde;
mod toy;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::Kronecker;
use crate::numerics::linalg::{norm, Matrix, SpdMatrix};
use crate::numerics::{fd_gradient, fd_hessian, normal_quantile, Tolerances};

pub use pde::PdeModel;
pub use toy::ToyModel;

/// Gaussian prior `N(μ₀, Σ₀)`.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub cov: SpdMatrix,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::Dimension {
                context: "prior mean and covariance",
                expected: cov.dim(),
                got: mean.len(),
            });
        }
        Ok(Self { mean, cov })
    }

    /// `N(0, I)`.
    pub fn standard(s: usize) -> Self {
        Self {
            mean: vec![0.0; s],
            cov: SpdMatrix::identity(s),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        -0.5 * (self.dim() as f64 * (2.0 * std::f64::consts::PI).ln()
            + self.cov.log_det()
            + self.cov.mahalanobis_sq(&d))
    }
}

/// Observation noise `N(0, Γ/n)`.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub n: f64,
    pub gamma: SpdMatrix,
}

impl NoiseSpec {
    pub fn new(n: f64, gamma: SpdMatrix) -> Result<Self> {
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::config(format!("model.n must be positive, got {n}")));
        }
        Ok(Self { n, gamma })
    }

    /// The scaled covariance `Γ_n = Γ/n`.
    pub fn covariance(&self) -> Result<SpdMatrix> {
        self.gamma.scaled(1.0 / self.n)
    }
}

/// A deterministic parameter-to-observable map.
pub trait ForwardModel: Send + Sync + fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>>;

    /// Jacobian `∂G_i/∂z_j`, if available in closed form.
    fn jacobian(&self, _z: &[f64]) -> Option<Result<Matrix>> {
        None
    }

    /// `Σ_i w_i ∇²G_i(z)`, if available in closed form.
    fn weighted_hessian(&self, _z: &[f64], _w: &[f64]) -> Option<Result<Matrix>> {
        None
    }
}

/// A Bayesian inverse problem with a Gaussian prior and Gaussian noise.
#[derive(Debug, Clone)]
pub struct BipModel {
    pub prior: GaussianPrior,
    pub noise: NoiseSpec,
    y: Vec<f64>,
    forward: Arc<dyn ForwardModel>,
    offset: f64,
}

impl BipModel {
    pub fn new(prior: GaussianPrior, noise: NoiseSpec, y: Vec<f64>, forward: Arc<dyn ForwardModel>) -> Result<Self> {
        let (s, j) = (forward.input_dim(), forward.output_dim());
        if prior.dim() != s {
            return Err(Error::Dimension {
                context: "prior dimension vs forward input",
                expected: s,
                got: prior.dim(),
            });
        }
        if y.len() != j {
            return Err(Error::Dimension {
                context: "data vector vs forward output",
                expected: j,
                got: y.len(),
            });
        }
        if noise.gamma.dim() != j {
            return Err(Error::Dimension {
                context: "noise covariance vs forward output",
                expected: j,
                got: noise.gamma.dim(),
            });
        }
        Ok(Self {
            prior,
            noise,
            y,
            forward,
            offset: 0.0,
        })
    }

    pub fn s(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn j(&self) -> usize {
        self.forward.output_dim()
    }

    pub fn n(&self) -> f64 {
        self.noise.n
    }

    pub fn data(&self) -> &[f64] {
        &self.y
    }

    pub fn forward_map(&self) -> &Arc<dyn ForwardModel> {
        &self.forward
    }

    /// The constant subtracted from `Ψ` by [`BipModel::recentered`].
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// The same problem with a different noise level.
    pub fn with_noise_level(&self, n: f64) -> Result<Self> {
        let mut out = self.clone();
        out.noise = NoiseSpec::new(n, self.noise.gamma.clone())?;
        Ok(out)
    }

    fn residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        let g = self.forward.forward(z)?;
        Ok(self.y.iter().zip(&g).map(|(a, b)| a - b).collect())
    }

    /// `½‖y − G(z)‖²_Γ` before recentering.
    pub fn psi_raw(&self, z: &[f64]) -> Result<f64> {
        let r = self.residual(z)?;
        Ok(0.5 * self.noise.gamma.mahalanobis_sq(&r))
    }

    pub fn psi(&self, z: &[f64]) -> Result<f64> {
        Ok(self.psi_raw(z)? - self.offset)
    }

    /// `∇Ψ(z)`, analytic when the forward map has a Jacobian.
    pub fn grad_psi(&self, z: &[f64], tol: &Tolerances) -> Result<Vec<f64>> {
        if let Some(jac) = self.forward.jacobian(z) {
            let jac = jac?;
            let w = self.noise.gamma.solve(&self.residual(z)?);
            return Ok(jac.transpose().mul_vec(&w)?.into_iter().map(|v| -v).collect());
        }
        fd_gradient(|x| self.psi_raw(x).unwrap_or(f64::NAN), z, tol.fd_step)
    }

    /// `∇²Ψ(z)`, analytic when the forward map has both derivative hooks.
    pub fn hessian_psi(&self, z: &[f64], tol: &Tolerances) -> Result<Matrix> {
        if let Some(jac) = self.forward.jacobian(z) {
            let jac = jac?;
            let w = self.noise.gamma.solve(&self.residual(z)?);
            if let Some(second) = self.forward.weighted_hessian(z, &w) {
                let cols: Vec<Vec<f64>> = (0..jac.cols())
                    .map(|c| {
                        let col: Vec<f64> = (0..jac.rows()).map(|r| jac[(r, c)]).collect();
                        self.noise.gamma.solve(&col)
                    })
                    .collect();
                let gn = Matrix::from_fn(jac.cols(), jac.cols(), |a, b| {
                    (0..jac.rows()).map(|r| jac[(r, a)] * cols[b][r]).sum()
                });
                return Ok(gn.sub(&second?)?.symmetrized());
            }
        }
        fd_hessian(|x| self.psi_raw(x).unwrap_or(f64::NAN), z, tol.fd_step)
    }

    /// A copy with `Ψ` shifted so that `Ψ(μ*) = 0`.
    pub fn recentered(&self, mu_star: &[f64]) -> Result<Self> {
        let base = self.psi_raw(mu_star)?;
        if !base.is_finite() {
            return Err(Error::NonFinite("potential at the recentering point"));
        }
        let mut out = self.clone();
        out.offset = base;
        Ok(out)
    }
}

/// The toy problem: `G(z) = z + τ(z_i e^{−z_i²})_i`, `y = 0`, `Γ = I`, prior
/// `N(1, Σ₀)` with `Σ₀[i][j] = min(i, j)` (1-based).
pub fn toy_problem(s: usize, tau: f64, n: f64) -> Result<BipModel> {
    let cov = Matrix::from_fn(s, s, |i, j| (i.min(j) + 1) as f64);
    let prior = GaussianPrior::new(vec![1.0; s], SpdMatrix::new(cov)?)?;
    toy_problem_with(prior, tau, n, vec![0.0; s])
}

/// The toy forward map with an arbitrary prior and data.
pub fn toy_problem_with(prior: GaussianPrior, tau: f64, n: f64, y: Vec<f64>) -> Result<BipModel> {
    let s = prior.dim();
    let forward = Arc::new(ToyModel::new(s, tau)?);
    BipModel::new(prior, NoiseSpec::new(n, SpdMatrix::identity(s))?, y, forward)
}

/// The elliptic problem with `N(0, I)` prior, `Γ = I₇`, and noise-free data
/// generated at `z = (1, …, 1)` on the same mesh.
pub fn pde_problem(s: usize, m: usize, n: f64) -> Result<BipModel> {
    let forward = PdeModel::new(s, m)?;
    let y = forward.forward(&vec![1.0; s])?;
    let j = forward.output_dim();
    BipModel::new(
        GaussianPrior::standard(s),
        NoiseSpec::new(n, SpdMatrix::identity(j))?,
        y,
        Arc::new(forward),
    )
}

/// `‖z‖`.
pub fn test_function_norm(z: &[f64]) -> f64 {
    norm(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundReport {
    pub holds: bool,
    pub worst_ratio: f64,
    pub witness: Vec<f64>,
}

/// Scans a ball about `μ*` for the smallest `Ψ(z) / (½‖z − μ*‖²_{Σ*})` and
/// reports whether it stays above `δ`.
pub fn verify_lower_bound(
    model: &BipModel,
    mu_star: &[f64],
    sigma_star: &SpdMatrix,
    delta: f64,
    n_samples: usize,
    radius: f64,
) -> Result<LowerBoundReport> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Domain {
            what: "verify_lower_bound delta",
            value: delta,
            domain: "[0, 1]",
        });
    }
    let s = mu_star.len();
    let seq = Kronecker::new(s + 1);
    let mut worst = f64::INFINITY;
    let mut witness = mu_star.to_vec();
    let mut z = vec![0.0; s];
    for k in 1..=n_samples as u64 {
        let u = seq.point(k);
        let dir: Vec<f64> = u[1..].iter().map(|&v| normal_quantile(v)).collect::<Result<_>>()?;
        let len = norm(&dir);
        if len == 0.0 {
            continue;
        }
        let rho = radius * u[0].powf(1.0 / s as f64);
        for i in 0..s {
            z[i] = mu_star[i] + rho * dir[i] / len;
        }
        let d: Vec<f64> = z.iter().zip(mu_star).map(|(a, b)| a - b).collect();
        let denom = 0.5 * sigma_star.mahalanobis_sq(&d);
        if denom <= 0.0 {
            continue;
        }
        let ratio = model.psi(&z)? / denom;
        if ratio < worst {
            worst = ratio;
            witness.copy_from_slice(&z);
        }
    }
    Ok(LowerBoundReport {
        holds: delta == 0.0 || worst >= delta,
        worst_ratio: worst,
        witness,
    })
}
