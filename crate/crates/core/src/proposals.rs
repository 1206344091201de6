//! Importance-sampling proposals and log-domain weights.

use std::f64::consts::PI;
use std::fmt;

use log::warn;

use crate::error::{Error, Result};
use crate::models::{BipModel, GaussianPrior};
use crate::numerics::linalg::{norm, Matrix, SpdMatrix};
use crate::numerics::special::t_ln_pdf;
use crate::numerics::{minimize_with_hessian, Tolerances};

const EIGEN_FLOOR: f64 = 1e-10;
const RIDGE: f64 = 1e-8;

/// Marginal family of the standard-space variable `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Gaussian,
    Student { nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalKind {
    /// `(μ₀, Σ₀)`.
    Prior,
    /// `(μ*, Σ₀)`.
    Odis,
    /// `(μ*, m Σ*/n)`.
    Lapis {
        m: f64,
    },
    /// `(μ*, Σ*/(δ n))`.
    Newis {
        delta: f64,
    },
    Custom,
}

impl fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProposalKind::Prior => write!(f, "prior"),
            ProposalKind::Odis => write!(f, "odis"),
            ProposalKind::Lapis { m } if *m == 1.0 => write!(f, "lapis"),
            ProposalKind::Lapis { m } => write!(f, "lapis(m={m})"),
            ProposalKind::Newis { delta } => write!(f, "newis(delta={delta})"),
            ProposalKind::Custom => write!(f, "custom"),
        }
    }
}

/// `x = μ + L z` with `z` i.i.d. from the family and `Σ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub family: Family,
    pub mu: Vec<f64>,
    pub sigma: SpdMatrix,
    pub kind: ProposalKind,
}

impl Proposal {
    pub fn new(family: Family, mu: Vec<f64>, sigma: SpdMatrix, kind: ProposalKind) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::Dimension {
                context: "proposal mean and covariance",
                expected: sigma.dim(),
                got: mu.len(),
            });
        }
        if let Family::Student { nu } = family {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(Error::config(format!("proposal.nu must be positive, got {nu}")));
            }
        }
        Ok(Self {
            family,
            mu,
            sigma,
            kind,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Short label such as `newis(delta=0.75)` or `t-lapis`.
    pub fn label(&self) -> String {
        match self.family {
            Family::Gaussian => self.kind.to_string(),
            Family::Student { .. } => format!("t-{}", self.kind),
        }
    }

    /// `μ + L z`.
    pub fn to_domain(&self, z: &[f64]) -> Vec<f64> {
        let lz = self.sigma.factor_mul(z);
        self.mu.iter().zip(lz).map(|(m, v)| m + v).collect()
    }

    /// `L⁻¹ (x − μ)`.
    pub fn to_standard(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.mu).map(|(a, b)| a - b).collect();
        self.sigma.factor_solve(&d)
    }

    /// Log density of `x` under the proposal.
    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let s = self.dim() as f64;
        match self.family {
            Family::Gaussian => {
                let d: Vec<f64> = x.iter().zip(&self.mu).map(|(a, b)| a - b).collect();
                -0.5 * (s * (2.0 * PI).ln() + self.sigma.log_det() + self.sigma.mahalanobis_sq(&d))
            }
            Family::Student { nu } => {
                let z = self.to_standard(x);
                z.iter().map(|&v| t_ln_pdf(v, nu)).sum::<f64>() - 0.5 * self.sigma.log_det()
            }
        }
    }
}

/// Proposal construction inputs beyond the kind itself.
#[derive(Debug, Clone, Copy)]
pub struct ProposalInputs<'a> {
    pub mu_star: &'a [f64],
    pub sigma_star: &'a SpdMatrix,
}

/// Builds a proposal of the given kind and family.
pub fn build_proposal(
    kind: ProposalKind,
    family: Family,
    model: &BipModel,
    inputs: ProposalInputs<'_>,
) -> Result<Proposal> {
    let n = model.n();
    let (mu, sigma) = match kind {
        ProposalKind::Prior => (model.prior.mean.clone(), model.prior.cov.clone()),
        ProposalKind::Odis => (inputs.mu_star.to_vec(), model.prior.cov.clone()),
        ProposalKind::Lapis { m } => {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::config(format!("proposal.m must be positive, got {m}")));
            }
            (inputs.mu_star.to_vec(), inputs.sigma_star.scaled(m / n)?)
        }
        ProposalKind::Newis { delta } => {
            if !(delta > 0.0 && delta <= 1.0) {
                return Err(Error::config(format!(
                    "proposal.delta: newis requires delta>0 (and at most 1), got {delta}"
                )));
            }
            (inputs.mu_star.to_vec(), inputs.sigma_star.scaled(1.0 / (delta * n))?)
        }
        ProposalKind::Custom => {
            return Err(Error::config("custom proposals are built with Proposal::new"));
        }
    };
    Proposal::new(family, mu, sigma, kind)
}

/// `log W(x) = log π₀(x) − log q(x)` for a Gaussian proposal.
pub fn log_weight_gaussian(prop: &Proposal, prior: &GaussianPrior, x: &[f64]) -> f64 {
    let dq: Vec<f64> = x.iter().zip(&prop.mu).map(|(a, b)| a - b).collect();
    let d0: Vec<f64> = x.iter().zip(&prior.mean).map(|(a, b)| a - b).collect();
    0.5 * (prop.sigma.log_det() - prior.cov.log_det())
        + 0.5 * (prop.sigma.mahalanobis_sq(&dq) - prior.cov.mahalanobis_sq(&d0))
}

/// `log W_t(x)` for a Student proposal, `x = μ + L z`.
pub fn log_weight_student(prop: &Proposal, prior: &GaussianPrior, x: &[f64], z: &[f64]) -> f64 {
    let Family::Student { nu } = prop.family else {
        return log_weight_gaussian(prop, prior, x);
    };
    let s = x.len() as f64;
    let d0: Vec<f64> = x.iter().zip(&prior.mean).map(|(a, b)| a - b).collect();
    0.5 * prop.sigma.log_det()
        - 0.5 * s * (2.0 * PI).ln()
        - 0.5 * prior.cov.log_det()
        - 0.5 * prior.cov.mahalanobis_sq(&d0)
        - z.iter().map(|&v| t_ln_pdf(v, nu)).sum::<f64>()
}

/// Dispatches on the proposal family.
pub fn log_weight(prop: &Proposal, prior: &GaussianPrior, x: &[f64], z: &[f64]) -> f64 {
    match prop.family {
        Family::Gaussian => log_weight_gaussian(prop, prior, x),
        Family::Student { .. } => log_weight_student(prop, prior, x, z),
    }
}

/// A signed value stored as `sign · exp(log_abs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogValue {
    pub log_abs: f64,
    pub sign: i8,
}

impl LogValue {
    pub const ZERO: LogValue = LogValue {
        log_abs: f64::NEG_INFINITY,
        sign: 0,
    };

    pub fn value(&self) -> f64 {
        f64::from(self.sign) * self.log_abs.exp()
    }
}

/// `G_IS(z) = f(x) e^{−nΨ(x)} W(x)` with `x = μ + L z`, in log form.
pub fn log_integrand(model: &BipModel, prop: &Proposal, f: &dyn Fn(&[f64]) -> f64, z: &[f64]) -> Result<LogValue> {
    let x = prop.to_domain(z);
    log_integrand_at(model, prop, f, &x, z)
}

pub(crate) fn log_integrand_at(
    model: &BipModel,
    prop: &Proposal,
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    z: &[f64],
) -> Result<LogValue> {
    let fx = f(x);
    if fx.is_nan() {
        return Err(Error::NonFinite("test function"));
    }
    if fx == 0.0 {
        return Ok(LogValue::ZERO);
    }
    let psi = model.psi(x)?;
    let lw = log_weight(prop, &model.prior, x, z);
    let log_abs = fx.abs().ln() - model.n() * psi + lw;
    if log_abs.is_nan() {
        return Err(Error::NonFinite("log integrand"));
    }
    Ok(LogValue {
        log_abs,
        sign: if fx > 0.0 { 1 } else { -1 },
    })
}

/// How `Σ*` is formed from second derivatives at `μ*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianMode {
    /// `Σ* = (∇²Ψ(μ*))⁻¹`.
    #[default]
    Potential,
    /// `Σ* = (∇²Ψ(μ*) + Σ₀⁻¹/n)⁻¹`, so that `Σ*/n` is the Laplace covariance
    /// of the posterior itself. Needed when `∇²Ψ` is rank deficient.
    Posterior,
}

#[derive(Debug, Clone)]
pub struct MapPoint {
    pub mu_star: Vec<f64>,
    pub sigma_star: SpdMatrix,
    pub psi: f64,
    /// Whether a ridge was added to the Hessian before inversion.
    pub regularized: bool,
}

/// Minimizes `Ψ` from `μ₀`, the origin, and any extra starts, keeping the
/// best result, then forms `Σ*`.
pub fn find_map(model: &BipModel, extra_starts: &[Vec<f64>], mode: HessianMode, tol: &Tolerances) -> Result<MapPoint> {
    let s = model.s();
    let mut starts = vec![model.prior.mean.clone()];
    if norm(&model.prior.mean) != 0.0 {
        starts.push(vec![0.0; s]);
    }
    starts.extend(extra_starts.iter().cloned());

    let f = |z: &[f64]| model.psi(z).unwrap_or(f64::NAN);
    let g = |z: &[f64]| model.grad_psi(z, tol).unwrap_or_else(|_| vec![f64::NAN; z.len()]);
    let h = |z: &[f64]| model.hessian_psi(z, tol);

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_err = None;
    for x0 in &starts {
        if x0.len() != s {
            return Err(Error::Dimension {
                context: "find_map start",
                expected: s,
                got: x0.len(),
            });
        }
        match minimize_with_hessian(f, g, h, x0, tol) {
            Ok(x) => {
                let v = f(&x);
                if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                    best = Some((v, x));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((psi, mu_star)) = best else {
        return Err(last_err.unwrap_or(Error::NonConvergence {
            what: "find_map",
            iterations: 0,
            last: Vec::new(),
        }));
    };

    let mut hess = model.hessian_psi(&mu_star, tol)?;
    if mode == HessianMode::Posterior {
        let p = model.prior.cov.inverse()?.matrix().scale(1.0 / model.n());
        hess = hess.add(&p)?;
    }
    let (sigma_star, regularized) = sigma_from_hessian(&hess)?;
    Ok(MapPoint {
        mu_star,
        sigma_star,
        psi,
        regularized,
    })
}

/// Inverts a Hessian, adding `1e-8·I` when its smallest eigenvalue is below
/// `1e-10`.
pub fn sigma_from_hessian(hess: &Matrix) -> Result<(SpdMatrix, bool)> {
    let h = hess.symmetrized();
    let (eig, _) = crate::numerics::symmetric_eigen(&h);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = eig.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if min < -1e-6 * scale {
        return Err(Error::config(format!(
            "Hessian of the potential at the MAP point is indefinite (smallest eigenvalue {min:e}); \
             use proposal.laplace_hessian = posterior for a damped Hessian"
        )));
    }
    let mut regularized = false;
    let mut h = h;
    if min < EIGEN_FLOOR {
        warn!("Hessian eigenvalue {min:e} below {EIGEN_FLOOR:e}; adding {RIDGE:e} * I before inversion");
        for i in 0..h.rows() {
            h[(i, i)] += RIDGE;
        }
        regularized = true;
    }
    Ok((SpdMatrix::new(h)?.inverse()?, regularized))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{pde_problem, toy_problem, toy_problem_with};
    use crate::numerics::normal_quantile;
    use crate::numerics::special::t_quantile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_map(tau: f64, n: f64) -> (BipModel, MapPoint) {
        let m = toy_problem(4, tau, n).unwrap();
        let map = find_map(&m, &[], HessianMode::Potential, &Tolerances::default()).unwrap();
        (m, map)
    }

    fn inputs(map: &MapPoint) -> ProposalInputs<'_> {
        ProposalInputs {
            mu_star: &map.mu_star,
            sigma_star: &map.sigma_star,
        }
    }

    #[test]
    fn toy_map_point() {
        let (_, map) = toy_map(1.0, 100.0);
        for i in 0..4 {
            assert!(map.mu_star[i].abs() < 1e-6);
            for j in 0..4 {
                let want = if i == j { 0.25 } else { 0.0 };
                assert!((map.sigma_star.matrix()[(i, j)] - want).abs() < 1e-6);
            }
        }
        assert!(!map.regularized);
    }

    #[test]
    fn linear_map_point() {
        let b = vec![0.7, -2.0, 3.0];
        let m = toy_problem_with(GaussianPrior::standard(3), 0.0, 1.0, b.clone()).unwrap();
        let map = find_map(&m, &[], HessianMode::Potential, &Tolerances::default()).unwrap();
        for (a, e) in map.mu_star.iter().zip(&b) {
            assert!((a - e).abs() < 1e-8);
        }
    }

    #[test]
    fn kinds_on_toy_model() {
        let (m, map) = toy_map(1.0, 100.0);
        let newis = build_proposal(ProposalKind::Newis { delta: 0.25 }, Family::Gaussian, &m, inputs(&map)).unwrap();
        for i in 0..4 {
            assert!((newis.sigma.matrix()[(i, i)] - 0.01).abs() < 1e-8);
        }
        let prior = build_proposal(ProposalKind::Prior, Family::Gaussian, &m, inputs(&map)).unwrap();
        assert_eq!(prior.mu, vec![1.0; 4]);
        assert_eq!(prior.sigma.matrix()[(2, 3)], 3.0);

        let m2 = m.with_noise_level(2000.0).unwrap();
        let lapis = build_proposal(ProposalKind::Lapis { m: 1.0 }, Family::Gaussian, &m2, inputs(&map)).unwrap();
        assert!((lapis.sigma.matrix()[(0, 0)] - 0.25 / 2000.0).abs() < 1e-10);

        let one = build_proposal(ProposalKind::Newis { delta: 1.0 }, Family::Gaussian, &m2, inputs(&map)).unwrap();
        assert_eq!(one.mu, lapis.mu);
        assert_eq!(one.sigma.matrix(), lapis.sigma.matrix());
        assert_eq!(one.sigma.factor(), lapis.sigma.factor());

        assert!(build_proposal(ProposalKind::Newis { delta: 0.0 }, Family::Gaussian, &m, inputs(&map)).is_err());
    }

    #[test]
    fn gaussian_weight_examples() {
        let prior = GaussianPrior::standard(1);
        let p = Proposal::new(
            Family::Gaussian,
            vec![0.0],
            SpdMatrix::from_diag(&[4.0]).unwrap(),
            ProposalKind::Custom,
        )
        .unwrap();
        assert!((log_weight_gaussian(&p, &prior, &[0.0]) - 0.5 * 4f64.ln()).abs() < 1e-15);

        let prior = GaussianPrior::new(vec![1.0, 2.0], SpdMatrix::from_diag(&[2.0, 0.5]).unwrap()).unwrap();
        let same = Proposal::new(
            Family::Gaussian,
            prior.mean.clone(),
            prior.cov.clone(),
            ProposalKind::Prior,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = [rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)];
            assert_eq!(log_weight_gaussian(&same, &prior, &x), 0.0);
        }
    }

    #[test]
    fn gaussian_weight_matches_density_quotient() {
        // Densities evaluated from the explicit inverse and determinant.
        let prior_cov = Matrix::from_rows(&[vec![2.0, 0.3, 0.1], vec![0.3, 1.0, -0.2], vec![0.1, -0.2, 0.7]]).unwrap();
        let prop_cov = Matrix::from_rows(&[vec![0.5, -0.1, 0.0], vec![-0.1, 0.3, 0.05], vec![0.0, 0.05, 0.9]]).unwrap();
        let det3 = |a: &Matrix| {
            a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
                - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
                + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)])
        };
        let inv3 = |a: &Matrix| {
            let d = det3(a);
            Matrix::from_fn(3, 3, |i, j| {
                let (r0, r1) = ([1, 0, 0][j], [2, 2, 1][j]);
                let (c0, c1) = ([1, 0, 0][i], [2, 2, 1][i]);
                let minor = a[(r0, c0)] * a[(r1, c1)] - a[(r0, c1)] * a[(r1, c0)];
                if (i + j) % 2 == 0 {
                    minor / d
                } else {
                    -minor / d
                }
            })
        };
        let quad = |a: &Matrix, v: &[f64]| {
            let ai = inv3(a);
            (0..3)
                .map(|i| (0..3).map(|j| v[i] * ai[(i, j)] * v[j]).sum::<f64>())
                .sum::<f64>()
        };
        let mu0 = [0.5, -1.0, 0.2];
        let mu = [0.1, 0.0, -0.3];
        let prior = GaussianPrior::new(mu0.to_vec(), SpdMatrix::new(prior_cov.clone()).unwrap()).unwrap();
        let prop = Proposal::new(
            Family::Gaussian,
            mu.to_vec(),
            SpdMatrix::new(prop_cov.clone()).unwrap(),
            ProposalKind::Custom,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d0: Vec<f64> = x.iter().zip(&mu0).map(|(a, b)| a - b).collect();
            let d: Vec<f64> = x.iter().zip(&mu).map(|(a, b)| a - b).collect();
            let p0 = (-0.5 * quad(&prior_cov, &d0)).exp() / det3(&prior_cov).sqrt();
            let q = (-0.5 * quad(&prop_cov, &d)).exp() / det3(&prop_cov).sqrt();
            let want = (p0 / q).ln();
            assert!((log_weight_gaussian(&prop, &prior, &x) - want).abs() < 1e-10);
        }
    }

    #[test]
    fn student_weight_at_mode() {
        let prior = GaussianPrior::standard(1);
        let p = Proposal::new(
            Family::Student { nu: 5.0 },
            vec![0.0],
            SpdMatrix::identity(1),
            ProposalKind::Custom,
        )
        .unwrap();
        let g = statrs::function::gamma::gamma;
        let want = -0.5 * (2.0 * PI).ln() - (g(3.0) / ((5.0 * PI).sqrt() * g(2.5))).ln();
        assert!((log_weight_student(&p, &prior, &[0.0], &[0.0]) - want).abs() < 1e-13);
        let far = log_weight_student(&p, &prior, &[50.0], &[50.0]);
        assert!(far.is_finite());
    }

    fn mean_weight(prop: &Proposal, prior: &GaussianPrior, draws: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = prop.dim();
        let ws: Vec<f64> = (0..draws)
            .map(|_| {
                let z: Vec<f64> = (0..s)
                    .map(|_| {
                        let u: f64 = rng.random_range(1e-300..1.0);
                        match prop.family {
                            Family::Gaussian => normal_quantile(u).unwrap(),
                            Family::Student { nu } => t_quantile(u, nu).unwrap(),
                        }
                    })
                    .collect();
                let x = prop.to_domain(&z);
                log_weight(prop, prior, &x, &z).exp()
            })
            .collect();
        let mean = ws.iter().sum::<f64>() / draws as f64;
        let var = ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        (mean, (var / draws as f64).sqrt())
    }

    #[test]
    fn weights_self_normalize() {
        // A standard-error check needs finite weight variance, which holds
        // when every proposal covariance exceeds half the prior's.
        let m = toy_problem_with(GaussianPrior::standard(4), 1.0, 0.1, vec![0.0; 4]).unwrap();
        let map = find_map(&m, &[], HessianMode::Potential, &Tolerances::default()).unwrap();
        let kinds = [
            ProposalKind::Prior,
            ProposalKind::Odis,
            ProposalKind::Lapis { m: 1.0 },
            ProposalKind::Newis { delta: 0.25 },
        ];
        for (i, kind) in kinds.into_iter().enumerate() {
            for family in [Family::Gaussian, Family::Student { nu: 5.0 }] {
                let p = build_proposal(kind, family, &m, inputs(&map)).unwrap();
                let (mean, se) = mean_weight(&p, &m.prior, 1 << 14, 100 + i as u64);
                assert!((mean - 1.0).abs() <= 3.0 * se, "{} mean {mean} se {se}", p.label());
            }
        }
    }

    #[test]
    fn integrand_examples() {
        let m = toy_problem(3, 0.0, 7.0).unwrap();
        let r = m.recentered(&[0.0; 3]).unwrap();
        let p = build_proposal(
            ProposalKind::Prior,
            Family::Gaussian,
            &r,
            ProposalInputs {
                mu_star: &[0.0; 3],
                sigma_star: &SpdMatrix::identity(3),
            },
        )
        .unwrap();
        let v = log_integrand(&r, &p, &|_| 1.0, &[0.0; 3]).unwrap();
        assert_eq!(v.sign, 1);
        assert!((v.log_abs + 7.0 * r.psi(&r.prior.mean).unwrap()).abs() < 1e-12);

        let z0 = p.to_standard(&[0.0; 3]);
        let x = p.to_domain(&z0);
        let at_zero = log_integrand_at(&r, &p, &|x| norm(x), &[0.0; 3], &z0).unwrap();
        assert_eq!(at_zero, LogValue::ZERO);
        assert!(norm(&x) < 1e-12);
    }

    #[test]
    fn integrand_is_finite_at_huge_noise_level() {
        let (m, map) = toy_map(1.0, 1e6);
        let p = build_proposal(ProposalKind::Newis { delta: 0.25 }, Family::Gaussian, &m, inputs(&map)).unwrap();
        let gen = crate::lattice::GeneratingVector::bundled();
        let lat = crate::lattice::ShiftedLattice::with_seed(&gen, 1024, 4, 5).unwrap();
        for k in 0..1024 {
            let z: Vec<f64> = lat.point(k).iter().map(|&u| normal_quantile(u).unwrap()).collect();
            let v = log_integrand(&m, &p, &|x| norm(x), &z).unwrap();
            assert!(v.log_abs.is_finite());
        }
    }

    #[test]
    fn affine_consistency() {
        let (m, map) = toy_map(1.0, 30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for family in [Family::Gaussian, Family::Student { nu: 4.0 }] {
            let p = build_proposal(ProposalKind::Newis { delta: 0.5 }, family, &m, inputs(&map)).unwrap();
            for _ in 0..100 {
                let z: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let x = p.to_domain(&z);
                let got = log_integrand(&m, &p, &|x| norm(x), &z).unwrap();
                let want = norm(&x).ln() - 30.0 * m.psi(&x).unwrap() + m.prior.ln_pdf(&x) - p.ln_pdf(&x);
                assert!(
                    (got.log_abs - want).abs() < 1e-9 * (1.0 + want.abs()),
                    "{} vs {want}",
                    got.log_abs
                );
            }
        }
    }

    #[test]
    fn pde_map_reduces_misfit() {
        let m = pde_problem(8, 32, 1000.0).unwrap();
        let tol = Tolerances::default();
        let map = find_map(&m, &[], HessianMode::Posterior, &tol).unwrap();
        let r0 = m.psi(&m.prior.mean).unwrap();
        assert!(map.psi <= r0);
        assert!(map.psi < 1e-12, "{}", map.psi);
        assert!(map.sigma_star.min_eigenvalue() > 0.0);
    }

    #[test]
    fn indefinite_hessian_is_rejected() {
        let h = Matrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(sigma_from_hessian(&h), Err(Error::Config(_))));
        let (s, reg) = sigma_from_hessian(&Matrix::from_diag(&[1.0, 0.0])).unwrap();
        assert!(reg);
        assert!((s.matrix()[(1, 1)] - 1e8).abs() < 1.0);
    }
}
