//! Shift-averaged worst-case error of rank-1 lattice rules in weighted
//! spaces on `ℝ^s`, component-by-component construction and the associated
//! a priori RMSE bound.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::GeneratingVector;
use crate::numerics::special::{
    self, euler_totient, gcd, normal_cdf, normal_pdf, normal_quantile_unchecked, normal_sf, riemann_zeta,
};
use crate::numerics::{integrate_1d, integrate_1d_with_breaks, Tolerances};

/// Marginal sampling density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Density {
    /// `N(0, variance)`.
    Gaussian { variance: f64 },
    /// Student-t with `dof` degrees of freedom.
    Student { dof: f64 },
}

/// Weight function of the function space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightFunction {
    /// `ψ(t) = exp(-t²/(2α))`.
    GaussianDecay { alpha: f64 },
    /// `ψ(t) = (1+|t|)^{-α}`.
    PolynomialDecay { alpha: f64 },
}

/// A density paired with a weight function, and the convergence exponent
/// `r` the pairing admits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistributionPairing {
    phi: Density,
    psi: WeightFunction,
    r: f64,
}

impl DistributionPairing {
    /// Validates the pairing. `delta_psi` is only used (and required) for a
    /// Gaussian density with polynomial weight.
    pub fn new(phi: Density, psi: WeightFunction, delta_psi: Option<f64>) -> Result<Self> {
        let r = match (phi, psi) {
            (Density::Gaussian { variance: nu }, WeightFunction::GaussianDecay { alpha }) => {
                positive("pairing.nu", nu)?;
                positive("pairing.alpha", alpha)?;
                if !(alpha > 2.0 * nu) {
                    return Err(Error::config(format!(
                        "pairing.alpha: Gaussian density with Gaussian weight needs alpha > 2 nu, got alpha = {alpha}, nu = {nu}"
                    )));
                }
                1.0 - nu / alpha
            }
            (Density::Gaussian { variance: nu }, WeightFunction::PolynomialDecay { alpha }) => {
                positive("pairing.nu", nu)?;
                positive("pairing.alpha", alpha)?;
                let d = delta_psi.ok_or_else(|| {
                    Error::config("pairing.delta_psi is required for a Gaussian density with polynomial weight")
                })?;
                let upper = 0.5f64.min(9.0 / 8.0 * alpha * nu);
                if !(d > 0.0 && d < upper) {
                    return Err(Error::config(format!(
                        "pairing.delta_psi = {d} must lie in (0, {upper})"
                    )));
                }
                1.0 - d
            }
            (Density::Student { dof: nu }, WeightFunction::PolynomialDecay { alpha }) => {
                positive("pairing.nu", nu)?;
                positive("pairing.alpha", alpha)?;
                if !(2.0 * alpha + 1.0 < nu) {
                    return Err(Error::config(format!(
                        "pairing.nu: Student density with polynomial weight needs 2 alpha + 1 < nu, got alpha = {alpha}, nu = {nu}"
                    )));
                }
                1.0 - (2.0 * alpha + 1.0) / (2.0 * nu)
            }
            (Density::Student { .. }, WeightFunction::GaussianDecay { .. }) => {
                return Err(Error::config(
                    "pairing: a Student density cannot be paired with a Gaussian weight",
                ))
            }
        };
        debug_assert!(r > 0.5 && r < 1.0);
        Ok(Self { phi, psi, r })
    }

    pub fn gaussian(nu: f64, alpha: f64) -> Result<Self> {
        Self::new(
            Density::Gaussian { variance: nu },
            WeightFunction::GaussianDecay { alpha },
            None,
        )
    }

    pub fn student(nu: f64, alpha: f64) -> Result<Self> {
        Self::new(
            Density::Student { dof: nu },
            WeightFunction::PolynomialDecay { alpha },
            None,
        )
    }

    pub fn phi(&self) -> Density {
        self.phi
    }

    pub fn psi(&self) -> WeightFunction {
        self.psi
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match self.phi {
            Density::Gaussian { variance } => normal_cdf(t / variance.sqrt()),
            Density::Student { dof } => special::t_cdf_unchecked(t, dof),
        }
    }

    /// `1 - Φ(t)` without cancellation.
    pub fn sf(&self, t: f64) -> f64 {
        match self.phi {
            Density::Gaussian { variance } => normal_sf(t / variance.sqrt()),
            Density::Student { dof } => special::t_cdf_unchecked(-t, dof),
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match self.phi {
            Density::Gaussian { variance } => {
                let sd = variance.sqrt();
                normal_pdf(t / sd) / sd
            }
            Density::Student { dof } => special::t_pdf(t, dof),
        }
    }

    /// `Φ⁻¹(u)` for `u ∈ (0,1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self.phi {
            Density::Gaussian { variance } => variance.sqrt() * normal_quantile_unchecked(u),
            Density::Student { dof } => special::t_quantile_unchecked(u, dof),
        }
    }

    /// `v ψ(t)⁻²`, zero whenever `v` is, even where `ψ⁻²` overflows.
    pub fn weighted(&self, t: f64, v: f64) -> f64 {
        if v == 0.0 {
            0.0
        } else {
            v * self.psi_inv_sq(t)
        }
    }

    /// `ψ(t)⁻²`.
    pub fn psi_inv_sq(&self, t: f64) -> f64 {
        match self.psi {
            WeightFunction::GaussianDecay { alpha } => (t * t / alpha).exp(),
            WeightFunction::PolynomialDecay { alpha } => (1.0 + t.abs()).powf(2.0 * alpha),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{key} must be positive, got {v}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightKind {
    Product,
    /// Product and order dependent.
    Pod,
}

/// Subset weights `γ_u = Π_{j∈u} γ_j` (product) or `Γ_{|u|} Π_{j∈u} γ_j` (POD).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightScheme {
    pub kind: WeightKind,
    gamma: Vec<f64>,
    /// `Γ_ℓ` stored at index `ℓ - 1`.
    order: Vec<f64>,
}

impl WeightScheme {
    pub fn product(gamma: Vec<f64>) -> Result<Self> {
        check_weights("weights.gamma", &gamma)?;
        Ok(Self {
            kind: WeightKind::Product,
            gamma,
            order: Vec::new(),
        })
    }

    pub fn pod(gamma: Vec<f64>, order: Vec<f64>) -> Result<Self> {
        check_weights("weights.gamma", &gamma)?;
        check_weights("weights.order", &order)?;
        if order.len() < gamma.len() {
            return Err(Error::config(format!(
                "weights.order has {} entries but {} are needed",
                order.len(),
                gamma.len()
            )));
        }
        Ok(Self {
            kind: WeightKind::Pod,
            gamma,
            order,
        })
    }

    /// POD weights with `Γ_ℓ = ℓ!` and `γ_j = c / j²`.
    pub fn default_pod(s: usize, c: f64) -> Result<Self> {
        let gamma = (1..=s).map(|j| c / (j * j) as f64).collect();
        let mut f = 1.0;
        let order = (1..=s)
            .map(|l| {
                f *= l as f64;
                f
            })
            .collect();
        Self::pod(gamma, order)
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn order(&self) -> &[f64] {
        &self.order
    }

    /// `Γ_ℓ`, equal to 1 for product weights.
    pub fn order_weight(&self, l: usize) -> f64 {
        match self.kind {
            WeightKind::Product => 1.0,
            WeightKind::Pod => self.order[l - 1],
        }
    }

    /// `γ_u` for a subset of 0-based coordinate indices.
    pub fn subset_weight(&self, u: &[usize]) -> f64 {
        if u.is_empty() {
            return 1.0;
        }
        let prod: f64 = u.iter().map(|&j| self.gamma[j]).product();
        self.order_weight(u.len()) * prod
    }

    /// Restricts to the first `s` coordinates.
    pub fn truncated(&self, s: usize) -> Result<Self> {
        if s > self.dim() {
            return Err(Error::config(format!(
                "weights cover {} coordinates but {s} are needed",
                self.dim()
            )));
        }
        Ok(Self {
            kind: self.kind,
            gamma: self.gamma[..s].to_vec(),
            order: self.order.iter().take(s).copied().collect(),
        })
    }
}

fn check_weights(key: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::config(format!("{key} is empty")));
    }
    for v in w {
        positive(key, *v)?;
    }
    Ok(())
}

/// The shift-invariant kernel
/// `θ(c) = ∫ ψ⁻²(t) [(Φ(t)-c)⁺ + (Φ(t)-1+c)⁺ - Φ(t)²] dt`.
///
/// ```
/// # use rqmc_is::wce::{theta, DistributionPairing};
/// # use rqmc_is::numerics::Tolerances;
/// let p = DistributionPairing::gaussian(1.0, 3.0).unwrap();
/// let tol = Tolerances::default();
/// let a = theta(0.3, &p, &tol).unwrap();
/// let b = theta(0.7, &p, &tol).unwrap();
/// assert!((a - b).abs() < 1e-10);
/// ```
pub fn theta(c: f64, pairing: &DistributionPairing, tol: &Tolerances) -> Result<f64> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::Domain {
            what: "theta",
            value: c,
            domain: "[0, 1)",
        });
    }
    let cc = 1.0 - c;
    // The bracket written so each region avoids cancellation.
    let f = |t: f64| {
        let a = pairing.cdf(t);
        let q = pairing.sf(t);
        let first = a >= c;
        let second = a >= cc;
        let bracket = match (first, second) {
            (true, true) => -q * q,
            (true, false) => a * q - c,
            (false, true) => a * q - cc,
            (false, false) => -a * a,
        };
        pairing.weighted(t, bracket)
    };
    let mut breaks = vec![0.0];
    if c > 0.0 {
        breaks.push(pairing.quantile(c));
        breaks.push(pairing.quantile(cc));
    }
    integrate_1d_with_breaks(f, f64::NEG_INFINITY, f64::INFINITY, &breaks, tol).map_err(|e| match e {
        Error::Quadrature { estimate, error, .. } => Error::Quadrature {
            estimate,
            error,
            context: format!(" for theta({c})"),
        },
        other => other,
    })
}

/// Fourier coefficient `θ̂(h) = (π h)⁻² ∫ ψ⁻²(t) sin²(π h Φ(t)) dt`.
///
/// The integrand is even about the median, so only the left half is
/// integrated, split at `Φ⁻¹(k/h)` so each piece holds one oscillation.
pub fn theta_fourier(h: i64, pairing: &DistributionPairing, tol: &Tolerances) -> Result<f64> {
    if h == 0 {
        return Err(Error::Domain {
            what: "theta_fourier",
            value: 0.0,
            domain: "nonzero integers",
        });
    }
    let ha = h.unsigned_abs();
    let hf = ha as f64;
    let f = |t: f64| {
        let s = (PI * hf * pairing.cdf(t)).sin();
        pairing.weighted(t, s * s)
    };
    let breaks: Vec<f64> = (1..=ha / 2)
        .map(|k| k as f64 / hf)
        .filter(|&u| u < 0.5)
        .map(|u| pairing.quantile(u))
        .collect();
    let half = integrate_1d_with_breaks(f, f64::NEG_INFINITY, 0.0, &breaks, tol)?;
    Ok(2.0 * half / (PI * PI * hf * hf))
}

/// `θ(k/N)` for `k = 0..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaTable {
    n: u64,
    pub pairing: DistributionPairing,
    values: Vec<f64>,
}

impl ThetaTable {
    /// Evaluates the table in parallel, using `θ(c) = θ(1-c)` to halve the work.
    pub fn new(n: u64, pairing: &DistributionPairing, tol: &Tolerances) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("theta table needs N >= 1"));
        }
        let half: Vec<f64> = (0..=n / 2)
            .into_par_iter()
            .map(|k| theta(k as f64 / n as f64, pairing, tol))
            .collect::<Result<_>>()?;
        let values = (0..n).map(|k| half[k.min(n - k) as usize]).collect::<Vec<_>>();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("theta table"));
        }
        Ok(Self {
            n,
            pairing: *pairing,
            values,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `θ({k z / N})`.
    #[inline]
    pub fn at(&self, k: u64, z: u64) -> f64 {
        self.values[((k % self.n) * (z % self.n) % self.n) as usize]
    }
}

/// Squared shift-averaged worst-case error
/// `Σ_{∅≠u} (γ_u/N) Σ_k Π_{j∈u} θ({k z_j/N})`.
///
/// Product weights use `(1/N) Σ_k [Π_j (1 + γ_j θ_jk) - 1]`; POD weights use
/// elementary symmetric polynomials of `γ_j θ_jk`.
pub fn shift_avg_wce(
    z: &GeneratingVector,
    n: u64,
    s: usize,
    weights: &WeightScheme,
    table: &ThetaTable,
) -> Result<f64> {
    if table.n() != n {
        return Err(Error::config(format!(
            "theta table was built for N = {} but N = {n} was requested",
            table.n()
        )));
    }
    if s > z.len() || s > weights.dim() {
        return Err(Error::config(format!(
            "dimension {s} exceeds the generating vector ({}) or weights ({})",
            z.len(),
            weights.dim()
        )));
    }
    let zc = &z.components()[..s];
    let gamma = weights.gamma();
    let mut total = 0.0;
    let mut e = vec![0.0; s + 1];
    for k in 0..n {
        match weights.kind {
            WeightKind::Product => {
                let p: f64 = zc.iter().zip(gamma).map(|(&zj, g)| 1.0 + g * table.at(k, zj)).product();
                total += p - 1.0;
            }
            WeightKind::Pod => {
                elementary_symmetric(zc.iter().zip(gamma).map(|(&zj, g)| g * table.at(k, zj)), &mut e);
                total += (1..=s).map(|l| weights.order_weight(l) * e[l]).sum::<f64>();
            }
        }
    }
    Ok(total / n as f64)
}

/// Fills `e[ℓ]` with the ℓ-th elementary symmetric polynomial of `xs`.
fn elementary_symmetric(xs: impl Iterator<Item = f64>, e: &mut [f64]) {
    e.iter_mut().for_each(|v| *v = 0.0);
    e[0] = 1.0;
    let mut d = 0;
    for x in xs {
        d += 1;
        for l in (1..=d.min(e.len() - 1)).rev() {
            e[l] += x * e[l - 1];
        }
    }
}

/// Component-by-component construction. Returns the vector and the squared
/// worst-case error after each component.
pub fn cbc_with_table(s: usize, weights: &WeightScheme, table: &ThetaTable) -> Result<(GeneratingVector, Vec<f64>)> {
    let n = table.n();
    if n < 2 {
        return Err(Error::config("CBC needs N >= 2"));
    }
    if s == 0 || s > weights.dim() {
        return Err(Error::config(format!(
            "CBC dimension {s} must be between 1 and the number of weights {}",
            weights.dim()
        )));
    }
    let candidates: Vec<u64> = (1..n).filter(|&c| gcd(c, n) == 1).collect();
    let nk = n as usize;
    // Per-point state: e[k][ℓ] elementary symmetric polynomials so far.
    let mut e = vec![vec![0.0; s + 1]; nk];
    for ek in &mut e {
        ek[0] = 1.0;
    }
    let mut z = Vec::with_capacity(s);
    let mut errors = Vec::with_capacity(s);
    for d in 0..s {
        let g = weights.gamma()[d];
        // e² (c) = (1/N) Σ_k [A_k + γ_d θ(k c / N) B_k]
        let (a, b): (Vec<f64>, Vec<f64>) = e
            .iter()
            .map(|ek| {
                let a: f64 = (1..=d).map(|l| weights.order_weight(l) * ek[l]).sum();
                let b: f64 = (1..=d + 1).map(|l| weights.order_weight(l) * ek[l - 1]).sum();
                (a, b)
            })
            .unzip();
        let score = |c: u64| -> f64 {
            let mut sum = 0.0;
            for k in 0..n {
                sum += a[k as usize] + g * table.at(k, c) * b[k as usize];
            }
            sum / n as f64
        };
        let (best, best_c) = if d == 0 {
            (score(1), 1)
        } else {
            candidates.par_iter().map(|&c| (score(c), c)).reduce(
                || (f64::INFINITY, u64::MAX),
                |x, y| match x.0.total_cmp(&y.0) {
                    std::cmp::Ordering::Less => x,
                    std::cmp::Ordering::Greater => y,
                    std::cmp::Ordering::Equal => {
                        if x.1 <= y.1 {
                            x
                        } else {
                            y
                        }
                    }
                },
            )
        };
        if best_c == u64::MAX {
            return Err(Error::config(format!("no candidate coprime to N = {n}")));
        }
        for (k, ek) in e.iter_mut().enumerate() {
            let x = g * table.at(k as u64, best_c);
            for l in (1..=d + 1).rev() {
                ek[l] += x * ek[l - 1];
            }
        }
        z.push(best_c);
        errors.push(best);
    }
    Ok((GeneratingVector::new(z, "cbc", false)?, errors))
}

/// CBC construction of an `s`-dimensional generating vector for `N` points.
pub fn cbc_construct(
    n: u64,
    s: usize,
    weights: &WeightScheme,
    pairing: &DistributionPairing,
    tol: &Tolerances,
) -> Result<GeneratingVector> {
    let table = ThetaTable::new(n, pairing, tol)?;
    Ok(cbc_with_table(s, weights, &table)?.0)
}

/// A priori RMSE bound for a CBC lattice:
/// `(1/φ(N) Σ_{∅≠u} γ_u^{1/(2λ)} (2 C^{1/(2λ)} ζ(r/λ))^{|u|})^λ ‖G‖`.
#[allow(clippy::too_many_arguments)]
pub fn rmse_bound(n: u64, s: usize, weights: &WeightScheme, c: f64, r: f64, lambda: f64, norm_f: f64) -> Result<f64> {
    if !(lambda >= 0.5 && lambda < r) {
        return Err(Error::Domain {
            what: "rmse_bound lambda",
            value: lambda,
            domain: "[1/2, r)",
        });
    }
    if !(c > 0.0) {
        return Err(Error::Domain {
            what: "rmse_bound constant C",
            value: c,
            domain: "(0, inf)",
        });
    }
    if s > weights.dim() {
        return Err(Error::config(format!(
            "weights cover {} coordinates but s = {s}",
            weights.dim()
        )));
    }
    if norm_f == 0.0 {
        return Ok(0.0);
    }
    let p = 1.0 / (2.0 * lambda);
    let a = 2.0 * c.powf(p) * riemann_zeta(r / lambda)?;
    let xs = weights.gamma()[..s].iter().map(|g| a * g.powf(p));
    let sum = match weights.kind {
        WeightKind::Product => xs.map(|x| 1.0 + x).product::<f64>() - 1.0,
        WeightKind::Pod => {
            let mut e = vec![0.0; s + 1];
            elementary_symmetric(xs, &mut e);
            (1..=s).map(|l| weights.order_weight(l).powf(p) * e[l]).sum()
        }
    };
    let phi = euler_totient(n) as f64;
    Ok((sum / phi).powf(lambda) * norm_f)
}

/// Estimates the constant in `θ̂(h) <= C |h|^{-2r}` as the maximum of
/// `θ̂(h) |h|^{2r}` over the sampled `h`.
pub fn assumption_constant(pairing: &DistributionPairing, hs: &[i64], tol: &Tolerances) -> Result<f64> {
    let r = pairing.r();
    let vals = hs
        .par_iter()
        .map(|&h| Ok(theta_fourier(h, pairing, tol)? * (h.unsigned_abs() as f64).powf(2.0 * r)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// Least-squares slope of `log y` against `log x`.
///
/// ```
/// # use rqmc_is::wce::fit_decay_rate;
/// let xs = [1.0, 2.0, 4.0, 8.0];
/// let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
/// assert!((fit_decay_rate(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
/// ```
pub fn fit_decay_rate(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            context: "fit_decay_rate",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::Domain {
            what: "fit_decay_rate point count",
            value: xs.len() as f64,
            domain: "at least 3 points",
        });
    }
    for &v in xs.iter().chain(ys) {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain {
                what: "fit_decay_rate data",
                value: v,
                domain: "(0, inf)",
            });
        }
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain {
            what: "fit_decay_rate abscissae",
            value: xs[0],
            domain: "at least two distinct values",
        });
    }
    Ok(sxy / sxx)
}

/// The two tail integrals `∫_{-∞}^0 Φ/ψ²` and `∫_0^∞ (1-Φ)/ψ²`; both finite
/// exactly when the weighted space embeds in `L²_φ`.
pub fn embedding_integrals(pairing: &DistributionPairing, tol: &Tolerances) -> Result<(f64, f64)> {
    let left = integrate_1d(|t| pairing.weighted(t, pairing.cdf(t)), f64::NEG_INFINITY, 0.0, tol)?;
    let right = integrate_1d(|t| pairing.weighted(t, pairing.sf(t)), 0.0, f64::INFINITY, tol)?;
    Ok((left, right))
}
