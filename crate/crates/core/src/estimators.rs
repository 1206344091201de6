//! Monte Carlo and randomly shifted lattice estimators of posterior
//! integrals, replication studies, and predicted convergence rates.

use std::cell::RefCell;

use log::warn;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{GeneratingVector, ShiftedLattice};
use crate::models::BipModel;
use crate::numerics::{integrate_1d, Tolerances};
use crate::proposals::{find_map, log_weight, Family, HessianMode, LogValue, Proposal};
use crate::wce::{fit_decay_rate, Density, DistributionPairing};

const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;
const MAX_FAILED_FRACTION: f64 = 0.1;

/// Test functions are shared across worker threads.
pub type TestFn<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mc,
    Rqmc,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mc => "mc",
            Method::Rqmc => "rqmc",
        })
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub method: Method,
    /// Points per replication.
    pub n_points: u64,
    pub reps: usize,
    pub master_seed: u64,
    pub pairing: DistributionPairing,
    pub generator: GeneratingVector,
}

impl EstimatorConfig {
    /// Uses the bundled generating vector.
    pub fn new(method: Method, n_points: u64, reps: usize, master_seed: u64, pairing: DistributionPairing) -> Self {
        Self {
            method,
            n_points,
            reps,
            master_seed,
            pairing,
            generator: GeneratingVector::bundled(),
        }
    }

    pub fn with_points(&self, n_points: u64) -> Self {
        Self {
            n_points,
            ..self.clone()
        }
    }

    pub fn validate(&self, s: usize) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::config("run.N must be at least 1"));
        }
        if self.reps == 0 {
            return Err(Error::config("run.reps must be at least 1"));
        }
        if self.method == Method::Rqmc {
            self.generator.check_modulus(self.n_points, s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateStats {
    pub per_rep_values: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    /// Replications whose ratio was undefined (excluded from the mean).
    pub failed_reps: usize,
    /// Replications where every term underflowed to zero.
    pub underflow_reps: usize,
}

impl EstimateStats {
    fn from_values(values: Vec<f64>, underflow_reps: usize) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let failed_reps = values.len() - finite.len();
        let m = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / m;
        let stderr = if finite.len() > 1 {
            (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
        } else {
            0.0
        };
        Self {
            per_rep_values: values,
            mean,
            stderr,
            failed_reps,
            underflow_reps,
        }
    }

    /// Sample standard deviation across replications.
    pub fn std_dev(&self) -> f64 {
        self.stderr * ((self.per_rep_values.len() - self.failed_reps) as f64).sqrt()
    }
}

/// Streaming `log Σ exp(l_i)`.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn add(&mut self, l: f64) {
        if l == f64::NEG_INFINITY {
            return;
        }
        if l > self.max {
            self.sum = self.sum * (self.max - l).exp() + 1.0;
            self.max = l;
        } else {
            self.sum += (l - self.max).exp();
        }
    }

    pub fn ln(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Positive and negative mass tracked separately.
#[derive(Debug, Clone, Copy, Default)]
pub struct SignedLogSum {
    pub pos: LogSumExp,
    pub neg: LogSumExp,
}

impl SignedLogSum {
    pub fn add(&mut self, v: LogValue) {
        match v.sign {
            1 => self.pos.add(v.log_abs),
            -1 => self.neg.add(v.log_abs),
            _ => {}
        }
    }

    pub fn is_zero(&self) -> bool {
        self.pos.ln() == f64::NEG_INFINITY && self.neg.ln() == f64::NEG_INFINITY
    }

    /// `(Σ pos − Σ neg) · exp(−shift)`.
    pub fn value_shifted(&self, shift: f64) -> f64 {
        (self.pos.ln() - shift).exp() - (self.neg.ln() - shift).exp()
    }
}

/// Maps `u ∈ (0,1)^s` to `z = Φ⁻¹(u)` and `x = μ + L z`.
pub fn transform_to_domain(u: &[f64], pairing: &DistributionPairing, prop: &Proposal) -> (Vec<f64>, Vec<f64>) {
    let z: Vec<f64> = u
        .iter()
        .map(|&v| pairing.quantile(v.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)))
        .collect();
    let x = prop.to_domain(&z);
    (z, x)
}

fn check_compatible(pairing: &DistributionPairing, prop: &Proposal) -> Result<()> {
    match (pairing.phi(), prop.family) {
        (Density::Gaussian { variance }, Family::Gaussian) if variance == 1.0 => Ok(()),
        (Density::Gaussian { variance }, Family::Gaussian) => Err(Error::config(format!(
            "pairing.nu must be 1 when sampling a Gaussian proposal, got {variance}"
        ))),
        (Density::Student { dof }, Family::Student { nu }) if dof == nu => Ok(()),
        (phi, family) => Err(Error::config(format!(
            "pairing density {phi:?} does not match proposal family {family:?}"
        ))),
    }
}

/// Uniform point `k` of replication `rep` for plain Monte Carlo, keyed by
/// `(seed, rep, k)` so any point can be regenerated on its own.
pub fn mc_point(seed: u64, rep: u64, k: u64, s: usize) -> Vec<f64> {
    let mut rng = mc_stream(seed, rep);
    rng.set_word_pos(u128::from(k) * s as u128 * 2);
    (0..s).map(|_| unit_open(rng.next_u64())).collect()
}

fn mc_stream(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Runs `visit` on every point of replication `rep`.
fn for_each_point(
    cfg: &EstimatorConfig,
    s: usize,
    rep: usize,
    mut visit: impl FnMut(&[f64]) -> Result<()>,
) -> Result<()> {
    let mut u = vec![0.0; s];
    match cfg.method {
        Method::Mc => {
            let mut rng = mc_stream(cfg.master_seed, rep as u64);
            for _ in 0..cfg.n_points {
                for v in u.iter_mut() {
                    *v = unit_open(rng.next_u64());
                }
                visit(&u)?;
            }
        }
        Method::Rqmc => {
            let seed = cfg.master_seed.wrapping_add(rep as u64);
            let lat = ShiftedLattice::with_seed(&cfg.generator, cfg.n_points, s, seed)?;
            for k in 0..cfg.n_points {
                lat.point_into(k, &mut u);
                visit(&u)?;
            }
        }
    }
    Ok(())
}

/// Per-replication sums of `f·e^{−nΨ}·W` and of `e^{−nΨ}·W`.
fn replicate(
    model: &BipModel,
    prop: &Proposal,
    f: TestFn<'_>,
    cfg: &EstimatorConfig,
) -> Result<Vec<(SignedLogSum, LogSumExp)>> {
    let s = model.s();
    if prop.dim() != s {
        return Err(Error::Dimension {
            context: "proposal vs model",
            expected: s,
            got: prop.dim(),
        });
    }
    cfg.validate(s)?;
    check_compatible(&cfg.pairing, prop)?;
    let n = model.n();
    (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let mut num = SignedLogSum::default();
            let mut den = LogSumExp::default();
            for_each_point(cfg, s, rep, |u| {
                let (z, x) = transform_to_domain(u, &cfg.pairing, prop);
                let common = -n * model.psi(&x)? + log_weight(prop, &model.prior, &x, &z);
                if common.is_nan() {
                    return Err(Error::NonFinite("log integrand"));
                }
                den.add(common);
                let fx = f(&x);
                if fx.is_nan() {
                    return Err(Error::NonFinite("test function"));
                }
                if fx != 0.0 {
                    num.add(LogValue {
                        log_abs: fx.abs().ln() + common,
                        sign: if fx > 0.0 { 1 } else { -1 },
                    });
                }
                Ok(())
            })?;
            Ok((num, den))
        })
        .collect()
}

/// `T̂₁ = (1/N) Σ f(x_i) e^{−nΨ(x_i)} W(x_i)` per replication.
pub fn estimate_numerator(
    model: &BipModel,
    prop: &Proposal,
    f: TestFn<'_>,
    cfg: &EstimatorConfig,
) -> Result<EstimateStats> {
    let sums = replicate(model, prop, f, cfg)?;
    let log_n = (cfg.n_points as f64).ln();
    let mut underflow = 0;
    let values = sums
        .iter()
        .map(|(num, _)| {
            if num.is_zero() {
                underflow += 1;
                0.0
            } else {
                num.value_shifted(log_n)
            }
        })
        .collect();
    if underflow > 0 {
        warn!("{underflow} of {} replications underflowed to zero", cfg.reps);
    }
    Ok(EstimateStats::from_values(values, underflow))
}

/// `T̂₁/T̂₂` per replication, both sums over the same points.
pub fn estimate_ratio(
    model: &BipModel,
    prop: &Proposal,
    f: TestFn<'_>,
    cfg: &EstimatorConfig,
) -> Result<EstimateStats> {
    let sums = replicate(model, prop, f, cfg)?;
    let values: Vec<f64> = sums
        .iter()
        .map(|(num, den)| {
            let d = den.ln();
            if d == f64::NEG_INFINITY {
                f64::NAN
            } else {
                num.value_shifted(d)
            }
        })
        .collect();
    let stats = EstimateStats::from_values(values, 0);
    if stats.failed_reps as f64 > MAX_FAILED_FRACTION * cfg.reps as f64 {
        return Err(Error::EstimatorFailure {
            failed: stats.failed_reps,
            reps: cfg.reps,
        });
    }
    if stats.failed_reps > 0 {
        warn!(
            "{} of {} replications had a vanishing denominator",
            stats.failed_reps, cfg.reps
        );
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Numerator,
    Ratio,
}

pub fn estimate(
    target: Target,
    model: &BipModel,
    prop: &Proposal,
    f: TestFn<'_>,
    cfg: &EstimatorConfig,
) -> Result<EstimateStats> {
    match target {
        Target::Numerator => estimate_numerator(model, prop, f, cfg),
        Target::Ratio => estimate_ratio(model, prop, f, cfg),
    }
}

/// A value the RMSE is measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub value: f64,
    /// True when the value comes from a high-accuracy run rather than a
    /// closed form.
    pub numerical: bool,
}

impl Reference {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            numerical: false,
        }
    }
}

/// Size of a pilot run used as a numerical reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PilotSpec {
    pub log2_points: u32,
    pub shifts: usize,
    pub seed: u64,
}

impl Default for PilotSpec {
    fn default() -> Self {
        Self {
            log2_points: 18,
            shifts: 100,
            seed: 0x5eed_0f_9170,
        }
    }
}

/// Mean of `shifts` randomly shifted lattice estimates with `2^log2_points`
/// points each.
pub fn pilot_reference(
    target: Target,
    model: &BipModel,
    prop: &Proposal,
    f: TestFn<'_>,
    pairing: DistributionPairing,
    pilot: PilotSpec,
) -> Result<Reference> {
    let cfg = EstimatorConfig::new(Method::Rqmc, 1 << pilot.log2_points, pilot.shifts, pilot.seed, pairing);
    let stats = estimate(target, model, prop, f, &cfg)?;
    Ok(Reference {
        value: stats.mean,
        numerical: true,
    })
}

/// `√(mean_r (v_r − reference)²)` over finite values.
pub fn rmse(values: &[f64], reference: f64) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    (finite.iter().map(|v| (v - reference).powi(2)).sum::<f64>() / finite.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub n_points: u64,
    pub noise_level: f64,
    pub mean: f64,
    pub stderr: f64,
    pub rmse: f64,
    pub scaled_rmse: f64,
}

/// Runs the estimator at each sample size and reports the error against
/// `reference`, multiplied by `scale`.
#[allow(clippy::too_many_arguments)]
pub fn rmse_study(
    target: Target,
    model: &BipModel,
    prop: &Proposal,
    f: TestFn<'_>,
    cfg: &EstimatorConfig,
    n_points: &[u64],
    reference: Reference,
    scale: f64,
) -> Result<Vec<RmseRow>> {
    n_points
        .iter()
        .map(|&np| {
            let stats = estimate(target, model, prop, f, &cfg.with_points(np))?;
            let e = rmse(&stats.per_rep_values, reference.value);
            Ok(RmseRow {
                n_points: np,
                noise_level: model.n(),
                mean: stats.mean,
                stderr: stats.stderr,
                rmse: e,
                scaled_rmse: scale * e,
            })
        })
        .collect()
}

/// Least-squares slope of `log rmse` against `log N`.
pub fn fitted_slope(rows: &[RmseRow]) -> Result<f64> {
    let xs: Vec<f64> = rows.iter().map(|r| r.n_points as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
    fit_decay_rate(&xs, &ys)
}

/// Constants entering the rate conditions. The growth rates are user
/// inputs; they are not inferred from a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    /// Growth rate `M` of `G₀ = f e^{−nΨ}`.
    pub m_growth: f64,
    pub m_f: f64,
    pub m_psi: f64,
    pub delta: f64,
    /// Laplace scale `m` in `Σ = (m/n) Σ*`.
    pub m_scale: f64,
    pub s: usize,
    pub lambda_min_sigma: f64,
    pub lambda_max_sigma0: f64,
    pub lambda_min_sigma_star: f64,
    pub lambda_max_sigma_star: f64,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_min_sigma", self.lambda_min_sigma),
            ("lambda_max_sigma0", self.lambda_max_sigma0),
            ("lambda_min_sigma_star", self.lambda_min_sigma_star),
            ("lambda_max_sigma_star", self.lambda_max_sigma_star),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("theory.{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config(format!(
                "theory.delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Which rate condition to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    /// Fixed proposal with growth rate `M`: `γ = λ_min(Σ)(1/λ_max(Σ₀) − 2M)`.
    General,
    /// `Σ = Σ*/n`: `γ_n = λ_min(Σ*)/n · (1/λ_max(Σ₀) − 2M)`.
    Laplace,
    /// `n`-independent proposal under the quadratic lower bound (`γ_{n,1}`).
    Fixed,
    /// `Σ = (m/n) Σ*` under the quadratic lower bound (`γ_{n,2}`).
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePrediction {
    pub gamma: f64,
    pub rate_exponent: f64,
    /// False when `γ ≤ 1/2`, where no rate is guaranteed.
    pub applicable: bool,
}

pub fn predicted_rate(tp: &TheoryParams, n: f64, kind: RateKind) -> RatePrediction {
    let growth = tp.m_f + tp.s as f64 * tp.m_psi;
    let gamma = match kind {
        RateKind::General => tp.lambda_min_sigma * (1.0 / tp.lambda_max_sigma0 - 2.0 * tp.m_growth),
        RateKind::Laplace => tp.lambda_min_sigma_star / n * (1.0 / tp.lambda_max_sigma0 - 2.0 * tp.m_growth),
        RateKind::Fixed => {
            n * tp.delta * tp.lambda_min_sigma / tp.lambda_max_sigma_star + tp.lambda_min_sigma / tp.lambda_max_sigma0
                - 2.0 * growth * tp.lambda_min_sigma
        }
        RateKind::Scaled => {
            1.0 + tp.delta - 1.0 / tp.m_scale + tp.lambda_max_sigma_star / (n * tp.lambda_max_sigma0)
                - 2.0 * tp.lambda_max_sigma_star * growth / n
        }
    };
    RatePrediction {
        gamma,
        rate_exponent: gamma.min(1.0),
        applicable: gamma > 0.5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceCheck {
    pub j_n_numeric: f64,
    pub leading_order: f64,
    pub ratio: f64,
    /// `F(c*)`; both integrals above carry the factor `e^{−n F(c*)}`.
    pub f_min: f64,
}

/// Compares `J_n = ∫ Q e^{−nF}` with `F = 2Ψ` against its leading Laplace
/// term `e^{−nF(c*)} (2π/n)^{s/2} det(∇²F(c*))^{−1/2} Q(c*)`. The factor
/// `e^{−nF(c*)}` is left out of both reported values.
pub fn laplace_leading(model: &BipModel, q: &dyn Fn(&[f64]) -> f64, n: f64, tol: &Tolerances) -> Result<LaplaceCheck> {
    let s = model.s();
    if !(1..=3).contains(&s) {
        return Err(Error::Domain {
            what: "laplace_leading dimension",
            value: s as f64,
            domain: "{1, 2, 3}",
        });
    }
    let map = find_map(model, &[], HessianMode::Potential, tol)?;
    let c = map.mu_star;
    let f_min = 2.0 * model.psi(&c)?;
    let hess = model.hessian_psi(&c, tol)?.scale(2.0);
    let det = crate::numerics::SpdMatrix::new(hess.symmetrized())?.log_det().exp();
    let leading = (2.0 * std::f64::consts::PI / n).powf(s as f64 / 2.0) / det.sqrt() * q(&c);

    // x = c + w/√n, so the integrand has unit width in w.
    let root = n.sqrt();
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let integrand = |w: &[f64]| -> f64 {
        let x: Vec<f64> = c.iter().zip(w).map(|(ci, wi)| ci + wi / root).collect();
        match model.psi(&x) {
            Ok(p) => q(&x) * (-n * (2.0 * p - f_min)).exp(),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let mut prefix = Vec::with_capacity(s);
    let inner = nested_integral(&integrand, &mut prefix, s, tol, &failure);
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    let numeric = inner? / root.powi(s as i32);
    Ok(LaplaceCheck {
        j_n_numeric: numeric,
        leading_order: leading,
        ratio: numeric / leading,
        f_min,
    })
}

fn nested_integral(
    f: &dyn Fn(&[f64]) -> f64,
    prefix: &mut Vec<f64>,
    s: usize,
    tol: &Tolerances,
    failure: &RefCell<Option<Error>>,
) -> Result<f64> {
    let depth = prefix.len();
    let cell = RefCell::new(std::mem::take(prefix));
    let g = |w: f64| -> f64 {
        let mut p = cell.borrow().clone();
        p.push(w);
        if depth + 1 == s {
            f(&p)
        } else {
            match nested_integral(f, &mut p, s, tol, failure) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            }
        }
    };
    let out = integrate_1d(g, f64::NEG_INFINITY, f64::INFINITY, tol);
    *prefix = cell.into_inner();
    out
}
