//! Flat `key = value` experiment configuration.
//!
//! Lines are `section.key = value`; `#` starts a comment. Every key read
//! during resolution, including defaulted ones, is recorded so the resolved
//! configuration can be written back out as a manifest.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rqmc_is::estimators::{Method, PilotSpec, Target};
use rqmc_is::lattice::GeneratingVector;
use rqmc_is::proposals::{Family, HessianMode, ProposalKind};
use rqmc_is::wce::{Density, DistributionPairing, WeightFunction, WeightScheme};

use crate::error::{CliError, CliResult};

/// `m` used by the `conservative` preset for `proposal.m`.
pub const CONSERVATIVE_M: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    SweepN,
    SweepNoise,
    ThetaDecay,
    Cbc,
    PdeDemo,
    LaplaceCheck,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::SweepN => "sweep_N",
            Experiment::SweepNoise => "sweep_n",
            Experiment::ThetaDecay => "theta_decay",
            Experiment::Cbc => "cbc",
            Experiment::PdeDemo => "pde_demo",
            Experiment::LaplaceCheck => "laplace_check",
        }
    }

    pub fn estimates(self) -> bool {
        matches!(self, Experiment::SweepN | Experiment::SweepNoise | Experiment::PdeDemo)
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "sweep_N" => Experiment::SweepN,
            "sweep_n" => Experiment::SweepNoise,
            "theta_decay" => Experiment::ThetaDecay,
            "cbc" => Experiment::Cbc,
            "pde_demo" => Experiment::PdeDemo,
            "laplace_check" => Experiment::LaplaceCheck,
            _ => return Err("expected one of sweep_N, sweep_n, theta_decay, cbc, pde_demo, laplace_check".into()),
        })
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Toy { tau: f64 },
    Pde { mesh: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalSpec {
    pub kind: ProposalKind,
    pub family: Family,
}

impl ProposalSpec {
    pub fn label(&self) -> String {
        let base = match self.kind {
            ProposalKind::Prior => "prior",
            ProposalKind::Odis => "odis",
            ProposalKind::Lapis { .. } => "lapis",
            ProposalKind::Newis { .. } => "newis",
            ProposalKind::Custom => "custom",
        };
        match self.family {
            Family::Gaussian => base.to_string(),
            Family::Student { .. } => format!("t-{base}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Norm,
    One,
    First,
}

impl TestFunction {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Norm => rqmc_is::models::test_function_norm(x),
            TestFunction::One => 1.0,
            TestFunction::First => x[0],
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            TestFunction::Norm => "norm",
            TestFunction::One => "one",
            TestFunction::First => "first",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceSpec {
    Pilot(PilotSpec),
    Exact(f64),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConfig {
    pub m_growth: f64,
    pub m_f: f64,
    pub m_psi: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelKind,
    pub s: usize,
    pub noise_level: f64,
    pub proposals: Vec<ProposalSpec>,
    pub delta: Option<f64>,
    pub hessian_mode: HessianMode,
    /// Pairing used for Gaussian proposals.
    pub pairing: DistributionPairing,
    /// Pairing used for Student proposals, `student(ν, proposal.t_alpha)`.
    pub student_pairing: Option<DistributionPairing>,
    pub weights: WeightScheme,
    pub generator: GeneratingVector,
    pub methods: Vec<Method>,
    pub n_points: Vec<u64>,
    pub noise_levels: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub target: Target,
    pub test_function: TestFunction,
    pub reference: ReferenceSpec,
    pub cbc_points: u64,
    pub cbc_dim: usize,
    pub theta_h: Vec<i64>,
    pub theory: TheoryConfig,
    pub out_dir: PathBuf,
    /// Every key with its resolved value, in key order.
    pub resolved: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let raw = RawConfig::parse(&text, path)?;
        Self::resolve(raw, overrides, None)
    }

    /// Resolves a config for a fixed experiment; the `experiment` key may be
    /// absent.
    pub fn load_for(path: Option<&Path>, overrides: &Overrides, experiment: Experiment) -> CliResult<Self> {
        let raw = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| CliError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                RawConfig::parse(&text, p)?
            }
            None => RawConfig::default(),
        };
        Self::resolve(raw, overrides, Some(experiment))
    }

    pub fn resolve(raw: RawConfig, overrides: &Overrides, fixed: Option<Experiment>) -> CliResult<Self> {
        let r = Resolver::new(raw);
        let experiment = match fixed {
            Some(e) => {
                r.record("experiment", e.as_str());
                r.consume("experiment");
                e
            }
            None => r.required::<Experiment>("experiment")?,
        };

        let kind: String = r.or("model.kind", "toy".to_string())?;
        let (model, default_s) = match kind.as_str() {
            "toy" => {
                let tau: f64 = r.or("model.tau", 1.0)?;
                if !(tau >= 0.0 && tau.is_finite()) {
                    return Err(key_error("model.tau", "must be a finite value >= 0"));
                }
                (ModelKind::Toy { tau }, 4)
            }
            "pde" => {
                let mesh: usize = r.or("model.mesh", 64)?;
                if mesh == 0 || mesh % 8 != 0 {
                    return Err(key_error("model.mesh", "must be a positive multiple of 8"));
                }
                (ModelKind::Pde { mesh }, 8)
            }
            _ => return Err(key_error("model.kind", "expected toy or pde")),
        };
        let s: usize = r.or("model.s", default_s)?;
        if s == 0 {
            return Err(key_error("model.s", "must be at least 1"));
        }
        let noise_level: f64 = r.or("model.n", 2000.0)?;
        positive("model.n", noise_level)?;

        let toy_delta = match model {
            ModelKind::Toy { tau } => Some((1.0 + tau).powi(-2)),
            ModelKind::Pde { .. } => None,
        };
        let delta: Option<f64> = match r.optional::<f64>("proposal.delta")? {
            Some(d) => Some(d),
            None => toy_delta,
        };
        if let Some(d) = delta {
            r.record("proposal.delta", &fmt_f64(d));
        }
        let m_text: String = r.or("proposal.m", "1".to_string())?;
        let m = if m_text == "conservative" {
            CONSERVATIVE_M
        } else {
            parse_value::<f64>("proposal.m", &m_text)?
        };
        positive("proposal.m", m)?;
        let nu: f64 = r.or("proposal.nu", 5.0)?;
        let default_mode = match model {
            ModelKind::Toy { .. } => "potential",
            ModelKind::Pde { .. } => "posterior",
        };
        let hessian_mode = match r.or("proposal.laplace_hessian", default_mode.to_string())?.as_str() {
            "potential" => HessianMode::Potential,
            "posterior" => HessianMode::Posterior,
            _ => return Err(key_error("proposal.laplace_hessian", "expected potential or posterior")),
        };
        let kinds: Vec<String> = r.list_or("proposal.kinds", &["prior", "odis", "lapis", "newis"])?;
        let mut proposals = Vec::with_capacity(kinds.len());
        for k in &kinds {
            let (family, base) = match k.strip_prefix("t-") {
                Some(b) => (Family::Student { nu }, b),
                None => (Family::Gaussian, k.as_str()),
            };
            let kind = match base {
                "prior" => ProposalKind::Prior,
                "odis" => ProposalKind::Odis,
                "lapis" => ProposalKind::Lapis { m },
                "newis" => {
                    let d =
                        delta.ok_or_else(|| key_error("proposal.delta", "is required for newis with a pde model"))?;
                    if !(d > 0.0 && d <= 1.0) {
                        return Err(key_error(
                            "proposal.delta",
                            &format!("newis requires delta>0 (and at most 1), got {d}"),
                        ));
                    }
                    ProposalKind::Newis { delta: d }
                }
                _ => {
                    return Err(key_error(
                        "proposal.kinds",
                        &format!("unknown proposal '{k}', expected [t-]prior, odis, lapis or newis"),
                    ))
                }
            };
            proposals.push(ProposalSpec { kind, family });
        }

        let pairing = resolve_pairing(&r)?;
        let student_pairing = if proposals.iter().any(|p| matches!(p.family, Family::Student { .. })) {
            let alpha: f64 = r.or("proposal.t_alpha", 1.0)?;
            Some(DistributionPairing::student(nu, alpha).map_err(|e| {
                key_error(
                    "proposal.nu",
                    &format!("{e} (Student density with polynomial weight requires 2 alpha + 1 < nu)"),
                )
            })?)
        } else {
            None
        };

        let methods: Vec<String> = r.list_or("run.methods", &["mc", "rqmc"])?;
        let methods = methods
            .iter()
            .map(|m| match m.as_str() {
                "mc" => Ok(Method::Mc),
                "rqmc" => Ok(Method::Rqmc),
                _ => Err(key_error(
                    "run.methods",
                    &format!("unknown method '{m}', expected mc or rqmc"),
                )),
            })
            .collect::<CliResult<Vec<_>>>()?;

        let default_points = match experiment {
            Experiment::SweepN => "2^8..2^14",
            _ => "2^14",
        };
        let n_points = r.u64_list_or("run.N", default_points)?;
        let noise_levels: Vec<f64> = r.list_or("run.n", &["10", "100", "1000", "10000"])?;
        for &v in &noise_levels {
            positive("run.n", v)?;
        }

        let reps = if experiment.estimates() {
            let reps: usize = r.required("run.reps")?;
            if reps == 0 {
                return Err(key_error("run.reps", "must be at least 1"));
            }
            reps
        } else {
            0
        };
        let seed: u64 = match overrides.seed {
            Some(sd) => {
                r.consume("run.seed");
                r.record("run.seed", &sd.to_string());
                sd
            }
            None => r.or("run.seed", 0)?,
        };
        let default_target = match experiment {
            Experiment::PdeDemo => "ratio",
            _ => "numerator",
        };
        let target = match r.or("run.target", default_target.to_string())?.as_str() {
            "numerator" => Target::Numerator,
            "ratio" => Target::Ratio,
            _ => return Err(key_error("run.target", "expected numerator or ratio")),
        };
        let default_f = match experiment {
            Experiment::LaplaceCheck => "one",
            _ => "norm",
        };
        let test_function = match r.or("run.test_function", default_f.to_string())?.as_str() {
            "norm" => TestFunction::Norm,
            "one" => TestFunction::One,
            "first" => TestFunction::First,
            _ => return Err(key_error("run.test_function", "expected norm, one or first")),
        };
        r.record("run.test_function", test_function.as_str());

        let default_ref = match experiment {
            Experiment::PdeDemo => "none",
            _ => "pilot",
        };
        let reference = if experiment.estimates() {
            match r.or("run.reference", default_ref.to_string())?.as_str() {
                "pilot" => {
                    let d = PilotSpec::default();
                    let log2_points: u32 = r.or("run.pilot_log2_points", d.log2_points)?;
                    if !(1..=30).contains(&log2_points) {
                        return Err(key_error("run.pilot_log2_points", "must lie in 1..=30"));
                    }
                    let shifts: usize = r.or("run.pilot_shifts", d.shifts)?;
                    if shifts == 0 {
                        return Err(key_error("run.pilot_shifts", "must be at least 1"));
                    }
                    let seed: u64 = r.or("run.pilot_seed", d.seed)?;
                    ReferenceSpec::Pilot(PilotSpec {
                        log2_points,
                        shifts,
                        seed,
                    })
                }
                "none" => ReferenceSpec::None,
                v => ReferenceSpec::Exact(parse_value("run.reference", v)?),
            }
        } else {
            ReferenceSpec::None
        };

        let generator = match r.or("run.generator", "bundled".to_string())?.as_str() {
            "bundled" => GeneratingVector::bundled(),
            p => {
                let path = PathBuf::from(p);
                if !path.is_file() {
                    return Err(key_error("run.generator", &format!("file {p} does not exist")));
                }
                GeneratingVector::load(&path).map_err(|e| key_error("run.generator", &e.to_string()))?
            }
        };
        if experiment.estimates() && methods.contains(&Method::Rqmc) {
            for &np in &n_points {
                generator
                    .check_modulus(np, s)
                    .map_err(|e| key_error("run.N", &e.to_string()))?;
            }
        }
        for &np in &n_points {
            if np == 0 {
                return Err(key_error("run.N", "entries must be at least 1"));
            }
        }

        let cbc_points = r.u64_list_or("cbc.N", "2^10")?;
        if cbc_points.len() != 1 || cbc_points[0] < 2 {
            return Err(key_error("cbc.N", "must be a single value >= 2"));
        }
        let cbc_points = cbc_points[0];
        let cbc_dim: usize = r.or("cbc.s", s)?;
        let weights = resolve_weights(&r, s.max(cbc_dim))?;

        let theta_h: Vec<i64> = r
            .u64_list_or("theta.h", "2^0..2^12")?
            .into_iter()
            .map(|h| h as i64)
            .collect();

        let theory = TheoryConfig {
            m_growth: r.or("theory.m_growth", 0.0)?,
            m_f: r.or("theory.m_f", 0.0)?,
            m_psi: r.or("theory.m_psi", 0.0)?,
        };
        for (k, v) in [
            ("theory.m_growth", theory.m_growth),
            ("theory.m_f", theory.m_f),
            ("theory.m_psi", theory.m_psi),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(key_error(k, "must be a finite value >= 0"));
            }
        }

        let out_dir = match &overrides.out {
            Some(p) => {
                r.consume("output.dir");
                r.record("output.dir", &p.display().to_string());
                p.clone()
            }
            None => PathBuf::from(r.or("output.dir", "results".to_string())?),
        };

        if experiment == Experiment::LaplaceCheck && s > 3 {
            return Err(key_error("model.s", "laplace_check supports s <= 3"));
        }
        if matches!(model, ModelKind::Pde { .. }) && experiment == Experiment::LaplaceCheck {
            return Err(key_error("model.kind", "laplace_check needs the toy model"));
        }

        r.finish()?;
        Ok(Self {
            experiment,
            model,
            s,
            noise_level,
            proposals,
            delta,
            hessian_mode,
            pairing,
            student_pairing,
            weights,
            generator,
            methods,
            n_points,
            noise_levels,
            reps,
            seed,
            target,
            test_function,
            reference,
            cbc_points,
            cbc_dim,
            theta_h,
            theory,
            out_dir,
            resolved: r.into_resolved(),
        })
    }

    /// The pairing matching a proposal's family.
    pub fn pairing_for(&self, spec: &ProposalSpec) -> DistributionPairing {
        match spec.family {
            Family::Gaussian => self.pairing,
            Family::Student { .. } => self.student_pairing.expect("student pairing resolved"),
        }
    }

    /// The resolved configuration as a re-runnable config file.
    pub fn manifest(&self) -> String {
        let mut out = format!(
            "# rqmc-is {}\n# re-run with: rqmc-is run --config manifest.txt\n",
            env!("CARGO_PKG_VERSION")
        );
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn resolve_pairing(r: &Resolver) -> CliResult<DistributionPairing> {
    let density: String = r.or("pairing.density", "gaussian".to_string())?;
    let nu: f64 = r.or("pairing.nu", 1.0)?;
    let phi = match density.as_str() {
        "gaussian" => Density::Gaussian { variance: nu },
        "student" => Density::Student { dof: nu },
        _ => return Err(key_error("pairing.density", "expected gaussian or student")),
    };
    let default_weight = match phi {
        Density::Gaussian { .. } => "gaussian_decay",
        Density::Student { .. } => "polynomial_decay",
    };
    let default_alpha = match phi {
        Density::Gaussian { .. } => 3.0,
        Density::Student { .. } => 1.0,
    };
    let weight: String = r.or("pairing.weight", default_weight.to_string())?;
    let alpha: f64 = r.or("pairing.alpha", default_alpha)?;
    let psi = match weight.as_str() {
        "gaussian_decay" => WeightFunction::GaussianDecay { alpha },
        "polynomial_decay" => WeightFunction::PolynomialDecay { alpha },
        _ => {
            return Err(key_error(
                "pairing.weight",
                "expected gaussian_decay or polynomial_decay",
            ))
        }
    };
    let delta_psi: Option<f64> = r.optional("pairing.delta_psi")?;
    DistributionPairing::new(phi, psi, delta_psi).map_err(|e| CliError::Config(e.to_string()))
}

fn resolve_weights(r: &Resolver, s: usize) -> CliResult<WeightScheme> {
    let kind: String = r.or("weights.kind", "pod".to_string())?;
    let c: f64 = r.or("weights.c", 0.9)?;
    positive("weights.c", c)?;
    let gamma: Option<Vec<f64>> = r.optional_list("weights.gamma")?;
    let gamma = gamma.unwrap_or_else(|| (1..=s).map(|j| c / (j * j) as f64).collect());
    if gamma.len() < s {
        return Err(key_error(
            "weights.gamma",
            &format!("has {} entries but {s} are needed", gamma.len()),
        ));
    }
    let w = match kind.as_str() {
        "product" => WeightScheme::product(gamma),
        "pod" => {
            let order: Option<Vec<f64>> = r.optional_list("weights.order")?;
            let order = order.unwrap_or_else(|| {
                let mut f = 1.0;
                (1..=gamma.len())
                    .map(|l| {
                        f *= l as f64;
                        f
                    })
                    .collect()
            });
            WeightScheme::pod(gamma, order)
        }
        _ => return Err(key_error("weights.kind", "expected product or pod")),
    };
    w.map_err(|e| CliError::Config(e.to_string()))
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(p) => &line[..p],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    i + 1
                )));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(CliError::Config(format!("{}:{}: empty key", path.display(), i + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(key_error(k, &format!("is set twice (line {})", i + 1)));
            }
        }
        Ok(Self { entries })
    }
}

struct Resolver {
    raw: RawConfig,
    used: RefCell<BTreeSet<String>>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl Resolver {
    fn new(raw: RawConfig) -> Self {
        Self {
            raw,
            used: RefCell::new(BTreeSet::new()),
            resolved: RefCell::new(BTreeMap::new()),
        }
    }

    fn consume(&self, key: &str) -> Option<String> {
        self.used.borrow_mut().insert(key.to_string());
        self.raw.entries.get(key).cloned()
    }

    fn record(&self, key: &str, value: &str) {
        self.resolved.borrow_mut().insert(key.to_string(), value.to_string());
    }

    fn required<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        let v = self.consume(key).ok_or_else(|| key_error(key, "is required"))?;
        let out = parse_value(key, &v)?;
        self.record(key, &v);
        Ok(out)
    }

    fn optional<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.consume(key) {
            Some(v) => {
                let out = parse_value(key, &v)?;
                self.record(key, &v);
                Ok(Some(out))
            }
            None => Ok(None),
        }
    }

    fn or<T: FromStr + fmt::Display>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        match self.optional(key)? {
            Some(v) => Ok(v),
            None => {
                self.record(key, &default.to_string());
                Ok(default)
            }
        }
    }

    fn optional_list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        let Some(v) = self.consume(key) else {
            return Ok(None);
        };
        let items = split_list(key, &v)?;
        let out = items
            .iter()
            .map(|i| parse_value(key, i))
            .collect::<CliResult<Vec<T>>>()?;
        self.record(key, &items.join(","));
        Ok(Some(out))
    }

    fn list_or<T: FromStr>(&self, key: &str, default: &[&str]) -> CliResult<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        match self.optional_list(key)? {
            Some(v) => Ok(v),
            None => {
                self.record(key, &default.join(","));
                default.iter().map(|i| parse_value(key, i)).collect()
            }
        }
    }

    /// Integer list; items may be `2^k` and `2^a..2^b` expands to every power
    /// of two in between.
    fn u64_list_or(&self, key: &str, default: &str) -> CliResult<Vec<u64>> {
        let text = self.consume(key).unwrap_or_else(|| default.to_string());
        let mut out = Vec::new();
        for item in split_list(key, &text)? {
            match item.split_once("..") {
                Some((a, b)) => {
                    let (a, b) = (parse_int(key, a)?, parse_int(key, b)?);
                    if !a.is_power_of_two() || !b.is_power_of_two() || a > b {
                        return Err(key_error(
                            key,
                            &format!("range '{item}' must run between powers of two in increasing order"),
                        ));
                    }
                    let mut v = a;
                    while v <= b {
                        out.push(v);
                        v *= 2;
                    }
                }
                None => out.push(parse_int(key, &item)?),
            }
        }
        self.record(key, &text.split(',').map(str::trim).collect::<Vec<_>>().join(","));
        Ok(out)
    }

    fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        match self.raw.entries.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(key_error(k, "is not a recognized key")),
            None => Ok(()),
        }
    }

    fn into_resolved(self) -> BTreeMap<String, String> {
        self.resolved.into_inner()
    }
}

fn split_list(key: &str, v: &str) -> CliResult<Vec<String>> {
    let items: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
    if items.iter().any(String::is_empty) {
        return Err(key_error(key, "must be a nonempty comma-separated list"));
    }
    Ok(items)
}

fn parse_int(key: &str, v: &str) -> CliResult<u64> {
    let v = v.trim();
    match v.split_once('^') {
        Some((b, e)) => {
            let b: u64 = parse_value(key, b)?;
            let e: u32 = parse_value(key, e)?;
            b.checked_pow(e)
                .ok_or_else(|| key_error(key, &format!("{v} overflows")))
        }
        None => parse_value(key, v),
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> CliResult<T>
where
    T::Err: fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e| key_error(key, &format!("cannot parse '{v}': {e}")))
}

fn positive(key: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(key_error(key, &format!("must be positive, got {v}")))
    }
}

fn key_error(key: &str, msg: &str) -> CliError {
    CliError::Config(format!("{key} {msg}"))
}

/// Shortest round-trip form, in scientific notation outside `[1e-4, 1e6)`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> CliResult<ExperimentConfig> {
        let raw = RawConfig::parse(text, Path::new("test.cfg"))?;
        ExperimentConfig::resolve(raw, &Overrides::default(), None)
    }

    #[test]
    fn defaults_fill_a_minimal_sweep() {
        let c = resolve("experiment = sweep_N\nrun.reps = 40\n").unwrap();
        assert_eq!(c.n_points, vec![256, 512, 1024, 2048, 4096, 8192, 16384]);
        assert_eq!(c.proposals.len(), 4);
        assert_eq!(c.methods, vec![Method::Mc, Method::Rqmc]);
        assert_eq!(c.delta, Some(0.25));
        assert_eq!(c.resolved["run.reps"], "40");
    }

    #[test]
    fn missing_reps_names_the_key() {
        let e = resolve("experiment = sweep_N\n").unwrap_err();
        assert!(e.to_string().contains("run.reps"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let e = resolve("experiment = cbc\nmodel.tua = 1\n").unwrap_err();
        assert!(e.to_string().contains("model.tua"));
        let e = resolve("experiment = cbc\nmodel.s = 2\nmodel.s = 3\n").unwrap_err();
        assert!(e.to_string().contains("set twice"));
    }

    #[test]
    fn newis_needs_positive_delta() {
        let e = resolve("experiment = sweep_N\nrun.reps = 2\nproposal.delta = 0\n").unwrap_err();
        assert!(e.to_string().contains("newis requires delta>0"), "{e}");
    }

    #[test]
    fn student_proposals_check_the_tail_constraint() {
        let e = resolve("experiment = sweep_N\nrun.reps = 2\nproposal.kinds = t-lapis\nproposal.nu = 3\n").unwrap_err();
        assert!(e.to_string().contains("2 alpha + 1 < nu"), "{e}");
        assert!(resolve("experiment = sweep_N\nrun.reps = 2\nproposal.kinds = t-lapis\nproposal.nu = 5\n").is_ok());
    }

    #[test]
    fn power_ranges_and_presets() {
        let c = resolve(
            "experiment = sweep_n\nrun.reps = 2\nrun.methods = mc\nrun.N = 2^3..2^5, 100\nproposal.m = conservative\n",
        );
        let c = c.unwrap();
        assert_eq!(c.n_points, vec![8, 16, 32, 100]);
        assert!(c
            .proposals
            .iter()
            .any(|p| p.kind == ProposalKind::Lapis { m: CONSERVATIVE_M }));
    }

    #[test]
    fn manifest_round_trips() {
        let c = resolve("experiment = sweep_N\nrun.reps = 3\nmodel.tau = 0.5 # comment\n").unwrap();
        let again = RawConfig::parse(&c.manifest(), Path::new("manifest.txt")).unwrap();
        let d = ExperimentConfig::resolve(again, &Overrides::default(), None).unwrap();
        assert_eq!(c.resolved, d.resolved);
        assert_eq!(c.manifest(), d.manifest());
    }

    #[test]
    fn overrides_take_precedence() {
        let raw = RawConfig::parse("experiment = cbc\nrun.seed = 4\noutput.dir = a\n", Path::new("x")).unwrap();
        let o = Overrides {
            seed: Some(9),
            out: Some(PathBuf::from("b")),
        };
        let c = ExperimentConfig::resolve(raw, &o, None).unwrap();
        assert_eq!((c.seed, c.out_dir.as_path()), (9, Path::new("b")));
    }
}
