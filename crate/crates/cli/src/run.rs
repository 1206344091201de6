//! Experiment orchestration and artifact emission.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use rqmc_is::estimators::{
    estimate, pilot_reference, predicted_rate, rmse, EstimatorConfig, Method, RateKind, Reference, Target, TheoryParams,
};
use rqmc_is::models::{pde_problem, toy_problem, BipModel};
use rqmc_is::numerics::Tolerances;
use rqmc_is::proposals::{build_proposal, find_map, Family, MapPoint, Proposal, ProposalInputs, ProposalKind};
use rqmc_is::wce::{cbc_with_table, fit_decay_rate, theta_fourier, ThetaTable};

use crate::config::{fmt_f64, Experiment, ExperimentConfig, ModelKind, ProposalSpec, ReferenceSpec};
use crate::error::{CliError, CliResult};

pub const RESULT_HEADER: &str =
    "experiment_id,method,proposal,n,N,rep_count,estimate,stderr,rmse,scaled_rmse,slope_if_applicable";

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub proposal: String,
    pub noise_level: f64,
    pub n_points: u64,
    pub reps: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub std_dev: f64,
    pub rmse: Option<f64>,
    pub scaled_rmse: Option<f64>,
    pub slope: Option<f64>,
}

/// Model, MAP point and proposals at one noise level.
pub struct Setup {
    pub model: BipModel,
    pub map: MapPoint,
    pub proposals: Vec<(ProposalSpec, Proposal)>,
}

pub fn build_model(cfg: &ExperimentConfig, noise_level: f64) -> CliResult<BipModel> {
    Ok(match cfg.model {
        ModelKind::Toy { tau } => toy_problem(cfg.s, tau, noise_level)?,
        ModelKind::Pde { mesh } => pde_problem(cfg.s, mesh, noise_level)?,
    })
}

pub fn setup(cfg: &ExperimentConfig, noise_level: f64) -> CliResult<Setup> {
    let model = build_model(cfg, noise_level)?;
    let tol = Tolerances::default();
    let map = find_map(&model, &[], cfg.hessian_mode, &tol)?;
    if map.regularized {
        warn!("n = {noise_level}: Hessian at the MAP point was regularized before inversion");
    }
    let inputs = ProposalInputs {
        mu_star: &map.mu_star,
        sigma_star: &map.sigma_star,
    };
    let proposals = cfg
        .proposals
        .iter()
        .map(|spec| Ok((*spec, build_proposal(spec.kind, spec.family, &model, inputs)?)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Setup { model, map, proposals })
}

fn noise_levels(cfg: &ExperimentConfig) -> Vec<f64> {
    match cfg.experiment {
        Experiment::SweepNoise | Experiment::LaplaceCheck => cfg.noise_levels.clone(),
        _ => vec![cfg.noise_level],
    }
}

fn reference(cfg: &ExperimentConfig, st: &Setup) -> CliResult<Option<Reference>> {
    let f = |x: &[f64]| cfg.test_function.eval(x);
    Ok(match cfg.reference {
        ReferenceSpec::None => None,
        ReferenceSpec::Exact(v) => Some(Reference::exact(v)),
        ReferenceSpec::Pilot(pilot) => {
            let kind = match cfg.delta {
                Some(delta) => ProposalKind::Newis { delta },
                None => ProposalKind::Lapis { m: 1.0 },
            };
            let inputs = ProposalInputs {
                mu_star: &st.map.mu_star,
                sigma_star: &st.map.sigma_star,
            };
            let prop = build_proposal(kind, Family::Gaussian, &st.model, inputs)?;
            info!(
                "pilot reference at n = {}: 2^{} points, {} shifts",
                st.model.n(),
                pilot.log2_points,
                pilot.shifts
            );
            Some(pilot_reference(cfg.target, &st.model, &prop, &f, cfg.pairing, pilot)?)
        }
    })
}

struct Cell<'a> {
    setup: &'a Setup,
    idx: usize,
    method: Method,
    n_points: u64,
    reference: Option<Reference>,
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell<'_>) -> CliResult<ResultRow> {
    let (spec, prop) = &cell.setup.proposals[cell.idx];
    let f = |x: &[f64]| cfg.test_function.eval(x);
    let mut ec = EstimatorConfig::new(cell.method, cell.n_points, cfg.reps, cfg.seed, cfg.pairing_for(spec));
    ec.generator = cfg.generator.clone();
    let stats = estimate(cfg.target, &cell.setup.model, prop, &f, &ec)?;
    let n = cell.setup.model.n();
    let scale = match cfg.target {
        Target::Numerator => n.powf(cfg.s as f64 / 2.0),
        Target::Ratio => 1.0,
    };
    let e = cell.reference.map(|r| rmse(&stats.per_rep_values, r.value));
    Ok(ResultRow {
        method: cell.method,
        proposal: spec.label(),
        noise_level: n,
        n_points: cell.n_points,
        reps: cfg.reps,
        estimate: stats.mean,
        stderr: stats.stderr,
        std_dev: stats.std_dev(),
        rmse: e,
        scaled_rmse: e.map(|v| v * scale),
        slope: None,
    })
}

/// Runs the configured experiment and writes its artifacts.
pub fn run(cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;
    write_atomic(&dir.join("manifest.txt"), &cfg.manifest())?;
    match cfg.experiment {
        Experiment::SweepN | Experiment::SweepNoise | Experiment::PdeDemo => run_estimates(cfg),
        Experiment::ThetaDecay => run_theta(cfg),
        Experiment::Cbc => run_cbc(cfg),
        Experiment::LaplaceCheck => run_laplace(cfg),
    }
}

fn run_estimates(cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = &cfg.out_dir;
    let levels = noise_levels(cfg);
    let setups = levels.iter().map(|&n| setup(cfg, n)).collect::<CliResult<Vec<_>>>()?;
    write_atomic(&dir.join("data_y.csv"), &data_csv(&setups[0].model))?;
    write_atomic(&dir.join("proposals.csv"), &proposals_csv(&setups))?;
    let refs = setups
        .iter()
        .map(|st| reference(cfg, st))
        .collect::<CliResult<Vec<_>>>()?;

    let mut cells = Vec::new();
    for (st, r) in setups.iter().zip(&refs) {
        for idx in 0..st.proposals.len() {
            for &method in &cfg.methods {
                for &n_points in &cfg.n_points {
                    cells.push(Cell {
                        setup: st,
                        idx,
                        method,
                        n_points,
                        reference: *r,
                    });
                }
            }
        }
    }
    info!("{} cells, {} replications each", cells.len(), cfg.reps);
    let outcomes: Vec<CliResult<ResultRow>> = cells.par_iter().map(|c| run_cell(cfg, c)).collect();

    let mut rows = Vec::with_capacity(outcomes.len());
    let mut failure = None;
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(e) => {
                warn!("cell failed: {e}");
                failure.get_or_insert(e);
            }
        }
    }
    fill_slopes(&mut rows);
    write_atomic(&dir.join("results.csv"), &results_csv(cfg.experiment, &rows))?;
    if let Some(e) = failure {
        return Err(CliError::Partial {
            source: Box::new(e),
            written: rows.len(),
            dir: dir.clone(),
        });
    }
    let fig = figure_csv(cfg, &rows);
    write_atomic(&dir.join(format!("fig_{}.csv", cfg.experiment)), &fig)?;
    Ok(())
}

/// Fits `rmse ∝ N^slope` over each run of rows sharing `(n, proposal, method)`.
pub fn fill_slopes(rows: &mut [ResultRow]) {
    let mut i = 0;
    while i < rows.len() {
        let key = |r: &ResultRow| (r.method, r.proposal.clone(), r.noise_level.to_bits());
        let k = key(&rows[i]);
        let len = rows[i..].iter().take_while(|r| key(r) == k).count();
        let run = &mut rows[i..i + len];
        let xs: Vec<f64> = run.iter().map(|r| r.n_points as f64).collect();
        let ys: Option<Vec<f64>> = run.iter().map(|r| r.rmse).collect();
        if let Some(Ok(slope)) = ys.map(|ys| fit_decay_rate(&xs, &ys)) {
            for r in run.iter_mut() {
                r.slope = Some(slope);
            }
        }
        i += len;
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn results_csv(experiment: Experiment, rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{experiment},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.proposal,
            fmt_f64(r.noise_level),
            r.n_points,
            r.reps,
            fmt_f64(r.estimate),
            fmt_f64(r.stderr),
            opt(r.rmse),
            opt(r.scaled_rmse),
            opt(r.slope),
        );
    }
    out
}

/// Wide layout: an x column and one y column per method/proposal pair.
fn figure_csv(cfg: &ExperimentConfig, rows: &[ResultRow]) -> String {
    let series: Vec<String> = {
        let mut s = Vec::new();
        for spec in &cfg.proposals {
            for m in &cfg.methods {
                s.push(format!("{m}_{}", spec.label()));
            }
        }
        s
    };
    let (x_name, xs): (&str, Vec<String>) = match cfg.experiment {
        Experiment::SweepNoise => ("n", cfg.noise_levels.iter().map(|v| fmt_f64(*v)).collect()),
        _ => ("N", cfg.n_points.iter().map(u64::to_string).collect()),
    };
    let multi_points = cfg.experiment == Experiment::SweepNoise && cfg.n_points.len() > 1;
    let mut header = vec![x_name.to_string()];
    for s in &series {
        if multi_points {
            header.extend(cfg.n_points.iter().map(|np| format!("{s}_N{np}")));
        } else {
            header.push(s.clone());
        }
    }
    let y = |r: &ResultRow| match cfg.experiment {
        Experiment::SweepN => opt(r.rmse),
        Experiment::SweepNoise => opt(r.scaled_rmse),
        _ => fmt_f64(r.std_dev),
    };
    let mut out = header.join(",") + "\n";
    for x in &xs {
        let mut line = vec![x.clone()];
        for s in &series {
            for np in &cfg.n_points {
                let hit = rows.iter().find(|r| {
                    format!("{}_{}", r.method, r.proposal) == *s
                        && match cfg.experiment {
                            Experiment::SweepNoise => fmt_f64(r.noise_level) == *x && r.n_points == *np,
                            _ => r.n_points.to_string() == *x,
                        }
                });
                line.push(hit.map(y).unwrap_or_default());
                if !multi_points {
                    break;
                }
            }
        }
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn data_csv(model: &BipModel) -> String {
    let mut out = String::from("index,y\n");
    for (i, y) in model.data().iter().enumerate() {
        let _ = writeln!(out, "{i},{}", fmt_f64(*y));
    }
    out
}

fn proposals_csv(setups: &[Setup]) -> String {
    let s = setups[0].model.s();
    let mut out = String::from("n,proposal,row,mu");
    for j in 0..s {
        let _ = write!(out, ",sigma_{j}");
    }
    out.push('\n');
    for st in setups {
        for (spec, p) in &st.proposals {
            for i in 0..s {
                let _ = write!(
                    out,
                    "{},{},{i},{}",
                    fmt_f64(st.model.n()),
                    spec.label(),
                    fmt_f64(p.mu[i])
                );
                for v in p.sigma.matrix().row(i) {
                    let _ = write!(out, ",{}", fmt_f64(*v));
                }
                out.push('\n');
            }
        }
    }
    out
}

fn run_theta(cfg: &ExperimentConfig) -> CliResult<()> {
    let text = theta_table(cfg)?;
    write_atomic(&cfg.out_dir.join("theta.csv"), &text)
}

/// `θ̂(h)` for the configured `h`, with `θ̂(h)·h^{2r}` and the fitted slope.
pub fn theta_table(cfg: &ExperimentConfig) -> CliResult<String> {
    let tol = Tolerances::default();
    let p = &cfg.pairing;
    let r = p.r();
    let vals = cfg
        .theta_h
        .iter()
        .map(|&h| theta_fourier(h, p, &tol))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = String::from("h,theta_hat,theta_hat_times_h_2r\n");
    for (&h, &v) in cfg.theta_h.iter().zip(&vals) {
        let _ = writeln!(out, "{h},{},{}", fmt_f64(v), fmt_f64(v * (h as f64).powf(2.0 * r)));
    }
    let xs: Vec<f64> = cfg.theta_h.iter().map(|&h| h as f64).collect();
    match fit_decay_rate(&xs, &vals) {
        Ok(slope) => println!("fitted slope {slope:.4}, predicted -2r = {:.4}", -2.0 * r),
        Err(e) => warn!("no slope fitted: {e}"),
    }
    Ok(out)
}

fn run_cbc(cfg: &ExperimentConfig) -> CliResult<()> {
    let (vector, csv) = cbc_artifacts(cfg)?;
    write_atomic(&cfg.out_dir.join("generating_vector.txt"), &vector)?;
    write_atomic(&cfg.out_dir.join("cbc.csv"), &csv)
}

/// The vector file and a per-component table of squared worst-case errors.
pub fn cbc_artifacts(cfg: &ExperimentConfig) -> CliResult<(String, String)> {
    let table = ThetaTable::new(cfg.cbc_points, &cfg.pairing, &Tolerances::default())?;
    let (z, errors) = cbc_with_table(cfg.cbc_dim, &cfg.weights, &table)?;
    let mut csv = String::from("j,z_j,wce_squared\n");
    for (j, (c, e)) in z.components().iter().zip(&errors).enumerate() {
        let _ = writeln!(csv, "{},{c},{}", j + 1, fmt_f64(*e));
    }
    Ok((z.to_text(), csv))
}

fn run_laplace(cfg: &ExperimentConfig) -> CliResult<()> {
    let f = |x: &[f64]| cfg.test_function.eval(x);
    let tol = Tolerances::default();
    let mut out = String::from("n,j_n_numeric,leading_order,ratio\n");
    for &n in &cfg.noise_levels {
        let model = build_model(cfg, n)?;
        let c = rqmc_is::estimators::laplace_leading(&model, &f, n, &tol)?;
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(n),
            fmt_f64(c.j_n_numeric),
            fmt_f64(c.leading_order),
            fmt_f64(c.ratio)
        );
    }
    write_atomic(&cfg.out_dir.join("laplace.csv"), &out)
}

/// Dry run: resolves proposals and predicted rates without touching disk.
pub fn validate_report(cfg: &ExperimentConfig) -> CliResult<String> {
    let mut out = String::new();
    let _ = writeln!(out, "experiment {}: config is valid", cfg.experiment);
    match cfg.experiment {
        Experiment::Cbc => {
            let _ = writeln!(
                out,
                "cbc: N = {}, s = {}, {:?} weights, r = {}",
                cfg.cbc_points,
                cfg.cbc_dim,
                cfg.weights.kind,
                fmt_f64(cfg.pairing.r())
            );
            return Ok(out);
        }
        Experiment::ThetaDecay => {
            let _ = writeln!(
                out,
                "theta: {} frequencies, r = {}",
                cfg.theta_h.len(),
                fmt_f64(cfg.pairing.r())
            );
            return Ok(out);
        }
        _ => {}
    }
    for n in noise_levels(cfg) {
        let st = setup(cfg, n)?;
        let sigma0 = st.model.prior.cov.max_eigenvalue();
        let _ = writeln!(
            out,
            "n = {}: mu* = {}, Psi(mu*) = {:.3e}, Sigma* eigenvalues in [{:.3e}, {:.3e}]",
            fmt_f64(n),
            fmt_vec(&st.map.mu_star),
            st.map.psi,
            st.map.sigma_star.min_eigenvalue(),
            st.map.sigma_star.max_eigenvalue()
        );
        for (spec, p) in &st.proposals {
            let _ = write!(
                out,
                "  {:<9} mu = {}, Sigma eigenvalues in [{:.3e}, {:.3e}]",
                spec.label(),
                fmt_vec(&p.mu),
                p.sigma.min_eigenvalue(),
                p.sigma.max_eigenvalue()
            );
            if cfg.experiment == Experiment::LaplaceCheck || matches!(spec.family, Family::Student { .. }) {
                out.push('\n');
                continue;
            }
            let (kind, m_scale, name) = match spec.kind {
                ProposalKind::Lapis { m } => (RateKind::Scaled, m, "gamma_n2"),
                ProposalKind::Newis { delta } => (RateKind::Scaled, 1.0 / delta, "gamma_n2"),
                _ => (RateKind::Fixed, 1.0, "gamma_n1"),
            };
            let tp = TheoryParams {
                m_growth: cfg.theory.m_growth,
                m_f: cfg.theory.m_f,
                m_psi: cfg.theory.m_psi,
                delta: cfg.delta.unwrap_or(0.0),
                m_scale,
                s: cfg.s,
                lambda_min_sigma: p.sigma.min_eigenvalue(),
                lambda_max_sigma0: sigma0,
                lambda_min_sigma_star: st.map.sigma_star.min_eigenvalue(),
                lambda_max_sigma_star: st.map.sigma_star.max_eigenvalue(),
            };
            tp.validate()?;
            let rate = predicted_rate(&tp, n, kind);
            let _ = writeln!(
                out,
                ", {name} = {:.4}, predicted RMSE ~ N^-{:.3}{}",
                rate.gamma,
                rate.rate_exponent,
                if rate.applicable {
                    ""
                } else {
                    " (gamma <= 1/2: no rate guarantee)"
                }
            );
        }
    }
    Ok(out)
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}
