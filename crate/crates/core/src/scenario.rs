//! Config-driven experiment runner binding all modules into reproducible
//! scenarios with CSV/JSON artifacts.
//!
//! Every run writes `manifest.json` (resolved config, version, wall time),
//! the scenario's CSV tables, and `summary.json` with one pass/fail record
//! per check. CSV bodies are deterministic for a fixed config and seed.

use crate::cantor::{build_cantor_model, cantor_flows, demonstrate_from_flows};
use crate::catalog::{cusp_paused, cusp_stay, cusp_through};
use crate::energy::{estimate_modulus, probe_grid, EnergyField, ModulusEstimate, PointCloud};
use crate::error::{GradFlowError, Result};
use crate::flow::{integrate_flow, metric_dt, set_distance, Horizon};
use crate::io::{format_cell, load_tabulated_energy, write_csv, write_curve_csv};
use crate::mm::{convergence_study, SolverConfig};
use crate::onedim::{decompose_derivative, pseudo_inverse, smooth_energy};
use crate::penalize::{
    audit_residuals, build_phi_tau_family, estimate_tau_cloud, run_family_mm, sample_range,
    select_lambda, select_tau_bar, verify_confinement, EpsSchedule,
};
use crate::point::Point;
use crate::reparam::{minimality_defect, minimalize, ReparamConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOverrides {
    pub grid_factor: Option<f64>,
    pub merge_tol: Option<f64>,
    pub max_branches: Option<usize>,
    pub seeds: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub energy: Option<String>,
    pub u0: Option<Vec<f64>>,
    pub taus: Option<Vec<f64>>,
    pub t_max: Option<f64>,
    pub eps: Option<f64>,
    pub eps_ladder: Option<Vec<f64>>,
    pub sigma_ladder: Option<Vec<f64>>,
    pub depth: Option<usize>,
    pub pause: Option<f64>,
    pub n_steps: Option<usize>,
    pub cloud_factor: Option<usize>,
    pub samples: Option<usize>,
    pub flow_tol: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<String>,
    pub solver: Option<SolverOverrides>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| GradFlowError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !SCENARIOS.iter().any(|s| s.name == self.scenario) {
            return Err(GradFlowError::Config(format!(
                "unknown scenario `{}`; run `list` for the catalog",
                self.scenario
            )));
        }
        if let Some(taus) = &self.taus {
            if taus.is_empty() {
                return Err(GradFlowError::Config("taus must be nonempty".into()));
            }
            if taus.iter().any(|&t| t <= 0.0) || !taus.windows(2).all(|w| w[1] < w[0]) {
                return Err(GradFlowError::Config(
                    "taus must be positive and strictly decreasing".into(),
                ));
            }
        }
        if let Some(l) = &self.eps_ladder {
            if l.is_empty() || l.iter().any(|&e| !(0.0..0.25).contains(&e) || e == 0.0) {
                return Err(GradFlowError::Config("eps ladder must lie in (0, 1/4)".into()));
            }
        }
        Ok(())
    }

    fn solver_config(&self) -> SolverConfig {
        let mut cfg = SolverConfig {
            seed: self.seed.unwrap_or(0),
            ..SolverConfig::default()
        };
        if let Some(s) = &self.solver {
            if let Some(g) = s.grid_factor {
                cfg.grid_factor = g;
            }
            if let Some(m) = s.merge_tol {
                cfg.merge_tol = m;
            }
            if let Some(b) = s.max_branches {
                cfg.max_branches = b;
            }
            if let Some(k) = s.seeds {
                cfg.seeds = k;
            }
        }
        cfg
    }
}

/// One pass/fail record bound to an acceptance check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub id: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

impl Check {
    fn le(id: &str, value: f64, bound: f64, detail: impl Into<String>) -> Check {
        Check {
            id: id.into(),
            passed: value <= bound,
            value,
            bound,
            detail: detail.into(),
        }
    }

    fn ge(id: &str, value: f64, bound: f64, detail: impl Into<String>) -> Check {
        Check {
            id: id.into(),
            passed: value >= bound,
            value,
            bound,
            detail: detail.into(),
        }
    }

    fn flag(id: &str, passed: bool, detail: impl Into<String>) -> Check {
        Check {
            id: id.into(),
            passed,
            value: passed as u8 as f64,
            bound: 1.0,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl Summary {
    fn new(scenario: &str, checks: Vec<Check>) -> Summary {
        Summary {
            scenario: scenario.into(),
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub required: &'static str,
    pub description: &'static str,
}

pub const SCENARIOS: &[ScenarioInfo] = &[
    ScenarioInfo {
        name: "mm-convergence",
        required: "taus (optional: energy, u0, t_max)",
        description: "proximal-scheme sweep against the integrated flow with fitted order",
    },
    ScenarioInfo {
        name: "confinement",
        required: "(optional: eps, n_steps, cloud_factor)",
        description: "distance-penalized scheme confined to sampled trajectory values",
    },
    ScenarioInfo {
        name: "strong-approx",
        required: "(optional: eps_ladder, sigma_ladder, t_max)",
        description: "per-step-size perturbation family driving all branches to one solution",
    },
    ScenarioInfo {
        name: "minimalize",
        required: "(optional: pause)",
        description: "dwell-time excision recovering the minimal representative",
    },
    ScenarioInfo {
        name: "onedim-smoothing",
        required: "(optional: pause, eps_ladder)",
        description: "scalar singular decomposition and mollified smoothing ladder",
    },
    ScenarioInfo {
        name: "cantor",
        required: "(optional: depth, samples)",
        description: "flow resting on a Cantor-like critical set: minimal vs non-minimal",
    },
    ScenarioInfo {
        name: "custom",
        required: "energy, taus (optional: u0, t_max)",
        description: "proximal sweep for any cataloged or tabulated energy",
    },
];

pub fn list_text() -> String {
    let mut out = String::from("available scenarios:\n");
    for s in SCENARIOS {
        out.push_str(&format!("  {:<18} {}\n", s.name, s.description));
        out.push_str(&format!("  {:<18}   needs: {}\n", "", s.required));
    }
    out
}

pub fn list_json() -> String {
    serde_json::to_string_pretty(SCENARIOS).expect("static catalog")
}

/// Resolves an energy label: catalog names, `plateauK`, `cantorD`, or
/// `table:PATH` for a CSV-tabulated 1-D energy.
pub fn resolve_energy(label: &str) -> Result<EnergyField> {
    match label {
        "quadratic" => return Ok(EnergyField::quadratic(1)),
        "quadratic2" => return Ok(EnergyField::quadratic(2)),
        "quadratic3" => return Ok(EnergyField::quadratic(3)),
        "cusp" => return Ok(EnergyField::cusp()),
        "constant" => return Ok(EnergyField::constant(1, 0.0)),
        "linear" => return Ok(EnergyField::linear(-1.0)),
        "aniso2d" => return Ok(EnergyField::aniso2d()),
        _ => {}
    }
    if let Some(k) = label.strip_prefix("plateau") {
        let k: usize = k
            .parse()
            .map_err(|_| GradFlowError::Config(format!("bad plateau size in `{}`", label)))?;
        return Ok(EnergyField::staircase(k.clamp(1, 16)));
    }
    if let Some(d) = label.strip_prefix("cantor") {
        let d: usize = d
            .parse()
            .map_err(|_| GradFlowError::Config(format!("bad depth in `{}`", label)))?;
        return Ok(build_cantor_model(d)?.energy().clone());
    }
    if let Some(path) = label.strip_prefix("table:") {
        return load_tabulated_energy(Path::new(path));
    }
    Err(GradFlowError::Config(format!("unknown energy `{}`", label)))
}

fn out_dir(cfg: &ScenarioConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.out_dir.clone().unwrap_or_else(|| "gradflow-out".into()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Runs a scenario, writes its artifacts, and returns the summary.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Summary> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let dir = out_dir(cfg)?;
    let summary = match cfg.scenario.as_str() {
        "mm-convergence" => run_convergence(cfg, &dir, false)?,
        "custom" => run_convergence(cfg, &dir, true)?,
        "confinement" => run_confinement(cfg, &dir)?,
        "strong-approx" => run_strong_approx(cfg, &dir)?,
        "minimalize" => run_minimalize(cfg, &dir)?,
        "onedim-smoothing" => run_smoothing(cfg, &dir)?,
        "cantor" => run_cantor(cfg, &dir)?,
        other => return Err(GradFlowError::Config(format!("unknown scenario `{}`", other))),
    };
    let manifest = serde_json::json!({
        "config": cfg,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_ms": started.elapsed().as_millis() as u64,
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

fn point_from(cfg: &ScenarioConfig, default: &[f64]) -> Point {
    match &cfg.u0 {
        Some(v) if !v.is_empty() && v.len() <= 3 => Point::new(v),
        _ => Point::new(default),
    }
}

// --- mm-convergence / custom ---------------------------------------------------

fn run_convergence(cfg: &ScenarioConfig, dir: &Path, custom: bool) -> Result<Summary> {
    let label = cfg.energy.clone().unwrap_or_else(|| "quadratic".into());
    if custom && cfg.energy.is_none() {
        return Err(GradFlowError::Config("custom scenario needs an energy".into()));
    }
    let field = resolve_energy(&label)?;
    let u0 = point_from(cfg, &vec![1.0; field.dim()]);
    let taus = cfg
        .taus
        .clone()
        .unwrap_or_else(|| vec![0.1, 0.05, 0.025, 0.0125]);
    let t_max = cfg.t_max.unwrap_or(1.0);
    let tol = cfg.flow_tol.unwrap_or(1e-10);
    let solver = cfg.solver_config();

    let reference = integrate_flow(&field, &u0, t_max, tol)?;
    write_curve_csv(&dir.join("reference.csv"), &reference.curve)?;

    let table = convergence_study(|_| field.clone(), &u0, &taus, t_max, &reference.curve, &solver)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                format_cell(r.tau),
                r.branch_id.clone(),
                format_cell(r.d_t),
                format_cell(r.d_t_set),
            ]
        })
        .collect();
    write_csv(&dir.join("convergence.csv"), &["tau", "branch_id", "d_T", "D_T"], &rows)?;

    let mut checks = Vec::new();
    let max_resid = table.rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let slack = 10.0 * table.pos_slack / taus.last().copied().unwrap_or(1.0) + 1e-9;
    checks.push(Check::le(
        "residual-law-upper",
        max_resid,
        slack,
        "unperturbed runs keep the Euler residual within solver slack",
    ));
    if !custom {
        let worst_ratio = table
            .set_distances
            .iter()
            .map(|(t, d)| d / (1.5 * t))
            .fold(0.0, f64::max);
        checks.push(Check::le(
            "discrete-sup-distance-bound",
            worst_ratio,
            1.0,
            "sup distance of every branch within 0.5 tau + tau of the flow",
        ));
        checks.push(Check::ge(
            "convergence-order",
            table.fitted_order,
            0.9,
            "log-log fitted order of the sup distance in tau",
        ));
    }
    checks.push(Check::flag(
        "branch-tree-complete",
        !table.truncated,
        "tie tree stayed within the branch cap",
    ));
    Ok(Summary::new(&cfg.scenario, checks))
}

// --- confinement -----------------------------------------------------------------

fn run_confinement(cfg: &ScenarioConfig, dir: &Path) -> Result<Summary> {
    let eps = cfg.eps.unwrap_or(0.1);
    let n_steps = cfg.n_steps.unwrap_or(800);
    let cloud_factor = cfg.cloud_factor.unwrap_or(3).max(2);
    let solver = cfg.solver_config();

    let field = EnergyField::cusp();
    let u = cusp_stay(1.0, 2.0, 40_001);
    let u0 = Point::scalar(1.0);

    // empirical modulus on a range prefix covering the eventual cloud span
    let radii: Vec<f64> = (2..=22).map(|k| 0.5_f64.powi(k)).collect();
    let mut t_cap = 0.1_f64;
    let mut omega: ModulusEstimate;
    let mut l_bound: f64;
    let mut tau: f64;
    let mut tau_u: f64;
    loop {
        let pre_pts: Vec<Point> = (0..=400).map(|k| u.eval(t_cap * k as f64 / 400.0)).collect();
        let cloud_pre = PointCloud::new(pre_pts)?;
        let probes = probe_grid(&cloud_pre, 0.25, 40_001);
        omega = estimate_modulus(&field, &cloud_pre, &probes, &radii)?;
        l_bound = cloud_pre
            .points()
            .iter()
            .map(|p| field.grad_norm(p))
            .fold(1.0, f64::max);
        tau_u = estimate_tau_cloud(&field, &cloud_pre, &omega)?;
        tau = select_tau_bar(l_bound, &omega, eps, Some(tau_u))?;
        let span = (cloud_factor * n_steps) as f64 * tau;
        if span <= t_cap || t_cap >= 1.9 {
            break;
        }
        t_cap = (1.2 * span).min(1.9);
    }
    let t_cloud = (cloud_factor * n_steps) as f64 * tau;
    let cloud = sample_range(&u, tau, t_cloud)?;
    let lam = select_lambda(l_bound, &omega, tau, eps / 2.0)?;

    let report = verify_confinement(
        &field,
        &cloud,
        lam.lambda,
        tau,
        &u0,
        n_steps,
        &solver,
        Some(&omega),
    )?;

    // artifacts
    let hyp_rows: Vec<Vec<String>> = report
        .hypothesis
        .iter()
        .map(|h| {
            vec![
                format_cell(h.x.x()),
                format_cell(h.witness.x()),
                format_cell(h.defect),
                (h.ok as u8).to_string(),
            ]
        })
        .collect();
    write_csv(&dir.join("hypothesis.csv"), &["x", "witness", "defect", "ok"], &hyp_rows)?;
    std::fs::write(dir.join("confinement.json"), serde_json::to_string_pretty(&report)?)?;

    // energy domination against u(t ^ t_cloud)
    let pen = crate::penalize::make_penalized(&field, &cloud, lam.lambda)?;
    let run = crate::mm::run_mm(
        pen.as_field(),
        &u0,
        tau,
        n_steps,
        crate::mm::BranchPolicy::AllBranches,
        &solver,
        Some(&cloud),
    )?;
    let mut dom = f64::NEG_INFINITY;
    for seq in &run.sequences {
        for (n, v) in seq.values.iter().enumerate() {
            let t = (n as f64 * tau).min(t_cloud);
            dom = dom.max(field.eval(v) - field.eval(&u.eval(t)));
        }
    }
    let audit = audit_residuals(
        &field,
        &run.sequences,
        lam.lambda,
        report.residual_slack,
        Some(&cloud),
        solver.merge_tol,
    );

    // negative control: lambda = 0 on a cloud that is not near-invariant
    let quad = EnergyField::quadratic(1);
    let one = PointCloud::from_scalars(vec![1.0])?;
    let neg = verify_confinement(&quad, &one, 0.0, 0.1, &Point::scalar(1.0), 3, &solver, None)?;

    let checks = vec![
        Check::flag(
            "confinement-membership",
            report.all_confined && !report.branches.is_empty(),
            format!(
                "all {} branches stayed on the {}-point cloud for {} steps (tau = {:e}, lambda = {})",
                report.branches.len(),
                cloud.len(),
                n_steps,
                tau,
                lam.lambda
            ),
        ),
        Check::le(
            "near-invariance-hypothesis",
            report.flagged_points as f64,
            1.0,
            "witness defect <= delta everywhere except at most the terminal sample",
        ),
        Check::flag(
            "penalty-rule",
            report.lambda_rule.map(|l| l.ok).unwrap_or(false),
            "lambda^2 exceeds 14 L omega(3 L tau) + 2 delta^2",
        ),
        Check::le(
            "residual-law-upper",
            audit.upper_violations as f64,
            0.0,
            format!("max residual {} vs lambda + slack", audit.max_residual),
        ),
        Check::le(
            "residual-law-lower-offcloud",
            audit.lower_violations as f64,
            0.0,
            format!("{} steps left the cloud", audit.offcloud_steps),
        ),
        Check::le(
            "offcloud-steps",
            audit.offcloud_steps as f64,
            0.0,
            "a passing confinement run never leaves the cloud",
        ),
        Check::le(
            "step-bound",
            report
                .branches
                .iter()
                .map(|b| b.max_step_rate)
                .fold(0.0, f64::max),
            2.0 * l_bound,
            "per-step movement within 2 L tau",
        ),
        Check::le(
            "energy-domination",
            dom,
            1e-10,
            "phi(U(t)) <= phi(u(t ^ T)) along every branch",
        ),
        Check::ge(
            "negative-control-escape",
            neg.escapes as f64,
            1.0,
            "lambda = 0 on a non-invariant cloud must escape",
        ),
    ];
    Ok(Summary::new(&cfg.scenario, checks))
}

// --- strong approximation ----------------------------------------------------------

fn run_strong_approx(cfg: &ScenarioConfig, dir: &Path) -> Result<Summary> {
    let eps_ladder = cfg.eps_ladder.clone().unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
    let sigma_ladder = cfg
        .sigma_ladder
        .clone()
        .unwrap_or_else(|| vec![0.02, 0.01, 0.005]);
    let t_max = cfg.t_max.unwrap_or(2.0);
    let solver = cfg.solver_config();

    let field = EnergyField::cusp();
    let u = cusp_stay(1.0, (t_max + 0.5).max(2.5), 50_001);
    let u0 = Point::scalar(1.0);

    // certified step thresholds for the ladder (reported; the ladder itself
    // runs at tractable step sizes, with the ratio recorded per rung)
    let dense: Vec<Point> = (0..=2000)
        .map(|k| u.eval(u.horizon() * k as f64 / 2000.0))
        .collect();
    let cloud_full = PointCloud::new(dense)?;
    let probes = probe_grid(&cloud_full, 0.25, 20_001);
    let radii: Vec<f64> = (0..=30).map(|k| 0.5_f64.powi(k)).collect();
    let omega = estimate_modulus(&field, &cloud_full, &probes, &radii)?;
    let l_bound = cloud_full
        .points()
        .iter()
        .map(|p| field.grad_norm(p))
        .fold(1.0, f64::max);
    let certified: Vec<f64> = eps_ladder
        .iter()
        .map(|&e| select_tau_bar(l_bound, &omega, e, None))
        .collect::<Result<_>>()?;

    let schedule = EpsSchedule::new(
        eps_ladder.clone(),
        vec![],
        sigma_ladder.clone(),
        certified.clone(),
        true,
    )?;
    let family = build_phi_tau_family(&field, &u, schedule)?;

    let fam_rows: Vec<Vec<String>> = family
        .rows()?
        .iter()
        .map(|r| {
            vec![
                format_cell(r.tau_low),
                format_cell(r.tau_high),
                format_cell(r.eps),
                format_cell(r.lambda),
                r.n_cloud_points.to_string(),
                format_cell(r.t_bar),
            ]
        })
        .collect();
    write_csv(
        &dir.join("family.csv"),
        &["tau_low", "tau_high", "eps", "lambda", "n_cloud_points", "T_bar"],
        &fam_rows,
    )?;

    let runs: Vec<Result<(f64, f64, crate::penalize::ResidualAudit, bool)>> = sigma_ladder
        .par_iter()
        .map(|&sigma| {
            let (run, pen, row) = run_family_mm(&family, &u0, sigma, t_max, &solver)?;
            let curves = crate::penalize::branch_curves(&run);
            let d = set_distance(&u, &curves, Horizon::Finite(t_max))?;
            let audit = audit_residuals(
                &field,
                &run.sequences,
                row.eps,
                run.pos_slack / sigma + 1e-9,
                Some(pen.cloud()),
                solver.merge_tol,
            );
            Ok((sigma, d, audit, run.truncated))
        })
        .collect();

    let mut dt_rows = Vec::new();
    let mut dts = Vec::new();
    let mut upper_viol = 0usize;
    let mut lower_viol = 0usize;
    let mut truncated = false;
    for r in runs {
        let (sigma, d, audit, trunc) = r?;
        dt_rows.push(vec![format_cell(sigma), format_cell(d)]);
        dts.push(d);
        upper_viol += audit.upper_violations;
        lower_viol += audit.lower_violations;
        truncated |= trunc;
    }
    write_csv(&dir.join("dt.csv"), &["tau", "D_T"], &dt_rows)?;

    let decreasing = dts.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let desk_ratios: Vec<f64> = sigma_ladder
        .iter()
        .zip(&certified)
        .map(|(s, c)| s / c)
        .collect();
    let checks = vec![
        Check::le(
            "all-branch-sup-distance",
            *dts.last().unwrap(),
            0.05,
            format!("distances along the ladder: {:?}", dts),
        ),
        Check::flag(
            "sup-distance-decreasing",
            decreasing,
            "uniform distance shrinks as the step size falls",
        ),
        Check::le(
            "residual-law-upper",
            upper_viol as f64,
            0.0,
            "Euler residuals within eps_n + slack on every rung",
        ),
        Check::le(
            "residual-law-lower-offcloud",
            lower_viol as f64,
            0.0,
            "off-cloud steps keep the minimum penalized residual",
        ),
        Check::flag(
            "branch-tree-complete",
            !truncated,
            "tie enumeration below the cap",
        ),
        Check::flag(
            "certified-thresholds-reported",
            desk_ratios.iter().all(|r| r.is_finite()),
            format!("sigma / tau_bar ratios per rung: {:?}", desk_ratios),
        ),
    ];
    Ok(Summary::new(&cfg.scenario, checks))
}

// --- minimalize ----------------------------------------------------------------------

fn run_minimalize(cfg: &ScenarioConfig, dir: &Path) -> Result<Summary> {
    let pause = cfg.pause.unwrap_or(0.5);
    let rcfg = ReparamConfig::default();
    let field = EnergyField::cusp();
    let n = cfg.samples.unwrap_or(25_001);
    let horizon = 2.0 + pause;
    let u = cusp_paused(1.0, pause, horizon, n);
    let v = cusp_through(1.0, horizon, n);

    let defect_in = minimality_defect(&field, &u, rcfg.crit_tol);
    let w = minimalize(&field, &u, rcfg.crit_tol, &rcfg)?;
    let defect_out = minimality_defect(&field, &w, rcfg.crit_tol);
    let gap = metric_dt(&w, &v, 2.0)?;
    let w2 = minimalize(&field, &w, rcfg.crit_tol, &rcfg)?;
    let idem = metric_dt(&w2, &w, w.horizon().min(w2.horizon()))?;

    let dwell_rows: Vec<Vec<String>> = u
        .times()
        .iter()
        .map(|&t| {
            let g = field.grad_norm(&u.eval(t));
            vec![
                format_cell(t),
                format_cell(g),
                ((g <= rcfg.crit_tol) as u8).to_string(),
            ]
        })
        .collect();
    write_csv(&dir.join("dwell.csv"), &["t", "grad_norm", "in_dwell_set"], &dwell_rows)?;
    write_curve_csv(&dir.join("input.csv"), &u)?;
    write_curve_csv(&dir.join("minimalized.csv"), &w)?;

    let checks = vec![
        Check::flag(
            "input-defect-window",
            (0.45..=0.55).contains(&defect_in),
            format!("dwell measure of the input: {}", defect_in),
        ),
        Check::le("output-defect", defect_out, 0.01, "excised curve has no dwell"),
        Check::le(
            "matches-minimal-branch",
            gap,
            1e-3,
            "sup distance to the closed-form minimal representative",
        ),
        Check::le("idempotence", idem, 1e-3, "re-excision is the identity at grid scale"),
    ];
    Ok(Summary::new(&cfg.scenario, checks))
}

// --- onedim smoothing ------------------------------------------------------------------

fn run_smoothing(cfg: &ScenarioConfig, dir: &Path) -> Result<Summary> {
    let pause = cfg.pause.unwrap_or(0.5);
    let ladder = cfg.eps_ladder.clone().unwrap_or_else(|| vec![0.1, 0.05, 0.025]);
    let n = cfg.samples.unwrap_or(25_001);
    let horizon = 2.0 + pause;
    // increasing reflection of the paused trajectory
    let u = cusp_paused(1.0, pause, horizon, n).transform_values(|p| *p * -1.0);
    let f = |x: f64| 2.0 * x.abs().sqrt();
    let crit_tol = 1e-7;

    let pi = pseudo_inverse(&u, 6001)?;
    let decomp = decompose_derivative(&pi, f, crit_tol)?;

    // (eps, sup gap, neighborhood bound, flow distance, off-support exact, rows)
    type EpsRow = (f64, f64, f64, f64, bool, Vec<Vec<String>>);
    let per_eps: Vec<Result<EpsRow>> = ladder
        .par_iter()
        .map(|&eps| {
            let sm = smooth_energy(&decomp, f, eps)?;
            let mut gap = 0.0_f64;
            let mut bound = 0.0_f64;
            let mut off_exact = true;
            let mut rows = Vec::with_capacity(sm.x_grid.len());
            for (i, &x) in sm.x_grid.iter().enumerate() {
                gap = gap.max(sm.eprime[i] - sm.eprime_eps[i]);
                if sm.in_n_eps(x) {
                    bound = bound.max(sm.eprime[i]);
                } else if sm.eprime_eps[i] != sm.eprime[i] {
                    off_exact = false;
                }
                let inv_f = if sm.eprime[i] > crit_tol {
                    1.0 / sm.eprime[i]
                } else {
                    0.0
                };
                rows.push(vec![
                    format_cell(x),
                    format_cell(inv_f),
                    format_cell(sm.m_eps[i]),
                    format_cell(sm.eprime[i]),
                    format_cell(sm.eprime_eps[i]),
                ]);
            }
            let dt = metric_dt(&sm.u_eps, &u, 2.0)?;
            Ok((eps, gap, 2.0 * bound, dt, off_exact, rows))
        })
        .collect();

    let mut gaps = Vec::new();
    let mut dts = Vec::new();
    let mut checks = Vec::new();
    for r in per_eps {
        let (eps, gap, bound, dt, off_exact, rows) = r?;
        write_csv(
            &dir.join(format!("smoothing_{}.csv", eps)),
            &["x", "inv_f", "m_eps", "Eprime", "Eprime_eps"],
            &rows,
        )?;
        checks.push(Check::le(
            &format!("velocity-gap-bound-eps-{}", eps),
            gap,
            bound,
            "sup |E'_eps - E'| <= 2 sup over the eps-neighborhood of E'",
        ));
        checks.push(Check::flag(
            &format!("exact-off-support-eps-{}", eps),
            off_exact,
            "E'_eps equals E' outside the support neighborhood, bitwise",
        ));
        gaps.push(gap);
        dts.push(dt);
    }
    checks.push(Check::flag(
        "velocity-gap-decreasing",
        gaps.windows(2).all(|w| w[1] < w[0]),
        format!("gaps along the ladder: {:?}", gaps),
    ));
    checks.push(Check::flag(
        "flow-distance-decreasing",
        dts.windows(2).all(|w| w[1] <= w[0] + 1e-12),
        format!("sup distances along the ladder: {:?}", dts),
    ));
    checks.push(Check::flag(
        "dwell-becomes-atom",
        decomp.atoms.len() == 1 && (decomp.atom_mass() - pause).abs() < 0.1 * pause.max(0.1),
        format!("atoms: {:?}", decomp.atoms),
    ));
    Ok(Summary::new(&cfg.scenario, checks))
}

// --- cantor -------------------------------------------------------------------------------

fn run_cantor(cfg: &ScenarioConfig, dir: &Path) -> Result<Summary> {
    let depth = cfg.depth.unwrap_or(6);
    let n = cfg.samples.unwrap_or(48_000);
    let crit_tol = 1e-4;
    let model = build_cantor_model(depth)?;
    let flows = cantor_flows(&model, n)?;
    let report = demonstrate_from_flows(&model, &flows, crit_tol)?;

    // traces
    let g_rows: Vec<Vec<String>> = (0..=20_000)
        .map(|k| {
            let x = -0.05 + (model.lambda_total + 0.1) * k as f64 / 20_000.0;
            vec![
                format_cell(x),
                format_cell(model.g(x)),
                format_cell(model.g_integral(x)),
            ]
        })
        .collect();
    write_csv(&dir.join("g.csv"), &["x", "g", "G"], &g_rows)?;
    write_curve_csv(&dir.join("v.csv"), &flows.v)?;
    write_curve_csv(&dir.join("w.csv"), &flows.w)?;
    let psi_rows: Vec<Vec<String>> = flows
        .v
        .times()
        .iter()
        .zip(&flows.psi)
        .map(|(t, p)| vec![format_cell(*t), format_cell(*p)])
        .collect();
    write_csv(&dir.join("psi.csv"), &["t", "psi"], &psi_rows)?;
    let energy_rows: Vec<Vec<String>> = flows
        .w
        .times()
        .iter()
        .map(|&s| {
            vec![
                format_cell(s),
                format_cell(-model.g_integral(flows.w_value(s))),
            ]
        })
        .collect();
    write_csv(&dir.join("energy_w.csv"), &["s", "energy"], &energy_rows)?;
    let scenario_manifest = serde_json::json!({
        "model": model.info(),
        "betas": model.betas,
        "crit_tol": crit_tol,
        "samples": n,
    });
    std::fs::write(
        dir.join("cantor_model.json"),
        serde_json::to_string_pretty(&scenario_manifest)?,
    )?;

    let mass = report.mu_mass;
    let checks = vec![
        Check::le("flow-residual-v", report.residual_v, 1e-4, "v' = g(v) on the audit grid"),
        Check::le("flow-residual-w", report.residual_w, 1e-4, "w' = g(w) on the audit grid"),
        Check::le("defect-minimal", report.defect_v, 0.05, "v crosses the critical set in measure zero"),
        Check::ge(
            "defect-nonminimal",
            report.defect_w,
            0.9 * mass,
            format!("w dwells for the inserted measure mass {}", mass),
        ),
        Check::flag(
            "witness-one-lipschitz",
            report.eta_lipschitz_ok,
            "exact inverse of the dwell-insertion map is increasing 1-Lipschitz",
        ),
        Check::le(
            "witness-recovered",
            report.eta_recovery_gap,
            5e-3,
            "time change recovered from the curves matches the exact inverse",
        ),
        Check::le(
            "energy-drop-consistency",
            (report.drop_w - report.drop_range)
                .abs()
                .max((report.drop_v - report.drop_range).abs()),
            1e-6,
            "both flows dissipate exactly the range's energy span",
        ),
        Check::le(
            "strict-decrease-on-motion",
            report.strict_violations as f64,
            0.0,
            "energy falls strictly across every cell where w moves",
        ),
        Check::le(
            "stagnation-matches-dwell",
            (report.stagnation_measure - report.dwell_w).abs(),
            0.05,
            "flat time of w equals the measured near-critical dwell",
        ),
    ];
    Ok(Summary::new(&cfg.scenario, checks))
}
