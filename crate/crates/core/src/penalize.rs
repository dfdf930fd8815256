//! Distance-penalized perturbations `phi + lambda dist(., U)` of an energy,
//! the quantitative rules selecting the penalty coefficient and the step-size
//! threshold, trajectory sampling, confinement verification, and assembly of
//! the per-step-size family of perturbed energies.

use crate::energy::{EnergyField, EnergyKernel, ModulusEstimate, PointCloud};
use crate::error::{GradFlowError, Result};
use crate::flow::Curve;
use crate::mm::{
    euler_residual, interpolate_pc, run_mm, steps_for, BranchPolicy, MmRun, SolverConfig,
    StepSequence,
};
use crate::point::Point;
use serde::Serialize;
use std::sync::Arc;

/// Penalty lattice for the coefficient search.
pub const LAMBDA_LATTICE: f64 = 1e-4;
/// Hard cap from the confinement hypothesis: coefficients live below 1/4.
pub const LAMBDA_CAP: f64 = 0.25;

/// `phi + lambda dist(., U)`: the base energy plus a distance penalty.
///
/// The perturbation has Lipschitz seminorm exactly `lambda` (the distance
/// function is 1-Lipschitz and the slope is attained along any ray leaving
/// the cloud). The gradient is reported only off the medial axis of the
/// cloud; the proximal solver never differentiates through the kink.
#[derive(Clone)]
pub struct PenalizedEnergy {
    base: EnergyField,
    cloud: Arc<PointCloud>,
    lambda: f64,
    field: EnergyField,
}

struct PenalizedKernel {
    base: EnergyField,
    cloud: Arc<PointCloud>,
    lambda: f64,
}

impl EnergyKernel for PenalizedKernel {
    fn eval(&self, x: &Point) -> f64 {
        self.base.eval(x) + self.lambda * self.cloud.nearest(x).1
    }
    fn grad(&self, x: &Point) -> Point {
        let (p, d) = self.cloud.nearest(x);
        if d <= 1e-12 {
            return self.base.grad(x);
        }
        self.base.grad(x) + (*x - p) * (self.lambda / d)
    }
}

impl PenalizedEnergy {
    pub fn base(&self) -> &EnergyField {
        &self.base
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The composite as a plain energy field (usable by the proximal solver).
    pub fn as_field(&self) -> &EnergyField {
        &self.field
    }
}

pub fn make_penalized(
    base: &EnergyField,
    cloud: &PointCloud,
    lambda: f64,
) -> Result<PenalizedEnergy> {
    if lambda < 0.0 {
        return Err(GradFlowError::input("penalty coefficient must be nonnegative"));
    }
    if cloud.dim() != base.dim() {
        return Err(GradFlowError::DimMismatch {
            expected: base.dim(),
            got: cloud.dim(),
        });
    }
    let cloud = Arc::new(cloud.clone());
    let kernel = PenalizedKernel {
        base: base.clone(),
        cloud: Arc::clone(&cloud),
        lambda,
    };
    let mut field = EnergyField::new(
        base.dim(),
        format!("penalized({},{})", base.label(), lambda),
        Arc::new(kernel),
    );
    if let (Some(ts), Some(ps)) = (base.tau_star(), base.phi_star()) {
        // the penalty is nonnegative, so the lower quadratic bound survives
        field = field.with_quadratic_bound(ts, ps);
    }
    Ok(PenalizedEnergy {
        base: base.clone(),
        cloud,
        lambda,
        field,
    })
}

/// Sampled values `{u(n tau) : 0 <= n <= ceil(T / tau)}` of a trajectory,
/// merged at the cloud deduplication tolerance. The final sample may land
/// past `T`; there the curve's constant extension applies.
pub fn sample_range(u: &Curve, tau: f64, t_max: f64) -> Result<PointCloud> {
    if tau <= 0.0 || t_max < 0.0 {
        return Err(GradFlowError::input("sample_range: tau must be positive and T nonnegative"));
    }
    if u.horizon() < t_max - 1e-9 {
        return Err(GradFlowError::Horizon {
            needed: t_max,
            have: u.horizon(),
        });
    }
    let n = if t_max > 0.0 { steps_for(tau, t_max) } else { 0 };
    PointCloud::new((0..=n).map(|k| u.eval(k as f64 * tau)).collect())
}

/// Outcome of the penalty-coefficient rule.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// Right-hand side `14 L omega(3 L tau) + 2 delta^2` the square must beat.
    pub threshold: f64,
    pub margin: f64,
}

/// Smallest lattice coefficient with
/// `lambda^2 > 14 L omega(3 L tau) + 2 delta^2` and `lambda < 1/4`.
pub fn select_lambda(
    l_bound: f64,
    omega: &ModulusEstimate,
    tau: f64,
    delta: f64,
) -> Result<LambdaChoice> {
    if l_bound < 1.0 {
        return Err(GradFlowError::input("gradient bound L must be >= 1"));
    }
    if !(0.0..LAMBDA_CAP).contains(&delta) {
        return Err(GradFlowError::input("delta must lie in [0, 1/4)"));
    }
    if tau <= 0.0 {
        return Err(GradFlowError::input("tau must be positive"));
    }
    let threshold = 14.0 * l_bound * omega.eval(3.0 * l_bound * tau) + 2.0 * delta * delta;
    let mut k = (threshold.max(0.0).sqrt() / LAMBDA_LATTICE).floor() as i64;
    if k < 1 {
        k = 1;
    }
    // lattice rounding: walk up until the strict inequality holds
    let mut lambda = k as f64 * LAMBDA_LATTICE;
    while lambda * lambda <= threshold {
        k += 1;
        lambda = k as f64 * LAMBDA_LATTICE;
        if lambda >= LAMBDA_CAP {
            break;
        }
    }
    if lambda >= LAMBDA_CAP {
        return Err(GradFlowError::Infeasible(format!(
            "needs lambda^2 > {:.6} but lambda must stay below 1/4; shrink tau for this cloud",
            threshold
        )));
    }
    Ok(LambdaChoice {
        lambda,
        threshold,
        margin: lambda * lambda - threshold,
    })
}

/// Largest step threshold `2^{-k}` (from 1) with
/// `(14 L + 1) omega(3 L tau) < eps^2 / 2` and `omega(L tau) <= eps / 4`,
/// staying strictly below `min(1, tau_cloud)`.
pub fn select_tau_bar(
    l_bound: f64,
    omega: &ModulusEstimate,
    eps: f64,
    tau_cloud: Option<f64>,
) -> Result<f64> {
    if l_bound < 1.0 {
        return Err(GradFlowError::input("gradient bound L must be >= 1"));
    }
    if !(0.0..LAMBDA_CAP).contains(&eps) || eps == 0.0 {
        return Err(GradFlowError::input("eps must lie in (0, 1/4)"));
    }
    let delta = eps / 2.0;
    let cap = 1.0_f64.min(tau_cloud.unwrap_or(1.0));
    for k in 0..=200 {
        let tau = 0.5_f64.powi(k);
        if tau < cap
            && (14.0 * l_bound + 1.0) * omega.eval(3.0 * l_bound * tau) < eps * eps / 2.0
            && omega.eval(l_bound * tau) <= delta / 2.0
        {
            return Ok(tau);
        }
    }
    Err(GradFlowError::Infeasible(
        "no admissible step threshold above 2^-200".into(),
    ))
}

/// Step-size ceiling below which any near-minimizer of the proximal
/// functional started on the cloud keeps its gradient within 1/2 of the
/// center's: the largest lattice `tau` with
/// `A(tau) <= 1` and `A(tau) B(tau) < r^2/2`, where `A = 4 tau tau_*/(tau_* - tau)`,
/// `B = max_U phi + 1/2 + phi_* + max_U |z|^2/(tau_* - tau)`, and `r` is the
/// largest radius where the modulus stays at or below 1/2.
pub fn estimate_tau_cloud(
    field: &EnergyField,
    cloud: &PointCloud,
    omega: &ModulusEstimate,
) -> Result<f64> {
    let tau_star = field
        .tau_star()
        .ok_or_else(|| GradFlowError::input("estimate_tau_cloud: field carries no tau_star"))?;
    let phi_star = field
        .phi_star()
        .ok_or_else(|| GradFlowError::input("estimate_tau_cloud: field carries no phi_star"))?;
    let r_bar = largest_radius_at_or_below(omega, 0.5);
    let max_phi = cloud
        .points()
        .iter()
        .map(|p| field.eval(p))
        .fold(f64::NEG_INFINITY, f64::max);
    let max_sq = cloud
        .points()
        .iter()
        .map(|p| p.norm().powi(2))
        .fold(0.0, f64::max);
    for k in 0..=200 {
        let tau = 0.5_f64.powi(k);
        if tau >= tau_star {
            continue;
        }
        let a = 4.0 * tau * tau_star / (tau_star - tau);
        if a > 1.0 {
            continue;
        }
        let b = max_phi + 0.5 + phi_star + max_sq / (tau_star - tau);
        if a * b < r_bar * r_bar / 2.0 {
            return Ok(tau);
        }
    }
    Err(GradFlowError::Infeasible(
        "no step ceiling above 2^-200 for this cloud".into(),
    ))
}

fn largest_radius_at_or_below(omega: &ModulusEstimate, level: f64) -> f64 {
    const R_CAP: f64 = 1e9;
    if omega.eval(R_CAP) <= level {
        return R_CAP;
    }
    let (mut lo, mut hi) = (0.0_f64, R_CAP);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if omega.eval(mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

// --- confinement ---------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisRow {
    pub x: Point,
    pub witness: Point,
    pub defect: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchReport {
    pub branch_id: String,
    pub member: Vec<bool>,
    pub all_member: bool,
    /// `max_n |(U^n - U^{n-1})/tau + grad phi(U^n)|` against the base energy.
    pub max_residual: f64,
    /// Smallest residual over the steps that left the cloud, if any did.
    pub min_offcloud_residual: Option<f64>,
    /// `max_n |U^n - U^{n-1}| / tau`.
    pub max_step_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConfinementReport {
    pub lambda: f64,
    pub tau: f64,
    pub delta: f64,
    pub hypothesis: Vec<HypothesisRow>,
    pub hypothesis_ok: bool,
    pub flagged_points: usize,
    pub lambda_rule: Option<LambdaChoiceCheck>,
    pub branches: Vec<BranchReport>,
    pub all_confined: bool,
    pub escapes: usize,
    pub truncated: bool,
    /// Certified solver slack entering the residual contract.
    pub residual_slack: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LambdaChoiceCheck {
    pub lambda_sq: f64,
    pub threshold: f64,
    pub ok: bool,
}

/// Runs the penalized scheme from `u0` with every branch and reports, per
/// step, exact cloud membership (after value-certified snapping) together
/// with the per-point near-invariance table: for each cloud point `x`, the
/// best witness `z` for `|(z - x)/tau + grad phi(z)| <= delta`.
#[allow(clippy::too_many_arguments)]
pub fn verify_confinement(
    field: &EnergyField,
    cloud: &PointCloud,
    lambda: f64,
    tau: f64,
    u0: &Point,
    n_steps: usize,
    cfg: &SolverConfig,
    omega: Option<&ModulusEstimate>,
) -> Result<ConfinementReport> {
    let (_, d0) = cloud.nearest(u0);
    if d0 > cfg.merge_tol {
        return Err(GradFlowError::input("verify_confinement: u0 must lie in the cloud"));
    }
    let delta = lambda / 2.0;

    // near-invariance table
    let grads: Vec<Point> = cloud.points().iter().map(|p| field.grad(p)).collect();
    let mut hypothesis = Vec::with_capacity(cloud.len());
    let mut flagged = 0usize;
    for (x, _gx) in cloud.points().iter().zip(&grads) {
        let mut best = (cloud.points()[0], f64::INFINITY);
        for (z, gz) in cloud.points().iter().zip(&grads) {
            let defect = ((*z - *x) * (1.0 / tau) + *gz).norm();
            if defect < best.1 {
                best = (*z, defect);
            }
        }
        let ok = best.1 <= delta;
        if !ok {
            flagged += 1;
        }
        hypothesis.push(HypothesisRow {
            x: *x,
            witness: best.0,
            defect: best.1,
            ok,
        });
    }

    let lambda_rule = omega.map(|om| {
        let l_bound = grads.iter().map(|g| g.norm()).fold(1.0, f64::max);
        let threshold = 14.0 * l_bound * om.eval(3.0 * l_bound * tau) + 2.0 * delta * delta;
        LambdaChoiceCheck {
            lambda_sq: lambda * lambda,
            threshold,
            ok: lambda * lambda > threshold,
        }
    });

    let pen = make_penalized(field, cloud, lambda)?;
    let run = run_mm(
        pen.as_field(),
        u0,
        tau,
        n_steps,
        BranchPolicy::AllBranches,
        cfg,
        Some(cloud),
    )?;
    let residual_slack = run.pos_slack / tau + 1e-9;

    let mut branches = Vec::new();
    let mut escapes = 0usize;
    for seq in &run.sequences {
        let mut member = Vec::with_capacity(seq.values.len());
        let mut min_off: Option<f64> = None;
        for (i, v) in seq.values.iter().enumerate() {
            let inside = cloud.nearest(v).1 <= cfg.merge_tol;
            member.push(inside);
            if !inside && i > 0 {
                escapes += 1;
                let xi = ((*v - seq.values[i - 1]) * (1.0 / tau) + field.grad(v)).norm();
                min_off = Some(min_off.map_or(xi, |m: f64| m.min(xi)));
            }
        }
        let max_step_rate = seq
            .values
            .windows(2)
            .map(|w| w[1].dist(&w[0]) / tau)
            .fold(0.0, f64::max);
        branches.push(BranchReport {
            branch_id: seq.branch_id.clone(),
            all_member: member.iter().all(|&m| m),
            member,
            max_residual: euler_residual(field, seq),
            min_offcloud_residual: min_off,
            max_step_rate,
        });
    }

    Ok(ConfinementReport {
        lambda,
        tau,
        delta,
        hypothesis_ok: flagged == 0,
        flagged_points: flagged,
        hypothesis,
        lambda_rule,
        all_confined: branches.iter().all(|b| b.all_member),
        escapes,
        truncated: run.truncated,
        branches,
        residual_slack,
    })
}

// --- per-step-size family --------------------------------------------------------

/// Ladder of perturbation strengths: strength `eps[n]` applies to step sizes
/// in `(sigma[n+1], sigma[n]]` (with `sigma[last+1] = 0`).
#[derive(Clone, Debug, Serialize)]
pub struct EpsSchedule {
    pub eps: Vec<f64>,
    /// Sampling horizons per rung; resolved against the target curve when
    /// empty.
    pub t_bars: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Certified step thresholds per rung, when computed.
    pub certified_tau_bars: Vec<f64>,
    /// True when `sigmas` are not certified (`sigma[n] <= tau_bar(eps[n])`
    /// waived for tractable step sizes; the ratio is reported instead).
    pub desk_scale: bool,
}

impl EpsSchedule {
    pub fn new(
        eps: Vec<f64>,
        t_bars: Vec<f64>,
        sigmas: Vec<f64>,
        certified_tau_bars: Vec<f64>,
        desk_scale: bool,
    ) -> Result<Self> {
        if eps.is_empty() || eps.len() != sigmas.len() {
            return Err(GradFlowError::input("schedule: eps and sigma ladders must match"));
        }
        if !eps.windows(2).all(|w| w[1] < w[0]) || eps[0] >= LAMBDA_CAP || *eps.last().unwrap() <= 0.0 {
            return Err(GradFlowError::input("schedule: eps must decrease within (0, 1/4)"));
        }
        if !sigmas.windows(2).all(|w| w[1] < w[0]) || *sigmas.last().unwrap() <= 0.0 {
            return Err(GradFlowError::input("schedule: sigmas must be positive decreasing"));
        }
        if !t_bars.is_empty() && t_bars.len() != eps.len() {
            return Err(GradFlowError::input("schedule: t_bars length mismatch"));
        }
        if !desk_scale {
            if certified_tau_bars.len() != eps.len() {
                return Err(GradFlowError::input("certified schedule needs tau_bar per rung"));
            }
            for (s, tb) in sigmas.iter().zip(&certified_tau_bars) {
                if s > tb {
                    return Err(GradFlowError::input(format!(
                        "certified schedule violated: sigma {} above tau_bar {}",
                        s, tb
                    )));
                }
            }
        }
        Ok(EpsSchedule {
            eps,
            t_bars,
            sigmas,
            certified_tau_bars,
            desk_scale,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyRow {
    pub tau_low: f64,
    pub tau_high: f64,
    pub eps: f64,
    pub lambda: f64,
    pub n_cloud_points: usize,
    pub t_bar: f64,
    /// `sigma / tau_bar(eps)` when the certified threshold is known.
    pub desk_ratio: Option<f64>,
}

/// The per-step-size family `tau -> phi + eps_n dist(., samples(tau, t_bar_n))`.
pub struct PhiTauFamily {
    field: EnergyField,
    target: Curve,
    schedule: EpsSchedule,
    t_bars: Vec<f64>,
}

impl PhiTauFamily {
    pub fn schedule(&self) -> &EpsSchedule {
        &self.schedule
    }

    pub fn t_bars(&self) -> &[f64] {
        &self.t_bars
    }

    fn rung_for(&self, tau: f64) -> Result<usize> {
        let sig = &self.schedule.sigmas;
        if tau > sig[0] || tau <= 0.0 {
            return Err(GradFlowError::input(format!(
                "tau = {} outside the family range (0, {}]",
                tau, sig[0]
            )));
        }
        // the last rung whose sigma still dominates tau
        Ok((0..sig.len()).rev().find(|&n| tau <= sig[n]).unwrap())
    }

    /// The perturbed energy in force at step size `tau`, with its table row.
    pub fn energy_at(&self, tau: f64) -> Result<(PenalizedEnergy, FamilyRow)> {
        let n = self.rung_for(tau)?;
        let eps = self.schedule.eps[n];
        let cloud = sample_range(&self.target, tau, self.t_bars[n])?;
        let pen = make_penalized(&self.field, &cloud, eps)?;
        let row = FamilyRow {
            tau_low: self.schedule.sigmas.get(n + 1).copied().unwrap_or(0.0),
            tau_high: self.schedule.sigmas[n],
            eps,
            lambda: eps,
            n_cloud_points: cloud.len(),
            t_bar: self.t_bars[n],
            desk_ratio: self
                .schedule
                .certified_tau_bars
                .get(n)
                .map(|tb| self.schedule.sigmas[n] / tb),
        };
        Ok((pen, row))
    }

    /// One row per rung, sampled at the rung's upper step size.
    pub fn rows(&self) -> Result<Vec<FamilyRow>> {
        (0..self.schedule.sigmas.len())
            .map(|n| Ok(self.energy_at(self.schedule.sigmas[n])?.1))
            .collect()
    }
}

/// Smallest grid time with `|grad phi(u(t))| <= eps / 4`; when the gradient
/// never falls that low, falls back to the energy-drop rule
/// `phi(u(t)) < phi(u(0)) - C` with the a-priori constant of the window.
pub fn find_t_bar(field: &EnergyField, u: &Curve, eps: f64, window: f64) -> Result<f64> {
    for &t in u.times() {
        if field.grad_norm(&u.eval(t)) <= eps / 4.0 {
            return Ok(t);
        }
    }
    if let (Some(ts), Some(ps)) = (field.tau_star(), field.phi_star()) {
        let u0 = u.eval(0.0);
        let c0 = field.eval(&u0) + u0.norm().powi(2) / ts + ps;
        let c = c0 * (1.0 + (2.0 * window / ts).exp());
        let phi0 = field.eval(&u0);
        for &t in u.times() {
            if field.eval(&u.eval(t)) < phi0 - c {
                return Ok(t);
            }
        }
    }
    Err(GradFlowError::Horizon {
        needed: f64::INFINITY,
        have: u.horizon(),
    })
}

/// Builds the family for a minimal target trajectory: per rung `n`, the
/// horizon `t_bar_n` is searched along the curve (gradient rule first), and
/// the perturbation at `tau` in the rung's bracket penalizes the distance to
/// the samples of `u` at spacing `tau` up to `t_bar_n`.
pub fn build_phi_tau_family(
    field: &EnergyField,
    u: &Curve,
    mut schedule: EpsSchedule,
) -> Result<PhiTauFamily> {
    let t_bars = if schedule.t_bars.is_empty() {
        schedule
            .eps
            .iter()
            .map(|&e| find_t_bar(field, u, e, u.horizon()))
            .collect::<Result<Vec<f64>>>()?
    } else {
        std::mem::take(&mut schedule.t_bars)
    };
    for &tb in &t_bars {
        if tb > u.horizon() + 1e-9 {
            return Err(GradFlowError::Horizon {
                needed: tb,
                have: u.horizon(),
            });
        }
    }
    schedule.t_bars = t_bars.clone();
    Ok(PhiTauFamily {
        field: field.clone(),
        target: u.clone(),
        schedule,
        t_bars,
    })
}

/// Convenience wrapper running the scheme under the family at one step size.
pub fn run_family_mm(
    family: &PhiTauFamily,
    u0: &Point,
    tau: f64,
    t_max: f64,
    cfg: &SolverConfig,
) -> Result<(MmRun, PenalizedEnergy, FamilyRow)> {
    let (pen, row) = family.energy_at(tau)?;
    let run = run_mm(
        pen.as_field(),
        u0,
        tau,
        steps_for(tau, t_max),
        BranchPolicy::AllBranches,
        cfg,
        Some(pen.cloud()),
    )?;
    Ok((run, pen, row))
}

/// Piecewise-constant curves of every branch of a run.
pub fn branch_curves(run: &MmRun) -> Vec<Curve> {
    run.sequences.iter().map(interpolate_pc).collect()
}

/// Residual-law audit over the branches of a run: every step must satisfy
/// `|xi_n| <= ell + slack`, and steps leaving the cloud must keep
/// `|xi_n| >= lambda - slack`.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualAudit {
    pub ell: f64,
    pub slack: f64,
    pub max_residual: f64,
    pub upper_violations: usize,
    pub lower_violations: usize,
    pub offcloud_steps: usize,
}

pub fn audit_residuals(
    base: &EnergyField,
    sequences: &[StepSequence],
    ell: f64,
    slack: f64,
    cloud: Option<&PointCloud>,
    member_tol: f64,
) -> ResidualAudit {
    let mut max_residual = 0.0_f64;
    let mut upper = 0usize;
    let mut lower = 0usize;
    let mut off = 0usize;
    for seq in sequences {
        for w in seq.values.windows(2) {
            let xi = ((w[1] - w[0]) * (1.0 / seq.tau) + base.grad(&w[1])).norm();
            max_residual = max_residual.max(xi);
            if xi > ell + slack {
                upper += 1;
            }
            if let Some(cl) = cloud {
                if cl.nearest(&w[1]).1 > member_tol {
                    off += 1;
                    if xi < ell - slack {
                        lower += 1;
                    }
                }
            }
        }
    }
    ResidualAudit {
        ell,
        slack,
        max_residual,
        upper_violations: upper,
        lower_violations: lower,
        offcloud_steps: off,
    }
}
