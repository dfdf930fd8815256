//! Executable model of a scalar flow whose velocity vanishes on a Cantor-like
//! set: a minimal solution `v` crossing the set in zero time, and a
//! non-minimal solution `w` that dwells on it for a whole unit of time while
//! its energy still decreases strictly wherever it moves.
//!
//! At finite depth the construction works in collapsed coordinates: the
//! removed middle-third intervals are laid end to end and the remaining
//! stage-`d` cells shrink to the junction points between them. On this
//! geometry `v' = g(v)` holds exactly; the discarded tail is reported.

use crate::catalog::ChainSolution;
use crate::energy::{BumpChain, BumpInterval, EnergyField};
use crate::error::{GradFlowError, Result};
use crate::flow::Curve;

use crate::reparam::{minimality_defect, TimeChange};
use serde::Serialize;
use std::sync::Arc;

pub use crate::catalog::base_solution;
pub use crate::energy::base_bump as base_profile;

#[derive(Clone, Debug, Serialize)]
pub struct CantorModelInfo {
    pub depth: usize,
    pub n_intervals: usize,
    pub b_total: f64,
    pub lambda_total: f64,
    pub mu_mass: f64,
    pub beta_tail: f64,
    pub alpha_tail: f64,
}

/// Finite-depth model: removed intervals with their crossing schedule and the
/// stage-`depth` residual measure.
pub struct CantorModel {
    pub depth: usize,
    /// Removed intervals `(a_n, b_n)` in the original `[0, 1]` coordinates.
    pub true_intervals: Vec<(f64, f64)>,
    /// Crossing times `beta_n = l_n^{3/4}` (position order).
    pub betas: Vec<f64>,
    /// The velocity field `g` on the collapsed line, with `alpha_n = l_n^{1/4}`.
    pub chain: Arc<BumpChain>,
    /// Total crossing time `B = sum beta_n`.
    pub b_total: f64,
    /// Collapsed line length `sum l_n = 1 - (2/3)^depth`.
    pub lambda_total: f64,
    /// Crossing windows in time, `(a~_n, b~_n)`.
    pub tilde: Vec<(f64, f64)>,
    /// Residual measure: weight `2^-depth` at the collapsed time position of
    /// each remaining stage-`depth` cell.
    pub atoms: Vec<(f64, f64)>,
    /// Discarded crossing time `sum_{k > depth} 2^{k-1} (3^{-k})^{3/4}`.
    pub beta_tail: f64,
    /// Velocity-scale tail `sup_{k > depth} alpha = 3^{-(depth+1)/4}`.
    pub alpha_tail: f64,
    field: EnergyField,
}

impl CantorModel {
    pub fn info(&self) -> CantorModelInfo {
        CantorModelInfo {
            depth: self.depth,
            n_intervals: self.true_intervals.len(),
            b_total: self.b_total,
            lambda_total: self.lambda_total,
            mu_mass: self.mu_mass(),
            beta_tail: self.beta_tail,
            alpha_tail: self.alpha_tail,
        }
    }

    pub fn mu_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// The descent energy whose velocity field is `g` (gradient `-g`).
    pub fn energy(&self) -> &EnergyField {
        &self.field
    }

    pub fn g(&self, x: f64) -> f64 {
        self.chain.f(x)
    }

    /// Primitive `G(x) = int_0^x g` in closed form.
    pub fn g_integral(&self, x: f64) -> f64 {
        self.chain.f_integral(x)
    }

    /// Collapsed-time chart of the original coordinates:
    /// `R(x) = sum_n beta_n L_n(x)`.
    pub fn r_map(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for ((a, b), beta) in self.true_intervals.iter().zip(&self.betas) {
            if x <= *a {
                break;
            }
            acc += beta * (((x - a) / (b - a)).clamp(0.0, 1.0));
        }
        acc
    }

    /// Inverse chart by bisection (flats resolve to their left edge).
    pub fn s_map(&self, t: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.r_map(mid) < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Stage-by-stage middle-third model with `beta_n = l_n^{3/4}`.
pub fn build_cantor_model(depth: usize) -> Result<CantorModel> {
    if depth == 0 || depth > 14 {
        return Err(GradFlowError::input("depth must lie in 1..=14"));
    }
    let mut cells: Vec<(f64, f64)> = vec![(0.0, 1.0)];
    let mut removed: Vec<(f64, f64)> = Vec::new();
    for _stage in 1..=depth {
        let mut next = Vec::with_capacity(cells.len() * 2);
        for (a, b) in cells {
            let third = (b - a) / 3.0;
            removed.push((a + third, b - third));
            next.push((a, a + third));
            next.push((b - third, b));
        }
        cells = next;
    }
    removed.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());

    let lens: Vec<f64> = removed.iter().map(|(a, b)| b - a).collect();
    let betas: Vec<f64> = lens.iter().map(|l| l.powf(0.75)).collect();
    let alphas: Vec<f64> = lens.iter().map(|l| l.powf(0.25)).collect();
    let b_total: f64 = betas.iter().sum();
    let lambda_total: f64 = lens.iter().sum();

    // collapsed geometry: intervals laid end to end
    let mut intervals = Vec::with_capacity(removed.len());
    let mut tilde = Vec::with_capacity(removed.len());
    let mut pos = 0.0;
    let mut time = 0.0;
    for (l, (beta, alpha)) in lens.iter().zip(betas.iter().zip(&alphas)) {
        intervals.push(BumpInterval::new(pos, pos + l, *alpha));
        tilde.push((time, time + beta));
        pos += l;
        time += beta;
    }

    // residual measure: one atom of 2^-depth per remaining cell, placed at
    // its collapsed time position
    let weight = 0.5_f64.powi(depth as i32);
    let mut atoms = Vec::with_capacity(cells.len());
    cells.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let mut cum_beta = 0.0;
    let mut iv = 0usize;
    for (ca, _cb) in &cells {
        while iv < removed.len() && removed[iv].1 <= ca + 1e-15 {
            cum_beta += betas[iv];
            iv += 1;
        }
        atoms.push((cum_beta, weight));
    }

    // geometric tails of the discarded stages
    let q = 2.0 * 3.0_f64.powf(-0.75);
    let first = 0.5 * q.powi(depth as i32 + 1);
    let beta_tail = first / (1.0 - q);
    let alpha_tail = 3.0_f64.powf(-((depth + 1) as f64) / 4.0);

    let chain = Arc::new(BumpChain::new(intervals.clone()));
    let field = EnergyField::bump_chain(&format!("cantor{}", depth), intervals);
    Ok(CantorModel {
        depth,
        true_intervals: removed,
        betas,
        chain,
        b_total,
        lambda_total,
        tilde,
        atoms,
        beta_tail,
        alpha_tail,
        field,
    })
}

/// The two flows of the model together with the dwell-insertion maps.
pub struct CantorFlows {
    pub v: Curve,
    pub w: Curve,
    /// `psi(t) = t + mu([0, t))` sampled on `v`'s grid.
    pub psi: Vec<f64>,
    /// Inverse of `psi` as a 1-Lipschitz time change (exact construction).
    pub eta: TimeChange,
    pub residual_v: f64,
    pub residual_w: f64,
    /// Dwell measures `{|g o v| <= tol}` resp. `{|g o w| <= tol}`.
    pub dwell_v: f64,
    pub dwell_w: f64,
    solution: ChainSolution,
    atoms: Vec<(f64, f64)>,
}

impl CantorFlows {
    pub fn v_value(&self, t: f64) -> f64 {
        self.solution.value(t)
    }

    pub fn w_value(&self, s: f64) -> f64 {
        self.solution.value(eta_exact(&self.atoms, s))
    }

    pub fn eta_value(&self, s: f64) -> f64 {
        eta_exact(&self.atoms, s)
    }
}

fn eta_exact(atoms: &[(f64, f64)], s: f64) -> f64 {
    // atoms sorted by position; psi jumps by w_k at p_k
    let mut consumed = 0.0;
    for &(p, w) in atoms {
        let jump_start = p + consumed;
        if s < jump_start {
            break;
        }
        if s <= jump_start + w {
            return p;
        }
        consumed += w;
    }
    s - consumed
}

fn psi_exact(atoms: &[(f64, f64)], t: f64) -> f64 {
    let mut mass_below = 0.0;
    for &(p, w) in atoms {
        if p < t {
            mass_below += w;
        } else {
            break;
        }
    }
    t + mass_below
}

/// FD-vs-field residual `max |(c(t+h) - c(t-h))/2h - g(c(t))|` with exact
/// closed-form curve values and `h = 1e-6`.
fn audit_residual(
    value: &impl Fn(f64) -> f64,
    g: &impl Fn(f64) -> f64,
    horizon: f64,
    n_audit: usize,
) -> f64 {
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for k in 1..n_audit {
        let t = horizon * k as f64 / n_audit as f64;
        if t - h <= 0.0 || t + h >= horizon {
            continue;
        }
        let fd = (value(t + h) - value(t - h)) / (2.0 * h);
        worst = worst.max((fd - g(value(t))).abs());
    }
    worst
}

fn dwell_measure(value: &impl Fn(f64) -> f64, g: &impl Fn(f64) -> f64, horizon: f64, tol: f64, n: usize) -> f64 {
    let h = horizon / n as f64;
    let mut acc = 0.0;
    for k in 0..n {
        let a = g(value(h * k as f64)).abs() <= tol;
        let b = g(value(h * (k + 1) as f64)).abs() <= tol;
        acc += h * (a as u8 as f64 + b as u8 as f64) / 2.0;
    }
    acc
}

/// Builds both flows on grids fine enough for the smallest interval and
/// audits `v' = g o v`, `w' = g o w` against the field.
pub fn cantor_flows(model: &CantorModel, n_samples: usize) -> Result<CantorFlows> {
    let l_min = model
        .true_intervals
        .iter()
        .map(|(a, b)| b - a)
        .fold(f64::INFINITY, f64::min);
    let mass = model.mu_mass();
    let horizon_w = model.b_total + mass;
    let h_t = horizon_w / (n_samples - 1) as f64;
    if h_t > l_min / 16.0 {
        return Err(GradFlowError::Resolution(format!(
            "time step {} exceeds l_min/16 = {}; raise the sample count",
            h_t,
            l_min / 16.0
        )));
    }

    let solution = ChainSolution::new(model.chain.intervals(), &[]);
    let atoms = model.atoms.clone();
    let g = |x: f64| model.g(x);
    let v_val = |t: f64| solution.value(t);
    let w_val = |s: f64| solution.value(eta_exact(&atoms, s));

    let v = Curve::from_scalar_fn(v_val, model.b_total, n_samples);
    let w = Curve::from_scalar_fn(w_val, horizon_w, n_samples);
    let psi: Vec<f64> = v.times().iter().map(|&t| psi_exact(&atoms, t)).collect();
    let eta_grid: Vec<f64> = w.times().to_vec();
    let eta = TimeChange {
        values: eta_grid.iter().map(|&s| eta_exact(&atoms, s)).collect(),
        grid: eta_grid,
    };

    let n_audit = (n_samples * 2).max(50_000);
    let residual_v = audit_residual(&v_val, &g, model.b_total, n_audit);
    let residual_w = audit_residual(&w_val, &g, horizon_w, n_audit);
    let dwell_v = dwell_measure(&v_val, &g, model.b_total, 1e-4, n_audit);
    let dwell_w = dwell_measure(&w_val, &g, horizon_w, 1e-4, n_audit);

    Ok(CantorFlows {
        v,
        w,
        psi,
        eta,
        residual_v,
        residual_w,
        dwell_v,
        dwell_w,
        solution,
        atoms,
    })
}

/// Everything the non-minimality demonstration asserts, in one report.
#[derive(Clone, Debug, Serialize)]
pub struct NonminimalityReport {
    pub depth: usize,
    pub mu_mass: f64,
    pub defect_v: f64,
    pub defect_w: f64,
    pub residual_v: f64,
    pub residual_w: f64,
    /// Energy drop along each flow and the closed-form range drop.
    pub drop_v: f64,
    pub drop_w: f64,
    pub drop_range: f64,
    /// Grid cells where `w` moved but the energy failed to fall strictly.
    pub strict_violations: usize,
    /// Measure of the cells where `w` stagnates; matches the dwell measure.
    pub stagnation_measure: f64,
    pub dwell_w: f64,
    pub eta_lipschitz_ok: bool,
    /// Sup distance between the recovered time change and the exact one.
    pub eta_recovery_gap: f64,
}

pub fn demonstrate_nonminimality(
    model: &CantorModel,
    crit_tol: f64,
    n_samples: usize,
) -> Result<NonminimalityReport> {
    let flows = cantor_flows(model, n_samples)?;
    demonstrate_from_flows(model, &flows, crit_tol)
}

pub fn demonstrate_from_flows(
    model: &CantorModel,
    flows: &CantorFlows,
    crit_tol: f64,
) -> Result<NonminimalityReport> {
    let field = model.energy();

    let defect_v = minimality_defect(field, &flows.v, crit_tol);
    let defect_w = minimality_defect(field, &flows.w, crit_tol);

    let e = |x: f64| -model.g_integral(x);
    let drop_v = e(flows.v.eval(0.0).x()) - e(flows.v.eval(flows.v.horizon()).x());
    let drop_w = e(flows.w.eval(0.0).x()) - e(flows.w.eval(flows.w.horizon()).x());
    let drop_range = model.g_integral(model.lambda_total) - model.g_integral(0.0);

    // strict decrease wherever w moves; stagnation exactly on the inserted flats
    let wt = flows.w.times();
    let wv: Vec<f64> = flows.w.values().iter().map(|p| p.x()).collect();
    let mut strict_violations = 0usize;
    let mut stagnation = 0.0;
    for i in 0..wv.len() - 1 {
        let moved = (wv[i + 1] - wv[i]).abs() > 1e-13;
        if moved {
            if e(wv[i + 1]) >= e(wv[i]) - 1e-15 {
                strict_violations += 1;
            }
        } else {
            stagnation += wt[i + 1] - wt[i];
        }
    }

    let eta_lipschitz_ok = flows.eta.validate(1e-9).is_ok();
    // recover the witness from the curves and compare with the exact inverse
    let recovered = crate::reparam::construct_time_change(
        field,
        &flows.w,
        &flows.v,
        &crate::reparam::ReparamConfig {
            match_tol: 5e-3,
            lip_tol: 1e-4,
            ..Default::default()
        },
    )?;
    let mut gap = 0.0_f64;
    for (t, z) in recovered.grid.iter().zip(&recovered.values) {
        gap = gap.max((z - flows.eta_value(*t)).abs());
    }

    Ok(NonminimalityReport {
        depth: model.depth,
        mu_mass: model.mu_mass(),
        defect_v,
        defect_w,
        residual_v: flows.residual_v,
        residual_w: flows.residual_w,
        drop_v,
        drop_w,
        drop_range,
        strict_violations,
        stagnation_measure: stagnation,
        dwell_w: flows.dwell_w,
        eta_lipschitz_ok,
        eta_recovery_gap: gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_arithmetic_depth_1_and_2() {
        let m1 = build_cantor_model(1).unwrap();
        assert_eq!(m1.true_intervals.len(), 1);
        let (a, b) = m1.true_intervals[0];
        assert!((a - 1.0 / 3.0).abs() < 1e-15 && (b - 2.0 / 3.0).abs() < 1e-15);
        let beta = (1.0_f64 / 3.0).powf(0.75);
        assert!((m1.betas[0] - beta).abs() < 1e-15);
        assert!((m1.b_total - beta).abs() < 1e-15);

        let m2 = build_cantor_model(2).unwrap();
        assert_eq!(m2.true_intervals.len(), 3);
        let mut lens: Vec<f64> = m2.true_intervals.iter().map(|(a, b)| b - a).collect();
        lens.sort_by(|p, q| p.partial_cmp(q).unwrap());
        assert!((lens[0] - 1.0 / 9.0).abs() < 1e-15);
        assert!((lens[1] - 1.0 / 9.0).abs() < 1e-15);
        assert!((lens[2] - 1.0 / 3.0).abs() < 1e-15);
        let b_expect = (1.0_f64 / 3.0).powf(0.75) + 2.0 * (1.0_f64 / 9.0).powf(0.75);
        assert!((m2.b_total - b_expect).abs() < 1e-14);

        // alpha at stage k is 3^{-k/4}: decreasing
        for depth in 1..=4 {
            let m = build_cantor_model(depth).unwrap();
            let alpha_min = m
                .chain
                .intervals()
                .iter()
                .map(|iv| iv.alpha)
                .fold(f64::INFINITY, f64::min);
            assert!((alpha_min - 3.0_f64.powf(-(depth as f64) / 4.0)).abs() < 1e-12);
        }
        assert!(build_cantor_model(0).is_err());
        assert!(build_cantor_model(15).is_err());
    }

    #[test]
    fn g_vanishes_on_junctions_and_outside() {
        let m = build_cantor_model(3).unwrap();
        for iv in m.chain.intervals() {
            assert_eq!(m.g(iv.a), 0.0);
            assert_eq!(m.g(iv.b), 0.0);
            assert!(m.g(0.5 * (iv.a + iv.b)) > 0.0);
        }
        assert_eq!(m.g(-0.5), 0.0);
        assert_eq!(m.g(m.lambda_total + 0.5), 0.0);
    }

    #[test]
    fn r_and_s_maps_invert_on_intervals() {
        let m = build_cantor_model(4).unwrap();
        for (a, b) in m.true_intervals.iter().take(6) {
            for frac in [0.25, 0.5, 0.75] {
                let x = a + (b - a) * frac;
                let t = m.r_map(x);
                let back = m.s_map(t);
                assert!((back - x).abs() < 1e-9, "S(R({})) = {}", x, back);
            }
        }
        // R is increasing across intervals
        assert!(m.r_map(0.9) > m.r_map(0.5));
        assert!((m.r_map(1.0) - m.b_total).abs() < 1e-12);
    }

    #[test]
    fn flows_depth_3() {
        let m = build_cantor_model(3).unwrap();
        let flows = cantor_flows(&m, 20_001).unwrap();
        assert!(flows.residual_v <= 1e-4, "residual v {}", flows.residual_v);
        assert!(flows.residual_w <= 1e-4, "residual w {}", flows.residual_w);
        // v climbs monotonically to the collapsed line length
        assert_eq!(flows.v_value(0.0), 0.0);
        assert!((flows.v_value(m.b_total) - m.lambda_total).abs() < 1e-12);
        let mut prev = -1.0;
        for k in 0..=100 {
            let t = m.b_total * k as f64 / 100.0;
            let v = flows.v_value(t);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
        // w dwells for the full measure mass
        assert!((flows.dwell_w - m.mu_mass()).abs() < 0.05, "dwell {}", flows.dwell_w);
        assert!(flows.dwell_v < 0.02, "dwell v {}", flows.dwell_v);
        flows.eta.validate(1e-9).unwrap();
    }

    #[test]
    fn resolution_guard() {
        let m = build_cantor_model(5).unwrap();
        assert!(matches!(
            cantor_flows(&m, 64),
            Err(GradFlowError::Resolution(_))
        ));
    }
}
