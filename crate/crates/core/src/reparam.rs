//! Order structure on solutions sharing a range: time changes `u = v o z`,
//! construction of the minimal representative by excising critical dwell
//! time, the minimality defect, and eventually-minimal approximations.

use crate::energy::EnergyField;
use crate::error::{GradFlowError, Result};
use crate::flow::{detect_t_star, energy_identity_residual, metric_dinf, Curve, DInfEstimate};
use crate::point::Point;

#[derive(Clone, Copy, Debug)]
pub struct ReparamConfig {
    /// Gradient threshold defining the numerical dwell set.
    pub crit_tol: f64,
    /// Settling threshold for rest-time detection.
    pub t_star_eps: f64,
    /// Pointwise tolerance for `|u(t) - v(z(t))|` in time-change recovery.
    pub match_tol: f64,
    /// Slack allowed in the grid 1-Lipschitz certificate of a recovered time
    /// change (exact constructions meet 1e-9; grid-limited recoveries near
    /// flat energy crossings cannot).
    pub lip_tol: f64,
    /// Maximum dissipation-identity residual for an input to count as a
    /// solution.
    pub solution_tol: f64,
}

impl Default for ReparamConfig {
    fn default() -> Self {
        ReparamConfig {
            crit_tol: 1e-7,
            t_star_eps: 1e-9,
            match_tol: 1e-3,
            lip_tol: 1e-6,
            solution_tol: 5e-2,
        }
    }
}

/// An increasing 1-Lipschitz map `z` with `z(0) = 0`, sampled on a grid.
#[derive(Clone, Debug)]
pub struct TimeChange {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeChange {
    pub fn identity(grid: Vec<f64>) -> Self {
        let values = grid.clone();
        TimeChange { grid, values }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= self.grid[0] {
            return self.values[0];
        }
        if t >= *self.grid.last().unwrap() {
            return *self.values.last().unwrap();
        }
        let i = self.grid.partition_point(|&s| s < t).max(1);
        let (t0, t1) = (self.grid[i - 1], self.grid[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Worst violations of the invariants over all grid pairs: returns
    /// `(|z(0)|, max decrease, max excess over slope 1)`. Prefix scans make
    /// the pairwise maxima exact in linear time.
    pub fn defects(&self) -> (f64, f64, f64) {
        let mut dec = 0.0_f64;
        let mut exc = 0.0_f64;
        let mut run_max_z = self.values[0];
        let mut run_min_gap = self.values[0] - self.grid[0];
        for i in 1..self.grid.len() {
            dec = dec.max(run_max_z - self.values[i]);
            exc = exc.max(self.values[i] - self.grid[i] - run_min_gap);
            run_max_z = run_max_z.max(self.values[i]);
            run_min_gap = run_min_gap.min(self.values[i] - self.grid[i]);
        }
        (self.values[0].abs(), dec, exc)
    }

    pub fn validate(&self, lip_tol: f64) -> Result<()> {
        let (z0, dec, exc) = self.defects();
        if z0 > lip_tol {
            return Err(GradFlowError::input(format!("time change: z(0) = {}", z0)));
        }
        if dec > lip_tol {
            return Err(GradFlowError::input(format!(
                "time change decreases by {}",
                dec
            )));
        }
        if exc > lip_tol {
            return Err(GradFlowError::input(format!(
                "time change exceeds slope 1 by {}",
                exc
            )));
        }
        Ok(())
    }

    /// `other o self` on this grid (witnesses compose transitively).
    pub fn compose(&self, other: &TimeChange) -> TimeChange {
        TimeChange {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| other.eval(v)).collect(),
        }
    }

    pub fn max_abs_deviation_from_identity(&self) -> f64 {
        self.grid
            .iter()
            .zip(&self.values)
            .map(|(t, v)| (t - v).abs())
            .fold(0.0, f64::max)
    }
}

fn check_is_solution(field: &EnergyField, u: &Curve, tol: f64, who: &str) -> Result<()> {
    let r = energy_identity_residual(field, u)?;
    if r > tol {
        return Err(GradFlowError::input(format!(
            "{}: dissipation residual {} exceeds {}",
            who, r, tol
        )));
    }
    Ok(())
}

/// Recovers the time change witnessing `u = v o z` by a monotone level search
/// on the energy trace of `v`: `z(t)` is the first time `v`'s energy falls to
/// the level of `u(t)` (plateaus collapse to their left endpoint).
///
/// Fails with a range error when the value sets do not match, and with an
/// input error naming the first bad time when the pointwise match or the
/// 1-Lipschitz certificate breaks.
pub fn construct_time_change(
    field: &EnergyField,
    u: &Curve,
    v: &Curve,
    cfg: &ReparamConfig,
) -> Result<TimeChange> {
    check_is_solution(field, u, cfg.solution_tol, "construct_time_change: u")?;
    check_is_solution(field, v, cfg.solution_tol, "construct_time_change: v")?;

    // one-sided range check: every value of u must be near some value of v
    let worst = if u.dim() == 1 {
        let mut vs: Vec<f64> = v.values().iter().map(|p| p.x()).collect();
        vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        u.values()
            .iter()
            .map(|p| {
                let x = p.x();
                let i = vs.partition_point(|&s| s < x);
                let mut best = f64::INFINITY;
                if i < vs.len() {
                    best = best.min((vs[i] - x).abs());
                }
                if i > 0 {
                    best = best.min((vs[i - 1] - x).abs());
                }
                best
            })
            .fold(0.0, f64::max)
    } else {
        // subsampled scan is enough for the coarse inclusion test
        let stride = (v.values().len() / 4096).max(1);
        let vsub: Vec<&Point> = v.values().iter().step_by(stride).collect();
        u.values()
            .iter()
            .map(|p| {
                vsub.iter()
                    .map(|q| p.dist(q))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    if worst > 10.0 * cfg.match_tol {
        return Err(GradFlowError::Range(format!(
            "range of u leaves range of v by {}",
            worst
        )));
    }

    // monotone running minimum stabilizes the level search
    let vt = v.times();
    let mut trace: Vec<f64> = v.values().iter().map(|p| field.eval(p)).collect();
    for i in 1..trace.len() {
        trace[i] = trace[i].min(trace[i - 1]);
    }
    let trace_min = *trace.last().unwrap();

    let mut grid = Vec::with_capacity(u.times().len());
    let mut values = Vec::with_capacity(u.times().len());
    let mut last = 0.0_f64;
    for (&t, pu) in u.times().iter().zip(u.values()) {
        let level = field.eval(pu);
        let s = if level <= trace_min {
            // tail: first index attaining the minimum
            let k = trace.partition_point(|&e| e > trace_min);
            vt[k.min(vt.len() - 1)]
        } else {
            let k = trace.partition_point(|&e| e > level);
            if k == 0 {
                vt[0]
            } else {
                let (e0, e1) = (trace[k - 1], trace[k]);
                let (s0, s1) = (vt[k - 1], vt[k]);
                let mut s = if e0 - e1 > 1e-300 {
                    s0 + (s1 - s0) * (e0 - level) / (e0 - e1)
                } else {
                    s0
                };
                // sharpen by matching values inside the bracketing cell
                s = refine_match(v, pu, s0.max(s - (s1 - s0)), s1, s);
                s
            }
        };
        let s = s.max(last); // monotone by construction of the level search
        last = s;
        grid.push(t);
        values.push(s);
    }
    // Smallest 1-Lipschitz majorant: when the target itself dwells, the level
    // search defers the whole plateau to an instantaneous jump; the backward
    // pass spreads the jump over the plateau it belongs to. Off plateaus the
    // raw search already moves at most at unit rate, so values only shift
    // across constant stretches of `v` and the pointwise match survives.
    for i in (0..values.len().saturating_sub(1)).rev() {
        let cap = values[i + 1] - (grid[i + 1] - grid[i]);
        if cap > values[i] {
            values[i] = cap;
        }
    }
    let tc = TimeChange { grid, values };

    for (&t, &s) in tc.grid.iter().zip(&tc.values) {
        let d = u.eval(t).dist(&v.eval(s));
        if d > cfg.match_tol {
            return Err(GradFlowError::input(format!(
                "time change match failed at t = {}: |u - v o z| = {}",
                t, d
            )));
        }
    }
    tc.validate(cfg.lip_tol)?;
    Ok(tc)
}

fn refine_match(v: &Curve, target: &Point, lo: f64, hi: f64, seed: f64) -> f64 {
    let f = |s: f64| v.eval(s).dist(target);
    let mut best = (seed, f(seed));
    let n = 24;
    for k in 0..=n {
        let s = lo + (hi - lo) * k as f64 / n as f64;
        let d = f(s);
        // strict improvement keeps the leftmost minimizer of the cell
        if d < best.1 - 1e-15 {
            best = (s, d);
        }
    }
    best.0
}

/// Lebesgue measure (trapezoid on the grid) of the times before the rest
/// time where the gradient norm stays at or below `crit_tol`.
pub fn minimality_defect(field: &EnergyField, u: &Curve, crit_tol: f64) -> f64 {
    let t_star = detect_t_star(u, 1e-9);
    let horizon = u.horizon().min(t_star);
    let times = u.times();
    let mut measure = 0.0;
    for i in 0..times.len() - 1 {
        if times[i] >= horizon {
            break;
        }
        let dt = times[i + 1].min(horizon) - times[i];
        let a = field.grad_norm(&u.values()[i]) <= crit_tol;
        let b = field.grad_norm(&u.values()[i + 1]) <= crit_tol;
        measure += dt * (a as u8 as f64 + b as u8 as f64) / 2.0;
    }
    measure
}

/// Excises the dwell time a solution spends on the numerical critical set and
/// returns the re-parametrized solution `w(s) = u(z^{-1}(s))` on a uniform
/// grid: `z` grows at unit rate off the dwell set and stalls on it.
pub fn minimalize(field: &EnergyField, u: &Curve, crit_tol: f64, cfg: &ReparamConfig) -> Result<Curve> {
    check_is_solution(field, u, cfg.solution_tol, "minimalize: input")?;
    let t_star = detect_t_star(u, cfg.t_star_eps);
    let horizon = u.horizon();
    let active_end = horizon.min(t_star);

    let times = u.times();
    let dwell: Vec<bool> = u
        .values()
        .iter()
        .zip(times)
        .map(|(p, &t)| t < active_end && field.grad_norm(p) <= crit_tol)
        .collect();

    // z(t): cumulative moving time
    let mut z = Vec::with_capacity(times.len());
    z.push(0.0);
    for i in 0..times.len() - 1 {
        let dt = times[i + 1] - times[i];
        let frac = 1.0 - (dwell[i] as u8 as f64 + dwell[i + 1] as u8 as f64) / 2.0;
        z.push(z[i] + dt * frac);
    }
    let z_end = *z.last().unwrap();
    if z_end <= 10.0 * f64::EPSILON * horizon {
        return Ok(Curve::constant(u.values()[0], horizon).resample(times.len().min(64)));
    }

    // left-continuous pseudo-inverse of z, then resample uniformly
    let n_out = times.len();
    let mut out_vals = Vec::with_capacity(n_out);
    let mut j = 0usize;
    for k in 0..n_out {
        let s = z_end * k as f64 / (n_out - 1) as f64;
        while j + 1 < z.len() && z[j + 1] < s {
            j += 1;
        }
        // invert within cell [j, j+1], collapsing plateaus to the left edge
        let t = if j + 1 >= z.len() {
            times[z.len() - 1]
        } else if z[j + 1] - z[j] > 1e-14 {
            let frac = ((s - z[j]) / (z[j + 1] - z[j])).clamp(0.0, 1.0);
            times[j] + frac * (times[j + 1] - times[j])
        } else {
            times[j]
        };
        out_vals.push(u.eval(t));
    }
    let out_times: Vec<f64> = (0..n_out)
        .map(|k| z_end * k as f64 / (n_out - 1) as f64)
        .collect();
    Curve::continuous(
        out_times,
        out_vals,
        z_end / (n_out - 1) as f64 * (1.0 + 1e-9),
    )
}

/// Approximations that agree with `u` up to `t_n` and continue minimally:
/// the tail past each `t_n` is minimalized and spliced back. Returns each
/// splice with its weighted distance to `u`.
pub fn eventually_minimalize(
    field: &EnergyField,
    u: &Curve,
    t_ns: &[f64],
    cfg: &ReparamConfig,
) -> Result<Vec<(Curve, DInfEstimate)>> {
    let t_star = detect_t_star(u, cfg.t_star_eps);
    let mut out = Vec::with_capacity(t_ns.len());
    for &tn in t_ns {
        if tn >= t_star || tn >= u.horizon() {
            return Err(GradFlowError::input(format!(
                "eventually_minimalize: t_n = {} is past the rest time",
                tn
            )));
        }
        if field.grad_norm(&u.eval(tn)) <= cfg.crit_tol {
            return Err(GradFlowError::input(format!(
                "eventually_minimalize: t_n = {} sits on the critical set",
                tn
            )));
        }
        // tail of u shifted to start at 0
        let tail_h = u.horizon() - tn;
        let n_tail = ((u.times().len() as f64) * (tail_h / u.horizon())).ceil() as usize + 2;
        let tail = Curve::from_fn(|t| u.eval(tn + t), tail_h, n_tail.max(16));
        let w_tail = minimalize(field, &tail, cfg.crit_tol, cfg)?;
        let n = u.times().len();
        let splice = Curve::from_fn(
            |t| {
                if t <= tn {
                    u.eval(t)
                } else {
                    w_tail.eval(t - tn)
                }
            },
            u.horizon(),
            n,
        );
        let d = metric_dinf(&splice, u);
        out.push((splice, d));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{cusp_paused, cusp_through, exp_flow};
    use crate::energy::EnergyField;
    use crate::flow::metric_dt;

    const N: usize = 25_001;

    #[test]
    fn time_change_identity() {
        let field = EnergyField::cusp();
        let v = cusp_through(1.0, 2.5, N);
        let tc = construct_time_change(&field, &v, &v, &ReparamConfig::default()).unwrap();
        assert!(tc.max_abs_deviation_from_identity() < 1e-3);
        tc.validate(1e-6).unwrap();
    }

    #[test]
    fn time_change_recovers_pause() {
        let field = EnergyField::cusp();
        let u = cusp_paused(1.0, 0.5, 2.5, N);
        let v = cusp_through(1.0, 2.5, N);
        let tc = construct_time_change(&field, &u, &v, &ReparamConfig::default()).unwrap();
        // z(t) = t before the pause, t - 0.5 after, constant in between
        for (t, expect) in [(0.4, 0.4), (0.9, 0.9), (1.2, 1.0), (1.4, 1.0), (2.0, 1.5)] {
            assert!(
                (tc.eval(t) - expect).abs() < 2e-3,
                "z({}) = {} want {}",
                t,
                tc.eval(t),
                expect
            );
        }
    }

    #[test]
    fn time_change_range_error() {
        let field = EnergyField::quadratic(1);
        let u = exp_flow(1.0, 2.0, 2001);
        let v = exp_flow(-3.0, 2.0, 2001); // disjoint range
        assert!(matches!(
            construct_time_change(&field, &u, &v, &ReparamConfig::default()),
            Err(GradFlowError::Range(_))
        ));
    }

    #[test]
    fn defect_examples() {
        let quad = EnergyField::quadratic(1);
        let u = exp_flow(1.0, 5.0, 5001);
        assert_eq!(minimality_defect(&quad, &u, 1e-6), 0.0);

        let cusp = EnergyField::cusp();
        let paused = cusp_paused(1.0, 0.5, 2.5, N);
        let d = minimality_defect(&cusp, &paused, 1e-7);
        assert!((d - 0.5).abs() < 2e-3, "defect {}", d);

        let constant = Curve::constant(Point::scalar(0.0), 2.0).resample(64);
        assert_eq!(minimality_defect(&cusp, &constant, 1e-7), 0.0);
    }

    #[test]
    fn minimalize_removes_pause() {
        let cusp = EnergyField::cusp();
        let cfg = ReparamConfig::default();
        let paused = cusp_paused(1.0, 0.5, 2.5, N);
        let w = minimalize(&cusp, &paused, cfg.crit_tol, &cfg).unwrap();
        let v = cusp_through(1.0, 2.5, N);
        let d = metric_dt(&w, &v, 2.0).unwrap();
        assert!(d <= 1e-3, "d_T = {}", d);
        assert!(minimality_defect(&cusp, &w, cfg.crit_tol) <= 0.01);

        // idempotence
        let w2 = minimalize(&cusp, &w, cfg.crit_tol, &cfg).unwrap();
        let dd = metric_dt(&w2, &w, w.horizon().min(w2.horizon())).unwrap();
        assert!(dd <= 1e-3, "idempotence gap {}", dd);

        // already minimal input passes through
        let v2 = minimalize(&cusp, &v, cfg.crit_tol, &cfg).unwrap();
        let dv = metric_dt(&v2, &v, 2.0).unwrap();
        assert!(dv <= 1e-3, "gap {}", dv);
    }

    #[test]
    fn minimalize_constant_is_constant() {
        let cusp = EnergyField::cusp();
        let cfg = ReparamConfig::default();
        let c = Curve::constant(Point::scalar(0.0), 2.0).resample(128);
        let w = minimalize(&cusp, &c, cfg.crit_tol, &cfg).unwrap();
        for t in [0.0, 0.5, 1.9] {
            assert_eq!(w.eval(t).x(), 0.0);
        }
    }

    #[test]
    fn eventually_minimal_family() {
        let cusp = EnergyField::cusp();
        let cfg = ReparamConfig::default();
        let paused = cusp_paused(1.0, 0.5, 2.5, N);
        let v = cusp_through(1.0, 2.5, N);

        let list = eventually_minimalize(&cusp, &paused, &[0.3, 0.6, 0.9], &cfg).unwrap();
        // splices with earlier cuts remove the pause: they approach v, and
        // their weighted distance to u decreases as t_n grows
        let d0 = metric_dt(&list[0].0, &v, 2.0).unwrap();
        assert!(d0 <= 2e-3, "first splice vs unpaused: {}", d0);
        let dists: Vec<f64> = list.iter().map(|(_, d)| d.value).collect();
        assert!(dists[0] >= dists[1] && dists[1] >= dists[2], "{:?}", dists);

        // minimal input: splices coincide with u
        let list_v = eventually_minimalize(&cusp, &v, &[0.4, 0.8], &cfg).unwrap();
        for (s, _) in &list_v {
            assert!(metric_dt(s, &v, 2.0).unwrap() <= 1e-3);
        }

        // a cut on the critical set is refused
        assert!(eventually_minimalize(&cusp, &paused, &[1.2], &cfg).is_err());
    }
}
