//! Closed-form reference trajectories for the built-in energies.
//!
//! Scenarios that depend on a specific branch at a non-unique point never
//! trust the integrator's selection; they use these explicit constructions.

use crate::energy::{base_bump_integral, BumpInterval};
use crate::flow::Curve;
use crate::point::Point;
use std::f64::consts::PI;

/// Flow of the quadratic energy from `u0`: `u(t) = u0 e^{-t}`.
pub fn exp_flow(u0: f64, horizon: f64, n: usize) -> Curve {
    Curve::from_scalar_fn(|t| u0 * (-t).exp(), horizon, n)
}

/// Flow of the 2-D anisotropic quadratic from `(x0, y0)`.
pub fn aniso_flow(x0: f64, y0: f64, horizon: f64, n: usize) -> Curve {
    Curve::from_fn(
        |t| Point::new(&[x0 * (-t).exp(), y0 * (-2.0 * t).exp()]),
        horizon,
        n,
    )
}

/// Straight-line 2-D flow `(e^{-t}, 0)` of the quadratic energy.
pub fn line_flow_2d(horizon: f64, n: usize) -> Curve {
    Curve::from_fn(|t| Point::new(&[(-t).exp(), 0.0]), horizon, n)
}

/// Cusp-energy solution from `t_rest^2` that reaches 0 at `t_rest` and stays:
/// `u(t) = ((t_rest - t) v 0)^2`.
pub fn cusp_stay(t_rest: f64, horizon: f64, n: usize) -> Curve {
    Curve::from_scalar_fn(|t| ((t_rest - t).max(0.0)).powi(2), horizon, n)
}

/// Cusp-energy solution that crosses 0 at `t_rest` without dwelling:
/// `u(t) = (t_rest - t) |t_rest - t|`. This is the minimal representative of
/// every solution with the same range.
pub fn cusp_through(t_rest: f64, horizon: f64, n: usize) -> Curve {
    Curve::from_scalar_fn(|t| (t_rest - t) * (t_rest - t).abs(), horizon, n)
}

pub fn cusp_through_value(t_rest: f64, t: f64) -> f64 {
    (t_rest - t) * (t_rest - t).abs()
}

/// Cusp-energy solution that dwells at the critical point 0 for `pause`
/// before continuing down the negative branch.
pub fn cusp_paused(t_rest: f64, pause: f64, horizon: f64, n: usize) -> Curve {
    Curve::from_scalar_fn(move |t| cusp_paused_value(t_rest, pause, t), horizon, n)
}

pub fn cusp_paused_value(t_rest: f64, pause: f64, t: f64) -> f64 {
    if t <= t_rest {
        (t_rest - t).powi(2)
    } else if t <= t_rest + pause {
        0.0
    } else {
        -(t - t_rest - pause).powi(2)
    }
}

/// Base unit crossing `u(s) = (1 + sin(pi (s - 1/2)))/2`, clamped to {0, 1}
/// outside [0, 1]; solves `u' = pi sqrt(u (1 - u))`.
pub fn base_solution(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        0.5 + 0.5 * (PI * (s - 0.5)).sin()
    }
}

/// A solution of a bump-chain descent energy: it crosses the n-th interval
/// `(a_n, b_n)` in time `beta_n = len_n / alpha_n` and may dwell at the
/// critical junctions in between.
#[derive(Clone, Debug)]
pub struct ChainSolution {
    /// Per interval: (start time of the crossing, duration, a_n, len_n).
    segments: Vec<(f64, f64, f64, f64)>,
    start_value: f64,
    end_value: f64,
    end_time: f64,
}

impl ChainSolution {
    /// `dwells[i]` is the rest time spent at the left junction of interval
    /// `i`; one extra entry (if present) rests at the final junction forever
    /// anyway, so it is ignored.
    pub fn new(intervals: &[BumpInterval], dwells: &[f64]) -> Self {
        assert!(!intervals.is_empty());
        let mut t = 0.0;
        let mut segments = Vec::with_capacity(intervals.len());
        for (i, iv) in intervals.iter().enumerate() {
            t += dwells.get(i).copied().unwrap_or(0.0);
            let beta = iv.len() / iv.alpha;
            segments.push((t, beta, iv.a, iv.len()));
            t += beta;
        }
        ChainSolution {
            segments,
            start_value: intervals[0].a,
            end_value: intervals.last().unwrap().b,
            end_time: t,
        }
    }

    /// Time at which the solution has crossed every interval.
    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    pub fn end_value(&self) -> f64 {
        self.end_value
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= self.segments[0].0 {
            return self.start_value;
        }
        if t >= self.end_time {
            return self.end_value;
        }
        // last segment starting at or before t
        let i = self
            .segments
            .partition_point(|s| s.0 <= t)
            .saturating_sub(1);
        let (t0, beta, a, len) = self.segments[i];
        if t <= t0 + beta {
            a + len * base_solution((t - t0) / beta)
        } else {
            // dwelling between segment i and i+1
            a + len
        }
    }

    /// Exact velocity, `d/dt value`.
    pub fn velocity(&self, t: f64) -> f64 {
        if t <= self.segments[0].0 || t >= self.end_time {
            return 0.0;
        }
        let i = self
            .segments
            .partition_point(|s| s.0 <= t)
            .saturating_sub(1);
        let (t0, beta, _a, len) = self.segments[i];
        if t <= t0 + beta {
            let s = (t - t0) / beta;
            if s <= 0.0 || s >= 1.0 {
                0.0
            } else {
                (len / beta) * 0.5 * PI * (PI * (s - 0.5)).cos()
            }
        } else {
            0.0
        }
    }

    /// Total time spent dwelling strictly before the final rest.
    pub fn dwell_time(&self) -> f64 {
        let mut total = self.segments[0].0;
        for w in self.segments.windows(2) {
            total += w[1].0 - (w[0].0 + w[0].1);
        }
        total
    }

    pub fn to_curve(&self, horizon: f64, n: usize) -> Curve {
        Curve::from_scalar_fn(|t| self.value(t), horizon, n)
    }
}

/// Staircase solution climbing from 0 to `k` with the given rests at the
/// integer junctions (`dwells[i]` = rest at height `i` before the next climb).
pub fn staircase_solution(k: usize, dwells: &[f64]) -> ChainSolution {
    let intervals: Vec<BumpInterval> = (0..k)
        .map(|i| BumpInterval::new(i as f64, (i + 1) as f64, 1.0))
        .collect();
    ChainSolution::new(&intervals, dwells)
}

/// Energy of the staircase along its own track: `phi(x) = -int_0^x f`.
pub fn staircase_energy_value(x: f64) -> f64 {
    let k = x.floor();
    if x <= 0.0 {
        return 0.0;
    }
    let whole = k.min(x.ceil()) * PI * PI / 8.0;
    let frac = base_bump_integral(x - k);
    -(whole.min(k * PI * PI / 8.0) + frac)
}
