//! Reference continuous solver for `u' = -grad(phi(u))`, the sampled-curve
//! data type, and the sup-type trajectory metrics.

use crate::energy::EnergyField;
use crate::error::{GradFlowError, Result};
use crate::point::Point;

/// Interpolation contract of a [`Curve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CurveKind {
    /// Piecewise-cubic interpolation between samples; spacing <= `max_dt`.
    Continuous { max_dt: f64 },
    /// Left-open / right-closed steps: value at `t` in `((n-1) tau, n tau]`
    /// is the n-th sample; value at 0 is the first sample.
    PiecewiseConstant { tau: f64 },
}

/// A sampled trajectory `[0, H] -> R^d` with an interpolation contract.
/// Evaluation beyond the final sample extends by the last value.
#[derive(Clone, Debug)]
pub struct Curve {
    times: Vec<f64>,
    values: Vec<Point>,
    kind: CurveKind,
}

impl Curve {
    pub fn continuous(times: Vec<f64>, values: Vec<Point>, max_dt: f64) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(GradFlowError::input("curve needs >= 2 consistent samples"));
        }
        if times[0] != 0.0 {
            return Err(GradFlowError::input("curve must start at t = 0"));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(GradFlowError::input("curve times must be strictly increasing"));
        }
        let worst = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        if worst > max_dt * (1.0 + 1e-9) {
            return Err(GradFlowError::input(format!(
                "sample spacing {} exceeds declared max_dt {}",
                worst, max_dt
            )));
        }
        Ok(Curve {
            times,
            values,
            kind: CurveKind::Continuous { max_dt },
        })
    }

    /// Uniform sampling of a closed-form trajectory.
    pub fn from_fn(f: impl Fn(f64) -> Point, horizon: f64, n: usize) -> Self {
        assert!(horizon > 0.0 && n >= 2);
        let times: Vec<f64> = (0..n).map(|k| horizon * k as f64 / (n - 1) as f64).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        let max_dt = horizon / (n - 1) as f64;
        Curve {
            times,
            values,
            kind: CurveKind::Continuous {
                max_dt: max_dt * (1.0 + 1e-12),
            },
        }
    }

    pub fn from_scalar_fn(f: impl Fn(f64) -> f64, horizon: f64, n: usize) -> Self {
        Curve::from_fn(|t| Point::scalar(f(t)), horizon, n)
    }

    pub fn piecewise_constant(tau: f64, values: Vec<Point>) -> Self {
        assert!(tau > 0.0 && !values.is_empty());
        let times = (0..values.len()).map(|n| n as f64 * tau).collect();
        Curve {
            times,
            values,
            kind: CurveKind::PiecewiseConstant { tau },
        }
    }

    pub fn constant(p: Point, horizon: f64) -> Self {
        Curve::from_fn(|_| p, horizon, 2)
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Point] {
        &self.values
    }

    pub fn transform_values(&self, f: impl Fn(&Point) -> Point) -> Curve {
        Curve {
            times: self.times.clone(),
            values: self.values.iter().map(f).collect(),
            kind: self.kind,
        }
    }

    /// Index of the last sample time <= t.
    fn locate(&self, t: f64) -> usize {
        match self
            .times
            .binary_search_by(|v| v.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    pub fn eval(&self, t: f64) -> Point {
        let t = t.max(0.0);
        match self.kind {
            CurveKind::PiecewiseConstant { tau } => {
                if t <= 0.0 {
                    return self.values[0];
                }
                // value on ((n-1) tau, n tau] is values[n]
                let n = (t / tau - 1e-12).floor() as usize + 1;
                self.values[n.min(self.values.len() - 1)]
            }
            CurveKind::Continuous { .. } => {
                if t >= self.horizon() {
                    return *self.values.last().unwrap();
                }
                let i = self.locate(t).min(self.times.len() - 2);
                let (t0, t1) = (self.times[i], self.times[i + 1]);
                let h = t1 - t0;
                let s = (t - t0) / h;
                let y0 = self.values[i];
                let y1 = self.values[i + 1];
                let m0 = self.slope(i) * h;
                let m1 = self.slope(i + 1) * h;
                let (s2, s3) = (s * s, s * s * s);
                y0 * (2.0 * s3 - 3.0 * s2 + 1.0)
                    + m0 * (s3 - 2.0 * s2 + s)
                    + y1 * (-2.0 * s3 + 3.0 * s2)
                    + m1 * (s3 - s2)
            }
        }
    }

    /// Centered finite-difference slope at sample `i` (one-sided at the ends).
    fn slope(&self, i: usize) -> Point {
        let n = self.times.len();
        if i == 0 {
            (self.values[1] - self.values[0]) * (1.0 / (self.times[1] - self.times[0]))
        } else if i == n - 1 {
            (self.values[n - 1] - self.values[n - 2])
                * (1.0 / (self.times[n - 1] - self.times[n - 2]))
        } else {
            (self.values[i + 1] - self.values[i - 1])
                * (1.0 / (self.times[i + 1] - self.times[i - 1]))
        }
    }

    /// Resamples onto a uniform grid of `n` points over `[0, horizon]`.
    pub fn resample(&self, n: usize) -> Curve {
        let h = self.horizon();
        Curve::from_fn(|t| self.eval(t), h, n)
    }
}

/// Result of a reference integration.
#[derive(Clone, Debug)]
pub struct FlowResult {
    pub curve: Curve,
    /// First certified rest time of the output, `f64::INFINITY` if the curve
    /// is still moving at the window edge.
    pub t_star: f64,
    /// Energy along the output grid.
    pub energy_trace: Vec<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

pub fn energy_trace(field: &EnergyField, curve: &Curve) -> Vec<f64> {
    curve.values().iter().map(|p| field.eval(p)).collect()
}

// --- Dormand-Prince 5(4) with dense output ---------------------------------

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
// dense-output weights for the quartic continuous extension
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

struct DenseStep {
    t: f64,
    h: f64,
    rcont: [Point; 5],
}

impl DenseStep {
    fn eval(&self, t: f64) -> Point {
        let s = ((t - self.t) / self.h).clamp(0.0, 1.0);
        let s1 = 1.0 - s;
        self.rcont[0]
            + (self.rcont[1] + (self.rcont[2] + (self.rcont[3] + self.rcont[4] * s1) * s) * s1) * s
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FlowConfig {
    /// Absolute and relative local error tolerance.
    pub tol: f64,
    /// Output resampling interval; defaults to `horizon / 4096`.
    pub max_dt: Option<f64>,
}

impl FlowConfig {
    pub fn new(tol: f64) -> Self {
        FlowConfig { tol, max_dt: None }
    }
}

/// Integrates `u' = -grad(phi(u))` over `[0, horizon]` with an embedded
/// Dormand-Prince 5(4) pair and quartic dense output, then resamples to a
/// uniform grid.
pub fn integrate_flow(field: &EnergyField, u0: &Point, horizon: f64, tol: f64) -> Result<FlowResult> {
    integrate_flow_with(field, u0, horizon, FlowConfig::new(tol))
}

pub fn integrate_flow_with(
    field: &EnergyField,
    u0: &Point,
    horizon: f64,
    cfg: FlowConfig,
) -> Result<FlowResult> {
    if horizon <= 0.0 || cfg.tol <= 0.0 {
        return Err(GradFlowError::input("integrate_flow: horizon and tol must be positive"));
    }
    let rhs = |p: &Point| field.grad(p) * -1.0;
    let tol = cfg.tol;

    let mut t = 0.0;
    let mut y = *u0;
    let mut f0 = rhs(&y);
    let mut h = (horizon / 100.0)
        .min(0.01 * (1.0 + y.norm()) / (1.0 + f0.norm()))
        .max(1e-10);
    let mut steps: Vec<DenseStep> = Vec::new();
    let mut accepted = 0usize;
    let mut rejected = 0usize;

    while t < horizon {
        if h < 1e-14 * (1.0 + t.abs()) {
            return Err(GradFlowError::Integration { last_t: t });
        }
        if t + h > horizon {
            h = horizon - t;
        }
        let mut k = [Point::zeros(y.dim()); 7];
        k[0] = f0;
        for i in 1..7 {
            let mut yi = y;
            for (j, kj) in k.iter().enumerate().take(i) {
                let a = A[i][j];
                if a != 0.0 {
                    yi = yi + *kj * (a * h);
                }
            }
            let _ = C; // stage times are implicit: the field is autonomous
            k[i] = rhs(&yi);
        }
        let mut y5 = y;
        let mut y4 = y;
        for i in 0..7 {
            if B5[i] != 0.0 {
                y5 = y5 + k[i] * (B5[i] * h);
            }
            if B4[i] != 0.0 {
                y4 = y4 + k[i] * (B4[i] * h);
            }
        }
        if !y5.is_finite() {
            rejected += 1;
            h *= 0.2;
            continue;
        }
        let mut err = 0.0_f64;
        for i in 0..y.dim() {
            let sc = tol + tol * y[i].abs().max(y5[i].abs());
            let e = (y5[i] - y4[i]) / sc;
            err += e * e;
        }
        err = (err / y.dim() as f64).sqrt();
        if err <= 1.0 {
            // FSAL: k[6] is the derivative at the new point
            let f1 = k[6];
            let ydiff = y5 - y;
            let bspl = k[0] * h - ydiff;
            let mut r5 = Point::zeros(y.dim());
            for i in 0..7 {
                if D[i] != 0.0 {
                    r5 = r5 + k[i] * D[i];
                }
            }
            steps.push(DenseStep {
                t,
                h,
                rcont: [y, ydiff, bspl, ydiff - f1 * h - bspl, r5 * h],
            });
            t += h;
            y = y5;
            f0 = f1;
            accepted += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
            h *= fac;
        } else {
            rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h *= fac;
        }
    }

    // resample to a uniform grid
    let max_dt = cfg.max_dt.unwrap_or(horizon / 4096.0);
    let n = ((horizon / max_dt).ceil() as usize).max(2) + 1;
    let times: Vec<f64> = (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect();
    let mut values = Vec::with_capacity(n);
    let mut si = 0usize;
    for &tt in &times {
        while si + 1 < steps.len() && steps[si].t + steps[si].h < tt {
            si += 1;
        }
        values.push(steps[si].eval(tt));
    }
    let curve = Curve::continuous(times, values, horizon / (n - 1) as f64 * (1.0 + 1e-12))?;
    let trace = energy_trace(field, &curve);
    let t_star = detect_t_star(&curve, (100.0 * tol).min(1e-6));
    Ok(FlowResult {
        curve,
        t_star,
        energy_trace: trace,
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}

// --- diagnostics -------------------------------------------------------------

/// Worst defect of the dissipation identity
/// `phi(u(t1)) - phi(u(t2)) = int_{t1}^{t2} |grad phi(u)|^2` over grid pairs,
/// with the integral by composite Simpson on the curve's own grid.
pub fn energy_identity_residual(field: &EnergyField, curve: &Curve) -> Result<f64> {
    if !matches!(curve.kind(), CurveKind::Continuous { .. }) {
        return Err(GradFlowError::input("energy identity requires a continuous curve"));
    }
    let times = curve.times();
    let phi0 = field.eval(&curve.values()[0]);
    let mut integral = 0.0;
    let mut rmax = 0.0_f64;
    let mut rmin = 0.0_f64;
    let mut g2_left = field.grad(&curve.values()[0]).norm().powi(2);
    for i in 0..times.len() - 1 {
        let (t0, t1) = (times[i], times[i + 1]);
        let mid = curve.eval(0.5 * (t0 + t1));
        let g2_mid = field.grad(&mid).norm().powi(2);
        let g2_right = field.grad(&curve.values()[i + 1]).norm().powi(2);
        integral += (t1 - t0) / 6.0 * (g2_left + 4.0 * g2_mid + g2_right);
        g2_left = g2_right;
        let r = phi0 - field.eval(&curve.values()[i + 1]) - integral;
        rmax = rmax.max(r);
        rmin = rmin.min(r);
    }
    Ok(rmax - rmin)
}

/// Smallest grid time after which the curve stays within `eps` of its value
/// there, provided the trailing quarter of the window is numerically
/// constant; `f64::INFINITY` when the curve is still drifting at the edge.
///
/// The constancy guard keeps slowly decaying curves (which never settle
/// inside the window) from acquiring a spurious finite rest time.
pub fn detect_t_star(curve: &Curve, eps: f64) -> f64 {
    assert!(eps > 0.0);
    let times = curve.times();
    let vals = curve.values();
    let n = vals.len();
    let dim = curve.dim();
    let scale = vals.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let settle_tol = eps.min(1e-11 * (1.0 + scale));
    let horizon = curve.horizon();

    // per-coordinate suffix envelopes make each candidate check O(dim)
    let mut suf_min = vals.to_vec();
    let mut suf_max = vals.to_vec();
    for i in (0..n - 1).rev() {
        for c in 0..dim {
            let mut lo = suf_min[i];
            lo.set(c, lo[c].min(suf_min[i + 1][c]));
            suf_min[i] = lo;
            let mut hi = suf_max[i];
            hi.set(c, hi[c].max(suf_max[i + 1][c]));
            suf_max[i] = hi;
        }
    }
    let sup_dist_from = |i: usize, k: usize| -> f64 {
        // distance from vals[i] to the farthest corner of the suffix box at k
        let mut acc = 0.0;
        for c in 0..dim {
            let d = (suf_max[k][c] - vals[i][c]).abs().max((suf_min[k][c] - vals[i][c]).abs());
            acc += d * d;
        }
        acc.sqrt()
    };
    let box_diam = |k: usize| -> f64 {
        let mut acc = 0.0;
        for c in 0..dim {
            let d = suf_max[k][c] - suf_min[k][c];
            acc += d * d;
        }
        acc.sqrt()
    };

    // the final sample alone certifies nothing, hence i < n - 1
    for i in 0..n - 1 {
        if sup_dist_from(i, i) > eps {
            continue;
        }
        // trailing quarter of [t_i, H] must be flat at settle_tol; with too
        // few samples there, fall back to the whole tail
        let w0 = times[i].max(horizon - 0.25 * (horizon - times[i]).max(1e-12));
        let k0 = times.partition_point(|&t| t < w0).min(n - 1);
        let evidence = if k0 < n - 1 { box_diam(k0) } else { box_diam(i) };
        if evidence <= settle_tol {
            return times[i];
        }
    }
    f64::INFINITY
}

// --- metrics -----------------------------------------------------------------

fn merged_grid(u: &Curve, v: &Curve, t_max: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = u
        .times()
        .iter()
        .chain(v.times())
        .copied()
        .filter(|&t| t <= t_max + 1e-12)
        .collect();
    ts.push(t_max);
    ts.push(0.0);
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    // midpoints tighten the sup between sample times (jumps of piecewise
    // constant curves are left-open, so the grid alone misses them)
    let mut out = Vec::with_capacity(ts.len() * 2);
    for w in ts.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*ts.last().unwrap());
    out
}

/// Uniform distance `sup_{[0,T]} min(1, |u - v|)` over the merged grid.
pub fn metric_dt(u: &Curve, v: &Curve, t_max: f64) -> Result<f64> {
    if t_max > u.horizon().max(v.horizon()) + 1e-9 {
        return Err(GradFlowError::input(format!(
            "metric horizon {} beyond both curves (horizons {}, {})",
            t_max,
            u.horizon(),
            v.horizon()
        )));
    }
    let mut sup = 0.0_f64;
    for t in merged_grid(u, v, t_max) {
        let d = u.eval(t).dist(&v.eval(t)).min(1.0);
        if d > sup {
            sup = d;
            if sup >= 1.0 {
                break;
            }
        }
    }
    Ok(sup)
}

/// Weighted distance `sup_t (1+t)^{-1} min(1, |u - v|)` evaluated on the
/// common sampled horizon, with the exact tail bound reported.
#[derive(Clone, Copy, Debug)]
pub struct DInfEstimate {
    /// Supremum over the sampled horizon (a lower bound for the true value).
    pub value: f64,
    /// `(1 + H)^{-1}`: everything past the horizon is below this.
    pub tail_bound: f64,
}

impl DInfEstimate {
    /// Certified upper bound for the true weighted distance.
    pub fn upper(&self) -> f64 {
        self.value.max(self.tail_bound)
    }
}

pub fn metric_dinf(u: &Curve, v: &Curve) -> DInfEstimate {
    let h = u.horizon().min(v.horizon());
    let mut sup = 0.0_f64;
    for t in merged_grid(u, v, h) {
        let d = u.eval(t).dist(&v.eval(t)).min(1.0) / (1.0 + t);
        if d > sup {
            sup = d;
        }
    }
    DInfEstimate {
        value: sup,
        tail_bound: 1.0 / (1.0 + h),
    }
}

/// Horizon for set distances.
#[derive(Clone, Copy, Debug)]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

/// Hausdorff-style distance from `v` to a family: the supremum of the
/// pairwise distance over the family, `+inf` when the family is empty.
pub fn set_distance(v: &Curve, family: &[Curve], horizon: Horizon) -> Result<f64> {
    if family.is_empty() {
        return Ok(f64::INFINITY);
    }
    let mut sup = 0.0_f64;
    for u in family {
        let d = match horizon {
            Horizon::Finite(t) => metric_dt(v, u, t)?,
            Horizon::Infinite => metric_dinf(v, u).value,
        };
        sup = sup.max(d);
    }
    Ok(sup)
}
