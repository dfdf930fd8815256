//! C1 energies on R^d (d <= 3), finite compact sets with distance functions,
//! and empirical concave moduli of continuity for their gradients.

use crate::error::{GradFlowError, Result};
use crate::point::Point;
use std::f64::consts::PI;
use std::sync::Arc;

/// Evaluation backend of an [`EnergyField`].
pub trait EnergyKernel: Send + Sync {
    fn eval(&self, x: &Point) -> f64;
    fn grad(&self, x: &Point) -> Point;
}

/// An energy `phi` with its gradient and optional lower-quadratic-bound
/// metadata: `phi(x) + |x|^2/(2 tau_star) >= -phi_star` when both are present.
#[derive(Clone)]
pub struct EnergyField {
    dim: usize,
    label: String,
    tau_star: Option<f64>,
    phi_star: Option<f64>,
    lip_bound: Option<f64>,
    kernel: Arc<dyn EnergyKernel>,
}

impl std::fmt::Debug for EnergyField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnergyField")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("tau_star", &self.tau_star)
            .finish()
    }
}

impl EnergyField {
    pub fn new(dim: usize, label: impl Into<String>, kernel: Arc<dyn EnergyKernel>) -> Self {
        assert!((1..=3).contains(&dim));
        EnergyField {
            dim,
            label: label.into(),
            tau_star: None,
            phi_star: None,
            lip_bound: None,
            kernel,
        }
    }

    pub fn with_quadratic_bound(mut self, tau_star: f64, phi_star: f64) -> Self {
        assert!(tau_star > 0.0);
        self.tau_star = Some(tau_star);
        self.phi_star = Some(phi_star);
        self
    }

    pub fn with_lip_bound(mut self, lip: f64) -> Self {
        self.lip_bound = Some(lip);
        self
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn tau_star(&self) -> Option<f64> {
        self.tau_star
    }

    pub fn phi_star(&self) -> Option<f64> {
        self.phi_star
    }

    pub fn lip_bound(&self) -> Option<f64> {
        self.lip_bound
    }

    #[inline]
    pub fn eval(&self, x: &Point) -> f64 {
        debug_assert_eq!(x.dim(), self.dim);
        self.kernel.eval(x)
    }

    #[inline]
    pub fn grad(&self, x: &Point) -> Point {
        debug_assert_eq!(x.dim(), self.dim);
        self.kernel.grad(x)
    }

    #[inline]
    pub fn grad_norm(&self, x: &Point) -> f64 {
        self.grad(x).norm()
    }

    // --- built-in constructors -------------------------------------------

    /// `phi(x) = |x|^2 / 2`.
    pub fn quadratic(dim: usize) -> Self {
        EnergyField::new(dim, "quadratic", Arc::new(Quadratic))
            .with_quadratic_bound(4.0, 0.0)
    }

    /// 1-D energy with `phi'(x) = 2 sqrt(|x|)`, so `phi(x) = (4/3) sign(x) |x|^{3/2}`.
    ///
    /// The gradient is continuous but only 1/2-Hoelder at the single critical
    /// point 0, which makes the forward flow non-unique there.
    pub fn cusp() -> Self {
        // min over s>=0 of s^2/2 - (4/3) s^{3/2} = -8/3 at s = 4, so tau_* = 1
        // works with phi_* = 8/3.
        EnergyField::new(1, "cusp", Arc::new(Cusp)).with_quadratic_bound(1.0, 8.0 / 3.0)
    }

    /// Constant energy; the flow is stationary everywhere.
    pub fn constant(dim: usize, c: f64) -> Self {
        EnergyField::new(dim, "constant", Arc::new(Constant(c)))
            .with_quadratic_bound(1.0, (-c).max(0.0))
            .with_lip_bound(0.0)
    }

    /// 1-D affine energy `phi(x) = s x`.
    pub fn linear(slope: f64) -> Self {
        // s x + x^2/(2 tau) >= -s^2 tau / 2; with tau_* = 2 this is -s^2.
        EnergyField::new(1, "linear", Arc::new(Linear(slope)))
            .with_quadratic_bound(2.0, slope * slope)
            .with_lip_bound(slope.abs())
    }

    /// 2-D anisotropic quadratic `phi(x, y) = x^2/2 + y^2`; its flow follows a
    /// genuinely curved path, useful for arc-length tests.
    pub fn aniso2d() -> Self {
        EnergyField::new(2, "aniso2d", Arc::new(Aniso2d)).with_quadratic_bound(0.4, 0.0)
    }

    /// Energy built from closures (mostly for tests).
    pub fn from_fns<E, G>(dim: usize, label: &str, eval: E, grad: G) -> Self
    where
        E: Fn(&Point) -> f64 + Send + Sync + 'static,
        G: Fn(&Point) -> Point + Send + Sync + 'static,
    {
        EnergyField::new(dim, label, Arc::new(FnKernel { eval, grad }))
    }

    /// 1-D descent staircase: `phi' = -f` with one bump of `f` on each of the
    /// disjoint intervals, so the flow rests exactly at the interval
    /// endpoints and on the gaps between them.
    pub fn bump_chain(label: &str, intervals: Vec<BumpInterval>) -> Self {
        let chain = BumpChain::new(intervals);
        // |phi'| <= pi/2 * max alpha; Lipschitz, hence any quadratic bound.
        let lip = chain.max_slope();
        EnergyField::new(1, label, Arc::new(chain))
            .with_quadratic_bound(1.0, lip * lip)
            .with_lip_bound(lip)
    }

    /// Staircase with `k` unit steps: descent energy whose flow climbs from 0
    /// to k, resting momentarily at each integer.
    pub fn staircase(k: usize) -> Self {
        let intervals = (0..k)
            .map(|i| BumpInterval::new(i as f64, (i + 1) as f64, 1.0))
            .collect();
        EnergyField::bump_chain(&format!("plateau{}", k), intervals)
    }

    /// 1-D tabulated energy with cubic Hermite interpolation of `(x, phi,
    /// phi')` rows. Gradient is the exact derivative of the interpolant, so
    /// eval/grad are consistent by construction.
    pub fn tabulated(label: &str, xs: Vec<f64>, phi: Vec<f64>, grad: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != phi.len() || xs.len() != grad.len() {
            return Err(GradFlowError::input("tabulated energy needs >= 2 consistent rows"));
        }
        if !xs.windows(2).all(|w| w[1] > w[0]) {
            return Err(GradFlowError::input("tabulated grid must be strictly increasing"));
        }
        Ok(EnergyField::new(1, label, Arc::new(Tabulated { xs, phi, grad })))
    }
}

struct Quadratic;
impl EnergyKernel for Quadratic {
    fn eval(&self, x: &Point) -> f64 {
        0.5 * x.coords().iter().map(|c| c * c).sum::<f64>()
    }
    fn grad(&self, x: &Point) -> Point {
        *x
    }
}

struct Cusp;
impl EnergyKernel for Cusp {
    fn eval(&self, x: &Point) -> f64 {
        let v = x.x();
        (4.0 / 3.0) * v.signum() * v.abs().powf(1.5)
    }
    fn grad(&self, x: &Point) -> Point {
        Point::scalar(2.0 * x.x().abs().sqrt())
    }
}

struct Constant(f64);
impl EnergyKernel for Constant {
    fn eval(&self, _x: &Point) -> f64 {
        self.0
    }
    fn grad(&self, x: &Point) -> Point {
        Point::zeros(x.dim())
    }
}

struct Linear(f64);
impl EnergyKernel for Linear {
    fn eval(&self, x: &Point) -> f64 {
        self.0 * x.x()
    }
    fn grad(&self, _x: &Point) -> Point {
        Point::scalar(self.0)
    }
}

struct Aniso2d;
impl EnergyKernel for Aniso2d {
    fn eval(&self, x: &Point) -> f64 {
        0.5 * x[0] * x[0] + x[1] * x[1]
    }
    fn grad(&self, x: &Point) -> Point {
        Point::new(&[x[0], 2.0 * x[1]])
    }
}

struct FnKernel<E, G> {
    eval: E,
    grad: G,
}
impl<E, G> EnergyKernel for FnKernel<E, G>
where
    E: Fn(&Point) -> f64 + Send + Sync,
    G: Fn(&Point) -> Point + Send + Sync,
{
    fn eval(&self, x: &Point) -> f64 {
        (self.eval)(x)
    }
    fn grad(&self, x: &Point) -> Point {
        (self.grad)(x)
    }
}

struct Tabulated {
    xs: Vec<f64>,
    phi: Vec<f64>,
    grad: Vec<f64>,
}

impl Tabulated {
    fn locate(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        }
    }
}

impl EnergyKernel for Tabulated {
    fn eval(&self, p: &Point) -> f64 {
        let x = p.x().clamp(self.xs[0], *self.xs.last().unwrap());
        let i = self.locate(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (p0, p1, m0, m1) = (self.phi[i], self.phi[i + 1], self.grad[i] * h, self.grad[i + 1] * h);
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1
    }
    fn grad(&self, p: &Point) -> Point {
        let x = p.x().clamp(self.xs[0], *self.xs.last().unwrap());
        let i = self.locate(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (p0, p1, m0, m1) = (self.phi[i], self.phi[i + 1], self.grad[i] * h, self.grad[i + 1] * h);
        let t2 = t * t;
        let d = (6.0 * t2 - 6.0 * t) * p0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * p1
            + (3.0 * t2 - 2.0 * t) * m1;
        Point::scalar(d / h)
    }
}

// --- bump chains ----------------------------------------------------------

/// One scaled semicircular-rate bump: the velocity profile
/// `f(x) = alpha * pi * sqrt(y (1-y))`, `y = (x-a)/(b-a)`, supported on `(a, b)`.
#[derive(Clone, Copy, Debug)]
pub struct BumpInterval {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
}

impl BumpInterval {
    pub fn new(a: f64, b: f64, alpha: f64) -> Self {
        assert!(b > a && alpha > 0.0);
        BumpInterval { a, b, alpha }
    }

    pub fn len(&self) -> f64 {
        self.b - self.a
    }
}

/// Base velocity profile `f(y) = pi sqrt(y(1-y))` on (0,1), 0 elsewhere.
pub fn base_bump(y: f64) -> f64 {
    if y <= 0.0 || y >= 1.0 {
        0.0
    } else {
        PI * (y * (1.0 - y)).sqrt()
    }
}

/// Antiderivative `A(y) = int_0^y base_bump`, with `A(0) = 0`, `A(1) = pi^2/8`.
pub fn base_bump_integral(y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return PI * PI / 8.0;
    }
    let s = (y * (1.0 - y)).sqrt();
    PI * ((2.0 * y - 1.0) * s / 4.0 + ((2.0 * y - 1.0).asin() + PI / 2.0) / 8.0)
}

/// Velocity field `f = sum of bumps` on disjoint intervals, and the descent
/// energy `phi(x) = -int_0^x f` in closed form.
pub struct BumpChain {
    intervals: Vec<BumpInterval>,
    /// Cumulative integral of f over intervals 0..i.
    cum: Vec<f64>,
}

impl BumpChain {
    pub fn new(mut intervals: Vec<BumpInterval>) -> Self {
        intervals.sort_by(|p, q| p.a.partial_cmp(&q.a).unwrap());
        for w in intervals.windows(2) {
            assert!(w[0].b <= w[1].a + 1e-15, "bump intervals must be disjoint");
        }
        let mut cum = Vec::with_capacity(intervals.len() + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for iv in &intervals {
            acc += iv.alpha * iv.len() * PI * PI / 8.0;
            cum.push(acc);
        }
        BumpChain { intervals, cum }
    }

    pub fn intervals(&self) -> &[BumpInterval] {
        &self.intervals
    }

    pub fn max_slope(&self) -> f64 {
        self.intervals
            .iter()
            .map(|iv| iv.alpha * PI / 2.0)
            .fold(0.0, f64::max)
    }

    fn locate(&self, x: f64) -> Option<usize> {
        // index of the interval containing x, if any
        let i = self
            .intervals
            .partition_point(|iv| iv.b <= x);
        if i < self.intervals.len() && self.intervals[i].a < x && x < self.intervals[i].b {
            Some(i)
        } else {
            None
        }
    }

    /// Velocity `f(x) >= 0`.
    pub fn f(&self, x: f64) -> f64 {
        match self.locate(x) {
            Some(i) => {
                let iv = &self.intervals[i];
                iv.alpha * base_bump((x - iv.a) / iv.len())
            }
            None => 0.0,
        }
    }

    /// `int_0^x f` in closed form (assumes all intervals lie in x >= 0).
    pub fn f_integral(&self, x: f64) -> f64 {
        let i = self.intervals.partition_point(|iv| iv.b <= x);
        let mut total = self.cum[i];
        if i < self.intervals.len() {
            let iv = &self.intervals[i];
            if x > iv.a {
                total += iv.alpha * iv.len() * base_bump_integral((x - iv.a) / iv.len());
            }
        }
        total
    }
}

impl EnergyKernel for BumpChain {
    fn eval(&self, x: &Point) -> f64 {
        -self.f_integral(x.x())
    }
    fn grad(&self, x: &Point) -> Point {
        Point::scalar(-self.f(x.x()))
    }
}

// --- point clouds ----------------------------------------------------------

/// A finite compact set of points (the target set of distance penalizations).
#[derive(Clone, Debug)]
pub struct PointCloud {
    points: Vec<Point>,
    dim: usize,
    /// Sorted first coordinates for O(log n) nearest lookup in 1-D.
    sorted_1d: Option<Vec<f64>>,
}

pub const CLOUD_DEDUP_TOL: f64 = 1e-12;

impl PointCloud {
    /// Builds a cloud, merging duplicates closer than 1e-12.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(GradFlowError::input("point cloud must be nonempty"));
        }
        let dim = points[0].dim();
        if points.iter().any(|p| p.dim() != dim) {
            return Err(GradFlowError::input("point cloud points must share a dimension"));
        }
        let mut kept: Vec<Point> = Vec::with_capacity(points.len());
        if dim == 1 {
            let mut pts = points;
            pts.sort_by(|p, q| p.x().partial_cmp(&q.x()).unwrap());
            for p in pts {
                if kept.last().is_none_or(|q: &Point| p.x() - q.x() > CLOUD_DEDUP_TOL) {
                    kept.push(p);
                }
            }
        } else {
            for p in points {
                if kept.iter().all(|q| p.dist(q) > CLOUD_DEDUP_TOL) {
                    kept.push(p);
                }
            }
        }
        let sorted_1d = (dim == 1).then(|| kept.iter().map(|p| p.x()).collect());
        Ok(PointCloud {
            points: kept,
            dim,
            sorted_1d,
        })
    }

    pub fn from_scalars(xs: Vec<f64>) -> Result<Self> {
        PointCloud::new(xs.into_iter().map(Point::scalar).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Nearest cloud point and its distance to `x`.
    pub fn nearest(&self, x: &Point) -> (Point, f64) {
        debug_assert_eq!(x.dim(), self.dim);
        if let Some(sorted) = &self.sorted_1d {
            let v = x.x();
            let i = sorted.partition_point(|&s| s < v);
            let mut best = (self.points[0], f64::INFINITY);
            if i < sorted.len() {
                best = (self.points[i], (sorted[i] - v).abs());
            }
            if i > 0 {
                let d = (sorted[i - 1] - v).abs();
                if d < best.1 {
                    best = (self.points[i - 1], d);
                }
            }
            best
        } else {
            self.points
                .iter()
                .map(|p| (*p, p.dist(x)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap()
        }
    }

    /// Smallest axis-aligned box containing the cloud.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            for i in 0..self.dim {
                if p[i] < lo[i] {
                    lo.set(i, p[i]);
                }
                if p[i] > hi[i] {
                    hi.set(i, p[i]);
                }
            }
        }
        (lo, hi)
    }
}

/// Distance from `x` to the cloud (1-Lipschitz in `x`).
pub fn dist_to_cloud(cloud: &PointCloud, x: &Point) -> Result<f64> {
    if x.dim() != cloud.dim() {
        return Err(GradFlowError::DimMismatch {
            expected: cloud.dim(),
            got: x.dim(),
        });
    }
    Ok(cloud.nearest(x).1)
}

// --- concave modulus estimates ----------------------------------------------

/// Piecewise-linear concave increasing upper envelope through (0,0), clamped
/// at 1: an empirical bound for gradient deviations
/// `min(1, |grad(x) - grad(y)|) <= omega(|x - y|)` with `x` in the cloud.
#[derive(Clone, Debug)]
pub struct ModulusEstimate {
    /// Envelope knots, strictly increasing radii starting after 0.
    radii: Vec<f64>,
    values: Vec<f64>,
    /// Probe spacing used to build the estimate (discretization budget).
    probe_spacing: Option<f64>,
}

impl ModulusEstimate {
    /// Least concave increasing majorant of `(0,0)` and the given knots,
    /// clamped at 1. Knot radii must be increasing and values in [0,1].
    pub fn from_knots(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.len() != values.len() || radii.is_empty() {
            return Err(GradFlowError::input("modulus knots: lengths must match and be nonempty"));
        }
        if !radii.windows(2).all(|w| w[1] > w[0]) || radii[0] < 0.0 {
            return Err(GradFlowError::input("modulus radii must be nonnegative increasing"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(GradFlowError::input("modulus values must lie in [0,1]"));
        }
        // Running max keeps the majorant increasing, then the upper hull from
        // (0,0) enforces concavity (slopes nonincreasing).
        let mut vmax = values.clone();
        for i in 1..vmax.len() {
            vmax[i] = vmax[i].max(vmax[i - 1]);
        }
        let mut hull: Vec<(f64, f64)> = vec![(0.0, 0.0)];
        for (&r, &v) in radii.iter().zip(&vmax) {
            if r <= 0.0 {
                continue;
            }
            let mut pt = (r, v.min(1.0));
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                // drop b when it lies below segment a-pt
                let cross = (b.0 - a.0) * (pt.1 - a.1) - (pt.0 - a.0) * (b.1 - a.1);
                if cross >= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            // keep increasing: never let a later knot dip below an earlier one
            if pt.1 < hull.last().unwrap().1 {
                pt.1 = hull.last().unwrap().1;
            }
            hull.push(pt);
        }
        let (mut rs, mut vs): (Vec<f64>, Vec<f64>) = hull.into_iter().skip(1).unzip();
        if rs.is_empty() {
            rs = vec![1.0];
            vs = vec![0.0];
        }
        Ok(ModulusEstimate {
            radii: rs,
            values: vs,
            probe_spacing: None,
        })
    }

    /// Dense sampling of a closed-form modulus (tests and selection-rule
    /// arithmetic). Uses a geometric ladder of radii so small scales resolve.
    pub fn from_fn(omega: impl Fn(f64) -> f64, r_max: f64) -> Self {
        let mut radii: Vec<f64> = (0..=48)
            .map(|k| r_max * 0.5_f64.powi(48 - k))
            .collect();
        radii.dedup();
        let values = radii.iter().map(|&r| omega(r).clamp(0.0, 1.0)).collect();
        ModulusEstimate::from_knots(radii, values).expect("closed-form modulus knots")
    }

    pub fn with_probe_spacing(mut self, h: f64) -> Self {
        self.probe_spacing = Some(h);
        self
    }

    pub fn probe_spacing(&self) -> Option<f64> {
        self.probe_spacing
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.radii, &self.values)
    }

    /// Envelope value at radius `r`: linear between knots, continued with the
    /// last slope past the final knot, clamped to [0,1].
    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let n = self.radii.len();
        if r <= self.radii[0] {
            return (self.values[0] * r / self.radii[0]).min(1.0);
        }
        if r >= self.radii[n - 1] {
            let v = if n >= 2 {
                let slope = (self.values[n - 1] - self.values[n - 2])
                    / (self.radii[n - 1] - self.radii[n - 2]);
                self.values[n - 1] + slope * (r - self.radii[n - 1])
            } else {
                self.values[n - 1]
            };
            return v.clamp(0.0, 1.0);
        }
        let i = self.radii.partition_point(|&s| s < r);
        let (r0, r1) = (self.radii[i - 1], self.radii[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        (v0 + (v1 - v0) * (r - r0) / (r1 - r0)).min(1.0)
    }
}

/// Empirical modulus: for each radius, the worst clamped gradient deviation
/// over pairs (x in cloud, y in probes) with `|x - y| <= r`, then the least
/// concave increasing majorant of those knots.
pub fn estimate_modulus(
    field: &EnergyField,
    cloud: &PointCloud,
    probes: &[Point],
    radii: &[f64],
) -> Result<ModulusEstimate> {
    if probes.is_empty() {
        return Err(GradFlowError::input("estimate_modulus: empty probe set"));
    }
    if radii.is_empty() {
        return Err(GradFlowError::input("estimate_modulus: empty radii list"));
    }
    let mut rs: Vec<f64> = radii.to_vec();
    rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rs.dedup();
    let r_max = *rs.last().unwrap();

    let cloud_grads: Vec<Point> = cloud.points().iter().map(|p| field.grad(p)).collect();
    let probe_grads: Vec<Point> = probes.iter().map(|p| field.grad(p)).collect();

    let mut raw = vec![0.0_f64; rs.len()];
    for (x, gx) in cloud.points().iter().zip(&cloud_grads) {
        for (y, gy) in probes.iter().zip(&probe_grads) {
            let d = x.dist(y);
            if d > r_max {
                continue;
            }
            let dev = (*gx - *gy).norm().min(1.0);
            let k = rs.partition_point(|&r| r < d);
            if k < raw.len() && dev > raw[k] {
                raw[k] = dev;
            }
        }
    }
    for i in 1..raw.len() {
        raw[i] = raw[i].max(raw[i - 1]);
    }
    // probe spacing: min positive gap along the first axis of the probe grid
    let mut spacing = f64::INFINITY;
    let mut xs: Vec<f64> = probes.iter().map(|p| p[0]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in xs.windows(2) {
        let g = w[1] - w[0];
        if g > 1e-14 && g < spacing {
            spacing = g;
        }
    }
    Ok(ModulusEstimate::from_knots(rs, raw)?
        .with_probe_spacing(if spacing.is_finite() { spacing } else { 0.0 }))
}

/// Uniform grid of probes on the cloud's bounding box inflated by `pad`.
pub fn probe_grid(cloud: &PointCloud, pad: f64, per_axis: usize) -> Vec<Point> {
    let (lo, hi) = cloud.bounding_box();
    let dim = cloud.dim();
    let axis = |i: usize, k: usize| {
        let a = lo[i] - pad;
        let b = hi[i] + pad;
        a + (b - a) * (k as f64) / ((per_axis - 1).max(1) as f64)
    };
    let mut out = Vec::new();
    match dim {
        1 => {
            for k in 0..per_axis {
                out.push(Point::scalar(axis(0, k)));
            }
        }
        2 => {
            for k0 in 0..per_axis {
                for k1 in 0..per_axis {
                    out.push(Point::new(&[axis(0, k0), axis(1, k1)]));
                }
            }
        }
        _ => {
            for k0 in 0..per_axis {
                for k1 in 0..per_axis {
                    for k2 in 0..per_axis {
                        out.push(Point::new(&[axis(0, k0), axis(1, k1), axis(2, k2)]));
                    }
                }
            }
        }
    }
    out
}

// --- quadratic lower bound audit ---------------------------------------------

/// Axis-aligned box for grid scans.
#[derive(Clone, Debug)]
pub struct AxisBox {
    pub lo: Point,
    pub hi: Point,
}

impl AxisBox {
    pub fn new(lo: Point, hi: Point) -> Self {
        assert_eq!(lo.dim(), hi.dim());
        AxisBox { lo, hi }
    }

    pub fn scalar(a: f64, b: f64) -> Self {
        AxisBox::new(Point::scalar(a), Point::scalar(b))
    }

    pub fn grid(&self, n_per_axis: usize) -> Vec<Point> {
        let dim = self.lo.dim();
        let axis = |i: usize, k: usize| {
            if n_per_axis == 1 {
                0.5 * (self.lo[i] + self.hi[i])
            } else {
                self.lo[i] + (self.hi[i] - self.lo[i]) * (k as f64) / ((n_per_axis - 1) as f64)
            }
        };
        let mut out = Vec::new();
        match dim {
            1 => {
                for k in 0..n_per_axis {
                    out.push(Point::scalar(axis(0, k)));
                }
            }
            2 => {
                for a in 0..n_per_axis {
                    for b in 0..n_per_axis {
                        out.push(Point::new(&[axis(0, a), axis(1, b)]));
                    }
                }
            }
            _ => {
                for a in 0..n_per_axis {
                    for b in 0..n_per_axis {
                        for c in 0..n_per_axis {
                            out.push(Point::new(&[axis(0, a), axis(1, b), axis(2, c)]));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Grid points of `bx` where `phi(x) + |x|^2/(2 tau_star) + phi_star < 0`
/// (empty result = the bound holds on this grid).
pub fn check_quadratic_bound(
    field: &EnergyField,
    tau_star: f64,
    phi_star: f64,
    bx: &AxisBox,
    n: usize,
) -> Result<Vec<Point>> {
    if tau_star <= 0.0 {
        return Err(GradFlowError::input("tau_star must be positive"));
    }
    if n < 1 {
        return Err(GradFlowError::input("grid size must be >= 1"));
    }
    let mut violations = Vec::new();
    for p in bx.grid(n) {
        let v = field.eval(&p) + p.norm().powi(2) / (2.0 * tau_star) + phi_star;
        if v < 0.0 {
            violations.push(p);
        }
    }
    Ok(violations)
}
