//! Scalar constructive core: pseudo-inverse of a monotone solution,
//! splitting of its derivative into an absolutely continuous density and a
//! residual measure, mollified smoothing producing perturbed energies whose
//! flows are minimal, and rectification of d-dimensional curves to a scalar
//! energy along arc length (with the lift back).

use crate::energy::EnergyField;
use crate::error::{GradFlowError, Result};
use crate::flow::{Curve, CurveKind};
use crate::point::Point;
use crate::reparam::minimality_defect;
use std::sync::OnceLock;

/// Left-continuous inverse `t(x)` of a nondecreasing scalar solution,
/// sampled on a uniform grid over the range.
#[derive(Clone, Debug)]
pub struct PseudoInverse {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
}

/// `t(x) = min{ t : u(t) >= x - 1e-12 }`, refined linearly inside the
/// bracketing sample cell (plateaus collapse to their left endpoint).
pub fn pseudo_inverse(u: &Curve, n_x: usize) -> Result<PseudoInverse> {
    if u.dim() != 1 {
        return Err(GradFlowError::input("pseudo_inverse: curve must be scalar"));
    }
    if n_x < 2 {
        return Err(GradFlowError::input("pseudo_inverse: need at least two grid points"));
    }
    let times = u.times();
    let vals: Vec<f64> = u.values().iter().map(|p| p.x()).collect();
    let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    for w in vals.windows(2) {
        if w[1] < w[0] - 1e-9 * (1.0 + scale) {
            return Err(GradFlowError::input(
                "pseudo_inverse: curve decreases; reflect it first",
            ));
        }
    }
    let (lo, hi) = (vals[0], *vals.last().unwrap());
    if hi - lo < 1e-12 {
        return Err(GradFlowError::Degenerate("constant curve has no range".into()));
    }
    let mut xs = Vec::with_capacity(n_x);
    let mut ts = Vec::with_capacity(n_x);
    let mut j = 0usize;
    for k in 0..n_x {
        let x = lo + (hi - lo) * k as f64 / (n_x - 1) as f64;
        while j < vals.len() && vals[j] < x - 1e-12 {
            j += 1;
        }
        let t = if j == 0 {
            times[0]
        } else if j >= vals.len() {
            *times.last().unwrap()
        } else {
            let (v0, v1) = (vals[j - 1], vals[j]);
            if v1 - v0 > 1e-14 {
                // bisect against the curve's own interpolant so that
                // u(t(x)) = x at machine scale, not just at sample scale
                let (mut lo, mut hi) = (times[j - 1], times[j]);
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if u.eval(mid).x() < x {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            } else {
                times[j]
            }
        };
        xs.push(x);
        ts.push(t);
    }
    // monotone by construction; enforce against rounding
    for k in 1..ts.len() {
        if ts[k] < ts[k - 1] {
            ts[k] = ts[k - 1];
        }
    }
    Ok(PseudoInverse { x: xs, t: ts })
}

/// Splitting of the derivative of the pseudo-inverse: per cell, the
/// absolutely continuous part integrates `1/f` over `{f > crit_tol}`; the
/// excess goes to an atom (when it dominates the AC part five-fold) or to a
/// diffuse histogram.
#[derive(Clone, Debug)]
pub struct SingularDecomposition {
    /// Cell edges (the pseudo-inverse grid).
    pub x_grid: Vec<f64>,
    /// Time increment of the pseudo-inverse across each cell.
    pub dt_cell: Vec<f64>,
    /// AC contribution of each cell.
    pub ac_cell: Vec<f64>,
    /// Atoms `(location, weight)` at cell left edges.
    pub atoms: Vec<(f64, f64)>,
    /// Diffuse remainder per cell.
    pub hist: Vec<f64>,
    pub crit_tol: f64,
}

impl SingularDecomposition {
    /// Total mass of the residual measure.
    pub fn measure_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum::<f64>() + self.hist.iter().sum::<f64>()
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// Support `[min, max]` of the residual measure, if it carries mass.
    pub fn measure_support(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(loc, w) in &self.atoms {
            if w > 0.0 {
                lo = lo.min(loc);
                hi = hi.max(loc);
            }
        }
        for (i, &w) in self.hist.iter().enumerate() {
            if w > 0.0 {
                lo = lo.min(self.x_grid[i]);
                hi = hi.max(self.x_grid[i + 1]);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Reconstructed `t(x)` at a grid index: AC plus measure below.
    pub fn reconstruct_t(&self, idx: usize) -> f64 {
        let mut t = 0.0;
        for i in 0..idx {
            t += self.ac_cell[i] + self.hist[i];
        }
        let x = self.x_grid[idx];
        for &(loc, w) in &self.atoms {
            if loc < x {
                t += w;
            }
        }
        t
    }
}

fn midpoint_masked(f: &impl Fn(f64) -> f64, a: f64, b: f64, crit_tol: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = 0.0;
    for k in 0..n {
        let m = a + (k as f64 + 0.5) * h;
        let fm = f(m);
        if fm > crit_tol {
            acc += h / fm;
        }
    }
    acc
}

/// Masked integral of `1/f` over a cell, with a Richardson-style error
/// estimate from the last grid doubling.
fn ac_integral(f: &impl Fn(f64) -> f64, a: f64, b: f64, crit_tol: f64) -> (f64, f64) {
    let coarse = midpoint_masked(f, a, b, crit_tol, 64);
    let fine = midpoint_masked(f, a, b, crit_tol, 128);
    (fine, (fine - coarse).abs())
}

#[allow(clippy::needless_range_loop)]
pub fn decompose_derivative(
    tmap: &PseudoInverse,
    f: impl Fn(f64) -> f64,
    crit_tol: f64,
) -> Result<SingularDecomposition> {
    let n = tmap.x.len();
    let mut dt_cell = Vec::with_capacity(n - 1);
    let mut ac_cell = Vec::with_capacity(n - 1);
    let mut atoms = Vec::new();
    let mut hist = vec![0.0; n - 1];
    for i in 0..n - 1 {
        let dt = tmap.t[i + 1] - tmap.t[i];
        let (ac, ac_err) = ac_integral(&f, tmap.x[i], tmap.x[i + 1], crit_tol);
        let noise = 4.0 * ac_err + 1e-9 * (1.0 + dt.abs());
        let excess = dt - ac;
        if excess < -(0.15 * ac + 1e-7 * (1.0 + dt.abs())) {
            return Err(GradFlowError::Consistency(format!(
                "cell [{}, {}]: time increment {} falls below its AC part {}",
                tmap.x[i],
                tmap.x[i + 1],
                dt,
                ac
            )));
        }
        let excess = excess.max(0.0);
        if dt > 5.0 * ac && excess > 0.0 {
            atoms.push((tmap.x[i], excess));
        } else if excess > noise {
            hist[i] = excess;
        }
        dt_cell.push(dt);
        ac_cell.push(ac);
    }
    Ok(SingularDecomposition {
        x_grid: tmap.x.clone(),
        dt_cell,
        ac_cell,
        atoms,
        hist,
        crit_tol,
    })
}

// --- mollification ----------------------------------------------------------

/// Forward bump kernel on `[0, 1]`: `kappa(s) = c exp(-1/(1 - (2s-1)^2))`,
/// normalized to unit mass.
pub fn kernel_bump(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let w = 2.0 * s - 1.0;
    kernel_norm() * (-1.0 / (1.0 - w * w)).exp()
}

fn kernel_norm() -> f64 {
    static NORM: OnceLock<f64> = OnceLock::new();
    *NORM.get_or_init(|| {
        // adaptive refinement of composite Simpson until stable at 1e-12;
        // the integrand is flat to all orders at the endpoints
        let raw = |s: f64| {
            let w: f64 = 2.0 * s - 1.0;
            if w * w >= 1.0 {
                0.0
            } else {
                (-1.0 / (1.0 - w * w)).exp()
            }
        };
        let mut prev = 0.0;
        let mut n = 64;
        loop {
            let h = 1.0 / n as f64;
            let mut acc = 0.0;
            for k in 0..n {
                let a = k as f64 * h;
                acc += h / 6.0 * (raw(a) + 4.0 * raw(a + 0.5 * h) + raw(a + h));
            }
            if (acc - prev).abs() < 1e-12 && n > 256 {
                return 1.0 / acc;
            }
            prev = acc;
            n *= 2;
        }
    })
}

/// The measure part of a decomposition, ready to mollify.
#[derive(Clone, Debug, Default)]
pub struct MeasurePart {
    /// Atoms plus histogram cells collapsed to their centers.
    pub masses: Vec<(f64, f64)>,
}

impl MeasurePart {
    pub fn from_decomposition(d: &SingularDecomposition) -> Self {
        let mut masses: Vec<(f64, f64)> = d.atoms.clone();
        for (i, &w) in d.hist.iter().enumerate() {
            if w > 0.0 {
                masses.push((0.5 * (d.x_grid[i] + d.x_grid[i + 1]), w));
            }
        }
        masses.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        MeasurePart { masses }
    }

    pub fn single_atom(loc: f64, weight: f64) -> Self {
        MeasurePart {
            masses: vec![(loc, weight)],
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().map(|m| m.1).sum()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        let locs: Vec<f64> = self
            .masses
            .iter()
            .filter(|m| m.1 > 0.0)
            .map(|m| m.0)
            .collect();
        if locs.is_empty() {
            None
        } else {
            Some((
                locs.iter().cloned().fold(f64::INFINITY, f64::min),
                locs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ))
        }
    }
}

/// Forward mollification: `m_eps(x) = sum_i w_i kappa((x - loc_i)/eps)/eps`;
/// supported inside `[min loc, max loc + eps]`.
pub fn mollify_measure(mu: &MeasurePart, eps: f64) -> Result<impl Fn(f64) -> f64 + '_> {
    if eps <= 0.0 {
        return Err(GradFlowError::input("mollify_measure: eps must be positive"));
    }
    Ok(move |x: f64| {
        let mut acc = 0.0;
        for &(loc, w) in &mu.masses {
            if x > loc && x < loc + eps {
                acc += w * kernel_bump((x - loc) / eps) / eps;
            }
        }
        acc
    })
}

// --- smoothed energies --------------------------------------------------------

/// Output of the mollified smoothing at one `eps`.
#[derive(Clone, Debug)]
pub struct SmoothedEnergy {
    pub eps: f64,
    pub x_grid: Vec<f64>,
    pub m_eps: Vec<f64>,
    /// Base velocity `E'` on the grid.
    pub eprime: Vec<f64>,
    /// Smoothed velocity `E'/(1 + m_eps E')` on the grid.
    pub eprime_eps: Vec<f64>,
    /// Smoothed time map `t_eps(x)` on the grid.
    pub t_eps: Vec<f64>,
    /// Flow of the smoothed energy (inverse of `t_eps`).
    pub u_eps: Curve,
    /// Support of the residual measure, if any.
    pub support: Option<(f64, f64)>,
    /// Worst local slope of the numerical inverse (degrades near atoms).
    pub worst_inverse_slope: f64,
}

impl SmoothedEnergy {
    /// Whether `x` lies in the closed `eps`-neighborhood of the support.
    pub fn in_n_eps(&self, x: f64) -> bool {
        match self.support {
            Some((lo, hi)) => x >= lo - self.eps && x <= hi + self.eps,
            None => false,
        }
    }
}

pub fn smooth_energy(
    decomp: &SingularDecomposition,
    f: impl Fn(f64) -> f64,
    eps: f64,
) -> Result<SmoothedEnergy> {
    let mu = MeasurePart::from_decomposition(decomp);
    let m = mollify_measure(&mu, eps)?;
    let xg = &decomp.x_grid;
    let n = xg.len();

    let m_eps: Vec<f64> = xg.iter().map(|&x| m(x)).collect();
    let eprime: Vec<f64> = xg.iter().map(|&x| f(x)).collect();
    let eprime_eps: Vec<f64> = eprime
        .iter()
        .zip(&m_eps)
        .map(|(&fp, &mp)| if mp == 0.0 { fp } else { fp / (1.0 + mp * fp) })
        .collect();

    let mut t_eps = Vec::with_capacity(n);
    t_eps.push(0.0);
    for i in 0..n - 1 {
        let h = xg[i + 1] - xg[i];
        let mid = 0.5 * (xg[i] + xg[i + 1]);
        let dm = h / 6.0 * (m_eps[i] + 4.0 * m(mid) + m_eps[i + 1]);
        t_eps.push(t_eps[i] + decomp.ac_cell[i] + dm);
    }
    let probe = 4.min(n - 1);
    if t_eps[probe] <= 0.0 {
        return Err(GradFlowError::Degenerate(
            "velocity vanishes on an initial segment: the smoothed time map is flat at 0".into(),
        ));
    }

    // invert t_eps onto a uniform time grid
    let t_end = *t_eps.last().unwrap();
    let n_t = n.max(1024);
    let times: Vec<f64> = (0..n_t).map(|k| t_end * k as f64 / (n_t - 1) as f64).collect();
    let mut values = Vec::with_capacity(n_t);
    let mut j = 0usize;
    let mut worst_slope = 0.0_f64;
    for i in 0..n - 1 {
        let dt = t_eps[i + 1] - t_eps[i];
        if dt > 1e-300 {
            worst_slope = worst_slope.max((xg[i + 1] - xg[i]) / dt);
        }
    }
    for &s in &times {
        while j + 1 < t_eps.len() && t_eps[j + 1] < s {
            j += 1;
        }
        let x = if j + 1 >= t_eps.len() {
            xg[n - 1]
        } else if t_eps[j + 1] - t_eps[j] > 1e-300 {
            let frac = ((s - t_eps[j]) / (t_eps[j + 1] - t_eps[j])).clamp(0.0, 1.0);
            xg[j] + frac * (xg[j + 1] - xg[j])
        } else {
            xg[j]
        };
        values.push(Point::scalar(x));
    }
    let u_eps = Curve::continuous(
        times,
        values,
        t_end / (n_t - 1) as f64 * (1.0 + 1e-9),
    )?;

    Ok(SmoothedEnergy {
        eps,
        x_grid: xg.clone(),
        m_eps,
        eprime,
        eprime_eps,
        t_eps,
        u_eps,
        support: mu.support(),
        worst_inverse_slope: worst_slope,
    })
}

// --- rectification ------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct RectifyConfig {
    pub n_s: usize,
    /// Largest admissible minimality defect of the input curve.
    pub max_defect: f64,
    pub crit_tol: f64,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        RectifyConfig {
            n_s: 8192,
            max_defect: 5e-2,
            crit_tol: 1e-7,
        }
    }
}

/// A d-dimensional minimal solution rectified to arc length: the unit-speed
/// chart `y(s)`, the scalar velocity `E'(s) = |grad phi(y(s))|`, and the
/// inverse time map.
#[derive(Clone, Debug)]
pub struct RectifiedEnergy {
    /// Uniform arc-length grid on `[0, l_star]`.
    pub s_grid: Vec<f64>,
    /// Unit-speed chart as a curve over arc length.
    pub chart: Curve,
    pub eprime: Vec<f64>,
    pub t_of_s: Vec<f64>,
    pub l_star: f64,
    pub unit_speed_defect: f64,
    pub degenerate: bool,
}

impl RectifiedEnergy {
    pub fn point_at(&self, s: f64) -> Point {
        self.chart.eval(s.clamp(0.0, self.l_star))
    }

    /// Scalar flow along the chart: the inverse of `t_of_s` as a curve.
    pub fn scalar_flow(&self, n_t: usize) -> Result<Curve> {
        invert_monotone_map(&self.t_of_s, &self.s_grid, n_t)
    }
}

/// Inverts a nondecreasing map `t -> s` given by parallel arrays onto a
/// uniform grid in `t` (plateaus collapse to their left endpoint).
pub fn invert_monotone_map(t: &[f64], s: &[f64], n_out: usize) -> Result<Curve> {
    if t.len() != s.len() || t.len() < 2 {
        return Err(GradFlowError::input("invert_monotone_map: bad arrays"));
    }
    let t_end = *t.last().unwrap();
    if t_end <= 0.0 {
        return Err(GradFlowError::Degenerate("monotone map has empty span".into()));
    }
    let times: Vec<f64> = (0..n_out)
        .map(|k| t_end * k as f64 / (n_out - 1) as f64)
        .collect();
    let mut vals = Vec::with_capacity(n_out);
    let mut j = 0usize;
    for &tt in &times {
        while j + 1 < t.len() && t[j + 1] < tt {
            j += 1;
        }
        let x = if j + 1 >= t.len() {
            s[t.len() - 1]
        } else if t[j + 1] - t[j] > 1e-300 {
            let frac = ((tt - t[j]) / (t[j + 1] - t[j])).clamp(0.0, 1.0);
            s[j] + frac * (s[j + 1] - s[j])
        } else {
            s[j]
        };
        vals.push(Point::scalar(x));
    }
    Curve::continuous(times, vals, t_end / (n_out - 1) as f64 * (1.0 + 1e-9))
}

pub fn rectify(field: &EnergyField, v: &Curve, cfg: &RectifyConfig) -> Result<RectifiedEnergy> {
    if !matches!(v.kind(), CurveKind::Continuous { .. }) {
        return Err(GradFlowError::input("rectify: continuous curve required"));
    }
    let defect = minimality_defect(field, v, cfg.crit_tol);
    if defect > cfg.max_defect {
        return Err(GradFlowError::input(format!(
            "rectify: input dwells on the critical set for measure {}; minimalize it first",
            defect
        )));
    }

    // cumulative arc length by Simpson on |grad phi(v)|
    let times = v.times();
    let mut x = Vec::with_capacity(times.len());
    x.push(0.0);
    for i in 0..times.len() - 1 {
        let h = times[i + 1] - times[i];
        let g0 = field.grad_norm(&v.values()[i]);
        let gm = field.grad_norm(&v.eval(0.5 * (times[i] + times[i + 1])));
        let g1 = field.grad_norm(&v.values()[i + 1]);
        x.push(x[i] + h / 6.0 * (g0 + 4.0 * gm + g1));
    }
    let l_star = *x.last().unwrap();
    if l_star < 1e-12 {
        return Ok(RectifiedEnergy {
            s_grid: vec![0.0, 1.0],
            chart: Curve::constant(v.values()[0], 1.0),
            eprime: vec![0.0, 0.0],
            t_of_s: vec![0.0, 0.0],
            l_star: 0.0,
            unit_speed_defect: 0.0,
            degenerate: true,
        })
    }

    let n_s = cfg.n_s.max(16);
    // first pass: invert x(t) on a uniform s-grid
    let mut s_grid: Vec<f64> = (0..n_s)
        .map(|k| l_star * k as f64 / (n_s - 1) as f64)
        .collect();
    let mut t_of_s = Vec::with_capacity(n_s);
    let mut j = 0usize;
    for &s in &s_grid {
        while j + 1 < x.len() && x[j + 1] < s {
            j += 1;
        }
        let t = if j + 1 >= x.len() {
            times[x.len() - 1]
        } else if x[j + 1] - x[j] > 1e-300 {
            times[j] + (times[j + 1] - times[j]) * ((s - x[j]) / (x[j + 1] - x[j])).clamp(0.0, 1.0)
        } else {
            times[j]
        };
        t_of_s.push(t);
    }
    let mut y: Vec<Point> = t_of_s.iter().map(|&t| v.eval(t)).collect();

    // re-projection: re-parametrize the sampled polyline by its own length
    let mut arc = Vec::with_capacity(n_s);
    arc.push(0.0);
    for i in 0..n_s - 1 {
        arc.push(arc[i] + y[i + 1].dist(&y[i]));
    }
    let arc_end = *arc.last().unwrap();
    if arc_end > 1e-12 {
        let mut y2 = Vec::with_capacity(n_s);
        let mut t2 = Vec::with_capacity(n_s);
        let mut j = 0usize;
        for k in 0..n_s {
            let s = arc_end * k as f64 / (n_s - 1) as f64;
            while j + 1 < arc.len() && arc[j + 1] < s {
                j += 1;
            }
            if j + 1 >= arc.len() {
                y2.push(y[n_s - 1]);
                t2.push(t_of_s[n_s - 1]);
            } else if arc[j + 1] - arc[j] > 1e-300 {
                let frac = ((s - arc[j]) / (arc[j + 1] - arc[j])).clamp(0.0, 1.0);
                y2.push(y[j] + (y[j + 1] - y[j]) * frac);
                t2.push(t_of_s[j] + frac * (t_of_s[j + 1] - t_of_s[j]));
            } else {
                y2.push(y[j]);
                t2.push(t_of_s[j]);
            }
        }
        y = y2;
        t_of_s = t2;
        s_grid = (0..n_s)
            .map(|k| arc_end * k as f64 / (n_s - 1) as f64)
            .collect();
    }
    let l_star = *s_grid.last().unwrap();

    let ds = l_star / (n_s - 1) as f64;
    let mut unit_defect = 0.0_f64;
    for i in 0..n_s - 1 {
        unit_defect = unit_defect.max((y[i + 1].dist(&y[i]) / ds - 1.0).abs());
    }
    let eprime: Vec<f64> = y.iter().map(|p| field.grad_norm(p)).collect();
    let chart = Curve::continuous(s_grid.clone(), y, ds * (1.0 + 1e-9))?;
    Ok(RectifiedEnergy {
        s_grid,
        chart,
        eprime,
        t_of_s,
        l_star,
        unit_speed_defect: unit_defect,
        degenerate: false,
    })
}

/// Lift of a scalar flow back through the chart, with the consistency report
/// `max_t |u'(t) + grad phi(u(t)) / (1 + m_eps |grad phi(u(t))|)|`
/// (centered differences for `u'`).
pub struct LiftResult {
    pub curve: Curve,
    pub gradient_report: f64,
}

pub fn lift(
    rect: &RectifiedEnergy,
    field: &EnergyField,
    m_on_s: Option<&[f64]>,
    scalar: &Curve,
    n_t: usize,
) -> Result<LiftResult> {
    if scalar.dim() != 1 {
        return Err(GradFlowError::input("lift: scalar flow required"));
    }
    if let Some(m) = m_on_s {
        if m.len() != rect.s_grid.len() {
            return Err(GradFlowError::input("lift: m_eps grid mismatch"));
        }
    }
    let max_s = scalar.values().iter().map(|p| p.x()).fold(0.0, f64::max);
    if max_s > rect.l_star + 1e-9 {
        return Err(GradFlowError::input(format!(
            "lift: scalar flow reaches {} beyond the chart length {}",
            max_s, rect.l_star
        )));
    }
    let horizon = scalar.horizon();
    let n_t = n_t.max(16);
    let times: Vec<f64> = (0..n_t)
        .map(|k| horizon * k as f64 / (n_t - 1) as f64)
        .collect();
    let svals: Vec<f64> = times.iter().map(|&t| scalar.eval(t).x()).collect();
    let pts: Vec<Point> = svals.iter().map(|&s| rect.point_at(s)).collect();

    let m_at = |s: f64| -> f64 {
        match m_on_s {
            None => 0.0,
            Some(m) => {
                let ds = rect.l_star / (rect.s_grid.len() - 1) as f64;
                if ds <= 0.0 {
                    return 0.0;
                }
                let i = ((s / ds).floor() as usize).min(m.len() - 2);
                let frac = (s / ds - i as f64).clamp(0.0, 1.0);
                m[i] * (1.0 - frac) + m[i + 1] * frac
            }
        }
    };
    let h = horizon / (n_t - 1) as f64;
    let mut report = 0.0_f64;
    for i in 1..n_t - 1 {
        let du = (pts[i + 1] - pts[i - 1]) * (1.0 / (2.0 * h));
        let g = field.grad(&pts[i]);
        let denom = 1.0 + m_at(svals[i]) * g.norm();
        report = report.max((du + g * (1.0 / denom)).norm());
    }
    let curve = Curve::continuous(times, pts, h * (1.0 + 1e-9))?;
    Ok(LiftResult {
        curve,
        gradient_report: report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{base_solution, cusp_paused, line_flow_2d};
    use crate::energy::EnergyField;
    use crate::flow::metric_dt;
    use std::f64::consts::PI;

    #[test]
    fn pseudo_inverse_linear_and_plateau() {
        let u = Curve::from_scalar_fn(|t| t, 1.0, 2001);
        let pi = pseudo_inverse(&u, 501).unwrap();
        for (x, t) in pi.x.iter().zip(&pi.t) {
            assert!((x - t).abs() < 1e-9);
        }

        // plateau at c = 0.5 on [0.4, 0.8]: t(0.5) is the left endpoint
        let u = Curve::from_scalar_fn(
            |t| {
                if t < 0.4 {
                    0.5 * t / 0.4
                } else if t <= 0.8 {
                    0.5
                } else {
                    0.5 + (t - 0.8)
                }
            },
            1.0,
            4001,
        );
        // grid of 701 points places x = 0.5 exactly on a node
        let pi = pseudo_inverse(&u, 701).unwrap();
        let k = pi.x.iter().position(|&x| (x - 0.5).abs() < 1e-9).unwrap();
        assert!((pi.t[k] - 0.4).abs() < 2e-3, "t(0.5) = {}", pi.t[k]);

        let dec = Curve::from_scalar_fn(|t| -t, 1.0, 101);
        assert!(pseudo_inverse(&dec, 11).is_err());
    }

    #[test]
    fn pseudo_inverse_arcsine() {
        // u(t) = 1/2 + sin(pi(t - 1/2))/2 has inverse 1/2 + asin(2x-1)/pi
        let u = Curve::from_scalar_fn(base_solution, 1.0, 20001);
        let pi_map = pseudo_inverse(&u, 2001).unwrap();
        for (x, t) in pi_map.x.iter().zip(&pi_map.t) {
            assert!((u.eval(*t).x() - x).abs() < 1e-9, "u(t(x)) != x at {}", x);
            if *x > 0.05 && *x < 0.95 {
                let exact = 0.5 + (2.0 * x - 1.0).asin() / PI;
                assert!((t - exact).abs() < 1e-4, "t({}) = {} want {}", x, t, exact);
            }
        }
    }

    fn reflected_paused() -> Curve {
        cusp_paused(1.0, 0.5, 2.5, 25_001).transform_values(|p| *p * -1.0)
    }

    #[test]
    fn decompose_exact_flow_has_no_measure() {
        // u' = f(u) with f > 0 on the sampled range: residual mass ~ 0
        let u = Curve::from_scalar_fn(|t| 1.0 - (-t).exp(), 3.0, 8001);
        let pi = pseudo_inverse(&u, 2001).unwrap();
        let d = decompose_derivative(&pi, |x| 1.0 - x, 1e-7).unwrap();
        assert!(d.measure_mass() < 2e-3, "mass {}", d.measure_mass());
        assert!(d.atoms.is_empty());
    }

    #[test]
    fn decompose_pause_gives_atom() {
        let u = reflected_paused();
        let pi = pseudo_inverse(&u, 6001).unwrap();
        let d = decompose_derivative(&pi, |x: f64| 2.0 * x.abs().sqrt(), 1e-7).unwrap();
        assert_eq!(d.atoms.len(), 1, "{:?}", d.atoms);
        let (loc, w) = d.atoms[0];
        assert!(loc.abs() < 1e-3, "atom location {}", loc);
        assert!((w - 0.5).abs() < 0.05, "atom weight {}", w);
        // t reconstruction at continuity points
        for idx in [100, 3000, 5900] {
            let got = d.reconstruct_t(idx);
            assert!((got - pi.t[idx]).abs() < 0.05, "t mismatch at {}", idx);
        }
    }

    #[test]
    fn kernel_normalization_and_peak() {
        // unit atom at 0, eps = 1: the density is the kernel itself
        let mu = MeasurePart::single_atom(0.0, 1.0);
        let m = mollify_measure(&mu, 1.0).unwrap();
        let n = 20000;
        let mass: f64 = (0..n).map(|k| m((k as f64 + 0.5) / n as f64) / n as f64).sum();
        assert!((mass - 1.0).abs() < 1e-8, "mass {}", mass);

        // doubled atom at 0.5 with eps = 0.1: mass 2 inside [0.5, 0.6]
        let mu2 = MeasurePart::single_atom(0.5, 2.0);
        let m2 = mollify_measure(&mu2, 0.1).unwrap();
        assert_eq!(m2(0.45), 0.0);
        assert_eq!(m2(0.65), 0.0);
        let mass2: f64 = (0..n)
            .map(|k| {
                let x = 0.5 + 0.1 * (k as f64 + 0.5) / n as f64;
                m2(x) * 0.1 / n as f64
            })
            .sum();
        assert!((mass2 - 2.0).abs() < 1e-7, "mass {}", mass2);
        let peak = (0..n)
            .map(|k| m2(0.5 + 0.1 * k as f64 / n as f64))
            .fold(0.0, f64::max);
        let kappa_max = kernel_bump(0.5);
        assert!((peak - 2.0 * kappa_max / 0.1).abs() / peak < 1e-6);

        // empty measure mollifies to zero
        let zero = MeasurePart::default();
        let mz = mollify_measure(&zero, 0.5).unwrap();
        assert_eq!(mz(0.3), 0.0);
    }

    #[test]
    fn smoothing_contracts_and_converges() {
        let u = reflected_paused();
        let f = |x: f64| 2.0 * x.abs().sqrt();
        let pi = pseudo_inverse(&u, 6001).unwrap();
        let d = decompose_derivative(&pi, f, 1e-7).unwrap();

        let mut sup_gaps = Vec::new();
        let mut dts = Vec::new();
        for eps in [0.1, 0.05, 0.025] {
            let sm = smooth_energy(&d, f, eps).unwrap();
            // sandwich 0 <= E'_eps <= E', equality off the support hull
            let mut sup_gap = 0.0_f64;
            let mut bound = 0.0_f64;
            for (i, &x) in sm.x_grid.iter().enumerate() {
                assert!(sm.eprime_eps[i] >= 0.0 && sm.eprime_eps[i] <= sm.eprime[i] + 1e-15);
                if !sm.in_n_eps(x) {
                    assert_eq!(sm.eprime_eps[i], sm.eprime[i], "off-support mismatch at {}", x);
                } else {
                    bound = bound.max(sm.eprime[i]);
                }
                sup_gap = sup_gap.max(sm.eprime[i] - sm.eprime_eps[i]);
            }
            assert!(sup_gap <= 2.0 * bound + 1e-12, "{} vs {}", sup_gap, bound);
            sup_gaps.push(sup_gap);
            dts.push(metric_dt(&sm.u_eps, &u, 2.0).unwrap());
        }
        assert!(sup_gaps[0] > sup_gaps[1] && sup_gaps[1] > sup_gaps[2], "{:?}", sup_gaps);
        assert!(dts[0] > dts[1] && dts[1] > dts[2], "{:?}", dts);
    }

    #[test]
    fn smoothing_zero_measure_reproduces_flow() {
        let u = Curve::from_scalar_fn(|t| 1.0 - (-t).exp(), 3.0, 8001);
        let f = |x: f64| 1.0 - x;
        let pi = pseudo_inverse(&u, 2001).unwrap();
        let mut d = decompose_derivative(&pi, f, 1e-9).unwrap();
        // drop the (tiny, spurious) diffuse remainder: mu = 0 exactly
        d.hist.iter_mut().for_each(|w| *w = 0.0);
        d.atoms.clear();
        let sm = smooth_energy(&d, f, 0.05).unwrap();
        for (i, &x) in sm.x_grid.iter().enumerate() {
            assert_eq!(sm.eprime_eps[i], sm.eprime[i], "at {}", x);
        }
        let gap = metric_dt(&sm.u_eps, &u, 2.5).unwrap();
        assert!(gap < 2e-3, "flow gap {}", gap);
    }

    #[test]
    fn smoothed_time_map_matches_off_support() {
        let u = reflected_paused();
        let f = |x: f64| 2.0 * x.abs().sqrt();
        let pi = pseudo_inverse(&u, 6001).unwrap();
        let d = decompose_derivative(&pi, f, 1e-7).unwrap();
        let eps = 0.05;
        let sm = smooth_energy(&d, f, eps).unwrap();
        let (_, hi) = sm.support.unwrap();
        // beyond the support the smoothed and original time maps agree
        for (i, &x) in sm.x_grid.iter().enumerate() {
            if x >= hi + eps + 1e-3 {
                let t_orig = pi.t[i] - pi.t[0];
                assert!(
                    (sm.t_eps[i] - t_orig).abs() < 2e-2,
                    "t mismatch at {}: {} vs {}",
                    x,
                    sm.t_eps[i],
                    t_orig
                );
            }
        }
        // and at continuity points away from the atom they already sit at
        // the quadrature floor for the whole ladder
        let idx = sm
            .x_grid
            .iter()
            .position(|&x| x > 0.5)
            .unwrap();
        // the floored quadrature noise near the singular cell costs ~1e-3
        for eps in [0.1, 0.05, 0.025] {
            let sm = smooth_energy(&d, f, eps).unwrap();
            let err = (sm.t_eps[idx] - (pi.t[idx] - pi.t[0])).abs();
            assert!(err <= 5e-3, "eps {}: err {}", eps, err);
        }
    }

    #[test]
    fn degenerate_initial_segment_detected() {
        let xs: Vec<f64> = (0..101).map(|k| k as f64 / 100.0).collect();
        let ts: Vec<f64> = xs.iter().map(|&x| x * x).collect();
        let pi = PseudoInverse { x: xs, t: ts };
        let d = decompose_derivative(&pi, |_| 0.0, 1e-7);
        // whole derivative is residual: every cell becomes measure; smoothing
        // with zero measure on the first cells is impossible only when the
        // measure is stripped
        let mut d = d.unwrap();
        d.atoms.clear();
        d.hist.iter_mut().for_each(|w| *w = 0.0);
        assert!(matches!(
            smooth_energy(&d, |_| 0.0, 0.1),
            Err(GradFlowError::Degenerate(_))
        ));
    }

    #[test]
    fn rectify_straight_line() {
        let field = EnergyField::quadratic(2);
        let v = line_flow_2d(4.0, 8001);
        let rect = rectify(&field, &v, &RectifyConfig::default()).unwrap();
        assert!(!rect.degenerate);
        assert!(rect.unit_speed_defect < 1e-6, "unit speed {}", rect.unit_speed_defect);
        // y(s) = (1 - s, 0) and E'(s) = 1 - s
        for k in [0, 1000, 4000, 8000] {
            let s = rect.s_grid[k.min(rect.s_grid.len() - 1)];
            let p = rect.point_at(s);
            assert!((p[0] - (1.0 - s)).abs() < 1e-4, "y({}) = {:?}", s, p);
            assert!(p[1].abs() < 1e-9);
            assert!((rect.eprime[k.min(rect.eprime.len() - 1)] - (1.0 - s)).abs() < 1e-4);
        }
    }

    #[test]
    fn rectify_curved_flow_is_unit_speed() {
        let field = EnergyField::aniso2d();
        let v = crate::catalog::aniso_flow(1.0, 1.0, 5.0, 20001);
        let rect = rectify(&field, &v, &RectifyConfig::default()).unwrap();
        assert!(rect.unit_speed_defect <= 1e-6, "defect {}", rect.unit_speed_defect);
    }

    #[test]
    fn rectify_scalar_matches_velocity() {
        let field = EnergyField::cusp();
        let v = crate::catalog::cusp_through(1.0, 2.0, 20001);
        let rect = rectify(&field, &v, &RectifyConfig::default()).unwrap();
        // chart is the identity on the traversed range (up to orientation)
        for k in [100, 2000, 6000] {
            let s = rect.s_grid[k];
            let expect = 1.0 - s; // starts at 1 and decreases
            assert!((rect.point_at(s).x() - expect).abs() < 1e-3);
            assert!((rect.eprime[k] - 2.0 * expect.abs().sqrt()).abs() < 2e-3);
        }
    }

    #[test]
    fn rectify_rejects_dwelling_input() {
        let field = EnergyField::cusp();
        let v = cusp_paused(1.0, 0.5, 2.5, 8001);
        assert!(rectify(&field, &v, &RectifyConfig::default()).is_err());
    }

    #[test]
    fn rectify_constant_degenerate() {
        let field = EnergyField::quadratic(1);
        let v = Curve::constant(Point::scalar(0.0), 1.0).resample(64);
        let rect = rectify(&field, &v, &RectifyConfig::default()).unwrap();
        assert!(rect.degenerate);
        assert_eq!(rect.l_star, 0.0);
    }

    #[test]
    fn lift_round_trip_zero_measure() {
        let field = EnergyField::quadratic(2);
        let v = line_flow_2d(3.0, 8001);
        let rect = rectify(&field, &v, &RectifyConfig::default()).unwrap();
        let scalar = rect.scalar_flow(8001).unwrap();
        let lifted = lift(&rect, &field, None, &scalar, 8001).unwrap();
        let gap = metric_dt(&lifted.curve, &v, 3.0).unwrap();
        assert!(gap <= 1e-4, "round trip {}", gap);
        assert!(lifted.gradient_report <= 1e-3, "report {}", lifted.gradient_report);
    }

    #[test]
    fn lift_identity_chart_is_scalar_flow() {
        let field = EnergyField::cusp();
        let v = crate::catalog::cusp_through(1.0, 2.0, 20001);
        let rect = rectify(&field, &v, &RectifyConfig::default()).unwrap();
        let scalar = rect.scalar_flow(4001).unwrap();
        let lifted = lift(&rect, &field, None, &scalar, 4001).unwrap();
        for t in [0.2, 0.7, 1.4] {
            let s = scalar.eval(t).x();
            assert!((lifted.curve.eval(t).x() - rect.point_at(s).x()).abs() < 1e-9);
        }
    }
}
