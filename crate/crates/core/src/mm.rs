//! Minimizing-movement engine: global proximal steps, enumeration of
//! branching discrete solutions, piecewise-constant interpolation, Euler
//! residual diagnostics, and step-size sweep studies.
//!
//! One proximal step minimizes `Phi(tau, x, v) = |v - x|^2/(2 tau) + psi(v)`
//! globally over a ball around `x`. Global (not local) minimization is the
//! defining feature of the scheme: ties produce genuinely distinct discrete
//! branches, so the solver keeps every minimizer it can certify.

use crate::energy::{EnergyField, PointCloud};
use crate::error::{GradFlowError, Result};
use crate::flow::{metric_dt, set_distance, Curve, Horizon};
use crate::point::Point;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Configuration of the global proximal solver.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Search radius; `None` means `4 tau (|grad psi(x)| + 1)`.
    pub r_search: Option<f64>,
    /// Scan resolution as a fraction of the search radius.
    pub grid_factor: f64,
    /// Ties are values within `tie_tol_factor * (1 + |best|)` of the best.
    pub tie_tol_factor: f64,
    /// Minimizers closer than this merge into one.
    pub merge_tol: f64,
    /// Width to which each bracket is refined.
    pub refine_width: f64,
    /// Branch-tree cap for all-branch enumeration.
    pub max_branches: usize,
    /// Multistart seeds in 2-D/3-D.
    pub seeds: usize,
    /// RNG seed (multistart placement, random tie policy).
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            r_search: None,
            grid_factor: 1e-4,
            tie_tol_factor: 1e-8,
            merge_tol: 1e-9,
            refine_width: 1e-12,
            max_branches: 64,
            seeds: 32,
            seed: 0,
        }
    }
}

/// Outcome of one global proximal step.
#[derive(Clone, Debug)]
pub struct ProxResult {
    /// All global minimizers found within the tie tolerance, deterministic
    /// (lexicographic) order.
    pub minimizers: Vec<Point>,
    pub best_value: f64,
    /// Bound on the improvement a minimizer hiding between grid nodes could
    /// still achieve (local Lipschitz estimate times half the node spacing).
    pub certified_gap: f64,
    /// Positional uncertainty of the reported minimizers.
    pub pos_slack: f64,
}

fn phi_tau(field: &EnergyField, x: &Point, tau: f64, v: &Point) -> f64 {
    let d = v.dist(x);
    d * d / (2.0 * tau) + field.eval(v)
}

/// One global proximal step from `x` at step size `tau`.
///
/// 1-D: exhaustive scan of the ball plus golden-section refinement of every
/// local basin. 2-D/3-D: coarse grid plus multistart descent. All values
/// within the tie tolerance of the best survive, merged at `merge_tol`.
pub fn prox_step(field: &EnergyField, x: &Point, tau: f64, cfg: &SolverConfig) -> Result<ProxResult> {
    if tau <= 0.0 {
        return Err(GradFlowError::input("prox_step: tau must be positive"));
    }
    if let Some(ts) = field.tau_star() {
        if tau >= ts {
            return Err(GradFlowError::input(format!(
                "prox_step: tau = {} must stay below tau_star = {}",
                tau, ts
            )));
        }
    }
    let radius = cfg
        .r_search
        .unwrap_or_else(|| 4.0 * tau * (field.grad(x).norm() + 1.0));
    if field.dim() == 1 {
        prox_step_1d(field, x, tau, radius, cfg)
    } else {
        prox_step_nd(field, x, tau, radius, cfg)
    }
}

/// Gaussian elimination for the tiny Newton systems (dim <= 3).
#[allow(clippy::needless_range_loop)]
fn solve_small(a: &[[f64; 3]; 3], b: &Point, dim: usize) -> Option<Point> {
    let mut m = [[0.0_f64; 4]; 3];
    for i in 0..dim {
        for j in 0..dim {
            m[i][j] = a[i][j];
        }
        m[i][dim] = b[i];
    }
    for col in 0..dim {
        let piv = (col..dim).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        for row in 0..dim {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..=dim {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    let mut out = Point::zeros(dim);
    for i in 0..dim {
        out.set(i, m[i][dim] / m[i][i]);
    }
    Some(out)
}

fn golden_refine(
    mut lo: f64,
    mut hi: f64,
    width: f64,
    mut f: impl FnMut(f64) -> f64,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > width {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    let m = 0.5 * (lo + hi);
    (m, f(m))
}

fn prox_step_1d(
    field: &EnergyField,
    x: &Point,
    tau: f64,
    radius: f64,
    cfg: &SolverConfig,
) -> Result<ProxResult> {
    let phi = |v: f64| phi_tau(field, x, tau, &Point::scalar(v));
    let h = cfg.grid_factor * radius;
    let n = ((2.0 * radius) / h).ceil() as usize + 1;
    let lo = x.x() - radius;
    let vals: Vec<f64> = (0..n)
        .map(|k| phi(lo + 2.0 * radius * k as f64 / (n - 1) as f64))
        .collect();
    let node = |k: usize| lo + 2.0 * radius * k as f64 / (n - 1) as f64;

    let mut lip = 0.0_f64;
    for w in vals.windows(2) {
        lip = lip.max((w[1] - w[0]).abs() / h);
    }

    // refine every interior local basin (endpoints handled by the radius
    // check); the bisection on the proximal slope reaches machine precision
    // where golden sectioning alone would stall at sqrt(ulp)
    let dphi = |v: f64| (v - x.x()) / tau + field.grad(&Point::scalar(v)).x();
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for k in 0..n {
        let left_ok = k == 0 || vals[k] <= vals[k - 1];
        let right_ok = k == n - 1 || vals[k] <= vals[k + 1];
        if left_ok && right_ok {
            let a = node(k.saturating_sub(1));
            let b = node((k + 1).min(n - 1));
            let width = cfg.refine_width * (1.0 + x.x().abs() + radius);
            let (da, db) = (dphi(a), dphi(b));
            let (m, fm) = if da < 0.0 && db > 0.0 {
                let (mut lo, mut hi) = (a, b);
                while hi - lo > 1e-15 * (1.0 + lo.abs()) {
                    let mid = 0.5 * (lo + hi);
                    if dphi(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let m = 0.5 * (lo + hi);
                (m, phi(m))
            } else {
                golden_refine(a, b, width, phi)
            };
            candidates.push((m, fm));
        }
    }
    finish_prox(
        field,
        x,
        tau,
        radius,
        candidates
            .into_iter()
            .map(|(v, f)| (Point::scalar(v), f))
            .collect(),
        lip,
        h,
        cfg,
    )
}

fn prox_step_nd(
    field: &EnergyField,
    x: &Point,
    tau: f64,
    radius: f64,
    cfg: &SolverConfig,
) -> Result<ProxResult> {
    let dim = field.dim();
    let phi = |v: &Point| phi_tau(field, x, tau, v);
    let per_axis = if dim == 2 { 65 } else { 17 };
    let h = 2.0 * radius / (per_axis - 1) as f64;

    // masked grid scan
    let mut nodes: Vec<(Point, f64)> = Vec::new();
    let coords = |k: usize| x[0] - radius + h * k as f64;
    let push = |p: Point, nodes: &mut Vec<(Point, f64)>| {
        if p.dist(x) <= radius {
            let v = phi(&p);
            nodes.push((p, v));
        }
    };
    if dim == 2 {
        for a in 0..per_axis {
            for b in 0..per_axis {
                push(
                    Point::new(&[coords(a), x[1] - radius + h * b as f64]),
                    &mut nodes,
                );
            }
        }
    } else {
        for a in 0..per_axis {
            for b in 0..per_axis {
                for c in 0..per_axis {
                    push(
                        Point::new(&[
                            coords(a),
                            x[1] - radius + h * b as f64,
                            x[2] - radius + h * c as f64,
                        ]),
                        &mut nodes,
                    );
                }
            }
        }
    }
    let mut lip = 0.0_f64;
    for w in nodes.windows(2) {
        let d = w[0].0.dist(&w[1].0);
        if d > 1e-14 && d < 2.0 * h {
            lip = lip.max((w[0].1 - w[1].1).abs() / d);
        }
    }
    nodes.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());

    // spread seeds: best first, then best-of-the-rest at distance > radius/8
    let mut seeds: Vec<Point> = Vec::new();
    for (p, _) in &nodes {
        if seeds.len() >= cfg.seeds {
            break;
        }
        if seeds.iter().all(|s| s.dist(p) > radius / 8.0) {
            seeds.push(*p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    while seeds.len() < cfg.seeds.min(nodes.len()) {
        let p = nodes[rng.gen_range(0..nodes.len())].0;
        seeds.push(p);
    }

    // multistart descent on the proximal slope, then Newton polish
    let prox_grad = |v: &Point| field.grad(v) + (*v - *x) * (1.0 / tau);
    let mut candidates: Vec<(Point, f64)> = Vec::new();
    for s in seeds {
        let mut p = s;
        let mut fp = phi(&p);
        let mut step = h;
        for _ in 0..400 {
            let g = prox_grad(&p);
            let gn = g.norm();
            if gn < 1e-12 || step < 1e-14 * (1.0 + radius) {
                break;
            }
            let mut moved = false;
            let mut s_try = step;
            for _ in 0..40 {
                let q = p + g * (-s_try / gn);
                let fq = phi(&q);
                if fq < fp - 1e-16 * (1.0 + fp.abs()) {
                    p = q;
                    fp = fq;
                    step = s_try * 1.5;
                    moved = true;
                    break;
                }
                s_try *= 0.4;
            }
            if !moved {
                step = s_try;
            }
        }
        // damped Newton on the slope drives smooth basins to machine zero
        for _ in 0..40 {
            let g = prox_grad(&p);
            if g.norm() <= 1e-13 * (1.0 + fp.abs()) {
                break;
            }
            let hess_step = 1e-6 * (1.0 + p.norm());
            let mut hess = [[0.0_f64; 3]; 3];
            for i in 0..dim {
                let mut pp = p;
                let mut pm = p;
                pp.set(i, p[i] + hess_step);
                pm.set(i, p[i] - hess_step);
                let gp = prox_grad(&pp);
                let gm = prox_grad(&pm);
                for j in 0..dim {
                    hess[j][i] = (gp[j] - gm[j]) / (2.0 * hess_step);
                }
            }
            let d = match solve_small(&hess, &g, dim) {
                Some(d) => d,
                None => break,
            };
            let q = p - d;
            if !q.is_finite() || q.dist(&p) > 4.0 * h {
                break;
            }
            let fq = phi(&q);
            if fq <= fp + 1e-14 * (1.0 + fp.abs()) && prox_grad(&q).norm() < prox_grad(&p).norm() {
                p = q;
                fp = phi(&p);
            } else {
                break;
            }
        }
        candidates.push((p, fp));
    }
    finish_prox(field, x, tau, radius, candidates, lip, h, cfg)
}

#[allow(clippy::too_many_arguments)]
fn finish_prox(
    _field: &EnergyField,
    x: &Point,
    _tau: f64,
    radius: f64,
    mut candidates: Vec<(Point, f64)>,
    lip: f64,
    h: f64,
    cfg: &SolverConfig,
) -> Result<ProxResult> {
    candidates.retain(|(_, f)| f.is_finite());
    if candidates.is_empty() {
        return Err(GradFlowError::input("prox_step: no finite candidate values"));
    }
    let best = candidates
        .iter()
        .map(|(_, f)| *f)
        .fold(f64::INFINITY, f64::min);
    let tie_tol = cfg.tie_tol_factor * (1.0 + best.abs());
    candidates.retain(|(_, f)| *f <= best + tie_tol);

    // deterministic order, then merge near-duplicates keeping the best value
    candidates.sort_by(|a, b| {
        a.0.coords()
            .partial_cmp(b.0.coords())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut merged: Vec<(Point, f64)> = Vec::new();
    for (p, f) in candidates {
        match merged.iter_mut().find(|(q, _)| q.dist(&p) <= cfg.merge_tol) {
            Some(slot) => {
                if f < slot.1 {
                    *slot = (p, f);
                }
            }
            None => merged.push((p, f)),
        }
    }

    for (p, _) in &merged {
        if p.dist(x) >= radius - 2.0 * h {
            return Err(GradFlowError::RadiusActive {
                radius,
                hit: p.dist(x),
            });
        }
    }
    Ok(ProxResult {
        minimizers: merged.iter().map(|(p, _)| *p).collect(),
        best_value: best,
        certified_gap: 0.5 * lip * h,
        pos_slack: (cfg.refine_width * (1.0 + x.norm() + radius)).max(1e-14),
    })
}

// --- discrete runs -----------------------------------------------------------

/// One discrete minimizing sequence `U^0 .. U^N` at step `tau`.
#[derive(Clone, Debug)]
pub struct StepSequence {
    pub tau: f64,
    pub values: Vec<Point>,
    /// Dot-separated tie choices, one index per step.
    pub branch_id: String,
}

impl StepSequence {
    pub fn len_steps(&self) -> usize {
        self.values.len() - 1
    }
}

/// Branch selection policy for [`run_mm`].
#[derive(Clone, Copy, Debug)]
pub enum BranchPolicy {
    /// Fork on every tie (capped at `max_branches`, flagged).
    AllBranches,
    /// Always take the lexicographically first minimizer.
    First,
    /// Pick uniformly among ties with the given seed.
    Random(u64),
}

#[derive(Clone, Debug)]
pub struct MmRun {
    pub sequences: Vec<StepSequence>,
    /// True when the branch cap truncated the tie tree.
    pub truncated: bool,
    /// Worst certified solver slack across all steps (positional).
    pub pos_slack: f64,
    pub certified_gap: f64,
}

/// Number of steps spanning `[0, T]`: the least `n` with `n tau >= T`.
pub fn steps_for(tau: f64, t_max: f64) -> usize {
    ((t_max / tau) - 1e-12).ceil().max(1.0) as usize
}

/// Iterates the global proximal step from `u0`, forking on ties.
///
/// When `snap` is given, any minimizer within `merge_tol` of a cloud point is
/// replaced by that point, provided this does not worsen the proximal value
/// beyond the tie tolerance (value-certified snapping keeps confined runs
/// exactly on the cloud).
pub fn run_mm(
    field: &EnergyField,
    u0: &Point,
    tau: f64,
    n_steps: usize,
    policy: BranchPolicy,
    cfg: &SolverConfig,
    snap: Option<&PointCloud>,
) -> Result<MmRun> {
    if n_steps < 1 {
        return Err(GradFlowError::input("run_mm: need at least one step"));
    }
    let mut frontier: Vec<(String, Vec<Point>)> = vec![(String::new(), vec![*u0])];
    let mut truncated = false;
    let mut pos_slack = 0.0_f64;
    let mut certified_gap = 0.0_f64;
    let mut rng = match policy {
        BranchPolicy::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };

    for _step in 0..n_steps {
        let mut next: Vec<(String, Vec<Point>)> = Vec::new();
        for (id, values) in &frontier {
            let x = *values.last().unwrap();
            let mut prox = prox_step(field, &x, tau, cfg)?;
            pos_slack = pos_slack.max(prox.pos_slack);
            certified_gap = certified_gap.max(prox.certified_gap);
            if let Some(cloud) = snap {
                let tie_tol = cfg.tie_tol_factor * (1.0 + prox.best_value.abs());
                for m in prox.minimizers.iter_mut() {
                    let (p, d) = cloud.nearest(m);
                    if d > 0.0
                        && d <= cfg.merge_tol
                        && phi_tau(field, &x, tau, &p) <= prox.best_value + tie_tol
                    {
                        *m = p;
                    }
                }
            }
            let chosen: Vec<(usize, Point)> = match policy {
                BranchPolicy::AllBranches => prox.minimizers.iter().copied().enumerate().collect(),
                BranchPolicy::First => vec![(0, prox.minimizers[0])],
                BranchPolicy::Random(_) => {
                    let k = rng
                        .as_mut()
                        .map(|r| r.gen_range(0..prox.minimizers.len()))
                        .unwrap_or(0);
                    vec![(k, prox.minimizers[k])]
                }
            };
            for (k, p) in chosen {
                if next.len() >= cfg.max_branches {
                    truncated = true;
                    break;
                }
                let mut id2 = id.clone();
                if !id2.is_empty() {
                    id2.push('.');
                }
                id2.push_str(&k.to_string());
                let mut v2 = values.clone();
                v2.push(p);
                next.push((id2, v2));
            }
        }
        next.sort_by(|a, b| a.0.cmp(&b.0));
        frontier = next;
    }

    Ok(MmRun {
        sequences: frontier
            .into_iter()
            .map(|(branch_id, values)| StepSequence {
                tau,
                values,
                branch_id,
            })
            .collect(),
        truncated,
        pos_slack,
        certified_gap,
    })
}

/// Piecewise-constant interpolation of a minimizing sequence: value on
/// `((n-1) tau, n tau]` is `U^n`, value at 0 is `U^0`.
pub fn interpolate_pc(seq: &StepSequence) -> Curve {
    Curve::piecewise_constant(seq.tau, seq.values.clone())
}

/// Worst Euler residual `max_n |(U^n - U^{n-1})/tau + grad phi(U^n)|`,
/// measured against the unperturbed energy.
pub fn euler_residual(field: &EnergyField, seq: &StepSequence) -> f64 {
    let tau = seq.tau;
    seq.values
        .windows(2)
        .map(|w| ((w[1] - w[0]) * (1.0 / tau) + field.grad(&w[1])).norm())
        .fold(0.0, f64::max)
}

// --- convergence studies -------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ConvergenceRow {
    pub tau: f64,
    pub branch_id: String,
    pub d_t: f64,
    pub d_t_set: f64,
    /// Euler residual of the branch against the step size's own energy.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// `(tau, sup over branches of d_T)` per step size.
    pub set_distances: Vec<(f64, f64)>,
    /// Least-squares slope of `log d` against `log tau`.
    pub fitted_order: f64,
    pub truncated: bool,
    /// Worst positional solver slack across all runs.
    pub pos_slack: f64,
}

/// Runs the scheme for every step size, measures each branch against the
/// reference on `[0, t_max]`, and fits the convergence order.
pub fn convergence_study(
    field_for_tau: impl Fn(f64) -> EnergyField,
    u0: &Point,
    taus: &[f64],
    t_max: f64,
    reference: &Curve,
    cfg: &SolverConfig,
) -> Result<ConvergenceTable> {
    if reference.horizon() < t_max - 1e-9 {
        return Err(GradFlowError::Horizon {
            needed: t_max,
            have: reference.horizon(),
        });
    }
    let mut rows = Vec::new();
    let mut set_distances = Vec::new();
    let mut truncated = false;
    let mut pos_slack = 0.0_f64;
    for &tau in taus {
        let field = field_for_tau(tau);
        let run = run_mm(
            &field,
            u0,
            tau,
            steps_for(tau, t_max),
            BranchPolicy::AllBranches,
            cfg,
            None,
        )?;
        truncated |= run.truncated;
        pos_slack = pos_slack.max(run.pos_slack);
        let curves: Vec<Curve> = run.sequences.iter().map(interpolate_pc).collect();
        let d_set = set_distance(reference, &curves, Horizon::Finite(t_max))?;
        for (seq, curve) in run.sequences.iter().zip(&curves) {
            rows.push(ConvergenceRow {
                tau,
                branch_id: seq.branch_id.clone(),
                d_t: metric_dt(curve, reference, t_max)?,
                d_t_set: d_set,
                residual: euler_residual(&field, seq),
            });
        }
        set_distances.push((tau, d_set));
    }
    let fitted_order = fit_order(&set_distances);
    Ok(ConvergenceTable {
        rows,
        set_distances,
        fitted_order,
        truncated,
        pos_slack,
    })
}

/// Least-squares slope of `ln d` vs `ln tau` over positive entries.
pub fn fit_order(pairs: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(t, d)| *t > 0.0 && *d > 0.0)
        .map(|(t, d)| (t.ln(), d.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
