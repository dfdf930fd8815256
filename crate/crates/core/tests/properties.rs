//! Property-level invariants: metric laws, distance-function regularity,
//! envelope domination, interpolation conventions, and perturbation norms.

use gradflow_core::catalog::{cusp_stay, exp_flow, staircase_solution};
use gradflow_core::energy::{
    dist_to_cloud, estimate_modulus, probe_grid, EnergyField, ModulusEstimate, PointCloud,
};
use gradflow_core::flow::{
    energy_identity_residual, energy_trace, integrate_flow, metric_dinf, metric_dt, set_distance,
    Curve, Horizon,
};
use gradflow_core::mm::{interpolate_pc, StepSequence};
use gradflow_core::penalize::make_penalized;
use gradflow_core::point::Point;
use gradflow_core::reparam::TimeChange;
use proptest::prelude::*;

fn small_real() -> impl Strategy<Value = f64> {
    (-100i32..=100).prop_map(|k| k as f64 / 20.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_function_is_one_lipschitz(
        pts in prop::collection::vec(small_real(), 1..12),
        x in small_real(),
        y in small_real(),
    ) {
        let cloud = PointCloud::from_scalars(pts).unwrap();
        let dx = dist_to_cloud(&cloud, &Point::scalar(x)).unwrap();
        let dy = dist_to_cloud(&cloud, &Point::scalar(y)).unwrap();
        prop_assert!((dx - dy).abs() <= (x - y).abs() + 1e-12);
    }

    #[test]
    fn metric_sandwich(
        amp_u in 0.0f64..2.0,
        amp_v in 0.0f64..2.0,
        freq in 0.5f64..4.0,
        t_max in 0.5f64..4.0,
    ) {
        // weighted distance on [0, T] sits between (1+T)^{-1} d_T and
        // max(d_T, (1+T)^{-1})
        let u = Curve::from_scalar_fn(|t| amp_u * (freq * t).sin(), t_max, 257);
        let v = Curve::from_scalar_fn(|t| amp_v * (freq * t).cos(), t_max, 257);
        let dt = metric_dt(&u, &v, t_max).unwrap();
        let di = metric_dinf(&u, &v);
        prop_assert!(dt / (1.0 + t_max) <= di.value + 1e-12);
        prop_assert!(di.value <= dt.max(1.0 / (1.0 + t_max)) + 1e-12);
        prop_assert!((di.tail_bound - 1.0 / (1.0 + t_max)).abs() < 1e-12);
    }

    #[test]
    fn pc_interpolation_left_open(
        vals in prop::collection::vec(small_real(), 2..8),
        tau in 0.05f64..2.0,
    ) {
        let seq = StepSequence {
            tau,
            values: vals.iter().map(|&v| Point::scalar(v)).collect(),
            branch_id: "0".into(),
        };
        let c = interpolate_pc(&seq);
        prop_assert_eq!(c.eval(0.0).x(), vals[0]);
        for (n, val) in vals.iter().enumerate().skip(1) {
            // interior of ((n-1) tau, n tau] and its right endpoint
            prop_assert_eq!(c.eval((n as f64 - 0.5) * tau).x(), *val);
            prop_assert_eq!(c.eval(n as f64 * tau).x(), *val);
        }
    }

    #[test]
    fn modulus_envelope_dominates_and_is_concave(
        raw in prop::collection::vec(0.0f64..1.0, 1..10),
    ) {
        let radii: Vec<f64> = (1..=raw.len()).map(|k| k as f64 / raw.len() as f64).collect();
        let om = ModulusEstimate::from_knots(radii.clone(), raw.clone()).unwrap();
        prop_assert_eq!(om.eval(0.0), 0.0);
        for (r, v) in radii.iter().zip(&raw) {
            prop_assert!(om.eval(*r) >= v - 1e-12);
            prop_assert!(om.eval(*r) <= 1.0 + 1e-12);
        }
        // concavity: midpoint value above chord of neighbors
        for w in radii.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            prop_assert!(om.eval(mid) >= 0.5 * (om.eval(w[0]) + om.eval(w[1])) - 1e-12);
        }
    }

    #[test]
    fn penalization_lip_seminorm_is_lambda(
        pts in prop::collection::vec(small_real(), 1..6),
        lambda in 0.01f64..0.24,
    ) {
        let base = EnergyField::quadratic(1);
        let cloud = PointCloud::from_scalars(pts).unwrap();
        let pen = make_penalized(&base, &cloud, lambda).unwrap();
        let diff = |x: f64| {
            let p = Point::scalar(x);
            pen.as_field().eval(&p) - base.eval(&p)
        };
        let mut worst: f64 = 0.0;
        let mut prev = diff(-8.0);
        for k in 1..=320 {
            let x = -8.0 + 0.05 * k as f64;
            let d = diff(x);
            worst = worst.max((d - prev).abs() / 0.05);
            prev = d;
        }
        prop_assert!(worst <= lambda + 1e-9);
        // attained along a ray leaving the farthest sample
        let attained = (diff(100.0) - diff(99.0)).abs();
        prop_assert!((attained - lambda).abs() < 1e-9);
    }

    #[test]
    fn time_change_composition_is_admissible(
        d1 in prop::collection::vec(0.0f64..0.5, 3),
        scale in 0.1f64..0.9,
    ) {
        // z10 o z21 stays increasing and 1-Lipschitz and still witnesses the
        // order between the outer curves (up to the sampling of z10)
        let sol2 = staircase_solution(3, &d1);
        let d0: Vec<f64> = d1.iter().map(|d| d * scale).collect();
        let base = staircase_solution(3, &[0.0, 0.0, 0.0]);
        let grid: Vec<f64> = (0..=2000).map(|k| 5.0 * k as f64 / 2000.0).collect();
        let z21 = exact_excision(&d1, &d0, &grid);
        let z10 = exact_excision(&d0, &[0.0, 0.0, 0.0], &grid);
        z21.validate(1e-9).unwrap();
        z10.validate(1e-9).unwrap();
        let comp = z21.compose(&z10);
        comp.validate(1e-9).unwrap();
        for (t, z) in comp.grid.iter().zip(&comp.values) {
            prop_assert!((sol2.value(*t) - base.value(*z)).abs() < 1e-2);
        }
    }
}

/// Time change mapping the more-paused staircase onto the less-paused one:
/// unit slope while both move or both dwell, flat while only the first
/// dwells. The dwell before crossing step `i` starts at
/// `S_i = sum_{j<i} (d_more[j] + 1)`; the excised amount at that junction is
/// the dwell time consumed beyond `d_less[i]`.
fn exact_excision(d_more: &[f64], d_less: &[f64], grid: &[f64]) -> TimeChange {
    let values = grid
        .iter()
        .map(|&t| {
            let mut excised = 0.0;
            let mut start = 0.0;
            for (dm, dl) in d_more.iter().zip(d_less) {
                let consumed = (t - start).clamp(0.0, *dm);
                excised += (consumed - dl).max(0.0);
                start += dm + 1.0;
            }
            t - excised
        })
        .collect();
    TimeChange {
        grid: grid.to_vec(),
        values,
    }
}

#[test]
fn set_distance_conventions() {
    let v = exp_flow(1.0, 1.0, 101);
    assert!(set_distance(&v, &[], Horizon::Finite(1.0))
        .unwrap()
        .is_infinite());
    assert!(set_distance(&v, &[], Horizon::Infinite)
        .unwrap()
        .is_infinite());
    assert_eq!(
        set_distance(&v, std::slice::from_ref(&v), Horizon::Finite(1.0)).unwrap(),
        0.0
    );
}

#[test]
fn energy_traces_dissipate_for_catalog_energies() {
    let cases: Vec<(EnergyField, Point)> = vec![
        (EnergyField::quadratic(1), Point::scalar(1.0)),
        (EnergyField::quadratic(2), Point::new(&[1.0, -0.7])),
        (EnergyField::aniso2d(), Point::new(&[1.0, 1.0])),
        (EnergyField::linear(-1.0), Point::scalar(0.0)),
        (EnergyField::staircase(2), Point::scalar(0.3)),
    ];
    let tol = 1e-9;
    for (field, u0) in cases {
        let res = integrate_flow(&field, &u0, 2.0, tol).unwrap();
        for w in res.energy_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} trace rose", field.label());
        }
        let resid = energy_identity_residual(&field, &res.curve).unwrap();
        assert!(
            resid <= 100.0 * tol.max(1e-8),
            "{}: identity residual {}",
            field.label(),
            resid
        );
    }
}

#[test]
fn hoelder_bound_from_quadratic_lower_bound() {
    // |u(t2) - u(t1)| <= sqrt(C0 (1 + e^{2T/tau_*})) |t2 - t1|^{1/2}
    let cases: Vec<(EnergyField, Point)> = vec![
        (EnergyField::quadratic(1), Point::scalar(2.0)),
        (EnergyField::cusp(), Point::scalar(1.0)),
        (EnergyField::staircase(3), Point::scalar(0.1)),
    ];
    let t_max = 2.0;
    for (field, u0) in cases {
        let (ts, ps) = (field.tau_star().unwrap(), field.phi_star().unwrap());
        let c0 = field.eval(&u0) + u0.norm().powi(2) / ts + ps;
        let factor = (c0 * (1.0 + (2.0 * t_max / ts).exp())).sqrt();
        let res = integrate_flow(&field, &u0, t_max, 1e-9).unwrap();
        let curve = res.curve;
        for i in 0..40 {
            for j in (i + 1)..40 {
                let (t1, t2) = (t_max * i as f64 / 40.0, t_max * j as f64 / 40.0);
                let lhs = curve.eval(t2).dist(&curve.eval(t1));
                assert!(
                    lhs <= factor * (t2 - t1).sqrt() + 1e-9,
                    "{}: pair ({}, {})",
                    field.label(),
                    t1,
                    t2
                );
            }
        }
    }
}

#[test]
fn modulus_grows_with_cloud_on_grid_estimates() {
    let field = EnergyField::cusp();
    let small = PointCloud::from_scalars(vec![0.8, 1.0]).unwrap();
    let big = PointCloud::from_scalars(vec![0.0, 0.4, 0.8, 1.0]).unwrap();
    let probes = probe_grid(&big, 1.0, 3001);
    let radii = [0.05, 0.1, 0.2, 0.5, 1.0];
    let om_small = estimate_modulus(&field, &small, &probes, &radii).unwrap();
    let om_big = estimate_modulus(&field, &big, &probes, &radii).unwrap();
    for r in [0.02, 0.07, 0.15, 0.4, 0.9] {
        assert!(om_big.eval(r) >= om_small.eval(r) - 1e-12);
    }
}

#[test]
fn dissipation_trace_of_cusp_branch_is_monotone() {
    let field = EnergyField::cusp();
    let branch = cusp_stay(1.0, 2.0, 2001);
    let trace = energy_trace(&field, &branch);
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn prox_matches_brute_force_argmin_on_random_instances() {
    // 50 random (x, tau): the global proximal step agrees with an
    // independent exhaustive scan of the whole ball up to the certified gap
    use gradflow_core::mm::{prox_step, SolverConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let field = EnergyField::from_fns(
        1,
        "wiggle",
        |p| {
            let x = p.x();
            0.1 * x * x + (3.0 * x).sin() * 0.4 + 0.2 * (7.0 * x + 1.0).cos()
        },
        |p| {
            let x = p.x();
            Point::scalar(0.2 * x + 1.2 * (3.0 * x).cos() - 1.4 * (7.0 * x + 1.0).sin())
        },
    )
    .with_quadratic_bound(2.0, 4.0);
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let x = rng.gen_range(-3.0..3.0);
        let tau = rng.gen_range(0.02..0.8);
        let res = prox_step(&field, &Point::scalar(x), tau, &cfg).unwrap();
        // independent oracle: dense scan of the same ball
        let radius = 4.0 * tau * (field.grad(&Point::scalar(x)).norm() + 1.0);
        let m = 400_001;
        let mut brute = f64::INFINITY;
        for k in 0..m {
            let v = x - radius + 2.0 * radius * k as f64 / (m - 1) as f64;
            let val = (v - x) * (v - x) / (2.0 * tau) + field.eval(&Point::scalar(v));
            brute = brute.min(val);
        }
        assert!(
            res.best_value <= brute + 1e-12,
            "solver missed value at x={}, tau={}: {} vs {}",
            x,
            tau,
            res.best_value,
            brute
        );
        assert!(
            brute <= res.best_value + res.certified_gap + 1e-9,
            "gap violated at x={}, tau={}",
            x,
            tau
        );
    }
}

#[test]
fn lipschitz_energy_step_bound() {
    // |U^n - U^{n-1}| <= (Lip[phi] + ell) tau for Lipschitz energies, and the
    // piecewise-linear interpolant stays within that of the step curve
    use gradflow_core::mm::{run_mm, BranchPolicy, SolverConfig};
    let field = EnergyField::staircase(2);
    let lip = field.lip_bound().unwrap();
    let cfg = SolverConfig::default();
    for tau in [0.2, 0.1, 0.05] {
        let run = run_mm(
            &field,
            &Point::scalar(0.2),
            tau,
            (2.0_f64 / tau) as usize,
            BranchPolicy::First,
            &cfg,
            None,
        )
        .unwrap();
        let max_step = run.sequences[0]
            .values
            .windows(2)
            .map(|w| w[1].dist(&w[0]))
            .fold(0.0, f64::max);
        assert!(
            max_step <= (lip + 1e-6) * tau,
            "tau {}: step {} vs {}",
            tau,
            max_step,
            lip * tau
        );
    }
}

#[test]
fn minimalize_output_decreases_strictly_and_keeps_range() {
    use gradflow_core::catalog::cusp_paused;
    use gradflow_core::reparam::{minimalize, ReparamConfig};
    let field = EnergyField::cusp();
    let cfg = ReparamConfig::default();
    let u = cusp_paused(1.0, 0.5, 2.5, 20_001);
    let w = minimalize(&field, &u, cfg.crit_tol, &cfg).unwrap();
    // strict decrease wherever the gradient is above the threshold
    let trace = energy_trace(&field, &w);
    for (i, win) in trace.windows(2).enumerate() {
        let g = field.grad_norm(&w.values()[i]);
        if g > 1e-3 {
            assert!(win[1] - win[0] < -1e-12, "no strict drop at index {}", i);
        }
    }
    // range preservation: one-sided Hausdorff both ways at grid scale
    let mut uv: Vec<f64> = u.values().iter().map(|p| p.x()).collect();
    uv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for p in w.values() {
        let x = p.x();
        let i = uv.partition_point(|&s| s < x);
        let mut best = f64::INFINITY;
        if i < uv.len() {
            best = best.min((uv[i] - x).abs());
        }
        if i > 0 {
            best = best.min((uv[i - 1] - x).abs());
        }
        assert!(best <= 1e-3, "value {} left the input range by {}", x, best);
    }
}

#[test]
fn smoothed_flow_has_negligible_defect() {
    use gradflow_core::catalog::cusp_paused;
    use gradflow_core::onedim::{decompose_derivative, pseudo_inverse, smooth_energy};
    use gradflow_core::reparam::minimality_defect;
    let u = cusp_paused(1.0, 0.5, 2.5, 20_001).transform_values(|p| *p * -1.0);
    let f = |x: f64| 2.0 * x.abs().sqrt();
    let pi = pseudo_inverse(&u, 4001).unwrap();
    let d = decompose_derivative(&pi, f, 1e-7).unwrap();
    let field = EnergyField::cusp();
    for eps in [0.1, 0.05] {
        let sm = smooth_energy(&d, f, eps).unwrap();
        // the smoothed flow crosses the critical point without dwelling
        let defect = minimality_defect(&field, &sm.u_eps, 1e-7);
        assert!(defect <= 1e-3, "eps {}: defect {}", eps, defect);
    }
}

#[test]
fn integrator_reports_blowup_as_underflow() {
    // u' = u^3 from 1 escapes at t = 1/2; the step size collapses there
    let field = EnergyField::from_fns(
        1,
        "quartic-well",
        |p| -0.25 * p.x().powi(4),
        |p| Point::scalar(-p.x().powi(3)),
    );
    match integrate_flow(&field, &Point::scalar(1.0), 1.0, 1e-8) {
        Err(gradflow_core::GradFlowError::Integration { last_t }) => {
            assert!((last_t - 0.5).abs() < 0.05, "blowup located at {}", last_t);
        }
        other => panic!("expected an integration error, got {:?}", other.map(|r| r.t_star)),
    }
}

#[test]
fn catalog_quadratic_bounds_hold_on_grids() {
    use gradflow_core::energy::{check_quadratic_bound, AxisBox};
    let cases = [
        EnergyField::quadratic(1),
        EnergyField::cusp(),
        EnergyField::linear(-1.0),
        EnergyField::constant(1, -2.0),
        EnergyField::staircase(3),
    ];
    for field in cases {
        let (ts, ps) = (field.tau_star().unwrap(), field.phi_star().unwrap());
        let bx = AxisBox::scalar(-20.0, 20.0);
        let viol = check_quadratic_bound(&field, ts, ps, &bx, 4001).unwrap();
        assert!(viol.is_empty(), "{}: {:?}", field.label(), viol.first());
    }
}

#[test]
fn cantor_dwell_measure_recovered_from_pseudo_inverse() {
    // the non-minimal flow's singular part carries the inserted measure:
    // total mass matches (minus the invisible dwell at the range top) and no
    // single element exceeds the stage weight scale
    use gradflow_core::cantor::{build_cantor_model, cantor_flows};
    use gradflow_core::onedim::{decompose_derivative, pseudo_inverse};
    let depth = 6;
    let model = build_cantor_model(depth).unwrap();
    let flows = cantor_flows(&model, 48_000).unwrap();
    let pi = pseudo_inverse(&flows.w, 6001).unwrap();
    let d = decompose_derivative(&pi, |x| model.g(x), 1e-7).unwrap();
    let visible = model.mu_mass() - 0.5_f64.powi(depth as i32);
    assert!(
        (d.measure_mass() - visible).abs() <= 0.03,
        "mass {} vs visible {}",
        d.measure_mass(),
        visible
    );
    let max_atom = d.atoms.iter().map(|a| a.1).fold(0.0, f64::max);
    assert!(max_atom <= 0.05, "atom of weight {}", max_atom);
}
