//! Checks against independent oracles: brute-force grids, dense SVD,
//! closed-form recursions and hand-derived examples.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proxcert_core::linalg::{dist_weighted_finite, power_iteration_norm, psd_check};
use proxcert_core::problems::{
    forward_difference, instance_to_text, make_fixture, make_lasso_instance, make_tv_instance, parse_instance,
    FixtureId, Instance, LassoMode,
};
use proxcert_core::regularity::{check_psm, SamplingOptions};
use proxcert_core::setvalued::{PiecewiseLinear, ProxKind};
use proxcert_core::solvers::{
    fit_rate, pdhgm_step, prox_point_step, run_with_monitor, MonitorOptions, ScheduleState, StepSchedule,
};
use proxcert_core::{DenseMatrix, Method, PrimalDualVector, ProxFunction, SaddleProblem, StructuredOperator};

fn pd(x: &[f64], y: &[f64]) -> PrimalDualVector<f64> {
    PrimalDualVector::new(x.to_vec(), y.to_vec()).unwrap()
}

#[test]
fn weighted_distance_examples() {
    let a = [pd(&[-1.0], &[]), pd(&[1.0], &[])];
    let (d, _) = dist_weighted_finite(&pd(&[0.5], &[]), &a, &StructuredOperator::identity(1, 0)).unwrap();
    assert!((d - 0.5).abs() < 1e-15);
    let dy: Vec<_> = [1.0, 0.5, 0.25, 0.125, 0.0].iter().map(|&v| pd(&[v], &[])).collect();
    let (d, i) = dist_weighted_finite(&pd(&[0.75], &[]), &dy, &StructuredOperator::identity(1, 0)).unwrap();
    assert!((d - 0.25).abs() < 1e-15 && (i == 0 || i == 1));
    let (d, _) = dist_weighted_finite(&pd(&[0.3], &[]), &dy, &StructuredOperator::zero(1, 0)).unwrap();
    assert_eq!(d, 0.0);
}

#[test]
fn psd_examples() {
    let k = Arc::new(DenseMatrix::from_rows(&[vec![1.0]]).unwrap());
    for (pt, min) in [(1.5f64, -0.5f64), (0.5, 0.5)] {
        let op = StructuredOperator::new(1.0, -pt, -pt, 1.0, Some(k.clone()), 1, 1).unwrap();
        let r = psd_check(&op, 1e-12);
        assert!((r.min_eigenvalue - min).abs() < 1e-12);
        assert_eq!(r.is_psd, min >= 0.0);
        assert!((op.min_eigenvalue_closed_form(1.0) - min).abs() < 1e-12);
    }
}

#[test]
fn power_iteration_matches_dense_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for &(m, n) in &[(1, 1), (3, 5), (15, 20), (20, 15), (37, 29), (50, 50)] {
        for _ in 0..3 {
            let data: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let k = DenseMatrix::new(m, n, data.clone()).unwrap();
            let svd = DMatrix::from_row_slice(m, n, &data).singular_values();
            let top = svd.iter().cloned().fold(0.0, f64::max);
            let est = k.spectral_norm();
            assert!((est - top).abs() <= 1e-8 * top.max(1.0), "{}x{}: {} vs {}", m, n, est, top);
        }
    }
    let d = forward_difference::<f64>(50);
    let kd = power_iteration_norm(&d, 1e-10, 10_000);
    assert!(kd * kd <= 4.0 + 1e-12);
}

/// `argmin_t f(t) + (t − x)²/(2τ)` over a grid of width 1e-4.
fn grid_prox(f: &ProxFunction<f64>, tau: f64, x: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut t = -6.0;
    while t <= 6.0 {
        let v = f.value(&[t]) + (t - x) * (t - x) / (2.0 * tau);
        if v < best.0 {
            best = (v, t);
        }
        t += 1e-4;
    }
    best.1
}

#[test]
fn prox_matches_grid_oracle() {
    let fns = vec![
        ProxFunction::l1(0.7, 1),
        ProxFunction::sq_dist_point(vec![0.4]),
        ProxFunction::ball(1.2, 1),
        ProxFunction::new(ProxKind::Box { lo: vec![-0.5], hi: vec![2.0] }, 1).unwrap(),
        ProxFunction::zero(1),
        ProxFunction::new(
            ProxKind::SeparableCustom {
                pieces: vec![PiecewiseLinear::new(vec![-1.0, 0.5], vec![-2.0, 0.25, 1.5], 0.0).unwrap()],
            },
            1,
        )
        .unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for f in &fns {
        for _ in 0..20 {
            let x = rng.gen_range(-3.0..3.0);
            let tau = rng.gen_range(0.1..2.0);
            let p = f.prox(tau, &[x]).unwrap()[0];
            let g = grid_prox(f, tau, x);
            assert!((p - g).abs() <= 2e-4, "{:?} tau={} x={}: {} vs {}", f.kind, tau, x, p, g);
        }
    }
}

#[test]
fn lasso_one_dimensional_kkt() {
    let k = Arc::new(DenseMatrix::from_rows(&[vec![1.0]]).unwrap());
    let p = SaddleProblem::new(ProxFunction::l1(1.0, 1), ProxFunction::sq_dist_point(vec![0.8]), k).unwrap();
    assert!(p.optimality_residual(&pd(&[0.0], &[0.8])).unwrap() <= 1e-12);
    assert!(p.optimality_residual(&pd(&[0.1], &[0.8])).unwrap() > 1e-3);
    let z0 = SaddleProblem::new(
        ProxFunction::l1(1.0, 1),
        ProxFunction::sq_dist_point(vec![0.0]),
        Arc::new(DenseMatrix::from_rows(&[vec![1.0]]).unwrap()),
    )
    .unwrap();
    assert!(z0.optimality_residual(&pd(&[0.0], &[0.0])).unwrap() <= 1e-12);
}

#[test]
fn lasso_generator_invariants() {
    for seed in 0..5 {
        let l = make_lasso_instance::<f64>(20, 15, 1.0, seed, LassoMode::StrictlyComplementary).unwrap();
        assert!(l.strict_margin >= 0.1 && (l.strict_margin - 0.2).abs() < 1e-12);
        let p = l.problem().unwrap();
        assert!(p.optimality_residual(&pd(&vec![0.0; 20], &l.z)).unwrap() <= 1e-12);
        let b = make_lasso_instance::<f64>(20, 15, 1.0, seed, LassoMode::Boundary).unwrap();
        assert!(b.strict_margin.abs() < 1e-12);
    }
}

#[test]
fn tv_reference_is_a_prox_fixed_point() {
    for seed in 0..3 {
        let t = make_tv_instance::<f64>(30, 0.1, seed).unwrap();
        assert!(t.flatness > 1e-6);
        let p = t.problem().unwrap();
        let tau = 0.3;
        let v: Vec<f64> = t.x_ref.iter().zip(t.k.matvec_t(&t.y_ref)).map(|(&x, g)| x - tau * g).collect();
        let fx = p.g.prox(tau, &v).unwrap();
        let gap = fx.iter().zip(&t.x_ref).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        assert!(gap <= 1e-8);
        assert!(p.optimality_residual(&pd(&t.x_ref, &t.y_ref)).unwrap() <= 1e-10);
    }
    assert!(matches!(
        proxcert_core::problems::make_tv_instance::<f64>(2, 0.1, 0),
        Err(proxcert_core::ProblemError::InvalidParameter(_))
    ));
}

#[test]
fn instance_text_round_trips_bit_exactly() {
    let l = make_lasso_instance::<f64>(7, 5, 1.3, 11, LassoMode::StrictlyComplementary).unwrap();
    let text = instance_to_text(&Instance::Lasso(l.clone()));
    assert!(text.starts_with("lasso 7 5 "));
    match parse_instance::<f64>(&text).unwrap() {
        Instance::Lasso(b) => {
            assert_eq!(b.k, l.k);
            assert_eq!(b.z.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), l.z.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(b.alpha.to_bits(), l.alpha.to_bits());
        }
        _ => panic!("wrong kind"),
    }
    assert_eq!(instance_to_text(&parse_instance::<f64>(&text).unwrap()), text);
    let t = make_tv_instance::<f64>(8, 0.1, 2).unwrap();
    let text = instance_to_text(&Instance::Tv(t.clone()));
    assert!(text.starts_with("tv1d 8 "));
    assert_eq!(parse_instance::<f64>(&text).unwrap(), Instance::Tv(t));
    assert!(parse_instance::<f64>("lasso 2 1 1.0\n1 2\n").is_err());
    assert!(parse_instance::<f64>("ridge 2 1 1.0\n").is_err());
}

#[test]
fn orthant_resolvent_matches_grid() {
    let f = make_fixture::<f64>(&FixtureId::OrthantBilinear).unwrap();
    let res = f.resolvent.unwrap();
    let tau = 0.5;
    let u = (0.5, 0.5);
    let v = res.apply(tau, &pd(&[u.0], &[u.1])).unwrap();
    // 0 ∈ τH(v) + v − u ⇔ v minimises τ v₁v₂ + ½‖v − u‖² on the orthant
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=8000 {
        let a = i as f64 * 1e-4;
        for j in 0..=8000 {
            let b = j as f64 * 1e-4;
            let val = tau * a * b + 0.5 * ((a - u.0).powi(2) + (b - u.1).powi(2));
            if val < best.0 {
                best = (val, a, b);
            }
        }
    }
    assert!((v.get(0) - best.1).abs() <= 2e-4 && (v.get(1) - best.2).abs() <= 2e-4);
    assert!((v.get(0) - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn prox_point_rate_on_dist_pm1() {
    let f = make_fixture::<f64>(&FixtureId::DistPm1).unwrap();
    let pp = f.prox_point.clone().unwrap();
    let method = Method::ProxPoint { map: f.map.clone(), resolvent: pp.resolvent, tau: pp.tau, xi: pp.xi };
    let opts = MonitorOptions { max_iter: 200, stop_tol: 0.0, divergence_factor: 1e6 };
    let tr = run_with_monitor(&method, &pp.u0, &f.solution, &opts, None).unwrap();
    let d0 = tr.records[0].dist2_full;
    for r in &tr.records {
        let bound = (1.0 + pp.xi).powi(-(r.iter as i32)) * d0 * (1.0 + 1e-6);
        assert!(r.dist2_full <= bound, "iter {}: {} vs {}", r.iter, r.dist2_full, bound);
        let growth = 2.9f64.powi(r.iter as i32);
        assert!((r.phi - growth).abs() <= 1e-12 * growth, "phi at {}: {} vs {}", r.iter, r.phi, growth);
    }
}

#[test]
fn pdhgm_with_zero_coupling_is_two_prox_point_runs() {
    let k = Arc::new(DenseMatrix::zeros(2, 3));
    let g = ProxFunction::l1(0.5, 3);
    let fs = ProxFunction::sq_dist_point(vec![1.0, -2.0]);
    let p = SaddleProblem::new(g.clone(), fs.clone(), k).unwrap();
    let (mut x, mut y) = (vec![1.0, -0.2, 3.0], vec![0.5, 0.5]);
    let (mut xp, mut yp) = (x.clone(), y.clone());
    for _ in 0..10 {
        let (a, b) = pdhgm_step(&p, 0.3, 0.7, 1.0, &x, &y).unwrap();
        x = a;
        y = b;
        xp = g.prox(0.3, &xp).unwrap();
        yp = fs.prox(0.7, &yp).unwrap();
        assert_eq!(x, xp);
        assert_eq!(y, yp);
    }
    let pp = prox_point_step(
        &proxcert_core::solvers::Resolvent::from_prox(ProxFunction::l1(1.0, 1)),
        0.5,
        &pd(&[2.0], &[]),
    )
    .unwrap();
    assert_eq!(pp.get(0), 1.5);
}

#[test]
fn schedule_growth_laws() {
    let kn = 2.0;
    // linear: φ_N = θᴺφ₀ by the same recursion
    let s = StepSchedule::linear(0.2, 0.2, 0.5, 1.0, 0.5).with_phi0(1.5);
    let mut st = ScheduleState::new(s, kn).unwrap();
    let theta = s.theta();
    let mut expect = 1.5;
    for n in 0..=400 {
        assert_eq!(st.phi(n), expect, "N = {}", n);
        expect *= theta;
    }
    // accelerated: φ_N ~ N²
    let a = StepSchedule::accelerated(0.2, 0.2, 1.0, 0.5);
    let mut st = ScheduleState::new(a, kn).unwrap();
    let ratios: Vec<f64> = (50..=500).map(|n| st.phi(n) / (n * n) as f64).collect();
    assert!(ratios.iter().all(|&r| r > 0.0));
    for w in ratios[50..].windows(2) {
        assert!(w[1] >= w[0] * (1.0 - 0.01));
    }
    // constant: φ_N = φ₀ and the coupling condition
    let c = StepSchedule::constant(0.4, 0.4, 0.5);
    let mut st = ScheduleState::new(c, kn).unwrap();
    assert_eq!(st.phi(300), 1.0);
    assert!((1.0 - c.delta) * c.tau0 * c.sigma0 * kn * kn <= 1.0);
    for i in 0..50 {
        assert!(st.step_condition_slacks(i, kn).iter().all(|&v| v >= -1e-12));
    }
}

#[test]
fn lasso_linear_schedule_rate() {
    let l = make_lasso_instance::<f64>(20, 15, 1.0, 2, LassoMode::StrictlyComplementary).unwrap();
    let p = l.problem().unwrap();
    let kn = p.k.spectral_norm();
    let sigma = 0.01;
    let s = StepSchedule::linear(0.5 / (sigma * kn * kn), sigma, 0.1, 1.0, 0.5);
    let u0 = pd(&[0.1; 20], &[0.0; 15]);
    let opts = MonitorOptions { max_iter: 600, stop_tol: 0.0, divergence_factor: 1e6 };
    let tr = run_with_monitor(&Method::Pdhgm { problem: p, schedule: s }, &u0, &l.solution(), &opts, None).unwrap();
    let fit = fit_rate(&tr, 200).unwrap();
    assert!(fit.rate < 1.0 / s.theta() + 0.05 && fit.r2 >= 0.99, "{}", fit.summary_line());
    assert!(tr.records.iter().all(|r| r.rate_bound_slack >= -1e-8));
}

#[test]
fn certifier_is_deterministic() {
    let f = make_fixture::<f64>(&FixtureId::DistDyadic { levels: 20 }).unwrap();
    let q = f
        .query(StructuredOperator::scalar(0.5, 1, 0), StructuredOperator::identity(1, 0), StructuredOperator::identity(1, 0))
        .unwrap();
    let o1 = SamplingOptions { seed: 9, workers: 1, ..SamplingOptions::default() };
    let o4 = SamplingOptions { workers: 4, ..o1 };
    let a = check_psm(&q, &o1).to_text();
    assert_eq!(a, check_psm(&q, &o1).to_text());
    assert_eq!(a, check_psm(&q, &o4).to_text());
}
