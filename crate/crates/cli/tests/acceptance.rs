//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line (written to
//! the real stdout so it shows without `--nocapture`) and then asserts.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proxcert_cli::{parse_config, run_command, RunOptions};
use proxcert_core::problems::{
    forward_difference, make_lasso_instance, make_tv_instance, tv_instance_from_data, LassoMode,
};
use proxcert_core::regularity::conversion_cross_check;
use proxcert_core::solvers::{fit_rate, MonitorOptions, RateFit, RateKind, ScheduleState};
use proxcert_core::{
    make_fixture, DenseMatrix, FixtureId, IterationTrace, Method, PrimalDualVector, ProxFunction, SamplingOptions,
    StepSchedule, StructuredOperator,
};

fn report(id: &str, ok: bool, detail: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{} criterion {}: {}", if ok { "PASS" } else { "FAIL" }, id, detail);
    let _ = out.flush();
}

fn verdict(id: &str, ok: bool, detail: String) {
    report(id, ok, detail.clone());
    assert!(ok, "criterion {id}: {detail}");
}

fn opts() -> SamplingOptions {
    SamplingOptions { seed: 11, ..SamplingOptions::default() }
}

fn pd(x: Vec<f64>, y: Vec<f64>) -> PrimalDualVector<f64> {
    PrimalDualVector::new(x, y).unwrap()
}

#[test]
fn criterion_1_regression_matrix() {
    let t = Instant::now();
    let (mut rows, mut agree) = (0, 0);
    let mut bad = Vec::new();
    for id in FixtureId::catalogue() {
        let f = make_fixture::<f64>(&id).unwrap();
        for o in f.run_expected(&opts()).unwrap() {
            rows += 1;
            if o.agrees() {
                agree += 1;
            } else {
                bad.push(format!("{}/{}", id.name(), o.label));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        "1",
        agree == rows && secs < 60.0,
        format!("{agree}/{rows} verdicts agree in {secs:.1} s (limit 60 s){}", fmt_bad(&bad)),
    );
}

fn fmt_bad(b: &[String]) -> String {
    if b.is_empty() {
        String::new()
    } else {
        format!("; mismatches: {}", b.join(", "))
    }
}

#[test]
fn criterion_2_lemma_constants() {
    let mut bad = Vec::new();
    let mut checked = 0;
    for alpha in [0.5, 1.0, 2.0] {
        for q_norm in [0.5, 1.0] {
            let f = make_fixture::<f64>(&FixtureId::BallIndicator { alpha, q_norm }).unwrap();
            let xs = [0.6 * alpha, 0.8 * alpha];
            for e in &f.expected {
                let r = f.run_check(e, &opts()).unwrap();
                checked += 1;
                if r.slack != 1e-9 || r.passed() != e.expect_pass {
                    bad.push(format!("ball a={alpha} q={q_norm} {}", e.label));
                }
                if !e.expect_pass {
                    // the violation sits at or near the reflection −x*
                    let near = r.counterexamples.iter().map(|c| {
                        let (dx, dy) = (c.u.get(0) + xs[0], c.u.get(1) + xs[1]);
                        (dx * dx + dy * dy).sqrt()
                    });
                    let d = near.fold(f64::INFINITY, f64::min);
                    if !(d <= 0.1 * alpha) {
                        bad.push(format!("ball a={alpha} q={q_norm}: nearest counterexample {d:.3} from -x*"));
                    }
                }
            }
        }
    }
    let f = make_fixture::<f64>(&FixtureId::AbsValue { q: 0.3 }).unwrap();
    for e in &f.expected {
        let r = f.run_check(e, &opts()).unwrap();
        checked += 1;
        if r.slack != 1e-9 || r.passed() != e.expect_pass {
            bad.push(format!("abs {}", e.label));
        }
    }
    verdict(
        "2",
        bad.is_empty(),
        format!("{checked} ball-indicator and absolute-value checks at slack 1e-9{}", fmt_bad(&bad)),
    );
}

#[test]
fn criterion_3_conversion() {
    let mut ids = FixtureId::catalogue();
    ids.push(FixtureId::Lasso { n: 4, m: 3, alpha: 1.0, seed: 1, mode: LassoMode::StrictlyComplementary });
    ids.push(FixtureId::Lasso { n: 4, m: 3, alpha: 1.0, seed: 1, mode: LassoMode::Boundary });
    let (mut runs, mut implied, mut contradictions) = (0, 0, Vec::new());
    for id in &ids {
        let f = make_fixture::<f64>(id).unwrap();
        let (n, m) = f.dims();
        let q = f
            .query(StructuredOperator::zero(n, m), StructuredOperator::identity(n, m), StructuredOperator::identity(n, m))
            .unwrap();
        for kappa in [0.5, 1.0, 2.0] {
            let r = conversion_cross_check(&q, kappa, &opts()).unwrap();
            runs += 1;
            implied += usize::from(r.psr.is_some());
            if r.contradiction() {
                contradictions.push(format!("{} kappa={kappa}", id.name()));
            }
        }
    }
    verdict(
        "3",
        contradictions.is_empty(),
        format!(
            "{} contradictions over {runs} fixture x kappa cells ({implied} with a passing strong submonotonicity){}",
            contradictions.len(),
            fmt_bad(&contradictions)
        ),
    );
}

/// Solver runs shared by criteria 4, 6, 7 and 8.
struct Runs {
    prox_point: (IterationTrace<f64>, f64),
    lasso: Vec<(u64, IterationTrace<f64>, f64, Duration)>,
    tv: Vec<(u64, IterationTrace<f64>, Duration)>,
    tv_flat: IterationTrace<f64>,
}

fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let long = MonitorOptions { max_iter: 2000, stop_tol: 0.0, divergence_factor: 1e6 };

        let f = make_fixture::<f64>(&FixtureId::DistPm1).unwrap();
        let pp = f.prox_point.clone().unwrap();
        let method = Method::ProxPoint { map: f.map.clone(), resolvent: pp.resolvent, tau: pp.tau, xi: pp.xi };
        let mo = MonitorOptions { max_iter: 200, ..long };
        let prox_point = (proxcert_core::run_with_monitor(&method, &pp.u0, &f.solution, &mo, None).unwrap(), pp.xi);

        let lasso = (0..5)
            .map(|seed| {
                let t = Instant::now();
                let inst = make_lasso_instance::<f64>(20, 15, 1.0, seed, LassoMode::StrictlyComplementary).unwrap();
                let p = inst.problem().unwrap();
                let kn = p.k.spectral_norm();
                let sigma = 0.01;
                let s = StepSchedule::linear(0.5 / (sigma * kn * kn), sigma, 0.1, 1.0, 0.5);
                let u0 = pd(vec![0.1; 20], vec![0.0; 15]);
                let margin = inst.strict_margin;
                let tr = proxcert_core::run_with_monitor(
                    &Method::Pdhgm { problem: p, schedule: s },
                    &u0,
                    &inst.solution(),
                    &long,
                    None,
                )
                .unwrap();
                (seed, tr, margin, t.elapsed())
            })
            .collect();

        let tv_run = |p: proxcert_core::SaddleProblem<f64>, sol, s: StepSchedule<f64>| {
            let u0 = pd(vec![0.0; 50], vec![0.0; 49]);
            proxcert_core::run_with_monitor(&Method::Pdhgm { problem: p, schedule: s }, &u0, &sol, &long, None).unwrap()
        };
        let tv = (0..3)
            .map(|seed| {
                let t = Instant::now();
                let inst = make_tv_instance::<f64>(50, 0.1, seed).unwrap();
                let p = inst.problem().unwrap();
                let kn = p.k.spectral_norm();
                let tau = 0.01;
                let s = StepSchedule::linear(tau, 0.5 / (tau * kn * kn), 1.0, inst.flatness / inst.alpha, 0.5);
                let tr = tv_run(p, inst.solution().unwrap(), s);
                (seed, tr, t.elapsed())
            })
            .collect();

        // piecewise constant data: the reference has flat regions
        let mut z = vec![0.0; 25];
        z.extend(vec![1.0; 25]);
        let inst = tv_instance_from_data::<f64>(z, 0.1).unwrap();
        let p = inst.problem().unwrap();
        let kn = p.k.spectral_norm();
        let tau = 0.01;
        let tv_flat = tv_run(p, inst.solution().unwrap(), StepSchedule::constant(tau, 0.5 / (tau * kn * kn), 0.5));

        Runs { prox_point, lasso, tv, tv_flat }
    })
}

#[test]
fn criterion_4_prox_point_rate() {
    let (tr, xi) = &runs().prox_point;
    let d0 = tr.records[0].dist2_full;
    let worst = tr
        .records
        .iter()
        .map(|r| (1.0 + xi).powi(-(r.iter as i32)) * d0 * (1.0 + 1e-6) - r.dist2_full)
        .fold(f64::INFINITY, f64::min);
    verdict(
        "4",
        tr.iterations() == 200 && worst >= 0.0,
        format!(
            "dist_pm1 prox point, xi={xi}: dist2(u^N) <= (1+xi)^-N dist2(u^0)(1+1e-6) for N <= {} (min slack {worst:.3e})",
            tr.iterations()
        ),
    );
}

#[test]
fn criterion_5_growth_laws() {
    let kn = 2.0;
    let lin = StepSchedule::linear(0.2, 0.2, 0.5, 1.0, 0.5).with_phi0(1.5);
    let mut st = ScheduleState::new(lin, kn).unwrap();
    let (theta, mut expect) = (lin.theta(), lin.phi0);
    let mut exact = true;
    for n in 0..=1000 {
        exact &= st.phi(n) == expect;
        expect *= theta;
    }

    let acc = StepSchedule::accelerated(0.2, 0.2, 1.0, 0.5);
    let mut st = ScheduleState::new(acc, kn).unwrap();
    let ratios: Vec<(usize, f64)> = (50..=500).map(|n| (n, st.phi(n) / (n * n) as f64)).collect();
    let min_ratio = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let late: Vec<f64> = ratios.iter().filter(|r| r.0 >= 100).map(|r| r.1).collect();
    let nondecreasing = late.windows(2).all(|w| w[1] >= w[0] * (1.0 - 0.01));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_rel = 0.0f64;
    let mut coupling_ok = true;
    for &(m, n) in &[(1, 1), (3, 5), (15, 20), (20, 15), (37, 29), (50, 50), (49, 50)] {
        for rep in 0..3 {
            let data: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let k = if rep == 2 && m + 1 == n {
                forward_difference::<f64>(n)
            } else {
                DenseMatrix::new(m, n, data).unwrap()
            };
            let top = DMatrix::from_row_slice(m, n, k.data()).singular_values().iter().cloned().fold(0.0, f64::max);
            let est = k.spectral_norm();
            worst_rel = worst_rel.max((est - top).abs() / top.max(1.0));
            let (tau, sigma, delta) = (0.3, 0.9 / (0.3 * est * est), 0.5);
            let c = StepSchedule::constant(tau, sigma, delta);
            coupling_ok &= ScheduleState::new(c, est).is_ok() && 1.0 >= (1.0 - delta) * tau * sigma * est * est;
        }
    }
    let c = StepSchedule::constant(0.4, 0.4, 0.5);
    let mut st = ScheduleState::new(c, kn).unwrap();
    let constant_ok = (0..=500).all(|n| st.phi(n) == c.phi0);

    verdict(
        "5",
        exact && min_ratio > 0.0 && nondecreasing && worst_rel <= 1e-8 && coupling_ok && constant_ok,
        format!(
            "linear phi_N == theta^N phi_0 bitwise: {exact}; accelerated min phi_N/N^2 = {min_ratio:.4e}, \
             nondecreasing (1%) past N=100: {nondecreasing}; constant phi_N = phi_0: {constant_ok}, \
             1 >= (1-delta) tau sigma |K|^2: {coupling_ok}; power iteration vs SVD worst rel err {worst_rel:.2e}"
        ),
    );
}

fn fit(tr: &IterationTrace<f64>) -> RateFit<f64> {
    fit_rate(tr, 200).unwrap()
}

#[test]
fn criterion_6_lasso_linear_rate() {
    let mut ok = true;
    let mut lines = Vec::new();
    for (seed, tr, margin, took) in &runs().lasso {
        let f = fit(tr);
        let slack = tr.records.iter().map(|r| r.rate_bound_slack).fold(f64::INFINITY, f64::min);
        let good = f.kind == RateKind::Linear
            && f.rate < 1.0
            && f.r2 >= 0.99
            && slack >= -1e-8
            && (margin - 0.2).abs() < 1e-12
            && tr.iterations() == 2000
            && took.as_secs_f64() < 30.0;
        ok &= good;
        lines.push(format!(
            "seed {seed}: r={:.5} r2={:.6} min bound slack {slack:.2e} ({:.1} s)",
            f.rate,
            f.r2,
            took.as_secs_f64()
        ));
    }
    verdict("6", ok, format!("Lasso n=20 m=15 margin 0.2 alpha, linear schedule; {}", lines.join("; ")));
}

#[test]
fn criterion_7_tv_contrast() {
    let mut ok = true;
    let mut lines = Vec::new();
    for (seed, tr, took) in &runs().tv {
        let f = fit(tr);
        ok &= f.kind == RateKind::Linear && f.rate < 1.0 && f.r2 >= 0.98;
        lines.push(format!("seed {seed}: r={:.5} r2={:.6} ({:.1} s)", f.rate, f.r2, took.as_secs_f64()));
    }
    let f = fit(&runs().tv_flat);
    let clean_linear = f.kind == RateKind::Linear && f.r2 >= 0.99 && f.rate < 0.999;
    ok &= !clean_linear;
    lines.push(format!(
        "flat instance: kind={} r={:.5} r2={:.4} (alternative r={:.4} r2={:.4})",
        f.kind.as_str(),
        f.rate,
        f.r2,
        f.alternative_rate,
        f.alternative_r2
    ));
    verdict("7", ok, format!("TV n=50 alpha=0.1; {}", lines.join("; ")));
}

/// Returns (DI violations, lemma violations, steps checked).
fn monitor_soundness(tr: &IterationTrace<f64>) -> (usize, usize, usize) {
    let (mut di_bad, mut lemma_bad) = (0, 0);
    let mut ci_ok = true;
    for r in tr.records.iter().skip(1) {
        ci_ok &= r.ci_residual >= -1e-9;
        if ci_ok && !(r.di_slack >= -1e-8) {
            di_bad += 1;
        }
        if r.metric_psd && !(r.lemma_residual >= -1e-9) {
            lemma_bad += 1;
        }
    }
    (di_bad, lemma_bad, tr.iterations())
}

#[test]
fn criterion_8_monitor_soundness() {
    let r = runs();
    let mut traces: Vec<(String, &IterationTrace<f64>)> = vec![("prox point".into(), &r.prox_point.0)];
    traces.extend(r.lasso.iter().map(|(s, t, _, _)| (format!("lasso {s}"), t)));
    traces.extend(r.tv.iter().map(|(s, t, _)| (format!("tv {s}"), t)));
    traces.push(("tv flat".into(), &r.tv_flat));
    let (mut di, mut lemma, mut steps) = (0, 0, 0);
    let mut bad = Vec::new();
    for (name, t) in &traces {
        let (a, b, n) = monitor_soundness(t);
        if a + b > 0 {
            bad.push(format!("{name}: {a} DI, {b} lemma"));
        }
        di += a;
        lemma += b;
        steps += n;
    }
    verdict(
        "8",
        di == 0 && lemma == 0,
        format!("{} runs, {steps} steps: {di} DI and {lemma} lemma violations{}", traces.len(), fmt_bad(&bad)),
    );
}

#[test]
fn criterion_9_numerical_bedrock() {
    // three-point identity on random self-adjoint PSD operators
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let triples = 100_000;
    let (n, m) = (3, 2);
    for _ in 0..triples {
        let kd: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = DenseMatrix::new(m, n, kd).unwrap();
        let (a, d): (f64, f64) = (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0));
        let kn = k.spectral_norm();
        let b = if kn > 0.0 { rng.gen_range(-1.0..1.0) * (a * d).sqrt() / kn } else { 0.0 };
        let op = StructuredOperator::new(a, b, b, d, Some(Arc::new(k)), n, m).unwrap();
        let mut v = || PrimalDualVector::from_flat(n, &(0..n + m).map(|_| rng.gen_range(-10.0..10.0)).collect::<Vec<_>>()).unwrap();
        let (up, u, us) = (v(), v(), v());
        let lhs = op.apply(&up.sub(&u)).unwrap().dot(&up.sub(&us));
        let q = |w: &PrimalDualVector<f64>| op.quad_form(w).unwrap();
        let (q1, q2, q3) = (q(&up.sub(&u)), q(&u.sub(&us)), q(&up.sub(&us)));
        let rhs = 0.5 * q1 - 0.5 * q2 + 0.5 * q3;
        let scale = lhs.abs().max(q1.abs()).max(q2.abs()).max(q3.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    let identity_ok = worst <= 1e-10;

    // prox operators against a 1e-4 grid
    let fns = [
        ProxFunction::l1(0.7, 1),
        ProxFunction::sq_dist_point(vec![0.4]),
        ProxFunction::ball(1.2, 1),
        ProxFunction::zero(1),
    ];
    let mut prox_err = 0.0f64;
    for f in &fns {
        for _ in 0..15 {
            let x: f64 = rng.gen_range(-3.0..3.0);
            let tau: f64 = rng.gen_range(0.1..2.0);
            let p = f.prox(tau, &[x]).unwrap()[0];
            let mut best = (f64::INFINITY, 0.0);
            for j in 0..=120_000 {
                let t = -6.0 + j as f64 * 1e-4;
                let val = f.value(&[t]) + (t - x) * (t - x) / (2.0 * tau);
                if val < best.0 {
                    best = (val, t);
                }
            }
            prox_err = prox_err.max((p - best.1).abs());
        }
    }
    let prox_ok = prox_err <= 2e-4;

    // byte-identical outputs across runs and worker counts
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        ("certify", "command = certify\nfixture = dist_dyadic\ncheck = psm\nxi = 0.5\nseed = 4\n"),
        ("table", "command = certify\nfixture = ball_indicator\nseed = 4\n"),
        ("solve", "command = solve\nfixture = lasso\nsigma = 0.01\nmax_iter = 300\n"),
        ("sweep", "command = sweep\nfixture = tv1d\nschedule = accelerated\nmax_iter = 200\nsweep_param = gamma_tilde\nsweep_values = 0.5, 1, 2\n"),
    ];
    let mut identical = true;
    for (name, text) in configs {
        let cfg = parse_config(text).unwrap();
        let mut outputs = Vec::new();
        for (run, workers) in [(0, 1), (1, 1), (2, 4)] {
            let out_dir = dir.path().join(format!("{name}-{run}"));
            let o = run_command(&cfg, &RunOptions { out_dir, workers }).unwrap();
            let files: Vec<Vec<u8>> = o.files.iter().map(|p| std::fs::read(p).unwrap()).collect();
            outputs.push((o.summary, files));
        }
        identical &= outputs.windows(2).all(|w| w[0] == w[1]);
    }

    verdict(
        "9",
        identity_ok && prox_ok && identical,
        format!(
            "three-point identity worst rel err {worst:.2e} over {triples} triples; prox vs grid max err {prox_err:.2e}; \
             outputs byte-identical across runs and workers: {identical}"
        ),
    );
}
