use std::time::Instant;

use proxcert_core::problems::{
    make_fixture, make_lasso_instance, make_tv_instance, projection_fail_fixture, search_projection_failure,
    FixtureId, LassoMode,
};
use proxcert_core::regularity::{check_projection_condition, conversion_cross_check, SamplingOptions};
use proxcert_core::{NeighborhoodSpec, PrimalDualVector, StructuredOperator};

fn opts() -> SamplingOptions {
    SamplingOptions { seed: 11, workers: 1, revalidation_samples: 1000, max_counterexamples: 100 }
}

fn run_table(id: FixtureId) {
    let t = Instant::now();
    let f = make_fixture::<f64>(&id).unwrap();
    for o in f.run_expected(&opts()).unwrap() {
        println!(
            "{:<18} {:<48} expected={} got={} worst={:.3e}",
            id.name(),
            o.label,
            o.expected_pass,
            o.report.passed(),
            o.report.worst_margin
        );
        assert!(o.agrees(), "{} / {}: {}", id.name(), o.label, o.report.to_text());
    }
    println!("{} took {:?}", id.name(), t.elapsed());
}

#[test]
fn catalogue_regression_matrix() {
    for id in FixtureId::catalogue() {
        run_table(id);
    }
}

#[test]
fn parameter_variants() {
    for mu in [0.25, 0.5, 1.0] {
        run_table(FixtureId::SubspaceMu { mu });
    }
    for gamma in [0.25, 0.5, 0.75] {
        run_table(FixtureId::ConeGamma { gamma });
    }
    for alpha in [0.5, 1.0, 2.0] {
        for q_norm in [0.5, 1.0] {
            run_table(FixtureId::BallIndicator { alpha, q_norm });
        }
    }
    for q in [-0.5, 0.0, 0.3] {
        run_table(FixtureId::AbsValue { q });
    }
}

#[test]
fn generated_instance_tables() {
    run_table(FixtureId::Lasso { n: 6, m: 4, alpha: 1.0, seed: 3, mode: LassoMode::StrictlyComplementary });
    run_table(FixtureId::Lasso { n: 1, m: 1, alpha: 1.0, seed: 3, mode: LassoMode::Boundary });
    run_table(FixtureId::Lasso { n: 6, m: 4, alpha: 1.0, seed: 3, mode: LassoMode::Boundary });
    run_table(FixtureId::Tv1d { n: 12, alpha: 0.1, seed: 5 });
}

#[test]
fn conversion_has_no_contradictions() {
    let mut ids = FixtureId::catalogue();
    ids.push(FixtureId::Lasso { n: 4, m: 3, alpha: 1.0, seed: 1, mode: LassoMode::StrictlyComplementary });
    for id in ids {
        let f = make_fixture::<f64>(&id).unwrap();
        let (n, m) = f.dims();
        let q = f
            .query(StructuredOperator::zero(n, m), StructuredOperator::identity(n, m), StructuredOperator::identity(n, m))
            .unwrap();
        for kappa in [0.5, 1.0, 2.0] {
            let r = conversion_cross_check(&q, kappa, &opts()).unwrap();
            println!(
                "{:<18} kappa={} psm={} psr={:?}",
                id.name(),
                kappa,
                r.psm.passed(),
                r.psr.as_ref().map(|p| p.passed())
            );
            assert!(!r.contradiction(), "{} kappa={}", id.name(), kappa);
        }
    }
}

#[test]
fn projection_condition_fixture_and_search() {
    let (a, base, m, mp, nb) = projection_fail_fixture::<f64>();
    let r = check_projection_condition(&a, &base, &m, &mp, &nb, &opts()).unwrap();
    assert!(!r.passed());
    let at = PrimalDualVector::new(vec![0.6], vec![0.0]).unwrap();
    let tiny = NeighborhoodSpec::new(at.clone(), 1e-3).with_grid(3).with_random(0);
    let r1 = check_projection_condition(&a, &base, &m, &mp, &tiny, &opts()).unwrap();
    assert!(r1.counterexamples.iter().any(|c| c.u == at), "{}", r1.to_text());
    let found = search_projection_failure(&m, &mp);
    assert!(found.is_some());
    // common projections exist when M' = M
    let ok = check_projection_condition(&a, &base, &m, &m, &nb, &opts()).unwrap();
    assert!(ok.passed(), "{}", ok.to_text());
}

#[test]
fn generators_are_reproducible() {
    let a = make_lasso_instance::<f64>(20, 15, 1.0, 4, LassoMode::StrictlyComplementary).unwrap();
    let b = make_lasso_instance::<f64>(20, 15, 1.0, 4, LassoMode::StrictlyComplementary).unwrap();
    assert_eq!(a, b);
    assert!(a.strict_margin >= 0.1);
    let t1 = make_tv_instance::<f64>(20, 0.1, 9).unwrap();
    let t2 = make_tv_instance::<f64>(20, 0.1, 9).unwrap();
    assert_eq!(t1, t2);
    assert!(t1.flatness > 1e-6);
}
