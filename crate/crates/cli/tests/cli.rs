//! End-to-end runs of the `proxcert` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn proxcert(dir: &Path, args: &[&str], config: &str) -> Output {
    let cfg = dir.join("run.conf");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_proxcert"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .env_remove("PROXCERT_WORKERS")
        .output()
        .unwrap()
}

fn with_out(dir: &Path, args: &[&str], out: &str, config: &str) -> Output {
    let out = dir.join(out);
    let mut a: Vec<&str> = args.to_vec();
    let o = out.to_str().unwrap().to_string();
    a.push("--out");
    a.push(&o);
    proxcert(dir, &a, config)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn certify_exit_codes_and_report() {
    let d = tempfile::tempdir().unwrap();
    let fail = with_out(d.path(), &["certify"], "f", "command = certify\nfixture = dist_pm1\ncheck = psm\nxi = 1.0\n");
    assert_eq!(fail.status.code(), Some(2), "{}", stderr(&fail));
    let report = fs::read_to_string(d.path().join("f/report.txt")).unwrap();
    assert!(report.lines().next().unwrap().contains("verdict=fail"));
    assert!(report.lines().nth(1).unwrap().starts_with("u=["));

    let pass = with_out(d.path(), &["certify"], "p", "command = certify\nfixture = dist_pm1\ncheck = psm\nxi = 0.9\n");
    assert_eq!(pass.status.code(), Some(0), "{}", stderr(&pass));
    let report = fs::read_to_string(d.path().join("p/report.txt")).unwrap();
    assert_eq!(report.lines().count(), 1, "passing report is the header only");

    let table = with_out(d.path(), &["certify"], "t", "command = certify\nfixture = cone_gamma\n");
    assert_eq!(table.status.code(), Some(0));
    assert!(stdout(&table).contains("agree="));

    let marginal = with_out(
        d.path(),
        &["certify"],
        "m",
        "command = certify\nfixture = lasso\ncheck = marginal\ngamma = 0.1\nrho = 1\nradius = 0.2\nrandom_samples = 200\n",
    );
    assert_eq!(marginal.status.code(), Some(0), "{}", stderr(&marginal));
}

#[test]
fn solve_lasso_writes_trace_and_summary() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "command = solve\nfixture = lasso\nn = 10\nm = 8\nalpha = 1.0\nseed = 7\nschedule = linear\nsigma = 0.01\n";
    let o = with_out(d.path(), &["solve"], "a", cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("rate_kind=linear rate="), "{line}");
    let rate: f64 = line.split_whitespace().nth(1).unwrap().trim_start_matches("rate=").parse().unwrap();
    assert!(rate < 1.0);
    let trace = fs::read_to_string(d.path().join("a/trace.csv")).unwrap();
    assert!(trace.starts_with("iter,"));
    assert_eq!(trace.lines().count(), 2002);

    // same seed: identical bytes; a different seed: a different instance
    let again = with_out(d.path(), &["solve"], "b", cfg);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(trace, fs::read_to_string(d.path().join("b/trace.csv")).unwrap());
    let other = with_out(d.path(), &["solve", "--seed-override", "8"], "c", cfg);
    assert_eq!(other.status.code(), Some(0));
    assert_ne!(trace, fs::read_to_string(d.path().join("c/trace.csv")).unwrap());
}

#[test]
fn zero_iterations_give_one_row() {
    let d = tempfile::tempdir().unwrap();
    let o = with_out(d.path(), &["solve"], "z", "command = solve\nfixture = dist_pm1\nmax_iter = 0\n");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = fs::read_to_string(d.path().join("z/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    assert!(stdout(&o).starts_with("rate_kind=none"));
}

#[test]
fn sweep_is_monotone_and_worker_independent() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "command = sweep\nfixture = tv1d\nschedule = accelerated\nmax_iter = 400\n\
               [sweep]\nsweep_param = gamma_tilde\nsweep_values = 0.5, 1, 2\n";
    let one = with_out(d.path(), &["sweep", "--workers", "1"], "w1", cfg);
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    let four = with_out(d.path(), &["sweep", "--workers", "4"], "w4", cfg);
    assert_eq!(four.status.code(), Some(0));
    for name in ["sweep.csv", "trace_gamma_tilde_0.csv", "trace_gamma_tilde_1.csv", "trace_gamma_tilde_2.csv"] {
        let a = fs::read(d.path().join("w1").join(name)).unwrap();
        assert_eq!(a, fs::read(d.path().join("w4").join(name)).unwrap(), "{name}");
    }
    let agg = fs::read_to_string(d.path().join("w1/sweep.csv")).unwrap();
    let mut lines = agg.lines();
    assert_eq!(lines.next(), Some("param,final_dist2,fitted_rate"));
    let finals: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(finals.len(), 3);
    let up = finals.windows(2).all(|w| w[0] <= w[1]);
    let down = finals.windows(2).all(|w| w[0] >= w[1]);
    assert!(up || down, "{finals:?}");
}

#[test]
fn certify_output_is_worker_independent() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "command = certify\nfixture = dist_dyadic\ncheck = psm\nxi = 0.5\nseed = 3\n";
    let a = with_out(d.path(), &["certify", "--workers", "1"], "a", cfg);
    let b = Command::new(env!("CARGO_BIN_EXE_proxcert"))
        .args(["certify", "--config"])
        .arg(d.path().join("run.conf"))
        .arg("--out")
        .arg(d.path().join("b"))
        .env("PROXCERT_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(a.status.code(), Some(2));
    assert_eq!(b.status.code(), Some(2));
    assert_eq!(fs::read(d.path().join("a/report.txt")).unwrap(), fs::read(d.path().join("b/report.txt")).unwrap());
}

#[test]
fn operational_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let bad = "command = solve\nfixture = lasso\nn = 10\nm = 8\nalpha = 1.0\nseed = 7\nschedule = warp\n";
    let o = with_out(d.path(), &["solve"], "e", bad);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown schedule 'warp' (line 7)"), "{}", stderr(&o));

    let o = with_out(d.path(), &["solve"], "e", "");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing required key: command"));

    let o = with_out(d.path(), &["certify"], "e", "command = solve\n");
    assert_eq!(o.status.code(), Some(1));

    // step condition violated: rejected before iterating
    let o = with_out(
        d.path(),
        &["solve"],
        "e",
        "command = solve\nfixture = lasso\nschedule = constant\ntau = 10\nsigma = 10\n",
    );
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_proxcert")).args(["solve", "--config", "/nonexistent/x.conf"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_proxcert")).args(["frobnicate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn instance_files_are_accepted() {
    use proxcert_core::problems::{instance_to_text, make_lasso_instance, Instance, LassoMode};
    let d = tempfile::tempdir().unwrap();
    let inst = make_lasso_instance::<f64>(6, 4, 1.0, 3, LassoMode::StrictlyComplementary).unwrap();
    let path = d.path().join("l.txt");
    fs::write(&path, instance_to_text(&Instance::Lasso(inst))).unwrap();
    let cfg = format!("command = solve\ninstance = {}\nsigma = 0.01\nmax_iter = 300\n", path.display());
    let o = with_out(d.path(), &["solve"], "i", &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("rate_kind=linear"));
}
