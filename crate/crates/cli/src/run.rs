//! Command execution: problem assembly, the three commands and file output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use proxcert_core::problems::{
    fixture_from_instance, make_lasso_instance, make_tv_instance, parse_instance, Instance, LassoInstance, TvInstance,
};
use proxcert_core::regularity::{check_psm, check_psr, marginal_psm_check};
use proxcert_core::scalar::fmt17;
use proxcert_core::solvers::{fit_rate, MonitorOptions, RateFit, ScheduleKind};
use proxcert_core::{
    make_fixture, CertificateReport, Fixture, FixtureId, IterationTrace, Method, PrimalDualVector, SaddleProblem,
    SamplingOptions, SolutionSet, StepSchedule, StructuredOperator,
};

use crate::config::{CheckMode, Command, ConfigError, MethodChoice, RunConfig};

/// Exit status of a successful run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    /// Certified failure (exit code 2).
    Fail,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Pass => 0,
            Self::Fail => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: Status,
    /// Text for standard output.
    pub summary: String,
    /// Written files, in write order.
    pub files: Vec<PathBuf>,
}

/// Where outputs go and how many workers to use.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
}

/// A problem ready for certification or solving.
enum Loaded {
    Catalogue(Box<Fixture<f64>>),
    Lasso(LassoInstance<f64>),
    Tv(TvInstance<f64>),
}

impl Loaded {
    fn fixture(&self, seed: u64) -> Result<Fixture<f64>> {
        Ok(match self {
            Self::Catalogue(f) => (**f).clone(),
            Self::Lasso(l) => fixture_from_instance(&Instance::Lasso(l.clone()), seed)?,
            Self::Tv(t) => fixture_from_instance(&Instance::Tv(t.clone()), seed)?,
        })
    }

    fn saddle(&self) -> Result<Option<(SaddleProblem<f64>, SolutionSet<f64>)>> {
        Ok(match self {
            Self::Catalogue(f) => f.problem.clone().map(|p| (p, f.solution.clone())),
            Self::Lasso(l) => Some((l.problem()?, l.solution())),
            Self::Tv(t) => Some((t.problem()?, t.solution()?)),
        })
    }

    /// `(γ, ρ)` defaults for marginal checks and the linear schedule.
    fn default_constants(&self) -> (f64, f64) {
        match self {
            Self::Lasso(_) => (0.1, 1.0),
            Self::Tv(t) => (1.0, if t.alpha > 0.0 { t.flatness / t.alpha } else { 0.0 }),
            Self::Catalogue(_) => (0.0, 0.0),
        }
    }
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    if let Some(path) = &cfg.instance {
        let text = fs::read_to_string(path).with_context(|| format!("reading instance {}", path.display()))?;
        return Ok(match parse_instance::<f64>(&text).with_context(|| format!("instance {}", path.display()))? {
            Instance::Lasso(l) => Loaded::Lasso(l),
            Instance::Tv(t) => Loaded::Tv(t),
        });
    }
    let mut id = FixtureId::from_name(&cfg.fixture)?;
    match &mut id {
        FixtureId::DistDyadic { levels } => set(levels, cfg.levels),
        FixtureId::SubspaceMu { mu } => set(mu, cfg.mu),
        FixtureId::ConeGamma { gamma } => set(gamma, cfg.cone_gamma),
        FixtureId::BallIndicator { alpha, q_norm } => {
            set(alpha, cfg.alpha);
            set(q_norm, cfg.q_norm);
        }
        FixtureId::AbsValue { q } => set(q, cfg.q),
        FixtureId::Lasso { n, m, alpha, .. } => {
            set(n, cfg.n);
            set(m, cfg.m);
            set(alpha, cfg.alpha);
            return Ok(Loaded::Lasso(make_lasso_instance(*n, *m, *alpha, cfg.seed, cfg.mode)?));
        }
        FixtureId::Tv1d { n, alpha, .. } => {
            set(n, cfg.n);
            set(alpha, cfg.alpha);
            return Ok(Loaded::Tv(make_tv_instance(*n, *alpha, cfg.seed)?));
        }
        _ => {}
    }
    Ok(Loaded::Catalogue(Box::new(make_fixture(&id)?)))
}

fn set<V: Copy>(slot: &mut V, v: Option<V>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Runs the configured command and writes its artifacts under `opts.out_dir`.
pub fn run_command(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    fs::create_dir_all(&opts.out_dir).with_context(|| format!("creating {}", opts.out_dir.display()))?;
    match cfg.command {
        Command::Certify => certify(cfg, opts),
        Command::Solve => solve(cfg, opts),
        Command::Sweep => sweep(cfg, opts),
    }
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    files.push(path);
    Ok(())
}

fn sampling(cfg: &RunConfig, workers: usize) -> SamplingOptions {
    SamplingOptions {
        seed: cfg.seed,
        workers: workers.max(1),
        revalidation_samples: cfg.revalidation_samples,
        max_counterexamples: cfg.max_counterexamples,
    }
}

fn certify(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let loaded = load(cfg)?;
    let fx = loaded.fixture(cfg.seed)?;
    let so = sampling(cfg, opts.workers);
    let mut files = Vec::new();
    let path = opts.out_dir.join("report.txt");
    if cfg.check == CheckMode::Table {
        let rows = fx.run_expected(&so)?;
        let mut text = String::new();
        let mut agree = 0;
        for r in &rows {
            agree += usize::from(r.agrees());
            text.push_str(&format!(
                "# row '{}' expected={} agrees={}\n",
                r.label,
                if r.expected_pass { "pass" } else { "fail" },
                r.agrees()
            ));
            text.push_str(&r.report.to_text());
        }
        write(path, &text, &mut files)?;
        let status = if agree == rows.len() { Status::Pass } else { Status::Fail };
        let summary = format!("fixture={} rows={} agree={}", fx.id.name(), rows.len(), agree);
        return Ok(RunOutcome { status, summary, files });
    }
    let mut nb = fx.neighborhood.clone();
    if let Some(r) = cfg.radius {
        nb.radius = r;
        nb.half_widths.clear();
    }
    set(&mut nb.grid_points_per_axis, cfg.grid);
    set(&mut nb.random_samples, cfg.random_samples);
    let report: CertificateReport<f64> = match cfg.check {
        CheckMode::Marginal => {
            let (p, sol) = loaded
                .saddle()?
                .ok_or_else(|| anyhow!("fixture '{}' has no saddle problem for a marginal check", fx.id.name()))?;
            let (g0, r0) = loaded.default_constants();
            marginal_psm_check(&p, &sol, cfg.gamma.unwrap_or(g0), cfg.rho.unwrap_or(r0), &nb, &so)?
        }
        kind => {
            let (n, m) = fx.dims();
            let xi = cfg.xi.unwrap_or(0.0);
            let triple = (
                StructuredOperator::diag(xi, cfg.xi_dual.unwrap_or(xi), n, m),
                StructuredOperator::diag(cfg.n_weight, cfg.n_weight_dual.unwrap_or(cfg.n_weight), n, m),
                StructuredOperator::diag(cfg.m_weight, cfg.m_weight_dual.unwrap_or(cfg.m_weight), n, m),
            );
            let mut q = fx.query(triple.0, triple.1, triple.2)?.with_slack(cfg.slack);
            q.neighborhood = nb;
            if kind == CheckMode::Psm {
                check_psm(&q, &so)
            } else {
                check_psr(&q, &so)?
            }
        }
    };
    write(path, &report.to_text(), &mut files)?;
    let status = if report.passed() { Status::Pass } else { Status::Fail };
    let summary = format!(
        "verdict={} worst_margin={} counterexamples={} samples={}",
        report.verdict.as_str(),
        fmt17(report.worst_margin),
        report.counterexamples.len(),
        report.samples_evaluated
    );
    Ok(RunOutcome { status, summary, files })
}

/// One monitored solver run with its rate fit.
pub struct SolveResult {
    pub trace: IterationTrace<f64>,
    /// None when the trace is too short to fit.
    pub fit: Option<RateFit<f64>>,
}

/// Smallest trace (in records) that gets a rate fit.
const MIN_FIT_RECORDS: usize = 5;

impl SolveResult {
    /// `rate_kind=<k> rate=<r> r2=<v>`.
    pub fn summary_line(&self) -> String {
        match &self.fit {
            Some(f) => f.summary_line(),
            None => "rate_kind=none rate=NaN r2=NaN".into(),
        }
    }
}

/// Builds the method from the configuration and runs it.
pub fn solve_trace(cfg: &RunConfig) -> Result<SolveResult> {
    let loaded = load(cfg)?;
    let saddle = loaded.saddle()?;
    let use_pdhgm = match cfg.method {
        MethodChoice::Auto => saddle.is_some(),
        MethodChoice::Pdhgm => true,
        MethodChoice::ProxPoint => false,
    };
    let mo = MonitorOptions { max_iter: cfg.max_iter, stop_tol: cfg.stop_tol, divergence_factor: cfg.divergence_factor };
    let trace = if use_pdhgm {
        let (problem, sol) = saddle.ok_or_else(|| anyhow!("PDHGM needs a saddle problem (lasso, tv1d or an instance)"))?;
        let kn = problem.k.spectral_norm();
        let (tau, sigma) = steps(cfg, kn)?;
        let (g0, r0) = loaded.default_constants();
        let schedule = match cfg.schedule {
            ScheduleKind::Constant => StepSchedule::constant(tau, sigma, cfg.delta),
            ScheduleKind::Accelerated => StepSchedule::accelerated(tau, sigma, cfg.gamma_tilde, cfg.delta),
            ScheduleKind::Linear => {
                StepSchedule::linear(tau, sigma, cfg.gamma.unwrap_or(g0), cfg.rho.unwrap_or(r0), cfg.delta)
            }
        }
        .with_phi0(cfg.phi0);
        let u0 = PrimalDualVector::new(vec![cfg.x0.unwrap_or(0.1); problem.n()], vec![cfg.y0; problem.m()])?;
        proxcert_core::run_with_monitor(&Method::Pdhgm { problem, schedule }, &u0, &sol, &mo, None)?
    } else {
        let fx = loaded.fixture(cfg.seed)?;
        let name = fx.id.name();
        let (resolvent, tau, xi, mut u0) = match (&fx.prox_point, &fx.resolvent) {
            (Some(pp), _) => (pp.resolvent.clone(), pp.tau, pp.xi, pp.u0.clone()),
            (None, Some(r)) => (r.clone(), 1.0, 0.0, fx.base_u.clone()),
            (None, None) => bail!("fixture '{name}' has no resolvent for the proximal point method"),
        };
        let (tau, xi) = (cfg.tau.unwrap_or(tau), cfg.xi.unwrap_or(xi));
        if let Some(x0) = cfg.x0 {
            for k in 0..u0.n() {
                u0.set(k, x0);
            }
        } else if fx.prox_point.is_none() {
            for k in 0..u0.dim() {
                u0.set(k, u0.get(k) + 0.1);
            }
        }
        let method = Method::ProxPoint { map: fx.map.clone(), resolvent, tau, xi };
        proxcert_core::run_with_monitor(&method, &u0, &fx.solution, &mo, None)?
    };
    if trace.diverged {
        bail!("solver diverged after {} iterations", trace.iterations());
    }
    let fit = if trace.records.len() >= MIN_FIT_RECORDS {
        Some(fit_rate(&trace, cfg.window.min(trace.records.len()))?)
    } else {
        None
    };
    Ok(SolveResult { trace, fit })
}

fn steps(cfg: &RunConfig, kn: f64) -> Result<(f64, f64)> {
    let k2 = kn * kn;
    Ok(match (cfg.tau, cfg.sigma) {
        (Some(t), Some(s)) => (t, s),
        _ if k2 == 0.0 => (cfg.tau.unwrap_or(1.0), cfg.sigma.unwrap_or(1.0)),
        (Some(t), None) => (t, cfg.step_product / (t * k2)),
        (None, Some(s)) => (cfg.step_product / (s * k2), s),
        (None, None) => {
            let t = cfg.step_product.sqrt() / kn;
            (t, t)
        }
    })
}

fn solve(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let r = solve_trace(cfg)?;
    let mut files = Vec::new();
    write(opts.out_dir.join("trace.csv"), &r.trace.to_csv(), &mut files)?;
    let summary = r.summary_line();
    write(opts.out_dir.join("summary.txt"), &format!("{summary}\n"), &mut files)?;
    Ok(RunOutcome { status: Status::Pass, summary, files })
}

/// Header of the aggregate sweep CSV.
pub const SWEEP_CSV_HEADER: &str = "param,final_dist2,fitted_rate";

fn sweep(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let param = cfg.sweep_param.as_deref().ok_or_else(|| anyhow!("missing required key: sweep_param"))?;
    let jobs: Vec<RunConfig> = cfg
        .sweep_values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            c.set_sweep_value(param, v).map_err(|e: ConfigError| anyhow!("sweep value {v}: {e}"))?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.workers.max(1)).build()?;
    // the pool only computes; files are written below in parameter order
    let results: Vec<Result<SolveResult>> = pool.install(|| jobs.par_iter().map(solve_trace).collect());
    let mut files = Vec::new();
    let mut agg = format!("{SWEEP_CSV_HEADER}\n");
    for (i, (v, r)) in cfg.sweep_values.iter().zip(results).enumerate() {
        let r = r.with_context(|| format!("{param} = {v}"))?;
        write(trace_path(&opts.out_dir, param, i), &r.trace.to_csv(), &mut files)?;
        agg.push_str(&format!("{},{},{}\n", fmt17(*v), fmt17(r.trace.last().dist2_full), fmt17(r.fit.map_or(f64::NAN, |f| f.rate))));
    }
    write(opts.out_dir.join("sweep.csv"), &agg, &mut files)?;
    let summary = format!("param={param} runs={}", cfg.sweep_values.len());
    Ok(RunOutcome { status: Status::Pass, summary, files })
}

fn trace_path(dir: &Path, param: &str, i: usize) -> PathBuf {
    dir.join(format!("trace_{param}_{i}.csv"))
}
