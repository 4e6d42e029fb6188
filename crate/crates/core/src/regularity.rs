//! Sampling-based certification of partial strong submonotonicity (PSM),
//! partial subregularity (PSR), the common projection condition, gap
//! functions, marginalised saddle conditions and the PSM to PSR conversion.
//!
//! A pass is evidence on the sampled points; a fail comes with explicit
//! counterexamples and is definitive up to rounding.

use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{
    dot, psd_check, symmetric_eigenvalues, DenseMatrix, LinalgError, PrimalDualVector,
    StructuredOperator,
};
use crate::scalar::{fmt17, fmt_vec17, Scalar};
use crate::setvalued::{Interval, ProxFunction, SaddleProblem, SetValue, SetValuedError, SolutionSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegularityError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    SetValued(#[from] SetValuedError),
    #[error("base point is not in the graph: w_hat not in T(u_hat) (distance {0:e})")]
    BaseNotInGraph(f64),
    #[error("operator {0} is not positive semidefinite (min eigenvalue {1:e})")]
    NotPsd(&'static str, f64),
    #[error("solution set is empty")]
    EmptySolutionSet,
    #[error("invalid query: {0}")]
    Invalid(String),
}

/// A set-valued map `T: ℝⁿ × ℝᵐ ⇉ ℝⁿ⁺ᵐ` whose values are finite unions of
/// [`SetValue`]s. An empty list (or only empty members) means `T(u) = ∅`.
pub trait SetMap<T: Scalar>: Send + Sync {
    fn dims(&self) -> (usize, usize);
    fn eval(&self, u: &PrimalDualVector<T>) -> Vec<SetValue<T>>;
    fn name(&self) -> String;
}

impl<T: Scalar> SetMap<T> for SaddleProblem<T> {
    fn dims(&self) -> (usize, usize) {
        (self.n(), self.m())
    }

    fn eval(&self, u: &PrimalDualVector<T>) -> Vec<SetValue<T>> {
        match self.eval_h(u) {
            Ok(h) if !h.is_empty() => vec![h],
            _ => Vec::new(),
        }
    }

    fn name(&self) -> String {
        "saddle_h".into()
    }
}

/// `T = ∂f` (or `T_C` for distance maps) on `ℝⁿ`, with `m = 0`.
#[derive(Debug, Clone)]
pub struct SubdifferentialMap<T> {
    pub f: ProxFunction<T>,
    pub label: String,
}

impl<T: Scalar> SubdifferentialMap<T> {
    pub fn new(f: ProxFunction<T>, label: impl Into<String>) -> Self {
        Self { f, label: label.into() }
    }
}

impl<T: Scalar> SetMap<T> for SubdifferentialMap<T> {
    fn dims(&self) -> (usize, usize) {
        (self.f.dim, 0)
    }

    fn eval(&self, u: &PrimalDualVector<T>) -> Vec<SetValue<T>> {
        self.f
            .subdiff_all(u.x())
            .map(|v| v.into_iter().filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

type MapFn<T> = dyn Fn(&PrimalDualVector<T>) -> Vec<SetValue<T>> + Send + Sync;

/// A map given by a closure.
#[derive(Clone)]
pub struct FnMap<T> {
    n: usize,
    m: usize,
    label: String,
    f: Arc<MapFn<T>>,
}

impl<T: Scalar> FnMap<T> {
    pub fn new(
        n: usize,
        m: usize,
        label: impl Into<String>,
        f: impl Fn(&PrimalDualVector<T>) -> Vec<SetValue<T>> + Send + Sync + 'static,
    ) -> Self {
        Self { n, m, label: label.into(), f: Arc::new(f) }
    }
}

impl<T> std::fmt::Debug for FnMap<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FnMap({})", self.label)
    }
}

impl<T: Scalar> SetMap<T> for FnMap<T> {
    fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    fn eval(&self, u: &PrimalDualVector<T>) -> Vec<SetValue<T>> {
        (self.f)(u).into_iter().filter(|s| !s.is_empty()).collect()
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Extra constraint on sampled points.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainRestriction<T> {
    None,
    NonnegativeOrthant,
    /// `{0} ∪ (0, ∞)^d`.
    OpenPositiveOrthantPlusOrigin,
    Box { lo: Vec<T>, hi: Vec<T> },
    Ball { center: Vec<T>, radius: T },
}

impl<T: Scalar> DomainRestriction<T> {
    pub fn contains(&self, u: &[T]) -> bool {
        let tol = T::c(1e-12);
        match self {
            Self::None => true,
            Self::NonnegativeOrthant => u.iter().all(|&v| v >= -tol),
            Self::OpenPositiveOrthantPlusOrigin => {
                u.iter().all(|&v| v == T::zero()) || u.iter().all(|&v| v > T::zero())
            }
            Self::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&v, (&l, &h))| v >= l - tol * (T::one() + l.abs()) && v <= h + tol * (T::one() + h.abs())),
            Self::Ball { center, radius } => {
                let d: T = u.iter().zip(center).map(|(&a, &b)| (a - b) * (a - b)).sum();
                d.sqrt() <= *radius * (T::one() + tol) + tol
            }
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::NonnegativeOrthant => "nonnegative_orthant",
            Self::OpenPositiveOrthantPlusOrigin => "open_positive_orthant_plus_origin",
            Self::Box { .. } => "box",
            Self::Ball { .. } => "ball",
        }
    }
}

/// Sampled neighbourhood `𝒰` of the base point: the axis box
/// `center ± half_widths` (or `± radius`) intersected with the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSpec<T> {
    pub center: PrimalDualVector<T>,
    pub radius: T,
    /// Per-coordinate half widths; empty means `radius` everywhere.
    pub half_widths: Vec<T>,
    pub grid_points_per_axis: usize,
    pub random_samples: usize,
    pub domain: DomainRestriction<T>,
    pub include_special: bool,
    pub extra_points: Vec<PrimalDualVector<T>>,
}

impl<T: Scalar> NeighborhoodSpec<T> {
    pub fn new(center: PrimalDualVector<T>, radius: T) -> Self {
        Self {
            center,
            radius,
            half_widths: Vec::new(),
            grid_points_per_axis: 41,
            random_samples: 2000,
            domain: DomainRestriction::None,
            include_special: true,
            extra_points: Vec::new(),
        }
    }

    pub fn with_domain(mut self, d: DomainRestriction<T>) -> Self {
        self.domain = d;
        self
    }

    pub fn with_half_widths(mut self, h: Vec<T>) -> Self {
        self.half_widths = h;
        self
    }

    pub fn with_grid(mut self, g: usize) -> Self {
        self.grid_points_per_axis = g;
        self
    }

    pub fn with_random(mut self, r: usize) -> Self {
        self.random_samples = r;
        self
    }

    pub fn with_extra_points(mut self, pts: Vec<PrimalDualVector<T>>) -> Self {
        self.extra_points.extend(pts);
        self
    }

    fn half_width(&self, k: usize) -> T {
        self.half_widths.get(k).copied().unwrap_or(self.radius)
    }

    fn validate(&self) -> Result<(), RegularityError> {
        if !(self.radius > T::zero()) && self.half_widths.is_empty() {
            return Err(RegularityError::Invalid("neighbourhood radius must be > 0".into()));
        }
        if self.grid_points_per_axis < 3 {
            return Err(RegularityError::Invalid("grid_points_per_axis must be >= 3".into()));
        }
        if !self.half_widths.is_empty() && self.half_widths.len() != self.center.dim() {
            return Err(RegularityError::Invalid("half_widths length must match dimension".into()));
        }
        Ok(())
    }

    /// Point lies in the sampling box and the domain.
    pub fn admits(&self, u: &[T]) -> bool {
        let tol = T::c(1e-12);
        let in_box = u.iter().enumerate().all(|(k, &v)| {
            let c = self.center.get(k);
            (v - c).abs() <= self.half_width(k) * (T::one() + tol) + tol * (T::one() + c.abs())
        });
        in_box && self.domain.contains(u)
    }
}

/// Knobs shared by every check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingOptions {
    pub seed: u64,
    pub workers: usize,
    pub revalidation_samples: usize,
    pub max_counterexamples: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            revalidation_samples: 1000,
            max_counterexamples: 100,
        }
    }
}

/// Default verdict slack.
pub const DEFAULT_SLACK: f64 = 1e-9;
const GRID_LIMIT: f64 = 1e5;
const SOLUTION_GRID: usize = 33;

fn rand_point<T: Scalar>(nb: &NeighborhoodSpec<T>, rng: &mut ChaCha8Rng) -> Vec<T> {
    (0..nb.center.dim())
        .map(|k| {
            let r: f64 = rng.gen_range(-1.0..=1.0);
            nb.center.get(k) + nb.half_width(k) * T::c(r)
        })
        .collect()
}

/// Grid, random and special sample points, in that order, all admitted by
/// the neighbourhood.
pub fn sample_points<T: Scalar>(
    nb: &NeighborhoodSpec<T>,
    sol: &SolutionSet<T>,
    seed: u64,
) -> Vec<PrimalDualVector<T>> {
    let n = nb.center.n();
    let d = nb.center.dim();
    let c = nb.center.to_flat();
    let mut flat: Vec<Vec<T>> = Vec::new();

    let g = nb.grid_points_per_axis;
    if (g as f64).powi(d as i32) <= GRID_LIMIT {
        let total = g.pow(d as u32);
        for idx in 0..total {
            let mut rem = idx;
            let p: Vec<T> = (0..d)
                .map(|k| {
                    let j = rem % g;
                    rem /= g;
                    let t = T::c(-1.0) + T::c(2.0) * T::from_usize_lossy(j) / T::from_usize_lossy(g - 1);
                    c[k] + nb.half_width(k) * t
                })
                .collect();
            flat.push(p);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..nb.random_samples {
        flat.push(rand_point(nb, &mut rng));
    }

    flat.push(c.clone());
    if nb.include_special {
        let reps: Vec<Vec<T>> = sol.representatives(5).iter().map(PrimalDualVector::to_flat).collect();
        for s in &reps {
            flat.push(s.clone());
            flat.push(c.iter().zip(s).map(|(&ci, &si)| T::c(2.0) * ci - si).collect());
            flat.push(s.iter().map(|&v| -v).collect());
        }
        if let Some(el) = sol.finite_elements() {
            let pts: Vec<Vec<T>> = el.iter().map(PrimalDualVector::to_flat).collect();
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    flat.push(pts[i].iter().zip(&pts[j]).map(|(&a, &b)| (a + b) / T::c(2.0)).collect());
                }
            }
        }
        for k in 0..d {
            let h = nb.half_width(k);
            for j in 1..=30 {
                let step = h * T::c(2f64.powi(-j));
                for sgn in [T::one(), -T::one()] {
                    let mut p = c.clone();
                    p[k] += sgn * step;
                    flat.push(p);
                }
            }
        }
        if let DomainRestriction::Box { lo, hi } = &nb.domain {
            if d <= 12 {
                for mask in 0..(1usize << d) {
                    flat.push((0..d).map(|k| if (mask >> k) & 1 == 1 { hi[k] } else { lo[k] }).collect());
                }
            }
        }
    }
    flat.extend(nb.extra_points.iter().map(PrimalDualVector::to_flat));

    flat.into_iter()
        .filter(|p| p.len() == d && p.iter().all(|v| v.is_finite()) && nb.admits(p))
        .map(|p| PrimalDualVector::from_flat(n, &p).expect("n >= 1"))
        .collect()
}

/// Fresh uniform points for the slow re-validation path.
fn revalidation_points<T: Scalar>(nb: &NeighborhoodSpec<T>, opts: &SamplingOptions) -> Vec<PrimalDualVector<T>> {
    let seed = opts.seed ^ 0x5EED_0F5E_ED0F_5EED;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = nb.center.n();
    let mut out = Vec::with_capacity(opts.revalidation_samples);
    let mut attempts = 0;
    while out.len() < opts.revalidation_samples && attempts < 50 * opts.revalidation_samples.max(1) {
        attempts += 1;
        let p = rand_point(nb, &mut rng);
        if nb.admits(&p) {
            out.push(PrimalDualVector::from_flat(n, &p).expect("n >= 1"));
        }
    }
    out
}

fn par_map<T, R, F>(points: &[PrimalDualVector<T>], workers: usize, f: F) -> Vec<R>
where
    T: Scalar,
    R: Send,
    F: Fn(&PrimalDualVector<T>) -> R + Sync + Send,
{
    if workers <= 1 {
        return points.iter().map(&f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| points.par_iter().map(&f).collect()),
        Err(_) => points.iter().map(&f).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
        }
    }

    pub fn is_pass(self) -> bool {
        self == Self::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Psm,
    Psr,
    Projection,
    Gap,
    Marginal,
}

impl CheckKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Psm => "psm",
            Self::Psr => "psr",
            Self::Projection => "projection",
            Self::Gap => "gap",
            Self::Marginal => "marginal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample<T> {
    pub u: PrimalDualVector<T>,
    pub w: Vec<T>,
    pub margin: T,
}

/// Outcome of a regularity check.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport<T> {
    pub kind: CheckKind,
    pub map_name: String,
    pub verdict: Verdict,
    /// Most negative margin (LHS − RHS) over all evaluated samples.
    pub worst_margin: T,
    pub counterexamples: Vec<Counterexample<T>>,
    pub samples_evaluated: usize,
    /// Points where `T(u)` was empty.
    pub skipped: usize,
    pub slack: T,
    /// Infima over the solution set were taken over a sample.
    pub sampled_infimum: bool,
    /// The slow path ran (only after a fast-path pass).
    pub revalidated: bool,
    /// The slow path overturned a fast-path pass.
    pub revalidation_flipped: bool,
}

impl<T: Scalar> CertificateReport<T> {
    pub fn passed(&self) -> bool {
        self.verdict.is_pass()
    }

    /// Line-oriented text: a header, then one line per counterexample.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} map={} verdict={} worst_margin={} samples={} skipped={} slack={} inf={} revalidated={}",
            self.kind.as_str(),
            self.map_name,
            self.verdict.as_str(),
            fmt17(self.worst_margin),
            self.samples_evaluated,
            self.skipped,
            fmt17(self.slack),
            if self.sampled_infimum { "sampled" } else { "exact" },
            self.revalidated,
        );
        for c in &self.counterexamples {
            let _ = writeln!(
                s,
                "u={} w={} margin={}",
                fmt_vec17(&c.u.to_flat()),
                fmt_vec17(&c.w),
                fmt17(c.margin)
            );
        }
        s
    }
}

type Outcome<T> = Option<(T, Vec<T>)>;

/// Collects per-sample outcomes into a report; runs the slow path on a pass.
#[allow(clippy::too_many_arguments)]
fn assemble<T, F, G>(
    kind: CheckKind,
    map_name: String,
    nb: &NeighborhoodSpec<T>,
    points: Vec<PrimalDualVector<T>>,
    opts: &SamplingOptions,
    slack: T,
    sampled_infimum: bool,
    fast: F,
    slow: G,
) -> CertificateReport<T>
where
    T: Scalar,
    F: Fn(&PrimalDualVector<T>) -> Outcome<T> + Sync + Send,
    G: Fn(&PrimalDualVector<T>) -> Outcome<T> + Sync + Send,
{
    let outcomes = par_map(&points, opts.workers, &fast);
    let mut worst = T::infinity();
    let mut skipped = 0;
    let mut cex: Vec<(usize, Counterexample<T>)> = Vec::new();
    for (i, (u, o)) in points.iter().zip(outcomes).enumerate() {
        match o {
            None => skipped += 1,
            Some((m, w)) => {
                if m < worst || m.is_nan() {
                    worst = if m.is_nan() { T::neg_infinity() } else { m };
                }
                if m < -slack || m.is_nan() {
                    cex.push((i, Counterexample { u: u.clone(), w, margin: m }));
                }
            }
        }
    }
    let evaluated = points.len() - skipped;
    let mut verdict = if worst < -slack { Verdict::Fail } else { Verdict::Pass };
    let mut revalidated = false;
    let mut flipped = false;
    if verdict == Verdict::Pass && opts.revalidation_samples > 0 {
        revalidated = true;
        let rpts = revalidation_points(nb, opts);
        let routs = par_map(&rpts, opts.workers, &slow);
        let base = points.len();
        for (i, (u, o)) in rpts.iter().zip(routs).enumerate() {
            if let Some((m, w)) = o {
                if m < -slack || m.is_nan() {
                    flipped = true;
                    worst = worst.min(if m.is_nan() { T::neg_infinity() } else { m });
                    cex.push((base + i, Counterexample { u: u.clone(), w, margin: m }));
                }
            }
        }
        if flipped {
            verdict = Verdict::Fail;
        }
    }
    if cex.len() > opts.max_counterexamples {
        cex.sort_by(|a, b| a.1.margin.partial_cmp(&b.1.margin).unwrap_or(std::cmp::Ordering::Equal));
        cex.truncate(opts.max_counterexamples);
        cex.sort_by_key(|(i, _)| *i);
    }
    CertificateReport {
        kind,
        map_name,
        verdict,
        worst_margin: worst,
        counterexamples: cex.into_iter().map(|(_, c)| c).collect(),
        samples_evaluated: evaluated,
        skipped,
        slack,
        sampled_infimum,
        revalidated,
        revalidation_flipped: flipped,
    }
}

/// A weight operator with cached diagonal and dense forms.
#[derive(Debug, Clone)]
pub struct Weight<T> {
    pub op: StructuredOperator<T>,
    diag: Option<Vec<T>>,
    /// Diagonal of the symmetric part, when that part is diagonal.
    qdiag: Option<Vec<T>>,
    dense: OnceLock<(DenseMatrix<T>, T)>,
}

impl<T: Scalar> Weight<T> {
    pub fn new(op: StructuredOperator<T>) -> Self {
        let (n, m) = (op.n(), op.m());
        let expand = |a: T, d: T| {
            let mut v = vec![a; n];
            v.extend(std::iter::repeat(d).take(m));
            v
        };
        let diag = op.is_block_diagonal().then(|| expand(op.a, op.d));
        let qdiag = (op.is_block_diagonal() || op.b + op.c == T::zero()).then(|| expand(op.a, op.d));
        Self { op, diag, qdiag, dense: OnceLock::new() }
    }

    fn n(&self) -> usize {
        self.op.n()
    }

    /// Diagonal of the operator itself, if block diagonal.
    pub fn diag(&self) -> Option<&[T]> {
        self.diag.as_deref()
    }

    /// Diagonal describing the quadratic form, if there is one.
    pub fn quad_diag(&self) -> Option<&[T]> {
        self.qdiag.as_deref()
    }

    fn dense(&self) -> &(DenseMatrix<T>, T) {
        self.dense.get_or_init(|| {
            let d = self.op.symmetric_part().to_dense();
            let l = symmetric_eigenvalues(&d).last().copied().unwrap_or(T::zero()).max(T::zero());
            (d, l)
        })
    }

    /// `⟨W v, v⟩` without clamping.
    pub fn quad(&self, v: &[T]) -> T {
        if let Some(dg) = &self.qdiag {
            return v.iter().zip(dg).map(|(&a, &w)| w * a * a).sum();
        }
        let p = PrimalDualVector::from_flat(self.n(), v).expect("n >= 1");
        self.op.quad_form(&p).expect("dimensions validated")
    }

    /// `Wᵀ v`.
    pub fn apply_adjoint(&self, v: &[T]) -> Vec<T> {
        if let Some(dg) = &self.diag {
            return v.iter().zip(dg).map(|(&a, &w)| w * a).collect();
        }
        let p = PrimalDualVector::from_flat(self.n(), v).expect("n >= 1");
        self.op.adjoint().apply(&p).expect("dimensions validated").to_flat()
    }

    fn sym_apply(&self, v: &[T]) -> Vec<T> {
        self.dense().0.matvec(v)
    }
}

/// `min_{z ∈ box} ⟨A(u − z), u − z⟩` for PSD `A` by projected gradient.
fn box_qp<T: Scalar>(w: &Weight<T>, u: &[T], bx: &[Interval<T>]) -> (T, Vec<T>) {
    let mut z: Vec<T> = u.iter().zip(bx).map(|(&v, i)| i.clamp(v)).collect();
    let lmax = w.dense().1;
    if lmax > T::zero() {
        let step = T::one() / (T::c(2.0) * lmax);
        for _ in 0..20_000 {
            let r: Vec<T> = u.iter().zip(&z).map(|(&a, &b)| a - b).collect();
            let g = w.sym_apply(&r); // gradient in z is −2 A r
            let mut change = T::zero();
            let mut scale = T::zero();
            for k in 0..z.len() {
                let nz = bx[k].clamp(z[k] + step * T::c(2.0) * g[k]);
                change = change.max((nz - z[k]).abs());
                scale = scale.max(nz.abs());
                z[k] = nz;
            }
            if change <= T::c(1e-15) * (T::one() + scale) {
                break;
            }
        }
    }
    let r: Vec<T> = u.iter().zip(&z).map(|(&a, &b)| a - b).collect();
    (w.quad(&r).max(T::zero()), z)
}

/// `dist²_W(u, S)` and a minimiser. Exact for finite sets and for products
/// under diagonal weights; projected gradient otherwise.
pub fn dist_sq_to_solution<T: Scalar>(u: &[T], sol: &SolutionSet<T>, w: &Weight<T>) -> (T, Vec<T>) {
    match sol {
        SolutionSet::Product { intervals, .. } => {
            if let Some(dg) = w.quad_diag() {
                if dg.iter().all(|&x| x >= T::zero()) {
                    let z: Vec<T> = u.iter().zip(intervals).map(|(&v, i)| i.clamp(v)).collect();
                    let d = u
                        .iter()
                        .zip(&z)
                        .zip(dg)
                        .map(|((&a, &b), &wt)| wt * (a - b) * (a - b))
                        .sum();
                    return (d, z);
                }
            }
            box_qp(w, u, intervals)
        }
        _ => {
            let mut best = (T::infinity(), Vec::new());
            for a in sol.finite_elements().unwrap_or_default() {
                let af = a.to_flat();
                let r: Vec<T> = u.iter().zip(&af).map(|(&p, &q)| p - q).collect();
                let q = w.quad(&r).max(T::zero());
                if q < best.0 {
                    best = (q, af);
                }
            }
            best
        }
    }
}

/// `dist²_W(p, S)` over a set value `S`. Exact for diagonal nonnegative
/// weights; projected gradient for boxes otherwise; corner minimum with rays.
fn dist_sq_to_setvalue<T: Scalar>(p: &[T], s: &SetValue<T>, w: &Weight<T>) -> (T, Vec<T>, bool) {
    if let Some(dg) = w.quad_diag() {
        if dg.iter().all(|&x| x >= T::zero()) {
            let sq: Vec<T> = dg.iter().map(|x| x.sqrt()).collect();
            let scaled = s.scale_coords(&sq);
            let ps: Vec<T> = p.iter().zip(&sq).map(|(&a, &b)| a * b).collect();
            if let Some(proj) = scaled.project(&ps) {
                // Map back coordinate-wise where the weight is positive.
                let base = s.project(p).unwrap_or_else(|| p.to_vec());
                let wv: Vec<T> = proj
                    .iter()
                    .zip(&sq)
                    .zip(base)
                    .map(|((&q, &r), b)| if r > T::zero() { q / r } else { b })
                    .collect();
                let d = ps.iter().zip(&proj).map(|(&a, &b)| (a - b) * (a - b)).sum();
                return (d, wv, false);
            }
            return (T::infinity(), Vec::new(), false);
        }
    }
    if s.rays.is_empty() {
        let bx: Vec<Interval<T>> = (0..s.dim()).map(|k| s.coord_interval(k)).collect();
        let (d, z) = box_qp(w, p, &bx);
        return (d, z, false);
    }
    let mut best = (T::infinity(), Vec::new(), true);
    for c in s.corners(256) {
        let r: Vec<T> = p.iter().zip(&c).map(|(&a, &b)| a - b).collect();
        let q = w.quad(&r);
        if q < best.0 {
            best = (q, c, true);
        }
    }
    best
}

/// A concrete element of `S` minimising `⟨w, d⟩`; along a descent ray it
/// moves `1e3` units.
fn selection_for<T: Scalar>(s: &SetValue<T>, d: &[T]) -> Vec<T> {
    let mut w: Vec<T> = (0..s.dim())
        .map(|k| {
            let b = s.boxes[k];
            let reps = b.representative_endpoints();
            let v = if d[k] > T::zero() {
                reps[0]
            } else if d[k] < T::zero() {
                reps[reps.len() - 1]
            } else {
                b.clamp(T::zero())
            };
            s.offset[k] + v
        })
        .collect();
    let dn = dot(d, d).sqrt();
    for r in &s.rays {
        if dot(r, d) < -T::c(1e-12) * dot(r, r).sqrt() * dn {
            w.iter_mut().zip(r).for_each(|(x, &rv)| *x += T::c(1e3) * rv);
        }
    }
    w
}

/// Per-coordinate `min_{t ∈ J} inf_{w ∈ I} (w − ŵ)·nk·(u − t) + ck·(u − t)²`.
///
/// Returns the value, the minimising `t` and a matching `w`.
fn coord_psm_min<T: Scalar>(uk: T, j: Interval<T>, i: Interval<T>, what: T, nk: T, ck: T) -> (T, T, T) {
    let ip = i.shift(-what);
    let s_lo = uk - j.hi;
    let s_hi = uk - j.lo;
    let zero = T::zero();
    let (e_pos, e_neg) = if nk > zero {
        (ip.lo, ip.hi)
    } else if nk < zero {
        (ip.hi, ip.lo)
    } else {
        (zero, zero)
    };
    let pick_w = |s: T| -> T {
        let d = nk * s;
        let reps = i.representative_endpoints();
        if d > zero {
            reps[0]
        } else if d < zero {
            reps[reps.len() - 1]
        } else {
            i.clamp(what)
        }
    };
    let neg_inf = |s: T| (T::neg_infinity(), uk - s, pick_w(s));
    let has_pos = s_hi > zero;
    let has_neg = s_lo < zero;
    if nk != zero {
        if has_pos && !e_pos.is_finite() {
            return neg_inf(if s_hi.is_finite() { s_hi } else { T::one() });
        }
        if has_neg && !e_neg.is_finite() {
            return neg_inf(if s_lo.is_finite() { s_lo } else { -T::one() });
        }
    }
    let a_pos = e_pos * nk;
    let a_neg = e_neg * nk;
    if !s_hi.is_finite() && (ck < zero || (ck == zero && a_pos < zero)) {
        return neg_inf(s_lo.max(zero) + T::c(1e3));
    }
    if !s_lo.is_finite() && (ck < zero || (ck == zero && a_neg > zero)) {
        return neg_inf(s_hi.min(zero) - T::c(1e3));
    }
    let g = |s: T| -> T {
        let lin = if s > zero {
            a_pos * s
        } else if s < zero {
            a_neg * s
        } else {
            zero
        };
        lin + ck * s * s
    };
    let mut cands: Vec<T> = Vec::with_capacity(8);
    if s_lo.is_finite() {
        cands.push(s_lo);
    }
    if s_hi.is_finite() {
        cands.push(s_hi);
    }
    if s_lo <= zero && zero <= s_hi {
        cands.push(zero);
    }
    let clip = |v: T, lo: T, hi: T| v.max(lo).min(hi);
    if has_pos {
        let lo = s_lo.max(zero);
        let hi = s_hi;
        if ck > zero {
            cands.push(clip(-a_pos / (T::c(2.0) * ck), lo, hi));
        }
        if hi.is_finite() {
            cands.push((lo + hi) / T::c(2.0));
        }
    }
    if has_neg {
        let lo = s_lo;
        let hi = s_hi.min(zero);
        if ck > zero {
            cands.push(clip(-a_neg / (T::c(2.0) * ck), lo, hi));
        }
        if lo.is_finite() {
            cands.push((lo + hi) / T::c(2.0));
        }
    }
    let mut best = (T::infinity(), uk, i.clamp(what));
    for s in cands {
        if !s.is_finite() {
            continue;
        }
        let v = g(s);
        if v < best.0 {
            best = (v, uk - s, pick_w(s));
        }
    }
    best
}

/// A PSM or PSR query.
#[derive(Clone)]
pub struct RegularityQuery<T: Scalar> {
    pub map: Arc<dyn SetMap<T>>,
    pub base_u: PrimalDualVector<T>,
    pub base_w: Vec<T>,
    /// `Ξ` for PSM, `P` for PSR.
    pub xi: StructuredOperator<T>,
    pub n_op: StructuredOperator<T>,
    pub m_op: StructuredOperator<T>,
    pub solution: SolutionSet<T>,
    pub neighborhood: NeighborhoodSpec<T>,
    pub slack: T,
}

impl<T: Scalar> std::fmt::Debug for RegularityQuery<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegularityQuery")
            .field("map", &self.map.name())
            .field("base_u", &self.base_u)
            .field("base_w", &self.base_w)
            .field("xi", &self.xi)
            .field("n_op", &self.n_op)
            .field("m_op", &self.m_op)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> RegularityQuery<T> {
    /// Validates `ŵ ∈ T(û)`, dimensions and `M ≥ 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        map: Arc<dyn SetMap<T>>,
        base_u: PrimalDualVector<T>,
        base_w: Vec<T>,
        xi: StructuredOperator<T>,
        n_op: StructuredOperator<T>,
        m_op: StructuredOperator<T>,
        solution: SolutionSet<T>,
        neighborhood: NeighborhoodSpec<T>,
    ) -> Result<Self, RegularityError> {
        let dims = map.dims();
        if base_u.dims() != dims || base_w.len() != dims.0 + dims.1 {
            return Err(RegularityError::Invalid("base point dimension mismatch".into()));
        }
        for op in [&xi, &n_op, &m_op] {
            if (op.n(), op.m()) != dims {
                return Err(RegularityError::Invalid("operator dimension mismatch".into()));
            }
        }
        if solution.is_empty() {
            return Err(RegularityError::EmptySolutionSet);
        }
        if solution.dims() != dims || neighborhood.center.dims() != dims {
            return Err(RegularityError::Invalid("solution/neighbourhood dimension mismatch".into()));
        }
        neighborhood.validate()?;
        let vals = map.eval(&base_u);
        let dist = vals
            .iter()
            .map(|s| s.dist_sq(&base_w).sqrt())
            .fold(T::infinity(), T::min);
        if !(dist <= T::c(1e-9)) {
            return Err(RegularityError::BaseNotInGraph(dist.as_f64()));
        }
        let p = psd_check(&m_op, T::c(1e-12));
        if !p.is_psd {
            return Err(RegularityError::NotPsd("M", p.min_eigenvalue.as_f64()));
        }
        xi.sub(&m_op)?;
        Ok(Self {
            map,
            base_u,
            base_w,
            xi,
            n_op,
            m_op,
            solution,
            neighborhood,
            slack: T::c(DEFAULT_SLACK),
        })
    }

    pub fn with_slack(mut self, slack: T) -> Self {
        self.slack = slack;
        self
    }

    /// Replaces the triple, keeping map, base, solution set and neighbourhood.
    pub fn with_triple(
        &self,
        xi: StructuredOperator<T>,
        n_op: StructuredOperator<T>,
        m_op: StructuredOperator<T>,
    ) -> Result<Self, RegularityError> {
        let mut q = Self::new(
            self.map.clone(),
            self.base_u.clone(),
            self.base_w.clone(),
            xi,
            n_op,
            m_op,
            self.solution.clone(),
            self.neighborhood.clone(),
        )?;
        q.slack = self.slack;
        Ok(q)
    }

    fn uses_exact_product(&self, n: &Weight<T>, c: &Weight<T>) -> bool {
        matches!(self.solution, SolutionSet::Product { .. }) && n.diag().is_some() && c.quad_diag().is_some()
    }

    /// `inf_{u*} inf_{w ∈ S} ⟨N(w − ŵ), u − u*⟩ + q_C(u − u*)` with a
    /// concrete minimising `w`. The flag reports a sampled infimum.
    fn psm_inf(&self, u: &[T], s: &SetValue<T>, n: &Weight<T>, c: &Weight<T>) -> (T, Vec<T>, bool) {
        if let (SolutionSet::Product { intervals, .. }, true) = (&self.solution, s.rays.is_empty()) {
            if self.uses_exact_product(n, c) {
                let nd = n.diag().expect("diagonal");
                let cd = c.quad_diag().expect("diagonal");
                let mut total = T::zero();
                let mut w = Vec::with_capacity(u.len());
                for k in 0..u.len() {
                    let (v, _t, wk) =
                        coord_psm_min(u[k], intervals[k], s.coord_interval(k), self.base_w[k], nd[k], cd[k]);
                    total += v;
                    w.push(wk);
                }
                return (total, w, false);
            }
        }
        let (cands, sampled) = match self.solution.finite_elements() {
            Some(f) => (f, false),
            None => (self.solution.representatives(SOLUTION_GRID), true),
        };
        let mut best = (T::infinity(), Vec::new(), sampled);
        for a in cands {
            let d: Vec<T> = u.iter().zip(a.to_flat()).map(|(&p, q)| p - q).collect();
            let nd = n.apply_adjoint(&d);
            let lin = s.inf_linear(&self.base_w, &nd);
            let v = lin + c.quad(&d);
            if v < best.0 || best.1.is_empty() {
                best = (v, selection_for(s, &nd), sampled);
            }
        }
        best
    }

    fn weights_psm(&self) -> (Weight<T>, Weight<T>, Weight<T>) {
        let c = self.m_op.sub(&self.xi).expect("validated");
        (Weight::new(self.n_op.clone()), Weight::new(c), Weight::new(self.m_op.clone()))
    }

    /// PSM margin at `u` minimised over `w ∈ T(u)`, or `None` if `T(u) = ∅`.
    pub fn psm_margin(&self, u: &PrimalDualVector<T>) -> Option<(T, Vec<T>)> {
        let (n, c, m) = self.weights_psm();
        self.psm_margin_with(u, &n, &c, &m).map(|(v, w, _)| (v, w))
    }

    fn psm_margin_with(
        &self,
        u: &PrimalDualVector<T>,
        n: &Weight<T>,
        c: &Weight<T>,
        m: &Weight<T>,
    ) -> Option<(T, Vec<T>, bool)> {
        let vals = self.map.eval(u);
        if vals.is_empty() {
            return None;
        }
        let uf = u.to_flat();
        let (dm, _) = dist_sq_to_solution(&uf, &self.solution, m);
        let mut best: Option<(T, Vec<T>, bool)> = None;
        for s in &vals {
            let (v, w, sampled) = self.psm_inf(&uf, s, n, c);
            if best.as_ref().map_or(true, |b| v < b.0) {
                best = Some((v, w, sampled));
            }
        }
        best.map(|(v, w, s)| (v - dm, w, s))
    }

    /// PSM margin at a fixed selection `w`.
    pub fn psm_margin_at(&self, u: &PrimalDualVector<T>, w: &[T]) -> T {
        let (n, c, m) = self.weights_psm();
        let uf = u.to_flat();
        let (dm, _) = dist_sq_to_solution(&uf, &self.solution, &m);
        let (v, _, _) = self.psm_inf(&uf, &SetValue::point(w.to_vec()), &n, &c);
        v - dm
    }

    fn psm_slow(&self, u: &PrimalDualVector<T>, n: &Weight<T>, c: &Weight<T>, m: &Weight<T>) -> Outcome<T> {
        let vals = self.map.eval(u);
        if vals.is_empty() {
            return None;
        }
        let uf = u.to_flat();
        let (dm, _) = dist_sq_to_solution(&uf, &self.solution, m);
        let sols: Vec<Vec<T>> = match self.solution.finite_elements() {
            Some(f) => f.iter().map(PrimalDualVector::to_flat).collect(),
            None => self.solution.representatives(SOLUTION_GRID).iter().map(PrimalDualVector::to_flat).collect(),
        };
        let mut best: Outcome<T> = None;
        for s in &vals {
            let mut ws = s.corners(64);
            if let Some(mn) = s.min_norm_element() {
                ws.push(mn);
            }
            for w in ws {
                let dw: Vec<T> = w.iter().zip(&self.base_w).map(|(&a, &b)| a - b).collect();
                let ndw = n.op.apply(&PrimalDualVector::from_flat(u.n(), &dw).expect("n >= 1")).expect("dims");
                let ndw = ndw.to_flat();
                let mut inf = T::infinity();
                for a in &sols {
                    let d: Vec<T> = uf.iter().zip(a).map(|(&p, &q)| p - q).collect();
                    inf = inf.min(dot(&ndw, &d) + c.quad(&d));
                }
                let margin = inf - dm;
                if best.as_ref().map_or(true, |b| margin < b.0) {
                    best = Some((margin, w));
                }
            }
        }
        best
    }

    fn weights_psr(&self) -> (Weight<T>, Weight<T>, Weight<T>) {
        let mp = self.m_op.sub(&self.xi).expect("validated");
        (Weight::new(self.n_op.clone()), Weight::new(mp), Weight::new(self.m_op.clone()))
    }

    /// PSR margin at `u`, or `None` if `T(u) = ∅`. Also reports whether any
    /// infimum was approximated.
    pub fn psr_margin(&self, u: &PrimalDualVector<T>) -> Option<(T, Vec<T>)> {
        let (n, mp, m) = self.weights_psr();
        self.psr_margin_with(u, &n, &mp, &m).map(|(v, w, _)| (v, w))
    }

    fn psr_margin_with(
        &self,
        u: &PrimalDualVector<T>,
        n: &Weight<T>,
        mp: &Weight<T>,
        m: &Weight<T>,
    ) -> Option<(T, Vec<T>, bool)> {
        let vals = self.map.eval(u);
        if vals.is_empty() {
            return None;
        }
        let uf = u.to_flat();
        let mut best: Option<(T, Vec<T>, bool)> = None;
        for s in &vals {
            let (d, w, sampled) = dist_sq_to_setvalue(&self.base_w, s, n);
            if best.as_ref().map_or(true, |b| d < b.0) {
                best = Some((d, w, sampled));
            }
        }
        let (dn, w, sampled) = best?;
        let (dmp, _) = dist_sq_to_solution(&uf, &self.solution, mp);
        let (dm, _) = dist_sq_to_solution(&uf, &self.solution, m);
        Some((dn + dmp - dm, w, sampled))
    }

    /// PSR margin at a fixed selection `w`.
    pub fn psr_margin_at(&self, u: &PrimalDualVector<T>, w: &[T]) -> T {
        let (n, mp, m) = self.weights_psr();
        let uf = u.to_flat();
        let dw: Vec<T> = w.iter().zip(&self.base_w).map(|(&a, &b)| a - b).collect();
        let (dmp, _) = dist_sq_to_solution(&uf, &self.solution, &mp);
        let (dm, _) = dist_sq_to_solution(&uf, &self.solution, &m);
        n.quad(&dw) + dmp - dm
    }

    fn psr_slow(&self, u: &PrimalDualVector<T>, n: &Weight<T>, mp: &Weight<T>, m: &Weight<T>) -> Outcome<T> {
        let vals = self.map.eval(u);
        if vals.is_empty() {
            return None;
        }
        let uf = u.to_flat();
        let bx_all: Vec<(T, Vec<T>)> = vals
            .iter()
            .map(|s| {
                if s.rays.is_empty() {
                    let bx: Vec<Interval<T>> = (0..s.dim()).map(|k| s.coord_interval(k)).collect();
                    box_qp(n, &self.base_w, &bx)
                } else {
                    let mut best = (T::infinity(), Vec::new());
                    for c in s.corners(256) {
                        let r: Vec<T> = self.base_w.iter().zip(&c).map(|(&a, &b)| a - b).collect();
                        let q = n.quad(&r);
                        if q < best.0 {
                            best = (q, c);
                        }
                    }
                    best
                }
            })
            .collect();
        let (dn, w) = bx_all
            .into_iter()
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))?;
        let sols: Vec<Vec<T>> = match self.solution.finite_elements() {
            Some(f) => f.iter().map(PrimalDualVector::to_flat).collect(),
            None => self.solution.representatives(SOLUTION_GRID).iter().map(PrimalDualVector::to_flat).collect(),
        };
        let dmp = sols
            .iter()
            .map(|a| {
                let d: Vec<T> = uf.iter().zip(a).map(|(&p, &q)| p - q).collect();
                mp.quad(&d)
            })
            .fold(T::infinity(), T::min);
        let (dm, _) = dist_sq_to_solution(&uf, &self.solution, m);
        Some((dn + dmp - dm, w))
    }
}

/// Checks `(Ξ, N, M)`-partial strong submonotonicity:
/// `inf_{u*} ⟨w−ŵ, u−u*⟩_N + ‖u−u*‖²_{M−Ξ} ≥ dist²_M(u, inv T(ŵ))`.
pub fn check_psm<T: Scalar>(q: &RegularityQuery<T>, opts: &SamplingOptions) -> CertificateReport<T> {
    let pts = sample_points(&q.neighborhood, &q.solution, opts.seed);
    check_psm_on(q, pts, opts)
}

fn check_psm_on<T: Scalar>(
    q: &RegularityQuery<T>,
    pts: Vec<PrimalDualVector<T>>,
    opts: &SamplingOptions,
) -> CertificateReport<T> {
    let (n, c, m) = q.weights_psm();
    let exact_product = q.uses_exact_product(&n, &c);
    let sampled = !exact_product && q.solution.finite_elements().is_none();
    assemble(
        CheckKind::Psm,
        q.map.name(),
        &q.neighborhood,
        pts,
        opts,
        q.slack,
        sampled,
        |u| q.psm_margin_with(u, &n, &c, &m).map(|(v, w, _)| (v, w)),
        |u| q.psm_slow(u, &n, &c, &m),
    )
}

/// Checks `(P, N, M)`-partial subregularity:
/// `dist²_N(ŵ, T(u)) + dist²_{M−P}(u, inv T(ŵ)) ≥ dist²_M(u, inv T(ŵ))`.
///
/// Requires `M ≥ P`.
pub fn check_psr<T: Scalar>(
    q: &RegularityQuery<T>,
    opts: &SamplingOptions,
) -> Result<CertificateReport<T>, RegularityError> {
    let pts = sample_points(&q.neighborhood, &q.solution, opts.seed);
    check_psr_on(q, pts, opts)
}

fn check_psr_on<T: Scalar>(
    q: &RegularityQuery<T>,
    pts: Vec<PrimalDualVector<T>>,
    opts: &SamplingOptions,
) -> Result<CertificateReport<T>, RegularityError> {
    let mp_op = q.m_op.sub(&q.xi)?;
    let r = psd_check(&mp_op, T::c(1e-12));
    if !r.is_psd {
        return Err(RegularityError::NotPsd("M - P", r.min_eigenvalue.as_f64()));
    }
    let (n, mp, m) = q.weights_psr();
    let sampled_sol = !matches!(q.solution, SolutionSet::Product { .. }) && q.solution.finite_elements().is_none();
    Ok(assemble(
        CheckKind::Psr,
        q.map.name(),
        &q.neighborhood,
        pts,
        opts,
        q.slack,
        sampled_sol,
        |u| q.psr_margin_with(u, &n, &mp, &m).map(|(v, w, _)| (v, w)),
        |u| q.psr_slow(u, &n, &mp, &m),
    ))
}

/// Margin of an exact recomputation at a stored counterexample.
pub fn recompute_margin<T: Scalar>(q: &RegularityQuery<T>, kind: CheckKind, c: &Counterexample<T>) -> T {
    match kind {
        CheckKind::Psr => q.psr_margin_at(&c.u, &c.w),
        _ => q.psm_margin_at(&c.u, &c.w),
    }
}

/// Argmin set of `q_W(u − a)` over a solution set: finite index list, or a
/// per-coordinate interval box for products under diagonal weights.
enum ArgminSet<T> {
    Points(Vec<Vec<T>>),
    Box(Vec<Interval<T>>),
}

fn argmin_set<T: Scalar>(u: &[T], sol: &SolutionSet<T>, w: &Weight<T>) -> ArgminSet<T> {
    if let (SolutionSet::Product { intervals, .. }, Some(dg)) = (sol, w.quad_diag()) {
        return ArgminSet::Box(
            intervals
                .iter()
                .zip(u)
                .zip(dg)
                .map(|((i, &v), &wt)| if wt > T::zero() { Interval::point(i.clamp(v)) } else { *i })
                .collect(),
        );
    }
    let pts: Vec<Vec<T>> = match sol.finite_elements() {
        Some(f) => f.iter().map(PrimalDualVector::to_flat).collect(),
        None => sol.representatives(SOLUTION_GRID).iter().map(PrimalDualVector::to_flat).collect(),
    };
    let vals: Vec<T> = pts
        .iter()
        .map(|a| {
            let d: Vec<T> = u.iter().zip(a).map(|(&p, &q)| p - q).collect();
            w.quad(&d)
        })
        .collect();
    let best = vals.iter().copied().fold(T::infinity(), T::min);
    let tol = T::c(1e-9) * best.abs().max(T::one());
    ArgminSet::Points(
        pts.into_iter()
            .zip(vals)
            .filter(|(_, v)| *v <= best + tol)
            .map(|(p, _)| p)
            .collect(),
    )
}

/// `−(distance between the two argmin sets)`, zero when they intersect.
fn projection_margin<T: Scalar>(u: &[T], sol: &SolutionSet<T>, m: &Weight<T>, mp: &Weight<T>) -> (T, Vec<T>) {
    match (argmin_set(u, sol, m), argmin_set(u, sol, mp)) {
        (ArgminSet::Box(a), ArgminSet::Box(b)) => {
            let mut gap = T::zero();
            let mut common = Vec::with_capacity(a.len());
            for (x, y) in a.iter().zip(&b) {
                match x.intersect(y) {
                    Some(i) => common.push(i.clamp(T::zero())),
                    None => {
                        let g = (x.lo - y.hi).max(y.lo - x.hi);
                        gap += g * g;
                        common.push(T::nan());
                    }
                }
            }
            (-gap.sqrt(), common)
        }
        (ArgminSet::Points(a), ArgminSet::Points(b)) => {
            let mut best = (T::infinity(), Vec::new());
            for p in &a {
                for q in &b {
                    let d: T = p.iter().zip(q).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt();
                    if d < best.0 {
                        best = (d, p.clone());
                    }
                }
            }
            (-best.0, best.1)
        }
        // Mixed cases cannot arise: both use the same solution set and the
        // product branch depends only on diagonality. Treat them via points.
        (ArgminSet::Box(bx), ArgminSet::Points(pts)) | (ArgminSet::Points(pts), ArgminSet::Box(bx)) => {
            let mut best = (T::infinity(), Vec::new());
            for p in &pts {
                let d: T = p.iter().zip(&bx).map(|(&x, i)| i.dist_sq(x)).sum::<T>().sqrt();
                if d < best.0 {
                    best = (d, p.clone());
                }
            }
            (-best.0, best.1)
        }
    }
}

/// Checks the common projection condition: nearby `u` have a common nearest
/// point in `A` under `‖·‖_M` and `‖·‖_{M'}` (ties within 1e-9 relative).
pub fn check_projection_condition<T: Scalar>(
    a: &SolutionSet<T>,
    base: &PrimalDualVector<T>,
    m_op: &StructuredOperator<T>,
    mp_op: &StructuredOperator<T>,
    nb: &NeighborhoodSpec<T>,
    opts: &SamplingOptions,
) -> Result<CertificateReport<T>, RegularityError> {
    if a.is_empty() {
        return Err(RegularityError::EmptySolutionSet);
    }
    nb.validate()?;
    if base.dims() != a.dims() || nb.center.dims() != a.dims() {
        return Err(RegularityError::Invalid("dimension mismatch".into()));
    }
    for (name, op) in [("M", m_op), ("M'", mp_op)] {
        let r = psd_check(op, T::c(1e-12));
        if !r.is_psd {
            return Err(RegularityError::NotPsd(if name == "M" { "M" } else { "M'" }, r.min_eigenvalue.as_f64()));
        }
    }
    let m = Weight::new(m_op.clone());
    let mp = Weight::new(mp_op.clone());
    let pts = sample_points(nb, a, opts.seed);
    let sampled = a.finite_elements().is_none() && (m.quad_diag().is_none() || mp.quad_diag().is_none());
    let f = |u: &PrimalDualVector<T>| Some(projection_margin(&u.to_flat(), a, &m, &mp));
    Ok(assemble(
        CheckKind::Projection,
        "projection".into(),
        nb,
        pts,
        opts,
        T::c(DEFAULT_SLACK),
        sampled,
        f,
        f,
    ))
}

type GapFn<T> = dyn Fn(&PrimalDualVector<T>, &PrimalDualVector<T>) -> T + Send + Sync;

/// Checks that `G̃` is an `(N, Γ)`-gap function:
/// `⟨w, u − u*⟩_N ≥ G̃(u; u*) + ‖u − u*‖²_Γ` for all `w ∈ T(u)` and
/// `u* ∈ inv T(ŵ)`, together with `|G̃(u*; u*)| ≤ 1e-12`.
#[allow(clippy::too_many_arguments)]
pub fn gap_function_check<T: Scalar>(
    map: &dyn SetMap<T>,
    n_op: &StructuredOperator<T>,
    gamma_op: &StructuredOperator<T>,
    gap: &GapFn<T>,
    nb: &NeighborhoodSpec<T>,
    sol: &SolutionSet<T>,
    opts: &SamplingOptions,
) -> CertificateReport<T> {
    let n = Weight::new(n_op.clone());
    let g = Weight::new(gamma_op.clone());
    let (sols, sampled) = match sol.finite_elements() {
        Some(f) => (f, false),
        None => (sol.representatives(SOLUTION_GRID), true),
    };
    let slack = T::c(DEFAULT_SLACK);
    let eval = |u: &PrimalDualVector<T>, use_corners: bool| -> Outcome<T> {
        let vals = map.eval(u);
        if vals.is_empty() {
            return None;
        }
        let uf = u.to_flat();
        let mut best: Outcome<T> = None;
        for s in &vals {
            for a in &sols {
                let d: Vec<T> = uf.iter().zip(a.to_flat()).map(|(&p, q)| p - q).collect();
                let nd = n.apply_adjoint(&d);
                let rhs = gap(u, a) + g.quad(&d);
                let cands: Vec<(T, Vec<T>)> = if use_corners {
                    s.corners(64).into_iter().map(|w| (dot(&w, &nd), w)).collect()
                } else {
                    vec![(s.inf_linear(&vec![T::zero(); d.len()], &nd), selection_for(s, &nd))]
                };
                for (lhs, w) in cands {
                    let margin = lhs - rhs;
                    if best.as_ref().map_or(true, |b| margin < b.0) {
                        best = Some((margin, w));
                    }
                }
            }
        }
        best
    };
    let mut report = assemble(
        CheckKind::Gap,
        map.name(),
        nb,
        sample_points(nb, sol, opts.seed),
        opts,
        slack,
        sampled,
        |u| eval(u, false),
        |u| eval(u, true),
    );
    for a in &sols {
        let v = gap(a, a).abs();
        if v > T::c(1e-12) {
            report.verdict = Verdict::Fail;
            report.worst_margin = report.worst_margin.min(-v);
            report.counterexamples.push(Counterexample { u: a.clone(), w: Vec::new(), margin: -v });
        }
    }
    report
}

/// Checks the marginalised saddle conditions
/// `inf_{u*} ⟨∂G(x) − q*, x − x*⟩ − (γ/2)‖x − x*‖² ≥ 0` and
/// `inf_{u*} ⟨∂F*(y) − z*, y − y*⟩ − (ρ/2)‖y − y*‖² ≥ 0`,
/// with `q* = −Kᵀy*` and `z* = Kx*`. The margin is the smaller of the two.
pub fn marginal_psm_check<T: Scalar>(
    p: &SaddleProblem<T>,
    sol: &SolutionSet<T>,
    gamma: T,
    rho: T,
    nb: &NeighborhoodSpec<T>,
    opts: &SamplingOptions,
) -> Result<CertificateReport<T>, RegularityError> {
    if gamma < T::zero() || rho < T::zero() {
        return Err(RegularityError::Invalid("gamma and rho must be >= 0".into()));
    }
    if sol.dims() != (p.n(), p.m()) || nb.center.dims() != (p.n(), p.m()) {
        return Err(RegularityError::Invalid("dimension mismatch".into()));
    }
    nb.validate()?;
    let (sols, sampled) = match sol.finite_elements() {
        Some(f) => (f, false),
        None => (sol.representatives(SOLUTION_GRID), true),
    };
    // (x*, y*, q*, z*)
    let stars: Vec<(Vec<T>, Vec<T>, Vec<T>, Vec<T>)> = sols
        .iter()
        .map(|s| {
            let q: Vec<T> = p.k.matvec_t(s.y()).into_iter().map(|v| -v).collect();
            let z = p.k.matvec(s.x());
            (s.x().to_vec(), s.y().to_vec(), q, z)
        })
        .collect();
    let half = T::c(0.5);
    let eval = |u: &PrimalDualVector<T>, use_corners: bool| -> Outcome<T> {
        let gs = p.g.subdiff(u.x()).ok()?;
        let fs = p.fstar.subdiff(u.y()).ok()?;
        if gs.is_empty() || fs.is_empty() {
            return None;
        }
        let side = |s: &SetValue<T>, v: &[T], vstar: &[T], w0: &[T], modulus: T| -> (T, Vec<T>) {
            let d: Vec<T> = v.iter().zip(vstar).map(|(&a, &b)| a - b).collect();
            let quad = half * modulus * dot(&d, &d);
            if use_corners {
                let mut best = (T::infinity(), Vec::new());
                for w in s.corners(64) {
                    let val: T = w.iter().zip(w0).zip(&d).map(|((&a, &b), &c)| (a - b) * c).sum::<T>() - quad;
                    if val < best.0 {
                        best = (val, w);
                    }
                }
                best
            } else {
                (s.inf_linear(w0, &d) - quad, selection_for(s, &d))
            }
        };
        let mut g_best = (T::infinity(), Vec::new());
        let mut f_best = (T::infinity(), Vec::new());
        for (xs, ys, qs, zs) in &stars {
            let gv = side(&gs, u.x(), xs, qs, gamma);
            if gv.0 < g_best.0 || g_best.1.is_empty() {
                g_best = gv;
            }
            let fv = side(&fs, u.y(), ys, zs, rho);
            if fv.0 < f_best.0 || f_best.1.is_empty() {
                f_best = fv;
            }
        }
        let mut w = g_best.1;
        w.extend(f_best.1);
        Some((g_best.0.min(f_best.0), w))
    };
    Ok(assemble(
        CheckKind::Marginal,
        p.name(),
        nb,
        sample_points(nb, sol, opts.seed),
        opts,
        T::c(DEFAULT_SLACK),
        sampled,
        |u| eval(u, false),
        |u| eval(u, true),
    ))
}

/// Result of [`conversion_cross_check`].
#[derive(Debug, Clone)]
pub struct ConversionReport<T> {
    pub kappa: T,
    pub psm: CertificateReport<T>,
    /// Present only when the strong submonotonicity check passed.
    pub psr: Option<CertificateReport<T>>,
}

impl<T: Scalar> ConversionReport<T> {
    /// A pass followed by a fail would contradict the implication.
    pub fn contradiction(&self) -> bool {
        self.psm.passed() && self.psr.as_ref().is_some_and(|r| !r.passed())
    }
}

/// Runs `(κM, M)`-strong submonotonicity (PSM with `Ξ = M`, `N = κM`) and,
/// on a pass, `(κ²M, M)`-subregularity (PSR with `P = M`, `N = κ²M`) on the
/// same samples.
pub fn conversion_cross_check<T: Scalar>(
    q: &RegularityQuery<T>,
    kappa: T,
    opts: &SamplingOptions,
) -> Result<ConversionReport<T>, RegularityError> {
    if !(kappa > T::zero()) {
        return Err(RegularityError::Invalid("kappa must be > 0".into()));
    }
    let m = q.m_op.clone();
    let psm_q = q.with_triple(m.clone(), m.scale(kappa), m.clone())?;
    let pts = sample_points(&q.neighborhood, &q.solution, opts.seed);
    let psm = check_psm_on(&psm_q, pts.clone(), opts);
    let psr = if psm.passed() {
        let psr_q = q.with_triple(m.clone(), m.scale(kappa * kappa), m)?;
        Some(check_psr_on(&psr_q, pts, opts)?)
    } else {
        None
    };
    Ok(ConversionReport { kappa, psm, psr })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SamplingOptions {
        SamplingOptions { seed: 3, workers: 1, revalidation_samples: 200, max_counterexamples: 100 }
    }

    fn dist_pm1_query(gamma: f64) -> RegularityQuery<f64> {
        let f = ProxFunction::distance_map(vec![vec![-1.0], vec![1.0]]).unwrap();
        let map: Arc<dyn SetMap<f64>> = Arc::new(SubdifferentialMap::new(f, "dist_pm1"));
        let sol = SolutionSet::Finite(vec![PrimalDualVector::scalar(-1.0), PrimalDualVector::scalar(1.0)]);
        let nb = NeighborhoodSpec::new(PrimalDualVector::scalar(1.0), 0.05);
        RegularityQuery::new(
            map,
            PrimalDualVector::scalar(1.0),
            vec![0.0],
            StructuredOperator::scalar(gamma, 1, 0),
            StructuredOperator::identity(1, 0),
            StructuredOperator::identity(1, 0),
            sol,
            nb,
        )
        .unwrap()
    }

    #[test]
    fn dist_pm1_threshold() {
        assert!(check_psm(&dist_pm1_query(0.9), &opts()).passed());
        let r = check_psm(&dist_pm1_query(1.0), &opts());
        assert!(!r.passed());
        assert!(r.counterexamples.iter().all(|c| c.u.x()[0] < 1.0 && c.u.x()[0] > 0.0));
    }

    #[test]
    fn counterexamples_recompute() {
        let q = dist_pm1_query(1.0);
        let r = check_psm(&q, &opts());
        for c in &r.counterexamples {
            let m = recompute_margin(&q, CheckKind::Psm, c);
            assert!((m - c.margin).abs() <= 1e-12, "{m} vs {}", c.margin);
        }
    }

    #[test]
    fn coord_min_matches_grid() {
        // brute force over t and over w in the box
        let cases = [
            (0.3, Interval { lo: -0.5, hi: 0.5 }, Interval { lo: -1.0, hi: 2.0 }, 0.0, 1.0, 0.5),
            (0.7, Interval { lo: -0.5, hi: 0.5 }, Interval::point(0.4), 0.0, 1.0, -0.25),
            (-0.2, Interval::point(0.0), Interval { lo: -0.3, hi: 0.1 }, 0.05, 2.0, 1.0),
            (0.1, Interval { lo: 0.0, hi: 3.0 }, Interval { lo: 0.2, hi: 0.9 }, 0.0, 0.5, 0.0),
        ];
        for (uk, j, i, what, nk, ck) in cases {
            let (v, t, w) = coord_psm_min(uk, j, i, what, nk, ck);
            let mut best = f64::INFINITY;
            for a in 0..=2000 {
                let tt = j.lo + (j.hi - j.lo) * a as f64 / 2000.0;
                for wv in [i.lo, i.hi] {
                    let val = (wv - what) * nk * (uk - tt) + ck * (uk - tt) * (uk - tt);
                    best = best.min(val);
                }
            }
            assert!(v <= best + 1e-12 && v >= best - 1e-5, "{v} vs {best}");
            let direct = (w - what) * nk * (uk - t) + ck * (uk - t) * (uk - t);
            assert!((direct - v).abs() < 1e-12);
        }
    }

    #[test]
    fn report_text_header() {
        let r = check_psm(&dist_pm1_query(0.9), &opts());
        let t = r.to_text();
        assert!(t.starts_with("psm map=dist_pm1 verdict=pass "));
        assert_eq!(t.lines().count(), 1);
    }

    #[test]
    fn base_must_be_in_graph() {
        let f = ProxFunction::distance_map(vec![vec![-1.0], vec![1.0]]).unwrap();
        let map: Arc<dyn SetMap<f64>> = Arc::new(SubdifferentialMap::new(f, "dist_pm1"));
        let e = RegularityQuery::new(
            map,
            PrimalDualVector::scalar(0.5),
            vec![0.0],
            StructuredOperator::identity(1, 0),
            StructuredOperator::identity(1, 0),
            StructuredOperator::identity(1, 0),
            SolutionSet::Finite(vec![PrimalDualVector::scalar(1.0)]),
            NeighborhoodSpec::new(PrimalDualVector::scalar(0.5), 0.1),
        );
        assert!(matches!(e, Err(RegularityError::BaseNotInGraph(_))));
    }
}
