//! Fixture catalogue, Lasso and 1D TV instance generators, reference
//! solutions and the plain-text instance format.
//!
//! Each fixture bundles a map, its solution set `inv T(ŵ)`, a documented
//! neighbourhood and a table of expected certifier verdicts.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{DenseMatrix, LinalgError, PrimalDualVector, StructuredOperator};
use crate::regularity::{
    check_psm, check_psr, check_projection_condition, marginal_psm_check, CertificateReport, DomainRestriction,
    FnMap, NeighborhoodSpec, RegularityError, RegularityQuery, SamplingOptions, SetMap, SubdifferentialMap,
};
use crate::scalar::{fmt17, parse_scalar, Scalar};
use crate::setvalued::{Interval, ProxFunction, ProxKind, SaddleProblem, SetValue, SetValuedError, SolutionSet};
use crate::solvers::{pdhgm_step, Resolvent, SolverError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("generator failure: {0}")]
    GeneratorFailure(String),
    #[error("oracle failure: {0}")]
    OracleFailure(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    SetValued(#[from] SetValuedError),
    #[error(transparent)]
    Regularity(#[from] RegularityError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

// ---------------------------------------------------------------------------
// Fixture ids

/// Lasso generator mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LassoMode {
    /// `‖Kᵀz‖_∞ = 0.8α`.
    StrictlyComplementary,
    /// `‖Kᵀz‖_∞ = α`.
    Boundary,
}

impl LassoMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::StrictlyComplementary => "strictly_complementary",
            Self::Boundary => "boundary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "strictly_complementary" | "strict" => Some(Self::StrictlyComplementary),
            "boundary" => Some(Self::Boundary),
            _ => None,
        }
    }
}

/// Catalogued fixtures with their parameters (kept in `f64`).
#[derive(Debug, Clone, PartialEq)]
pub enum FixtureId {
    /// `T_C` for `C = {−1, 1}`.
    DistPm1,
    /// `T_C` for `C = {0} ∪ {2^{−k} : 0 ≤ k ≤ levels}`.
    DistDyadic { levels: usize },
    /// Partial strong submonotonicity on a subspace, `inv T(0) = [−μ, μ] × {0}`.
    SubspaceMu { mu: f64 },
    /// Graph supported on the cone `(1−γ²)u₁² ≥ u₂²`, `u₂ ≥ 0`.
    ConeGamma { gamma: f64 },
    /// `T(u) = (u₂, u₁)` on the nonnegative orthant.
    OrthantSwap,
    /// Clarke subdifferential of `u₁u₂ + δ_{[0,∞)²}`.
    OrthantBilinear,
    /// Subdifferential of `½u₁² + u₁u₂ + δ_{[0,∞)²}`.
    OrthantPartial,
    /// Normal cone of the ball of radius `alpha` in `ℝ²`, base `‖q*‖ = q_norm`.
    BallIndicator { alpha: f64, q_norm: f64 },
    /// `∂|·|` at `(0, q*)` with `|q*| < 1`.
    AbsValue { q: f64 },
    Lasso { n: usize, m: usize, alpha: f64, seed: u64, mode: LassoMode },
    Tv1d { n: usize, alpha: f64, seed: u64 },
}

pub const FIXTURE_NAMES: [&str; 11] = [
    "dist_pm1",
    "dist_dyadic",
    "subspace_mu",
    "cone_gamma",
    "orthant_swap",
    "orthant_bilinear",
    "orthant_partial",
    "ball_indicator",
    "abs_value",
    "lasso",
    "tv1d",
];

impl FixtureId {
    pub fn name(&self) -> &'static str {
        match self {
            Self::DistPm1 => "dist_pm1",
            Self::DistDyadic { .. } => "dist_dyadic",
            Self::SubspaceMu { .. } => "subspace_mu",
            Self::ConeGamma { .. } => "cone_gamma",
            Self::OrthantSwap => "orthant_swap",
            Self::OrthantBilinear => "orthant_bilinear",
            Self::OrthantPartial => "orthant_partial",
            Self::BallIndicator { .. } => "ball_indicator",
            Self::AbsValue { .. } => "abs_value",
            Self::Lasso { .. } => "lasso",
            Self::Tv1d { .. } => "tv1d",
        }
    }

    /// The fixture with default parameters.
    pub fn from_name(name: &str) -> Result<Self, ProblemError> {
        Ok(match name {
            "dist_pm1" => Self::DistPm1,
            "dist_dyadic" => Self::DistDyadic { levels: 20 },
            "subspace_mu" => Self::SubspaceMu { mu: 0.5 },
            "cone_gamma" => Self::ConeGamma { gamma: 0.5 },
            "orthant_swap" => Self::OrthantSwap,
            "orthant_bilinear" => Self::OrthantBilinear,
            "orthant_partial" => Self::OrthantPartial,
            "ball_indicator" => Self::BallIndicator { alpha: 1.0, q_norm: 1.0 },
            "abs_value" => Self::AbsValue { q: 0.3 },
            "lasso" => Self::Lasso { n: 10, m: 8, alpha: 1.0, seed: 7, mode: LassoMode::StrictlyComplementary },
            "tv1d" => Self::Tv1d { n: 20, alpha: 0.1, seed: 7 },
            other => return Err(ProblemError::UnknownFixture(other.to_string())),
        })
    }

    /// Every small fixture with default parameters (no generated instances).
    pub fn catalogue() -> Vec<Self> {
        FIXTURE_NAMES[..9].iter().map(|n| Self::from_name(n).expect("known")).collect()
    }

    fn validate(&self) -> Result<(), ProblemError> {
        let bad = |m: &str| Err(ProblemError::InvalidParameter(format!("{}: {}", self.name(), m)));
        match *self {
            Self::DistDyadic { levels } if levels > 40 => bad("levels must be <= 40"),
            Self::SubspaceMu { mu } if !(mu > 0.0 && mu.is_finite()) => bad("mu must be > 0"),
            Self::ConeGamma { gamma } if !(0.0..=1.0).contains(&gamma) => bad("gamma must lie in [0, 1]"),
            Self::BallIndicator { alpha, q_norm } if !(alpha > 0.0 && q_norm > 0.0) => {
                bad("alpha and |q*| must be > 0")
            }
            Self::AbsValue { q } if !(q.abs() < 1.0) => bad("|q*| must be < 1"),
            Self::Lasso { n, m, alpha, .. } if n == 0 || m == 0 || !(alpha > 0.0) => {
                bad("need n, m >= 1 and alpha > 0")
            }
            Self::Tv1d { n, alpha, .. } if n < 3 || !(alpha >= 0.0) => bad("need n >= 3 and alpha >= 0"),
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Expected verdicts

/// Which certifier call an expected verdict refers to.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckSpec<T: Scalar> {
    Psm { xi: StructuredOperator<T>, n: StructuredOperator<T>, m: StructuredOperator<T> },
    Psr { p: StructuredOperator<T>, n: StructuredOperator<T>, m: StructuredOperator<T> },
    /// Marginal conditions on the saddle problem.
    Marginal { gamma: T, rho: T },
}

/// One row of a fixture's regression table.
#[derive(Debug, Clone)]
pub struct ExpectedVerdict<T: Scalar> {
    pub label: String,
    pub check: CheckSpec<T>,
    pub base_u: PrimalDualVector<T>,
    pub base_w: Vec<T>,
    pub neighborhood: NeighborhoodSpec<T>,
    pub expect_pass: bool,
}

/// Certifier result next to the expectation.
#[derive(Debug, Clone)]
pub struct VerdictOutcome<T> {
    pub label: String,
    pub expected_pass: bool,
    pub report: CertificateReport<T>,
}

impl<T: Scalar> VerdictOutcome<T> {
    pub fn agrees(&self) -> bool {
        self.report.passed() == self.expected_pass
    }
}

/// Prox-point data for fixtures with a certified rate: the iteration with
/// step `tau` grows the testing weight by `1 + xi`.
#[derive(Debug, Clone)]
pub struct ProxPointSetup<T> {
    pub resolvent: Resolvent<T>,
    pub tau: T,
    pub xi: T,
    pub u0: PrimalDualVector<T>,
}

/// A catalogued map with solution set, neighbourhood and regression table.
#[derive(Clone)]
pub struct Fixture<T: Scalar> {
    pub id: FixtureId,
    pub map: Arc<dyn SetMap<T>>,
    pub problem: Option<SaddleProblem<T>>,
    pub base_u: PrimalDualVector<T>,
    pub base_w: Vec<T>,
    pub solution: SolutionSet<T>,
    pub neighborhood: NeighborhoodSpec<T>,
    pub expected: Vec<ExpectedVerdict<T>>,
    pub resolvent: Option<Resolvent<T>>,
    pub prox_point: Option<ProxPointSetup<T>>,
    pub doc: &'static str,
}

impl<T: Scalar> std::fmt::Debug for Fixture<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fixture")
            .field("id", &self.id)
            .field("base_u", &self.base_u)
            .field("solution", &self.solution)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Fixture<T> {
    pub fn dims(&self) -> (usize, usize) {
        self.map.dims()
    }

    /// Query at the fixture base for an arbitrary triple.
    pub fn query(
        &self,
        xi: StructuredOperator<T>,
        n: StructuredOperator<T>,
        m: StructuredOperator<T>,
    ) -> Result<RegularityQuery<T>, ProblemError> {
        Ok(RegularityQuery::new(
            self.map.clone(),
            self.base_u.clone(),
            self.base_w.clone(),
            xi,
            n,
            m,
            self.solution.clone(),
            self.neighborhood.clone(),
        )?)
    }

    /// Runs one regression row.
    pub fn run_check(
        &self,
        e: &ExpectedVerdict<T>,
        opts: &SamplingOptions,
    ) -> Result<CertificateReport<T>, ProblemError> {
        let mk = |xi: &StructuredOperator<T>, n: &StructuredOperator<T>, m: &StructuredOperator<T>| {
            RegularityQuery::new(
                self.map.clone(),
                e.base_u.clone(),
                e.base_w.clone(),
                xi.clone(),
                n.clone(),
                m.clone(),
                self.solution.clone(),
                e.neighborhood.clone(),
            )
        };
        Ok(match &e.check {
            CheckSpec::Psm { xi, n, m } => check_psm(&mk(xi, n, m)?, opts),
            CheckSpec::Psr { p, n, m } => check_psr(&mk(p, n, m)?, opts)?,
            CheckSpec::Marginal { gamma, rho } => {
                let p = self
                    .problem
                    .as_ref()
                    .ok_or_else(|| ProblemError::InvalidParameter("marginal check needs a saddle problem".into()))?;
                marginal_psm_check(p, &self.solution, *gamma, *rho, &e.neighborhood, opts)?
            }
        })
    }

    /// Runs the whole regression table.
    pub fn run_expected(&self, opts: &SamplingOptions) -> Result<Vec<VerdictOutcome<T>>, ProblemError> {
        self.expected
            .iter()
            .map(|e| {
                Ok(VerdictOutcome {
                    label: e.label.clone(),
                    expected_pass: e.expect_pass,
                    report: self.run_check(e, opts)?,
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Small helpers

fn c<T: Scalar>(v: f64) -> T {
    T::c(v)
}

fn pdv<T: Scalar>(x: &[f64], y: &[f64]) -> PrimalDualVector<T> {
    PrimalDualVector::new(x.iter().map(|&v| c(v)).collect(), y.iter().map(|&v| c(v)).collect())
        .expect("n >= 1")
}

fn diag<T: Scalar>(a: f64, d: f64, n: usize, m: usize) -> StructuredOperator<T> {
    StructuredOperator::diag(c(a), c(d), n, m)
}

fn scal<T: Scalar>(s: f64, n: usize, m: usize) -> StructuredOperator<T> {
    StructuredOperator::scalar(c(s), n, m)
}

fn psm<T: Scalar>(xi: StructuredOperator<T>, n: StructuredOperator<T>, m: StructuredOperator<T>) -> CheckSpec<T> {
    CheckSpec::Psm { xi, n, m }
}

fn psr<T: Scalar>(p: StructuredOperator<T>, n: StructuredOperator<T>, m: StructuredOperator<T>) -> CheckSpec<T> {
    CheckSpec::Psr { p, n, m }
}

struct RowBuilder<T: Scalar> {
    base_u: PrimalDualVector<T>,
    base_w: Vec<T>,
    nb: NeighborhoodSpec<T>,
    rows: Vec<ExpectedVerdict<T>>,
}

impl<T: Scalar> RowBuilder<T> {
    fn new(base_u: &PrimalDualVector<T>, base_w: &[T], nb: &NeighborhoodSpec<T>) -> Self {
        Self { base_u: base_u.clone(), base_w: base_w.to_vec(), nb: nb.clone(), rows: Vec::new() }
    }

    fn row(&mut self, label: impl Into<String>, check: CheckSpec<T>, expect_pass: bool) {
        self.rows.push(ExpectedVerdict {
            label: label.into(),
            check,
            base_u: self.base_u.clone(),
            base_w: self.base_w.clone(),
            neighborhood: self.nb.clone(),
            expect_pass,
        });
    }

    fn row_at(
        &mut self,
        label: impl Into<String>,
        check: CheckSpec<T>,
        base_u: PrimalDualVector<T>,
        base_w: Vec<T>,
        nb: NeighborhoodSpec<T>,
        expect_pass: bool,
    ) {
        self.rows.push(ExpectedVerdict { label: label.into(), check, base_u, base_w, neighborhood: nb, expect_pass });
    }
}

/// Minimises `½vᵀAv + bᵀv` over `ℝ²₊` for symmetric `A` with positive
/// diagonal by enumerating the four faces.
fn orthant_qp_2d<T: Scalar>(a: [[T; 2]; 2], b: [T; 2]) -> [T; 2] {
    let half = c::<T>(0.5);
    let obj = |v: [T; 2]| {
        half * (a[0][0] * v[0] * v[0] + (a[0][1] + a[1][0]) * v[0] * v[1] + a[1][1] * v[1] * v[1])
            + b[0] * v[0]
            + b[1] * v[1]
    };
    let mut cands = vec![[T::zero(), T::zero()]];
    let v1 = -b[0] / a[0][0];
    if v1 >= T::zero() {
        cands.push([v1, T::zero()]);
    }
    let v2 = -b[1] / a[1][1];
    if v2 >= T::zero() {
        cands.push([T::zero(), v2]);
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det != T::zero() {
        let x = (-b[0] * a[1][1] + b[1] * a[0][1]) / det;
        let y = (-b[1] * a[0][0] + b[0] * a[1][0]) / det;
        if x >= T::zero() && y >= T::zero() {
            cands.push([x, y]);
        }
    }
    let mut best = cands[0];
    for v in cands.into_iter().skip(1) {
        if obj(v) < obj(best) {
            best = v;
        }
    }
    best
}

fn orthant_resolvent<T: Scalar>(name: &str, diag11: f64) -> Resolvent<T> {
    // (I + τH)⁻¹ for H = ∂(½·diag11·u₁² + u₁u₂ + δ_{[0,∞)²})
    Resolvent::new(name, move |tau: T, u: &PrimalDualVector<T>| {
        let a = [[T::one() + tau * c::<T>(diag11), tau], [tau, T::one()]];
        let b = [-u.get(0), -u.get(1)];
        let v = orthant_qp_2d(a, b);
        Ok(PrimalDualVector::new(vec![v[0]], vec![v[1]])?)
    })
}

/// Per-coordinate value of the orthant subdifferential: a point where the
/// coordinate is positive, `(−∞, g]` where it is zero.
fn orthant_coord<T: Scalar>(uk: T, g: T) -> Interval<T> {
    if uk > T::zero() {
        Interval::point(g)
    } else {
        Interval::at_most(g)
    }
}

// ---------------------------------------------------------------------------
// make_fixture

/// Builds a catalogued fixture.
pub fn make_fixture<T: Scalar>(id: &FixtureId) -> Result<Fixture<T>, ProblemError> {
    id.validate()?;
    match *id {
        FixtureId::DistPm1 => Ok(dist_pm1()),
        FixtureId::DistDyadic { levels } => Ok(dist_dyadic(levels)),
        FixtureId::SubspaceMu { mu } => Ok(subspace_mu(mu)),
        FixtureId::ConeGamma { gamma } => Ok(cone_gamma(gamma)),
        FixtureId::OrthantSwap => Ok(orthant_swap()),
        FixtureId::OrthantBilinear => Ok(orthant_bilinear()),
        FixtureId::OrthantPartial => Ok(orthant_partial()),
        FixtureId::BallIndicator { alpha, q_norm } => Ok(ball_indicator(alpha, q_norm)),
        FixtureId::AbsValue { q } => Ok(abs_value(q)),
        FixtureId::Lasso { n, m, alpha, seed, mode } => {
            let inst = make_lasso_instance(n, m, c(alpha), seed, mode)?;
            lasso_fixture(id.clone(), &inst)
        }
        FixtureId::Tv1d { n, alpha, seed } => {
            let inst = make_tv_instance(n, c(alpha), seed)?;
            tv_fixture(id.clone(), &inst)
        }
    }
}

/// Solution set of a catalogued fixture or generated instance.
pub fn reference_solution<T: Scalar>(id: &FixtureId) -> Result<SolutionSet<T>, ProblemError> {
    Ok(make_fixture::<T>(id)?.solution)
}

fn dist_pm1<T: Scalar>() -> Fixture<T> {
    let f = ProxFunction::distance_map(vec![vec![-T::one()], vec![T::one()]]).expect("two points");
    let map: Arc<dyn SetMap<T>> = Arc::new(SubdifferentialMap::new(f, "dist_pm1"));
    let base_u = PrimalDualVector::scalar(T::one());
    let base_w = vec![T::zero()];
    let sol = SolutionSet::Finite(vec![PrimalDualVector::scalar(-T::one()), PrimalDualVector::scalar(T::one())]);
    let nb = NeighborhoodSpec::new(base_u.clone(), c(0.05));
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    r.row("psm gamma=0.9", psm(scal(0.9, 1, 0), scal(1.0, 1, 0), scal(1.0, 1, 0)), true);
    r.row("psm gamma=1.0", psm(scal(1.0, 1, 0), scal(1.0, 1, 0), scal(1.0, 1, 0)), false);
    r.row("strong submonotone Xi=M=0.5", psm(scal(0.5, 1, 0), scal(1.0, 1, 0), scal(0.5, 1, 0)), false);
    r.row("psr P=I", psr(scal(1.0, 1, 0), scal(1.0, 1, 0), scal(1.0, 1, 0)), true);
    // prox point with step τ is certified through (ξI, 2τI, (1+ξ)I)
    r.row("prox point certificate xi=0.9 tau=0.5", psm(scal(0.9, 1, 0), scal(1.0, 1, 0), scal(1.9, 1, 0)), true);
    r.row("prox point certificate xi=1.9 tau=1", psm(scal(1.9, 1, 0), scal(2.0, 1, 0), scal(2.9, 1, 0)), true);
    r.row("prox point xi=2.1 tau=1", psm(scal(2.1, 1, 0), scal(2.0, 1, 0), scal(3.1, 1, 0)), false);
    let rows = r.rows;
    let resolvent = Resolvent::new("dist_pm1", |tau: T, u: &PrimalDualVector<T>| {
        // 0 ∈ τ(v − p) + v − u with p the nearest point of C to v; the
        // offset form keeps x − p exact so iterates can land on p
        let x = u.get(0);
        let p = if x >= T::zero() { T::one() } else { -T::one() };
        Ok(PrimalDualVector::scalar(p + (x - p) / (T::one() + tau)))
    });
    Fixture {
        id: FixtureId::DistPm1,
        map,
        problem: None,
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: rows,
        resolvent: Some(resolvent.clone()),
        prox_point: Some(ProxPointSetup {
            resolvent,
            // 1 + τ = 2 divides exactly, so the iterates do not stall one ulp from 1
            tau: T::one(),
            xi: c(1.9),
            u0: PrimalDualVector::scalar(c(1.04)),
        }),
        doc: "T_C(u) = u - P_C(u) for C = {-1, 1}; inv T(0) = C. Neighbourhood [0.95, 1.05].",
    }
}

fn dist_dyadic<T: Scalar>(levels: usize) -> Fixture<T> {
    let mut pts: Vec<Vec<T>> = vec![vec![T::zero()]];
    let mut p = T::one();
    for _ in 0..=levels {
        pts.push(vec![p]);
        p = p * c(0.5);
    }
    let sol = SolutionSet::Finite(pts.iter().map(|v| PrimalDualVector::scalar(v[0])).collect());
    let f = ProxFunction::distance_map(pts).expect("points");
    let map: Arc<dyn SetMap<T>> = Arc::new(SubdifferentialMap::new(f, "dist_dyadic"));
    let base_u = PrimalDualVector::scalar(T::zero());
    let base_w = vec![T::zero()];
    // tie midpoints between consecutive levels and between 0 and 2^{-L}
    let mut ties = Vec::new();
    let mut h = c::<T>(0.75);
    for _ in 0..levels {
        ties.push(PrimalDualVector::scalar(h));
        h = h * c(0.5);
    }
    ties.push(PrimalDualVector::scalar(h * c(2.0 / 3.0)));
    let nb = NeighborhoodSpec::new(base_u.clone(), T::one()).with_extra_points(ties);
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    for g in [0.0, 0.25, 0.5, 1.0] {
        r.row(format!("psm gamma={}", g), psm(scal(g, 1, 0), scal(1.0, 1, 0), scal(1.0, 1, 0)), false);
    }
    Fixture {
        id: FixtureId::DistDyadic { levels },
        map,
        problem: None,
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: r.rows,
        resolvent: None,
        prox_point: None,
        doc: "T_C for C = {0} u {2^-k : k <= L}; fails PSM at every tie midpoint 1.5 * 2^-k.",
    }
}

fn subspace_mu<T: Scalar>(mu: f64) -> Fixture<T> {
    let mu_t: T = c(mu);
    let map: Arc<dyn SetMap<T>> = Arc::new(FnMap::new(1, 1, "subspace_mu", move |u: &PrimalDualVector<T>| {
        let (x, y) = (u.get(0), u.get(1));
        let smooth = x * y * y;
        let g = if x > mu_t {
            Interval::point(T::one())
        } else if x == mu_t {
            Interval::new(T::zero(), T::one()).expect("ordered")
        } else if x > -mu_t {
            Interval::point(T::zero())
        } else if x == -mu_t {
            Interval::new(-T::one(), T::zero()).expect("ordered")
        } else {
            Interval::point(-T::one())
        };
        let v = c::<T>(2.0) * y * y * y + y * x * x;
        vec![SetValue::from_intervals(vec![g.shift(smooth), Interval::point(v)])]
    }));
    let sol = SolutionSet::Product {
        n: 1,
        intervals: vec![Interval::new(-mu_t, mu_t).expect("mu > 0"), Interval::point(T::zero())],
    };
    let base_u = pdv(&[mu], &[0.0]);
    let base_w = vec![T::zero(), T::zero()];
    let nb = NeighborhoodSpec::new(base_u.clone(), c(2.0)).with_half_widths(vec![c(0.4 * mu), c(2.0)]);
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    for xi in [0.0, 0.5, 1.0] {
        r.row(format!("psm Xi=diag({},0)", xi), psm(diag(xi, 0.0, 1, 1), scal(1.0, 1, 1), scal(1.0, 1, 1)), true);
    }
    let origin = pdv(&[0.0], &[0.0]);
    let nb0 = NeighborhoodSpec::new(origin.clone(), c(2.0)).with_half_widths(vec![c(0.4 * mu), c(2.0)]);
    for zeta in [0.01, 0.1, 0.5] {
        r.row_at(
            format!("psm Xi=diag(0.5,{}) at origin", zeta),
            psm(diag(0.5, zeta, 1, 1), scal(1.0, 1, 1), scal(1.0, 1, 1)),
            origin.clone(),
            vec![T::zero(), T::zero()],
            nb0.clone(),
            false,
        );
    }
    Fixture {
        id: FixtureId::SubspaceMu { mu },
        map,
        problem: None,
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: r.rows,
        resolvent: None,
        prox_point: None,
        doc: "T(x,y) = (x y^2 + d|.|_{mu}(x), 2y^3 + x^2 y) with inv T(0) = [-mu, mu] x {0}; \
              sampled on |x - mu| <= 0.4 mu, |y| <= 2.",
    }
}

fn cone_gamma<T: Scalar>(gamma: f64) -> Fixture<T> {
    let g: T = c(gamma);
    let map: Arc<dyn SetMap<T>> = Arc::new(FnMap::new(1, 1, "cone_gamma", move |u: &PrimalDualVector<T>| {
        let (a, b) = (u.get(0), u.get(1));
        let s = (T::one() - g * g) * a * a - b * b;
        if b < T::zero() || s < T::zero() {
            return Vec::new();
        }
        vec![SetValue::point(vec![g * a, s.sqrt()])]
    }));
    let base_u = pdv(&[0.0], &[0.0]);
    let base_w = vec![T::zero(), T::zero()];
    let sol = SolutionSet::Singleton(base_u.clone());
    let k = (1.0 - gamma * gamma).sqrt();
    let boundary: Vec<PrimalDualVector<T>> = [0.25, 0.5, 1.0, -0.25, -0.5, -1.0]
        .iter()
        .map(|&a: &f64| pdv(&[a], &[k * a.abs()]))
        .collect();
    let nb = NeighborhoodSpec::new(base_u.clone(), T::one()).with_extra_points(boundary);
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    r.row("psm Xi=diag(gamma,0)", psm(diag(gamma, 0.0, 1, 1), scal(1.0, 1, 1), scal(1.0, 1, 1)), true);
    r.row("psr P=diag(gamma,0)", psr(diag(gamma, 0.0, 1, 1), scal(1.0, 1, 1), scal(1.0, 1, 1)), false);
    r.row(
        "psr P=2Xi-I",
        psr(diag(2.0 * gamma - 1.0, -1.0, 1, 1), scal(1.0, 1, 1), scal(1.0, 1, 1)),
        true,
    );
    Fixture {
        id: FixtureId::ConeGamma { gamma },
        map,
        problem: None,
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: r.rows,
        resolvent: None,
        prox_point: None,
        doc: "T(u) = (gamma u1, sqrt((1-gamma^2)u1^2 - u2^2)) on the cone, empty elsewhere.",
    }
}

fn orthant_swap<T: Scalar>() -> Fixture<T> {
    let map: Arc<dyn SetMap<T>> = Arc::new(FnMap::new(1, 1, "orthant_swap", |u: &PrimalDualVector<T>| {
        let (a, b) = (u.get(0), u.get(1));
        if a < T::zero() || b < T::zero() {
            return Vec::new();
        }
        vec![SetValue::point(vec![b, a])]
    }));
    let base_u = pdv(&[0.0], &[0.0]);
    let base_w = vec![T::zero(), T::zero()];
    let sol = SolutionSet::Singleton(base_u.clone());
    let nb = NeighborhoodSpec::new(base_u.clone(), T::one()).with_domain(DomainRestriction::NonnegativeOrthant);
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    let id = || scal::<T>(1.0, 1, 1);
    r.row("psr P=I", psr(id(), id(), id()), true);
    r.row("psm Xi=0", psm(scal(0.0, 1, 1), id(), id()), true);
    for (label, xi) in [
        ("psm Xi=0.1I", scal(0.1, 1, 1)),
        ("psm Xi=0.5I", scal(0.5, 1, 1)),
        ("psm Xi=I", scal(1.0, 1, 1)),
        ("psm Xi=diag(0.5,0)", diag(0.5, 0.0, 1, 1)),
        ("psm Xi=diag(0,0.5)", diag(0.0, 0.5, 1, 1)),
    ] {
        r.row(label, psm(xi, id(), id()), false);
    }
    Fixture {
        id: FixtureId::OrthantSwap,
        map,
        problem: None,
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: r.rows,
        resolvent: None,
        prox_point: None,
        doc: "T(u) = (u2, u1) on the nonnegative orthant, empty elsewhere.",
    }
}

fn orthant_bilinear<T: Scalar>() -> Fixture<T> {
    let map: Arc<dyn SetMap<T>> = Arc::new(FnMap::new(1, 1, "orthant_bilinear", |u: &PrimalDualVector<T>| {
        let (a, b) = (u.get(0), u.get(1));
        if a < T::zero() || b < T::zero() {
            return Vec::new();
        }
        vec![SetValue::from_intervals(vec![orthant_coord(a, b), orthant_coord(b, a)])]
    }));
    let base_u = pdv(&[0.0], &[0.0]);
    let base_w = vec![T::zero(), T::zero()];
    let sol = SolutionSet::Singleton(base_u.clone());
    let nb = NeighborhoodSpec::new(base_u.clone(), T::one()).with_domain(DomainRestriction::NonnegativeOrthant);
    let nb_open = nb.clone().with_domain(DomainRestriction::OpenPositiveOrthantPlusOrigin);
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    let id = || scal::<T>(1.0, 1, 1);
    r.row("psm Xi=0 on orthant", psm(scal(0.0, 1, 1), id(), id()), true);
    r.row("psm Xi=0.1I on orthant", psm(scal(0.1, 1, 1), id(), id()), false);
    r.row("psr P=I on orthant", psr(id(), id(), id()), false);
    r.row_at("psr P=I on {0} u (0,inf)^2", psr(id(), id(), id()), base_u.clone(), base_w.clone(), nb_open, true);
    let resolvent = orthant_resolvent("orthant_bilinear", 0.0);
    Fixture {
        id: FixtureId::OrthantBilinear,
        map,
        problem: None,
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: r.rows,
        resolvent: Some(resolvent),
        prox_point: None,
        doc: "Clarke subdifferential of u1 u2 + indicator of the nonnegative orthant; \
              inv H(0) restricted to {0} u (0,inf)^2 is {0}.",
    }
}

fn orthant_partial<T: Scalar>() -> Fixture<T> {
    let map: Arc<dyn SetMap<T>> = Arc::new(FnMap::new(1, 1, "orthant_partial", |u: &PrimalDualVector<T>| {
        let (a, b) = (u.get(0), u.get(1));
        if a < T::zero() || b < T::zero() {
            return Vec::new();
        }
        vec![SetValue::from_intervals(vec![orthant_coord(a, a + b), orthant_coord(b, a)])]
    }));
    let base_u = pdv(&[0.0], &[0.0]);
    let base_w = vec![T::zero(), T::zero()];
    let sol = SolutionSet::Product { n: 1, intervals: vec![Interval::point(T::zero()), Interval::at_least(T::zero())] };
    let nb = NeighborhoodSpec::new(base_u.clone(), T::one()).with_domain(DomainRestriction::NonnegativeOrthant);
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    let tau = 0.5;
    // (ZΞ, 2ZW, Z_{i+2}M_{i+2}) at φ₁ = φ₂ = 1 with Ξ = diag(τ, 0)
    r.row(
        "psm Xi=diag(tau,0) N=2tau I M=diag(1+tau,1)",
        psm(diag(tau, 0.0, 1, 1), scal(2.0 * tau, 1, 1), diag(1.0 + tau, 1.0, 1, 1)),
        true,
    );
    r.row("psr P=I", psr(scal(1.0, 1, 1), scal(1.0, 1, 1), scal(1.0, 1, 1)), true);
    let resolvent = orthant_resolvent("orthant_partial", 1.0);
    Fixture {
        id: FixtureId::OrthantPartial,
        map,
        problem: None,
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: r.rows,
        resolvent: Some(resolvent),
        prox_point: None,
        doc: "Subdifferential of u1^2/2 + u1 u2 + indicator of the nonnegative orthant; inv H(0) = {0} x [0, inf).",
    }
}

fn ball_indicator<T: Scalar>(alpha: f64, q_norm: f64) -> Fixture<T> {
    let dir = [0.6, 0.8];
    let xs = [alpha * dir[0], alpha * dir[1]];
    let qs = [q_norm * dir[0], q_norm * dir[1]];
    let a: T = c(alpha);
    let f = ProxFunction::ball(a, 2);
    let map: Arc<dyn SetMap<T>> = Arc::new(SubdifferentialMap::new(f, "ball_indicator"));
    let base_u = pdv(&xs, &[]);
    let base_w = vec![c(qs[0]), c(qs[1])];
    let sol = SolutionSet::Singleton(base_u.clone());
    let nb = NeighborhoodSpec::new(base_u.clone(), c(2.0 * alpha))
        .with_domain(DomainRestriction::Ball { center: vec![T::zero(), T::zero()], radius: a })
        .with_extra_points(vec![pdv(&[-xs[0], -xs[1]], &[])]);
    let gamma = q_norm / (2.0 * alpha);
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    r.row(format!("psm gamma={}", gamma), psm(scal(gamma, 2, 0), scal(1.0, 2, 0), scal(1.0, 2, 0)), true);
    r.row(
        format!("psm gamma=1.05*{}", gamma),
        psm(scal(1.05 * gamma, 2, 0), scal(1.0, 2, 0), scal(1.0, 2, 0)),
        false,
    );
    Fixture {
        id: FixtureId::BallIndicator { alpha, q_norm },
        map,
        problem: None,
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: r.rows,
        resolvent: Some(Resolvent::from_prox(ProxFunction::ball(a, 2))),
        prox_point: None,
        doc: "Normal cone of the ball of radius alpha at x* = alpha (0.6, 0.8), q* = |q*| x*/alpha; \
              gamma = |q*|/(2 alpha).",
    }
}

/// Neighbourhood interval of the absolute-value lemma: the lemma prints the
/// endpoints reversed; this is the reading consistent with its proof.
pub fn abs_value_interval(q: f64, gamma: f64) -> (f64, f64) {
    ((-1.0 - q) / gamma, (1.0 - q) / gamma)
}

/// Neighbourhood for the absolute-value fixture scaled by `enlarge`.
pub fn abs_value_neighborhood<T: Scalar>(q: f64, gamma: f64, enlarge: f64) -> NeighborhoodSpec<T> {
    let (lo, hi) = abs_value_interval(q, gamma);
    let (lo, hi) = (lo * enlarge, hi * enlarge);
    NeighborhoodSpec::new(PrimalDualVector::scalar(T::zero()), c(lo.abs().max(hi.abs())))
        .with_domain(DomainRestriction::Box { lo: vec![c(lo)], hi: vec![c(hi)] })
}

fn abs_value<T: Scalar>(q: f64) -> Fixture<T> {
    let f = ProxFunction::l1(T::one(), 1);
    let map: Arc<dyn SetMap<T>> = Arc::new(SubdifferentialMap::new(f.clone(), "abs_value"));
    let base_u = PrimalDualVector::scalar(T::zero());
    let base_w = vec![c(q)];
    let sol = SolutionSet::Singleton(base_u.clone());
    let nb = abs_value_neighborhood(q, 1.0, 1.0);
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    for g in [0.5, 1.0, 2.0] {
        let chk = || psm(scal(g, 1, 0), scal(1.0, 1, 0), scal(1.0, 1, 0));
        r.row_at(
            format!("psm gamma={} inside", g),
            chk(),
            base_u.clone(),
            base_w.clone(),
            abs_value_neighborhood(q, g, 1.0),
            true,
        );
        r.row_at(
            format!("psm gamma={} enlarged 1%", g),
            chk(),
            base_u.clone(),
            base_w.clone(),
            abs_value_neighborhood(q, g, 1.01),
            false,
        );
    }
    Fixture {
        id: FixtureId::AbsValue { q },
        map,
        problem: None,
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: r.rows,
        resolvent: Some(Resolvent::from_prox(f)),
        prox_point: None,
        doc: "Subdifferential of |.| at (0, q*); PSM with gamma holds on [(-1-q*)/gamma, (1-q*)/gamma].",
    }
}

fn lasso_fixture<T: Scalar>(id: FixtureId, inst: &LassoInstance<T>) -> Result<Fixture<T>, ProblemError> {
    let p = inst.problem()?;
    let sol = inst.solution();
    let base_u = PrimalDualVector::new(vec![T::zero(); inst.n()], inst.z.clone())?;
    let base_w = vec![T::zero(); inst.n() + inst.m()];
    let nb = NeighborhoodSpec::new(base_u.clone(), c(0.5));
    let strict = inst.mode == LassoMode::StrictlyComplementary;
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    r.row("marginal gamma=0 rho=0", CheckSpec::Marginal { gamma: T::zero(), rho: T::zero() }, true);
    r.row("marginal gamma=0.1 rho=1", CheckSpec::Marginal { gamma: c(0.1), rho: T::one() }, strict);
    Ok(Fixture {
        id,
        map: Arc::new(p.clone()),
        problem: Some(p),
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: r.rows,
        resolvent: None,
        prox_point: None,
        doc: "Lasso saddle form with G = alpha|x|_1 and F*(y) = |y|^2/2 - <z, y>; x* = 0, y* = z.",
    })
}

/// Fixture for an explicit instance; `seed` is recorded in the id only.
pub fn fixture_from_instance<T: Scalar>(inst: &Instance<T>, seed: u64) -> Result<Fixture<T>, ProblemError> {
    match inst {
        Instance::Lasso(l) => {
            let id = FixtureId::Lasso { n: l.n(), m: l.m(), alpha: l.alpha.as_f64(), seed, mode: l.mode };
            lasso_fixture(id, l)
        }
        Instance::Tv(t) => tv_fixture(FixtureId::Tv1d { n: t.n, alpha: t.alpha.as_f64(), seed }, t),
    }
}

fn tv_fixture<T: Scalar>(id: FixtureId, inst: &TvInstance<T>) -> Result<Fixture<T>, ProblemError> {
    let p = inst.problem()?;
    let sol = inst.solution()?;
    let base_u = PrimalDualVector::new(inst.x_ref.clone(), inst.y_ref.clone())?;
    let base_w = vec![T::zero(); inst.n + inst.n - 1];
    let nb = NeighborhoodSpec::new(base_u.clone(), c(0.5))
        .with_domain(DomainRestriction::Box { lo: tv_box(inst, true), hi: tv_box(inst, false) });
    let rho = inst.flatness / inst.alpha;
    let mut r = RowBuilder::new(&base_u, &base_w, &nb);
    r.row("marginal gamma=0 rho=0", CheckSpec::Marginal { gamma: T::zero(), rho: T::zero() }, true);
    r.row("marginal gamma=1 rho=flatness/alpha", CheckSpec::Marginal { gamma: T::one(), rho }, true);
    Ok(Fixture {
        id,
        map: Arc::new(p.clone()),
        problem: Some(p),
        base_u,
        base_w,
        solution: sol,
        neighborhood: nb,
        expected: r.rows,
        resolvent: None,
        prox_point: None,
        doc: "Anisotropic 1D TV denoising, G = |x - z|^2/2, F* = indicator of [-alpha, alpha]^(n-1).",
    })
}

/// Sampling box for TV: unrestricted in `x`, the dual box in `y`.
fn tv_box<T: Scalar>(inst: &TvInstance<T>, lower: bool) -> Vec<T> {
    let big = T::max_value();
    let mut v = vec![if lower { -big } else { big }; inst.n];
    v.extend(std::iter::repeat(if lower { -inst.alpha } else { inst.alpha }).take(inst.n - 1));
    v
}

/// Projection fixture with no common `M`/`M'` projection: `A = {(0,0),(1,1)}`,
/// `M = I`, `M' = diag(1, 0)`, sampled at `u = (0.6, 0)`.
pub fn projection_fail_fixture<T: Scalar>(
) -> (SolutionSet<T>, PrimalDualVector<T>, StructuredOperator<T>, StructuredOperator<T>, NeighborhoodSpec<T>) {
    let a = SolutionSet::Finite(vec![pdv(&[0.0], &[0.0]), pdv(&[1.0], &[1.0])]);
    let base = pdv(&[0.0], &[0.0]);
    let nb = NeighborhoodSpec::new(base.clone(), T::one()).with_extra_points(vec![pdv(&[0.6], &[0.0])]);
    (a, base, scal(1.0, 1, 1), diag(1.0, 0.0, 1, 1), nb)
}

/// Brute-force search over two-point sets `{0, p}` with `p` on a small grid
/// for a sample `u` whose `M`- and `M'`-projections are disjoint.
pub fn search_projection_failure(
    m: &StructuredOperator<f64>,
    mp: &StructuredOperator<f64>,
) -> Option<(PrimalDualVector<f64>, PrimalDualVector<f64>)> {
    let grid: Vec<f64> = (-4..=4).map(|k| k as f64 * 0.5).collect();
    for &p1 in &grid {
        for &p2 in &grid {
            if p1 == 0.0 && p2 == 0.0 {
                continue;
            }
            let a = SolutionSet::Finite(vec![pdv(&[0.0], &[0.0]), pdv(&[p1], &[p2])]);
            let base = pdv(&[0.0], &[0.0]);
            let nb = NeighborhoodSpec::new(base.clone(), 2.0).with_grid(9).with_random(0);
            let opts = SamplingOptions { revalidation_samples: 0, ..SamplingOptions::default() };
            let rep = check_projection_condition(&a, &base, m, mp, &nb, &opts).ok()?;
            if let Some(cx) = rep.counterexamples.first() {
                return Some((pdv(&[p1], &[p2]), cx.u.clone()));
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Lasso

/// `min_x ½‖Kx + z‖² + α‖x‖₁` in saddle form: `G = α‖·‖₁`,
/// `F*(y) = ½‖y‖² − ⟨z, y⟩`. The data sign differs from `½‖z − Kx‖²`
/// (replace `z` by `−z`); it makes `y* = z` at `x* = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoInstance<T> {
    pub k: Arc<DenseMatrix<T>>,
    pub z: Vec<T>,
    pub alpha: T,
    /// `α − ‖Kᵀz‖_∞`.
    pub strict_margin: T,
    pub mode: LassoMode,
}

impl<T: Scalar> LassoInstance<T> {
    pub fn n(&self) -> usize {
        self.k.cols()
    }

    pub fn m(&self) -> usize {
        self.k.rows()
    }

    pub fn problem(&self) -> Result<SaddleProblem<T>, ProblemError> {
        Ok(SaddleProblem::new(
            ProxFunction::l1(self.alpha, self.n()),
            ProxFunction::sq_dist_point(self.z.clone()),
            self.k.clone(),
        )?)
    }

    /// `{(0, z)}`. Also the solution in boundary mode unless a column of `K`
    /// attaining `‖Kᵀz‖_∞` vanishes.
    pub fn solution(&self) -> SolutionSet<T> {
        SolutionSet::Singleton(
            PrimalDualVector::new(vec![T::zero(); self.n()], self.z.clone()).expect("n >= 1"),
        )
    }
}

fn kt_inf_norm<T: Scalar>(k: &DenseMatrix<T>, z: &[T]) -> T {
    k.matvec_t(z).into_iter().fold(T::zero(), |a, v| a.max(v.abs()))
}

/// Seeded Lasso instance with `x* = 0`, `y* = z`.
pub fn make_lasso_instance<T: Scalar>(
    n: usize,
    m: usize,
    alpha: T,
    seed: u64,
    mode: LassoMode,
) -> Result<LassoInstance<T>, ProblemError> {
    if n == 0 || m == 0 {
        return Err(ProblemError::InvalidParameter("lasso needs n, m >= 1".into()));
    }
    if !(alpha > T::zero()) {
        return Err(ProblemError::InvalidParameter("lasso needs alpha > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = match mode {
        LassoMode::StrictlyComplementary => alpha * c(0.8),
        LassoMode::Boundary => alpha,
    };
    for _ in 0..100 {
        let data: Vec<T> = (0..m * n).map(|_| c(rng.gen_range(-1.0..=1.0))).collect();
        let k = DenseMatrix::new(m, n, data)?;
        let z0: Vec<T> = (0..m).map(|_| c(rng.gen_range(-1.0..=1.0))).collect();
        let nrm = kt_inf_norm(&k, &z0);
        if !(nrm > c(1e-12)) {
            continue;
        }
        let s = target / nrm;
        let z: Vec<T> = z0.into_iter().map(|v| v * s).collect();
        let inst = lasso_from_data(k, z, alpha)?;
        return Ok(LassoInstance { mode, ..inst });
    }
    Err(ProblemError::GeneratorFailure("lasso: K^T z vanished for 100 draws".into()))
}

/// Lasso instance from explicit data; rejects `‖Kᵀz‖_∞ > α`.
pub fn lasso_from_data<T: Scalar>(k: DenseMatrix<T>, z: Vec<T>, alpha: T) -> Result<LassoInstance<T>, ProblemError> {
    if k.rows() != z.len() {
        return Err(ProblemError::InvalidParameter("z length must equal the rows of K".into()));
    }
    let margin = alpha - kt_inf_norm(&k, &z);
    let tol = c::<T>(1e-12) * (T::one() + alpha);
    if margin < -tol {
        return Err(ProblemError::InvalidParameter("|K^T z|_inf exceeds alpha; x* = 0 is not optimal".into()));
    }
    let mode = if margin > tol { LassoMode::StrictlyComplementary } else { LassoMode::Boundary };
    Ok(LassoInstance { k: Arc::new(k), z, alpha, strict_margin: margin, mode })
}

// ---------------------------------------------------------------------------
// TV

/// Forward differences `(Kx)_k = x_{k+1} − x_k`, shape `(n−1) × n`.
pub fn forward_difference<T: Scalar>(n: usize) -> DenseMatrix<T> {
    let mut k = DenseMatrix::zeros(n - 1, n);
    for i in 0..n - 1 {
        k.set(i, i, -T::one());
        k.set(i, i + 1, T::one());
    }
    k
}

/// `min_x ½‖x − z‖² + α‖Kx‖₁` with oracle solution.
#[derive(Debug, Clone, PartialEq)]
pub struct TvInstance<T> {
    pub n: usize,
    pub k: Arc<DenseMatrix<T>>,
    pub z: Vec<T>,
    pub alpha: T,
    pub x_ref: Vec<T>,
    pub y_ref: Vec<T>,
    /// `min_k |(K x_ref)_k|`.
    pub flatness: T,
}

impl<T: Scalar> TvInstance<T> {
    pub fn problem(&self) -> Result<SaddleProblem<T>, ProblemError> {
        let lo = vec![-self.alpha; self.n - 1];
        let hi = vec![self.alpha; self.n - 1];
        Ok(SaddleProblem::new(
            ProxFunction::sq_dist_point(self.z.clone()),
            ProxFunction::new(ProxKind::Box { lo, hi }, self.n - 1)?,
            self.k.clone(),
        )?)
    }

    pub fn solution(&self) -> Result<SolutionSet<T>, ProblemError> {
        Ok(SolutionSet::Singleton(PrimalDualVector::new(self.x_ref.clone(), self.y_ref.clone())?))
    }
}

/// Seeded strictly increasing data (increments uniform in `[0.2, 1]`),
/// regrown until the solution has no flat region.
pub fn make_tv_instance<T: Scalar>(n: usize, alpha: T, seed: u64) -> Result<TvInstance<T>, ProblemError> {
    if n < 3 {
        return Err(ProblemError::InvalidParameter("tv1d needs n >= 3".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = T::zero();
    for _ in 0..50 {
        let mut z = Vec::with_capacity(n);
        let mut acc = T::zero();
        z.push(acc);
        for _ in 1..n {
            acc += c::<T>(rng.gen_range(0.2..=1.0));
            z.push(acc);
        }
        let inst = tv_instance_from_data(z, alpha)?;
        if inst.flatness > c(1e-6) {
            return Ok(inst);
        }
        last = inst.flatness;
    }
    Err(ProblemError::GeneratorFailure(format!(
        "tv1d: 50 consecutive flat solutions (n={}, alpha={}, last flatness {})",
        n,
        fmt17(alpha),
        fmt17(last)
    )))
}

/// TV instance from explicit data, solved by the oracle. Flat solutions are
/// accepted here (flatness 0); [`make_tv_instance`] rejects them.
pub fn tv_instance_from_data<T: Scalar>(z: Vec<T>, alpha: T) -> Result<TvInstance<T>, ProblemError> {
    let n = z.len();
    if n < 3 {
        return Err(ProblemError::InvalidParameter("tv1d needs n >= 3".into()));
    }
    if !(alpha >= T::zero()) {
        return Err(ProblemError::InvalidParameter("tv1d needs alpha >= 0".into()));
    }
    let k = Arc::new(forward_difference::<T>(n));
    let (x_ref, y_ref) = tv_oracle(&k, &z, alpha)?;
    let flatness = k.matvec(&x_ref).into_iter().fold(T::infinity(), |a, v| a.min(v.abs()));
    Ok(TvInstance { n, k, z, alpha, x_ref, y_ref, flatness })
}

/// Reference TV solution: PDHGM (constant steps, `τσ‖K‖² = 0.99`) until the
/// optimality residual is below `1e-10`, cross-validated by the exact
/// segment-wise KKT solve for the jump pattern it found.
pub fn tv_oracle<T: Scalar>(k: &Arc<DenseMatrix<T>>, z: &[T], alpha: T) -> Result<(Vec<T>, Vec<T>), ProblemError> {
    let n = z.len();
    if alpha == T::zero() {
        return Ok((z.to_vec(), vec![T::zero(); n - 1]));
    }
    let (x_pd, y_pd) = tv_pdhgm_solve(k, z, alpha)?;
    let (x_kkt, y_kkt) = tv_segment_solve(z, alpha, &k.matvec(&x_pd))?;
    let dx = x_pd.iter().zip(&x_kkt).fold(T::zero(), |a, (&p, &q)| a.max((p - q).abs()));
    let dy = y_pd.iter().zip(&y_kkt).fold(T::zero(), |a, (&p, &q)| a.max((p - q).abs()));
    let agree = c::<T>(1e-8).max(T::epsilon() * c(1e4));
    if !(dx.max(dy) <= agree) {
        return Err(ProblemError::OracleFailure(format!(
            "tv1d: PDHGM and segment solve disagree by {} (primal) / {} (dual)",
            fmt17(dx),
            fmt17(dy)
        )));
    }
    Ok((x_kkt, y_kkt))
}

fn tv_pdhgm_solve<T: Scalar>(k: &Arc<DenseMatrix<T>>, z: &[T], alpha: T) -> Result<(Vec<T>, Vec<T>), ProblemError> {
    let n = z.len();
    let p = SaddleProblem::new(
        ProxFunction::sq_dist_point(z.to_vec()),
        ProxFunction::new(ProxKind::Box { lo: vec![-alpha; n - 1], hi: vec![alpha; n - 1] }, n - 1)?,
        k.clone(),
    )?;
    let kn = k.spectral_norm();
    let step = c::<T>(0.99).sqrt() / kn;
    let accept = c::<T>(1e-10).max(T::epsilon() * c(1e6));
    let mut x = z.to_vec();
    let mut y = vec![T::zero(); n - 1];
    let mut res = T::infinity();
    for it in 1..=1_000_000usize {
        let (xn, yn) = pdhgm_step(&p, step, step, T::one(), &x, &y)?;
        x = xn;
        y = yn;
        if it % 50 == 0 {
            res = p.optimality_residual(&PrimalDualVector::new(x.clone(), y.clone())?)?;
            if res <= accept * c(1e-2) {
                break;
            }
        }
    }
    if !(res <= accept) {
        return Err(ProblemError::OracleFailure(format!(
            "tv1d: PDHGM optimality residual {} above {}",
            fmt17(res),
            fmt17(accept)
        )));
    }
    Ok((x, y))
}

/// Exact solve given the jump pattern of `d = K x_approx`: the solution is
/// constant on each run of (numerically) zero differences with jump signs
/// `sign(d_k)`; each run level is the data mean shifted by the boundary duals.
fn tv_segment_solve<T: Scalar>(z: &[T], alpha: T, d: &[T]) -> Result<(Vec<T>, Vec<T>), ProblemError> {
    let n = z.len();
    let zero_tol = c::<T>(1e-7);
    let sign = |v: T| if v.abs() <= zero_tol { T::zero() } else { v.signum() };
    // segments [start, end] split where a jump occurs
    let mut x = vec![T::zero(); n];
    let mut start = 0;
    for j in 0..n {
        let jump_after = j + 1 < n && sign(d[j]) != T::zero();
        if j + 1 == n || jump_after {
            let left = if start == 0 { T::zero() } else { alpha * sign(d[start - 1]) };
            let right = if j + 1 == n { T::zero() } else { alpha * sign(d[j]) };
            let len = T::from_usize_lossy(j - start + 1);
            let mean = z[start..=j].iter().copied().sum::<T>() / len;
            // Σ(x − z) over the run = y_end − y_{start−1}
            let level = mean + (right - left) / len;
            for xv in &mut x[start..=j] {
                *xv = level;
            }
            start = j + 1;
        }
    }
    // y from (Kᵀy)_j = y_{j−1} − y_j = z_j − x_j, exact α·sign at jumps
    let mut y = vec![T::zero(); n - 1];
    let mut prev = T::zero();
    for j in 0..n - 1 {
        let s = sign(d[j]);
        let v = if s != T::zero() { alpha * s } else { prev - z[j] + x[j] };
        y[j] = v;
        prev = v;
    }
    let tol = c::<T>(1e-9) * (T::one() + alpha);
    for j in 0..n - 1 {
        let s = sign(d[j]);
        let dx = x[j + 1] - x[j];
        if y[j].abs() > alpha + tol || (s != T::zero() && dx * s <= T::zero()) {
            return Err(ProblemError::OracleFailure(format!(
                "tv1d: segment solve violates optimality at difference {}",
                j
            )));
        }
    }
    Ok((x, y))
}

// ---------------------------------------------------------------------------
// Serialization

/// A generated instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Instance<T> {
    Lasso(LassoInstance<T>),
    Tv(TvInstance<T>),
}

fn write_row<T: Scalar>(out: &mut String, v: &[T]) {
    let parts: Vec<String> = v.iter().map(|&x| fmt17(x)).collect();
    let _ = writeln!(out, "{}", parts.join(" "));
}

/// Header line, `K` rows, then `z`; all numbers with 17 significant digits.
pub fn instance_to_text<T: Scalar>(inst: &Instance<T>) -> String {
    let mut out = String::new();
    let (k, z) = match inst {
        Instance::Lasso(l) => {
            let _ = writeln!(out, "lasso {} {} {}", l.n(), l.m(), fmt17(l.alpha));
            (&l.k, &l.z)
        }
        Instance::Tv(t) => {
            let _ = writeln!(out, "tv1d {} {}", t.n, fmt17(t.alpha));
            (&t.k, &t.z)
        }
    };
    for i in 0..k.rows() {
        write_row(&mut out, k.row(i));
    }
    write_row(&mut out, z);
    out
}

fn perr(line: usize, msg: impl Into<String>) -> ProblemError {
    ProblemError::Parse { line, msg: msg.into() }
}

fn parse_row<T: Scalar>(line: usize, s: &str, len: usize) -> Result<Vec<T>, ProblemError> {
    let v: Vec<T> = s
        .split_whitespace()
        .map(|t| parse_scalar(t).ok_or_else(|| perr(line, format!("bad number '{}'", t))))
        .collect::<Result<_, _>>()?;
    if v.len() != len {
        return Err(perr(line, format!("expected {} numbers, found {}", len, v.len())));
    }
    Ok(v)
}

fn parse_usize(line: usize, s: Option<&str>, what: &str) -> Result<usize, ProblemError> {
    s.and_then(|t| t.parse().ok()).ok_or_else(|| perr(line, format!("bad or missing {}", what)))
}

/// Inverse of [`instance_to_text`]. TV instances are re-solved by the oracle.
pub fn parse_instance<T: Scalar>(text: &str) -> Result<Instance<T>, ProblemError> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let head = lines.first().ok_or_else(|| perr(1, "empty instance"))?;
    let mut it = head.split_whitespace();
    let kind = it.next().unwrap_or("");
    let (n, m, alpha): (usize, usize, T) = match kind {
        "lasso" => {
            let n = parse_usize(1, it.next(), "n")?;
            let m = parse_usize(1, it.next(), "m")?;
            let a = it.next().and_then(parse_scalar).ok_or_else(|| perr(1, "bad or missing alpha"))?;
            (n, m, a)
        }
        "tv1d" => {
            let n = parse_usize(1, it.next(), "n")?;
            if n < 3 {
                return Err(perr(1, "tv1d needs n >= 3"));
            }
            let a = it.next().and_then(parse_scalar).ok_or_else(|| perr(1, "bad or missing alpha"))?;
            (n, n - 1, a)
        }
        other => return Err(perr(1, format!("unknown instance kind '{}'", other))),
    };
    if it.next().is_some() {
        return Err(perr(1, "trailing tokens in header"));
    }
    if n == 0 || m == 0 {
        return Err(perr(1, "dimensions must be >= 1"));
    }
    if lines.len() != m + 2 {
        return Err(perr(lines.len().min(m + 2), format!("expected {} lines, found {}", m + 2, lines.len())));
    }
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        data.extend(parse_row::<T>(i + 2, lines[i + 1], n)?);
    }
    let k = DenseMatrix::new(m, n, data)?;
    let z = parse_row::<T>(m + 2, lines[m + 1], m.max(if kind == "tv1d" { n } else { m }))?;
    Ok(match kind {
        "lasso" => Instance::Lasso(lasso_from_data(k, z, alpha)?),
        _ => {
            if k != forward_difference(n) {
                return Err(perr(2, "tv1d K must be the forward-difference matrix"));
            }
            Instance::Tv(tv_instance_from_data(z, alpha)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthant_resolvent_example() {
        let r = orthant_resolvent::<f64>("b", 0.0);
        let v = r.apply(0.5, &pdv(&[0.5], &[0.5])).unwrap();
        assert!((v.get(0) - 1.0 / 3.0).abs() < 1e-15 && (v.get(1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lasso_scalar_examples() {
        let k = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let l = lasso_from_data::<f64>(k.clone(), vec![0.8], 1.0).unwrap();
        assert!((l.strict_margin - 0.2).abs() < 1e-15);
        assert_eq!(l.mode, LassoMode::StrictlyComplementary);
        let p = l.problem().unwrap();
        assert!(p.optimality_residual(&pdv(&[0.0], &[0.8])).unwrap() <= 1e-12);
        let b = lasso_from_data(k, vec![1.0], 1.0).unwrap();
        assert_eq!(b.mode, LassoMode::Boundary);
    }

    #[test]
    fn tv_small_and_degenerate() {
        let t = tv_instance_from_data::<f64>(vec![0.0, 1.0, 2.0], 0.1).unwrap();
        let d = t.k.matvec(&t.x_ref);
        assert!(d.iter().all(|&v| v > 0.0));
        assert!((t.x_ref[0] - 0.1).abs() < 1e-12 && (t.x_ref[2] - 1.9).abs() < 1e-12);
        let t0 = tv_instance_from_data::<f64>(vec![0.0, 0.5, 2.0], 0.0).unwrap();
        assert_eq!(t0.x_ref, vec![0.0, 0.5, 2.0]);
        assert!((t0.flatness - 0.5).abs() < 1e-15);
        let flat = tv_instance_from_data::<f64>(vec![1.0; 5], 0.1).unwrap();
        assert_eq!(flat.flatness, 0.0);
    }

    #[test]
    fn unknown_fixture_rejected() {
        assert!(matches!(FixtureId::from_name("nope"), Err(ProblemError::UnknownFixture(_))));
        assert!(make_fixture::<f64>(&FixtureId::DistDyadic { levels: 41 }).is_err());
    }
}
