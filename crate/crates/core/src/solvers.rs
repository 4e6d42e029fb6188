//! Proximal point, forward–backward and PDHGM iterations with step/testing
//! schedules, a per-iteration monitor of the convergence inequalities, and
//! rate fitting.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{dot, LinalgError, PrimalDualVector, StructuredOperator};
use crate::regularity::{dist_sq_to_solution, SetMap, Weight};
use crate::scalar::{fmt17, Scalar};
use crate::setvalued::{ProxFunction, SaddleProblem, SetValuedError, SolutionSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("rejected schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    SetValued(#[from] SetValuedError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("cannot fit rate: {0}")]
    InsufficientData(String),
}

/// Relative tolerance for the step conditions.
pub const STEP_CONDITION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Accelerated,
    Linear,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Accelerated => "accelerated",
            Self::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(Self::Constant),
            "accelerated" => Some(Self::Accelerated),
            "linear" => Some(Self::Linear),
            _ => None,
        }
    }
}

/// PDHGM step length and testing parameter schedule.
///
/// `ψ_i` is not a free parameter: it follows from `φ_iτ_i = ψ_iσ_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule<T> {
    pub kind: ScheduleKind,
    pub tau0: T,
    pub sigma0: T,
    /// Acceleration factor `γ̃` (accelerated only).
    pub gamma_tilde: T,
    /// Primal strong submonotonicity constant.
    pub gamma: T,
    /// Dual strong submonotonicity constant.
    pub rho: T,
    pub delta: T,
    pub phi0: T,
}

impl<T: Scalar> StepSchedule<T> {
    pub fn constant(tau: T, sigma: T, delta: T) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            tau0: tau,
            sigma0: sigma,
            gamma_tilde: T::zero(),
            gamma: T::zero(),
            rho: T::zero(),
            delta,
            phi0: T::one(),
        }
    }

    /// `γ` defaults to `γ̃`.
    pub fn accelerated(tau0: T, sigma0: T, gamma_tilde: T, delta: T) -> Self {
        Self {
            kind: ScheduleKind::Accelerated,
            gamma_tilde,
            gamma: gamma_tilde,
            ..Self::constant(tau0, sigma0, delta)
        }
    }

    pub fn linear(tau: T, sigma: T, gamma: T, rho: T, delta: T) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            gamma,
            rho,
            ..Self::constant(tau, sigma, delta)
        }
    }

    pub fn with_phi0(mut self, phi0: T) -> Self {
        self.phi0 = phi0;
        self
    }

    /// `θ = 1 + min{ρσ, γτ}`.
    pub fn theta(&self) -> T {
        T::one() + (self.rho * self.sigma0).min(self.gamma * self.tau0)
    }

    /// Checks parameter ranges and the initial step condition.
    pub fn validate(&self, k_norm: T) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidSchedule(m));
        for (name, v) in [("tau0", self.tau0), ("sigma0", self.sigma0), ("phi0", self.phi0)] {
            if !(v > T::zero() && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return bad(format!("delta must lie in (0,1), got {}", self.delta));
        }
        if !(self.gamma >= T::zero() && self.rho >= T::zero() && self.gamma_tilde >= T::zero()) {
            return bad("gamma, rho and gamma_tilde must be >= 0".into());
        }
        let coupling = (T::one() - self.delta) * self.tau0 * self.sigma0 * k_norm * k_norm;
        let tol = T::c(STEP_CONDITION_TOL);
        match self.kind {
            ScheduleKind::Constant | ScheduleKind::Accelerated => {
                if coupling > T::one() + tol {
                    return bad(format!("1 >= (1-delta)*tau*sigma*|K|^2 violated ({coupling})"));
                }
            }
            ScheduleKind::Linear => {
                let theta = self.theta();
                if coupling > theta * (T::one() + tol) {
                    return bad(format!("theta >= (1-delta)*tau*sigma*|K|^2 violated ({theta} < {coupling})"));
                }
            }
        }
        if self.kind == ScheduleKind::Accelerated {
            if self.gamma_tilde <= T::zero() {
                return bad("accelerated schedule needs gamma_tilde > 0".into());
            }
            if self.gamma_tilde > self.gamma {
                return bad(format!("gamma_tilde {} exceeds gamma {}", self.gamma_tilde, self.gamma));
            }
        }
        Ok(())
    }
}

/// Parameters of step `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams<T> {
    pub i: usize,
    pub tau: T,
    /// `σ_{i+1}`.
    pub sigma: T,
    pub phi: T,
    /// `ψ_{i+1}`.
    pub psi: T,
    pub omega: T,
    /// `τ_{i+1}`, `φ_{i+1}`, `ψ_{i+2}` for the next metric.
    pub tau_next: T,
    pub phi_next: T,
    pub psi_next: T,
    /// `ψ_i σ_i`, for the product condition.
    pub psi_sigma_this: T,
    /// `ψ_i`.
    pub psi_this: T,
}

/// Incrementally evaluated schedule sequences.
#[derive(Debug, Clone)]
pub struct ScheduleState<T> {
    pub schedule: StepSchedule<T>,
    phi: Vec<T>,
    tau: Vec<T>,
    psi_const: T,
}

impl<T: Scalar> ScheduleState<T> {
    pub fn new(schedule: StepSchedule<T>, k_norm: T) -> Result<Self, SolverError> {
        schedule.validate(k_norm)?;
        Ok(Self {
            schedule,
            phi: vec![schedule.phi0],
            tau: vec![schedule.tau0],
            psi_const: schedule.phi0 * schedule.tau0 / schedule.sigma0,
        })
    }

    fn extend_to(&mut self, i: usize) {
        let s = self.schedule;
        while self.phi.len() <= i {
            let k = self.phi.len() - 1;
            let (phi, tau) = (self.phi[k], self.tau[k]);
            let next_phi = match s.kind {
                ScheduleKind::Constant => phi,
                ScheduleKind::Linear => s.theta() * phi,
                ScheduleKind::Accelerated => phi * (T::one() + s.gamma_tilde * tau),
            };
            let next_tau = match s.kind {
                ScheduleKind::Accelerated => s.tau0 * (s.phi0 / next_phi).sqrt(),
                _ => s.tau0,
            };
            self.phi.push(next_phi);
            self.tau.push(next_tau);
        }
    }

    pub fn phi(&mut self, i: usize) -> T {
        self.extend_to(i);
        self.phi[i]
    }

    pub fn tau(&mut self, i: usize) -> T {
        self.extend_to(i);
        self.tau[i]
    }

    pub fn sigma(&mut self, i: usize) -> T {
        match self.schedule.kind {
            ScheduleKind::Accelerated => {
                let (p, t) = (self.phi(i), self.tau(i));
                p * t / self.psi_const
            }
            _ => self.schedule.sigma0,
        }
    }

    pub fn psi(&mut self, i: usize) -> T {
        match self.schedule.kind {
            ScheduleKind::Accelerated => self.psi_const,
            _ => {
                let (p, t) = (self.phi(i), self.tau(i));
                p * t / self.schedule.sigma0
            }
        }
    }

    /// Step-`i` parameters; `ω_i = ψ_{i+1}⁻¹σ_{i+1}⁻¹φ_iτ_i`.
    pub fn params(&mut self, i: usize) -> StepParams<T> {
        self.extend_to(i + 2);
        let (tau, phi) = (self.tau(i), self.phi(i));
        let sigma = self.sigma(i + 1);
        let psi = self.psi(i + 1);
        StepParams {
            i,
            tau,
            sigma,
            phi,
            psi,
            omega: phi * tau / (psi * sigma),
            tau_next: self.tau(i + 1),
            phi_next: self.phi(i + 1),
            psi_next: self.psi(i + 2),
            psi_sigma_this: self.psi(i) * self.sigma(i),
            psi_this: self.psi(i),
        }
    }

    /// Relative slacks of the four step conditions at step `i`, each
    /// required to be `≥ −1e-12`.
    pub fn step_condition_slacks(&mut self, i: usize, k_norm: T) -> [T; 4] {
        let p = self.params(i);
        let s = self.schedule;
        let sigma_i = self.sigma(i);
        let c1 = (p.phi * (T::one() + s.gamma * p.tau) - p.phi_next) / p.phi_next;
        let c2 = (p.psi * (T::one() + s.rho * p.sigma) - p.psi_next) / p.psi_next;
        let prod = p.phi * p.tau;
        let c3 = -((prod - p.psi_sigma_this) / prod).abs();
        let c4 = p.psi / p.psi_this - (T::one() - s.delta) * p.tau * sigma_i * k_norm * k_norm;
        [c1, c2, c3, c4]
    }
}

/// Step-`i` parameters computed from scratch.
pub fn advance_schedule<T: Scalar>(s: &StepSchedule<T>, k_norm: T, i: usize) -> Result<StepParams<T>, SolverError> {
    Ok(ScheduleState::new(*s, k_norm)?.params(i))
}

type ResolventFn<T> = dyn Fn(T, &PrimalDualVector<T>) -> Result<PrimalDualVector<T>, SolverError> + Send + Sync;
type GradFn<T> = dyn Fn(&PrimalDualVector<T>) -> PrimalDualVector<T> + Send + Sync;

/// Resolvent `(I + τT)⁻¹`.
#[derive(Clone)]
pub struct Resolvent<T> {
    pub name: String,
    f: Arc<ResolventFn<T>>,
}

impl<T> std::fmt::Debug for Resolvent<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Resolvent({})", self.name)
    }
}

impl<T: Scalar> Resolvent<T> {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(T, &PrimalDualVector<T>) -> Result<PrimalDualVector<T>, SolverError> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    /// `prox_{τf}` acting on the primal block (`m = 0`).
    pub fn from_prox(f: ProxFunction<T>) -> Self {
        Self::new("prox", move |tau, u| {
            let x = f.prox(tau, u.x())?;
            Ok(PrimalDualVector::primal(x)?)
        })
    }

    pub fn apply(&self, tau: T, u: &PrimalDualVector<T>) -> Result<PrimalDualVector<T>, SolverError> {
        (self.f)(tau, u)
    }
}

/// Smooth term `J` with gradient and Lipschitz constant `L` of `∇J`.
#[derive(Clone)]
pub struct SmoothTerm<T> {
    pub lipschitz: T,
    grad: Arc<GradFn<T>>,
}

impl<T: Scalar> SmoothTerm<T> {
    pub fn new(lipschitz: T, grad: impl Fn(&PrimalDualVector<T>) -> PrimalDualVector<T> + Send + Sync + 'static) -> Self {
        Self { lipschitz, grad: Arc::new(grad) }
    }

    /// `J = ½‖u − c‖²`.
    pub fn sq_dist(center: PrimalDualVector<T>) -> Self {
        Self::new(T::one(), move |u| u.sub(&center))
    }

    pub fn grad(&self, u: &PrimalDualVector<T>) -> PrimalDualVector<T> {
        (self.grad)(u)
    }
}

impl<T> std::fmt::Debug for SmoothTerm<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SmoothTerm")
    }
}

/// One basic proximal point step `0 ∈ H(u⁺) + τ⁻¹(u⁺ − u)`.
pub fn prox_point_step<T: Scalar>(
    res: &Resolvent<T>,
    tau: T,
    u: &PrimalDualVector<T>,
) -> Result<PrimalDualVector<T>, SolverError> {
    if !(tau > T::zero()) {
        return Err(SolverError::InvalidConfig("step length must be positive".into()));
    }
    res.apply(tau, u)
}

/// `u⁺ = (I + τH₀)⁻¹(u − τ∇J(u))`.
pub fn forward_backward_step<T: Scalar>(
    res: &Resolvent<T>,
    j: &SmoothTerm<T>,
    tau: T,
    u: &PrimalDualVector<T>,
) -> Result<PrimalDualVector<T>, SolverError> {
    let v = u.axpy(-tau, &j.grad(u));
    prox_point_step(res, tau, &v)
}

/// One PDHGM iteration in the exact order x-prox, over-relaxation, y-prox.
pub fn pdhgm_step<T: Scalar>(
    p: &SaddleProblem<T>,
    tau: T,
    sigma: T,
    omega: T,
    x: &[T],
    y: &[T],
) -> Result<(Vec<T>, Vec<T>), SolverError> {
    let kty = p.k.matvec_t(y);
    let xv: Vec<T> = x.iter().zip(&kty).map(|(&a, &b)| a - tau * b).collect();
    let xn = p.g.prox(tau, &xv)?;
    let xbar: Vec<T> = xn.iter().zip(x).map(|(&a, &b)| omega * (a - b) + a).collect();
    let kx = p.k.matvec(&xbar);
    let yv: Vec<T> = y.iter().zip(&kx).map(|(&a, &b)| a + sigma * b).collect();
    let yn = p.fstar.prox(sigma, &yv)?;
    Ok((xn, yn))
}

/// Optional error-bound data: `δ` and `P` for the partial error bound and
/// the combined condition.
#[derive(Debug, Clone)]
pub struct ErrorBoundConfig<T> {
    pub delta: T,
    pub p: StructuredOperator<T>,
}

/// The iteration to run.
#[derive(Clone)]
pub enum Method<T: Scalar> {
    /// Basic proximal point with `Z_{i+1} = φ_i I`, `Ξ = ξI`, `φ_{i+1} = φ_i(1+ξ)`.
    ProxPoint {
        map: Arc<dyn SetMap<T>>,
        resolvent: Resolvent<T>,
        tau: T,
        xi: T,
    },
    /// Forward–backward splitting for `H = H₀ + ∇J`; `map` is `H₀`.
    ForwardBackward {
        map: Arc<dyn SetMap<T>>,
        resolvent: Resolvent<T>,
        smooth: SmoothTerm<T>,
        tau: T,
        xi: T,
    },
    Pdhgm {
        problem: SaddleProblem<T>,
        schedule: StepSchedule<T>,
    },
}

impl<T: Scalar> std::fmt::Debug for Method<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl<T: Scalar> Method<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ProxPoint { .. } => "prox_point",
            Self::ForwardBackward { .. } => "forward_backward",
            Self::Pdhgm { .. } => "pdhgm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorOptions<T> {
    pub max_iter: usize,
    pub stop_tol: T,
    /// Divergence when the squared distance exceeds this multiple of its
    /// initial value.
    pub divergence_factor: T,
}

impl<T: Scalar> Default for MonitorOptions<T> {
    fn default() -> Self {
        Self { max_iter: 10_000, stop_tol: T::c(1e-12), divergence_factor: T::c(1e6) }
    }
}

/// One monitored iterate. Residual fields of record `i ≥ 1` describe the
/// step `u^{i−1} → u^i`; record 0 carries NaN there.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord<T> {
    pub iter: usize,
    pub u: PrimalDualVector<T>,
    pub tau: T,
    pub sigma: T,
    pub phi: T,
    pub psi: T,
    pub omega: T,
    pub dist2_euclid_primal: T,
    /// Euclidean squared distance of the full iterate.
    pub dist2_full: T,
    /// `dist²_{Z_{i+1}M_{i+1}}(u^i, S)`; NaN if the metric is indefinite.
    pub dist2_zm: T,
    pub metric_psd: bool,
    pub ci_residual: T,
    /// `½dist²_{Z₁M₁}(u⁰) − ½dist²_{Z_{i+1}M_{i+1}}(u^i)` with `Δ = 0`.
    pub di_slack: T,
    /// `½‖u^i−u^{i−1}‖²_{ZM} − ½‖q‖²_{Z(ZM)⁻¹Z}` with `q = −M(u^i−u^{i−1})`.
    pub lemma_residual: T,
    pub peb_residual: Option<T>,
    pub ci_plus_residual: Option<T>,
    /// Rate estimate minus the observed distance.
    pub rate_bound_slack: T,
    pub opt_residual: T,
    /// Smallest relative step-condition slack (PDHGM).
    pub step_condition_slack: Option<T>,
    /// `Z_{i+1}M_{i+1} − diag(δφ_i I, 0) ≥ 0` (PDHGM).
    pub precond_lower_psd: Option<bool>,
}

/// Result of a monitored run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace<T> {
    pub method: String,
    pub records: Vec<IterRecord<T>>,
    pub diverged: bool,
    pub converged: bool,
    /// Solution-set infima were over a sample, so CI residuals are only
    /// necessary conditions.
    pub sampled_infimum: bool,
    pub warnings: Vec<String>,
}

/// CSV header of [`IterationTrace::to_csv`].
pub const TRACE_CSV_HEADER: &str =
    "iter,tau,sigma,phi,psi,omega,dist2_euclid_primal,dist2_zm,ci_residual,di_slack,opt_residual";

impl<T: Scalar> IterationTrace<T> {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.records.len() + 1));
        s.push_str(TRACE_CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.iter,
                fmt17(r.tau),
                fmt17(r.sigma),
                fmt17(r.phi),
                fmt17(r.psi),
                fmt17(r.omega),
                fmt17(r.dist2_euclid_primal),
                fmt17(r.dist2_zm),
                fmt17(r.ci_residual),
                fmt17(r.di_slack),
                fmt17(r.opt_residual),
            );
        }
        s
    }

    pub fn last(&self) -> &IterRecord<T> {
        self.records.last().expect("trace always has the initial record")
    }

    /// Iterations run (records minus the initial point).
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }
}

/// Metric data for one step.
struct StepOps<T> {
    zm: StructuredOperator<T>,
    m: StructuredOperator<T>,
    z: StructuredOperator<T>,
    zxi: StructuredOperator<T>,
    zm_next: StructuredOperator<T>,
    params: StepParams<T>,
}

fn scalar_ops<T: Scalar>(n: usize, m: usize, phi: T, tau: T, xi: T, i: usize) -> StepOps<T> {
    let phi_next = phi * (T::one() + xi);
    StepOps {
        zm: StructuredOperator::scalar(phi, n, m),
        m: StructuredOperator::identity(n, m),
        z: StructuredOperator::scalar(phi, n, m),
        zxi: StructuredOperator::scalar(phi * xi, n, m),
        zm_next: StructuredOperator::scalar(phi_next, n, m),
        params: StepParams {
            i,
            tau,
            sigma: tau,
            phi,
            psi: phi,
            omega: T::nan(),
            tau_next: tau,
            phi_next,
            psi_next: phi_next,
            psi_sigma_this: phi * tau,
            psi_this: phi,
        },
    }
}

fn pdhgm_ops<T: Scalar>(p: &SaddleProblem<T>, s: &StepSchedule<T>, sp: StepParams<T>) -> Result<StepOps<T>, SolverError> {
    let k = Some(p.k.clone());
    let (n, m) = (p.n(), p.m());
    let pt = sp.phi * sp.tau;
    let ps = sp.psi * sp.sigma;
    let zm = StructuredOperator::new(sp.phi, -pt, -pt, sp.psi, k.clone(), n, m)?;
    let mm = StructuredOperator::new(T::one(), -sp.tau, -pt / sp.psi, T::one(), k.clone(), n, m)?;
    let zxi = StructuredOperator::new(pt * s.gamma, T::c(2.0) * pt, -T::c(2.0) * ps, ps * s.rho, k.clone(), n, m)?;
    let ptn = sp.phi_next * sp.tau_next;
    let zm_next = StructuredOperator::new(sp.phi_next, -ptn, -ptn, sp.psi_next, k, n, m)?;
    Ok(StepOps {
        zm,
        m: mm,
        z: StructuredOperator::diag(sp.phi, sp.psi, n, m),
        zxi,
        zm_next,
        params: sp,
    })
}

fn is_psd_closed_form<T: Scalar>(op: &StructuredOperator<T>, k_norm: T) -> (bool, T) {
    let lmin = op.min_eigenvalue_closed_form(k_norm);
    let scale = op.a.abs().max(op.d.abs()).max(T::one());
    (lmin >= -T::c(1e-12) * scale, lmin)
}

/// `inf_{u*∈S} ½⟨C(u−u*), u−u*⟩ + ⟨g, u−u*⟩`; exact for finite sets and
/// for products under a diagonal form, sampled otherwise.
fn inf_half_quad_plus_linear<T: Scalar>(u: &[T], sol: &SolutionSet<T>, c: &Weight<T>, g: Option<&[T]>) -> (T, bool) {
    let half = T::c(0.5);
    if let (SolutionSet::Product { intervals, .. }, Some(dg)) = (sol, c.quad_diag()) {
        let mut total = T::zero();
        for k in 0..u.len() {
            let (ck, gk, iv) = (dg[k], g.map_or(T::zero(), |g| g[k]), intervals[k]);
            // minimise ½ck s² + gk s over s = u_k − t, t ∈ iv
            let (s_lo, s_hi) = (u[k] - iv.hi, u[k] - iv.lo);
            let f = |s: T| half * ck * s * s + gk * s;
            let v = if ck > T::zero() {
                f((-gk / ck).max(s_lo).min(s_hi))
            } else {
                let mut best = T::infinity();
                for s in [s_lo, s_hi] {
                    if s.is_finite() {
                        best = best.min(f(s));
                    } else if (s > T::zero() && (ck < T::zero() || gk < T::zero()))
                        || (s < T::zero() && (ck < T::zero() || gk > T::zero()))
                    {
                        best = T::neg_infinity();
                    }
                }
                if best.is_infinite() && best > T::zero() {
                    T::zero()
                } else {
                    best
                }
            };
            total += v;
        }
        return (total, false);
    }
    let (cands, sampled) = match sol.finite_elements() {
        Some(f) => (f, false),
        None => (sol.representatives(33), true),
    };
    let mut best = T::infinity();
    for a in cands {
        let d: Vec<T> = u.iter().zip(a.to_flat()).map(|(&p, q)| p - q).collect();
        let lin = g.map_or(T::zero(), |g| dot(g, &d));
        best = best.min(half * c.quad(&d) + lin);
    }
    (best, sampled)
}

/// Conjugate gradients for a symmetric positive definite structured operator.
fn cg_solve<T: Scalar>(op: &StructuredOperator<T>, b: &PrimalDualVector<T>) -> Option<PrimalDualVector<T>> {
    let mut x = PrimalDualVector::zeros(b.n(), b.m());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_sq();
    let target = T::c(1e-28) * rs.max(T::min_positive_value());
    for _ in 0..(4 * b.dim() + 50) {
        if rs <= target {
            break;
        }
        let ap = op.apply(&p).ok()?;
        let pap = p.dot(&ap);
        if !(pap > T::zero()) {
            return None;
        }
        let alpha = rs / pap;
        x = x.axpy(alpha, &p);
        r = r.axpy(-alpha, &ap);
        let rs_new = r.norm_sq();
        p = r.axpy(rs_new / rs, &p);
        rs = rs_new;
    }
    Some(x)
}

fn opt_residual_map<T: Scalar>(map: &dyn SetMap<T>, u: &PrimalDualVector<T>, shift: Option<&[T]>) -> T {
    let zero = vec![T::zero(); u.dim()];
    map.eval(u)
        .into_iter()
        .map(|s| {
            let s = match shift {
                Some(g) => s.translate(g),
                None => s,
            };
            s.dist_sq(&zero).sqrt()
        })
        .fold(T::infinity(), T::min)
}

/// Runs `method` from `u0`, recording the monitor quantities at every iterate.
///
/// Stops at `max_iter`, when the optimality residual drops below
/// `stop_tol`, or on divergence (trace truncated, flag set).
pub fn run_with_monitor<T: Scalar>(
    method: &Method<T>,
    u0: &PrimalDualVector<T>,
    sol: &SolutionSet<T>,
    opts: &MonitorOptions<T>,
    error_bound: Option<&ErrorBoundConfig<T>>,
) -> Result<IterationTrace<T>, SolverError> {
    if sol.is_empty() {
        return Err(SolverError::InvalidConfig("empty solution set".into()));
    }
    let (n, m) = match method {
        Method::ProxPoint { map, .. } | Method::ForwardBackward { map, .. } => map.dims(),
        Method::Pdhgm { problem, .. } => (problem.n(), problem.m()),
    };
    if u0.dims() != (n, m) || sol.dims() != (n, m) {
        return Err(SolverError::InvalidConfig("dimension mismatch between method, u0 and solution set".into()));
    }
    let mut warnings = Vec::new();
    let (k_norm, mut sched) = match method {
        Method::Pdhgm { problem, schedule } => {
            let kn = problem.k.spectral_norm();
            (kn, Some(ScheduleState::new(*schedule, kn)?))
        }
        Method::ProxPoint { tau, xi, .. } | Method::ForwardBackward { tau, xi, .. } => {
            if !(*tau > T::zero()) || !(*xi >= T::zero()) {
                return Err(SolverError::InvalidConfig("need tau > 0 and xi >= 0".into()));
            }
            (T::zero(), None)
        }
    };
    if let Method::ForwardBackward { smooth, tau, .. } = method {
        if smooth.lipschitz * *tau > T::c(2.0) {
            warnings.push(format!(
                "L*tau = {} exceeds 2; the forward-backward rate guarantee does not apply",
                fmt17(smooth.lipschitz * *tau)
            ));
        }
    }
    let mut phi_pp = T::one();
    let ops_at = |i: usize, sched: &mut Option<ScheduleState<T>>, phi_pp: T| -> Result<StepOps<T>, SolverError> {
        match method {
            Method::Pdhgm { problem, schedule } => {
                let sp = sched.as_mut().expect("pdhgm has a schedule").params(i);
                pdhgm_ops(problem, schedule, sp)
            }
            Method::ProxPoint { tau, xi, .. } | Method::ForwardBackward { tau, xi, .. } => {
                Ok(scalar_ops(n, m, phi_pp, *tau, *xi, i))
            }
        }
    };
    let opt_res = |u: &PrimalDualVector<T>| -> Result<T, SolverError> {
        Ok(match method {
            Method::Pdhgm { problem, .. } => problem.optimality_residual(u)?,
            Method::ProxPoint { map, .. } => opt_residual_map(map.as_ref(), u, None),
            Method::ForwardBackward { map, smooth, .. } => {
                opt_residual_map(map.as_ref(), u, Some(&smooth.grad(u).to_flat()))
            }
        })
    };
    let primal_dist = |u: &PrimalDualVector<T>| -> T {
        match sol.finite_elements() {
            Some(el) => el
                .iter()
                .map(|a| {
                    let d: Vec<T> = u.x().iter().zip(a.x()).map(|(&p, &q)| p - q).collect();
                    dot(&d, &d)
                })
                .fold(T::infinity(), T::min),
            None => sol.primal_dist_sq(u.x()),
        }
    };
    let zm_dist = |zm: &StructuredOperator<T>, u: &PrimalDualVector<T>| -> (T, bool) {
        let (psd, _) = is_psd_closed_form(zm, k_norm);
        if !psd {
            return (T::nan(), false);
        }
        (dist_sq_to_solution(&u.to_flat(), sol, &Weight::new(zm.clone())).0, true)
    };

    let mut sampled_infimum = false;
    let ops0 = ops_at(0, &mut sched, phi_pp)?;
    let (d0_zm, psd0) = zm_dist(&ops0.zm, u0);
    let d0_full = sol.dist_sq(u0);
    let d0_primal = primal_dist(u0);
    let rate_scale = match method {
        Method::Pdhgm { schedule, .. } => T::one() / schedule.delta,
        _ => T::one(),
    };
    let rate_measure = |u: &PrimalDualVector<T>| match method {
        Method::Pdhgm { .. } => primal_dist(u),
        _ => sol.dist_sq(u),
    };
    let mut records = vec![IterRecord {
        iter: 0,
        u: u0.clone(),
        tau: ops0.params.tau,
        sigma: ops0.params.sigma,
        phi: ops0.params.phi,
        psi: ops0.params.psi,
        omega: ops0.params.omega,
        dist2_euclid_primal: d0_primal,
        dist2_full: d0_full,
        dist2_zm: d0_zm,
        metric_psd: psd0,
        ci_residual: T::nan(),
        di_slack: T::zero(),
        lemma_residual: T::nan(),
        peb_residual: None,
        ci_plus_residual: None,
        rate_bound_slack: d0_zm / ops0.params.phi * rate_scale - rate_measure(u0),
        opt_residual: opt_res(u0)?,
        step_condition_slack: sched.as_mut().map(|s| {
            s.step_condition_slacks(0, k_norm).into_iter().fold(T::infinity(), T::min)
        }),
        precond_lower_psd: precond_lower(method, &ops0, k_norm),
    }];
    let mut converged = records[0].opt_residual < opts.stop_tol;
    let mut diverged = false;
    let mut u = u0.clone();
    let mut i = 0;
    while !converged && i < opts.max_iter {
        let ops = ops_at(i, &mut sched, phi_pp)?;
        let sp = ops.params;
        let un = match method {
            Method::ProxPoint { resolvent, tau, .. } => prox_point_step(resolvent, *tau, &u)?,
            Method::ForwardBackward { resolvent, smooth, tau, .. } => forward_backward_step(resolvent, smooth, *tau, &u)?,
            Method::Pdhgm { problem, .. } => {
                let (x, y) = pdhgm_step(problem, sp.tau, sp.sigma, sp.omega, u.x(), u.y())?;
                PrimalDualVector::new(x, y)?
            }
        };
        if !un.is_finite() {
            diverged = true;
            warnings.push(format!("non-finite iterate at step {}", i + 1));
            break;
        }
        let v = un.sub(&u);
        let unf = un.to_flat();
        let (zm_psd, _) = is_psd_closed_form(&ops.zm, k_norm);
        let step_sq = ops.zm.quad_form(&v)?;

        // ⟨V'(u⁺), u⁺ − u*⟩_Z with V'(u⁺) = τ(∇J(u) − ∇J(u⁺)).
        let vprime: Option<Vec<T>> = match method {
            Method::ForwardBackward { smooth, tau, .. } => {
                let d = smooth.grad(&u).sub(&smooth.grad(&un)).scale(*tau);
                Some(ops.z.apply(&d)?.to_flat())
            }
            _ => None,
        };
        let ci_op = ops.zm.add(&ops.zxi)?.sub(&ops.zm_next)?;
        let (ci_inf, s1) = inf_half_quad_plus_linear(&unf, sol, &Weight::new(ci_op), vprime.as_deref());
        sampled_infimum |= s1;
        let ci_residual = T::c(0.5) * step_sq + ci_inf;

        let lemma_residual = if zm_psd && ops.zm.min_eigenvalue_closed_form(k_norm) > T::zero() {
            let q = ops.m.apply(&v)?.scale(-T::one());
            let zq = ops.z.apply(&q)?;
            match cg_solve(&ops.zm, &zq) {
                Some(s) => T::c(0.5) * step_sq - T::c(0.5) * zq.dot(&s),
                None => T::nan(),
            }
        } else {
            T::nan()
        };

        let (peb_residual, ci_plus_residual) = match error_bound {
            None => (None, None),
            Some(eb) => {
                let zp = ops.z.compose(&eb.p)?;
                let w_next = Weight::new(ops.zm_next.clone());
                let (d_next, _) = dist_sq_to_solution(&unf, sol, &w_next);
                let (d_diff, _) = dist_sq_to_solution(&unf, sol, &Weight::new(ops.zm_next.sub(&zp)?));
                let peb = eb.delta * step_sq + d_diff - d_next;
                let plus_op = ops.zm.add(&ops.zxi)?.add(&zp)?.sub(&ops.zm_next)?;
                let (plus_inf, s2) = inf_half_quad_plus_linear(&unf, sol, &Weight::new(plus_op), None);
                sampled_infimum |= s2;
                (Some(peb), Some(T::c(0.5) * (T::one() - eb.delta) * step_sq + plus_inf))
            }
        };

        if let Method::ProxPoint { xi, .. } | Method::ForwardBackward { xi, .. } = method {
            phi_pp = phi_pp * (T::one() + *xi);
        }
        i += 1;
        let next_ops = ops_at(i, &mut sched, phi_pp)?;
        let (d_zm, psd) = zm_dist(&next_ops.zm, &un);
        let d_full = sol.dist_sq(&un);
        let opt = opt_res(&un)?;
        let np = next_ops.params;
        records.push(IterRecord {
            iter: i,
            u: un.clone(),
            tau: np.tau,
            sigma: np.sigma,
            phi: np.phi,
            psi: np.psi,
            omega: np.omega,
            dist2_euclid_primal: primal_dist(&un),
            dist2_full: d_full,
            dist2_zm: d_zm,
            metric_psd: psd,
            ci_residual,
            di_slack: T::c(0.5) * d0_zm - T::c(0.5) * d_zm,
            lemma_residual,
            peb_residual,
            ci_plus_residual,
            rate_bound_slack: d0_zm / np.phi * rate_scale - rate_measure(&un),
            opt_residual: opt,
            step_condition_slack: sched.as_mut().map(|s| {
                s.step_condition_slacks(i, k_norm).into_iter().fold(T::infinity(), T::min)
            }),
            precond_lower_psd: precond_lower(method, &next_ops, k_norm),
        });
        if d_full > opts.divergence_factor * d0_full.max(T::min_positive_value()) && d0_full > T::zero()
            || !d_full.is_finite()
        {
            diverged = true;
            warnings.push(format!("diverged at iteration {i}: dist2 = {}", fmt17(d_full)));
            break;
        }
        converged = opt < opts.stop_tol;
        u = un;
    }
    Ok(IterationTrace {
        method: method.name().to_string(),
        records,
        diverged,
        converged,
        sampled_infimum,
        warnings,
    })
}

fn precond_lower<T: Scalar>(method: &Method<T>, ops: &StepOps<T>, k_norm: T) -> Option<bool> {
    match method {
        Method::Pdhgm { schedule, .. } => {
            let shifted = ops
                .zm
                .sub(&StructuredOperator::diag(schedule.delta * ops.params.phi, T::zero(), ops.zm.n(), ops.zm.m()))
                .ok()?;
            Some(is_psd_closed_form(&shifted, k_norm).0)
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Linear,
    Polynomial,
    FiniteConvergence,
}

impl RateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Polynomial => "polynomial",
            Self::FiniteConvergence => "finite",
        }
    }
}

/// Result of [`fit_rate`]. `rate` is the per-iteration factor for linear
/// fits, the exponent for polynomial fits, and the iteration index of exact
/// convergence for finite convergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit<T> {
    pub kind: RateKind,
    pub rate: T,
    pub r2: T,
    /// The rejected model's parameters, for contrast reporting.
    pub alternative_rate: T,
    pub alternative_r2: T,
}

impl<T: Scalar> RateFit<T> {
    pub fn summary_line(&self) -> String {
        match self.kind {
            RateKind::FiniteConvergence => format!(
                "rate_kind=finite rate={} r2={} (finite convergence at iteration {})",
                fmt17(self.rate),
                fmt17(self.r2),
                self.rate.as_f64() as usize
            ),
            k => format!("rate_kind={} rate={} r2={}", k.as_str(), fmt17(self.rate), fmt17(self.r2)),
        }
    }
}

/// Least squares `y ≈ a + b t`; returns `(b, r²)`.
pub fn linear_regression<T: Scalar>(t: &[T], y: &[T]) -> (T, T) {
    let n = T::from_usize_lossy(t.len());
    let mt = t.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut stt, mut sty, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in t.iter().zip(y) {
        stt += (a - mt) * (a - mt);
        sty += (a - mt) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if stt > T::zero() { sty / stt } else { T::zero() };
    let ss_res: T = t
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let e = b - my - slope * (a - mt);
            e * e
        })
        .sum();
    let r2 = if syy > T::zero() { T::one() - ss_res / syy } else { T::one() };
    (slope, r2)
}

/// Fits `dist²_i` (full Euclidean) over the trailing `window` records.
///
/// Linear: `log d² ~ i`, rate `e^slope`. Polynomial: `log d² ~ log i`,
/// exponent `slope`. The larger `r²` wins; ties go to linear.
pub fn fit_rate<T: Scalar>(trace: &IterationTrace<T>, window: usize) -> Result<RateFit<T>, SolverError> {
    let d: Vec<(usize, T)> = trace.records.iter().map(|r| (r.iter, r.dist2_full)).collect();
    fit_rate_series(&d, window)
}

/// [`fit_rate`] on explicit `(iteration, value)` pairs.
pub fn fit_rate_series<T: Scalar>(d: &[(usize, T)], window: usize) -> Result<RateFit<T>, SolverError> {
    if let Some(&(k, _)) = d.iter().find(|(_, v)| *v == T::zero()) {
        return Ok(RateFit {
            kind: RateKind::FiniteConvergence,
            rate: T::from_usize_lossy(k),
            r2: T::one(),
            alternative_rate: T::nan(),
            alternative_r2: T::nan(),
        });
    }
    if window < 5 {
        return Err(SolverError::InsufficientData(format!("window {window} < 5")));
    }
    if d.len() < window {
        return Err(SolverError::InsufficientData(format!("{} records < window {window}", d.len())));
    }
    let tail = &d[d.len() - window..];
    if tail.iter().any(|(_, v)| !(*v > T::zero()) || !v.is_finite()) {
        return Err(SolverError::InsufficientData("non-positive or non-finite distances in window".into()));
    }
    let y: Vec<T> = tail.iter().map(|(_, v)| v.ln()).collect();
    let ti: Vec<T> = tail.iter().map(|(i, _)| T::from_usize_lossy(*i)).collect();
    let (b_lin, r2_lin) = linear_regression(&ti, &y);
    let poly = if tail[0].0 >= 1 {
        let tl: Vec<T> = ti.iter().map(|t| t.ln()).collect();
        Some(linear_regression(&tl, &y))
    } else {
        None
    };
    let lin = (b_lin.exp(), r2_lin);
    Ok(match poly {
        Some((b_p, r2_p)) if r2_p > r2_lin => RateFit {
            kind: RateKind::Polynomial,
            rate: b_p,
            r2: r2_p,
            alternative_rate: lin.0,
            alternative_r2: lin.1,
        },
        Some((b_p, r2_p)) => RateFit {
            kind: RateKind::Linear,
            rate: lin.0,
            r2: lin.1,
            alternative_rate: b_p,
            alternative_r2: r2_p,
        },
        None => RateFit {
            kind: RateKind::Linear,
            rate: lin.0,
            r2: lin.1,
            alternative_rate: T::nan(),
            alternative_r2: T::nan(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::regularity::SubdifferentialMap;

    fn scalar_saddle(g: ProxFunction<f64>, f: ProxFunction<f64>) -> SaddleProblem<f64> {
        SaddleProblem::new(g, f, Arc::new(DenseMatrix::new(1, 1, vec![1.0]).unwrap())).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let c = advance_schedule(&StepSchedule::constant(0.5, 0.5, 0.5), 1.0, 7).unwrap();
        assert_eq!(c.omega, 1.0);
        let l = StepSchedule::<f64>::linear(0.5, 0.5, 0.2, 0.4, 0.5);
        let p = advance_schedule(&l, 1.0, 3).unwrap();
        assert!((p.omega - 1.0 / l.theta()).abs() < 1e-15);
        let a = StepSchedule::accelerated(1.0, 0.5, 1.0, 0.5);
        let mut st = ScheduleState::new(a, 1.0).unwrap();
        assert_eq!(st.phi(1), 2.0);
        assert!((st.tau(1) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((st.params(0).omega - 0.5f64.sqrt()).abs() < 1e-15);
        let z = StepSchedule::accelerated(1.0, 0.5, 0.0, 0.5);
        assert!(matches!(z.validate(1.0), Err(SolverError::InvalidSchedule(_))));
    }

    #[test]
    fn pdhgm_step_example() {
        let p = scalar_saddle(ProxFunction::sq_dist_point(vec![0.0]), ProxFunction::sq_dist_point(vec![0.0]));
        let (x, y) = pdhgm_step(&p, 0.5, 0.5, 1.0, &[1.0], &[1.0]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((y[0] - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn prox_point_abs_finite() {
        let map: Arc<dyn SetMap<f64>> = Arc::new(SubdifferentialMap::new(ProxFunction::l1(1.0, 1), "abs"));
        let method = Method::ProxPoint {
            map,
            resolvent: Resolvent::from_prox(ProxFunction::l1(1.0, 1)),
            tau: 1.0,
            xi: 0.0,
        };
        let sol = SolutionSet::Singleton(PrimalDualVector::scalar(0.0));
        let t = run_with_monitor(&method, &PrimalDualVector::scalar(2.0), &sol, &MonitorOptions::default(), None).unwrap();
        let xs: Vec<f64> = t.records.iter().map(|r| r.u.x()[0]).collect();
        assert_eq!(xs, vec![2.0, 1.0, 0.0]);
        assert!(t.converged);
        let f = fit_rate(&t, 5).unwrap();
        assert_eq!(f.kind, RateKind::FiniteConvergence);
        assert_eq!(f.rate, 2.0);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().next().unwrap(), TRACE_CSV_HEADER);
    }

    #[test]
    fn zero_iterations() {
        let p = scalar_saddle(ProxFunction::sq_dist_point(vec![0.0]), ProxFunction::sq_dist_point(vec![0.0]));
        let method = Method::Pdhgm { problem: p, schedule: StepSchedule::constant(0.5, 0.5, 0.5) };
        let sol = SolutionSet::Singleton(PrimalDualVector::new(vec![0.0], vec![0.0]).unwrap());
        let o = MonitorOptions { max_iter: 0, ..MonitorOptions::default() };
        let u0 = PrimalDualVector::new(vec![1.0], vec![1.0]).unwrap();
        let t = run_with_monitor(&method, &u0, &sol, &o, None).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].dist2_euclid_primal, 1.0);
    }

    #[test]
    fn fit_exact_models() {
        let geo: Vec<(usize, f64)> = (0..30).map(|i| (i, 4f64.powi(-(i as i32)))).collect();
        let f = fit_rate_series(&geo, 20).unwrap();
        assert_eq!(f.kind, RateKind::Linear);
        assert!((f.rate - 0.25).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let pw: Vec<(usize, f64)> = (1..60).map(|i| (i, (i as f64).powi(-2))).collect();
        let f = fit_rate_series(&pw, 40).unwrap();
        assert_eq!(f.kind, RateKind::Polynomial);
        assert!((f.rate + 2.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }
}
