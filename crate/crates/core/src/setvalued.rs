//! Closed-form set-valued calculus: intervals, box-plus-ray set values,
//! prox-friendly functions with their subdifferentials, the saddle operator
//! `H(u) = (∂G(x) + Kᵀy, ∂F*(y) − Kx)` and solution sets.

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{dot, norm2, DenseMatrix, LinalgError, PrimalDualVector};
use crate::scalar::Scalar;

/// Membership tolerance for indicator domains.
pub const DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SetValuedError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("prox may be set-valued; use T_C evaluation instead")]
    ProxSetValued,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

fn dim_check(expected: usize, got: usize) -> Result<(), SetValuedError> {
    if expected != got {
        Err(SetValuedError::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Closed interval `[lo, hi]` with possibly infinite endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Interval<T> {
    /// Returns `None` unless `lo ≤ hi` (and neither is NaN).
    pub fn new(lo: T, hi: T) -> Option<Self> {
        (lo <= hi).then_some(Self { lo, hi })
    }

    pub fn point(v: T) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn full() -> Self {
        Self {
            lo: T::neg_infinity(),
            hi: T::infinity(),
        }
    }

    pub fn at_most(hi: T) -> Self {
        Self { lo: T::neg_infinity(), hi }
    }

    pub fn at_least(lo: T) -> Self {
        Self { lo, hi: T::infinity() }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    pub fn contains(&self, v: T, tol: T) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn clamp(&self, v: T) -> T {
        v.max(self.lo).min(self.hi)
    }

    /// Squared distance from `v` to the interval.
    pub fn dist_sq(&self, v: T) -> T {
        let p = self.clamp(v);
        (v - p) * (v - p)
    }

    pub fn shift(&self, by: T) -> Self {
        Self {
            lo: self.lo + by,
            hi: self.hi + by,
        }
    }

    /// Multiplies by `s ≥ 0`.
    pub fn scale_nonneg(&self, s: T) -> Self {
        if s == T::zero() {
            return Self::point(T::zero());
        }
        Self {
            lo: self.lo * s,
            hi: self.hi * s,
        }
    }

    /// `inf_{w ∈ [lo, hi]} w·d`, with `0·∞ = 0`.
    pub fn inf_linear(&self, d: T) -> T {
        if d > T::zero() {
            self.lo * d
        } else if d < T::zero() {
            self.hi * d
        } else {
            T::zero()
        }
    }

    /// A point attaining [`Interval::inf_linear`] when it is finite.
    pub fn argmin_linear(&self, d: T) -> T {
        if d > T::zero() {
            self.lo
        } else if d < T::zero() {
            self.hi
        } else {
            self.clamp(T::zero())
        }
    }

    /// Finite representatives of the endpoints. Unbounded ends are replaced by
    /// `e ∓ 1e3(1+|e|)` where `e` is the finite end (or 0).
    pub fn representative_endpoints(&self) -> Vec<T> {
        let big = T::c(1e3);
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) if self.is_point() => vec![self.lo],
            (true, true) => vec![self.lo, self.hi],
            (true, false) => vec![self.lo, self.lo + big * (T::one() + self.lo.abs())],
            (false, true) => vec![self.hi - big * (T::one() + self.hi.abs()), self.hi],
            (false, false) => vec![-big, big],
        }
    }

    pub fn intersect(&self, other: &Self) -> Option<Self> {
        Self::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }
}

/// The set `{offset + s + Σ βⱼ rⱼ : s ∈ ∏ box_k, βⱼ ≥ 0}`, or `∅`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetValue<T> {
    pub offset: Vec<T>,
    pub boxes: Vec<Interval<T>>,
    pub rays: Vec<Vec<T>>,
    pub empty: bool,
}

impl<T: Scalar> SetValue<T> {
    pub fn point(v: Vec<T>) -> Self {
        let n = v.len();
        Self {
            offset: v,
            boxes: vec![Interval::point(T::zero()); n],
            rays: Vec::new(),
            empty: false,
        }
    }

    pub fn from_boxes(offset: Vec<T>, boxes: Vec<Interval<T>>) -> Self {
        assert_eq!(offset.len(), boxes.len(), "offset and boxes differ in length");
        Self {
            offset,
            boxes,
            rays: Vec::new(),
            empty: false,
        }
    }

    /// Box given by absolute intervals.
    pub fn from_intervals(boxes: Vec<Interval<T>>) -> Self {
        Self::from_boxes(vec![T::zero(); boxes.len()], boxes)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            offset: vec![T::zero(); dim],
            boxes: vec![Interval::point(T::zero()); dim],
            rays: Vec::new(),
            empty: true,
        }
    }

    pub fn with_ray(mut self, r: Vec<T>) -> Self {
        assert_eq!(r.len(), self.dim(), "ray dimension mismatch");
        self.rays.push(r);
        self
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    /// Absolute interval of coordinate `k` ignoring rays.
    pub fn coord_interval(&self, k: usize) -> Interval<T> {
        self.boxes[k].shift(self.offset[k])
    }

    /// Translates the set by `v`.
    pub fn translate(mut self, v: &[T]) -> Self {
        assert_eq!(v.len(), self.dim(), "translation dimension mismatch");
        self.offset.iter_mut().zip(v).for_each(|(o, &t)| *o += t);
        self
    }

    /// Cartesian product `self × other`.
    pub fn concat(&self, other: &Self) -> Self {
        let (n1, n2) = (self.dim(), other.dim());
        let mut rays: Vec<Vec<T>> = self
            .rays
            .iter()
            .map(|r| {
                let mut v = r.clone();
                v.resize(n1 + n2, T::zero());
                v
            })
            .collect();
        rays.extend(other.rays.iter().map(|r| {
            let mut v = vec![T::zero(); n1];
            v.extend_from_slice(r);
            v
        }));
        Self {
            offset: [self.offset.as_slice(), other.offset.as_slice()].concat(),
            boxes: [self.boxes.as_slice(), other.boxes.as_slice()].concat(),
            rays,
            empty: self.empty || other.empty,
        }
    }

    /// Image under the diagonal map `w ↦ diag(s) w` with `s ≥ 0`.
    pub fn scale_coords(&self, s: &[T]) -> Self {
        assert_eq!(s.len(), self.dim(), "scale dimension mismatch");
        Self {
            offset: self.offset.iter().zip(s).map(|(&o, &v)| o * v).collect(),
            boxes: self
                .boxes
                .iter()
                .zip(s)
                .map(|(b, &v)| b.scale_nonneg(v))
                .collect(),
            rays: self
                .rays
                .iter()
                .map(|r| r.iter().zip(s).map(|(&a, &b)| a * b).collect())
                .collect(),
            empty: self.empty,
        }
    }

    /// `inf_{w ∈ S} ⟨w − w0, d⟩`; `−∞` if unbounded below, `+∞` if empty.
    pub fn inf_linear(&self, w0: &[T], d: &[T]) -> T {
        if self.empty {
            return T::infinity();
        }
        let mut acc = T::zero();
        for k in 0..self.dim() {
            acc += (self.offset[k] - w0[k]) * d[k] + self.boxes[k].inf_linear(d[k]);
        }
        let dn = norm2(d).sqrt();
        for r in &self.rays {
            let rd = dot(r, d);
            if rd < -T::c(1e-12) * norm2(r).sqrt() * dn {
                return T::neg_infinity();
            }
        }
        acc
    }

    /// A minimiser of `⟨w, d⟩` over `S` when the infimum is finite.
    pub fn argmin_linear(&self, d: &[T]) -> Option<Vec<T>> {
        let v = self.inf_linear(&vec![T::zero(); self.dim()], d);
        if !v.is_finite() {
            return None;
        }
        Some(
            (0..self.dim())
                .map(|k| self.offset[k] + self.boxes[k].argmin_linear(d[k]))
                .collect(),
        )
    }

    /// Euclidean projection of `p` onto the set (`None` if empty).
    pub fn project(&self, p: &[T]) -> Option<Vec<T>> {
        if self.empty {
            return None;
        }
        assert_eq!(p.len(), self.dim(), "projection dimension mismatch");
        // c = p − offset; minimise dist²(c − Σβr, Box) over β ≥ 0.
        let c: Vec<T> = p.iter().zip(&self.offset).map(|(&a, &o)| a - o).collect();
        let mut beta = vec![T::zero(); self.rays.len()];
        if !self.rays.is_empty() {
            let sweeps = if self.rays.len() == 1 { 1 } else { 500 };
            for _ in 0..sweeps {
                let mut change = T::zero();
                for j in 0..self.rays.len() {
                    let mut base = c.clone();
                    for (i, r) in self.rays.iter().enumerate() {
                        if i != j {
                            base.iter_mut().zip(r).for_each(|(b, &rv)| *b -= beta[i] * rv);
                        }
                    }
                    let nb = ray_line_search(&self.boxes, &base, &self.rays[j]);
                    change = change.max((nb - beta[j]).abs());
                    beta[j] = nb;
                }
                if change <= T::c(1e-15) {
                    break;
                }
            }
        }
        let mut resid = c;
        for (b, r) in beta.iter().zip(&self.rays) {
            resid.iter_mut().zip(r).for_each(|(x, &rv)| *x -= *b * rv);
        }
        let mut out = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let mut v = self.offset[k] + self.boxes[k].clamp(resid[k]);
            for (b, r) in beta.iter().zip(&self.rays) {
                v += *b * r[k];
            }
            out.push(v);
        }
        Some(out)
    }

    /// Minimum-norm element.
    pub fn min_norm_element(&self) -> Option<Vec<T>> {
        self.project(&vec![T::zero(); self.dim()])
    }

    /// Squared Euclidean distance from `p` to the set (`+∞` if empty).
    pub fn dist_sq(&self, p: &[T]) -> T {
        match self.project(p) {
            Some(q) => p.iter().zip(&q).map(|(&a, &b)| (a - b) * (a - b)).sum(),
            None => T::infinity(),
        }
    }

    pub fn contains(&self, w: &[T], tol: T) -> bool {
        !self.empty && self.dist_sq(w).sqrt() <= tol
    }

    /// Finite selections: all box corners (unbounded ends replaced by
    /// representatives) with ray coefficients in `{0, 1, 1e3}`. When there are
    /// more than `limit` of them a deterministic subset is returned.
    pub fn corners(&self, limit: usize) -> Vec<Vec<T>> {
        if self.empty {
            return Vec::new();
        }
        let ends: Vec<Vec<T>> = self.boxes.iter().map(|b| b.representative_endpoints()).collect();
        let free: Vec<usize> = (0..self.dim()).filter(|&k| ends[k].len() > 1).collect();
        let betas = [T::zero(), T::one(), T::c(1e3)];
        let ray_combos = betas.len().pow(self.rays.len() as u32);
        let mut masks: Vec<u64> = Vec::new();
        if free.len() < 40 && (1usize << free.len()).saturating_mul(ray_combos) <= limit.max(1) {
            masks.extend(0..(1u64 << free.len()));
        } else {
            // all-low, all-high, alternating, and single flips
            let all = if free.len() >= 64 { u64::MAX } else { (1u64 << free.len()) - 1 };
            masks.push(0);
            masks.push(all);
            masks.push(0x5555_5555_5555_5555 & all);
            masks.push(0xAAAA_AAAA_AAAA_AAAA & all);
            for i in 0..free.len().min(60) {
                if masks.len() >= limit.max(4) {
                    break;
                }
                masks.push(1u64 << i);
            }
        }
        let mut out = Vec::new();
        for mask in masks {
            let mut w: Vec<T> = (0..self.dim()).map(|k| self.offset[k] + ends[k][0]).collect();
            for (bit, &k) in free.iter().enumerate() {
                if bit < 64 && (mask >> bit) & 1 == 1 {
                    w[k] = self.offset[k] + ends[k][1];
                }
            }
            if self.rays.is_empty() {
                out.push(w);
            } else {
                for combo in 0..ray_combos {
                    let mut v = w.clone();
                    let mut c = combo;
                    for r in &self.rays {
                        let b = betas[c % betas.len()];
                        c /= betas.len();
                        v.iter_mut().zip(r).for_each(|(x, &rv)| *x += b * rv);
                    }
                    out.push(v);
                }
            }
        }
        out
    }
}

/// Exact minimiser over `β ≥ 0` of `Σ_k dist²(c_k − β r_k, box_k)`.
fn ray_line_search<T: Scalar>(boxes: &[Interval<T>], c: &[T], r: &[T]) -> T {
    // derivative of the convex piecewise quadratic objective
    let deriv = |beta: T| -> T {
        let mut g = T::zero();
        for k in 0..c.len() {
            let t = c[k] - beta * r[k];
            let h = if t > boxes[k].hi {
                t - boxes[k].hi
            } else if t < boxes[k].lo {
                t - boxes[k].lo
            } else {
                T::zero()
            };
            g -= r[k] * h;
        }
        g
    };
    if deriv(T::zero()) >= T::zero() {
        return T::zero();
    }
    let mut bps: Vec<T> = Vec::new();
    for k in 0..c.len() {
        if r[k] != T::zero() {
            for e in [boxes[k].lo, boxes[k].hi] {
                if e.is_finite() {
                    let b = (c[k] - e) / r[k];
                    if b > T::zero() {
                        bps.push(b);
                    }
                }
            }
        }
    }
    bps.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut prev = T::zero();
    let mut dprev = deriv(prev);
    for &b in &bps {
        let db = deriv(b);
        if db >= T::zero() {
            if db == dprev {
                return b;
            }
            return prev - dprev * (b - prev) / (db - dprev);
        }
        prev = b;
        dprev = db;
    }
    let next = prev + T::one();
    let dn = deriv(next);
    if dn > dprev {
        prev - dprev / (dn - dprev)
    } else {
        prev
    }
}

/// `inf_{w ∈ S} ⟨w − w0, d⟩` computed per coordinate.
pub fn inf_linear_over_setvalue<T: Scalar>(s: &SetValue<T>, w0: &[T], d: &[T]) -> T {
    s.inf_linear(w0, d)
}

/// Convex piecewise linear scalar function given by breakpoints and slopes.
///
/// `slopes[j]` applies between `breakpoints[j-1]` and `breakpoints[j]`, so
/// there is one more slope than breakpoints. `value_at_zero` fixes the constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear<T> {
    pub breakpoints: Vec<T>,
    pub slopes: Vec<T>,
    pub value_at_zero: T,
}

impl<T: Scalar> PiecewiseLinear<T> {
    pub fn new(breakpoints: Vec<T>, slopes: Vec<T>, value_at_zero: T) -> Result<Self, SetValuedError> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(SetValuedError::InvalidParameter(
                "piecewise linear needs one more slope than breakpoints".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SetValuedError::InvalidParameter("breakpoints must increase".into()));
        }
        if slopes.windows(2).any(|w| w[0] > w[1]) {
            return Err(SetValuedError::InvalidParameter("slopes must be nondecreasing (convexity)".into()));
        }
        Ok(Self { breakpoints, slopes, value_at_zero })
    }

    /// `α|t|`.
    pub fn abs(alpha: T) -> Self {
        Self {
            breakpoints: vec![T::zero()],
            slopes: vec![-alpha, alpha],
            value_at_zero: T::zero(),
        }
    }

    fn slope_integral(&self, from: T, to: T) -> T {
        // ∫_from^to f'(t) dt for from ≤ to
        let mut acc = T::zero();
        let mut lo = from;
        for (j, &s) in self.slopes.iter().enumerate() {
            let seg_hi = self.breakpoints.get(j).copied().unwrap_or(T::infinity());
            let seg_lo = if j == 0 { T::neg_infinity() } else { self.breakpoints[j - 1] };
            let a = lo.max(seg_lo);
            let b = to.min(seg_hi);
            if b > a {
                acc += s * (b - a);
                lo = b;
            }
        }
        acc
    }

    pub fn value(&self, t: T) -> T {
        if t >= T::zero() {
            self.value_at_zero + self.slope_integral(T::zero(), t)
        } else {
            self.value_at_zero - self.slope_integral(t, T::zero())
        }
    }

    pub fn subdiff(&self, t: T) -> Interval<T> {
        for (j, &b) in self.breakpoints.iter().enumerate() {
            if t == b {
                return Interval { lo: self.slopes[j], hi: self.slopes[j + 1] };
            }
            if t < b {
                return Interval::point(self.slopes[j]);
            }
        }
        Interval::point(*self.slopes.last().expect("at least one slope"))
    }

    pub fn prox(&self, tau: T, x: T) -> T {
        for (j, &b) in self.breakpoints.iter().enumerate() {
            // interior of the piece left of b
            let w = x - tau * self.slopes[j];
            if w < b {
                return w;
            }
            if x - b <= tau * self.slopes[j + 1] {
                return b;
            }
        }
        x - tau * *self.slopes.last().expect("at least one slope")
    }
}

/// Function kinds with closed-form prox and subdifferential.
#[derive(Debug, Clone, PartialEq)]
pub enum ProxKind<T> {
    /// `α‖x‖₁`.
    L1 { alpha: T },
    /// `½‖y‖² − ⟨z, y⟩`.
    SqDistPoint { z: Vec<T> },
    /// Indicator of the closed Euclidean ball of radius `radius`.
    Ball { radius: T },
    /// Indicator of `∏ [lo_k, hi_k]`.
    Box { lo: Vec<T>, hi: Vec<T> },
    Zero,
    /// Sum of convex piecewise linear functions, one per coordinate.
    SeparableCustom { pieces: Vec<PiecewiseLinear<T>> },
    /// Exposes `T_C(u) = u − P_C(u)` for a finite point set `C`.
    DistanceMap { points: Vec<Vec<T>> },
}

/// A function on `ℝⁿ` with closed-form calculus.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxFunction<T> {
    pub kind: ProxKind<T>,
    pub dim: usize,
}

impl<T: Scalar> ProxFunction<T> {
    pub fn new(kind: ProxKind<T>, dim: usize) -> Result<Self, SetValuedError> {
        match &kind {
            ProxKind::L1 { alpha } if *alpha < T::zero() => {
                return Err(SetValuedError::InvalidParameter("l1 weight must be >= 0".into()))
            }
            ProxKind::Ball { radius } if *radius < T::zero() => {
                return Err(SetValuedError::InvalidParameter("ball radius must be >= 0".into()))
            }
            ProxKind::SqDistPoint { z } => dim_check(dim, z.len())?,
            ProxKind::Box { lo, hi } => {
                dim_check(dim, lo.len())?;
                dim_check(dim, hi.len())?;
                if lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(SetValuedError::InvalidParameter("box needs lo <= hi".into()));
                }
            }
            ProxKind::SeparableCustom { pieces } => dim_check(dim, pieces.len())?,
            ProxKind::DistanceMap { points } => {
                if points.is_empty() {
                    return Err(SetValuedError::InvalidParameter("distance map needs points".into()));
                }
                for p in points {
                    dim_check(dim, p.len())?;
                }
            }
            _ => {}
        }
        Ok(Self { kind, dim })
    }

    pub fn l1(alpha: T, dim: usize) -> Self {
        Self::new(ProxKind::L1 { alpha }, dim).expect("valid l1")
    }

    pub fn sq_dist_point(z: Vec<T>) -> Self {
        let dim = z.len();
        Self { kind: ProxKind::SqDistPoint { z }, dim }
    }

    pub fn ball(radius: T, dim: usize) -> Self {
        Self::new(ProxKind::Ball { radius }, dim).expect("valid ball")
    }

    pub fn zero(dim: usize) -> Self {
        Self { kind: ProxKind::Zero, dim }
    }

    pub fn distance_map(points: Vec<Vec<T>>) -> Result<Self, SetValuedError> {
        let dim = points.first().map_or(0, Vec::len);
        Self::new(ProxKind::DistanceMap { points }, dim)
    }

    fn in_ball(x: &[T], radius: T) -> bool {
        norm2(x).sqrt() <= radius + T::c(DOMAIN_TOL)
    }

    /// Function value (`+∞` outside the domain). Distance maps report
    /// `½dist²(x, C)`.
    pub fn value(&self, x: &[T]) -> T {
        let half = T::c(0.5);
        match &self.kind {
            ProxKind::L1 { alpha } => *alpha * x.iter().map(|v| v.abs()).sum::<T>(),
            ProxKind::SqDistPoint { z } => half * norm2(x) - dot(z, x),
            ProxKind::Ball { radius } => {
                if Self::in_ball(x, *radius) { T::zero() } else { T::infinity() }
            }
            ProxKind::Box { lo, hi } => {
                let tol = T::c(DOMAIN_TOL);
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol);
                if inside { T::zero() } else { T::infinity() }
            }
            ProxKind::Zero => T::zero(),
            ProxKind::SeparableCustom { pieces } => {
                pieces.iter().zip(x).map(|(p, &v)| p.value(v)).sum()
            }
            ProxKind::DistanceMap { points } => {
                let d = points
                    .iter()
                    .map(|p| p.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>())
                    .fold(T::infinity(), T::min);
                half * d
            }
        }
    }

    /// Resolvent `(I + τ∂f)⁻¹(x)`.
    pub fn prox(&self, tau: T, x: &[T]) -> Result<Vec<T>, SetValuedError> {
        if !(tau > T::zero()) {
            return Err(SetValuedError::InvalidParameter("prox step must be > 0".into()));
        }
        dim_check(self.dim, x.len())?;
        Ok(match &self.kind {
            ProxKind::L1 { alpha } => {
                let t = tau * *alpha;
                x.iter()
                    .map(|&v| v.signum() * (v.abs() - t).max(T::zero()))
                    .map(|v| if v == T::zero() { T::zero() } else { v })
                    .collect()
            }
            ProxKind::SqDistPoint { z } => x
                .iter()
                .zip(z)
                .map(|(&v, &zk)| (v + tau * zk) / (T::one() + tau))
                .collect(),
            ProxKind::Ball { radius } => {
                let nx = norm2(x).sqrt();
                if nx <= *radius {
                    x.to_vec()
                } else {
                    x.iter().map(|&v| v * *radius / nx).collect()
                }
            }
            ProxKind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&l, &h))| v.max(l).min(h))
                .collect(),
            ProxKind::Zero => x.to_vec(),
            ProxKind::SeparableCustom { pieces } => {
                pieces.iter().zip(x).map(|(p, &v)| p.prox(tau, v)).collect()
            }
            ProxKind::DistanceMap { .. } => return Err(SetValuedError::ProxSetValued),
        })
    }

    /// Nearest points of `C` to `x` (ties within a relative 1e-12), for
    /// distance maps only.
    pub fn nearest_points(&self, x: &[T]) -> Vec<Vec<T>> {
        let ProxKind::DistanceMap { points } = &self.kind else {
            return Vec::new();
        };
        let d: Vec<T> = points
            .iter()
            .map(|p| p.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>())
            .collect();
        let best = d.iter().copied().fold(T::infinity(), T::min);
        let tol = T::c(1e-12) * best.max(T::c(1e-300));
        points
            .iter()
            .zip(&d)
            .filter(|(_, &dv)| dv - best <= tol)
            .map(|(p, _)| p.clone())
            .collect()
    }

    /// All candidate values of the subdifferential. Single element for the
    /// convex kinds; one element per nearest point for distance maps.
    pub fn subdiff_all(&self, x: &[T]) -> Result<Vec<SetValue<T>>, SetValuedError> {
        dim_check(self.dim, x.len())?;
        if let ProxKind::DistanceMap { .. } = &self.kind {
            return Ok(self
                .nearest_points(x)
                .into_iter()
                .map(|p| SetValue::point(x.iter().zip(&p).map(|(&a, &b)| a - b).collect()))
                .collect());
        }
        Ok(vec![self.subdiff(x)?])
    }

    /// Subdifferential at `x` (empty outside the domain). For distance maps
    /// this is the value for the first nearest point; see
    /// [`ProxFunction::subdiff_all`].
    pub fn subdiff(&self, x: &[T]) -> Result<SetValue<T>, SetValuedError> {
        dim_check(self.dim, x.len())?;
        let n = self.dim;
        let tol = T::c(DOMAIN_TOL);
        Ok(match &self.kind {
            ProxKind::L1 { alpha } => {
                let a = *alpha;
                SetValue::from_intervals(
                    x.iter()
                        .map(|&v| {
                            if v > T::zero() {
                                Interval::point(a)
                            } else if v < T::zero() {
                                Interval::point(-a)
                            } else {
                                Interval { lo: -a, hi: a }
                            }
                        })
                        .collect(),
                )
            }
            ProxKind::SqDistPoint { z } => {
                SetValue::point(x.iter().zip(z).map(|(&v, &zk)| v - zk).collect())
            }
            ProxKind::Ball { radius } => {
                let nx = norm2(x).sqrt();
                if nx > *radius + tol {
                    SetValue::empty(n)
                } else if nx >= *radius - tol && nx > T::zero() {
                    SetValue::point(vec![T::zero(); n])
                        .with_ray(x.iter().map(|&v| v / nx).collect())
                } else if nx == T::zero() && *radius == T::zero() {
                    SetValue::from_intervals(vec![Interval::full(); n])
                } else {
                    SetValue::point(vec![T::zero(); n])
                }
            }
            ProxKind::Box { lo, hi } => {
                let mut boxes = Vec::with_capacity(n);
                for k in 0..n {
                    let (v, l, h) = (x[k], lo[k], hi[k]);
                    if v < l - tol || v > h + tol {
                        return Ok(SetValue::empty(n));
                    }
                    let at_lo = (v - l).abs() <= tol;
                    let at_hi = (v - h).abs() <= tol;
                    boxes.push(match (at_lo, at_hi) {
                        (true, true) => Interval::full(),
                        (true, false) => Interval::at_most(T::zero()),
                        (false, true) => Interval::at_least(T::zero()),
                        (false, false) => Interval::point(T::zero()),
                    });
                }
                SetValue::from_intervals(boxes)
            }
            ProxKind::Zero => SetValue::point(vec![T::zero(); n]),
            ProxKind::SeparableCustom { pieces } => {
                SetValue::from_intervals(pieces.iter().zip(x).map(|(p, &v)| p.subdiff(v)).collect())
            }
            ProxKind::DistanceMap { .. } => {
                let p = self.nearest_points(x).swap_remove(0);
                SetValue::point(x.iter().zip(&p).map(|(&a, &b)| a - b).collect())
            }
        })
    }
}

/// Resolvent of `f` with step `τ` at `x`.
pub fn eval_prox<T: Scalar>(f: &ProxFunction<T>, tau: T, x: &[T]) -> Result<Vec<T>, SetValuedError> {
    f.prox(tau, x)
}

/// Subdifferential of `f` at `x`.
pub fn eval_subdiff<T: Scalar>(f: &ProxFunction<T>, x: &[T]) -> Result<SetValue<T>, SetValuedError> {
    f.subdiff(x)
}

/// `min_x max_y G(x) + ⟨Kx, y⟩ − F*(y)` with `K` of shape `m × n`.
#[derive(Debug, Clone)]
pub struct SaddleProblem<T> {
    pub g: ProxFunction<T>,
    pub fstar: ProxFunction<T>,
    pub k: Arc<DenseMatrix<T>>,
}

impl<T: Scalar> SaddleProblem<T> {
    pub fn new(
        g: ProxFunction<T>,
        fstar: ProxFunction<T>,
        k: Arc<DenseMatrix<T>>,
    ) -> Result<Self, SetValuedError> {
        dim_check(k.cols(), g.dim)?;
        dim_check(k.rows(), fstar.dim)?;
        if matches!(g.kind, ProxKind::DistanceMap { .. })
            || matches!(fstar.kind, ProxKind::DistanceMap { .. })
        {
            return Err(SetValuedError::InvalidParameter(
                "saddle problems need convex G and F*".into(),
            ));
        }
        Ok(Self { g, fstar, k })
    }

    pub fn n(&self) -> usize {
        self.k.cols()
    }

    pub fn m(&self) -> usize {
        self.k.rows()
    }

    /// `H(u) = (∂G(x) + Kᵀy) × (∂F*(y) − Kx)`.
    pub fn eval_h(&self, u: &PrimalDualVector<T>) -> Result<SetValue<T>, SetValuedError> {
        dim_check(self.n(), u.n())?;
        dim_check(self.m(), u.m())?;
        let gx = self.g.subdiff(u.x())?.translate(&self.k.matvec_t(u.y()));
        let kx: Vec<T> = self.k.matvec(u.x()).into_iter().map(|v| -v).collect();
        let fy = self.fstar.subdiff(u.y())?.translate(&kx);
        Ok(gx.concat(&fy))
    }

    /// `dist(0, H(u))`, `+∞` when `H(u)` is empty.
    pub fn optimality_residual(&self, u: &PrimalDualVector<T>) -> Result<T, SetValuedError> {
        let h = self.eval_h(u)?;
        Ok(h.dist_sq(&vec![T::zero(); h.dim()]).sqrt())
    }

    /// Primal objective `G(x) + F(Kx)` is not generally available; this returns
    /// the Lagrangian `G(x) + ⟨Kx, y⟩ − F*(y)`.
    pub fn lagrangian(&self, u: &PrimalDualVector<T>) -> T {
        self.g.value(u.x()) + dot(&self.k.matvec(u.x()), u.y()) - self.fstar.value(u.y())
    }
}

/// `H(u)` for a saddle problem.
pub fn eval_h<T: Scalar>(
    p: &SaddleProblem<T>,
    u: &PrimalDualVector<T>,
) -> Result<SetValue<T>, SetValuedError> {
    p.eval_h(u)
}

/// `dist(0, H(u))`.
pub fn optimality_residual<T: Scalar>(
    p: &SaddleProblem<T>,
    u: &PrimalDualVector<T>,
) -> Result<T, SetValuedError> {
    p.optimality_residual(u)
}

/// Representation of `inv T(ŵ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SolutionSet<T> {
    Singleton(PrimalDualVector<T>),
    Finite(Vec<PrimalDualVector<T>>),
    /// `∏ intervals` over the concatenated coordinates `(x, y)`, primal block
    /// of length `n`. Degenerate intervals pin coordinates.
    Product { n: usize, intervals: Vec<Interval<T>> },
}

impl<T: Scalar> SolutionSet<T> {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::Singleton(u) => u.dims(),
            Self::Finite(v) => v.first().map_or((0, 0), PrimalDualVector::dims),
            Self::Product { n, intervals } => (*n, intervals.len() - n),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Self::Finite(v) if v.is_empty())
    }

    /// Finite element list, when the set is finite.
    pub fn finite_elements(&self) -> Option<Vec<PrimalDualVector<T>>> {
        match self {
            Self::Singleton(u) => Some(vec![u.clone()]),
            Self::Finite(v) => Some(v.clone()),
            Self::Product { n, intervals } => {
                if intervals.iter().all(Interval::is_point) {
                    let flat: Vec<T> = intervals.iter().map(|i| i.lo).collect();
                    Some(vec![PrimalDualVector::from_flat(*n, &flat).expect("n >= 1")])
                } else {
                    None
                }
            }
        }
    }

    pub fn contains(&self, u: &PrimalDualVector<T>, tol: T) -> bool {
        match self {
            Self::Singleton(s) => s.dims() == u.dims() && s.sub(u).norm() <= tol,
            Self::Finite(v) => v.iter().any(|s| s.dims() == u.dims() && s.sub(u).norm() <= tol),
            Self::Product { n, intervals } => {
                u.n() == *n
                    && u.dim() == intervals.len()
                    && intervals.iter().enumerate().all(|(k, i)| i.contains(u.get(k), tol))
            }
        }
    }

    /// Representative elements: all points of a finite set, or for a product
    /// the corners (unbounded ends replaced), the midpoint and, per free
    /// coordinate, `grid` evenly spaced values with the others at midpoint.
    pub fn representatives(&self, grid: usize) -> Vec<PrimalDualVector<T>> {
        match self {
            Self::Singleton(u) => vec![u.clone()],
            Self::Finite(v) => v.clone(),
            Self::Product { n, intervals } => {
                let reps: Vec<Vec<T>> = intervals.iter().map(|i| i.representative_endpoints()).collect();
                let mid: Vec<T> = reps.iter().map(|r| (r[0] + r[r.len() - 1]) / T::c(2.0)).collect();
                let free: Vec<usize> = (0..intervals.len()).filter(|&k| reps[k].len() > 1).collect();
                let mut out = Vec::new();
                if free.len() <= 12 {
                    for mask in 0..(1usize << free.len()) {
                        let mut p = mid.clone();
                        for (bit, &k) in free.iter().enumerate() {
                            p[k] = if (mask >> bit) & 1 == 1 { reps[k][1] } else { reps[k][0] };
                        }
                        out.push(p);
                    }
                }
                out.push(mid.clone());
                for &k in &free {
                    let (lo, hi) = (reps[k][0], reps[k][1]);
                    for j in 0..grid {
                        let t = T::from_usize_lossy(j) / T::from_usize_lossy(grid.max(2) - 1);
                        let mut p = mid.clone();
                        p[k] = lo + (hi - lo) * t;
                        out.push(p);
                    }
                }
                out.into_iter()
                    .map(|p| PrimalDualVector::from_flat(*n, &p).expect("n >= 1"))
                    .collect()
            }
        }
    }

    /// Euclidean projection (finite sets by enumeration, products by clamping).
    pub fn project(&self, u: &PrimalDualVector<T>) -> PrimalDualVector<T> {
        match self {
            Self::Singleton(s) => s.clone(),
            Self::Finite(v) => v
                .iter()
                .min_by(|a, b| {
                    a.sub(u)
                        .norm_sq()
                        .partial_cmp(&b.sub(u).norm_sq())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .expect("non-empty solution set")
                .clone(),
            Self::Product { n, intervals } => {
                let flat: Vec<T> = intervals
                    .iter()
                    .enumerate()
                    .map(|(k, i)| i.clamp(u.get(k)))
                    .collect();
                PrimalDualVector::from_flat(*n, &flat).expect("n >= 1")
            }
        }
    }

    /// Squared Euclidean distance.
    pub fn dist_sq(&self, u: &PrimalDualVector<T>) -> T {
        self.project(u).sub(u).norm_sq()
    }

    /// Squared Euclidean distance of the primal block to the primal projection
    /// `X̂`.
    pub fn primal_dist_sq(&self, x: &[T]) -> T {
        match self {
            Self::Singleton(s) => sq_diff(s.x(), x),
            Self::Finite(v) => v.iter().map(|s| sq_diff(s.x(), x)).fold(T::infinity(), T::min),
            Self::Product { intervals, .. } => {
                x.iter().zip(intervals).map(|(&v, i)| i.dist_sq(v)).sum()
            }
        }
    }
}

fn sq_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&p, &q)| (p - q) * (p - q)).sum()
}
