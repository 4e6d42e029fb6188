//! Dense vectors and matrices, primal-dual block vectors, and the structured
//! operator family `[aI, bKᵀ; cK, dI]` with weighted inner products, norms,
//! distances and spectral checks.

use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Scalar;

/// Errors raised by the linear algebra layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("operator not PSD at point (quadratic form {value:e})")]
    NotPsdAtPoint { value: f64 },
    #[error("empty set")]
    EmptySet,
    #[error("operation leaves the structured operator family: {0}")]
    LeavesFamily(&'static str),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
}

fn mismatch(expected: impl Into<String>, got: impl Into<String>) -> LinalgError {
    LinalgError::DimensionMismatch {
        expected: expected.into(),
        got: got.into(),
    }
}

/// Euclidean dot product of two slices of equal length.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&p, &q)| acc + p * q)
}

/// Squared Euclidean norm.
#[inline]
pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(mismatch(
                format!("{} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::InvalidShape("ragged rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `K x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Kᵀ y`.
    pub fn matvec_t(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.rows, "matvec_t dimension mismatch");
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == T::zero() {
                continue;
            }
            for (o, &k) in out.iter_mut().zip(self.row(i)) {
                *o += k * yi;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(mismatch(
                format!("inner dimension {}", self.cols),
                format!("{}", other.rows),
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.get(i, j) + a * other.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    /// `KᵀK` (cols × cols).
    pub fn gram(&self) -> Self {
        let mut g = Self::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for p in 0..self.cols {
                if r[p] == T::zero() {
                    continue;
                }
                for q in p..self.cols {
                    let v = g.get(p, q) + r[p] * r[q];
                    g.set(p, q, v);
                }
            }
        }
        for p in 0..self.cols {
            for q in 0..p {
                let v = g.get(q, p);
                g.set(p, q, v);
            }
        }
        g
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Spectral norm by power iteration on `KᵀK`, relative tolerance 1e-10,
    /// at most 10000 iterations.
    pub fn spectral_norm(&self) -> T {
        power_iteration_norm(self, T::c(1e-10), 10_000)
    }
}

/// Power iteration on `KᵀK` returning `‖K‖₂`.
///
/// Stops once the Rayleigh quotient changes by less than `rel_tol` relative.
pub fn power_iteration_norm<T: Scalar>(k: &DenseMatrix<T>, rel_tol: T, max_iter: usize) -> T {
    let n = k.cols();
    if n == 0 || k.rows() == 0 || k.data().iter().all(|&v| v == T::zero()) {
        return T::zero();
    }
    // Slightly non-uniform start so it is unlikely to be orthogonal to the top vector.
    let mut v: Vec<T> = (0..n)
        .map(|i| T::one() + T::c(0.1) * T::from_usize_lossy(i) / T::from_usize_lossy(n))
        .collect();
    let nv = norm2(&v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = T::zero();
    for _ in 0..max_iter {
        let kv = k.matvec(&v);
        let new_lambda = norm2(&kv);
        let mut w = k.matvec_t(&kv);
        let nw = norm2(&w).sqrt();
        if nw == T::zero() {
            return new_lambda.sqrt();
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
        let converged = (new_lambda - lambda).abs() <= rel_tol * new_lambda;
        lambda = new_lambda;
        if converged {
            break;
        }
    }
    // One last Rayleigh quotient on the final vector.
    norm2(&k.matvec(&v)).max(lambda).sqrt()
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(a: &DenseMatrix<T>) -> Vec<T> {
    symmetric_eigen(a).0
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns of the second matrix.
pub fn symmetric_eigen<T: Scalar>(a: &DenseMatrix<T>) -> (Vec<T>, DenseMatrix<T>) {
    assert!(a.is_square(), "symmetric_eigen needs a square matrix");
    let n = a.rows();
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = m.get(i, j) * m.get(i, j);
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (T::c(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m.get(i, i).partial_cmp(&m.get(j, j)).unwrap_or(std::cmp::Ordering::Equal));
    let vals = idx.iter().map(|&i| m.get(i, i)).collect();
    let mut vecs = DenseMatrix::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        for r in 0..n {
            vecs.set(r, col, v.get(r, i));
        }
    }
    (vals, vecs)
}

/// A point `u = (x, y)` with primal block of length `n ≥ 1` and dual block of
/// length `m ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualVector<T> {
    x: Vec<T>,
    y: Vec<T>,
}

impl<T: Scalar> PrimalDualVector<T> {
    pub fn new(x: Vec<T>, y: Vec<T>) -> Result<Self, LinalgError> {
        if x.is_empty() {
            return Err(LinalgError::InvalidShape("primal block must have n >= 1".into()));
        }
        Ok(Self { x, y })
    }

    /// Plain primal vector (`m = 0`).
    pub fn primal(x: Vec<T>) -> Result<Self, LinalgError> {
        Self::new(x, Vec::new())
    }

    /// Scalar point in ℝ (n = 1, m = 0).
    pub fn scalar(v: T) -> Self {
        Self { x: vec![v], y: Vec::new() }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        assert!(n >= 1, "primal block must have n >= 1");
        Self {
            x: vec![T::zero(); n],
            y: vec![T::zero(); m],
        }
    }

    /// Splits a flat vector as `(v[..n], v[n..])`.
    pub fn from_flat(n: usize, v: &[T]) -> Result<Self, LinalgError> {
        if n == 0 || n > v.len() {
            return Err(LinalgError::InvalidShape(format!(
                "cannot split length {} with n = {}",
                v.len(),
                n
            )));
        }
        Ok(Self {
            x: v[..n].to_vec(),
            y: v[n..].to_vec(),
        })
    }

    #[inline]
    pub fn x(&self) -> &[T] {
        &self.x
    }

    #[inline]
    pub fn y(&self) -> &[T] {
        &self.y
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.len()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.x.len() + self.y.len()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.n(), self.m())
    }

    /// Coordinate `k` of the concatenation `(x, y)`.
    #[inline]
    pub fn get(&self, k: usize) -> T {
        if k < self.x.len() {
            self.x[k]
        } else {
            self.y[k - self.x.len()]
        }
    }

    #[inline]
    pub fn set(&mut self, k: usize, v: T) {
        let n = self.x.len();
        if k < n {
            self.x[k] = v;
        } else {
            self.y[k - n] = v;
        }
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.y);
        v
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<T>) {
        (self.x, self.y)
    }

    fn check_same(&self, other: &Self) -> Result<(), LinalgError> {
        if self.dims() != other.dims() {
            return Err(mismatch(
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.dims(), other.dims(), "block dimensions differ");
        Self {
            x: self.x.iter().zip(&other.x).map(|(&a, &b)| f(a, b)).collect(),
            y: self.y.iter().zip(&other.y).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `self + other`; panics on mismatched blocks.
    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    /// `self − other`; panics on mismatched blocks.
    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, LinalgError> {
        self.check_same(other)?;
        Ok(self.sub(other))
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            x: self.x.iter().map(|&a| a * s).collect(),
            y: self.y.iter().map(|&a| a * s).collect(),
        }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: T, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + s * b)
    }

    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.dims(), other.dims(), "block dimensions differ");
        dot(&self.x, &other.x) + dot(&self.y, &other.y)
    }

    pub fn norm_sq(&self) -> T {
        norm2(&self.x) + norm2(&self.y)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

/// Block operator `[aI, bKᵀ; cK, dI]` on `ℝⁿ × ℝᵐ`.
///
/// `k` is `m × n`. When it is absent the off-diagonal scales are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredOperator<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    k: Option<Arc<DenseMatrix<T>>>,
    n: usize,
    m: usize,
}

impl<T: Scalar> StructuredOperator<T> {
    pub fn new(
        a: T,
        b: T,
        c: T,
        d: T,
        k: Option<Arc<DenseMatrix<T>>>,
        n: usize,
        m: usize,
    ) -> Result<Self, LinalgError> {
        match &k {
            Some(km) if km.rows() != m || km.cols() != n => {
                return Err(mismatch(
                    format!("K of shape {}x{}", m, n),
                    format!("{}x{}", km.rows(), km.cols()),
                ))
            }
            None if b != T::zero() || c != T::zero() => {
                return Err(LinalgError::InvalidShape(
                    "off-diagonal scales need a coupling matrix".into(),
                ))
            }
            _ => {}
        }
        Ok(Self { a, b, c, d, k, n, m })
    }

    /// Block diagonal `diag(aI, dI)`.
    pub fn diag(a: T, d: T, n: usize, m: usize) -> Self {
        Self { a, b: T::zero(), c: T::zero(), d, k: None, n, m }
    }

    pub fn scalar(s: T, n: usize, m: usize) -> Self {
        Self::diag(s, s, n, m)
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self::scalar(T::one(), n, m)
    }

    pub fn zero(n: usize, m: usize) -> Self {
        Self::scalar(T::zero(), n, m)
    }

    /// Same block scales on a (possibly different) coupling matrix.
    pub fn with_coupling(&self, k: Arc<DenseMatrix<T>>) -> Result<Self, LinalgError> {
        Self::new(self.a, self.b, self.c, self.d, Some(k), self.n, self.m)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn coupling(&self) -> Option<&Arc<DenseMatrix<T>>> {
        self.k.as_ref()
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.b == self.c
    }

    /// Off-diagonal scales vanish (or there is no coupling).
    pub fn is_block_diagonal(&self) -> bool {
        self.k.is_none() || (self.b == T::zero() && self.c == T::zero())
    }

    fn check_vec(&self, u: &PrimalDualVector<T>) -> Result<(), LinalgError> {
        if u.dims() != (self.n, self.m) {
            return Err(mismatch(
                format!("({}, {})", self.n, self.m),
                format!("{:?}", u.dims()),
            ));
        }
        Ok(())
    }

    fn check_op(&self, other: &Self) -> Result<(), LinalgError> {
        if (self.n, self.m) != (other.n, other.m) {
            return Err(mismatch(
                format!("({}, {})", self.n, self.m),
                format!("({}, {})", other.n, other.m),
            ));
        }
        Ok(())
    }

    /// Returns the shared coupling of two operators, rejecting distinct ones.
    fn shared_k(&self, other: &Self) -> Result<Option<Arc<DenseMatrix<T>>>, LinalgError> {
        match (&self.k, &other.k) {
            (None, None) => Ok(None),
            (Some(k), None) | (None, Some(k)) => Ok(Some(k.clone())),
            (Some(k1), Some(k2)) => {
                if Arc::ptr_eq(k1, k2) || k1 == k2 {
                    Ok(Some(k1.clone()))
                } else {
                    Err(LinalgError::LeavesFamily("different coupling matrices"))
                }
            }
        }
    }

    /// `T u = (a x + b Kᵀy, c K x + d y)`.
    pub fn apply(&self, u: &PrimalDualVector<T>) -> Result<PrimalDualVector<T>, LinalgError> {
        self.check_vec(u)?;
        let mut x: Vec<T> = u.x().iter().map(|&v| self.a * v).collect();
        let mut y: Vec<T> = u.y().iter().map(|&v| self.d * v).collect();
        if let Some(k) = &self.k {
            if self.b != T::zero() {
                let kty = k.matvec_t(u.y());
                x.iter_mut().zip(kty).for_each(|(o, v)| *o += self.b * v);
            }
            if self.c != T::zero() {
                let kx = k.matvec(u.x());
                y.iter_mut().zip(kx).for_each(|(o, v)| *o += self.c * v);
            }
        }
        Ok(PrimalDualVector { x, y })
    }

    /// `⟨T u, u⟩ = a‖x‖² + (b+c)⟨Kx, y⟩ + d‖y‖²`.
    pub fn quad_form(&self, u: &PrimalDualVector<T>) -> Result<T, LinalgError> {
        self.check_vec(u)?;
        let mut q = self.a * norm2(u.x()) + self.d * norm2(u.y());
        if let Some(k) = &self.k {
            let bc = self.b + self.c;
            if bc != T::zero() && self.m > 0 {
                q += bc * dot(&k.matvec(u.x()), u.y());
            }
        }
        Ok(q)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            a: self.a * s,
            b: self.b * s,
            c: self.c * s,
            d: self.d * s,
            ..self.clone()
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, LinalgError> {
        self.check_op(other)?;
        let k = self.shared_k(other)?;
        Ok(Self {
            a: self.a + other.a,
            b: self.b + other.b,
            c: self.c + other.c,
            d: self.d + other.d,
            k,
            n: self.n,
            m: self.m,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LinalgError> {
        self.add(&other.scale(-T::one()))
    }

    /// Adjoint: swaps the off-diagonal scales.
    pub fn adjoint(&self) -> Self {
        Self {
            b: self.c,
            c: self.b,
            ..self.clone()
        }
    }

    /// Symmetric part `(T + Tᵀ)/2`.
    pub fn symmetric_part(&self) -> Self {
        let h = (self.b + self.c) / T::c(2.0);
        Self { b: h, c: h, ..self.clone() }
    }

    /// `self ∘ other`. Defined only when no `KᵀK` or `KKᵀ` term appears.
    pub fn compose(&self, other: &Self) -> Result<Self, LinalgError> {
        self.check_op(other)?;
        let k = self.shared_k(other)?;
        if k.is_some() && (self.b * other.c != T::zero() || self.c * other.b != T::zero()) {
            return Err(LinalgError::LeavesFamily("composition creates KᵀK or KKᵀ blocks"));
        }
        Ok(Self {
            a: self.a * other.a,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.d * other.d,
            k,
            n: self.n,
            m: self.m,
        })
    }

    /// Dense `(n+m) × (n+m)` matrix.
    pub fn to_dense(&self) -> DenseMatrix<T> {
        let dim = self.n + self.m;
        let mut out = DenseMatrix::zeros(dim, dim);
        for i in 0..self.n {
            out.set(i, i, self.a);
        }
        for j in 0..self.m {
            out.set(self.n + j, self.n + j, self.d);
        }
        if let Some(k) = &self.k {
            for r in 0..self.m {
                for col in 0..self.n {
                    let kv = k.get(r, col);
                    // top-right: b Kᵀ, bottom-left: c K
                    out.set(col, self.n + r, self.b * kv);
                    out.set(self.n + r, col, self.c * kv);
                }
            }
        }
        out
    }

    /// Smallest eigenvalue of the symmetric part, in closed form given `‖K‖`.
    ///
    /// The spectrum of `[aI, sKᵀ; sK, dI]` consists of `a`, `d` and the pairs
    /// `(a+d)/2 ± √(((a−d)/2)² + s²σ²)` over singular values σ of K, so the
    /// minimum is attained at `σ = ‖K‖`.
    pub fn min_eigenvalue_closed_form(&self, k_norm: T) -> T {
        if self.m == 0 {
            return self.a;
        }
        let s = (self.b + self.c) / T::c(2.0);
        let kn = if self.k.is_some() { k_norm } else { T::zero() };
        let two = T::c(2.0);
        let half_diff = (self.a - self.d) / two;
        (self.a + self.d) / two - (half_diff * half_diff + s * s * kn * kn).sqrt()
    }
}

/// `⟨u, v⟩_T = ⟨T u, v⟩`.
pub fn weighted_inner_product<T: Scalar>(
    u: &PrimalDualVector<T>,
    v: &PrimalDualVector<T>,
    op: &StructuredOperator<T>,
) -> Result<T, LinalgError> {
    u.check_same(v)?;
    Ok(op.apply(u)?.dot(v))
}

/// Clamps a quadratic form value: tiny negatives become 0, real negatives error.
pub fn clamp_quadratic<T: Scalar>(q: T, u_norm_sq: T) -> Result<T, LinalgError> {
    if q >= T::zero() {
        Ok(q)
    } else if q >= -T::c(1e-12) * u_norm_sq {
        Ok(T::zero())
    } else {
        Err(LinalgError::NotPsdAtPoint { value: q.as_f64() })
    }
}

/// `‖u‖²_T` with the clamping rule of [`clamp_quadratic`].
pub fn weighted_norm_sq<T: Scalar>(
    u: &PrimalDualVector<T>,
    op: &StructuredOperator<T>,
) -> Result<T, LinalgError> {
    let q = weighted_inner_product(u, u, op)?;
    clamp_quadratic(q, u.norm_sq())
}

/// `‖u‖_T = √⟨Tu, u⟩`.
pub fn weighted_norm<T: Scalar>(
    u: &PrimalDualVector<T>,
    op: &StructuredOperator<T>,
) -> Result<T, LinalgError> {
    Ok(weighted_norm_sq(u, op)?.sqrt())
}

/// Minimum of `‖u − a‖_T` over a finite set, with the minimising index.
pub fn dist_weighted_finite<T: Scalar>(
    u: &PrimalDualVector<T>,
    set: &[PrimalDualVector<T>],
    op: &StructuredOperator<T>,
) -> Result<(T, usize), LinalgError> {
    if set.is_empty() {
        return Err(LinalgError::EmptySet);
    }
    let mut best = (T::infinity(), 0);
    for (i, a) in set.iter().enumerate() {
        let d = weighted_norm(&u.checked_sub(a)?, op)?;
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}

/// Result of [`psd_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport<T> {
    pub is_psd: bool,
    pub min_eigenvalue: T,
}

/// Densifies the symmetric part of `op` and tests `λ_min ≥ −margin` with a
/// Jacobi eigensolver.
pub fn psd_check<T: Scalar>(op: &StructuredOperator<T>, margin: T) -> PsdReport<T> {
    let dense = op.symmetric_part().to_dense();
    let eig = symmetric_eigenvalues(&dense);
    let min_eigenvalue = eig.first().copied().unwrap_or(T::zero());
    PsdReport {
        is_psd: min_eigenvalue >= -margin,
        min_eigenvalue,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pd(x: &[f64], y: &[f64]) -> PrimalDualVector<f64> {
        PrimalDualVector::new(x.to_vec(), y.to_vec()).unwrap()
    }

    fn zm(phitau: f64) -> StructuredOperator<f64> {
        let k = Arc::new(DenseMatrix::new(1, 1, vec![1.0]).unwrap());
        StructuredOperator::new(1.0, -phitau, -phitau, 1.0, Some(k), 1, 1).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let u = pd(&[1.0, 2.0], &[]);
        let v = pd(&[3.0, 4.0], &[]);
        let id = StructuredOperator::identity(2, 0);
        assert_eq!(weighted_inner_product(&u, &v, &id).unwrap(), 11.0);
        assert_eq!(weighted_inner_product(&u, &v, &id.scale(2.0)).unwrap(), 22.0);
        let w = pd(&[1.0], &[1.0]);
        let ip = weighted_inner_product(&w, &w, &zm(0.5)).unwrap();
        assert!((ip - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inner_product_dimension_mismatch() {
        let u = pd(&[1.0, 2.0], &[]);
        let v = pd(&[1.0], &[2.0]);
        let id = StructuredOperator::identity(2, 0);
        assert!(matches!(
            weighted_inner_product(&u, &v, &id),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn norm_examples() {
        let id = StructuredOperator::identity(2, 0);
        assert_eq!(weighted_norm(&pd(&[3.0, 4.0], &[]), &id).unwrap(), 5.0);
        assert_eq!(
            weighted_norm(&pd(&[3.0, 4.0], &[]), &StructuredOperator::zero(2, 0)).unwrap(),
            0.0
        );
        let v = weighted_norm(&pd(&[1.0], &[-1.0]), &zm(0.5)).unwrap();
        assert!((v - 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn norm_rejects_indefinite_point() {
        let e = weighted_norm(&pd(&[1.0], &[1.0]), &zm(1.5));
        assert!(matches!(e, Err(LinalgError::NotPsdAtPoint { .. })));
        // Tiny negatives are clamped.
        let tiny = StructuredOperator::diag(-1e-13, 0.0, 1, 0);
        assert_eq!(weighted_norm(&PrimalDualVector::scalar(1.0), &tiny).unwrap(), 0.0);
    }

    #[test]
    fn dist_examples() {
        let id = StructuredOperator::identity(1, 0);
        let set: Vec<_> = [-1.0, 1.0].iter().map(|&v| PrimalDualVector::scalar(v)).collect();
        let (d, _) = dist_weighted_finite(&PrimalDualVector::scalar(0.5), &set, &id).unwrap();
        assert_eq!(d, 0.5);
        let dy: Vec<PrimalDualVector<f64>> = [1.0, 0.5, 0.25, 0.125, 0.0]
            .iter()
            .map(|&v| PrimalDualVector::scalar(v))
            .collect();
        // Enumerate the candidates independently.
        let oracle = dy
            .iter()
            .map(|a| (0.75 - a.x()[0]).abs())
            .fold(f64::INFINITY, f64::min);
        let (d, i) = dist_weighted_finite(&PrimalDualVector::scalar(0.75), &dy, &id).unwrap();
        assert_eq!(d, oracle);
        assert_eq!(d, 0.25);
        assert_eq!(i, 0);
        let (d, _) =
            dist_weighted_finite(&PrimalDualVector::scalar(0.3), &dy, &StructuredOperator::zero(1, 0))
                .unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(
            dist_weighted_finite(&PrimalDualVector::scalar(0.3), &[], &id),
            Err(LinalgError::EmptySet)
        );
    }

    #[test]
    fn psd_examples() {
        let r = psd_check(&StructuredOperator::<f64>::identity(3, 2), 0.0);
        assert!(r.is_psd);
        assert!((r.min_eigenvalue - 1.0).abs() < 1e-14);
        let r = psd_check(&zm(1.5), 0.0);
        assert!(!r.is_psd);
        assert!((r.min_eigenvalue + 0.5).abs() < 1e-14);
        let r = psd_check(&zm(0.5), 0.0);
        assert!(r.is_psd);
        assert!((r.min_eigenvalue - 0.5).abs() < 1e-14);
    }

    #[test]
    fn compose_rejects_gram_terms() {
        let z = zm(0.5);
        assert!(matches!(z.compose(&z), Err(LinalgError::LeavesFamily(_))));
        let d = StructuredOperator::diag(2.0, 3.0, 1, 1);
        let c = d.compose(&z).unwrap();
        assert_eq!((c.a, c.b, c.c, c.d), (2.0, -1.0, -1.5, 3.0));
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let a = DenseMatrix::from_rows(&[
            vec![2.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ])
        .unwrap();
        let e = symmetric_eigenvalues(&a);
        let s = 2f64.sqrt();
        let expect = [2.0 - s, 2.0, 2.0 + s];
        for (x, y) in e.iter().zip(expect) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn generic_over_f32() {
        let u = PrimalDualVector::<f32>::new(vec![3.0], vec![4.0]).unwrap();
        let n = weighted_norm(&u, &StructuredOperator::identity(1, 1)).unwrap();
        assert!((n - 5.0).abs() < 1e-6);
    }
}
