//! The graded algebra `a(E) = Ω*(chart) ⊗ End(E)` for `E = E⁺ ⊕ E⁻`.
//!
//! An element is a finite sum `Σ_J dc_J ⊗ A_J` with `J` a strictly increasing
//! multiindex (stored as a bitmask) and `A_J` a `(p+q)×(p+q)` matrix whose
//! diagonal blocks are even and off-diagonal blocks odd.  The product is the
//! Koszul product
//!
//! `(dc_J ⊗ T)(dc_K ⊗ S) = (−1)^{|K|·deg T} dc_J ∧ dc_K ⊗ TS`,
//!
//! and the supertrace is `tr A₁₁ − tr A₂₂` taken coefficientwise, which kills
//! supercommutators for this product.
//!
//! Coefficients are generic ([`Coeff`]): symbolic ([`ScalarExpr`]) for exact
//! work, `Complex64` for numerics at a point.

use crate::exprkit::{CompiledExpr, ExprError, Poly, ScalarExpr};
use num_complex::Complex64;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradedError {
    #[error("operands live on different chart frames")]
    ChartMismatch,
    #[error("element is not homogeneous (mixed parity)")]
    NotHomogeneous,
    #[error("repeated index {0} in multiindex")]
    RepeatedIndex(usize),
    #[error("index {index} out of range for a chart of dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("matrix has size {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("unknown coordinate `{0}`")]
    UnknownCoordinate(String),
    #[error("invalid chart frame: {0}")]
    InvalidFrame(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

// ---------------------------------------------------------------------------
// Coefficients

/// A commutative coefficient ring.
pub trait Coeff: Clone + PartialEq + fmt::Debug + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_ratio(num: i64, den: i64) -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;

    fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    /// `Σ aᵢ·bᵢ`; symbolic coefficients override this to normalize once.
    fn sum_products(pairs: &[(&Self, &Self)]) -> Self {
        pairs.iter().fold(Self::zero(), |acc, (a, b)| acc.add(&a.mul(b)))
    }
}

impl Coeff for ScalarExpr {
    fn zero() -> Self {
        ScalarExpr::zero()
    }
    fn one() -> Self {
        ScalarExpr::one()
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        ScalarExpr::ratio(num, den)
    }
    fn is_zero(&self) -> bool {
        self.simplify().is_zero()
    }
    fn add(&self, o: &Self) -> Self {
        if ScalarExpr::is_zero(self) {
            return o.simplify();
        }
        if ScalarExpr::is_zero(o) {
            return self.simplify();
        }
        Poly::from_expr(self).add(&Poly::from_expr(o)).to_expr()
    }
    fn mul(&self, o: &Self) -> Self {
        if ScalarExpr::is_zero(self) || ScalarExpr::is_zero(o) {
            return ScalarExpr::zero();
        }
        if self.is_one() {
            return o.simplify();
        }
        if o.is_one() {
            return self.simplify();
        }
        Poly::from_expr(self).mul(&Poly::from_expr(o)).to_expr()
    }
    fn neg(&self) -> Self {
        Poly::from_expr(self).neg().to_expr()
    }
    fn sum_products(pairs: &[(&Self, &Self)]) -> Self {
        let mut acc = Poly::zero();
        for (a, b) in pairs {
            if ScalarExpr::is_zero(a) || ScalarExpr::is_zero(b) {
                continue;
            }
            acc = acc.add(&Poly::from_expr(a).mul(&Poly::from_expr(b)));
        }
        acc.to_expr()
    }
}

impl Coeff for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        Complex64::new(num as f64 / den as f64, 0.0)
    }
    fn is_zero(&self) -> bool {
        self.re == 0.0 && self.im == 0.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
}

// ---------------------------------------------------------------------------
// Multiindices

/// A strictly increasing set of coordinate indices, stored as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Multiindex(pub u32);

impl Multiindex {
    pub const EMPTY: Multiindex = Multiindex(0);

    /// Indices in any order; repeated entries are rejected.
    pub fn new(indices: &[usize]) -> Result<Self, GradedError> {
        let mut bits = 0u32;
        for &i in indices {
            if i >= 32 {
                return Err(GradedError::IndexOutOfRange { index: i, dim: 32 });
            }
            if bits & (1 << i) != 0 {
                return Err(GradedError::RepeatedIndex(i));
            }
            bits |= 1 << i;
        }
        Ok(Multiindex(bits))
    }

    pub fn single(i: usize) -> Self {
        Multiindex(1 << i)
    }

    pub fn full(dim: usize) -> Self {
        Multiindex(if dim == 32 { u32::MAX } else { (1u32 << dim) - 1 })
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    pub fn is_subset_of(self, o: Multiindex) -> bool {
        self.0 & !o.0 == 0
    }

    pub fn union(self, o: Multiindex) -> Multiindex {
        Multiindex(self.0 | o.0)
    }

    pub fn minus(self, o: Multiindex) -> Multiindex {
        Multiindex(self.0 & !o.0)
    }

    pub fn indices(self) -> Vec<usize> {
        (0..32).filter(|&i| self.contains(i)).collect()
    }
}

/// Sign of `dc_J ∧ dc_K = sign · dc_{J∪K}`; zero when the sets overlap.
pub fn wedge_sign(j: Multiindex, k: Multiindex) -> i32 {
    if j.0 & k.0 != 0 {
        return 0;
    }
    // Inversions: pairs (a ∈ J, b ∈ K) with a > b.
    let mut inv = 0u32;
    let mut kb = k.0;
    while kb != 0 {
        let b = kb.trailing_zeros();
        kb &= kb - 1;
        inv += (j.0 >> (b + 1)).count_ones();
    }
    if inv % 2 == 0 {
        1
    } else {
        -1
    }
}

// ---------------------------------------------------------------------------
// Chart frames

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordKind {
    Horizontal,
    Vertical,
}

/// Ordered chart coordinates plus the super-rank `(p, q)` of the bundle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChartFrame {
    coords: Vec<String>,
    kinds: Vec<CoordKind>,
    p: usize,
    q: usize,
}

impl ChartFrame {
    pub fn new(coords: Vec<(String, CoordKind)>, p: usize, q: usize) -> Result<Arc<Self>, GradedError> {
        if p == 0 || q == 0 {
            return Err(GradedError::InvalidFrame(format!("super-rank ({p}, {q}) must have p, q ≥ 1")));
        }
        if coords.len() > 31 {
            return Err(GradedError::InvalidFrame("too many coordinates".into()));
        }
        let names: BTreeSet<_> = coords.iter().map(|c| &c.0).collect();
        if names.len() != coords.len() {
            return Err(GradedError::InvalidFrame("duplicate coordinate names".into()));
        }
        let (coords, kinds) = coords.into_iter().unzip();
        Ok(Arc::new(Self { coords, kinds, p, q }))
    }

    /// Horizontal coordinates followed by vertical ones.
    pub fn split(horizontal: &[&str], vertical: &[&str], p: usize, q: usize) -> Result<Arc<Self>, GradedError> {
        let mut c: Vec<(String, CoordKind)> = horizontal.iter().map(|s| (s.to_string(), CoordKind::Horizontal)).collect();
        c.extend(vertical.iter().map(|s| (s.to_string(), CoordKind::Vertical)));
        Self::new(c, p, q)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn rank(&self) -> usize {
        self.p + self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> &str {
        &self.coords[i]
    }

    pub fn kind(&self, i: usize) -> CoordKind {
        self.kinds[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c == name)
    }

    pub fn mask_of(&self, kind: CoordKind) -> Multiindex {
        Multiindex(
            (0..self.dim()).filter(|&i| self.kinds[i] == kind).fold(0, |m, i| m | (1 << i)),
        )
    }

    pub fn horizontal(&self) -> Vec<&str> {
        (0..self.dim()).filter(|&i| self.kinds[i] == CoordKind::Horizontal).map(|i| self.coord(i)).collect()
    }

    pub fn vertical(&self) -> Vec<&str> {
        (0..self.dim()).filter(|&i| self.kinds[i] == CoordKind::Vertical).map(|i| self.coord(i)).collect()
    }

    pub fn top(&self) -> Multiindex {
        Multiindex::full(self.dim())
    }

    pub fn name_multiindex(&self, m: Multiindex) -> String {
        m.indices().iter().map(|&i| format!("d{}", self.coords[i])).collect::<Vec<_>>().join("∧")
    }

    pub fn same(a: &Arc<Self>, b: &Arc<Self>) -> bool {
        Arc::ptr_eq(a, b) || a == b
    }
}

// ---------------------------------------------------------------------------
// Matrices

#[derive(Clone, PartialEq)]
pub struct Matrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: fmt::Debug> fmt::Debug for Matrix<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[S]> = self.data.chunks(self.n.max(1)).collect();
        f.debug_list().entries(rows).finish()
    }
}

impl<S: Coeff> Matrix<S> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![S::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self, GradedError> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(GradedError::DimensionMismatch { got: r.len(), expected: n });
        }
        Ok(Self { n, data: rows.into_iter().flatten().collect() })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> S) -> Self {
        Self { n, data: (0..n * n).map(|k| f(k / n, k % n)).collect() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &S {
        &self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.n + j] = v;
    }

    pub fn entries(&self) -> &[S] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }

    pub fn map<T: Coeff>(&self, f: impl Fn(&S) -> T) -> Matrix<T> {
        Matrix { n: self.n, data: self.data.iter().map(f).collect() }
    }

    pub fn add(&self, o: &Self) -> Self {
        Matrix { n: self.n, data: self.data.iter().zip(&o.data).map(|(a, b)| a.add(b)).collect() }
    }

    pub fn neg(&self) -> Self {
        self.map(|x| x.neg())
    }

    pub fn scale(&self, k: &S) -> Self {
        self.map(|x| x.mul(k))
    }

    pub fn mul(&self, o: &Self) -> Self {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n);
        let mut pairs = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..n {
                pairs.clear();
                for k in 0..n {
                    let (a, b) = (&self.data[i * n + k], &o.data[k * n + j]);
                    if !a.is_zero() && !b.is_zero() {
                        pairs.push((a, b));
                    }
                }
                out.push(if pairs.is_empty() { S::zero() } else { S::sum_products(&pairs) });
            }
        }
        Matrix { n, data: out }
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.n, |i, j| self.get(j, i).clone())
    }

    pub fn trace(&self) -> S {
        (0..self.n).fold(S::zero(), |acc, i| acc.add(self.get(i, i)))
    }

    /// `tr A₁₁ − tr A₂₂` for the block split at `p`.
    pub fn supertrace(&self, p: usize) -> S {
        (0..self.n).fold(S::zero(), |acc, i| if i < p { acc.add(self.get(i, i)) } else { acc.sub(self.get(i, i)) })
    }

    /// Conjugation by the grading operator: negates the off-diagonal blocks.
    pub fn grading_conjugate(&self, p: usize) -> Self {
        Matrix::from_fn(self.n, |i, j| if (i < p) == (j < p) { self.get(i, j).clone() } else { self.get(i, j).neg() })
    }

    pub fn even_part(&self, p: usize) -> Self {
        Matrix::from_fn(self.n, |i, j| if (i < p) == (j < p) { self.get(i, j).clone() } else { S::zero() })
    }

    pub fn odd_part(&self, p: usize) -> Self {
        Matrix::from_fn(self.n, |i, j| if (i < p) != (j < p) { self.get(i, j).clone() } else { S::zero() })
    }

    /// The dense block-structure parity, `None` for the zero matrix or mixed blocks.
    fn block_parity(&self, p: usize) -> (bool, bool) {
        let mut even = false;
        let mut odd = false;
        for i in 0..self.n {
            for j in 0..self.n {
                if !self.get(i, j).is_zero() {
                    if (i < p) == (j < p) {
                        even = true;
                    } else {
                        odd = true;
                    }
                }
            }
        }
        (even, odd)
    }
}

impl Matrix<Complex64> {
    pub fn conj_transpose(&self) -> Self {
        Matrix::from_fn(self.n, |i, j| self.get(j, i).conj())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Graded elements

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

impl Parity {
    pub fn bit(self) -> Option<usize> {
        match self {
            Parity::Even => Some(0),
            Parity::Odd => Some(1),
            Parity::Mixed => None,
        }
    }
}

/// `Σ_J dc_J ⊗ A_J` over a chart frame.
#[derive(Clone, PartialEq)]
pub struct GradedElement<S> {
    frame: Arc<ChartFrame>,
    terms: BTreeMap<Multiindex, Matrix<S>>,
}

impl<S: Coeff> fmt::Debug for GradedElement<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for (j, a) in &self.terms {
            m.entry(&self.frame.name_multiindex(*j), a);
        }
        m.finish()
    }
}

impl<S: Coeff> GradedElement<S> {
    pub fn zero(frame: &Arc<ChartFrame>) -> Self {
        Self { frame: frame.clone(), terms: BTreeMap::new() }
    }

    pub fn identity(frame: &Arc<ChartFrame>) -> Self {
        Self::from_matrix(frame, Multiindex::EMPTY, Matrix::identity(frame.rank())).unwrap()
    }

    pub fn from_matrix(frame: &Arc<ChartFrame>, j: Multiindex, a: Matrix<S>) -> Result<Self, GradedError> {
        let mut e = Self::zero(frame);
        e.insert(j, a)?;
        Ok(e)
    }

    pub fn from_terms(frame: &Arc<ChartFrame>, terms: Vec<(Multiindex, Matrix<S>)>) -> Result<Self, GradedError> {
        let mut e = Self::zero(frame);
        for (j, a) in terms {
            e.insert(j, a)?;
        }
        Ok(e)
    }

    /// Adds `dc_J ⊗ A` to the element.
    pub fn insert(&mut self, j: Multiindex, a: Matrix<S>) -> Result<(), GradedError> {
        if a.n() != self.frame.rank() {
            return Err(GradedError::DimensionMismatch { got: a.n(), expected: self.frame.rank() });
        }
        if let Some(i) = j.indices().into_iter().find(|&i| i >= self.frame.dim()) {
            return Err(GradedError::IndexOutOfRange { index: i, dim: self.frame.dim() });
        }
        self.accumulate(j, a);
        Ok(())
    }

    fn accumulate(&mut self, j: Multiindex, a: Matrix<S>) {
        if a.is_zero() {
            return;
        }
        match self.terms.get_mut(&j) {
            Some(old) => {
                let s = old.add(&a);
                if s.is_zero() {
                    self.terms.remove(&j);
                } else {
                    *old = s;
                }
            }
            None => {
                self.terms.insert(j, a);
            }
        }
    }

    pub fn frame(&self) -> &Arc<ChartFrame> {
        &self.frame
    }

    pub fn terms(&self) -> &BTreeMap<Multiindex, Matrix<S>> {
        &self.terms
    }

    pub fn component(&self, j: Multiindex) -> Matrix<S> {
        self.terms.get(&j).cloned().unwrap_or_else(|| Matrix::zeros(self.frame.rank()))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn check_frame(&self, o: &Self) -> Result<(), GradedError> {
        if ChartFrame::same(&self.frame, &o.frame) {
            Ok(())
        } else {
            Err(GradedError::ChartMismatch)
        }
    }

    pub fn add(&self, o: &Self) -> Result<Self, GradedError> {
        self.check_frame(o)?;
        let mut out = self.clone();
        for (j, a) in &o.terms {
            out.accumulate(*j, a.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, o: &Self) -> Result<Self, GradedError> {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> Self {
        self.map_matrices(|a| a.neg())
    }

    pub fn scale(&self, k: &S) -> Self {
        self.map_matrices(|a| a.scale(k))
    }

    fn map_matrices(&self, f: impl Fn(&Matrix<S>) -> Matrix<S>) -> Self {
        let mut out = Self::zero(&self.frame);
        for (j, a) in &self.terms {
            out.accumulate(*j, f(a));
        }
        out
    }

    pub fn map_coeffs<T: Coeff>(&self, f: impl Fn(&S) -> T) -> GradedElement<T> {
        let mut out = GradedElement::zero(&self.frame);
        for (j, a) in &self.terms {
            out.accumulate(*j, a.map(&f));
        }
        out
    }

    /// Terms of form degree `k`.
    pub fn degree_part(&self, k: usize) -> Self {
        let mut out = Self::zero(&self.frame);
        for (j, a) in self.terms.iter().filter(|(j, _)| j.len() == k) {
            out.accumulate(*j, a.clone());
        }
        out
    }

    pub fn max_form_degree(&self) -> usize {
        self.terms.keys().map(|j| j.len()).max().unwrap_or(0)
    }

    /// Total parity `|J| + deg(A_J)`; the zero element counts as even.
    pub fn parity(&self) -> Parity {
        let p = self.frame.p();
        let mut seen = [false, false];
        for (j, a) in &self.terms {
            let (e, o) = a.block_parity(p);
            if e {
                seen[j.len() % 2] = true;
            }
            if o {
                seen[(j.len() + 1) % 2] = true;
            }
        }
        match seen {
            [true, true] => Parity::Mixed,
            [_, true] => Parity::Odd,
            _ => Parity::Even,
        }
    }

    /// Koszul product.
    pub fn mul(&self, o: &Self) -> Result<Self, GradedError> {
        self.mul_masked(o, Multiindex::full(self.frame.dim()))
    }

    /// Koszul product keeping only form components inside `allowed`.
    pub fn mul_masked(&self, o: &Self, allowed: Multiindex) -> Result<Self, GradedError> {
        self.check_frame(o)?;
        let p = self.frame.p();
        let mut out = Self::zero(&self.frame);
        for (j, a) in &self.terms {
            let a_flip = a.grading_conjugate(p);
            for (k, b) in &o.terms {
                let jk = j.union(*k);
                if !jk.is_subset_of(allowed) {
                    continue;
                }
                let sign = wedge_sign(*j, *k);
                if sign == 0 {
                    continue;
                }
                let left = if k.len() % 2 == 1 { &a_flip } else { a };
                let prod = left.mul(b);
                out.accumulate(jk, if sign < 0 { prod.neg() } else { prod });
            }
        }
        Ok(out)
    }

    /// Coefficientwise supertrace.
    pub fn supertrace(&self) -> FormElement<S> {
        let p = self.frame.p();
        let mut out = FormElement::zero(&self.frame);
        for (j, a) in &self.terms {
            out.accumulate(*j, a.supertrace(p));
        }
        out
    }

    /// Coefficientwise ordinary trace (for ungraded endomorphism algebras).
    pub fn trace(&self) -> FormElement<S> {
        let mut out = FormElement::zero(&self.frame);
        for (j, a) in &self.terms {
            out.accumulate(*j, a.trace());
        }
        out
    }
}

/// `[a, b] = ab − (−1)^{|a||b|} ba` for homogeneous `a`, `b`.
pub fn super_commutator<S: Coeff>(a: &GradedElement<S>, b: &GradedElement<S>) -> Result<GradedElement<S>, GradedError> {
    let pa = a.parity().bit().ok_or(GradedError::NotHomogeneous)?;
    let pb = b.parity().bit().ok_or(GradedError::NotHomogeneous)?;
    let ab = a.mul(b)?;
    let ba = b.mul(a)?;
    if pa * pb == 1 {
        ab.add(&ba)
    } else {
        ab.sub(&ba)
    }
}

/// Koszul product (free-function form).
pub fn graded_mul<S: Coeff>(a: &GradedElement<S>, b: &GradedElement<S>) -> Result<GradedElement<S>, GradedError> {
    a.mul(b)
}

/// Coefficientwise supertrace (free-function form).
pub fn supertrace<S: Coeff>(a: &GradedElement<S>) -> FormElement<S> {
    a.supertrace()
}

impl GradedElement<ScalarExpr> {
    /// `d(dc_J ⊗ A) = Σᵢ dcᵢ ∧ dc_J ⊗ ∂ᵢA`.
    pub fn exterior_d(&self) -> Self {
        let mut out = Self::zero(&self.frame);
        for (j, a) in &self.terms {
            for i in 0..self.frame.dim() {
                if j.contains(i) {
                    continue;
                }
                let name = self.frame.coord(i);
                if !a.entries().iter().any(|e| e.depends_on(name)) {
                    continue;
                }
                let da = a.map(|e| e.differentiate(name));
                let sign = wedge_sign(Multiindex::single(i), *j);
                out.accumulate(j.union(Multiindex::single(i)), if sign < 0 { da.neg() } else { da });
            }
        }
        out
    }

    /// Simultaneous substitution in every coefficient (no change of chart).
    pub fn substitute_all(&self, map: &BTreeMap<String, ScalarExpr>) -> Self {
        self.map_coeffs(|e| e.substitute_all(map).simplify())
    }

    pub fn substitute(&self, name: &str, value: &ScalarExpr) -> Self {
        self.map_coeffs(|e| e.substitute(name, value).simplify())
    }

    pub fn depends_on(&self, var: &str) -> bool {
        self.terms.values().any(|a| a.entries().iter().any(|e| e.depends_on(var)))
    }

    /// Compile every entry for fast numeric evaluation at points.
    pub fn compile(&self, vars: &[&str]) -> Result<CompiledGraded, GradedError> {
        let mut keys = Vec::new();
        let mut exprs = Vec::new();
        for (j, a) in &self.terms {
            for r in 0..a.n() {
                for c in 0..a.n() {
                    let e = a.get(r, c);
                    if !ScalarExpr::is_zero(e) {
                        keys.push((*j, r, c));
                        exprs.push(e.clone());
                    }
                }
            }
        }
        Ok(CompiledGraded { frame: self.frame.clone(), keys, code: CompiledExpr::compile_many(&exprs, vars)? })
    }
}

/// A symbolic graded element compiled for evaluation at points.
#[derive(Clone, Debug)]
pub struct CompiledGraded {
    frame: Arc<ChartFrame>,
    keys: Vec<(Multiindex, usize, usize)>,
    code: CompiledExpr,
}

impl CompiledGraded {
    pub fn eval(&self, vals: &[Complex64]) -> GradedElement<Complex64> {
        let mut regs = Vec::new();
        let mut out = vec![Complex64::new(0.0, 0.0); self.keys.len()];
        self.code.eval_into(vals, &mut regs, &mut out);
        let n = self.frame.rank();
        let mut terms: BTreeMap<Multiindex, Matrix<Complex64>> = BTreeMap::new();
        for ((j, r, c), v) in self.keys.iter().zip(out) {
            terms.entry(*j).or_insert_with(|| Matrix::zeros(n)).set(*r, *c, v);
        }
        terms.retain(|_, a| !a.is_zero());
        GradedElement { frame: self.frame.clone(), terms }
    }
}

// ---------------------------------------------------------------------------
// Scalar forms

/// `Σ_J f_J dc_J`.
#[derive(Clone, PartialEq)]
pub struct FormElement<S> {
    frame: Arc<ChartFrame>,
    terms: BTreeMap<Multiindex, S>,
}

impl<S: Coeff> fmt::Debug for FormElement<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for (j, a) in &self.terms {
            m.entry(&self.frame.name_multiindex(*j), a);
        }
        m.finish()
    }
}

impl<S: Coeff> FormElement<S> {
    pub fn zero(frame: &Arc<ChartFrame>) -> Self {
        Self { frame: frame.clone(), terms: BTreeMap::new() }
    }

    pub fn scalar(frame: &Arc<ChartFrame>, f: S) -> Self {
        let mut e = Self::zero(frame);
        e.accumulate(Multiindex::EMPTY, f);
        e
    }

    pub fn from_terms(frame: &Arc<ChartFrame>, terms: Vec<(Multiindex, S)>) -> Result<Self, GradedError> {
        let mut e = Self::zero(frame);
        for (j, f) in terms {
            if let Some(i) = j.indices().into_iter().find(|&i| i >= frame.dim()) {
                return Err(GradedError::IndexOutOfRange { index: i, dim: frame.dim() });
            }
            e.accumulate(j, f);
        }
        Ok(e)
    }

    fn accumulate(&mut self, j: Multiindex, f: S) {
        if f.is_zero() {
            return;
        }
        match self.terms.get_mut(&j) {
            Some(old) => {
                let s = old.add(&f);
                if s.is_zero() {
                    self.terms.remove(&j);
                } else {
                    *old = s;
                }
            }
            None => {
                self.terms.insert(j, f);
            }
        }
    }

    pub fn frame(&self) -> &Arc<ChartFrame> {
        &self.frame
    }

    pub fn terms(&self) -> &BTreeMap<Multiindex, S> {
        &self.terms
    }

    pub fn coefficient(&self, j: Multiindex) -> S {
        self.terms.get(&j).cloned().unwrap_or_else(S::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The degree if homogeneous (zero form: `Some(0)`).
    pub fn degree(&self) -> Option<usize> {
        let degs: BTreeSet<usize> = self.terms.keys().map(|j| j.len()).collect();
        match degs.len() {
            0 => Some(0),
            1 => degs.into_iter().next(),
            _ => None,
        }
    }

    pub fn add(&self, o: &Self) -> Result<Self, GradedError> {
        if !ChartFrame::same(&self.frame, &o.frame) {
            return Err(GradedError::ChartMismatch);
        }
        let mut out = self.clone();
        for (j, f) in &o.terms {
            out.accumulate(*j, f.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, o: &Self) -> Result<Self, GradedError> {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> Self {
        self.map_coeffs(|f| f.neg())
    }

    pub fn scale(&self, k: &S) -> Self {
        self.map_coeffs(|f| f.mul(k))
    }

    pub fn map_coeffs<T: Coeff>(&self, f: impl Fn(&S) -> T) -> FormElement<T> {
        let mut out = FormElement::zero(&self.frame);
        for (j, a) in &self.terms {
            out.accumulate(*j, f(a));
        }
        out
    }

    pub fn wedge(&self, o: &Self) -> Result<Self, GradedError> {
        if !ChartFrame::same(&self.frame, &o.frame) {
            return Err(GradedError::ChartMismatch);
        }
        let mut out = Self::zero(&self.frame);
        for (j, a) in &self.terms {
            for (k, b) in &o.terms {
                let s = wedge_sign(*j, *k);
                if s == 0 {
                    continue;
                }
                let v = a.mul(b);
                out.accumulate(j.union(*k), if s < 0 { v.neg() } else { v });
            }
        }
        Ok(out)
    }

    pub fn degree_part(&self, k: usize) -> Self {
        let mut out = Self::zero(&self.frame);
        for (j, a) in self.terms.iter().filter(|(j, _)| j.len() == k) {
            out.accumulate(*j, a.clone());
        }
        out
    }

    /// Interpret on another frame whose coordinate list contains this one's
    /// (matched by name).
    pub fn reframe(&self, target: &Arc<ChartFrame>) -> Result<Self, GradedError> {
        let map = index_map(&self.frame, target)?;
        let mut out = Self::zero(target);
        for (j, f) in &self.terms {
            let (m, s) = remap(*j, &map);
            out.accumulate(m, if s < 0 { f.neg() } else { f.clone() });
        }
        Ok(out)
    }
}

impl<S: Coeff> GradedElement<S> {
    /// Interpret on another frame with the same super-rank whose coordinate
    /// list contains this one's (matched by name).
    pub fn reframe(&self, target: &Arc<ChartFrame>) -> Result<Self, GradedError> {
        if target.p() != self.frame.p() || target.q() != self.frame.q() {
            return Err(GradedError::ChartMismatch);
        }
        let map = index_map(&self.frame, target)?;
        let mut out = Self::zero(target);
        for (j, a) in &self.terms {
            let (m, s) = remap(*j, &map);
            out.accumulate(m, if s < 0 { a.neg() } else { a.clone() });
        }
        Ok(out)
    }
}

fn index_map(from: &ChartFrame, to: &ChartFrame) -> Result<Vec<usize>, GradedError> {
    from.coords()
        .iter()
        .map(|c| to.index_of(c).ok_or_else(|| GradedError::UnknownCoordinate(c.clone())))
        .collect()
}

/// Image of `dc_J` under an index relabelling, with the reordering sign.
fn remap(j: Multiindex, map: &[usize]) -> (Multiindex, i32) {
    let mut acc = Multiindex::EMPTY;
    let mut sign = 1;
    for i in j.indices() {
        let k = Multiindex::single(map[i]);
        sign *= wedge_sign(acc, k);
        acc = acc.union(k);
    }
    (acc, sign)
}

impl FormElement<ScalarExpr> {
    pub fn exterior_d(&self) -> Self {
        let mut out = Self::zero(&self.frame);
        for (j, f) in &self.terms {
            for i in 0..self.frame.dim() {
                if j.contains(i) || !f.depends_on(self.frame.coord(i)) {
                    continue;
                }
                let df = f.differentiate(self.frame.coord(i));
                let s = wedge_sign(Multiindex::single(i), *j);
                out.accumulate(j.union(Multiindex::single(i)), if s < 0 { df.neg() } else { df });
            }
        }
        out
    }

    pub fn substitute_all(&self, map: &BTreeMap<String, ScalarExpr>) -> Self {
        self.map_coeffs(|e| e.substitute_all(map).simplify())
    }

    pub fn substitute(&self, name: &str, value: &ScalarExpr) -> Self {
        self.map_coeffs(|e| e.substitute(name, value).simplify())
    }

    pub fn depends_on(&self, var: &str) -> bool {
        self.terms.values().any(|e| e.depends_on(var))
    }

    /// Numeric coefficients at a point.
    pub fn eval(&self, vals: &crate::exprkit::Binding) -> Result<FormElement<Complex64>, ExprError> {
        let mut out = FormElement::zero(&self.frame);
        for (j, e) in &self.terms {
            out.accumulate(*j, crate::exprkit::evaluate(e, vals)?);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Changes of chart

/// A smooth map between charts, given by the source coordinates as
/// expressions in the target coordinates (and free parameters).
#[derive(Clone, Debug)]
pub struct ChartMap {
    source: Arc<ChartFrame>,
    target: Arc<ChartFrame>,
    subst: BTreeMap<String, ScalarExpr>,
    differentials: Vec<FormElement<ScalarExpr>>,
}

impl ChartMap {
    /// `images[name]` gives source coordinate `name` in target coordinates;
    /// source coordinates without an entry must also be target coordinates.
    pub fn new(
        source: &Arc<ChartFrame>,
        target: &Arc<ChartFrame>,
        images: &BTreeMap<String, ScalarExpr>,
    ) -> Result<Self, GradedError> {
        let mut subst = BTreeMap::new();
        let mut differentials = Vec::new();
        for c in source.coords() {
            let img = match images.get(c) {
                Some(e) => {
                    subst.insert(c.clone(), e.clone());
                    e.clone()
                }
                None => {
                    target.index_of(c).ok_or_else(|| GradedError::UnknownCoordinate(c.clone()))?;
                    ScalarExpr::var(c)
                }
            };
            let mut d = FormElement::zero(target);
            for k in 0..target.dim() {
                d.accumulate(Multiindex::single(k), img.differentiate(target.coord(k)));
            }
            differentials.push(d);
        }
        Ok(Self { source: source.clone(), target: target.clone(), subst, differentials })
    }

    pub fn source(&self) -> &Arc<ChartFrame> {
        &self.source
    }

    pub fn target(&self) -> &Arc<ChartFrame> {
        &self.target
    }

    pub fn substitution(&self) -> &BTreeMap<String, ScalarExpr> {
        &self.subst
    }

    fn pull_dc(&self, j: Multiindex) -> FormElement<ScalarExpr> {
        let mut acc = FormElement::scalar(&self.target, ScalarExpr::one());
        for i in j.indices() {
            acc = acc.wedge(&self.differentials[i]).expect("same frame");
        }
        acc
    }

    pub fn pull_form(&self, f: &FormElement<ScalarExpr>) -> Result<FormElement<ScalarExpr>, GradedError> {
        if !ChartFrame::same(f.frame(), &self.source) {
            return Err(GradedError::ChartMismatch);
        }
        let mut out = FormElement::zero(&self.target);
        for (j, c) in f.terms() {
            let c = c.substitute_all(&self.subst).simplify();
            for (m, w) in self.pull_dc(*j).terms() {
                out.accumulate(*m, Coeff::mul(w, &c));
            }
        }
        Ok(out)
    }

    pub fn pull_graded(&self, g: &GradedElement<ScalarExpr>) -> Result<GradedElement<ScalarExpr>, GradedError> {
        if !ChartFrame::same(g.frame(), &self.source) {
            return Err(GradedError::ChartMismatch);
        }
        if self.source.p() != self.target.p() || self.source.q() != self.target.q() {
            return Err(GradedError::ChartMismatch);
        }
        let mut out = GradedElement::zero(&self.target);
        for (j, a) in g.terms() {
            let a = a.map(|e| e.substitute_all(&self.subst).simplify());
            for (m, w) in self.pull_dc(*j).terms() {
                out.accumulate(*m, a.scale(w));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprkit::parse;

    fn frame() -> Arc<ChartFrame> {
        ChartFrame::split(&["x", "y"], &[], 1, 1).unwrap()
    }

    fn m(rows: [[&str; 2]; 2]) -> Matrix<ScalarExpr> {
        Matrix::from_rows(rows.iter().map(|r| r.iter().map(|s| parse(s).unwrap().simplify()).collect()).collect()).unwrap()
    }

    #[test]
    fn wedge_signs() {
        let dx = Multiindex::single(0);
        let dy = Multiindex::single(1);
        assert_eq!(wedge_sign(dx, dy), 1);
        assert_eq!(wedge_sign(dy, dx), -1);
        assert_eq!(wedge_sign(dx, dx), 0);
        assert_eq!(wedge_sign(Multiindex::new(&[1, 3]).unwrap(), Multiindex::new(&[0, 2]).unwrap()), -1);
        assert!(matches!(Multiindex::new(&[2, 2]), Err(GradedError::RepeatedIndex(2))));
    }

    #[test]
    fn one_forms_anticommute() {
        let f = frame();
        let dx = GradedElement::from_matrix(&f, Multiindex::single(0), Matrix::<ScalarExpr>::identity(2)).unwrap();
        let dy = GradedElement::from_matrix(&f, Multiindex::single(1), Matrix::identity(2)).unwrap();
        let s = dx.mul(&dy).unwrap().add(&dy.mul(&dx).unwrap()).unwrap();
        assert!(s.is_zero());
        assert!(dx.mul(&dx).unwrap().is_zero());
    }

    #[test]
    fn koszul_sign_on_odd_endomorphisms() {
        // (1⊗σx)(dx⊗1) = −dx⊗σx because σx is odd and dx has degree one.
        let f = frame();
        let sx = m([["0", "1"], ["1", "0"]]);
        let a = GradedElement::from_matrix(&f, Multiindex::EMPTY, sx.clone()).unwrap();
        let dx = GradedElement::from_matrix(&f, Multiindex::single(0), Matrix::identity(2)).unwrap();
        let prod = a.mul(&dx).unwrap();
        assert_eq!(prod.component(Multiindex::single(0)), sx.neg());
        assert_eq!(a.parity(), Parity::Odd);
        assert_eq!(dx.parity(), Parity::Odd);
    }

    #[test]
    fn supertrace_conventions() {
        let f = frame();
        let d = m([["a", "0"], ["0", "d"]]);
        let e = GradedElement::from_matrix(&f, Multiindex::single(0), d).unwrap();
        let s = e.supertrace();
        assert_eq!(s.coefficient(Multiindex::single(0)), parse("a - d").unwrap().simplify());
        // The supercommutator [1⊗σx, dx⊗σx] is traceless.
        let sx = m([["0", "1"], ["1", "0"]]);
        let a = GradedElement::from_matrix(&f, Multiindex::EMPTY, sx.clone()).unwrap();
        let b = GradedElement::from_matrix(&f, Multiindex::single(0), sx).unwrap();
        assert!(super_commutator(&a, &b).unwrap().supertrace().is_zero());
    }

    #[test]
    fn mixed_parity_is_rejected() {
        let f = frame();
        let mixed = m([["1", "1"], ["0", "0"]]);
        let a = GradedElement::from_matrix(&f, Multiindex::EMPTY, mixed).unwrap();
        assert_eq!(a.parity(), Parity::Mixed);
        assert_eq!(super_commutator(&a, &a).unwrap_err(), GradedError::NotHomogeneous);
    }

    #[test]
    fn chart_mismatch() {
        let a = GradedElement::<ScalarExpr>::identity(&frame());
        let g = ChartFrame::split(&["u"], &[], 1, 1).unwrap();
        let b = GradedElement::<ScalarExpr>::identity(&g);
        assert_eq!(a.mul(&b).unwrap_err(), GradedError::ChartMismatch);
    }

    #[test]
    fn exterior_d_squares_to_zero_and_polar_pullback() {
        let f = ChartFrame::split(&[], &["u", "v"], 1, 1).unwrap();
        let form = FormElement::from_terms(
            &f,
            vec![(Multiindex::single(0), parse("u*v^2").unwrap()), (Multiindex::single(1), parse("sin(u)").unwrap())],
        )
        .unwrap();
        assert!(form.exterior_d().exterior_d().is_zero());
        // du∧dv = r dr∧dt under u = r cos t, v = r sin t.
        let polar = ChartFrame::split(&[], &["r", "t"], 1, 1).unwrap();
        let images: BTreeMap<String, ScalarExpr> =
            [("u".to_string(), parse("r*cos(t)").unwrap()), ("v".to_string(), parse("r*sin(t)").unwrap())].into();
        let map = ChartMap::new(&f, &polar, &images).unwrap();
        let area = FormElement::from_terms(&f, vec![(f.top(), ScalarExpr::one())]).unwrap();
        let pulled = map.pull_form(&area).unwrap();
        assert_eq!(pulled.coefficient(polar.top()), ScalarExpr::var("r"));
        assert_eq!(pulled.terms().len(), 1);
    }
}
