//! Deterministic quadrature: Gauss–Legendre, periodic trapezoid, fiber
//! sphere rules, radial rules, base-manifold rules, elliptical contours and
//! Cauchy-circle residues.  All reductions run in a fixed order.

use crate::exprkit::{CompiledExpr, ExprError, ScalarExpr};
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("unsupported fiber dimension {0} (only 1 and 2)")]
    UnsupportedFiberDimension(usize),
    #[error("bad quadrature parameters: {0}")]
    BadParams(String),
    #[error("partition-of-unity weights sum to {sum} at {point:?}")]
    ChartCoverageGap { point: Vec<f64>, sum: f64 },
    #[error("spectral bounds [{0}, {1}] are not positive")]
    NonPositiveSpectrum(f64, f64),
    #[error("evaluation failed: {0}")]
    EvaluationFailure(String),
    #[error("quadrature did not converge: self-convergence estimate {estimate:.3e} exceeds {tolerance:.3e}")]
    NotConverged { estimate: f64, tolerance: f64 },
}

impl From<ExprError> for QuadratureError {
    fn from(e: ExprError) -> Self {
        QuadratureError::EvaluationFailure(e.to_string())
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]` (Newton on the three-term recurrence).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// A tensor-product-compatible rule: `len()` points of dimension `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub level: u32,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(dim: usize, level: u32, nodes: Vec<f64>, weights: Vec<f64>) -> Self {
        assert_eq!(nodes.len(), dim * weights.len());
        Self { dim, level, nodes, weights }
    }

    /// The zero-dimensional rule with a single unit-weight point.
    pub fn point() -> Self {
        Self { dim: 0, level: 0, nodes: vec![], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Gauss–Legendre on `[a, b]`.
    pub fn legendre(a: f64, b: f64, n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let (h, m) = ((b - a) / 2.0, (b + a) / 2.0);
        Self::new(1, 0, x.iter().map(|t| m + h * t).collect(), w.iter().map(|v| v * h).collect())
    }

    /// Composite Gauss–Legendre on `[a, b]` with `segments` panels of `n` nodes.
    pub fn composite_legendre(a: f64, b: f64, segments: usize, n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let h = (b - a) / segments as f64;
        let mut nodes = Vec::with_capacity(segments * n);
        let mut weights = Vec::with_capacity(segments * n);
        for s in 0..segments {
            let lo = a + h * s as f64;
            for (t, v) in x.iter().zip(&w) {
                nodes.push(lo + h * (t + 1.0) / 2.0);
                weights.push(v * h / 2.0);
            }
        }
        Self::new(1, 0, nodes, weights)
    }

    /// Periodic trapezoid on `[0, period)`.
    pub fn trapezoid(period: f64, n: usize) -> Self {
        let h = period / n as f64;
        Self::new(1, 0, (0..n).map(|j| h * j as f64).collect(), vec![h; n])
    }

    /// Tensor product; the first factor varies slowest.
    pub fn tensor(&self, o: &Self) -> Self {
        let mut nodes = Vec::with_capacity(self.len() * o.len() * (self.dim + o.dim));
        let mut weights = Vec::with_capacity(self.len() * o.len());
        for i in 0..self.len() {
            for j in 0..o.len() {
                nodes.extend_from_slice(self.node(i));
                nodes.extend_from_slice(o.node(j));
                weights.push(self.weights[i] * o.weights[j]);
            }
        }
        Self::new(self.dim + o.dim, self.level.max(o.level), nodes, weights)
    }

    pub fn with_level(mut self, level: u32) -> Self {
        self.level = level;
        self
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).fold(0.0, |acc, i| acc + self.weights[i] * f(self.node(i)))
    }

    pub fn integrate_c(&self, f: impl Fn(&[f64]) -> Complex64) -> Complex64 {
        (0..self.len()).fold(Complex64::new(0.0, 0.0), |acc, i| acc + f(self.node(i)) * self.weights[i])
    }
}

/// Unit sphere `S^{m−1}` of the fiber: `S⁰ = {±1}`, `S¹` by angle.
pub fn sphere_rule(fiber_dim: usize, level: u32) -> Result<QuadratureRule, QuadratureError> {
    if level < 1 {
        return Err(QuadratureError::BadParams("sphere rules need level ≥ 1".into()));
    }
    match fiber_dim {
        1 => Ok(QuadratureRule::new(1, level, vec![1.0, -1.0], vec![1.0, 1.0])),
        2 => Ok(QuadratureRule::trapezoid(2.0 * PI, 16 << level).with_level(level)),
        m => Err(QuadratureError::UnsupportedFiberDimension(m)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadialKind {
    /// `[from, ∞)` for integrands with `e^{−ρ²}` decay.
    Gaussian { from: f64 },
    /// `[from, ∞)` for algebraic decay, via `ρ = from/u` (validation only).
    PowerLaw { from: f64 },
    Finite { a: f64, b: f64 },
}

/// Length of the Gaussian panel range beyond its start: `e^{−64}` is far below round-off.
pub const GAUSSIAN_CUTOFF: f64 = 8.0;

pub fn radial_rule(kind: RadialKind, level: u32) -> Result<QuadratureRule, QuadratureError> {
    let rule = match kind {
        RadialKind::Gaussian { from } => {
            if !(from >= 0.0 && from.is_finite()) {
                return Err(QuadratureError::BadParams(format!("gaussian rule start {from}")));
            }
            QuadratureRule::composite_legendre(from, from + GAUSSIAN_CUTOFF, 8, 10 + 4 * level as usize)
        }
        RadialKind::PowerLaw { from } => {
            if !(from > 0.0 && from.is_finite()) {
                return Err(QuadratureError::BadParams(format!("power-law rule needs R > 0, got {from}")));
            }
            let u = QuadratureRule::legendre(0.0, 1.0, 24 << level);
            let nodes = (0..u.len()).map(|i| from / u.node(i)[0]).collect();
            let weights = (0..u.len()).map(|i| u.weight(i) * from / (u.node(i)[0] * u.node(i)[0])).collect();
            QuadratureRule::new(1, level, nodes, weights)
        }
        RadialKind::Finite { a, b } => {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(QuadratureError::BadParams(format!("finite interval [{a}, {b}]")));
            }
            QuadratureRule::composite_legendre(a, b, 1usize.max((b - a).ceil() as usize), 12 + 4 * level as usize)
        }
    };
    Ok(rule.with_level(level))
}

/// One coordinate patch of the base manifold.
#[derive(Clone, Debug, PartialEq)]
pub enum BaseDomain {
    /// `[0, period)` in every coordinate.
    Torus { periods: Vec<f64> },
    /// `(φ, ψ) ∈ (0, π) × [0, 2π)`.
    SphereCoords,
}

impl BaseDomain {
    pub fn dim(&self) -> usize {
        match self {
            BaseDomain::Torus { periods } => periods.len(),
            BaseDomain::SphereCoords => 2,
        }
    }

    /// Coordinate-measure rule (`dx¹⋯dxⁿ`), so top-form coefficients integrate directly.
    pub fn rule(&self, level: u32) -> QuadratureRule {
        match self {
            BaseDomain::Torus { periods } => periods
                .iter()
                .map(|&p| QuadratureRule::trapezoid(p, 8 << level))
                .fold(QuadratureRule::point(), |acc, r| acc.tensor(&r))
                .with_level(level),
            BaseDomain::SphereCoords => QuadratureRule::legendre(0.0, PI, 12 << level)
                .tensor(&QuadratureRule::trapezoid(2.0 * PI, 8 << level))
                .with_level(level),
        }
    }
}

/// A patch together with its partition-of-unity weight.
#[derive(Clone, Debug)]
pub struct BasePatch {
    pub domain: BaseDomain,
    pub weight: ScalarExpr,
}

/// Product rule per patch, weighted by the partition of unity; the weights
/// must sum to one (within 1e−10) at the probe points of the first patch.
pub fn base_rule(patches: &[BasePatch], coords: &[&str], level: u32) -> Result<QuadratureRule, QuadratureError> {
    let first = patches.first().ok_or_else(|| QuadratureError::BadParams("no base patches".into()))?;
    if patches.iter().any(|p| p.domain.dim() != coords.len()) {
        return Err(QuadratureError::BadParams("patch dimension does not match coordinates".into()));
    }
    let weights: Vec<CompiledExpr> =
        patches.iter().map(|p| CompiledExpr::compile(&p.weight, coords)).collect::<Result<_, _>>()?;
    let at = |w: &CompiledExpr, x: &[f64]| {
        let v: Vec<Complex64> = x.iter().map(|&t| Complex64::new(t, 0.0)).collect();
        w.eval(&v).re
    };
    let probes = first.domain.rule(0);
    for i in 0..probes.len() {
        let x = probes.node(i);
        let sum: f64 = weights.iter().map(|w| at(w, x)).sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(QuadratureError::ChartCoverageGap { point: x.to_vec(), sum });
        }
    }
    let mut nodes = Vec::new();
    let mut ws = Vec::new();
    for (patch, w) in patches.iter().zip(&weights) {
        let r = patch.domain.rule(level);
        for i in 0..r.len() {
            let pw = at(w, r.node(i));
            if pw != 0.0 {
                nodes.extend_from_slice(r.node(i));
                ws.push(r.weight(i) * pw);
            }
        }
    }
    Ok(QuadratureRule::new(coords.len(), level, nodes, ws))
}

/// Counterclockwise ellipse in the right half-plane enclosing a spectral interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourRule {
    pub center: f64,
    pub semi_real: f64,
    pub semi_imag: f64,
    pub level: u32,
    /// Points `σ_j` on the contour.
    pub nodes: Vec<Complex64>,
    /// `w_j` with `(1/2πi)∮ f dσ ≈ Σ w_j f(σ_j)`.
    pub weights: Vec<Complex64>,
}

/// Default clearance as a fraction of `s_min`.
pub const DEFAULT_CLEARANCE: f64 = 0.5;

pub fn contour_rule(s_min: f64, s_max: f64, level: u32) -> Result<ContourRule, QuadratureError> {
    contour_rule_with_clearance(s_min, s_max, level, DEFAULT_CLEARANCE)
}

/// `clearance` is a fraction of `s_min` in `[0.25, 1)`.
pub fn contour_rule_with_clearance(
    s_min: f64,
    s_max: f64,
    level: u32,
    clearance: f64,
) -> Result<ContourRule, QuadratureError> {
    if !(s_min > 0.0 && s_max >= s_min && s_max.is_finite()) {
        return Err(QuadratureError::NonPositiveSpectrum(s_min, s_max));
    }
    if !(0.25..1.0).contains(&clearance) {
        return Err(QuadratureError::BadParams(format!("clearance fraction {clearance} outside [0.25, 1)")));
    }
    let delta = clearance * s_min;
    let half = (s_max - s_min) / 2.0;
    let center = (s_min + s_max) / 2.0;
    let (a, b) = (half + delta, (half + delta).min(delta + half / 2.0).max(delta));
    let n = 64usize << level;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for j in 0..n {
        let t = 2.0 * PI * j as f64 / n as f64;
        let (s, c) = t.sin_cos();
        nodes.push(Complex64::new(center + a * c, b * s));
        let dsigma = Complex64::new(-a * s, b * c);
        // dσ·(2π/n)/(2πi) = dσ/(i n)
        weights.push(dsigma / Complex64::new(0.0, n as f64));
    }
    Ok(ContourRule { center, semi_real: a, semi_imag: b, level, nodes, weights })
}

impl ContourRule {
    pub fn encloses(&self, s: f64) -> bool {
        let x = (s - self.center) / self.semi_real;
        x * x < 1.0
    }

    pub fn leftmost(&self) -> f64 {
        self.center - self.semi_real
    }

    pub fn integrate(&self, f: impl Fn(Complex64) -> Complex64) -> Complex64 {
        self.nodes.iter().zip(&self.weights).fold(Complex64::new(0.0, 0.0), |acc, (s, w)| acc + f(*s) * w)
    }
}

/// Number of trapezoid nodes on residue circles.
pub const RESIDUE_NODES: usize = 64;

/// `(1/2πi)∮_{|z−z₀|=r} f(z) dz` by the trapezoid rule.
pub fn numeric_residue<E>(
    f: impl Fn(Complex64) -> Result<Complex64, E>,
    z0: Complex64,
    radius: f64,
) -> Result<Complex64, E> {
    numeric_residue_n(f, z0, radius, RESIDUE_NODES)
}

pub fn numeric_residue_n<E>(
    f: impl Fn(Complex64) -> Result<Complex64, E>,
    z0: Complex64,
    radius: f64,
    n: usize,
) -> Result<Complex64, E> {
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let e = Complex64::from_polar(radius, 2.0 * PI * j as f64 / n as f64);
        acc += f(z0 + e)? * e;
    }
    Ok(acc / n as f64)
}

/// A value with its self-convergence estimate `|v(level) − v(level+1)|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: Complex64,
    pub error: f64,
    pub level: u32,
}

impl Estimate {
    /// Runs `f` at `level` and `level + 1`, returning the finer value.
    pub fn self_converged<E>(level: u32, f: impl Fn(u32) -> Result<Complex64, E>) -> Result<Self, E> {
        let a = f(level)?;
        let b = f(level + 1)?;
        Ok(Self { value: b, error: (a - b).norm(), level: level + 1 })
    }

    pub fn check(&self, rel_tol: f64) -> Result<Self, QuadratureError> {
        let tol = rel_tol * self.value.norm().max(1.0);
        if self.error > tol {
            Err(QuadratureError::NotConverged { estimate: self.error, tolerance: tol })
        } else {
            Ok(*self)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_is_exact_for_polynomials() {
        let r = QuadratureRule::legendre(-1.0, 1.0, 5);
        assert!((r.integrate(|x| x[0].powi(8)) - 2.0 / 9.0).abs() < 1e-15);
        assert!((r.weights().iter().sum::<f64>() - 2.0).abs() < 1e-15);
        let (x, w) = gauss_legendre(64);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn sphere_rules() {
        let s1 = sphere_rule(2, 1).unwrap();
        assert!((s1.integrate(|_| 1.0) - 2.0 * PI).abs() < 1e-14);
        assert!((s1.integrate(|x| x[0].cos().powi(2)) - PI).abs() < 1e-12);
        let s0 = sphere_rule(1, 1).unwrap();
        assert_eq!(s0.integrate(|x| x[0].powi(3) + 2.0 * x[0] + 5.0), 10.0);
        assert!(matches!(sphere_rule(3, 1), Err(QuadratureError::UnsupportedFiberDimension(3))));
        assert!(sphere_rule(2, 0).is_err());
    }

    #[test]
    fn radial_rules() {
        let g = radial_rule(RadialKind::Gaussian { from: 0.0 }, 0).unwrap();
        assert!((g.integrate(|x| (-x[0] * x[0]).exp() * x[0]) - 0.5).abs() < 1e-12);
        let p = radial_rule(RadialKind::PowerLaw { from: 1.0 }, 0).unwrap();
        assert!((p.integrate(|x| x[0].powi(-4)) - 1.0 / 3.0).abs() < 1e-10);
        let f = radial_rule(RadialKind::Finite { a: 0.0, b: 1.0 }, 0).unwrap();
        assert!((f.integrate(|x| x[0] * x[0]) - 1.0 / 3.0).abs() < 1e-14);
        assert!(radial_rule(RadialKind::PowerLaw { from: 0.0 }, 0).is_err());
    }

    #[test]
    fn base_rules_and_coverage() {
        let sphere = base_rule(&[BasePatch { domain: BaseDomain::SphereCoords, weight: ScalarExpr::one() }], &["phi", "psi"], 0)
            .unwrap();
        assert!((sphere.integrate(|x| x[0].sin()) - 4.0 * PI).abs() < 1e-8);
        let torus = BaseDomain::Torus { periods: vec![2.0 * PI, 2.0 * PI] };
        let t = base_rule(&[BasePatch { domain: torus.clone(), weight: ScalarExpr::one() }], &["x1", "x2"], 0).unwrap();
        assert!((t.integrate(|_| 1.0) - 4.0 * PI * PI).abs() < 1e-12);
        // Two overlapping patches with cos²(x1/2) + sin²(x1/2) = 1.
        let c = crate::exprkit::parse("cos(x1/2)^2").unwrap();
        let s = crate::exprkit::parse("sin(x1/2)^2").unwrap();
        let two = base_rule(
            &[BasePatch { domain: torus.clone(), weight: c.clone() }, BasePatch { domain: torus.clone(), weight: s }],
            &["x1", "x2"],
            0,
        )
        .unwrap();
        assert!((two.integrate(|x| x[0].cos().powi(2)) - 2.0 * PI * PI).abs() < 1e-12);
        let gap = base_rule(
            &[BasePatch { domain: torus.clone(), weight: c }, BasePatch { domain: torus, weight: ScalarExpr::ratio(1, 2) }],
            &["x1", "x2"],
            0,
        );
        assert!(matches!(gap, Err(QuadratureError::ChartCoverageGap { .. })));
    }

    #[test]
    fn contour_rules() {
        let c = contour_rule(1.0, 1.0, 0).unwrap();
        assert_eq!(c.center, 1.0);
        assert!(c.semi_real >= 0.25 && c.leftmost() > 0.0);
        let v = c.integrate(|s| 1.0 / (s - 1.0));
        assert!((v - 1.0).norm() < 1e-14);
        let z = Complex64::new(1.5, 0.5);
        let f = |s: Complex64| s.powc(-z) / (s - 1.2).powi(3);
        let wide = contour_rule(0.8, 1.6, 0).unwrap().integrate(f);
        let fine = contour_rule(0.8, 1.6, 1).unwrap().integrate(f);
        let tight = contour_rule_with_clearance(0.8, 1.6, 0, 0.3).unwrap().integrate(f);
        assert!((wide - fine).norm() < 1e-12);
        assert!((wide - tight).norm() < 1e-10);
        assert!(matches!(contour_rule(-1.0, 1.0, 0), Err(QuadratureError::NonPositiveSpectrum(..))));
    }

    #[test]
    fn residues_on_circles() {
        let f = |z: Complex64| Ok::<_, ()>(Complex64::new(5.0, 0.0) / (2.0 * z - 2.0));
        let r = numeric_residue(f, Complex64::new(1.0, 0.0), 0.25).unwrap();
        assert!((r - 2.5).norm() < 1e-12);
    }
}
