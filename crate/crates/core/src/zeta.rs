//! Complex powers `(−∇²_L)^{−z}`, the meromorphic extension of
//! `I(z, η) = ∫_{X_R} π*η ∧ tr_s(−∇²_L)^{−z}`, and residues of `Γ(z)·I(z, η)`.
//!
//! On the polar chart `−F = ρ²(A − M)` with `M = G₁/ρ + G₀/ρ²` nilpotent, so
//! every contribution is `ρ^{−2z+K}` times an entire function of `z`; the
//! radial integral over `[R, ∞)` gives `P_K(z)·R^{K+1−2z}/(2z−K−1)`.

use crate::chern::{chern_current_outside, ChernError, CurrentSetup, QuadOptions};
use crate::exprkit::ScalarExpr;
use crate::fiber::{aggregate_words, words, Dense, FiberError, PolarKernel, WordSums};
use crate::graded::FormElement;
use crate::models::ModelSpec;
use crate::quadrature::{
    contour_rule_with_clearance, numeric_residue, radial_rule, sphere_rule, ContourRule, QuadratureError, RadialKind,
    DEFAULT_CLEARANCE,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

/// Default `Z_max` for residue reports.
pub const DEFAULT_ZMAX: f64 = 20.0;
/// Residues below this magnitude count as vanishing.
pub const RESIDUE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZetaError {
    #[error("no scalar/nilpotent split: {0}")]
    NoScalarSplit(String),
    #[error("complex power evaluated on the zero section")]
    ZeroSectionEvaluation,
    #[error("contour does not enclose the spectrum [{min}, {max}]")]
    SpectrumNotEnclosed { min: f64, max: f64 },
    #[error("contour crosses the branch cut (leftmost point {0})")]
    BranchCutCrossing(f64),
    #[error("principal part is not Hermitian positive: {0}")]
    NonHermitianPrincipal(String),
    #[error("test form must be homogeneous")]
    NonHomogeneousEta,
    #[error("limit estimates disagree: Σ lim = {sum_of_limits}, lim Σ = {limit_of_sums} (tolerance {tolerance:.3e})")]
    NonConvergentExtrapolation { sum_of_limits: f64, limit_of_sums: f64, tolerance: f64 },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Chern(#[from] ChernError),
}

impl From<FiberError> for ZetaError {
    fn from(e: FiberError) -> Self {
        match e {
            FiberError::NoScalarSplit(s) => ZetaError::NoScalarSplit(s),
            other => ZetaError::Chern(other.into()),
        }
    }
}

// ---------------------------------------------------------------------------
// Special functions

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `Γ(z)` by the Lanczos approximation, with reflection for `Re z < ½`.
pub fn gamma(z: C) -> C {
    if z.re < 0.5 {
        return C::new(PI, 0.0) / ((C::new(PI, 0.0) * z).sin() * gamma(ONE - z));
    }
    let z = z - 1.0;
    let mut x = C::new(LANCZOS[0], 0.0);
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        x += *c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powc(z + 0.5) * (-t).exp() * x
}

/// Rising factorial `(z)_k = z(z+1)⋯(z+k−1)`.
pub fn pochhammer(z: C, k: usize) -> C {
    (0..k).fold(ONE, |acc, i| acc * (z + i as f64))
}

/// Principal-branch `σ^{−z}`.
fn cpow_neg(sigma: C, z: C) -> C {
    (-z * sigma.ln()).exp()
}

/// Returns `(∫₀^∞ e^{−σt} t^{z−1} dt by quadrature, σ^{−z}Γ(z))`.
///
/// The quadrature substitutes `t = eˢ` and applies the trapezoid rule to the
/// doubly-exponentially decaying `exp(zs − σeˢ)`.
pub fn mellin_check(sigma: C, z: C) -> Result<(C, C), ZetaError> {
    if !(sigma.re > 0.0) || !(z.re > 0.0) {
        return Err(ZetaError::DomainError(format!("need Re σ > 0 and Re z > 0, got σ = {sigma}, z = {z}")));
    }
    let lo = -(40.0 + z.norm().ln().max(0.0)) / z.re;
    let hi = (40.0 / sigma.re).ln().max(1.0) + 1.0;
    let h = 0.02;
    let n = ((hi - lo) / h).ceil() as usize;
    let mut acc = ZERO;
    for i in 0..=n {
        let s = lo + i as f64 * h;
        acc += (z * s - sigma * s.exp()).exp();
    }
    Ok((acc * h, cpow_neg(sigma, z) * gamma(z)))
}

// ---------------------------------------------------------------------------
// Pointwise complex powers

/// `(−F)^{−z} = (−s)^{−z} Σ_k (z)_k/k! (N/(−s))ᵏ` for `F = s·I + N`, `N` nilpotent.
pub fn complex_power_scalar(curv: &Dense, z: C, kmax: usize) -> Result<Dense, ZetaError> {
    let s = curv.scalar_of_degree_zero(1e-12).ok_or_else(|| ZetaError::NoScalarSplit("degree-zero part".into()))?;
    let ms = -s;
    if ms.norm() == 0.0 {
        return Err(ZetaError::ZeroSectionEvaluation);
    }
    if ms.re <= 0.0 && ms.im == 0.0 {
        return Err(ZetaError::DomainError(format!("scalar part {s} has no principal power")));
    }
    let n = curv.positive_part().scaled(ONE / ms);
    let mut out = Dense::identity(curv.rank(), curv.grading());
    let mut term = out.clone();
    for k in 1..=kmax {
        term = term.mul(&n, u32::MAX).scaled(z + (k - 1) as f64).scaled(C::new(1.0 / k as f64, 0.0));
        if term.is_zero() {
            break;
        }
        out.add_scaled(&term, ONE);
    }
    Ok(out.scaled(cpow_neg(ms, z)))
}

/// `(−F)^m` for integer `m ≥ 0` by repeated products.
pub fn integer_power(curv: &Dense, m: usize) -> Dense {
    let neg = curv.scaled(-ONE);
    (0..m).fold(Dense::identity(curv.rank(), curv.grading()), |acc, _| acc.mul(&neg, u32::MAX))
}

fn to_nalgebra(r: usize, m: &[C]) -> DMatrix<C> {
    DMatrix::from_fn(r, r, |i, j| m[i * r + j])
}

fn from_nalgebra(m: &DMatrix<C>) -> Vec<C> {
    let r = m.nrows();
    (0..r * r).map(|k| m[(k / r, k % r)]).collect()
}

/// Eigenvalue bounds of a Hermitian positive semidefinite row-major matrix.
pub fn hermitian_bounds(r: usize, a: &[C]) -> Result<(f64, f64), ZetaError> {
    let m = to_nalgebra(r, a);
    let dev = (&m - m.adjoint()).iter().fold(0.0f64, |acc, v| acc.max(v.norm()));
    if dev > 1e-10 * (1.0 + m.iter().fold(0.0f64, |acc, v| acc.max(v.norm()))) {
        return Err(ZetaError::NonHermitianPrincipal(format!("anti-Hermitian deviation {dev:.3e}")));
    }
    let ev = nalgebra::SymmetricEigen::new(m).eigenvalues;
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

fn check_contour(rule: &ContourRule, lo: f64, hi: f64) -> Result<(), ZetaError> {
    if rule.leftmost() <= 0.0 {
        return Err(ZetaError::BranchCutCrossing(rule.leftmost()));
    }
    if !(rule.encloses(lo) && rule.encloses(hi)) {
        return Err(ZetaError::SpectrumNotEnclosed { min: lo, max: hi });
    }
    Ok(())
}

/// `(σ − A)^{−1}` as a degree-zero element.
fn resolvent(r: usize, p: usize, a: &[C], sigma: C) -> Result<Dense, ZetaError> {
    let mut m = to_nalgebra(r, a).map(|v| -v);
    for i in 0..r {
        m[(i, i)] += sigma;
    }
    let inv = m.try_inverse().ok_or(ZetaError::SpectrumNotEnclosed { min: sigma.re, max: sigma.re })?;
    Ok(Dense::from_matrix(r, p, from_nalgebra(&inv)))
}

/// `(−F)^{−z}` at `ρ` from the radial pieces, by contour quadrature of
/// `σ^{−z}(σ + F)^{−1}` with `(σ + F)^{−1} = Σ_k (−1)ᵏ R(MR)ᵏ`, `R = (σ − ρ²A)^{−1}`,
/// `M = ρG₁ + G₀`.
pub fn resolvent_contour(pieces: &[Dense; 3], rho: f64, z: C, rule: &ContourRule, kmax: usize) -> Result<Dense, ZetaError> {
    if rho <= 0.0 {
        return Err(ZetaError::ZeroSectionEvaluation);
    }
    let r = pieces[2].rank();
    let p = pieces[2].grading();
    if pieces[2].masks().any(|m| m != 0) {
        return Err(ZetaError::NoScalarSplit("ρ² part carries forms".into()));
    }
    let a: Vec<C> =
        pieces[2].component(0).map_or_else(|| vec![ZERO; r * r], |m| m.iter().map(|v| -v * rho * rho).collect());
    let (lo, hi) = hermitian_bounds(r, &a)?;
    check_contour(rule, lo, hi)?;
    let mut m = pieces[0].clone();
    m.add_scaled(&pieces[1], C::new(rho, 0.0));
    let mut out = Dense::zero(r, p);
    for (sigma, w) in rule.nodes.iter().zip(&rule.weights) {
        let res = resolvent(r, p, &a, *sigma)?;
        let mr = m.mul(&res, u32::MAX);
        let mut term = res.clone();
        let mut sum = res.clone();
        for _ in 1..=kmax {
            term = term.mul(&mr, u32::MAX).scaled(-ONE);
            if term.is_zero() {
                break;
            }
            sum.add_scaled(&term, ONE);
        }
        out.add_scaled(&sum, w * cpow_neg(*sigma, z));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Zeta extensions

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZetaPath {
    /// Binomial series around the scalar principal part.
    Scalar,
    /// Resolvent expansion integrated over an ellipse enclosing the spectrum.
    Contour,
}

/// An entire coefficient function `P_K(z)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Coefficient {
    /// `Σ_groups Σ_k (z)_k/k!·A_k·c^{−z−k}`.
    Scalar { groups: Vec<(f64, Vec<(usize, C)>)> },
    /// `Σ_j σ_j^{−z}·v_j`.
    Contour { nodes: Vec<C>, values: Vec<C> },
    /// `Σ_i a_i zⁱ`.
    Polynomial(Vec<C>),
}

impl Coefficient {
    pub fn eval(&self, z: C) -> C {
        match self {
            Coefficient::Scalar { groups } => groups
                .iter()
                .map(|(c, ks)| {
                    ks.iter()
                        .map(|(k, a)| {
                            let fact: f64 = (1..=*k).map(|i| i as f64).product();
                            pochhammer(z, *k) / fact * a * cpow_neg(C::new(*c, 0.0), z + *k as f64)
                        })
                        .sum::<C>()
                })
                .sum(),
            Coefficient::Contour { nodes, values } => nodes.iter().zip(values).map(|(s, v)| cpow_neg(*s, z) * v).sum(),
            Coefficient::Polynomial(a) => a.iter().rev().fold(ZERO, |acc, c| acc * z + c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZetaTerm {
    /// Total radial exponent `K` of `ρ^{−2z+K}`.
    pub k_exp: i64,
    pub coef: Coefficient,
}

/// `I(z) = Σ_K P_K(z)·R^{K+1−2z}/(2z−K−1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZetaExtension {
    pub terms: Vec<ZetaTerm>,
    pub path: Option<ZetaPath>,
    /// Degree of the test form, when built from a model.
    pub kappa: Option<usize>,
}

impl ZetaExtension {
    pub fn eval(&self, z: C, r: f64) -> C {
        self.terms
            .iter()
            .map(|t| {
                let e = t.k_exp as f64 + 1.0;
                t.coef.eval(z) * (C::new(r.ln(), 0.0) * (e - 2.0 * z)).exp() / (2.0 * z - e)
            })
            .sum()
    }

    /// `P_K(z)`, zero when no term has exponent `K`.
    pub fn coefficient(&self, k_exp: i64, z: C) -> C {
        self.terms.iter().filter(|t| t.k_exp == k_exp).map(|t| t.coef.eval(z)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// The scalar kernel `P(z) = z(z+1)(z+2)` at `K = −5`, for which
    /// `Γ(z)I(z) = ½Γ(z+2)R^{−2(z+2)}` and the residues sum to `½e^{−R²}`.
    /// `literal` negates the kernel to `(−z)(z+1)(z+2)`.
    pub fn toy_gauss(literal: bool) -> Self {
        let s = if literal { -1.0 } else { 1.0 };
        let coefs = [0.0, 2.0, 3.0, 1.0].iter().map(|c| C::new(s * c, 0.0)).collect();
        Self { terms: vec![ZetaTerm { k_exp: -5, coef: Coefficient::Polynomial(coefs) }], path: None, kappa: Some(0) }
    }
}

/// Levels for extension building.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZetaOptions {
    /// Base refinement level.
    pub base_level: u32,
    /// Sphere refinement level.
    pub sphere_level: u32,
    /// Contour refinement level (`64·2^level` nodes).
    pub contour_level: u32,
    /// Contour clearance as a fraction of the smallest eigenvalue.
    pub clearance: f64,
}

impl Default for ZetaOptions {
    fn default() -> Self {
        Self { base_level: 1, sphere_level: 1, contour_level: 0, clearance: DEFAULT_CLEARANCE }
    }
}

fn scalar_terms(sums: &WordSums) -> Vec<ZetaTerm> {
    let mut by_k: BTreeMap<i64, Vec<(f64, Vec<(usize, C)>)>> = BTreeMap::new();
    for (c, coef) in &sums.groups {
        let mut local: BTreeMap<i64, Vec<(usize, C)>> = BTreeMap::new();
        for (k, row) in coef.iter().enumerate().skip(1) {
            for (l, a) in row.iter().enumerate() {
                if *a != ZERO {
                    local.entry(l as i64 - 2 * k as i64).or_default().push((k, *a));
                }
            }
        }
        for (kk, ks) in local {
            by_k.entry(kk).or_default().push((*c, ks));
        }
    }
    by_k.into_iter().map(|(k_exp, groups)| ZetaTerm { k_exp, coef: Coefficient::Scalar { groups } }).collect()
}

/// Builds the extension of `I(z, η)` on `model`.
pub fn build_zeta_extension(
    model: &ModelSpec,
    eta: &FormElement<ScalarExpr>,
    path: ZetaPath,
    opts: ZetaOptions,
) -> Result<ZetaExtension, ZetaError> {
    let kappa = eta.degree();
    if kappa.is_none() && !eta.is_zero() {
        return Err(ZetaError::NonHomogeneousEta);
    }
    let setup = CurrentSetup::new(model, eta)?;
    let base = setup.model().base_rule(opts.base_level).map_err(|e| ZetaError::DomainError(e.to_string()))?;
    let nodes = setup.kernel.nodes(&base, &sphere_rule(setup.kernel.fiber_dim(), opts.sphere_level)?);
    let (kernel, eta_f) = (&setup.kernel, &setup.eta);
    if eta_f.is_zero() {
        return Ok(ZetaExtension { terms: vec![], path: Some(path), kappa });
    }
    let terms = match path {
        ZetaPath::Scalar => scalar_terms(&aggregate_words(kernel, eta_f, &nodes)?),
        ZetaPath::Contour => contour_terms(kernel, eta_f, &nodes, opts)?,
    };
    Ok(ZetaExtension { terms, path: Some(path), kappa })
}

fn contour_terms(
    kernel: &PolarKernel,
    eta: &crate::fiber::EtaFunctional,
    nodes: &[crate::fiber::SpatialNode],
    opts: ZetaOptions,
) -> Result<Vec<ZetaTerm>, ZetaError> {
    let (r, p) = (kernel.rank(), kernel.p());
    // Spectral bounds of A over all nodes.
    let bounds: Vec<Result<(f64, f64), ZetaError>> = nodes
        .par_iter()
        .map(|n| {
            let pieces = kernel.pieces(&n.vals);
            hermitian_bounds(r, &kernel.principal(&pieces)?)
        })
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for b in bounds {
        let (a, c) = b?;
        lo = lo.min(a);
        hi = hi.max(c);
    }
    if !(lo > 0.0) {
        return Err(ZetaError::NonHermitianPrincipal(format!("smallest eigenvalue {lo} is not positive")));
    }
    let rule = contour_rule_with_clearance(lo, hi, opts.contour_level, opts.clearance)?;
    check_contour(&rule, lo, hi)?;
    let nj = rule.nodes.len();
    let kmax = kernel.kmax();
    let mut acc: BTreeMap<i64, Vec<C>> = BTreeMap::new();
    for chunk in nodes.chunks(256) {
        let parts: Vec<Result<BTreeMap<i64, Vec<C>>, ZetaError>> = chunk
            .par_iter()
            .map(|node| {
                let pieces = kernel.pieces(&node.vals);
                let a = kernel.principal(&pieces)?;
                let x = eta.coefficients(&node.vals[..kernel.base_dim()]);
                let mut local: BTreeMap<i64, Vec<C>> = BTreeMap::new();
                for (j, (sigma, w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
                    let res = resolvent(r, p, &a, *sigma)?;
                    let ws = words(&pieces[0], &pieces[1], Some(&res), kmax, eta.allowed);
                    for (k, row) in ws.iter().enumerate().skip(1) {
                        let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
                        for (l, wd) in row.iter().enumerate() {
                            if wd.is_zero() {
                                continue;
                            }
                            let v = eta.apply(&x, &res.mul(wd, eta.allowed));
                            if v != ZERO {
                                local.entry(l as i64 - 2 * k as i64).or_insert_with(|| vec![ZERO; nj])[j] +=
                                    v * w * sign * node.weight;
                            }
                        }
                    }
                }
                Ok(local)
            })
            .collect();
        for part in parts {
            for (k, vals) in part? {
                let slot = acc.entry(k).or_insert_with(|| vec![ZERO; nj]);
                slot.iter_mut().zip(vals).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(k_exp, values)| ZetaTerm { k_exp, coef: Coefficient::Contour { nodes: rule.nodes.clone(), values } })
        .collect())
}

/// Direct quadrature of `∫_{X_R} π*η ∧ tr_s(−F)^{−z}` at several `z` (valid for
/// large `Re z`), evaluating the full curvature pointwise and integrating `ρ`
/// with a power-law rule.
pub fn direct_quadrature(
    model: &ModelSpec,
    eta: &FormElement<ScalarExpr>,
    r: f64,
    zs: &[C],
    base_level: u32,
    radial_level: u32,
) -> Result<Vec<C>, ZetaError> {
    let setup = CurrentSetup::new(model, eta)?;
    let kernel = &setup.kernel;
    let base = model.base_rule(base_level).map_err(|e| ZetaError::DomainError(e.to_string()))?;
    let nodes = kernel.nodes(&base, &sphere_rule(kernel.fiber_dim(), base_level.max(1))?);
    let radial = radial_rule(RadialKind::PowerLaw { from: r }, radial_level)?;
    let kmax = kernel.kmax();
    let allowed = setup.eta.allowed;
    let mut out = vec![ZERO; zs.len()];
    for chunk in nodes.chunks(512) {
        let parts: Vec<Result<Vec<C>, ZetaError>> = chunk
            .par_iter()
            .map(|node| {
                let x = setup.eta.coefficients(&node.vals[..kernel.base_dim()]);
                let mut acc = vec![ZERO; zs.len()];
                for i in 0..radial.len() {
                    let rho = radial.node(i)[0];
                    let f = kernel.curvature_at(&node.vals, rho);
                    let s = f.scalar_of_degree_zero(1e-12).ok_or_else(|| ZetaError::NoScalarSplit("curvature".into()))?;
                    let ms = -s;
                    let n = f.positive_part().scaled(ONE / ms);
                    // Φ(Nᵏ/(−s)ᵏ) once, reused for every z.
                    let mut phis = vec![eta_apply(&setup, &x, &Dense::identity(f.rank(), f.grading()))];
                    let mut pw = Dense::identity(f.rank(), f.grading());
                    for _ in 1..=kmax {
                        pw = pw.mul(&n, allowed);
                        phis.push(eta_apply(&setup, &x, &pw));
                    }
                    for (zi, z) in zs.iter().enumerate() {
                        let mut sum = ZERO;
                        let mut coef = ONE;
                        for (k, ph) in phis.iter().enumerate() {
                            if k > 0 {
                                coef = coef * (z + (k - 1) as f64) / k as f64;
                            }
                            sum += coef * ph;
                        }
                        acc[zi] += sum * cpow_neg(ms, *z) * radial.weight(i) * node.weight;
                    }
                }
                Ok(acc)
            })
            .collect();
        for p in parts {
            out.iter_mut().zip(p?).for_each(|(a, b)| *a += b);
        }
    }
    Ok(out)
}

fn eta_apply(setup: &CurrentSetup, x: &[C], d: &Dense) -> C {
    setup.eta.apply(x, d)
}

/// Fits `log |I(z, R)| = a + s·log R` over `radii`: for a single exponent `K`,
/// `s = K + 1 − 2z` and the pole sits at `(K+1)/2 = (s + 2z)/2`.
/// Returns `(location, fit R²)`, or `None` when `I` vanishes.
pub fn pole_location_fit(values: &[(f64, C)], z: f64) -> Option<(f64, f64)> {
    if values.iter().any(|(_, v)| v.norm() < 1e-300) {
        return None;
    }
    let pts: Vec<(f64, f64)> = values.iter().map(|(r, v)| (r.ln(), v.norm().ln())).collect();
    let (_, s, r2) = crate::chern::linear_fit(&pts);
    Some(((s + 2.0 * z) / 2.0, r2))
}

// ---------------------------------------------------------------------------
// Pole support

/// Engine-derived and printed pole locations for degree-`κ` test forms.
#[derive(Clone, Debug, PartialEq)]
pub struct PoleSupport {
    pub kappa: usize,
    pub n: usize,
    pub m: usize,
    /// `(κ − n − m)/2` when `n − κ` is even, else empty support.
    pub engine: Option<f64>,
    /// The printed location `(κ − 2n)/2`, nonzero only for even `κ`.
    pub printed: Option<f64>,
    /// Set when the two disagree.
    pub discrepancy: bool,
}

/// The single contributing term carries `ρ^{m−1}dρ dΞ` and `k = 1 + (m−1) + (n−κ)/2`
/// words, `l = m − 1` of them `G₁`, so `K = l − 2k = κ − n − m − 1`.
pub fn predicted_pole_support(kappa: usize, n: usize, m: usize) -> PoleSupport {
    let engine = (kappa <= n && (n - kappa) % 2 == 0).then(|| (kappa as f64 - n as f64 - m as f64) / 2.0);
    let printed = (kappa % 2 == 0).then(|| (kappa as f64 - 2.0 * n as f64) / 2.0);
    PoleSupport { kappa, n, m, discrepancy: engine != printed, engine, printed }
}

// ---------------------------------------------------------------------------
// Residues

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Gamma,
    Zeta,
    Double,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Gamma => "gamma",
            Provenance::Zeta => "zeta",
            Provenance::Double => "double",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidueEntry {
    pub z0: C,
    pub residue: C,
    pub provenance: Provenance,
    /// `|Res(r) − Res(r/2)|` for the circle radius `r`.
    pub stability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidueReport {
    pub r: f64,
    pub zmax: f64,
    pub radius: f64,
    pub residues: Vec<ResidueEntry>,
    pub residue_sum: C,
    /// Bound on the residues with `Re z₀ < −Z_max`.
    pub tail_bound: f64,
    /// Candidate pairs closer than `1e−9`, merged (possible double poles).
    pub collisions: Vec<C>,
}

impl ResidueReport {
    /// Locations whose residue exceeds [`RESIDUE_FLOOR`].
    pub fn support(&self) -> Vec<C> {
        self.residues.iter().filter(|e| e.residue.norm() > RESIDUE_FLOOR).map(|e| e.z0).collect()
    }

    pub fn max_instability(&self) -> f64 {
        self.residues.iter().map(|e| e.stability / e.residue.norm().max(1.0)).fold(0.0, f64::max)
    }
}

fn candidates(ext: &ZetaExtension, lo: f64) -> (Vec<(C, Provenance)>, Vec<C>) {
    let mut out: Vec<(C, Provenance)> = Vec::new();
    let mut collisions = Vec::new();
    let mut m = 0.0;
    while -m >= lo {
        out.push((C::new(-m, 0.0), Provenance::Gamma));
        m += 1.0;
    }
    let mut ks: Vec<i64> = ext.terms.iter().map(|t| t.k_exp).collect();
    ks.dedup();
    for k in ks {
        let z0 = C::new((k as f64 + 1.0) / 2.0, 0.0);
        if z0.re < lo {
            continue;
        }
        match out.iter_mut().find(|(c, _)| (c - z0).norm() < 1e-9) {
            Some(slot) => {
                if slot.1 == Provenance::Gamma {
                    slot.1 = Provenance::Double;
                    collisions.push(z0);
                }
            }
            None => out.push((z0, Provenance::Zeta)),
        }
    }
    out.sort_by(|a, b| b.0.re.partial_cmp(&a.0.re).expect("finite"));
    (out, collisions)
}

fn circle_radius(cands: &[(C, Provenance)]) -> f64 {
    let close = cands.iter().enumerate().any(|(i, a)| cands[i + 1..].iter().any(|b| (a.0 - b.0).norm() < 0.5));
    if close {
        0.1
    } else {
        0.25
    }
}

/// Residues of `Γ(z)·I(z)` at all candidates with `Re z₀ ≥ −Z_max`.
pub fn residue_report(ext: &ZetaExtension, r: f64, zmax: f64) -> Result<ResidueReport, ZetaError> {
    if !(r > 0.0) || !(zmax >= 1.0) {
        return Err(ZetaError::DomainError(format!("need R > 0 and Z_max ≥ 1, got R = {r}, Z_max = {zmax}")));
    }
    let f = |z: C| -> Result<C, ZetaError> { Ok(gamma(z) * ext.eval(z, r)) };
    let (cands, collisions) = candidates(ext, -zmax);
    let radius = circle_radius(&cands);
    let mut residues = Vec::with_capacity(cands.len());
    for (z0, provenance) in cands {
        let a = numeric_residue(f, z0, radius)?;
        let b = numeric_residue(f, z0, radius / 2.0)?;
        residues.push(ResidueEntry { z0, residue: a, provenance, stability: (a - b).norm() });
    }
    let residue_sum = residues.iter().map(|e| e.residue).sum();
    // Tail: candidates in (−Z_max − 40, −Z_max) summed in magnitude, plus a
    // geometric bound on the rest from the last ratio.
    let (tail_cands, _) = candidates(ext, -zmax - 40.0);
    let mut mags = Vec::new();
    for (z0, _) in tail_cands.iter().filter(|(z, _)| z.re < -zmax) {
        mags.push(numeric_residue(f, *z0, radius)?.norm());
    }
    let mut tail_bound: f64 = mags.iter().sum();
    if let [.., a, b] = mags.as_slice() {
        if *a > 0.0 && b < a {
            let q = b / a;
            tail_bound += b * q / (1.0 - q);
        } else if *b > 0.0 {
            tail_bound = f64::INFINITY;
        }
    }
    Ok(ResidueReport { r, zmax, radius, residues, residue_sum, tail_bound, collisions })
}

/// `R`-independent residues: for each `K`, the residue at `(K+1)/2` of
/// `Γ(z)P_K(z)/(2z−K−1)`; these are the only ones surviving `R → 0`.
/// Returns `(location, residue, has_double_pole)`.
pub fn limit_residues(ext: &ZetaExtension) -> Result<Vec<(C, C, bool)>, ZetaError> {
    let mut by_loc: Vec<(C, C, bool)> = Vec::new();
    let mut ks: Vec<i64> = ext.terms.iter().map(|t| t.k_exp).collect();
    ks.sort();
    ks.dedup();
    for k in ks {
        let e = k as f64 + 1.0;
        let z0 = C::new(e / 2.0, 0.0);
        let g = |z: C| -> Result<C, ZetaError> { Ok(gamma(z) * ext.coefficient(k, z) / (2.0 * z - e)) };
        let res = numeric_residue(g, z0, 0.25)?;
        let a2 = numeric_residue(|z: C| g(z).map(|v| v * (z - z0)), z0, 0.25)?;
        let double = a2.norm() > RESIDUE_FLOOR * (1.0 + res.norm());
        match by_loc.iter_mut().find(|(z, _, _)| (z - z0).norm() < 1e-9) {
            Some(slot) => {
                slot.1 += res;
                slot.2 |= double;
            }
            None => by_loc.push((z0, res, double)),
        }
    }
    Ok(by_loc)
}

/// Neville extrapolation of `(x_i, y_i)` to `x = 0`, with the difference to
/// the extrapolant omitting the largest `x` as error estimate.
pub fn extrapolate_to_zero(points: &[(f64, C)]) -> (C, f64) {
    let neville = |pts: &[(f64, C)]| -> C {
        let mut p: Vec<C> = pts.iter().map(|q| q.1).collect();
        let n = pts.len();
        for lvl in 1..n {
            for i in 0..n - lvl {
                let (xi, xj) = (pts[i].0, pts[i + lvl].0);
                p[i] = (p[i + 1] * xi - p[i] * xj) / (xi - xj);
            }
        }
        p[0]
    };
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite"));
    let full = neville(&pts);
    if pts.len() < 2 {
        return (full, f64::INFINITY);
    }
    let reduced = neville(&pts[1..]);
    (full, (full - reduced).norm())
}

/// Per-`R` data of the residue reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteR {
    pub r: f64,
    pub lhs: Option<C>,
    pub residue_sum: C,
    pub tail_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LimitReport {
    pub per_r: Vec<FiniteR>,
    /// `Σ lim_{R→0} Res`.
    pub sum_of_limits: C,
    /// `lim_{R→0} Σ Res` by Richardson extrapolation in `R²`.
    pub limit_of_sums: C,
    pub extrapolation_error: f64,
    /// Locations with `R`-independent residues.
    pub surviving: Vec<(C, C)>,
}

impl LimitReport {
    /// `max_R |LHS(R) − ΣRes(R)| / max(1, |LHS(R)|)`.
    pub fn max_finite_r_defect(&self) -> f64 {
        self.per_r
            .iter()
            .filter_map(|f| f.lhs.map(|l| (l - f.residue_sum).norm() / l.norm().max(1.0)))
            .fold(0.0, f64::max)
    }
}

/// Residue sums along a decreasing `R` sequence and both limit orderings.
pub fn residue_limits(ext: &ZetaExtension, radii: &[f64], zmax: f64, tol: f64) -> Result<LimitReport, ZetaError> {
    if radii.is_empty() {
        return Err(ZetaError::DomainError("empty R sequence".into()));
    }
    let mut per_r = Vec::new();
    for &r in radii {
        let rep = residue_report(ext, r, zmax)?;
        per_r.push(FiniteR { r, lhs: None, residue_sum: rep.residue_sum, tail_bound: rep.tail_bound });
    }
    let rmin = radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut pts: Vec<(f64, C)> = per_r.iter().map(|f| (f.r * f.r, f.residue_sum)).collect();
    for j in 1..=2 {
        let r = rmin / f64::powi(2.0, j);
        pts.push((r * r, residue_report(ext, r, zmax)?.residue_sum));
    }
    let (limit_of_sums, extrapolation_error) = extrapolate_to_zero(&pts);
    let lims = limit_residues(ext)?;
    if let Some((z, _, _)) = lims.iter().find(|(_, res, d)| *d && res.norm() > RESIDUE_FLOOR) {
        return Err(ZetaError::DomainError(format!("double pole at {z}: the R → 0 limit diverges logarithmically")));
    }
    let sum_of_limits: C = lims.iter().map(|l| l.1).sum();
    let surviving = lims.iter().filter(|l| l.1.norm() > RESIDUE_FLOOR).map(|l| (l.0, l.1)).collect();
    let tolerance = 10.0 * tol.max(extrapolation_error) * sum_of_limits.norm().max(1.0);
    if (sum_of_limits - limit_of_sums).norm() > tolerance {
        return Err(ZetaError::NonConvergentExtrapolation {
            sum_of_limits: sum_of_limits.re,
            limit_of_sums: limit_of_sums.re,
            tolerance,
        });
    }
    Ok(LimitReport { per_r, sum_of_limits, limit_of_sums, extrapolation_error, surviving })
}

/// [`residue_limits`] on a model, with `LHS(R) = ∫_{X_R} π*η ∧ tr_s exp ∇²_L`
/// from the chern pipeline for comparison.
pub fn residue_sum_limit(
    model: &ModelSpec,
    eta: &FormElement<ScalarExpr>,
    radii: &[f64],
    zopts: ZetaOptions,
    qopts: QuadOptions,
    tol: f64,
) -> Result<(ZetaExtension, LimitReport), ZetaError> {
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ZetaError::DomainError("R sequence must be decreasing".into()));
    }
    let ext = match build_zeta_extension(model, eta, ZetaPath::Scalar, zopts) {
        Err(ZetaError::NoScalarSplit(_)) => build_zeta_extension(model, eta, ZetaPath::Contour, zopts)?,
        other => other?,
    };
    let mut rep = residue_limits(&ext, radii, DEFAULT_ZMAX, tol)?;
    let lhs = chern_current_outside(model, eta, radii, qopts)?;
    for (f, l) in rep.per_r.iter_mut().zip(lhs) {
        f.lhs = Some(l.value);
    }
    Ok((ext, rep))
}

/// `(Re z, log |I(z)|)` along the real axis.
pub fn rez_decay_samples(ext: &ZetaExtension, r: f64, re_values: &[f64]) -> Vec<(f64, f64)> {
    re_values.iter().map(|&x| (x, ext.eval(C::new(x, 0.0), r).norm().ln())).collect()
}

/// Fits `|I| ≤ K e^{−K′ Re z}`: returns `(K, K′)` with `K′` from a least-squares
/// slope and `K` the smallest constant making the bound hold at every sample.
pub fn exponential_bound(samples: &[(f64, f64)]) -> (f64, f64) {
    let (_, b, _) = crate::chern::linear_fit(samples);
    let kp = -b;
    let k = samples.iter().map(|(x, y)| y + kp * x).fold(f64::NEG_INFINITY, f64::max).exp();
    (k, kp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_values() {
        assert!((gamma(C::new(5.0, 0.0)) - 24.0).norm() < 1e-11);
        assert!((gamma(C::new(0.5, 0.0)) - PI.sqrt()).norm() < 1e-13);
        assert!((gamma(C::new(-0.5, 0.0)) + 2.0 * PI.sqrt()).norm() < 1e-12);
        let z = C::new(0.3, 1.7);
        assert!((gamma(z + 1.0) - z * gamma(z)).norm() < 1e-13 * gamma(z + 1.0).norm().max(1.0));
        assert!((numeric_residue(|z| Ok::<_, ZetaError>(gamma(z)), ZERO, 0.25).unwrap() - 1.0).norm() < 1e-12);
        assert!((numeric_residue(|z| Ok::<_, ZetaError>(gamma(z)), C::new(-1.0, 0.0), 0.25).unwrap() + 1.0).norm() < 1e-12);
    }

    #[test]
    fn mellin_basic() {
        let (q, e) = mellin_check(ONE, ONE).unwrap();
        assert!((q - 1.0).norm() < 1e-12 && (e - 1.0).norm() < 1e-12);
        let (q, e) = mellin_check(C::new(2.0, 0.0), C::new(3.0, 0.0)).unwrap();
        assert!((q - 0.25).norm() < 1e-12 && (e - 0.25).norm() < 1e-12);
        assert!(mellin_check(C::new(-1.0, 0.0), ONE).is_err());
    }

    #[test]
    fn toy_gauss_residues() {
        for r in [0.1, 0.5, 1.0] {
            let rep = residue_report(&ZetaExtension::toy_gauss(false), r, DEFAULT_ZMAX).unwrap();
            let want = 0.5 * (-r * r).exp();
            let err = (rep.residue_sum - want).norm();
            assert!(err <= rep.tail_bound + 1e-10, "{r}: {err} vs tail {}", rep.tail_bound);
            assert!(rep.tail_bound < 2e-8);
            assert!(rep.max_instability() < 1e-8);
        }
        let lit = residue_report(&ZetaExtension::toy_gauss(true), 0.5, DEFAULT_ZMAX).unwrap();
        assert!((lit.residue_sum + 0.5 * (-0.25f64).exp()).norm() < 1e-8);
        let lim = residue_limits(&ZetaExtension::toy_gauss(false), &[1.0, 0.5, 0.1], DEFAULT_ZMAX, 1e-8).unwrap();
        assert!((lim.sum_of_limits - 0.5).norm() < 1e-10);
        assert!((lim.limit_of_sums - 0.5).norm() < 1e-8, "{lim:?}");
    }

    #[test]
    fn pole_support_prediction() {
        let p = predicted_pole_support(0, 2, 2);
        assert_eq!(p.engine, Some(-2.0));
        assert!(!p.discrepancy);
        assert_eq!(predicted_pole_support(1, 2, 2).engine, None);
        let odd = predicted_pole_support(0, 1, 1);
        assert_eq!(odd.engine, None);
        assert!(odd.discrepancy);
    }

    #[test]
    fn extrapolation() {
        let pts: Vec<(f64, C)> = [1.0, 0.25, 0.04].iter().map(|&x: &f64| (x, C::new(1.0 + 2.0 * x - x * x, 0.0))).collect();
        let (v, _) = extrapolate_to_zero(&pts);
        assert!((v - 1.0).norm() < 1e-12);
    }
}
