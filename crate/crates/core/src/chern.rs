//! Chern character forms `tr_s exp ∇²_L`, their currents on the total space,
//! transgression forms and homotopy differences.

use crate::exprkit::{CompiledExpr, ScalarExpr};
use crate::fiber::{aggregate_words, exp_nilpotent, Dense, EtaFunctional, FiberError, PolarKernel, SpatialNode};
use crate::graded::{wedge_sign, ChartFrame, CompiledGraded, CoordKind, FormElement, GradedElement, GradedError, Multiindex};
use crate::models::ModelSpec;
use crate::quadrature::{radial_rule, sphere_rule, Estimate, QuadratureError, QuadratureRule, RadialKind};
use crate::superconn::{PolarChart, SuperconnError, SuperconnectionLocal, RHO};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

/// Variable carrying the symbol scaling `t` in transgression and homotopy formulas.
pub const T_VAR: &str = "__t";
/// `e^{−TAIL_EXPONENT}` bounds the dropped Gaussian tail of the `t`-integral.
pub const TAIL_EXPONENT: f64 = 30.0;
/// Step of the centered differences used for `dβ`.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChernError {
    #[error("no scalar/nilpotent split: {0}")]
    NoScalarSplit(String),
    #[error("test form is not closed (|dη| = {0:.3e})")]
    EtaNotClosed(f64),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(#[from] QuadratureError),
    #[error("evaluation at ρ = {rho} below the minimum radius {r_min}")]
    EvaluationOnZeroSection { rho: f64, r_min: f64 },
    #[error("superconnections do not share chart and symbol")]
    SymbolMismatch,
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error(transparent)]
    Superconn(#[from] SuperconnError),
}

impl From<FiberError> for ChernError {
    fn from(e: FiberError) -> Self {
        match e {
            FiberError::NoScalarSplit(s) => ChernError::NoScalarSplit(s),
            FiberError::NonHorizontalForm(s) => ChernError::Superconn(SuperconnError::NonHorizontalTheta(s)),
            FiberError::Superconn(s) => ChernError::Superconn(s),
        }
    }
}

impl From<GradedError> for ChernError {
    fn from(e: GradedError) -> Self {
        ChernError::Superconn(e.into())
    }
}

impl From<crate::exprkit::ExprError> for ChernError {
    fn from(e: crate::exprkit::ExprError) -> Self {
        ChernError::Superconn(e.into())
    }
}

// ---------------------------------------------------------------------------
// Symbolic Chern forms

/// `curv = s·I + N` with `s` the scalar degree-zero part and `N` nilpotent.
pub fn scalar_split(curv: &GradedElement<ScalarExpr>) -> Result<(ScalarExpr, GradedElement<ScalarExpr>), ChernError> {
    let a0 = curv.component(Multiindex::EMPTY);
    let n = a0.n();
    let s = a0.get(0, 0).simplify();
    for i in 0..n {
        for j in 0..n {
            let e = a0.get(i, j).clone();
            let d = if i == j { (e - s.clone()).simplify() } else { e.simplify() };
            if !d.is_zero() {
                return Err(ChernError::NoScalarSplit(format!("entry ({i}, {j}) of the degree-zero part")));
            }
        }
    }
    let nil = curv.sub(&GradedElement::identity(curv.frame()).scale(&s))?.map_coeffs(|c| c.simplify());
    Ok((s, nil))
}

/// `Σ_{k ≤ dim} Nᵏ/k!` together with the number of nonzero powers used.
fn exp_series(nil: &GradedElement<ScalarExpr>) -> Result<(GradedElement<ScalarExpr>, usize), ChernError> {
    let frame = nil.frame();
    let mut out = GradedElement::identity(frame);
    let mut term = out.clone();
    let mut used = 0;
    for k in 1..=frame.dim() + 1 {
        term = term.mul(nil)?.scale(&ScalarExpr::ratio(1, k as i64));
        term = term.map_coeffs(|c| c.simplify());
        if term.is_zero() {
            break;
        }
        assert!(k <= frame.dim(), "nilpotent part must vanish beyond the chart dimension");
        used = k;
        out = out.add(&term)?;
    }
    Ok((out, used))
}

/// `tr_s exp(curvature)` on a chart.
#[derive(Clone, Debug)]
pub struct ChernForm {
    pub form: FormElement<ScalarExpr>,
    /// Highest power of the nilpotent part that is nonzero.
    pub terms_used: usize,
}

pub fn chern_form(curv: &GradedElement<ScalarExpr>) -> Result<ChernForm, ChernError> {
    let (s, nil) = scalar_split(curv)?;
    let (e, used) = exp_series(&nil)?;
    let mut form = e.supertrace();
    if !s.is_zero() {
        form = form.scale(&ScalarExpr::exp(s));
    }
    Ok(ChernForm { form: form.map_coeffs(|c| c.simplify()), terms_used: used })
}

/// Maximum of `|coefficient|` of a symbolic form over seeded random points
/// with coordinates in `[lo, hi]`.
pub fn max_abs_at_random_points(form: &FormElement<ScalarExpr>, points: usize, seed: u64, lo: f64, hi: f64) -> Result<f64, ChernError> {
    let frame = form.frame();
    let names: Vec<&str> = frame.coords().iter().map(|s| s.as_str()).collect();
    let coeffs: Vec<ScalarExpr> = form.terms().values().cloned().collect();
    if coeffs.is_empty() {
        return Ok(0.0);
    }
    let compiled = CompiledExpr::compile_many(&coeffs, &names)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut regs = Vec::new();
    let mut out = vec![ZERO; coeffs.len()];
    for _ in 0..points {
        let x: Vec<C> = names.iter().map(|_| C::new(rng.gen_range(lo..hi), 0.0)).collect();
        compiled.eval_into(&x, &mut regs, &mut out);
        worst = out.iter().fold(worst, |m, v| m.max(v.norm()));
    }
    Ok(worst)
}

impl ChernForm {
    /// `max |d(ch)|` at seeded random points (zero when `d` closes symbolically).
    pub fn closedness_defect(&self, points: usize, seed: u64) -> Result<f64, ChernError> {
        let d = self.form.exterior_d().map_coeffs(|c| c.simplify());
        if d.is_zero() {
            return Ok(0.0);
        }
        max_abs_at_random_points(&d, points, seed, 0.2, 1.4)
    }
}

// ---------------------------------------------------------------------------
// Currents

/// Refinement level and relative tolerance of a quadrature-based computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadOptions {
    pub level: u32,
    pub rel_tol: f64,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { level: 1, rel_tol: 1e-6 }
    }
}

/// Checks `dη = 0` symbolically, falling back to base nodes with tolerance `1e−10`.
pub fn check_closed(eta: &FormElement<ScalarExpr>, base: &QuadratureRule) -> Result<(), ChernError> {
    let d = eta.exterior_d().map_coeffs(|c| c.simplify());
    if d.is_zero() {
        return Ok(());
    }
    let names: Vec<&str> = d.frame().coords().iter().map(|s| s.as_str()).collect();
    let coeffs: Vec<ScalarExpr> = d.terms().values().cloned().collect();
    let compiled = CompiledExpr::compile_many(&coeffs, &names)?;
    let (mut regs, mut out) = (Vec::new(), vec![ZERO; coeffs.len()]);
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let x: Vec<C> = base.node(i).iter().map(|&v| C::new(v, 0.0)).collect();
        compiled.eval_into(&x, &mut regs, &mut out);
        worst = out.iter().fold(worst, |m, v| m.max(v.norm()));
    }
    if worst > 1e-10 {
        return Err(ChernError::EtaNotClosed(worst));
    }
    Ok(())
}

/// `∫_r^∞ e^{−cρ²} ρˡ dρ` for `l = 0..=lmax`.
pub fn gaussian_moments(c: f64, r: f64, lmax: usize) -> Result<Vec<f64>, ChernError> {
    let s = c.sqrt();
    let rule = radial_rule(RadialKind::Gaussian { from: s * r }, 2)?;
    Ok((0..=lmax)
        .map(|l| rule.integrate(|u| (-u[0] * u[0]).exp() * u[0].powi(l as i32)) / s.powi(l as i32 + 1))
        .collect())
}

/// Compiled integration data for a model and a test form.
pub struct CurrentSetup {
    pub kernel: PolarKernel,
    pub eta: EtaFunctional,
    model: ModelSpec,
}

impl CurrentSetup {
    pub fn new(model: &ModelSpec, eta: &FormElement<ScalarExpr>) -> Result<Self, ChernError> {
        let kernel = PolarKernel::new(&model.sc)?;
        check_closed(eta, &model.base_rule(1).map_err(model_quad)?)?;
        let eta = kernel.eta(eta)?;
        Ok(Self { kernel, eta, model: model.clone() })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Base × sphere nodes at a refinement level (`≥ 1`).
    pub fn nodes(&self, level: u32) -> Result<Vec<SpatialNode>, ChernError> {
        let base = self.model.base_rule(level).map_err(model_quad)?;
        let sphere = sphere_rule(self.kernel.fiber_dim(), level)?;
        Ok(self.kernel.nodes(&base, &sphere))
    }

    /// `∫_{ρ ≥ r} π*η ∧ tr_s exp ∇²_L` for each `r` (use `0` for the whole space).
    pub fn integrate(&self, level: u32, radii: &[f64]) -> Result<Vec<C>, ChernError> {
        if self.eta.is_zero() {
            return Ok(vec![ZERO; radii.len()]);
        }
        let sums = aggregate_words(&self.kernel, &self.eta, &self.nodes(level)?)?;
        let kmax = self.kernel.kmax();
        let mut out = Vec::with_capacity(radii.len());
        for &r in radii {
            let mut acc = ZERO;
            for (c, coef) in &sums.groups {
                let mom = gaussian_moments(*c, r, kmax)?;
                let mut fact = 1.0;
                for (k, row) in coef.iter().enumerate() {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    for (l, v) in row.iter().enumerate() {
                        acc += v * mom[l] / fact;
                    }
                }
            }
            out.push(acc);
        }
        Ok(out)
    }
}

fn model_quad(e: crate::models::ModelError) -> ChernError {
    match e {
        crate::models::ModelError::Quadrature(q) => ChernError::QuadratureFailure(q),
        other => ChernError::QuadratureFailure(QuadratureError::BadParams(other.to_string())),
    }
}

/// `∫_{T*M} π*η ∧ tr_s exp ∇²_L`, self-converged between `level` and `level + 1`.
pub fn chern_current(model: &ModelSpec, eta: &FormElement<ScalarExpr>, opts: QuadOptions) -> Result<Estimate, ChernError> {
    let setup = CurrentSetup::new(model, eta)?;
    let est = Estimate::self_converged(opts.level, |l| setup.integrate(l, &[0.0]).map(|v| v[0]))?;
    Ok(est.check(opts.rel_tol)?)
}

/// `∫_{X_R} π*η ∧ tr_s exp ∇²_L` for each `R`.
pub fn chern_current_outside(
    model: &ModelSpec,
    eta: &FormElement<ScalarExpr>,
    radii: &[f64],
    opts: QuadOptions,
) -> Result<Vec<Estimate>, ChernError> {
    if let Some(&r) = radii.iter().find(|r| !(**r > 0.0)) {
        return Err(ChernError::BadRadius(r));
    }
    let setup = CurrentSetup::new(model, eta)?;
    let coarse = setup.integrate(opts.level, radii)?;
    let fine = setup.integrate(opts.level + 1, radii)?;
    coarse
        .iter()
        .zip(fine)
        .map(|(a, b)| Ok(Estimate { value: b, error: (a - b).norm(), level: opts.level + 1 }.check(opts.rel_tol)?))
        .collect()
}

/// `(ρ, log ‖tr_s exp ∇²_L‖)` with the norm taken in `L²` over base × sphere nodes.
pub fn rho_decay_samples(model: &ModelSpec, rhos: &[f64]) -> Result<Vec<(f64, f64)>, ChernError> {
    let kernel = PolarKernel::new(&model.sc)?;
    let base = model.base_rule(0).map_err(model_quad)?;
    let nodes = kernel.nodes(&base, &sphere_rule(kernel.fiber_dim(), 1)?);
    let full = kernel.top();
    let kmax = kernel.kmax();
    rhos.iter()
        .map(|&rho| {
            let parts: Vec<Result<f64, ChernError>> = nodes
                .par_iter()
                .map(|n| {
                    let f = kernel.curvature_at(&n.vals, rho);
                    let s = f.scalar_of_degree_zero(1e-12).ok_or_else(|| ChernError::NoScalarSplit("curvature".into()))?;
                    let e = exp_nilpotent(&f.positive_part(), kmax, full).scaled(s.exp());
                    Ok(n.weight.abs() * e.masks().map(|m| e.str_at(m).norm_sqr()).sum::<f64>())
                })
                .collect();
            let mut total = 0.0;
            for p in parts {
                total += p?;
            }
            Ok((rho, 0.5 * total.ln()))
        })
        .collect()
}

/// Least-squares fit `y ≈ a + b x`, returning `(a, b, R²)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    (a, b, r2)
}

// ---------------------------------------------------------------------------
// Transgression

/// `β = −∫₀^∞ tr_s(exp ∇²_{tL} · L) dt` on the polar chart, evaluated pointwise.
///
/// Points are given as values of [`TransgressionForm::vars`]: base coordinates,
/// sphere coordinates, chart parameters, then `ρ`.
#[derive(Clone, Debug)]
pub struct TransgressionForm {
    frame: Arc<ChartFrame>,
    vars: Vec<String>,
    /// Coefficients of `t⁰, t¹, t²` in the polar curvature of `∇ + tL`.
    parts: [CompiledGraded; 3],
    symbol: CompiledGraded,
    r_min: f64,
    kmax: usize,
    /// Frame coordinate index → position in `vars`.
    slots: Vec<usize>,
}

/// Splits a graded element polynomial in `var` into its coefficients.
pub fn collect_graded_powers(g: &GradedElement<ScalarExpr>, var: &str) -> Result<BTreeMap<i64, GradedElement<ScalarExpr>>, ChernError> {
    let frame = g.frame();
    let n = frame.rank();
    let mut out: BTreeMap<i64, GradedElement<ScalarExpr>> = BTreeMap::new();
    for (j, a) in g.terms() {
        let mut mats: BTreeMap<i64, crate::graded::Matrix<ScalarExpr>> = BTreeMap::new();
        for r in 0..n {
            for c in 0..n {
                for (pow, coef) in a.get(r, c).collect_powers(var)? {
                    mats.entry(pow).or_insert_with(|| crate::graded::Matrix::zeros(n)).set(r, c, coef);
                }
            }
        }
        for (pow, m) in mats {
            out.entry(pow).or_insert_with(|| GradedElement::zero(frame)).insert(*j, m)?;
        }
    }
    Ok(out)
}

pub fn transgression_beta(sc: &SuperconnectionLocal, r_min: f64) -> Result<TransgressionForm, ChernError> {
    if !(r_min > 0.0) {
        return Err(ChernError::BadRadius(r_min));
    }
    let chart = PolarChart::new(sc.frame())?;
    let frame = chart.frame().clone();
    let curv = sc.scale_symbol(&ScalarExpr::var(T_VAR)).curvature();
    let pulled = chart.pull_graded(&curv)?;
    let powers = collect_graded_powers(&pulled, T_VAR)?;
    if let Some(p) = powers.keys().find(|p| !(0..=2).contains(*p)) {
        return Err(ChernError::NoScalarSplit(format!("t-power {p} in the scaled curvature")));
    }
    let mut vars: Vec<String> = frame.horizontal().iter().map(|s| s.to_string()).collect();
    vars.extend(chart.angular().iter().map(|s| s.to_string()));
    vars.extend(chart.parameters().iter().map(|s| s.to_string()));
    vars.push(RHO.to_string());
    let refs: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
    let get = |k: i64| powers.get(&k).cloned().unwrap_or_else(|| GradedElement::zero(&frame));
    let parts = [get(0).compile(&refs)?, get(1).compile(&refs)?, get(2).compile(&refs)?];
    let symbol = chart.pull_graded(sc.symbol())?.compile(&refs)?;
    let slots = frame.coords().iter().map(|c| vars.iter().position(|v| v == c).expect("frame coordinate")).collect();
    Ok(TransgressionForm { kmax: frame.dim(), frame, vars, parts, symbol, r_min, slots })
}

impl TransgressionForm {
    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn frame(&self) -> &Arc<ChartFrame> {
        &self.frame
    }

    fn eval_parts(&self, vals: &[f64]) -> Result<([Dense; 3], Vec<C>), ChernError> {
        let rho = *vals.last().expect("rho");
        if rho < self.r_min {
            return Err(ChernError::EvaluationOnZeroSection { rho, r_min: self.r_min });
        }
        let v: Vec<C> = vals.iter().map(|&x| C::new(x, 0.0)).collect();
        Ok(([0, 1, 2].map(|i| Dense::from_graded(&self.parts[i].eval(&v))), v))
    }

    fn to_form(&self, comps: BTreeMap<u32, C>) -> FormElement<C> {
        let terms = comps.into_iter().filter(|(_, v)| *v != ZERO).map(|(m, v)| (Multiindex(m), v)).collect();
        FormElement::from_terms(&self.frame, terms).expect("frame masks")
    }

    /// `β` at a point.
    pub fn eval(&self, vals: &[f64]) -> Result<FormElement<C>, ChernError> {
        let (p, v) = self.eval_parts(vals)?;
        let s2 = p[2].scalar_of_degree_zero(1e-12).filter(|s| s.re < 0.0 && s.im.abs() < 1e-12);
        let Some(s2) = s2 else {
            return Err(ChernError::NoScalarSplit("t² part of the scaled curvature".into()));
        };
        if p[0].component(0).is_some() || p[1].component(0).is_some() {
            return Err(ChernError::NoScalarSplit("t⁰, t¹ parts have a degree-zero part".into()));
        }
        let a = -s2.re;
        let tmax = (TAIL_EXPONENT / a).sqrt();
        let rule = QuadratureRule::composite_legendre(0.0, tmax, 8, 16);
        let mu: Vec<f64> =
            (0..=self.kmax).map(|j| rule.integrate(|t| (-a * t[0] * t[0]).exp() * t[0].powi(j as i32))).collect();
        let l = Dense::from_graded(&self.symbol.eval(&v));
        let all = self.frame.top().0;
        let w = crate::fiber::words(&p[0], &p[1], None, self.kmax, all);
        let mut comps: BTreeMap<u32, C> = BTreeMap::new();
        let mut fact = 1.0;
        for (k, row) in w.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            for (j, wd) in row.iter().enumerate() {
                if wd.is_zero() {
                    continue;
                }
                let prod = wd.mul(&l, all);
                for m in prod.masks() {
                    *comps.entry(m).or_insert(ZERO) -= prod.str_at(m) * mu[j] / fact;
                }
            }
        }
        Ok(self.to_form(comps))
    }

    /// `dβ` by centered differences in every chart coordinate.
    pub fn eval_d(&self, vals: &[f64]) -> Result<FormElement<C>, ChernError> {
        let mut comps: BTreeMap<u32, C> = BTreeMap::new();
        for (i, &slot) in self.slots.iter().enumerate() {
            let mut plus = vals.to_vec();
            let mut minus = vals.to_vec();
            plus[slot] += FD_STEP;
            minus[slot] -= FD_STEP;
            let (bp, bm) = (self.eval(&plus)?, self.eval(&minus)?);
            let di = bp.sub(&bm)?;
            for (j, v) in di.terms() {
                if j.contains(i) {
                    continue;
                }
                let sign = wedge_sign(Multiindex::single(i), *j) as f64;
                *comps.entry(j.0 | (1 << i)).or_insert(ZERO) += v * sign / (2.0 * FD_STEP);
            }
        }
        Ok(self.to_form(comps))
    }

    /// `ch(∇) = tr_s exp ∇²` of the connection alone (the `t = 0` curvature).
    pub fn connection_chern(&self, vals: &[f64]) -> Result<FormElement<C>, ChernError> {
        let (p, _) = self.eval_parts(vals)?;
        let e = exp_nilpotent(&p[0], self.kmax, self.frame.top().0);
        Ok(self.to_form(e.masks().map(|m| (m, e.str_at(m))).collect()))
    }

    /// Top-form pairing against `π*η` of `β` (boundary) data.
    fn pair(&self, eta: &EtaFunctional, x: &[C], f: &FormElement<C>) -> C {
        eta.apply_with(x, |m| f.coefficient(Multiindex(m)))
    }
}

/// `∫_{Y_R} π*η ∧ ch(∇) − (−1)^κ ∫_{∂Y_R} π*η ∧ β` with `∂Y_R` oriented by the
/// outward normal `∂_ρ`.
pub fn relative_pairing(model: &ModelSpec, eta: &FormElement<ScalarExpr>, r: f64, opts: QuadOptions) -> Result<Estimate, ChernError> {
    if !(r > 0.0) {
        return Err(ChernError::BadRadius(r));
    }
    let setup = CurrentSetup::new(model, eta)?;
    let beta = transgression_beta(&model.sc, r * 0.5)?;
    let kernel = &setup.kernel;
    let n = kernel.base_dim();
    let mut parts = Vec::new();
    for k in 0..=eta.frame().dim() {
        let piece = eta.degree_part(k);
        if piece.is_zero() {
            continue;
        }
        parts.push((k, kernel.eta(&piece)?, kernel.eta_boundary(&piece)?));
    }
    let value = |level: u32| -> Result<C, ChernError> {
        let nodes = setup.nodes(level)?;
        let mut total = ZERO;
        for (kappa, bulk_eta, bnd_eta) in &parts {
            let sign = if (kappa + n) % 2 == 1 { -1.0 } else { 1.0 };
            let contrib: Vec<Result<C, ChernError>> = nodes
                .par_iter()
                .map(|node| {
                    let mut vals: Vec<f64> = node.vals.iter().map(|v| v.re).collect();
                    vals.push(r);
                    let x = &node.vals[..n];
                    let bc = bulk_eta.coefficients(x);
                    let bulk = beta.pair(bulk_eta, &bc, &beta.connection_chern(&vals)?) * r;
                    let cc = bnd_eta.coefficients(x);
                    let bnd = beta.pair(bnd_eta, &cc, &beta.eval(&vals)?);
                    Ok((bulk - bnd * sign) * node.weight)
                })
                .collect();
            for c in contrib {
                total += c?;
            }
        }
        Ok(total)
    };
    Ok(Estimate::self_converged(opts.level, value)?.check(opts.rel_tol)?)
}

/// Fiber integral of `tr_s exp ∇²_L` over the fiber at base point `x`, as a
/// form on the base (vertical volume form placed last).
pub fn fiber_integral_at(model: &ModelSpec, x: &[f64], level: u32) -> Result<FormElement<C>, ChernError> {
    let kernel = PolarKernel::new(&model.sc)?;
    let base = QuadratureRule::new(x.len(), 0, x.to_vec(), vec![1.0]);
    let nodes = kernel.nodes(&base, &sphere_rule(kernel.fiber_dim(), level)?);
    let frame = kernel.frame();
    let hmask = frame.mask_of(CoordKind::Horizontal).0;
    let vert = kernel.top() & !hmask;
    let all = kernel.top();
    let kmax = kernel.kmax();
    let mut comps: BTreeMap<u32, C> = BTreeMap::new();
    for node in &nodes {
        let pieces = kernel.pieces(&node.vals);
        let c = kernel.scalar_principal(&pieces)?;
        let mom = gaussian_moments(c, 0.0, kmax)?;
        let w = crate::fiber::words(&pieces[0], &pieces[1], None, kmax, all);
        let mut fact = 1.0;
        for (k, row) in w.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            for (l, wd) in row.iter().enumerate() {
                for m in wd.masks().filter(|m| m & vert == vert) {
                    *comps.entry(m & hmask).or_insert(ZERO) += wd.str_at(m) * mom[l] / fact * node.weight;
                }
            }
        }
    }
    let terms = comps.into_iter().map(|(m, v)| (Multiindex(m), v)).collect();
    Ok(FormElement::from_terms(&model.base_frame, terms)?)
}

// ---------------------------------------------------------------------------
// Homotopy differences

/// `β₁ = ∫₀¹ tr_s(exp ∇²_t · (θ₁ − θ₀)) dt` for `∇_t = tθ₁ + (1−t)θ₀ + L`.
pub fn homotopy_difference(sc0: &SuperconnectionLocal, sc1: &SuperconnectionLocal) -> Result<FormElement<ScalarExpr>, ChernError> {
    if !ChartFrame::same(sc0.frame(), sc1.frame()) || !sc0.symbol().sub(sc1.symbol())?.is_zero() {
        return Err(ChernError::SymbolMismatch);
    }
    let frame = sc0.frame();
    let dtheta = sc1.theta().sub(sc0.theta())?;
    if dtheta.is_zero() {
        return Ok(FormElement::zero(frame));
    }
    let t = ScalarExpr::var(T_VAR);
    let theta_t = sc0.theta().add(&dtheta.scale(&t))?;
    let sct = SuperconnectionLocal::new_unchecked(theta_t, sc0.symbol().clone())?;
    let (s, nil) = scalar_split(&sct.curvature().map_coeffs(|c| c.simplify()))?;
    let (e, _) = exp_series(&nil)?;
    let integrand = e.mul(&dtheta)?.supertrace();
    let mut terms = Vec::new();
    for (j, c) in integrand.terms() {
        let mut acc = Vec::new();
        for (pow, coef) in c.collect_powers(T_VAR)? {
            if pow < 0 {
                return Err(ChernError::NoScalarSplit("negative power of t".into()));
            }
            acc.push(coef * ScalarExpr::ratio(1, pow + 1));
        }
        let mut v = ScalarExpr::sum(acc);
        if !s.is_zero() {
            v = v * ScalarExpr::exp(s.clone());
        }
        terms.push((*j, v.simplify()));
    }
    Ok(FormElement::from_terms(frame, terms)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprkit::parse;
    use crate::graded::Matrix;
    use crate::models::{builtin, toy_circle};

    fn toy_curvature() -> GradedElement<ScalarExpr> {
        let f = ChartFrame::split(&[], &["xi"], 1, 1).unwrap();
        let j = Matrix::from_rows(vec![vec![ScalarExpr::zero(), ScalarExpr::one()], vec![ScalarExpr::int(-1), ScalarExpr::zero()]]).unwrap();
        let s = Matrix::identity(2).scale(&parse("-xi^2").unwrap());
        GradedElement::from_terms(&f, vec![(Multiindex::EMPTY, s), (Multiindex::single(0), j)]).unwrap()
    }

    #[test]
    fn chern_form_of_simple_curvatures() {
        let ch = chern_form(&toy_curvature()).unwrap();
        assert!(ch.form.is_zero());
        assert_eq!(ch.terms_used, 1);
        let f = ChartFrame::split(&["x"], &[], 2, 1).unwrap();
        let zero = chern_form(&GradedElement::zero(&f)).unwrap();
        assert_eq!(zero.form.coefficient(Multiindex::EMPTY), ScalarExpr::one());
        let bad = GradedElement::from_matrix(&f, Multiindex::EMPTY, Matrix::from_fn(3, |i, j| if i == j { ScalarExpr::int(i as i64) } else { ScalarExpr::zero() })).unwrap();
        assert!(matches!(chern_form(&bad), Err(ChernError::NoScalarSplit(_))));
    }

    #[test]
    fn flat_torus_current_vanishes() {
        let m = builtin("torus-derham").unwrap();
        let v = chern_current(&m, &m.eta("one").unwrap().form, QuadOptions::default()).unwrap();
        assert!(v.value.norm() < 1e-8, "{v:?}");
    }

    #[test]
    fn gaussian_moment_values() {
        let m = gaussian_moments(1.0, 0.0, 3).unwrap();
        assert!((m[0] - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-13);
        assert!((m[1] - 0.5).abs() < 1e-13);
        let m2 = gaussian_moments(2.0, 0.5, 1).unwrap();
        assert!((m2[1] - (-0.5f64).exp() / 4.0).abs() < 1e-13);
    }

    #[test]
    fn toy_transgression_vanishes() {
        let m = toy_circle().unwrap();
        let beta = transgression_beta(&m.sc, 0.5).unwrap();
        for (x, s) in [(0.3, 1.0), (1.1, -1.0)] {
            assert!(beta.eval(&[x, s, 1.0]).unwrap().terms().values().all(|v| v.norm() < 1e-14));
        }
        assert!(matches!(beta.eval(&[0.3, 1.0, 0.1]), Err(ChernError::EvaluationOnZeroSection { .. })));
    }

    #[test]
    fn homotopy_of_equal_connections_is_zero() {
        let m = builtin("torus-derham").unwrap();
        assert!(homotopy_difference(&m.sc, &m.sc).unwrap().is_zero());
        let other = builtin("torus-spinor").unwrap();
        assert!(matches!(homotopy_difference(&m.sc, &other.sc), Err(ChernError::SymbolMismatch)));
    }

    #[test]
    fn fit() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 - 3.0 * i as f64)).collect();
        let (a, b, r2) = linear_fit(&pts);
        assert!((a - 2.0).abs() < 1e-12 && (b + 3.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
