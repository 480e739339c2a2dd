//! Built-in models: the de Rham operator on surfaces (flat torus, round or
//! conformally deformed sphere), the spinor-bundle Mathai–Quillen model, and
//! a one-dimensional toy; plus Clifford generators, Pfaffians and the
//! `det(sinh(Ω/2)/(Ω/2))^{1/2}` series.

use crate::exprkit::{parse, ExactNum, ScalarExpr};
use crate::graded::{ChartFrame, Coeff, FormElement, GradedElement, GradedError, Matrix, Multiindex};
use crate::quadrature::{base_rule, BaseDomain, BasePatch, QuadratureError, QuadratureRule};
use crate::superconn::{SuperconnError, SuperconnectionLocal};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),
    #[error("unsupported base `{0}`")]
    UnsupportedBase(String),
    #[error("Clifford generators need an even dimension, got {0}")]
    OddDimension(usize),
    #[error("matrix is not antisymmetric")]
    NotAntisymmetric,
    #[error("Pfaffian of an odd-size multiindex")]
    OddMultiindex,
    #[error("curvature matrix is not nilpotent (has a form-degree-zero part)")]
    NotNilpotent,
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("unknown test form `{0}`")]
    UnknownEta(String),
    #[error(transparent)]
    Superconn(#[from] SuperconnError),
    #[error(transparent)]
    Graded(#[from] GradedError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

impl From<crate::exprkit::ExprError> for ModelError {
    fn from(e: crate::exprkit::ExprError) -> Self {
        ModelError::Superconn(e.into())
    }
}

/// Names of the built-in geometric models.
pub const BUILTIN_MODELS: [&str; 5] = ["torus-derham", "sphere-derham", "torus-spinor", "sphere-spinor", "toy-circle"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    /// `[0, 2π)²` with coordinates `x1, x2`.
    Torus,
    /// `(0, π) × [0, 2π)` with coordinates `phi, psi`.
    Sphere,
    /// `[0, 2π)` with coordinate `x`.
    Circle,
}

impl Topology {
    pub fn coords(self) -> &'static [&'static str] {
        match self {
            Topology::Torus => &["x1", "x2"],
            Topology::Sphere => &["phi", "psi"],
            Topology::Circle => &["x"],
        }
    }

    pub fn fiber_coords(self) -> &'static [&'static str] {
        match self {
            Topology::Circle => &["xi"],
            _ => &["xi1", "xi2"],
        }
    }

    pub fn dim(self) -> usize {
        self.coords().len()
    }

    pub fn domain(self) -> BaseDomain {
        match self {
            Topology::Torus => BaseDomain::Torus { periods: vec![2.0 * PI, 2.0 * PI] },
            Topology::Sphere => BaseDomain::SphereCoords,
            Topology::Circle => BaseDomain::Torus { periods: vec![2.0 * PI] },
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "torus" => Some(Topology::Torus),
            "sphere" => Some(Topology::Sphere),
            "circle" => Some(Topology::Circle),
            _ => None,
        }
    }

    /// The closed test forms: one per degree, a volume-type form, and exact ones.
    pub fn test_forms(self, frame: &Arc<ChartFrame>) -> Vec<TestForm> {
        let f = |name: &str, terms: &[(&[usize], &str)], exact: bool| {
            let terms = terms
                .iter()
                .map(|(j, c)| (Multiindex::new(j).expect("valid"), parse(c).expect("valid").simplify()))
                .collect();
            let form = FormElement::from_terms(frame, terms).expect("valid");
            TestForm { name: name.to_string(), degree: form.degree().unwrap_or(0), form, exact }
        };
        match self {
            Topology::Torus => vec![
                f("one", &[(&[], "1")], false),
                f("dx1", &[(&[0], "1")], false),
                f("dx2", &[(&[1], "1")], false),
                f("area", &[(&[0, 1], "1")], false),
                f("exact1", &[(&[0], "cos(x1)")], true),
                f("exact2", &[(&[0, 1], "cos(x1)")], true),
            ],
            Topology::Sphere => vec![
                f("one", &[(&[], "1")], false),
                f("exact1", &[(&[0], "-sin(phi)")], true),
                f("area", &[(&[0, 1], "sin(phi)")], false),
                f("exact2", &[(&[0, 1], "2*sin(phi)*cos(phi)")], true),
            ],
            Topology::Circle => vec![
                f("one", &[(&[], "1")], false),
                f("dx", &[(&[0], "1")], false),
                f("exact1", &[(&[0], "cos(x)")], true),
            ],
        }
    }
}

/// A named closed form on the base.
#[derive(Clone, Debug)]
pub struct TestForm {
    pub name: String,
    pub form: FormElement<ScalarExpr>,
    pub degree: usize,
    pub exact: bool,
}

/// `g = A² du² + B² dv²` on a surface.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMetric {
    pub topology: Topology,
    pub a: ScalarExpr,
    pub b: ScalarExpr,
}

impl SurfaceMetric {
    pub fn flat_torus() -> Self {
        Self { topology: Topology::Torus, a: ScalarExpr::one(), b: ScalarExpr::one() }
    }

    pub fn round_sphere() -> Self {
        Self { topology: Topology::Sphere, a: ScalarExpr::one(), b: ScalarExpr::sin(ScalarExpr::var("phi")) }
    }

    /// `e^{2f} g` for a function `f` on the base.
    pub fn conformal(&self, f: &ScalarExpr) -> Self {
        let e = ScalarExpr::exp(f.clone());
        Self { topology: self.topology, a: (e.clone() * self.a.clone()).simplify(), b: (e * self.b.clone()).simplify() }
    }

    /// `λ² g` for a constant `λ > 0`.
    pub fn scaled(&self, lambda: ScalarExpr) -> Self {
        Self {
            topology: self.topology,
            a: (lambda.clone() * self.a.clone()).simplify(),
            b: (lambda * self.b.clone()).simplify(),
        }
    }

    /// `ω²₁ = ⟨∇e₁, e₂⟩` for the orthonormal frame `e₁ = ∂_u/A`, `e₂ = ∂_v/B`.
    pub fn connection_one_form(&self, frame: &Arc<ChartFrame>) -> Result<FormElement<ScalarExpr>, ModelError> {
        let [u, v] = match self.topology.coords() {
            [u, v] => [*u, *v],
            _ => return Err(ModelError::UnsupportedMetric("metrics are defined on surfaces".into())),
        };
        let du = (ScalarExpr::zero() - self.a.differentiate(v) / self.b.clone()).simplify();
        let dv = (self.b.differentiate(u) / self.a.clone()).simplify();
        Ok(FormElement::from_terms(frame, vec![(Multiindex::single(0), du), (Multiindex::single(1), dv)])?)
    }

    /// Positivity of `A`, `B` at the base nodes.
    pub fn check(&self, rule: &QuadratureRule) -> Result<(), ModelError> {
        let names = self.topology.coords();
        for e in [&self.a, &self.b] {
            let c = crate::exprkit::CompiledExpr::compile(e, names)?;
            for i in 0..rule.len() {
                let x: Vec<Complex64> = rule.node(i).iter().map(|&t| Complex64::new(t, 0.0)).collect();
                let val = c.eval(&x);
                if !(val.re > 0.0 && val.im.abs() < 1e-12) {
                    return Err(ModelError::UnsupportedMetric(format!("{e} is not positive at {:?}", rule.node(i))));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    DeRham,
    Spinor,
    Toy,
    Custom,
}

/// A complete problem instance on a single base chart.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    pub topology: Topology,
    pub base_frame: Arc<ChartFrame>,
    pub sc: SuperconnectionLocal,
    pub patches: Vec<BasePatch>,
    pub metric: Option<SurfaceMetric>,
    /// Curvature `Ω` of the real fiber bundle (spinor models).
    pub bundle_curvature: Option<GradedElement<ScalarExpr>>,
    pub forms: Vec<TestForm>,
}

impl ModelSpec {
    pub fn base_dim(&self) -> usize {
        self.base_frame.dim()
    }

    pub fn fiber_dim(&self) -> usize {
        self.sc.fiber_dim()
    }

    pub fn base_coords(&self) -> Vec<&str> {
        self.base_frame.horizontal()
    }

    pub fn base_rule(&self, level: u32) -> Result<QuadratureRule, ModelError> {
        Ok(base_rule(&self.patches, &self.base_coords(), level)?)
    }

    pub fn eta(&self, name: &str) -> Result<&TestForm, ModelError> {
        self.forms.iter().find(|f| f.name == name).ok_or_else(|| ModelError::UnknownEta(name.to_string()))
    }

    /// The same model with another connection form (written on the base chart).
    pub fn with_connection(&self, theta_base: &GradedElement<ScalarExpr>) -> Result<Self, ModelError> {
        let theta = crate::superconn::pullback_connection(theta_base, self.sc.frame())?;
        Ok(Self { sc: self.sc.with_theta(theta)?, ..self.clone() })
    }
}

// ---------------------------------------------------------------------------
// Exterior algebra

/// `Λ*ℝⁿ ⊗ ℂ` with basis ordered even degrees first, each by (degree, lexicographic).
#[derive(Clone, Debug)]
pub struct ExteriorAlgebra {
    pub n: usize,
    pub basis: Vec<u32>,
}

impl ExteriorAlgebra {
    pub fn new(n: usize) -> Self {
        let mut basis: Vec<u32> = (0..1u32 << n).collect();
        basis.sort_by_key(|&s| (s.count_ones() % 2, s.count_ones(), (0..n).filter(|a| s & (1 << a) != 0).collect::<Vec<_>>()));
        Self { n, basis }
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn even_rank(&self) -> usize {
        self.basis.len() / 2
    }

    fn index(&self, s: u32) -> usize {
        self.basis.iter().position(|&b| b == s).expect("basis element")
    }

    fn sign_before(s: u32, a: usize) -> i64 {
        if (s & ((1u32 << a) - 1)).count_ones() % 2 == 1 {
            -1
        } else {
            1
        }
    }

    /// `e_a ∧ ·`.
    pub fn ext(&self, a: usize) -> Matrix<ScalarExpr> {
        let mut m = Matrix::zeros(self.rank());
        for &s in &self.basis {
            if s & (1 << a) == 0 {
                m.set(self.index(s | 1 << a), self.index(s), ScalarExpr::int(Self::sign_before(s, a)));
            }
        }
        m
    }

    /// `ι_{e_a}`.
    pub fn int(&self, a: usize) -> Matrix<ScalarExpr> {
        let mut m = Matrix::zeros(self.rank());
        for &s in &self.basis {
            if s & (1 << a) != 0 {
                m.set(self.index(s & !(1 << a)), self.index(s), ScalarExpr::int(Self::sign_before(s, a)));
            }
        }
        m
    }

    /// Clifford action `c(e_a) = e_a ∧ − ι_{e_a}`, with `c(e_a)² = −1`.
    pub fn clifford(&self, a: usize) -> Matrix<ScalarExpr> {
        self.ext(a).add(&self.int(a).neg())
    }

    /// The derivation induced by the rotation `e_a ↦ e_b`, `e_b ↦ −e_a`.
    pub fn rotation(&self, a: usize, b: usize) -> Matrix<ScalarExpr> {
        self.ext(b).mul(&self.int(a)).add(&self.ext(a).mul(&self.int(b)).neg())
    }
}

fn frames(topology: Topology, p: usize, q: usize) -> Result<(Arc<ChartFrame>, Arc<ChartFrame>), ModelError> {
    let base = ChartFrame::split(topology.coords(), &[], p, q)?;
    let total = ChartFrame::split(topology.coords(), topology.fiber_coords(), p, q)?;
    Ok((base, total))
}

fn symbol_from(total: &Arc<ChartFrame>, gens: &[Matrix<ScalarExpr>], fiber: &[&str]) -> Result<GradedElement<ScalarExpr>, ModelError> {
    let mut m = Matrix::zeros(total.rank());
    for (g, xi) in gens.iter().zip(fiber) {
        m = m.add(&g.scale(&ScalarExpr::var(xi)));
    }
    Ok(GradedElement::from_matrix(total, Multiindex::EMPTY, m)?)
}

/// `ω ⊗ A` for a base one-form `ω` and a constant matrix `A`.
fn form_times(frame: &Arc<ChartFrame>, omega: &FormElement<ScalarExpr>, a: &Matrix<ScalarExpr>) -> Result<GradedElement<ScalarExpr>, ModelError> {
    let terms = omega.terms().iter().map(|(j, c)| (*j, a.scale(c))).collect();
    Ok(GradedElement::from_terms(frame, terms)?)
}

fn patches(topology: Topology) -> Vec<BasePatch> {
    vec![BasePatch { domain: topology.domain(), weight: ScalarExpr::one() }]
}

/// The de Rham operator `d + d*` on a surface: `E = Λ*⊗ℂ` split into even and
/// odd forms, `L = Σ ξʲ c(e_j)` in orthonormal-frame fiber coordinates, and
/// `θ = ω²₁ ⊗ J` with `J` the rotation generator on forms.
pub fn de_rham_surface(metric: &SurfaceMetric) -> Result<ModelSpec, ModelError> {
    if metric.topology == Topology::Circle {
        return Err(ModelError::UnsupportedMetric("de Rham models live on surfaces".into()));
    }
    let ext = ExteriorAlgebra::new(2);
    let (base, total) = frames(metric.topology, 2, 2)?;
    let gens = [ext.clifford(0), ext.clifford(1)];
    let symbol = symbol_from(&total, &gens, metric.topology.fiber_coords())?;
    let omega = metric.connection_one_form(&base)?;
    let theta_base = form_times(&base, &omega, &ext.rotation(0, 1))?;
    let theta = crate::superconn::pullback_connection(&theta_base, &total)?;
    let sc = SuperconnectionLocal::new(theta, symbol)?;
    let patches = patches(metric.topology);
    metric.check(&base_rule(&patches, metric.topology.coords(), 1)?)?;
    let name = match metric.topology {
        Topology::Torus => "torus-derham",
        _ => "sphere-derham",
    };
    Ok(ModelSpec {
        name: name.into(),
        kind: ModelKind::DeRham,
        topology: metric.topology,
        forms: metric.topology.test_forms(&base),
        base_frame: base,
        sc,
        patches,
        metric: Some(metric.clone()),
        bundle_curvature: None,
    })
}

/// Clifford generators `γ₁…γ_m` on `ℂ^{p|q}`, `p = q = 2^{m/2−1}`.
#[derive(Clone, Debug)]
pub struct CliffordData {
    pub m: usize,
    pub gammas: Vec<Matrix<ScalarExpr>>,
    pub p: usize,
    pub q: usize,
}

fn c(re: i64, im: i64) -> ScalarExpr {
    ScalarExpr::constant(ExactNum::complex(
        BigRational::from_integer(BigInt::from(re)),
        BigRational::from_integer(BigInt::from(im)),
    ))
}

fn const_matrix(rows: &[&[(i64, i64)]]) -> Matrix<ScalarExpr> {
    Matrix::from_rows(rows.iter().map(|r| r.iter().map(|&(a, b)| c(a, b)).collect()).collect()).expect("square")
}

pub fn clifford_generators(m: usize) -> Result<CliffordData, ModelError> {
    if m == 0 || m % 2 == 1 {
        return Err(ModelError::OddDimension(m));
    }
    let g1 = const_matrix(&[&[(0, 0), (0, 1)], &[(0, 1), (0, 0)]]);
    let g2 = const_matrix(&[&[(0, 0), (-1, 0)], &[(1, 0), (0, 0)]]);
    let base = CliffordData { m: 2, gammas: vec![g1, g2], p: 1, q: 1 };
    (4..=m).step_by(2).try_fold(base, |b, _| Ok(graded_tensor(&clifford_generators(2)?, &b)))
}

/// `Γ_j = γ^A_j ⊗ ε_B`, `Γ_{2+k} = 1 ⊗ γ^B_k`, basis reordered by total parity.
fn graded_tensor(a: &CliffordData, b: &CliffordData) -> CliffordData {
    let (na, nb) = (a.p + a.q, b.p + b.q);
    let n = na * nb;
    let parity = |i: usize| ((i / nb >= a.p) as usize) ^ ((i % nb >= b.p) as usize);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (parity(i), i));
    let kron = |x: &Matrix<ScalarExpr>, y: &Matrix<ScalarExpr>| {
        Matrix::from_fn(n, |r, s| {
            let (r, s) = (order[r], order[s]);
            Coeff::mul(x.get(r / nb, s / nb), y.get(r % nb, s % nb))
        })
    };
    let eps_b = Matrix::from_fn(nb, |i, j| if i != j { ScalarExpr::zero() } else if i < b.p { ScalarExpr::one() } else { ScalarExpr::int(-1) });
    let id_a = Matrix::identity(na);
    let mut gammas: Vec<_> = a.gammas.iter().map(|g| kron(g, &eps_b)).collect();
    gammas.extend(b.gammas.iter().map(|g| kron(&id_a, g)));
    CliffordData { m: a.m + b.m, gammas, p: n / 2, q: n / 2 }
}

fn conj_transpose(m: &Matrix<ScalarExpr>) -> Matrix<ScalarExpr> {
    Matrix::from_fn(m.n(), |i, j| {
        let e = m.get(j, i).simplify();
        match e.as_const() {
            Some(k) => ScalarExpr::constant(ExactNum::complex(k.re.clone(), -k.im.clone())),
            None => e,
        }
    })
}

impl CliffordData {
    /// `{γᵢ, γⱼ} = −2δᵢⱼ`, anti-selfadjointness and oddness, all exact.
    pub fn check(&self) -> bool {
        let n = self.p + self.q;
        let minus_two = Matrix::identity(n).scale(&ScalarExpr::int(-2));
        for (i, gi) in self.gammas.iter().enumerate() {
            if !gi.add(&conj_transpose(gi)).is_zero() || !gi.even_part(self.p).is_zero() {
                return false;
            }
            for (j, gj) in self.gammas.iter().enumerate() {
                let anti = gi.mul(gj).add(&gj.mul(gi));
                let want = if i == j { minus_two.clone() } else { Matrix::zeros(n) };
                if !anti.add(&want.neg()).is_zero() {
                    return false;
                }
            }
        }
        true
    }

    /// `str(γ₁⋯γ_m)`.
    pub fn top_supertrace(&self) -> ScalarExpr {
        let prod = self.gammas.iter().skip(1).fold(self.gammas[0].clone(), |acc, g| acc.mul(g));
        prod.supertrace(self.p)
    }

    /// The engine's fiber constant `π^{m/2}(−1)^{m(m−1)/2} str(γ₁⋯γ_m)`, the
    /// fiber integral of `tr_s exp(−|ξ|² + dξʲγ_j)`.
    pub fn fiber_constant(&self) -> Complex64 {
        let s = crate::exprkit::evaluate(&self.top_supertrace(), &Default::default()).expect("constant");
        let sign = if (self.m * (self.m - 1) / 2) % 2 == 1 { -1.0 } else { 1.0 };
        s * sign * PI.powi(self.m as i32 / 2)
    }

    /// The printed constant `(−1)^{m/2}(i/2π)^{−m/2}`.
    pub fn printed_constant(&self) -> Complex64 {
        let h = self.m as i32 / 2;
        let sign = if h % 2 == 1 { -1.0 } else { 1.0 };
        Complex64::new(0.0, 1.0 / (2.0 * PI)).powi(-h) * sign
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpinorBase {
    FlatTorus,
    RoundSphere,
}

/// `π*S` for `F` of rank 2 over a surface: `S = S⁺ ⊕ S⁻`, connection
/// `d + ¼θ^{ij}γᵢγⱼ = d + ½ω²₁γ₁γ₂`, symbol `L = Σ ξʲγⱼ`.
pub fn spinor_model(base: SpinorBase) -> Result<ModelSpec, ModelError> {
    let metric = match base {
        SpinorBase::FlatTorus => SurfaceMetric::flat_torus(),
        SpinorBase::RoundSphere => SurfaceMetric::round_sphere(),
    };
    let cl = clifford_generators(2)?;
    let (bframe, total) = frames(metric.topology, 1, 1)?;
    let symbol = symbol_from(&total, &cl.gammas, metric.topology.fiber_coords())?;
    let omega = metric.connection_one_form(&bframe)?;
    let spin = cl.gammas[0].mul(&cl.gammas[1]).scale(&ScalarExpr::ratio(1, 2));
    let theta_base = form_times(&bframe, &omega, &spin)?;
    let theta = crate::superconn::pullback_connection(&theta_base, &total)?;
    let sc = SuperconnectionLocal::new(theta, symbol)?;
    // Ω = [[0, −dω], [dω, 0]] for ∇e₁ = ω e₂.
    let domega = omega.exterior_d();
    let rot = Matrix::from_rows(vec![vec![ScalarExpr::zero(), ScalarExpr::int(-1)], vec![ScalarExpr::one(), ScalarExpr::zero()]])?;
    let bundle_curvature = form_times(&bframe, &domega, &rot)?;
    let name = match base {
        SpinorBase::FlatTorus => "torus-spinor",
        SpinorBase::RoundSphere => "sphere-spinor",
    };
    Ok(ModelSpec {
        name: name.into(),
        kind: ModelKind::Spinor,
        topology: metric.topology,
        forms: metric.topology.test_forms(&bframe),
        base_frame: bframe,
        sc,
        patches: patches(metric.topology),
        metric: Some(metric),
        bundle_curvature: Some(bundle_curvature),
    })
}

/// One-dimensional fiber over a circle: `L = ξ[[0, 1], [−1, 0]]`, `θ = 0`.
pub fn toy_circle() -> Result<ModelSpec, ModelError> {
    let (base, total) = frames(Topology::Circle, 1, 1)?;
    let j = const_matrix(&[&[(0, 0), (1, 0)], &[(-1, 0), (0, 0)]]);
    let symbol = symbol_from(&total, &[j], &["xi"])?;
    let sc = SuperconnectionLocal::new(GradedElement::zero(&total), symbol)?;
    Ok(ModelSpec {
        name: "toy-circle".into(),
        kind: ModelKind::Toy,
        topology: Topology::Circle,
        forms: Topology::Circle.test_forms(&base),
        base_frame: base,
        sc,
        patches: patches(Topology::Circle),
        metric: None,
        bundle_curvature: None,
    })
}

pub fn builtin(name: &str) -> Result<ModelSpec, ModelError> {
    match name {
        "torus-derham" => de_rham_surface(&SurfaceMetric::flat_torus()),
        "sphere-derham" => de_rham_surface(&SurfaceMetric::round_sphere()),
        "torus-spinor" => spinor_model(SpinorBase::FlatTorus),
        "sphere-spinor" => spinor_model(SpinorBase::RoundSphere),
        "toy-circle" => toy_circle(),
        other => Err(ModelError::UnknownModel(other.to_string())),
    }
}

/// A second connection on the sphere de Rham model:
/// `θ' = θ + sin²φ dψ ⊗ J + sin φ dφ ⊗ P₀` with `P₀` the projection onto `Λ⁰`.
/// Both added one-forms extend smoothly over the poles.
pub fn alternative_connection(model: &ModelSpec) -> Result<GradedElement<ScalarExpr>, ModelError> {
    if model.kind != ModelKind::DeRham || model.topology != Topology::Sphere {
        return Err(ModelError::UnsupportedBase(model.name.clone()));
    }
    let ext = ExteriorAlgebra::new(2);
    let base = &model.base_frame;
    let omega = model.metric.as_ref().expect("de Rham models carry a metric").connection_one_form(base)?;
    let mut theta = form_times(base, &omega, &ext.rotation(0, 1))?;
    let extra1 = FormElement::from_terms(base, vec![(Multiindex::single(1), parse("sin(phi)^2")?.simplify())])?;
    theta = theta.add(&form_times(base, &extra1, &ext.rotation(0, 1))?)?;
    let extra2 = FormElement::from_terms(base, vec![(Multiindex::single(0), parse("sin(phi)")?)])?;
    let p0 = Matrix::from_fn(4, |i, j| if i == 0 && j == 0 { ScalarExpr::one() } else { ScalarExpr::zero() });
    Ok(theta.add(&form_times(base, &extra2, &p0)?)?)
}

// ---------------------------------------------------------------------------
// Pfaffians and the Â-type determinant

/// Pfaffian of the `I×I` submatrix by expansion along the first row.
pub fn pfaffian(a: &Matrix<ScalarExpr>, idx: &[usize]) -> Result<ScalarExpr, ModelError> {
    if idx.len() % 2 == 1 {
        return Err(ModelError::OddMultiindex);
    }
    for &i in idx {
        for &j in idx {
            if !Coeff::add(a.get(i, j), a.get(j, i)).is_zero() {
                return Err(ModelError::NotAntisymmetric);
            }
        }
    }
    Ok(pf_rec(a, idx))
}

fn pf_rec(a: &Matrix<ScalarExpr>, idx: &[usize]) -> ScalarExpr {
    if idx.is_empty() {
        return ScalarExpr::one();
    }
    let mut terms = Vec::new();
    for k in 1..idx.len() {
        let rest: Vec<usize> = idx[1..].iter().copied().filter(|&x| x != idx[k]).collect();
        let t = Coeff::mul(a.get(idx[0], idx[k]), &pf_rec(a, &rest));
        terms.push(if k % 2 == 1 { t } else { Coeff::neg(&t) });
    }
    ScalarExpr::sum(terms).simplify()
}

/// Bernoulli numbers `B_0 … B_n` (with `B_1 = −1/2`).
pub fn bernoulli(n: usize) -> Vec<BigRational> {
    let mut b = vec![BigRational::one()];
    for m in 1..=n {
        let mut acc = BigRational::zero();
        let mut binom = BigInt::one();
        for (k, bk) in b.iter().enumerate() {
            acc += BigRational::from_integer(binom.clone()) * bk;
            binom = binom * BigInt::from(m + 1 - k) / BigInt::from(k + 1);
        }
        b.push(-acc / BigRational::from_integer(BigInt::from(m + 1)));
    }
    b
}

/// `det(sinh(Ω/2)/(Ω/2))^{1/2} = exp(½ Σ_k B_{2k}/(2k·(2k)!) tr Ω^{2k})`,
/// truncated at form degree `max_degree`.
pub fn a_hat_determinant(omega: &GradedElement<ScalarExpr>, max_degree: usize) -> Result<FormElement<ScalarExpr>, ModelError> {
    if !omega.component(Multiindex::EMPTY).is_zero() {
        return Err(ModelError::NotNilpotent);
    }
    let frame = omega.frame();
    let bern = bernoulli(max_degree.max(2));
    let mut series = FormElement::zero(frame);
    let mut power = GradedElement::identity(frame);
    let mut fact = BigInt::one();
    for j in 1..=max_degree {
        power = power.mul(omega)?;
        fact *= BigInt::from(j);
        if j % 2 == 1 || power.is_zero() {
            continue;
        }
        let coef = bern[j].clone() / BigRational::from_integer(BigInt::from(2 * j) * fact.clone());
        let tr = power.trace().degree_part_upto(max_degree);
        series = series.add(&tr.scale(&ScalarExpr::constant(ExactNum::real(coef))))?;
    }
    // exp of a nilpotent form: Σ sᵏ/k!
    let mut out = FormElement::scalar(frame, ScalarExpr::one());
    let mut term = FormElement::scalar(frame, ScalarExpr::one());
    for k in 1..=max_degree {
        term = term.wedge(&series)?.scale(&ScalarExpr::ratio(1, k as i64)).degree_part_upto(max_degree);
        if term.is_zero() {
            break;
        }
        out = out.add(&term)?;
    }
    Ok(out)
}

/// The Gaussian representative of `tr_s exp ∇²_L` on a spinor model, restricted
/// to the full vertical multiindex: `c·Â(Ω)·π^{−m/2} tᵐ e^{−t²|ξ|²} dξ¹…dξᵐ`.
#[derive(Clone, Debug)]
pub struct MathaiQuillenForm {
    /// `Â(Ω)·tᵐ e^{−t²|ξ|²} dξ¹∧…∧dξᵐ` on the total space, without constants.
    pub form: FormElement<ScalarExpr>,
    /// `det(sinh(Ω/2)/(Ω/2))^{1/2}` on the base.
    pub a_hat: FormElement<ScalarExpr>,
    pub m: usize,
    pub t: f64,
    /// `c·π^{−m/2}` with `c` the engine's fiber constant.
    pub engine_constant: Complex64,
    /// `c·π^{−m/2}` with `c` the printed constant.
    pub printed_constant: Complex64,
}

pub fn mathai_quillen_form(model: &ModelSpec, t: f64) -> Result<MathaiQuillenForm, ModelError> {
    let omega = match (&model.kind, &model.bundle_curvature) {
        (ModelKind::Spinor, Some(o)) => o,
        _ => return Err(ModelError::UnsupportedBase(format!("{} is not a spinor model", model.name))),
    };
    if !(t > 0.0 && t.is_finite()) {
        return Err(ModelError::UnsupportedMetric(format!("scale t = {t}")));
    }
    let m = model.fiber_dim();
    let cl = clifford_generators(m)?;
    let a_hat = a_hat_determinant(omega, model.base_dim())?;
    let total = model.sc.frame().clone();
    let tc = ScalarExpr::constant(ExactNum::from_f64(t).ok_or_else(|| ModelError::UnsupportedMetric(format!("scale t = {t}")))?);
    let r2 = ScalarExpr::sum(model.topology.fiber_coords().iter().map(|x| ScalarExpr::pow(ScalarExpr::var(x), 2)).collect());
    let gauss = ScalarExpr::product(vec![
        ScalarExpr::pow(tc.clone(), m as i64),
        ScalarExpr::exp(ScalarExpr::product(vec![ScalarExpr::int(-1), ScalarExpr::pow(tc, 2), r2])),
    ]);
    let vert = total.mask_of(crate::graded::CoordKind::Vertical);
    let vol = FormElement::from_terms(&total, vec![(vert, gauss)])?;
    let form = a_hat.reframe(&total)?.wedge(&vol)?;
    let norm = PI.powi(-(m as i32) / 2);
    Ok(MathaiQuillenForm {
        form,
        a_hat,
        m,
        t,
        engine_constant: cl.fiber_constant() * norm,
        printed_constant: cl.printed_constant() * norm,
    })
}

impl MathaiQuillenForm {
    /// `∫_fiber` at base point `x` by polar quadrature, scaled by the engine
    /// constant, as a form on the base (vertical volume form placed last).
    pub fn fiber_integral_at(&self, model: &ModelSpec, x: &[f64], level: u32) -> Result<FormElement<Complex64>, ModelError> {
        let vert = self.form.frame().mask_of(crate::graded::CoordKind::Vertical);
        let bcoords = model.base_coords();
        let fcoords = model.topology.fiber_coords();
        let radial = QuadratureRule::composite_legendre(0.0, 8.0 / self.t, 8, 12 + 4 * level as usize);
        let sphere = crate::quadrature::sphere_rule(self.m, level)?;
        let mut out: Vec<(Multiindex, Complex64)> = Vec::new();
        for (j, e) in self.form.terms() {
            if !vert.is_subset_of(*j) {
                continue;
            }
            let h = j.minus(vert);
            let mut acc = Complex64::new(0.0, 0.0);
            for s in 0..sphere.len() {
                for r in 0..radial.len() {
                    let rho = radial.node(r)[0];
                    let mut b: crate::exprkit::Binding = bcoords.iter().zip(x).map(|(n, v)| (n.to_string(), Complex64::new(*v, 0.0))).collect();
                    let dir: Vec<f64> = if self.m == 1 {
                        vec![sphere.node(s)[0]]
                    } else {
                        let a = sphere.node(s)[0];
                        vec![a.cos(), a.sin()]
                    };
                    for (n, d) in fcoords.iter().zip(&dir) {
                        b.insert(n.to_string(), Complex64::new(rho * d, 0.0));
                    }
                    let jac = rho.powi(self.m as i32 - 1);
                    acc += crate::exprkit::evaluate(e, &b)? * radial.weight(r) * sphere.weight(s) * jac;
                }
            }
            out.push((Multiindex(h.0 & model.base_frame.top().0), acc * self.engine_constant));
        }
        Ok(FormElement::from_terms(&model.base_frame, out)?)
    }

    /// `∫ π^{−m/2} tᵐ e^{−t²|ξ|²} dξ` over one fiber, by quadrature.
    pub fn gaussian_normalization(&self, level: u32) -> Result<f64, ModelError> {
        let radial = QuadratureRule::composite_legendre(0.0, 8.0 / self.t, 8, 12 + 4 * level as usize);
        let sphere_area = match self.m {
            1 => 2.0,
            2 => 2.0 * PI,
            m => 2.0 * PI.powf(m as f64 / 2.0) / libm_gamma(m as f64 / 2.0),
        };
        let r = radial.integrate(|p| p[0].powi(self.m as i32 - 1) * (-(self.t * p[0]).powi(2)).exp());
        Ok(PI.powf(-(self.m as f64) / 2.0) * self.t.powi(self.m as i32) * sphere_area * r)
    }
}

fn libm_gamma(x: f64) -> f64 {
    crate::zeta::gamma(Complex64::new(x, 0.0)).re
}

/// Outcome of [`qm_residue_check`].
#[derive(Clone, Debug)]
pub struct QmResidueReport {
    pub kappa: usize,
    /// Locations of the `R`-independent residues of `Γ(z)I(z, η)`.
    pub support: Vec<Complex64>,
    pub predicted: crate::zeta::PoleSupport,
    /// `Σ lim_{R→0} Res Γ(z)I(z, η)`.
    pub residue_current: Complex64,
    /// `∫_M η ∧ c·[Â(Ω)]_{n−κ}` with the engine constant.
    pub gaussian_current: Complex64,
    /// The same with the printed constant.
    pub printed_current: Complex64,
}

impl QmResidueReport {
    pub fn single_location(&self) -> bool {
        self.support.len() <= 1
    }

    pub fn relative_defect(&self) -> f64 {
        (self.residue_current - self.gaussian_current).norm() / self.gaussian_current.norm().max(1.0)
    }
}

/// Residue-side current of `η` against the Gaussian-side `∫_M η ∧ c·Â`.
pub fn qm_residue_check(model: &ModelSpec, eta: &FormElement<ScalarExpr>, level: u32) -> Result<QmResidueReport, crate::zeta::ZetaError> {
    use crate::zeta::{build_zeta_extension, limit_residues, predicted_pole_support, ZetaError, ZetaOptions, ZetaPath, RESIDUE_FLOOR};
    let dom = |e: ModelError| ZetaError::DomainError(e.to_string());
    let mq = mathai_quillen_form(model, 1.0).map_err(dom)?;
    let kappa = eta.degree().ok_or(ZetaError::NonHomogeneousEta)?;
    let n = model.base_dim();
    let opts = ZetaOptions { base_level: level, sphere_level: level, ..Default::default() };
    let ext = build_zeta_extension(model, eta, ZetaPath::Scalar, opts)?;
    let lims = limit_residues(&ext)?;
    let support = lims.iter().filter(|l| l.1.norm() > RESIDUE_FLOOR).map(|l| l.0).collect();
    let residue_current = lims.iter().map(|l| l.1).sum();
    let integrand = eta.wedge(&mq.a_hat).map_err(|e| dom(e.into()))?;
    let top = integrand.coefficient(model.base_frame.top());
    let rule = model.base_rule(level).map_err(dom)?;
    let coords = model.base_coords();
    let mut raw = Complex64::new(0.0, 0.0);
    for i in 0..rule.len() {
        let b: crate::exprkit::Binding =
            coords.iter().zip(rule.node(i)).map(|(c, v)| (c.to_string(), Complex64::new(*v, 0.0))).collect();
        raw += crate::exprkit::evaluate(&top, &b).map_err(|e| dom(e.into()))? * rule.weight(i);
    }
    let pi_m = PI.powf(mq.m as f64 / 2.0);
    Ok(QmResidueReport {
        kappa,
        support,
        predicted: predicted_pole_support(kappa, n, mq.m),
        residue_current,
        gaussian_current: raw * mq.engine_constant * pi_m,
        printed_current: raw * mq.printed_constant * pi_m,
    })
}

trait Truncate {
    fn degree_part_upto(&self, k: usize) -> Self;
}

impl Truncate for FormElement<ScalarExpr> {
    fn degree_part_upto(&self, k: usize) -> Self {
        let terms = self.terms().iter().filter(|(j, _)| j.len() <= k).map(|(j, c)| (*j, c.clone())).collect();
        FormElement::from_terms(self.frame(), terms).expect("same frame")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exterior_algebra_clifford_relations() {
        let e = ExteriorAlgebra::new(2);
        assert_eq!(e.basis, vec![0b00, 0b11, 0b01, 0b10]);
        let (c0, c1) = (e.clifford(0), e.clifford(1));
        let id = Matrix::<ScalarExpr>::identity(4);
        assert!(c0.mul(&c0).add(&id).is_zero());
        assert!(c0.mul(&c1).add(&c1.mul(&c0)).is_zero());
        // [J, c₀] = c₁ and [J, c₁] = −c₀
        let j = e.rotation(0, 1);
        assert!(j.mul(&c0).add(&c0.mul(&j).neg()).add(&c1.neg()).is_zero());
        assert!(j.mul(&c1).add(&c1.mul(&j).neg()).add(&c0).is_zero());
        let e3 = ExteriorAlgebra::new(3);
        for a in 0..3 {
            for b in 0..3 {
                let anti = e3.clifford(a).mul(&e3.clifford(b)).add(&e3.clifford(b).mul(&e3.clifford(a)));
                let want = if a == b { Matrix::identity(8).scale(&ScalarExpr::int(-2)) } else { Matrix::zeros(8) };
                assert!(anti.add(&want.neg()).is_zero());
            }
        }
    }

    #[test]
    fn clifford_data() {
        let c2 = clifford_generators(2).unwrap();
        assert!(c2.check());
        assert!(c2.gammas[0].mul(&c2.gammas[0]).add(&Matrix::identity(2)).is_zero());
        assert_eq!(c2.top_supertrace(), c(0, 2));
        assert!((c2.fiber_constant() - Complex64::new(0.0, -2.0 * PI)).norm() < 1e-14);
        assert!((c2.printed_constant() - Complex64::new(0.0, 2.0 * PI)).norm() < 1e-14);
        let c4 = clifford_generators(4).unwrap();
        assert_eq!((c4.p, c4.q, c4.gammas.len()), (2, 2, 4));
        assert!(c4.check());
        assert!(!c4.top_supertrace().is_zero());
        assert!(matches!(clifford_generators(3), Err(ModelError::OddDimension(3))));
    }

    #[test]
    fn pfaffians() {
        let a = Matrix::from_rows(vec![
            vec![ScalarExpr::zero(), ScalarExpr::var("a")],
            vec![Coeff::neg(&ScalarExpr::var("a")), ScalarExpr::zero()],
        ])
        .unwrap();
        assert_eq!(pfaffian(&a, &[0, 1]).unwrap(), ScalarExpr::var("a"));
        assert!(pfaffian(&a, &[]).unwrap().is_one());
        assert!(matches!(pfaffian(&a, &[0]), Err(ModelError::OddMultiindex)));
        let s = |i: usize, j: usize| -> ScalarExpr {
            match (i, j) {
                (0, 1) => ScalarExpr::var("a"),
                (1, 0) => Coeff::neg(&ScalarExpr::var("a")),
                (2, 3) => ScalarExpr::var("b"),
                (3, 2) => Coeff::neg(&ScalarExpr::var("b")),
                _ => ScalarExpr::zero(),
            }
        };
        let blk = Matrix::from_fn(4, s);
        assert_eq!(pfaffian(&blk, &[0, 1, 2, 3]).unwrap(), (ScalarExpr::var("a") * ScalarExpr::var("b")).simplify());
        let sym = Matrix::from_fn(2, |_, _| ScalarExpr::one());
        assert!(matches!(pfaffian(&sym, &[0, 1]), Err(ModelError::NotAntisymmetric)));
    }

    #[test]
    fn bernoulli_numbers() {
        let b = bernoulli(8);
        let r = |n: i64, d: i64| BigRational::new(BigInt::from(n), BigInt::from(d));
        assert_eq!(b[1], r(-1, 2));
        assert_eq!(b[2], r(1, 6));
        assert_eq!(b[3], r(0, 1));
        assert_eq!(b[4], r(-1, 30));
        assert_eq!(b[8], r(-1, 30));
    }

    #[test]
    fn de_rham_symbol_squares_to_minus_rho_squared() {
        for m in [SurfaceMetric::flat_torus(), SurfaceMetric::round_sphere()] {
            let model = de_rham_surface(&m).unwrap();
            let l = model.sc.symbol();
            let sq = l.mul(l).unwrap();
            let rho2 = parse("xi1^2 + xi2^2").unwrap();
            let want = GradedElement::identity(model.sc.frame()).scale(&Coeff::neg(&rho2));
            assert!(sq.sub(&want).unwrap().is_zero());
        }
        assert!(de_rham_surface(&SurfaceMetric::flat_torus()).unwrap().sc.theta().is_zero());
    }

    #[test]
    fn registry() {
        for name in BUILTIN_MODELS {
            let m = builtin(name).unwrap();
            assert_eq!(m.name, name);
            assert!(m.eta("one").is_ok());
            for f in &m.forms {
                assert!(f.form.exterior_d().is_zero(), "{name}/{}", f.name);
            }
        }
        assert!(matches!(builtin("nope"), Err(ModelError::UnknownModel(_))));
        assert!(matches!(builtin("toy-circle").unwrap().eta("area"), Err(ModelError::UnknownEta(_))));
    }
}
