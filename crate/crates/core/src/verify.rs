//! Seeded self-checks grouped into suites, each row reporting a measured
//! value against its tolerance. Deterministic for a fixed seed.

use crate::chern::*;
use crate::config::Tolerances;
use crate::exprkit::{evaluate, parse, Binding, ScalarExpr};
use crate::graded::{super_commutator, ChartFrame, GradedElement, Matrix, Multiindex};
use crate::models::*;
use crate::zeta::*;
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Algebra,
    Chern,
    Zeta,
    Models,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Algebra, Suite::Chern, Suite::Zeta, Suite::Models];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Algebra => "algebra",
            Suite::Chern => "chern",
            Suite::Zeta => "zeta",
            Suite::Models => "models",
        }
    }
}

/// One verified invariant. `measured ≤ tolerance` passes unless `lower_bound`,
/// in which case `measured ≥ tolerance` passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub lower_bound: bool,
    pub passed: bool,
    pub note: Option<String>,
}

impl Check {
    fn upper(suite: Suite, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { suite, name: name.into(), measured, tolerance, lower_bound: false, passed: measured <= tolerance, note: None }
    }

    fn lower(suite: Suite, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self { suite, name: name.into(), measured, tolerance, lower_bound: true, passed: measured >= tolerance, note: None }
    }

    fn failed(suite: Suite, name: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self {
            suite,
            name: name.into(),
            measured: f64::NAN,
            tolerance: f64::NAN,
            lower_bound: false,
            passed: false,
            note: Some(err.to_string()),
        }
    }
}

/// Number of random cases per algebraic property.
pub const ALGEBRA_CASES: u64 = 500;

pub fn run(suite: Suite, seed: u64, tol: &Tolerances) -> Vec<Check> {
    match suite {
        Suite::Algebra => algebra(seed),
        Suite::Chern => chern(seed, tol),
        Suite::Zeta => zeta(seed, tol),
        Suite::Models => models(seed, tol),
    }
}

// ---------------------------------------------------------------------------
// Algebra

fn rational(rng: &mut impl Rng) -> ScalarExpr {
    ScalarExpr::ratio(rng.gen_range(-9..=9), rng.gen_range(1..=5))
}

fn coefficient(rng: &mut impl Rng, polynomial: bool) -> ScalarExpr {
    if !polynomial {
        return rational(rng);
    }
    let vars = ["x", "y", "u"];
    let mut terms = vec![rational(rng)];
    for _ in 0..rng.gen_range(0..3) {
        let mut f = vec![rational(rng)];
        for _ in 0..rng.gen_range(1..=2) {
            f.push(ScalarExpr::var(vars[rng.gen_range(0..3)]));
        }
        terms.push(ScalarExpr::product(f));
    }
    ScalarExpr::sum(terms).simplify()
}

fn block_matrix(rng: &mut impl Rng, n: usize, p: usize, block: usize, polynomial: bool) -> Matrix<ScalarExpr> {
    let mut vals = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let odd = ((i < p) != (j < p)) as usize;
            vals.push(if odd == block && rng.gen_bool(0.7) { coefficient(rng, polynomial) } else { ScalarExpr::zero() });
        }
    }
    Matrix::from_fn(n, |i, j| vals[i * n + j].clone())
}

fn multiindex(rng: &mut impl Rng, dim: usize) -> Multiindex {
    let idx: Vec<usize> = (0..dim).filter(|_| rng.gen_bool(0.4)).collect();
    Multiindex::new(&idx).expect("in range")
}

fn homogeneous(rng: &mut impl Rng, f: &Arc<ChartFrame>, parity: usize, polynomial: bool) -> GradedElement<ScalarExpr> {
    let mut terms: Vec<(Multiindex, Matrix<ScalarExpr>)> = Vec::new();
    for _ in 0..rng.gen_range(1..=4) {
        let j = multiindex(rng, f.dim());
        if terms.iter().any(|(k, _)| *k == j) {
            continue;
        }
        terms.push((j, block_matrix(rng, f.rank(), f.p(), (parity + j.len()) % 2, polynomial)));
    }
    GradedElement::from_terms(f, terms).expect("distinct multiindices")
}

fn any_element(rng: &mut impl Rng, f: &Arc<ChartFrame>, polynomial: bool) -> GradedElement<ScalarExpr> {
    homogeneous(rng, f, 0, polynomial).add(&homogeneous(rng, f, 1, polynomial)).expect("same frame")
}

/// Sign of sorting `j ⧺ k` by counting inversions; zero on overlap.
fn inversion_sign(j: &[usize], k: &[usize]) -> i32 {
    if j.iter().any(|a| k.contains(a)) {
        return 0;
    }
    let inv: usize = j.iter().map(|a| k.iter().filter(|b| *b < a).count()).sum();
    1 - 2 * (inv % 2) as i32
}

fn is_zero(g: Result<GradedElement<ScalarExpr>, crate::graded::GradedError>) -> bool {
    g.map(|g| g.map_coeffs(|e| e.simplify()).is_zero()).unwrap_or(false)
}

fn algebra(seed: u64) -> Vec<Check> {
    let f = ChartFrame::split(&["x", "y"], &["u"], 2, 1).expect("valid frame");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = [0usize; 5];
    for _ in 0..ALGEBRA_CASES {
        let (a, b, c) = (any_element(&mut rng, &f, false), any_element(&mut rng, &f, false), any_element(&mut rng, &f, false));
        let assoc = a.mul(&b).and_then(|ab| ab.mul(&c)).and_then(|l| a.mul(&b.mul(&c)?).and_then(|r| l.sub(&r)));
        fails[0] += !is_zero(assoc) as usize;

        let (j, k) = (multiindex(&mut rng, f.dim()), multiindex(&mut rng, f.dim()));
        let (dt, ds) = (rng.gen_range(0..2usize), rng.gen_range(0..2usize));
        let t = block_matrix(&mut rng, f.rank(), f.p(), dt, false);
        let s = block_matrix(&mut rng, f.rank(), f.p(), ds, false);
        let koszul = GradedElement::from_matrix(&f, j, t.clone()).and_then(|a| {
            let prod = a.mul(&GradedElement::from_matrix(&f, k, s.clone())?)?;
            let sign = inversion_sign(&j.indices(), &k.indices()) * if k.len() * dt % 2 == 1 { -1 } else { 1 };
            let want = match sign {
                0 => GradedElement::zero(&f),
                1 => GradedElement::from_matrix(&f, j.union(k), t.mul(&s))?,
                _ => GradedElement::from_matrix(&f, j.union(k), t.mul(&s).neg())?,
            };
            prod.sub(&want)
        });
        fails[1] += !is_zero(koszul) as usize;

        let pa = rng.gen_range(0..2usize);
        let a = homogeneous(&mut rng, &f, pa, true);
        let b = any_element(&mut rng, &f, true);
        let leibniz = a.mul(&b).and_then(|ab| {
            let first = a.exterior_d().mul(&b)?;
            let second = a.mul(&b.exterior_d())?;
            let rhs = if pa == 1 { first.sub(&second)? } else { first.add(&second)? };
            ab.exterior_d().sub(&rhs)
        });
        fails[2] += !is_zero(leibniz) as usize;

        let (pa, pb) = (rng.gen_range(0..2usize), rng.gen_range(0..2usize));
        let a = homogeneous(&mut rng, &f, pa, false);
        let b = homogeneous(&mut rng, &f, pb, false);
        let st = super_commutator(&a, &b).map(|x| x.supertrace().map_coeffs(|e| e.simplify()).is_zero()).unwrap_or(false);
        fails[3] += !st as usize;
        let parity = a.mul(&b).map(|ab| ab.parity().bit() == Some((pa + pb) % 2) || ab.map_coeffs(|e| e.simplify()).is_zero());
        fails[4] += !parity.unwrap_or(false) as usize;
    }
    let names = [
        "associativity (failing cases)",
        "Koszul sign law (failing cases)",
        "graded Leibniz rule (failing cases)",
        "supertrace of supercommutators (failing cases)",
        "parity is multiplicative (failing cases)",
    ];
    names.iter().zip(fails).map(|(n, k)| Check::upper(Suite::Algebra, format!("{n}, {ALGEBRA_CASES} cases"), k as f64, 0.0)).collect()
}

// ---------------------------------------------------------------------------
// Currents

fn current(model: &ModelSpec, eta: &str) -> Result<C, String> {
    let f = &model.eta(eta).map_err(|e| e.to_string())?.form;
    chern_current(model, f, QuadOptions::default()).map(|e| e.value).map_err(|e| e.to_string())
}

fn chern(seed: u64, tol: &Tolerances) -> Vec<Check> {
    let s = Suite::Chern;
    let mut out = Vec::new();
    let mut push = |name: String, r: Result<Check, String>| out.push(r.unwrap_or_else(|e| Check::failed(s, name, e)));
    for name in BUILTIN_MODELS {
        let label = format!("{name}: closedness of ch(∇_L) at 20 seeded points");
        push(
            label.clone(),
            builtin(name)
                .map_err(|e| e.to_string())
                .and_then(|m| chern_form(&m.sc.curvature()).map_err(|e| e.to_string()))
                .and_then(|ch| ch.closedness_defect(20, seed).map_err(|e| e.to_string()))
                .map(|d| Check::upper(s, label, d, 1e-9)),
        );
        let label = format!("{name}: max |current| over exact test forms");
        push(
            label.clone(),
            builtin(name).map_err(|e| e.to_string()).and_then(|m| {
                let mut worst: f64 = 0.0;
                for f in m.forms.iter().filter(|f| f.exact) {
                    worst = worst.max(current(&m, &f.name)?.norm());
                }
                Ok(Check::upper(s, label, worst, tol.exact_form))
            }),
        );
    }
    let torus = builtin("torus-derham").map_err(|e| e.to_string());
    let sphere = builtin("sphere-derham").map_err(|e| e.to_string());
    let label = "torus-derham: |current of 1|".to_string();
    push(label.clone(), torus.and_then(|m| current(&m, "one")).map(|v| Check::upper(s, label, v.norm(), tol.euler_zero)));
    let base = sphere.clone().and_then(|m| current(&m, "one"));
    let label = "sphere-derham: |current of 1|".to_string();
    push(label.clone(), base.clone().map(|v| Check::lower(s, label, v.norm(), tol.euler_nonzero)));
    let label = "sphere-derham: |current of 1 / 8π² − 1|".to_string();
    push(label.clone(), base.clone().map(|v| Check::upper(s, label, (v / (8.0 * PI * PI) - 1.0).norm(), tol.quadrature_rel)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = rng.gen_range(2..=5) as i64;
    let amp = rng.gen_range(1..=4) as i64;
    for (label, metric) in [
        (format!("sphere-derham: metric scaled by {lambda}², relative change"), parse(&format!("{lambda}")).map(|l| SurfaceMetric::round_sphere().scaled(l))),
        (
            format!("sphere-derham: conformal factor e^(cos φ/{amp}), relative change"),
            parse(&format!("cos(phi)/{amp}")).map(|f| SurfaceMetric::round_sphere().conformal(&f)),
        ),
    ] {
        let r = metric
            .map_err(|e| e.to_string())
            .and_then(|g| de_rham_surface(&g).map_err(|e| e.to_string()))
            .and_then(|m| current(&m, "one"))
            .and_then(|v| base.clone().map(|b| Check::upper(s, label.clone(), (v - b).norm() / b.norm(), tol.metric_stability)));
        push(label, r);
    }
    let label = "sphere-derham: alternative connection, |Δ current|".to_string();
    let alt = sphere
        .clone()
        .and_then(|m| alternative_connection(&m).and_then(|t| m.with_connection(&t)).map_err(|e| e.to_string()))
        .and_then(|m| current(&m, "one"))
        .and_then(|v| base.clone().map(|b| Check::upper(s, label.clone(), (v - b).norm(), tol.connection_independence)));
    push(label, alt);
    for r in [0.5, 2.0] {
        let label = format!("sphere-derham: relative pairing at R = {r}, relative Δ");
        let v = sphere.clone().and_then(|m| {
            let eta = m.eta("one").map_err(|e| e.to_string())?.form.clone();
            relative_pairing(&m, &eta, r, QuadOptions::default()).map(|e| e.value).map_err(|e| e.to_string())
        });
        push(label.clone(), v.and_then(|v| base.clone().map(|b| Check::upper(s, label, (v - b).norm() / b.norm(), tol.relative_pairing))));
    }
    let label = "sphere-derham: R² slope of log ‖tr_s exp ∇²_L‖ (negated)".to_string();
    let fit = sphere.and_then(|m| {
        let rhos: Vec<f64> = (0..10).map(|i| 1.0 + 0.4 * i as f64).collect();
        let pts = rho_decay_samples(&m, &rhos).map_err(|e| e.to_string())?;
        let (_, slope, r2) = linear_fit(&pts.iter().map(|(r, y)| (r * r, *y)).collect::<Vec<_>>());
        Ok((slope, r2))
    });
    push(label.clone(), fit.clone().map(|(slope, _)| Check::lower(s, label, -slope, 1e-3)));
    let label = "sphere-derham: R² of the Gaussian decay fit".to_string();
    push(label.clone(), fit.map(|(_, r2)| Check::lower(s, label, r2, tol.decay_fit_r2)));
    out
}

// ---------------------------------------------------------------------------
// Zeta

fn zeta(seed: u64, tol: &Tolerances) -> Vec<Check> {
    let s = Suite::Zeta;
    let mut out = Vec::new();
    let mut push = |name: String, r: Result<Check, String>| out.push(r.unwrap_or_else(|e| Check::failed(s, name, e)));
    let toy = ZetaExtension::toy_gauss(false);
    for r in [0.1f64, 0.5, 1.0] {
        let label = format!("toy-gauss: residue sum vs ½e^(−R²) at R = {r}, relative");
        let want = 0.5 * (-r * r).exp();
        push(
            label.clone(),
            residue_report(&toy, r, DEFAULT_ZMAX)
                .map(|rep| Check::upper(s, label, (rep.residue_sum - want).norm() / want, tol.toy_residue_rel))
                .map_err(|e| e.to_string()),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..3 {
        let sigma = rng.gen_range(0.3..3.0);
        let z = C::new(rng.gen_range(0.3..3.0), rng.gen_range(-2.0..2.0));
        let label = format!("Mellin: σ = {sigma:.4}, z = {:.4}{:+.4}i, |quadrature − σ^(−z)Γ(z)|", z.re, z.im);
        push(label.clone(), mellin_check(C::new(sigma, 0.0), z).map(|(q, e)| Check::upper(s, label, (q - e).norm(), tol.mellin)).map_err(|e| e.to_string()));
    }
    let radii = [1.0, 0.5, 0.25];
    for name in BUILTIN_MODELS {
        let model = match builtin(name) {
            Ok(m) => m,
            Err(e) => {
                push(name.to_string(), Err(e.to_string()));
                continue;
            }
        };
        for f in &model.forms {
            let label = format!("{name}/{}: max over R ∈ {{1, 0.5, 0.25}} of |LHS − ΣRes| / max(1, |LHS|)", f.name);
            let r = (|| -> Result<f64, String> {
                let ext = build_zeta_extension(&model, &f.form, ZetaPath::Scalar, ZetaOptions::default())
                    .or_else(|_| build_zeta_extension(&model, &f.form, ZetaPath::Contour, ZetaOptions::default()))
                    .map_err(|e| e.to_string())?;
                let lhs = chern_current_outside(&model, &f.form, &radii, QuadOptions::default()).map_err(|e| e.to_string())?;
                let mut worst: f64 = 0.0;
                for (r, l) in radii.iter().zip(lhs) {
                    let rep = residue_report(&ext, *r, DEFAULT_ZMAX).map_err(|e| e.to_string())?;
                    worst = worst.max((l.value - rep.residue_sum).norm() / l.value.norm().max(1.0));
                }
                Ok(worst)
            })();
            push(label.clone(), r.map(|w| Check::upper(s, label, w, tol.finite_r)));
        }
    }
    let o = ZetaOptions { base_level: 0, sphere_level: 1, ..Default::default() };
    let zs: Vec<C> = (0..10).map(|_| C::new(rng.gen_range(-3.0..6.0), rng.gen_range(-3.0..3.0))).collect();
    for (name, eta) in [("sphere-derham", "one"), ("torus-spinor", "area"), ("sphere-spinor", "area")] {
        let label = format!("{name}/{eta}: scalar vs contour path at 10 seeded z, relative");
        let r = (|| -> Result<f64, String> {
            let m = builtin(name).map_err(|e| e.to_string())?;
            let f = &m.eta(eta).map_err(|e| e.to_string())?.form;
            let a = build_zeta_extension(&m, f, ZetaPath::Scalar, o).map_err(|e| e.to_string())?;
            let b = build_zeta_extension(&m, f, ZetaPath::Contour, o).map_err(|e| e.to_string())?;
            Ok(zs.iter().map(|z| (a.eval(*z, 1.0) - b.eval(*z, 1.0)).norm() / a.eval(*z, 1.0).norm().max(1.0)).fold(0.0, f64::max))
        })();
        push(label.clone(), r.map(|w| Check::upper(s, label, w, tol.path_equivalence)));
    }
    let label = "sphere-derham/one: residue-sum limit vs 8π², relative".to_string();
    let r = builtin("sphere-derham").map_err(|e| e.to_string()).and_then(|m| {
        let eta = m.eta("one").map_err(|e| e.to_string())?.form.clone();
        residue_sum_limit(&m, &eta, &radii, ZetaOptions::default(), QuadOptions::default(), tol.quadrature_rel)
            .map(|(_, rep)| (rep.sum_of_limits / (8.0 * PI * PI) - 1.0).norm())
            .map_err(|e| e.to_string())
    });
    push(label.clone(), r.map(|w| Check::upper(s, label, w, tol.residue_vs_current)));
    out
}

// ---------------------------------------------------------------------------
// Models

fn models(seed: u64, tol: &Tolerances) -> Vec<Check> {
    let s = Suite::Models;
    let mut out = Vec::new();
    let mut push = |name: String, r: Result<Check, String>| out.push(r.unwrap_or_else(|e| Check::failed(s, name, e)));
    for m in [2, 4] {
        let label = format!("Clifford relations γᵢγⱼ + γⱼγᵢ = −2δᵢⱼ, m = {m} (violations)");
        push(label.clone(), clifford_generators(m).map(|c| Check::upper(s, label, (!c.check()) as u8 as f64, 0.0)).map_err(|e| e.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pf_fail = 0;
    for _ in 0..50 {
        let mut a = [[0i64; 4]; 4];
        for i in 0..4 {
            for j in i + 1..4 {
                a[i][j] = rng.gen_range(-9..=9);
                a[j][i] = -a[i][j];
            }
        }
        let m = Matrix::from_fn(4, |i, j| ScalarExpr::int(a[i][j]));
        let want = a[0][1] * a[2][3] - a[0][2] * a[1][3] + a[0][3] * a[1][2];
        let ok = pfaffian(&m, &[0, 1, 2, 3]).ok().and_then(|p| evaluate(&p, &Binding::new()).ok()) == Some(C::new(want as f64, 0.0))
            && pfaffian(&m, &[1, 3]).ok().and_then(|p| evaluate(&p, &Binding::new()).ok()) == Some(C::new(a[1][3] as f64, 0.0))
            && pfaffian(&m, &[]).map(|p| p.is_one()).unwrap_or(false);
        pf_fail += !ok as usize;
    }
    push("Pfaffians of 50 seeded integer matrices (failures)".into(), Ok(Check::upper(s, "Pfaffians of 50 seeded integer matrices (failures)", pf_fail as f64, 0.0)));
    let label = "Â: |ω² coefficient + 1/24|".to_string();
    let ahat = (|| -> Result<f64, String> {
        let f = ChartFrame::split(&["x1", "x2", "x3", "x4"], &[], 2, 1).map_err(|e| e.to_string())?;
        let rot = Matrix::from_fn(3, |i, j| match (i, j) {
            (0, 1) => ScalarExpr::one(),
            (1, 0) => ScalarExpr::int(-1),
            _ => ScalarExpr::zero(),
        });
        let idx = |j: &[usize]| Multiindex::new(j).map_err(|e| e.to_string());
        let omega = GradedElement::from_terms(&f, vec![(idx(&[0, 1])?, rot.clone()), (idx(&[2, 3])?, rot)]).map_err(|e| e.to_string())?;
        let ah = a_hat_determinant(&omega, 4).map_err(|e| e.to_string())?;
        let top = evaluate(&ah.coefficient(idx(&[0, 1, 2, 3])?), &Binding::new()).map_err(|e| e.to_string())?;
        Ok((top.re / 2.0 + 1.0 / 24.0).abs())
    })();
    push(label.clone(), ahat.map(|d| Check::upper(s, label, d, tol.a_hat)));
    for name in ["torus-spinor", "sphere-spinor"] {
        let t = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let tol_mq = if name == "sphere-spinor" { tol.mathai_quillen_curved } else { tol.mathai_quillen_flat };
        let label = format!("{name}: Gaussian fiber normalization at t = {t}, |Δ|");
        let r = builtin(name).map_err(|e| e.to_string()).and_then(|m| mathai_quillen_form(&m, t).map(|q| (m, q)).map_err(|e| e.to_string()));
        push(
            label.clone(),
            r.clone().and_then(|(_, q)| q.gaussian_normalization(1).map(|g| Check::upper(s, label, (g - 1.0).abs(), tol.gaussian_normalization)).map_err(|e| e.to_string())),
        );
        let label = format!("{name}: fiber integrals, Gaussian form vs tr_s exp ∇²_L at 4 seeded points");
        let r = r.and_then(|(m, q)| {
            let mut worst: f64 = 0.0;
            for _ in 0..4 {
                let x = [rng.gen_range(0.2..2.9), rng.gen_range(0.0..6.28)];
                let a = q.fiber_integral_at(&m, &x, 1).map_err(|e| e.to_string())?;
                let b = fiber_integral_at(&m, &x, 1).map_err(|e| e.to_string())?;
                let d = a.sub(&b).map_err(|e| e.to_string())?;
                worst = worst.max(d.terms().values().map(|v| v.norm()).fold(0.0, f64::max));
            }
            Ok(Check::upper(s, label.clone(), worst, tol_mq))
        });
        push(label, r);
    }
    for name in BUILTIN_MODELS {
        let label = format!("{name}: ‖L² + ρ²‖ at 10 seeded points");
        let r = builtin(name).map_err(|e| e.to_string()).and_then(|m| {
            let sym = m.sc.symbol();
            let sq = sym.mul(sym).map_err(|e| e.to_string())?;
            let coords = m.sc.frame().coords().to_vec();
            let fib: Vec<String> = m.sc.frame().vertical().iter().map(|v| v.to_string()).collect();
            let mut worst: f64 = 0.0;
            for _ in 0..10 {
                let vals: Vec<f64> = coords.iter().map(|_| rng.gen_range(0.2..2.9)).collect();
                let b: Binding = coords.iter().zip(&vals).map(|(n, v)| (n.clone(), C::new(*v, 0.0))).collect();
                let rho2: f64 = coords.iter().zip(&vals).filter(|(n, _)| fib.contains(n)).map(|(_, v)| v * v).sum();
                for (j, a) in sq.terms() {
                    for i in 0..a.n() {
                        for k in 0..a.n() {
                            let v = evaluate(a.get(i, k), &b).map_err(|e| e.to_string())?;
                            let want = if j.is_empty() && i == k { -rho2 } else { 0.0 };
                            worst = worst.max((v - want).norm());
                        }
                    }
                }
            }
            Ok(Check::upper(s, label.clone(), worst, 1e-12))
        });
        push(label, r);
    }
    out
}
