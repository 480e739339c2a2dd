use num_complex::Complex64 as C;
use qchern::chern::fiber_integral_at;
use qchern::exprkit::{evaluate, parse, Binding, ScalarExpr};
use qchern::graded::{super_commutator, ChartFrame, FormElement, GradedElement, Matrix, Multiindex};
use qchern::models::*;

fn binding(names: &[String], vals: &[f64]) -> Binding {
    names.iter().zip(vals).map(|(n, v)| (n.clone(), C::new(*v, 0.0))).collect()
}

#[test]
fn clifford_relations_hold_exactly() {
    for m in [2, 4] {
        assert!(clifford_generators(m).unwrap().check());
    }
    assert!(matches!(clifford_generators(3), Err(ModelError::OddDimension(3))));
}

#[test]
fn general_four_by_four_pfaffian() {
    let names = ["a01", "a02", "a03", "a12", "a13", "a23"];
    let entry = |i: usize, j: usize| -> ScalarExpr {
        if i == j {
            return ScalarExpr::zero();
        }
        let (lo, hi) = (i.min(j), i.max(j));
        let k = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)].iter().position(|p| *p == (lo, hi)).unwrap();
        let v = ScalarExpr::var(names[k]);
        if i < j { v } else { parse(&format!("-{}", names[k])).unwrap() }
    };
    let a = Matrix::from_fn(4, entry);
    let want = parse("a01*a23 - a02*a13 + a03*a12").unwrap().simplify();
    assert_eq!(pfaffian(&a, &[0, 1, 2, 3]).unwrap().simplify(), want);
    assert!(pfaffian(&a, &[]).unwrap().is_one());
    assert_eq!(pfaffian(&a, &[1, 3]).unwrap().simplify(), ScalarExpr::var("a13"));
}

/// Taylor coefficients of `sin(x/2)/(x/2)` (the eigenvalue factor of
/// `sinh(Ω/2)/(Ω/2)` for a rotation block with eigenvalues `±iω`).
fn sinc_half_coeff(k: usize) -> f64 {
    let fact: f64 = (1..=(2 * k + 1)).map(|i| i as f64).product();
    (-1f64).powi(k as i32) / (fact * 4f64.powi(k as i32))
}

#[test]
fn a_hat_quartic_coefficient() {
    let f = ChartFrame::split(&["x1", "x2", "x3", "x4"], &[], 2, 1).unwrap();
    let omega = FormElement::from_terms(
        &f,
        vec![(Multiindex::new(&[0, 1]).unwrap(), ScalarExpr::one()), (Multiindex::new(&[2, 3]).unwrap(), ScalarExpr::one())],
    )
    .unwrap();
    let rot = Matrix::from_rows(vec![
        vec![ScalarExpr::zero(), ScalarExpr::one(), ScalarExpr::zero()],
        vec![ScalarExpr::int(-1), ScalarExpr::zero(), ScalarExpr::zero()],
        vec![ScalarExpr::zero(), ScalarExpr::zero(), ScalarExpr::zero()],
    ])
    .unwrap();
    let terms = omega.terms().iter().map(|(j, c)| (*j, rot.scale(c))).collect();
    let big_omega = GradedElement::from_terms(&f, terms).unwrap();
    let ah = a_hat_determinant(&big_omega, 4).unwrap();
    // (1 + c₁ω² + …) per eigenvalue pair, square-rooted: coefficient of ω² is c₁ = −1/24.
    let c1 = sinc_half_coeff(1);
    assert!((c1 + 1.0 / 24.0).abs() < 1e-15);
    let b = Binding::new();
    let top = evaluate(&ah.coefficient(Multiindex::new(&[0, 1, 2, 3]).unwrap()), &b).unwrap();
    // ω² = 2 dx¹∧dx²∧dx³∧dx⁴.
    assert!((top.re - 2.0 * c1).abs() < 1e-12, "{top}");
    assert!((evaluate(&ah.coefficient(Multiindex::EMPTY), &b).unwrap() - 1.0).norm() < 1e-15);
    // On a surface, ω² = 0 and the series truncates to 1.
    let m = builtin("sphere-spinor").unwrap();
    let surf = a_hat_determinant(m.bundle_curvature.as_ref().unwrap(), 2).unwrap();
    assert_eq!(surf.terms().len(), 1);
    assert!(matches!(a_hat_determinant(&GradedElement::identity(&f), 4), Err(ModelError::NotNilpotent)));
}

#[test]
fn spinor_symbols_square_to_minus_rho_squared_and_are_homogeneous() {
    for name in ["torus-spinor", "sphere-spinor"] {
        let m = builtin(name).unwrap();
        let l = m.sc.symbol();
        let rho2 = parse("xi1^2 + xi2^2").unwrap();
        let want = GradedElement::identity(m.sc.frame()).scale(&(parse("-1").unwrap() * rho2));
        assert!(l.mul(l).unwrap().sub(&want).unwrap().is_zero(), "{name}");
        let t = ScalarExpr::var("t");
        let scaled = l.substitute("xi1", &ScalarExpr::product(vec![t.clone(), ScalarExpr::var("xi1")]));
        let scaled = scaled.substitute("xi2", &ScalarExpr::product(vec![t.clone(), ScalarExpr::var("xi2")]));
        assert!(scaled.sub(&l.scale(&t)).unwrap().is_zero());
    }
}

#[test]
fn spin_connection_preserves_the_fiber_metric() {
    let m = builtin("sphere-spinor").unwrap();
    let names = m.sc.frame().coords().to_vec();
    for pt in [[0.4, 1.0, 0.3, -0.2], [2.5, 5.0, -1.0, 0.7]] {
        let b = binding(&names, &pt);
        for a in m.sc.theta().terms().values() {
            let n = a.n();
            for i in 0..n {
                for j in 0..n {
                    let x = evaluate(a.get(i, j), &b).unwrap();
                    let y = evaluate(a.get(j, i), &b).unwrap().conj();
                    assert!((x + y).norm() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn flat_model_commutator_powers_vanish() {
    for name in ["torus-spinor", "torus-derham"] {
        let m = builtin(name).unwrap();
        let dl = m.sc.symbol().exterior_d().add(&super_commutator(m.sc.theta(), m.sc.symbol()).unwrap()).unwrap();
        let cube = dl.mul(&dl).unwrap().mul(&dl).unwrap();
        assert!(cube.is_zero(), "{name}");
        assert!(!dl.mul(&dl).unwrap().is_zero(), "{name}: square should survive");
    }
}

#[test]
fn mathai_quillen_fiber_integrals_match_chern_pipeline() {
    for (name, tol) in [("torus-spinor", 1e-6), ("sphere-spinor", 1e-4)] {
        let m = builtin(name).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let mq = mathai_quillen_form(&m, t).unwrap();
            assert!((mq.gaussian_normalization(1).unwrap() - 1.0).abs() < 1e-10);
            for x in [[0.7, 1.3], [2.1, 4.0], [1.0, 0.1]] {
                let a = mq.fiber_integral_at(&m, &x, 1).unwrap();
                let b = fiber_integral_at(&m, &x, 1).unwrap();
                let d = a.sub(&b).unwrap();
                let scale = b.terms().values().map(|v| v.norm()).fold(1.0, f64::max);
                assert!(d.terms().values().all(|v| v.norm() < tol * scale), "{name} t={t} x={x:?}");
            }
        }
        assert!((mq_constants(&m).0 + mq_constants(&m).1).norm() < 1e-12, "engine and printed constants differ by sign");
    }
    assert!(mathai_quillen_form(&builtin("sphere-derham").unwrap(), 1.0).is_err());
}

fn mq_constants(m: &ModelSpec) -> (C, C) {
    let mq = mathai_quillen_form(m, 1.0).unwrap();
    (mq.engine_constant, mq.printed_constant)
}

#[test]
fn qm_residue_current_equals_gaussian_current() {
    for name in ["torus-spinor", "sphere-spinor"] {
        let m = builtin(name).unwrap();
        for f in &m.forms {
            let r = qm_residue_check(&m, &f.form, 1).unwrap();
            assert!(r.single_location(), "{name} {}", f.name);
            assert!(r.relative_defect() < 1e-6, "{name} {}: {r:?}", f.name);
            if r.kappa % 2 == 1 {
                assert!(r.support.is_empty() && r.residue_current.norm() < 1e-12);
            }
            if let Some(&loc) = r.support.first() {
                assert_eq!(Some(loc.re), r.predicted.engine);
            }
        }
    }
    let t = builtin("torus-spinor").unwrap();
    let area = qm_residue_check(&t, &t.eta("area").unwrap().form, 1).unwrap();
    let four_pi_sq = 4.0 * std::f64::consts::PI.powi(2);
    assert!((area.gaussian_current - C::new(0.0, -2.0 * std::f64::consts::PI * four_pi_sq)).norm() < 1e-8);
}
