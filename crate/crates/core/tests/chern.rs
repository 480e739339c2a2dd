use num_complex::Complex64 as C;
use qchern::chern::*;
use qchern::exprkit::{parse, Binding};
use qchern::graded::{GradedElement, Multiindex};
use qchern::models::*;
use std::f64::consts::PI;

fn four_pi_sq() -> f64 {
    4.0 * PI * PI
}

fn current(model: &ModelSpec, eta: &str) -> C {
    chern_current(model, &model.eta(eta).unwrap().form, QuadOptions::default()).unwrap().value
}

#[test]
fn euler_currents_are_proportional_to_euler_characteristic() {
    // χ(S²) = 2, χ(T²) = 0, with a common factor 4π².
    let sphere = current(&builtin("sphere-derham").unwrap(), "one");
    let torus = current(&builtin("torus-derham").unwrap(), "one");
    assert!((sphere - 2.0 * four_pi_sq()).norm() < 1e-6 * four_pi_sq(), "{sphere}");
    assert!(torus.norm() < 1e-8, "{torus}");
}

#[test]
fn exact_forms_have_vanishing_currents() {
    for name in ["sphere-derham", "torus-derham", "torus-spinor", "sphere-spinor", "toy-circle"] {
        let m = builtin(name).unwrap();
        for f in m.forms.iter().filter(|f| f.exact) {
            let v = chern_current(&m, &f.form, QuadOptions::default()).unwrap().value;
            assert!(v.norm() < 1e-6, "{name} {}: {v}", f.name);
        }
    }
}

#[test]
fn current_is_connection_and_metric_independent() {
    let m = builtin("sphere-derham").unwrap();
    let base = current(&m, "one");
    let alt = m.with_connection(&alternative_connection(&m).unwrap()).unwrap();
    assert!((current(&alt, "one") - base).norm() < 1e-6);
    for metric in [
        SurfaceMetric::round_sphere().conformal(&parse("cos(phi)/4").unwrap()),
        SurfaceMetric::round_sphere().scaled(parse("9/4").unwrap()),
    ] {
        let v = current(&de_rham_surface(&metric).unwrap(), "one");
        assert!((v - base).norm() < 1e-4 * base.norm(), "{v}");
    }
}

#[test]
fn relative_pairing_matches_current_for_every_radius() {
    let m = builtin("sphere-derham").unwrap();
    let eta = &m.eta("one").unwrap().form;
    let base = current(&m, "one");
    for r in [0.5, 2.0] {
        let v = relative_pairing(&m, eta, r, QuadOptions::default()).unwrap().value;
        assert!((v - base).norm() < 1e-4 * base.norm(), "R = {r}: {v}");
    }
}

#[test]
fn spinor_currents() {
    let torus = builtin("torus-spinor").unwrap();
    let sphere = builtin("sphere-spinor").unwrap();
    let c = C::new(0.0, -2.0 * PI);
    assert!((current(&torus, "area") - c * four_pi_sq()).norm() < 1e-6 * four_pi_sq());
    assert!((current(&sphere, "area") - c * 4.0 * PI).norm() < 1e-6 * four_pi_sq());
    assert!(current(&torus, "one").norm() < 1e-8);
}

#[test]
fn transgression_differential_is_connection_chern_form() {
    let m = builtin("sphere-spinor").unwrap();
    let beta = transgression_beta(&m.sc, 0.25).unwrap();
    assert_eq!(beta.vars().last().map(String::as_str), Some("rho"));
    for p in [[0.7, 1.3, 0.4, 1.1], [2.1, 4.0, 2.9, 0.6], [1.4, 0.2, 5.5, 1.8]] {
        let d = beta.eval_d(&p).unwrap();
        let ch = beta.connection_chern(&p).unwrap();
        let chmax = ch.terms().values().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(chmax > 0.1, "connection Chern form should not vanish here");
        let diff = d.sub(&ch).unwrap();
        let err = diff.terms().values().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-6 * chmax, "{p:?}: {err:e}");
    }
}

#[test]
fn homotopy_form_transgresses_between_connections() {
    let m = builtin("torus-derham").unwrap();
    let j = ExteriorAlgebra::new(2).rotation(0, 1);
    let theta = GradedElement::from_matrix(&m.base_frame, Multiindex::single(1), j.scale(&parse("sin(x1)/2").unwrap())).unwrap();
    let m1 = m.with_connection(&theta).unwrap();
    let beta = homotopy_difference(&m.sc, &m1.sc).unwrap();
    let ch0 = chern_form(&m.sc.curvature()).unwrap().form;
    let ch1 = chern_form(&m1.sc.curvature()).unwrap().form;
    let defect = beta.exterior_d().sub(&ch1.sub(&ch0).unwrap()).unwrap();
    let vars = m.sc.frame().coords().to_vec();
    for pt in [[0.3, 1.2, 0.5, -0.7], [2.0, -1.0, 1.1, 0.2], [4.4, 0.9, -0.3, -1.4]] {
        let b: Binding = vars.iter().zip(pt).map(|(v, x)| (v.clone(), C::new(x, 0.0))).collect();
        let e = defect.eval(&b).unwrap();
        let scale = ch1.eval(&b).unwrap().terms().values().map(|v| v.norm()).fold(1.0, f64::max);
        assert!(e.terms().values().all(|v| v.norm() < 1e-10 * scale), "{pt:?}");
    }
}

#[test]
fn chern_forms_are_closed() {
    for name in ["torus-spinor", "sphere-derham"] {
        let m = builtin(name).unwrap();
        let ch = chern_form(&m.sc.curvature()).unwrap();
        assert!(ch.closedness_defect(20, 7).unwrap() < 1e-9, "{name}");
    }
}

#[test]
fn rho_decay_is_gaussian() {
    let m = builtin("sphere-derham").unwrap();
    let rhos: Vec<f64> = (0..8).map(|i| 1.0 + 0.5 * i as f64).collect();
    let pts: Vec<(f64, f64)> = rho_decay_samples(&m, &rhos).unwrap().into_iter().map(|(r, y)| (r * r, y)).collect();
    let (_, slope, r2) = linear_fit(&pts);
    assert!(slope < 0.0 && r2 >= 0.999, "slope {slope}, R² {r2}");
}

#[test]
fn outside_currents_decrease_to_zero() {
    let m = builtin("sphere-derham").unwrap();
    let eta = &m.eta("one").unwrap().form;
    let v = chern_current_outside(&m, eta, &[0.01, 1.0, 3.0], QuadOptions::default()).unwrap();
    let total = current(&m, "one");
    assert!((v[0].value - total).norm() < 1e-3 * total.norm());
    assert!(v[1].value.norm() < v[0].value.norm() && v[2].value.norm() < 1e-2);
    assert!(matches!(chern_current_outside(&m, eta, &[0.0], QuadOptions::default()), Err(ChernError::BadRadius(_))));
}
