mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use qchern::graded::{super_commutator, GradedElement, Matrix, Multiindex, Parity};

const CASES: u32 = 500;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn associativity(seed in any::<u64>()) {
        let f = frame();
        let mut r = rng(seed);
        let (a, b, c) = (any_element(&mut r, &f, false), any_element(&mut r, &f, false), any_element(&mut r, &f, false));
        let lhs = a.mul(&b).unwrap().mul(&c).unwrap();
        let rhs = a.mul(&b.mul(&c).unwrap()).unwrap();
        prop_assert!(simplified_zero(&lhs.sub(&rhs).unwrap()));
    }

    #[test]
    fn koszul_sign_law(seed in any::<u64>()) {
        let f = frame();
        let mut r = rng(seed);
        let (j, k) = (multiindex(&mut r, f.dim()), multiindex(&mut r, f.dim()));
        let deg_t = r.gen_range(0..2usize);
        let t = block_matrix(&mut r, f.rank(), f.p(), deg_t, false);
        let deg_s = r.gen_range(0..2usize);
        let s = block_matrix(&mut r, f.rank(), f.p(), deg_s, false);
        let a = GradedElement::from_matrix(&f, j, t.clone()).unwrap();
        let b = GradedElement::from_matrix(&f, k, s.clone()).unwrap();
        let sign = inversion_sign(&j.indices(), &k.indices()) * if k.len() * deg_t % 2 == 1 { -1 } else { 1 };
        let want = match sign {
            0 => GradedElement::zero(&f),
            1 => GradedElement::from_matrix(&f, j.union(k), t.mul(&s)).unwrap(),
            _ => GradedElement::from_matrix(&f, j.union(k), t.mul(&s).neg()).unwrap(),
        };
        prop_assert!(simplified_zero(&a.mul(&b).unwrap().sub(&want).unwrap()));
    }

    #[test]
    fn graded_leibniz(seed in any::<u64>()) {
        let f = frame();
        let mut r = rng(seed);
        let pa = r.gen_range(0..2usize);
        let a = homogeneous(&mut r, &f, pa, true);
        let b = any_element(&mut r, &f, true);
        let lhs = a.mul(&b).unwrap().exterior_d();
        let second = a.mul(&b.exterior_d()).unwrap();
        let rhs = a.exterior_d().mul(&b).unwrap();
        let rhs = if pa == 1 { rhs.sub(&second) } else { rhs.add(&second) }.unwrap();
        prop_assert!(simplified_zero(&lhs.sub(&rhs).unwrap()));
    }

    #[test]
    fn supertrace_kills_supercommutators(seed in any::<u64>()) {
        let f = frame();
        let mut r = rng(seed);
        let (pa, pb) = (r.gen_range(0..2usize), r.gen_range(0..2usize));
        let a = homogeneous(&mut r, &f, pa, false);
        let b = homogeneous(&mut r, &f, pb, false);
        let c = super_commutator(&a, &b).unwrap();
        prop_assert!(c.supertrace().map_coeffs(|e| e.simplify()).is_zero());
    }

    #[test]
    fn parity_is_multiplicative(seed in any::<u64>()) {
        let f = frame();
        let mut r = rng(seed);
        let (pa, pb) = (r.gen_range(0..2usize), r.gen_range(0..2usize));
        let ab = homogeneous(&mut r, &f, pa, false).mul(&homogeneous(&mut r, &f, pb, false)).unwrap();
        let ab = ab.map_coeffs(|e| e.simplify());
        prop_assert!(ab.is_zero() || ab.parity().bit() == Some((pa + pb) % 2));
    }

    #[test]
    fn supertrace_commutes_with_d(seed in any::<u64>()) {
        let f = frame();
        let mut r = rng(seed);
        let a = any_element(&mut r, &f, true);
        let lhs = a.exterior_d().supertrace();
        let rhs = a.supertrace().exterior_d();
        prop_assert!(lhs.sub(&rhs).unwrap().map_coeffs(|e| e.simplify()).is_zero());
    }
}

#[test]
fn worked_products() {
    let f = frame();
    let t_odd = Matrix::from_fn(3, |i, j| if (i < 2) != (j < 2) { qchern::exprkit::ScalarExpr::one() } else { qchern::exprkit::ScalarExpr::zero() });
    let id = Matrix::identity(3);
    let dx = Multiindex::single(0);
    let dy = Multiindex::single(1);
    let a = GradedElement::from_matrix(&f, dx, t_odd.clone()).unwrap();
    let b = GradedElement::from_matrix(&f, dy, id.clone()).unwrap();
    let want = GradedElement::from_matrix(&f, dx.union(dy), t_odd.neg()).unwrap();
    assert!(simplified_zero(&a.mul(&b).unwrap().sub(&want).unwrap()));
    let dxi = GradedElement::from_matrix(&f, dx, id).unwrap();
    assert!(dxi.mul(&dxi).unwrap().is_zero());
    assert_eq!(GradedElement::from_matrix(&f, Multiindex::EMPTY, t_odd.clone()).unwrap().parity(), Parity::Odd);
    assert_eq!(GradedElement::from_matrix(&f, dx, t_odd).unwrap().parity(), Parity::Even);
}
