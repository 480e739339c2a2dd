#![allow(dead_code)]

use qchern::exprkit::ScalarExpr;
use qchern::graded::{ChartFrame, GradedElement, Matrix, Multiindex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub fn frame() -> Arc<ChartFrame> {
    ChartFrame::split(&["x", "y"], &["u"], 2, 1).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rational(rng: &mut impl Rng) -> ScalarExpr {
    ScalarExpr::ratio(rng.gen_range(-9..=9), rng.gen_range(1..=5))
}

/// Rational constant, or with `polynomial` a random polynomial of degree ≤ 2
/// in the frame coordinates with rational coefficients.
pub fn coefficient(rng: &mut impl Rng, polynomial: bool) -> ScalarExpr {
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

/// A matrix supported on the even (`block = 0`) or odd (`block = 1`) blocks.
pub fn block_matrix(rng: &mut impl Rng, n: usize, p: usize, block: usize, polynomial: bool) -> Matrix<ScalarExpr> {
    let mut vals = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let odd = ((i < p) != (j < p)) as usize;
            vals.push(if odd == block && rng.gen_bool(0.7) { coefficient(rng, polynomial) } else { ScalarExpr::zero() });
        }
    }
    Matrix::from_fn(n, |i, j| vals[i * n + j].clone())
}

pub fn multiindex(rng: &mut impl Rng, dim: usize) -> Multiindex {
    let idx: Vec<usize> = (0..dim).filter(|_| rng.gen_bool(0.4)).collect();
    Multiindex::new(&idx).unwrap()
}

/// A homogeneous element of total parity `parity` with up to four terms.
pub fn homogeneous(rng: &mut impl Rng, f: &Arc<ChartFrame>, parity: usize, polynomial: bool) -> GradedElement<ScalarExpr> {
    let mut terms: Vec<(Multiindex, Matrix<ScalarExpr>)> = Vec::new();
    for _ in 0..rng.gen_range(1..=4) {
        let j = multiindex(rng, f.dim());
        if terms.iter().any(|(k, _)| *k == j) {
            continue;
        }
        let block = (parity + j.len()) % 2;
        terms.push((j, block_matrix(rng, f.rank(), f.p(), block, polynomial)));
    }
    GradedElement::from_terms(f, terms).unwrap()
}

pub fn any_element(rng: &mut impl Rng, f: &Arc<ChartFrame>, polynomial: bool) -> GradedElement<ScalarExpr> {
    let a = homogeneous(rng, f, 0, polynomial);
    let b = homogeneous(rng, f, 1, polynomial);
    a.add(&b).unwrap()
}

pub fn simplified_zero(g: &GradedElement<ScalarExpr>) -> bool {
    g.map_coeffs(|e| e.simplify()).is_zero()
}

/// Sign of sorting the concatenation `j ⧺ k` by counting inversions; zero on overlap.
pub fn inversion_sign(j: &[usize], k: &[usize]) -> i32 {
    if j.iter().any(|a| k.contains(a)) {
        return 0;
    }
    let inv = j.iter().map(|a| k.iter().filter(|b| *b < a).count()).sum::<usize>();
    if inv % 2 == 0 {
        1
    } else {
        -1
    }
}
