//! Polynomial normal form over atoms.
//!
//! Rewrites applied: full expansion, like-term collection, exact constant
//! folding, `exp(a)·exp(b) → exp(a+b)`, `cos(u)^k → cos(u)^(k mod 2)·(1 − sin(u)²)^(k div 2)`,
//! `sqrt(u)^2 → u`, and constant evaluation of `sin(0)`, `cos(0)`, `exp(0)`
//! and square roots of rational squares.

use super::{ExactNum, ExprError, Func, Node, ScalarExpr};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) enum Atom {
    Var(Arc<str>),
    Func(Func, ScalarExpr),
    /// Reciprocal of a canonical sum; the exponent counts powers of `1/s`.
    Inv(ScalarExpr),
}

impl Atom {
    fn to_expr(&self) -> ScalarExpr {
        match self {
            Atom::Var(v) => ScalarExpr::var(v),
            Atom::Func(f, a) => ScalarExpr::func(*f, a.clone()).mark_canonical(),
            Atom::Inv(s) => s.clone(),
        }
    }

    fn depends_on(&self, var: &str) -> bool {
        match self {
            Atom::Var(v) => &**v == var,
            Atom::Func(_, a) | Atom::Inv(a) => a.depends_on(var),
        }
    }
}

type Monomial = Vec<(Atom, i64)>;

/// Sparse polynomial in atoms with exact Gaussian-rational coefficients.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Poly {
    terms: BTreeMap<Monomial, ExactNum>,
}

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: ExactNum) -> Self {
        let mut p = Self::zero();
        p.push(Vec::new(), c);
        p
    }

    fn atom(a: Atom, e: i64) -> Self {
        let mut p = Self::zero();
        p.push(vec![(a, e)], ExactNum::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn as_constant(&self) -> Option<ExactNum> {
        match self.terms.len() {
            0 => Some(ExactNum::zero()),
            1 => self.terms.get(&Vec::new()).cloned(),
            _ => None,
        }
    }

    fn push(&mut self, m: Monomial, c: ExactNum) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(old) => {
                let s = old.add(&c);
                if s.is_zero() {
                    self.terms.remove(&m);
                } else {
                    *old = s;
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let (mut big, small) = if self.terms.len() >= o.terms.len() { (self.clone(), o) } else { (o.clone(), self) };
        for (m, c) in &small.terms {
            big.push(m.clone(), c.clone());
        }
        big
    }

    pub fn neg(&self) -> Poly {
        Poly { terms: self.terms.iter().map(|(m, c)| (m.clone(), c.neg())).collect() }
    }

    pub fn scale(&self, k: &ExactNum) -> Poly {
        if k.is_zero() {
            return Poly::zero();
        }
        Poly { terms: self.terms.iter().map(|(m, c)| (m.clone(), c.mul(k))).collect() }
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &o.terms {
                mul_monomials(m1, m2, c1.mul(c2), &mut out);
            }
        }
        out
    }

    pub fn powi(&self, e: i64) -> Poly {
        if e < 0 {
            return self.inverse_pow(-e);
        }
        let mut acc = Poly::constant(ExactNum::one());
        let mut base = self.clone();
        let mut n = e;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    /// `self^(−n)` for `n > 0`.
    fn inverse_pow(&self, n: i64) -> Poly {
        if self.terms.len() == 1 {
            let (m, c) = self.terms.iter().next().unwrap();
            let c = c.powi(-n).expect("nonzero coefficient");
            let m: Monomial = m.iter().map(|(a, e)| (a.clone(), -e * n)).collect();
            let mut out = Poly::zero();
            normalize_into(m, c, &mut out);
            return out;
        }
        // Zero or a genuine sum: keep as a reciprocal atom; evaluating 1/0 errors later.
        Poly::atom(Atom::Inv(self.to_expr()), n)
    }

    pub fn from_expr(e: &ScalarExpr) -> Poly {
        match e.node() {
            Node::Const(c) => Poly::constant(c.clone()),
            Node::Var(v) => Poly::atom(Atom::Var(v.clone()), 1),
            Node::Sum(ts) => {
                let mut acc = Poly::zero();
                for t in ts {
                    let p = Poly::from_expr(t);
                    for (m, c) in p.terms {
                        acc.push(m, c);
                    }
                }
                acc
            }
            Node::Product(ts) => {
                let mut acc = Poly::constant(ExactNum::one());
                for t in ts {
                    if acc.is_zero() {
                        break;
                    }
                    acc = acc.mul(&Poly::from_expr(t));
                }
                acc
            }
            Node::Pow(b, n) => {
                if *n < 0 && b.is_canonical() && matches!(b.node(), Node::Sum(_)) {
                    return Poly::atom(Atom::Inv(b.clone()), -n);
                }
                Poly::from_expr(b).powi(*n)
            }
            Node::Quotient(a, b) => Poly::from_expr(a).mul(&Poly::from_expr(b).powi(-1)),
            Node::Func(f, a) => {
                let arg = a.simplify();
                if let Some(c) = arg.as_const() {
                    if let Some(v) = eval_const_func(*f, c) {
                        return Poly::constant(v);
                    }
                }
                let mut out = Poly::zero();
                normalize_into(vec![(Atom::Func(*f, arg), 1)], ExactNum::one(), &mut out);
                out
            }
        }
    }

    pub fn to_expr(&self) -> ScalarExpr {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (m, c) in &self.terms {
            let mut factors = Vec::with_capacity(m.len() + 1);
            if !c.is_one() || m.is_empty() {
                factors.push(ScalarExpr::constant(c.clone()));
            }
            for (a, e) in m {
                let base = a.to_expr();
                let exp = if matches!(a, Atom::Inv(_)) { -e } else { *e };
                factors.push(if exp == 1 { base } else { ScalarExpr::pow(base, exp).mark_canonical() });
            }
            terms.push(if factors.len() == 1 {
                factors.pop().unwrap()
            } else {
                ScalarExpr::from_node(Node::Product(factors)).mark_canonical()
            });
        }
        match terms.len() {
            0 => ScalarExpr::zero(),
            1 => terms.pop().unwrap(),
            _ => ScalarExpr::from_node(Node::Sum(terms)).mark_canonical(),
        }
    }

    pub fn collect_powers(&self, var: &str) -> Result<BTreeMap<i64, ScalarExpr>, ExprError> {
        let mut groups: BTreeMap<i64, Poly> = BTreeMap::new();
        for (m, c) in &self.terms {
            let mut power = 0;
            let mut rest = Vec::with_capacity(m.len());
            for (a, e) in m {
                match a {
                    Atom::Var(v) if &**v == var => power = *e,
                    _ if a.depends_on(var) => {
                        return Err(ExprError::NonPolynomial {
                            var: var.to_string(),
                            detail: a.to_expr().to_string(),
                        })
                    }
                    _ => rest.push((a.clone(), *e)),
                }
            }
            groups.entry(power).or_default().push(rest, c.clone());
        }
        Ok(groups.into_iter().filter(|(_, p)| !p.is_zero()).map(|(k, p)| (k, p.to_expr())).collect())
    }
}

fn eval_const_func(f: Func, c: &ExactNum) -> Option<ExactNum> {
    match f {
        Func::Sin if c.is_zero() => Some(ExactNum::zero()),
        Func::Cos | Func::Exp if c.is_zero() => Some(ExactNum::one()),
        Func::Sqrt => c.exact_sqrt(),
        _ => None,
    }
}

fn mul_monomials(a: &Monomial, b: &Monomial, c: ExactNum, out: &mut Poly) {
    let mut m: Monomial = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                m.push(a[i].clone());
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                m.push(b[j].clone());
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                let e = a[i].1 + b[j].1;
                if e != 0 {
                    m.push((a[i].0.clone(), e));
                }
                i += 1;
                j += 1;
            }
        }
    }
    m.extend_from_slice(&a[i..]);
    m.extend_from_slice(&b[j..]);
    normalize_into(m, c, out);
}

/// Apply the atom-level rewrites to a (sorted, merged) monomial and add it to `out`.
fn normalize_into(m: Monomial, c: ExactNum, out: &mut Poly) {
    // exp atoms: combine into a single exp with exponent one.
    let n_exp = m.iter().filter(|(a, e)| matches!(a, Atom::Func(Func::Exp, _)) && *e != 0).count();
    if n_exp > 1 || m.iter().any(|(a, e)| matches!(a, Atom::Func(Func::Exp, _)) && *e != 1) {
        let mut rest = Vec::with_capacity(m.len());
        let mut arg = Poly::zero();
        for (a, e) in m {
            match a {
                Atom::Func(Func::Exp, x) => arg = arg.add(&Poly::from_expr(&x).scale(&ExactNum::int(e))),
                _ => rest.push((a, e)),
            }
        }
        if arg.is_zero() {
            normalize_into(rest, c, out);
        } else {
            let e = vec![(Atom::Func(Func::Exp, arg.to_expr()), 1)];
            mul_monomials(&rest, &e, c, out);
        }
        return;
    }
    // Reciprocal atoms raised to a negative power are ordinary powers of the sum.
    if let Some(idx) = m.iter().position(|(a, e)| matches!(a, Atom::Inv(_)) && *e < 0) {
        let mut rest = m.clone();
        let (atom, e) = rest.remove(idx);
        let Atom::Inv(s) = atom else { unreachable!() };
        let mut p = Poly::zero();
        p.terms.insert(rest, c);
        for (m, c) in p.mul(&Poly::from_expr(&s).powi(-e)).terms {
            out.push(m, c);
        }
        return;
    }
    // cos(u)^k, k ≥ 2  and  sqrt(u)^k, |k| ≥ 2.
    if let Some(idx) = m.iter().position(|(a, e)| match a {
        Atom::Func(Func::Cos, _) => *e >= 2,
        Atom::Func(Func::Sqrt, _) => e.abs() >= 2,
        _ => false,
    }) {
        let mut rest = m.clone();
        let (atom, e) = rest.remove(idx);
        let mut p = Poly::zero();
        p.terms.insert(rest, c);
        let replacement = match &atom {
            Atom::Func(Func::Cos, u) => {
                let sin = Poly::atom_raw(Atom::Func(Func::Sin, u.clone()), 1);
                let one_minus = Poly::constant(ExactNum::one()).add(&sin.mul(&sin).neg());
                let mut r = one_minus.powi(e / 2);
                if e % 2 == 1 {
                    r = r.mul(&Poly::atom_raw(atom.clone(), 1));
                }
                r
            }
            Atom::Func(Func::Sqrt, u) => {
                let mut r = Poly::from_expr(u).powi(e / 2);
                if e % 2 != 0 {
                    r = r.mul(&Poly::atom_raw(atom.clone(), e.signum()));
                }
                r
            }
            _ => unreachable!(),
        };
        for (m, c) in p.mul(&replacement).terms {
            out.push(m, c);
        }
        return;
    }
    out.push(m, c);
}

impl Poly {
    fn atom_raw(a: Atom, e: i64) -> Poly {
        let mut p = Poly::zero();
        p.terms.insert(vec![(a, e)], ExactNum::one());
        p
    }
}
