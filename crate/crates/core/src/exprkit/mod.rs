//! Scalar symbolic expressions.
//!
//! Trees are immutable and shared (`Arc`).  Constants are exact Gaussian
//! rationals; the identifier `i` always denotes the imaginary unit.
//! [`ScalarExpr::simplify`] maps a tree to a canonical polynomial normal form
//! over atoms (variables, function applications, reciprocals of sums), which
//! makes zero tests exact for the identities the engine relies on, including
//! `sin² + cos² = 1`.

mod diff;
mod eval;
mod number;
mod parse;
mod poly;
mod print;

pub use eval::{evaluate, evaluate_exact, evaluate_real, Binding, CompiledExpr};
pub use number::ExactNum;
pub use parse::parse;
pub use poly::Poly;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("`{var}` does not enter polynomially: {detail}")]
    NonPolynomial { var: String, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Const(ExactNum),
    Var(Arc<str>),
    Sum(Vec<ScalarExpr>),
    Product(Vec<ScalarExpr>),
    Pow(ScalarExpr, i64),
    Quotient(ScalarExpr, ScalarExpr),
    Func(Func, ScalarExpr),
}

/// A shared, immutable expression tree.
#[derive(Clone)]
pub struct ScalarExpr {
    node: Arc<Node>,
    canonical: bool,
}

impl PartialEq for ScalarExpr {
    fn eq(&self, o: &Self) -> bool {
        Arc::ptr_eq(&self.node, &o.node) || self.node == o.node
    }
}
impl Eq for ScalarExpr {}

impl PartialOrd for ScalarExpr {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for ScalarExpr {
    fn cmp(&self, o: &Self) -> Ordering {
        if Arc::ptr_eq(&self.node, &o.node) {
            Ordering::Equal
        } else {
            self.node.cmp(&o.node)
        }
    }
}
impl Hash for ScalarExpr {
    fn hash<H: Hasher>(&self, h: &mut H) {
        self.node.hash(h)
    }
}

impl fmt::Debug for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{self}`")
    }
}

impl ScalarExpr {
    fn from_node(node: Node) -> Self {
        Self { node: Arc::new(node), canonical: false }
    }

    pub(crate) fn mark_canonical(mut self) -> Self {
        self.canonical = true;
        self
    }

    pub(crate) fn is_canonical(&self) -> bool {
        self.canonical
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn constant(c: ExactNum) -> Self {
        Self::from_node(Node::Const(c)).mark_canonical()
    }

    pub fn int(v: i64) -> Self {
        Self::constant(ExactNum::int(v))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Self::constant(ExactNum::ratio(num, den))
    }

    pub fn zero() -> Self {
        Self::int(0)
    }

    pub fn one() -> Self {
        Self::int(1)
    }

    pub fn imag_unit() -> Self {
        Self::constant(ExactNum::i())
    }

    pub fn var(name: &str) -> Self {
        Self::from_node(Node::Var(Arc::from(name))).mark_canonical()
    }

    /// Sum with nested sums flattened; no other rewriting.
    pub fn sum(terms: Vec<ScalarExpr>) -> Self {
        let mut flat = Vec::with_capacity(terms.len());
        for t in terms {
            match t.node() {
                Node::Sum(inner) => flat.extend(inner.iter().cloned()),
                _ => flat.push(t),
            }
        }
        match flat.len() {
            0 => Self::zero(),
            1 => flat.pop().unwrap(),
            _ => Self::from_node(Node::Sum(flat)),
        }
    }

    /// Product with nested products flattened; no other rewriting.
    pub fn product(factors: Vec<ScalarExpr>) -> Self {
        let mut flat = Vec::with_capacity(factors.len());
        for t in factors {
            match t.node() {
                Node::Product(inner) => flat.extend(inner.iter().cloned()),
                _ => flat.push(t),
            }
        }
        match flat.len() {
            0 => Self::one(),
            1 => flat.pop().unwrap(),
            _ => Self::from_node(Node::Product(flat)),
        }
    }

    pub fn pow(base: ScalarExpr, exp: i64) -> Self {
        Self::from_node(Node::Pow(base, exp))
    }

    pub fn quotient(num: ScalarExpr, den: ScalarExpr) -> Self {
        Self::from_node(Node::Quotient(num, den))
    }

    pub fn func(f: Func, arg: ScalarExpr) -> Self {
        Self::from_node(Node::Func(f, arg))
    }

    pub fn sin(arg: ScalarExpr) -> Self {
        Self::func(Func::Sin, arg)
    }

    pub fn cos(arg: ScalarExpr) -> Self {
        Self::func(Func::Cos, arg)
    }

    pub fn exp(arg: ScalarExpr) -> Self {
        Self::func(Func::Exp, arg)
    }

    pub fn sqrt(arg: ScalarExpr) -> Self {
        Self::func(Func::Sqrt, arg)
    }

    pub fn as_const(&self) -> Option<&ExactNum> {
        match self.node() {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Structural zero test; exact after [`simplify`](Self::simplify).
    pub fn is_zero(&self) -> bool {
        matches!(self.as_const(), Some(c) if c.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self.as_const(), Some(c) if c.is_one())
    }

    /// Canonical normal form.
    pub fn simplify(&self) -> ScalarExpr {
        if self.canonical {
            return self.clone();
        }
        Poly::from_expr(self).to_expr()
    }

    /// `d/dvar`, simplified.
    pub fn differentiate(&self, var: &str) -> ScalarExpr {
        diff::derivative(self, var).simplify()
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self.node() {
            Node::Const(_) => {}
            Node::Var(v) => {
                out.insert(v.to_string());
            }
            Node::Sum(ts) | Node::Product(ts) => ts.iter().for_each(|t| t.collect_vars(out)),
            Node::Pow(b, _) | Node::Func(_, b) => b.collect_vars(out),
            Node::Quotient(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn depends_on(&self, var: &str) -> bool {
        match self.node() {
            Node::Const(_) => false,
            Node::Var(v) => &**v == var,
            Node::Sum(ts) | Node::Product(ts) => ts.iter().any(|t| t.depends_on(var)),
            Node::Pow(b, _) | Node::Func(_, b) => b.depends_on(var),
            Node::Quotient(a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    /// True when the tree contains no function applications.
    pub fn is_rational(&self) -> bool {
        match self.node() {
            Node::Const(_) | Node::Var(_) => true,
            Node::Sum(ts) | Node::Product(ts) => ts.iter().all(|t| t.is_rational()),
            Node::Pow(b, _) => b.is_rational(),
            Node::Quotient(a, b) => a.is_rational() && b.is_rational(),
            Node::Func(..) => false,
        }
    }

    /// Replace every occurrence of `name` (capture-free: there are no binders).
    pub fn substitute(&self, name: &str, value: &ScalarExpr) -> ScalarExpr {
        let mut map = BTreeMap::new();
        map.insert(name.to_string(), value.clone());
        self.substitute_all(&map)
    }

    /// Simultaneous substitution.
    pub fn substitute_all(&self, map: &BTreeMap<String, ScalarExpr>) -> ScalarExpr {
        if map.is_empty() {
            return self.clone();
        }
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(v) => map.get(&**v).cloned().unwrap_or_else(|| self.clone()),
            Node::Sum(ts) => Self::sum(ts.iter().map(|t| t.substitute_all(map)).collect()),
            Node::Product(ts) => Self::product(ts.iter().map(|t| t.substitute_all(map)).collect()),
            Node::Pow(b, e) => Self::pow(b.substitute_all(map), *e),
            Node::Quotient(a, b) => Self::quotient(a.substitute_all(map), b.substitute_all(map)),
            Node::Func(f, a) => Self::func(*f, a.substitute_all(map)),
        }
    }

    /// Coefficients of the powers of `var`, which must enter polynomially
    /// (negative powers allowed) and not inside functions or reciprocals of sums.
    pub fn collect_powers(&self, var: &str) -> Result<BTreeMap<i64, ScalarExpr>, ExprError> {
        Poly::from_expr(self).collect_powers(var)
    }

    pub fn node_count(&self) -> usize {
        1 + match self.node() {
            Node::Const(_) | Node::Var(_) => 0,
            Node::Sum(ts) | Node::Product(ts) => ts.iter().map(|t| t.node_count()).sum(),
            Node::Pow(b, _) | Node::Func(_, b) => b.node_count(),
            Node::Quotient(a, b) => a.node_count() + b.node_count(),
        }
    }
}

impl From<i64> for ScalarExpr {
    fn from(v: i64) -> Self {
        Self::int(v)
    }
}

impl std::ops::Add for ScalarExpr {
    type Output = ScalarExpr;
    fn add(self, o: Self) -> Self {
        ScalarExpr::sum(vec![self, o])
    }
}

impl std::ops::Sub for ScalarExpr {
    type Output = ScalarExpr;
    fn sub(self, o: Self) -> Self {
        ScalarExpr::sum(vec![self, -o])
    }
}

impl std::ops::Mul for ScalarExpr {
    type Output = ScalarExpr;
    fn mul(self, o: Self) -> Self {
        ScalarExpr::product(vec![self, o])
    }
}

impl std::ops::Div for ScalarExpr {
    type Output = ScalarExpr;
    fn div(self, o: Self) -> Self {
        ScalarExpr::quotient(self, o)
    }
}

impl std::ops::Neg for ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> Self {
        if let Some(c) = self.as_const() {
            return ScalarExpr::constant(c.neg());
        }
        if let Node::Product(fs) = self.node() {
            if let Some(c) = fs[0].as_const() {
                let mut fs = fs.clone();
                let k = c.neg();
                if k.is_one() {
                    fs.remove(0);
                } else {
                    fs[0] = ScalarExpr::constant(k);
                }
                return ScalarExpr::product(fs);
            }
        }
        ScalarExpr::product(vec![ScalarExpr::int(-1), self])
    }
}
