use super::{Func, Node, ScalarExpr};

/// Unsimplified derivative tree.
pub(super) fn derivative(e: &ScalarExpr, var: &str) -> ScalarExpr {
    if !e.depends_on(var) {
        return ScalarExpr::zero();
    }
    match e.node() {
        Node::Const(_) => ScalarExpr::zero(),
        Node::Var(_) => ScalarExpr::one(),
        Node::Sum(ts) => ScalarExpr::sum(ts.iter().map(|t| derivative(t, var)).collect()),
        Node::Product(ts) => {
            let mut terms = Vec::new();
            for (i, t) in ts.iter().enumerate() {
                if !t.depends_on(var) {
                    continue;
                }
                let mut f: Vec<ScalarExpr> = ts.clone();
                f[i] = derivative(t, var);
                terms.push(ScalarExpr::product(f));
            }
            ScalarExpr::sum(terms)
        }
        Node::Pow(b, n) => ScalarExpr::product(vec![
            ScalarExpr::int(*n),
            ScalarExpr::pow(b.clone(), n - 1),
            derivative(b, var),
        ]),
        Node::Quotient(a, b) => {
            let num = ScalarExpr::sum(vec![
                ScalarExpr::product(vec![derivative(a, var), b.clone()]),
                -ScalarExpr::product(vec![a.clone(), derivative(b, var)]),
            ]);
            ScalarExpr::quotient(num, ScalarExpr::pow(b.clone(), 2))
        }
        Node::Func(f, a) => {
            let da = derivative(a, var);
            let outer = match f {
                Func::Sin => ScalarExpr::cos(a.clone()),
                Func::Cos => -ScalarExpr::sin(a.clone()),
                Func::Exp => e.clone(),
                Func::Sqrt => ScalarExpr::quotient(ScalarExpr::ratio(1, 2), e.clone()),
            };
            ScalarExpr::product(vec![outer, da])
        }
    }
}
