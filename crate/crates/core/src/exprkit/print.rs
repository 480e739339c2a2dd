//! Infix printer with minimal parentheses; output re-parses to an equal tree
//! up to sum/product flattening.

use super::{ExactNum, Node, ScalarExpr};
use std::fmt;

// Precedence levels: sum 1, product 2, unary minus 3, power 4, atom 5.
fn prec(e: &ScalarExpr) -> u8 {
    match e.node() {
        Node::Sum(_) => 1,
        Node::Product(_) | Node::Quotient(..) => 2,
        Node::Const(c) => const_prec(c),
        Node::Pow(..) => 4,
        _ => 5,
    }
}

fn const_prec(c: &ExactNum) -> u8 {
    use num_traits::{One, Signed};
    if c.is_compound() {
        1
    } else if c.is_real() {
        if c.re.is_negative() {
            3
        } else if c.re.is_integer() {
            5
        } else {
            2
        }
    } else if c.im.is_negative() {
        3
    } else if c.im.is_one() {
        5
    } else {
        2
    }
}

fn write_at(e: &ScalarExpr, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if prec(e) < min {
        write!(f, "(")?;
        write_expr(e, f)?;
        write!(f, ")")
    } else {
        write_expr(e, f)
    }
}

fn starts_negative(e: &ScalarExpr) -> Option<ScalarExpr> {
    match e.node() {
        Node::Const(c) if c.is_negative_real() => Some(ScalarExpr::constant(c.neg())),
        Node::Product(fs) => match fs[0].as_const() {
            Some(c) if c.is_negative_real() => {
                let mut rest = fs.clone();
                let pos = c.neg();
                if pos.is_one() {
                    rest.remove(0);
                } else {
                    rest[0] = ScalarExpr::constant(pos);
                }
                Some(ScalarExpr::product(rest))
            }
            _ => None,
        },
        _ => None,
    }
}

fn write_expr(e: &ScalarExpr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e.node() {
        Node::Const(c) => write!(f, "{c}"),
        Node::Var(v) => write!(f, "{v}"),
        Node::Sum(ts) => {
            for (i, t) in ts.iter().enumerate() {
                match (i, starts_negative(t)) {
                    (0, _) => write_at(t, 1, f)?,
                    (_, Some(pos)) => {
                        write!(f, " - ")?;
                        write_at(&pos, 2, f)?
                    }
                    (_, None) => {
                        write!(f, " + ")?;
                        write_at(t, 2, f)?
                    }
                }
            }
            Ok(())
        }
        Node::Product(fs) => {
            let mut rest: &[ScalarExpr] = fs;
            if let Some(c) = fs[0].as_const() {
                if c.is_negative_real() && c.neg().is_one() && fs.len() > 1 {
                    write!(f, "-")?;
                    rest = &fs[1..];
                    return write_factors(rest, f, 4);
                }
            }
            write_factors(rest, f, 3)
        }
        Node::Pow(b, n) => {
            write_at(b, 5, f)?;
            if *n < 0 {
                write!(f, "^({n})")
            } else {
                write!(f, "^{n}")
            }
        }
        Node::Quotient(a, b) => {
            write_at(a, 2, f)?;
            write!(f, "/")?;
            write_at(b, 4, f)
        }
        Node::Func(func, a) => {
            write!(f, "{}(", func.name())?;
            write_expr(a, f)?;
            write!(f, ")")
        }
    }
}

fn write_factors(fs: &[ScalarExpr], f: &mut fmt::Formatter<'_>, first_min: u8) -> fmt::Result {
    for (i, t) in fs.iter().enumerate() {
        if i > 0 {
            write!(f, "*")?;
        }
        // Right operands of `*` must bind tighter than `*` so the tree is preserved.
        write_at(t, if i == 0 { first_min } else { 4 }, f)?;
    }
    Ok(())
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, f)
    }
}
