//! Numeric evaluation: an exact path for function-free trees, a complex
//! floating path, a real path with domain checks, and a compiled register
//! machine for hot quadrature loops.

use super::{ExactNum, ExprError, Func, Node, ScalarExpr};
use num_complex::Complex64;
use std::collections::{BTreeMap, HashMap};

/// Variable name → value.
pub type Binding = BTreeMap<String, Complex64>;

/// Exact evaluation of a function-free tree.
pub fn evaluate_exact(e: &ScalarExpr, b: &BTreeMap<String, ExactNum>) -> Result<ExactNum, ExprError> {
    Ok(match e.node() {
        Node::Const(c) => c.clone(),
        Node::Var(v) => b.get(&**v).cloned().ok_or_else(|| ExprError::UnboundVariable(v.to_string()))?,
        Node::Sum(ts) => {
            let mut acc = ExactNum::zero();
            for t in ts {
                acc = acc.add(&evaluate_exact(t, b)?);
            }
            acc
        }
        Node::Product(ts) => {
            let mut acc = ExactNum::one();
            for t in ts {
                acc = acc.mul(&evaluate_exact(t, b)?);
            }
            acc
        }
        Node::Pow(base, n) => evaluate_exact(base, b)?.powi(*n).ok_or(ExprError::DivisionByZero)?,
        Node::Quotient(x, y) => evaluate_exact(x, b)?.div(&evaluate_exact(y, b)?).ok_or(ExprError::DivisionByZero)?,
        Node::Func(f, _) => return Err(ExprError::Domain(format!("`{}` has no exact evaluation", f.name()))),
    })
}

/// Complex evaluation (principal branch for `sqrt`).  Function-free trees
/// with finite bindings are evaluated exactly and rounded once.
pub fn evaluate(e: &ScalarExpr, b: &Binding) -> Result<Complex64, ExprError> {
    if e.is_rational() {
        let mut exact = BTreeMap::new();
        let mut ok = true;
        for v in e.free_vars() {
            match b.get(&v) {
                Some(x) => match ExactNum::from_c64(*x) {
                    Some(q) => {
                        exact.insert(v, q);
                    }
                    None => ok = false,
                },
                None => return Err(ExprError::UnboundVariable(v)),
            }
        }
        if ok {
            return evaluate_exact(e, &exact).map(|q| q.to_c64());
        }
    }
    eval_float(e, b)
}

fn eval_float(e: &ScalarExpr, b: &Binding) -> Result<Complex64, ExprError> {
    Ok(match e.node() {
        Node::Const(c) => c.to_c64(),
        Node::Var(v) => *b.get(&**v).ok_or_else(|| ExprError::UnboundVariable(v.to_string()))?,
        Node::Sum(ts) => {
            let mut acc = Complex64::new(0.0, 0.0);
            for t in ts {
                acc += eval_float(t, b)?;
            }
            acc
        }
        Node::Product(ts) => {
            let mut acc = Complex64::new(1.0, 0.0);
            for t in ts {
                acc *= eval_float(t, b)?;
            }
            acc
        }
        Node::Pow(base, n) => {
            let x = eval_float(base, b)?;
            if *n < 0 && x == Complex64::new(0.0, 0.0) {
                return Err(ExprError::DivisionByZero);
            }
            x.powi(*n as i32)
        }
        Node::Quotient(x, y) => {
            let d = eval_float(y, b)?;
            if d == Complex64::new(0.0, 0.0) {
                return Err(ExprError::DivisionByZero);
            }
            eval_float(x, b)? / d
        }
        Node::Func(f, a) => apply(*f, eval_float(a, b)?),
    })
}

fn apply(f: Func, x: Complex64) -> Complex64 {
    match f {
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Exp => x.exp(),
        Func::Sqrt => x.sqrt(),
    }
}

/// Real evaluation; `sqrt` of a negative number and complex constants are domain errors.
pub fn evaluate_real(e: &ScalarExpr, b: &BTreeMap<String, f64>) -> Result<f64, ExprError> {
    Ok(match e.node() {
        Node::Const(c) => {
            if !c.is_real() {
                return Err(ExprError::Domain(format!("complex constant {c} in real evaluation")));
            }
            c.to_c64().re
        }
        Node::Var(v) => *b.get(&**v).ok_or_else(|| ExprError::UnboundVariable(v.to_string()))?,
        Node::Sum(ts) => ts.iter().map(|t| evaluate_real(t, b)).sum::<Result<f64, _>>()?,
        Node::Product(ts) => ts.iter().map(|t| evaluate_real(t, b)).product::<Result<f64, _>>()?,
        Node::Pow(base, n) => {
            let x = evaluate_real(base, b)?;
            if *n < 0 && x == 0.0 {
                return Err(ExprError::DivisionByZero);
            }
            x.powi(*n as i32)
        }
        Node::Quotient(x, y) => {
            let d = evaluate_real(y, b)?;
            if d == 0.0 {
                return Err(ExprError::DivisionByZero);
            }
            evaluate_real(x, b)? / d
        }
        Node::Func(f, a) => {
            let x = evaluate_real(a, b)?;
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Sqrt if x < 0.0 => return Err(ExprError::Domain(format!("sqrt of negative value {x}"))),
                Func::Sqrt => x.sqrt(),
            }
        }
    })
}

#[derive(Clone, Debug)]
enum Instr {
    Const(Complex64),
    Var(usize),
    Add(Vec<usize>),
    Mul(Vec<usize>),
    Pow(usize, i32),
    Div(usize, usize),
    F(Func, usize),
}

/// Several expressions compiled into one register program; identical
/// subexpressions are computed once.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    vars: Vec<String>,
    code: Vec<Instr>,
    outputs: Vec<usize>,
}

impl CompiledExpr {
    pub fn compile(e: &ScalarExpr, vars: &[&str]) -> Result<Self, ExprError> {
        Self::compile_many(std::slice::from_ref(e), vars)
    }

    /// `vars` fixes the order of the value slice passed to [`eval`](Self::eval).
    pub fn compile_many(es: &[ScalarExpr], vars: &[&str]) -> Result<Self, ExprError> {
        let mut c = Compiler {
            vars: vars.iter().enumerate().map(|(i, v)| (v.to_string(), i)).collect(),
            code: Vec::new(),
            memo: HashMap::new(),
        };
        let outputs = es.iter().map(|e| c.emit(e)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { vars: vars.iter().map(|s| s.to_string()).collect(), code: c.code, outputs })
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluate all outputs into `out`; `regs` is scratch space reused across calls.
    pub fn eval_into(&self, vals: &[Complex64], regs: &mut Vec<Complex64>, out: &mut [Complex64]) {
        regs.clear();
        for ins in &self.code {
            let v = match ins {
                Instr::Const(c) => *c,
                Instr::Var(i) => vals[*i],
                Instr::Add(xs) => xs.iter().fold(Complex64::new(0.0, 0.0), |a, &i| a + regs[i]),
                Instr::Mul(xs) => xs.iter().fold(Complex64::new(1.0, 0.0), |a, &i| a * regs[i]),
                Instr::Pow(i, n) => regs[*i].powi(*n),
                Instr::Div(a, b) => regs[*a] / regs[*b],
                Instr::F(f, i) => apply(*f, regs[*i]),
            };
            regs.push(v);
        }
        for (o, &r) in out.iter_mut().zip(&self.outputs) {
            *o = regs[r];
        }
    }

    /// Single-output convenience.
    pub fn eval(&self, vals: &[Complex64]) -> Complex64 {
        let mut regs = Vec::with_capacity(self.code.len());
        let mut out = [Complex64::new(0.0, 0.0)];
        self.eval_into(vals, &mut regs, &mut out[..1.min(self.outputs.len())]);
        out[0]
    }
}

struct Compiler {
    vars: HashMap<String, usize>,
    code: Vec<Instr>,
    memo: HashMap<ScalarExpr, usize>,
}

impl Compiler {
    fn push(&mut self, i: Instr) -> usize {
        self.code.push(i);
        self.code.len() - 1
    }

    fn emit(&mut self, e: &ScalarExpr) -> Result<usize, ExprError> {
        if let Some(&r) = self.memo.get(e) {
            return Ok(r);
        }
        let ins = match e.node() {
            Node::Const(c) => Instr::Const(c.to_c64()),
            Node::Var(v) => Instr::Var(*self.vars.get(&**v).ok_or_else(|| ExprError::UnboundVariable(v.to_string()))?),
            Node::Sum(ts) => Instr::Add(ts.iter().map(|t| self.emit(t)).collect::<Result<_, _>>()?),
            Node::Product(ts) => Instr::Mul(ts.iter().map(|t| self.emit(t)).collect::<Result<_, _>>()?),
            Node::Pow(b, n) => Instr::Pow(self.emit(b)?, *n as i32),
            Node::Quotient(a, b) => {
                let x = self.emit(a)?;
                Instr::Div(x, self.emit(b)?)
            }
            Node::Func(f, a) => Instr::F(*f, self.emit(a)?),
        };
        let r = self.push(ins);
        self.memo.insert(e.clone(), r);
        Ok(r)
    }
}
