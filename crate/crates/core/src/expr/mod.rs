//! Scalar arithmetic expressions in named variables.
//!
//! Expressions are immutable trees built by [`parse`] or by the smart
//! constructors on [`Expr`]. They can be evaluated against any
//! [`Environment`], differentiated symbolically with [`Expr::differentiate`],
//! and lowered to a flat [`Program`] for repeated evaluation in integrator
//! inner loops.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := base ('^' '-'? integer)?
//! base   := number | ident | func '(' expr ')' | '(' expr ')'
//! func   := exp | log | sqrt | sin | cos | neg
//! ```

mod diff;
mod jet;
mod parse;
mod program;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

pub use jet::ExprJet;
pub use parse::parse;
pub use program::Program;

/// Errors raised while parsing or evaluating expressions.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at offset {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
}

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Neg,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Neg => "neg",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "neg" => Func::Neg,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }

    pub(crate) fn apply(self, a: f64) -> Result<f64, ExprError> {
        let v = match self {
            Func::Neg => -a,
            Func::Exp => a.exp(),
            Func::Log => {
                if a <= 0.0 {
                    return Err(domain("log", format!("argument {a} is not positive")));
                }
                a.ln()
            }
            Func::Sqrt => {
                if a < 0.0 {
                    return Err(domain("sqrt", format!("argument {a} is negative")));
                }
                a.sqrt()
            }
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
        };
        finite(self.name(), v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    pub(crate) fn apply(self, a: f64, b: f64) -> Result<f64, ExprError> {
        let v = match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => {
                if b == 0.0 {
                    return Err(domain("division", "division by zero".into()));
                }
                a / b
            }
        };
        finite("arithmetic", v)
    }
}

pub(crate) fn powi(a: f64, n: i32) -> Result<f64, ExprError> {
    if n < 0 && a == 0.0 {
        return Err(domain("power", "zero raised to a negative power".into()));
    }
    finite("power", a.powi(n))
}

fn domain(op: &'static str, detail: String) -> ExprError {
    ExprError::Domain { op, detail }
}

fn finite(op: &'static str, v: f64) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(op, format!("non-finite result {v}")))
    }
}

/// A named variable together with its slot in the positional layout the
/// expression was parsed against.
#[derive(Debug, Clone)]
pub struct Var {
    name: Arc<str>,
    slot: usize,
}

impl Var {
    pub fn new(name: &str, slot: usize) -> Self {
        Var { name: Arc::from(name), slot }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn slot(&self) -> usize {
        self.slot
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

/// Expression tree. Children are shared, so cloning is cheap.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(Func, Arc<Expr>),
    Binary(BinOp, Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, i32),
}

/// Variable bindings for [`Expr::eval`].
pub trait Environment {
    fn lookup(&self, var: &Var) -> Option<f64>;
}

impl Environment for HashMap<String, f64> {
    fn lookup(&self, var: &Var) -> Option<f64> {
        self.get(var.name()).copied()
    }
}

impl Environment for HashMap<&str, f64> {
    fn lookup(&self, var: &Var) -> Option<f64> {
        self.get(var.name()).copied()
    }
}

/// Positional binding: the value of a variable is read from its slot.
impl Environment for [f64] {
    fn lookup(&self, var: &Var) -> Option<f64> {
        self.get(var.slot).copied()
    }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(name: &str, slot: usize) -> Expr {
        Expr::Var(Var::new(name, slot))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        if a.is_zero() {
            return b;
        }
        if b.is_zero() {
            return a;
        }
        Expr::fold_binary(BinOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        if b.is_zero() {
            return a;
        }
        if a.is_zero() {
            return Expr::neg(b);
        }
        Expr::fold_binary(BinOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        if a.is_zero() || b.is_zero() {
            return Expr::Const(0.0);
        }
        if a.is_one() {
            return b;
        }
        if b.is_one() {
            return a;
        }
        Expr::fold_binary(BinOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        if b.is_one() {
            return a;
        }
        if a.is_zero() && !b.is_zero() {
            return Expr::Const(0.0);
        }
        Expr::fold_binary(BinOp::Div, a, b)
    }

    pub fn pow(a: Expr, n: i32) -> Expr {
        match n {
            0 => Expr::Const(1.0),
            1 => a,
            _ => match a.as_const().map(|c| powi(c, n)) {
                Some(Ok(v)) => Expr::Const(v),
                _ => Expr::Pow(Arc::new(a), n),
            },
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Unary(Func::Neg, inner) => (*inner).clone(),
            other => Expr::Unary(Func::Neg, Arc::new(other)),
        }
    }

    pub fn apply(f: Func, a: Expr) -> Expr {
        if f == Func::Neg {
            return Expr::neg(a);
        }
        match a.as_const().map(|c| f.apply(c)) {
            Some(Ok(v)) => Expr::Const(v),
            _ => Expr::Unary(f, Arc::new(a)),
        }
    }

    fn fold_binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Ok(v) = op.apply(x, y) {
                return Expr::Const(v);
            }
        }
        Expr::Binary(op, Arc::new(a), Arc::new(b))
    }

    /// Names of all variables occurring in the expression.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.name().to_string());
            }
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn eval<E: Environment + ?Sized>(&self, env: &E) -> Result<f64, ExprError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => env.lookup(v).ok_or_else(|| ExprError::UnboundVariable(v.name().to_string())),
            Expr::Unary(f, a) => f.apply(a.eval(env)?),
            Expr::Binary(op, a, b) => op.apply(a.eval(env)?, b.eval(env)?),
            Expr::Pow(a, n) => powi(a.eval(env)?, *n),
        }
    }

    /// Lower to a postfix program evaluated against positional slots.
    pub fn compile(&self) -> Program {
        Program::compile(self)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 => write!(f, "({c:?})"),
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Unary(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Pow(a, n) => write!(f, "({a})^{n}"),
        }
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    const VARS: [&str; 2] = ["x1", "x2"];

    fn source() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (1u32..300).prop_map(|c| format!("{}", c as f64 / 100.0)),
            Just("x1".to_string()),
            Just("x2".to_string()),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
                inner.clone().prop_map(|a| format!("({a})^2")),
                inner.clone().prop_map(|a| format!("-({a})")),
                inner.clone().prop_map(|a| format!("sin({a})")),
                inner.clone().prop_map(|a| format!("cos({a})")),
                inner.prop_map(|a| format!("exp(0.1*({a}))")),
            ]
        })
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
    }

    proptest! {
        #[test]
        fn display_round_trips(src in source(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let e = parse(&src, &VARS).unwrap();
            let again = parse(&e.to_string(), &VARS).unwrap();
            let v = [x, y];
            prop_assert!(close(e.eval(&v[..]).unwrap(), again.eval(&v[..]).unwrap(), 1e-12));
        }

        #[test]
        fn compiled_matches_tree(src in source(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let e = parse(&src, &VARS).unwrap();
            let v = [x, y];
            prop_assert!(close(e.eval(&v[..]).unwrap(), e.compile().eval(&v).unwrap(), 1e-12));
        }

        #[test]
        fn gradient_matches_differences(src in source(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let e = parse(&src, &VARS).unwrap();
            let jet = ExprJet::new(&e, &VARS, false);
            let mut g = [0.0; 2];
            jet.gradient(&[x, y], &mut g).unwrap();
            let h = 1e-6;
            for k in 0..2 {
                let (mut p, mut m) = ([x, y], [x, y]);
                p[k] += h;
                m[k] -= h;
                let fd = (jet.value(&p).unwrap() - jet.value(&m).unwrap()) / (2.0 * h);
                prop_assert!(close(g[k], fd, 1e-5), "{src}: d/dx{} = {} vs {fd}", k + 1, g[k]);
            }
        }
    }
}
