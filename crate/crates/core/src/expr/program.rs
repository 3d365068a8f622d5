use smallvec::SmallVec;

use super::{powi, BinOp, Expr, ExprError, Func};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Binary(BinOp),
    Unary(Func),
    Pow(i32),
}

/// Postfix form of an [`Expr`], evaluated against positional variable slots.
///
/// Evaluation semantics, including domain errors, are identical to
/// [`Expr::eval`] with a slice environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    names: Vec<(usize, String)>,
}

impl Program {
    pub fn compile(e: &Expr) -> Program {
        let mut ops = Vec::new();
        let mut names = Vec::new();
        emit(e, &mut ops, &mut names);
        names.sort();
        names.dedup();
        Program { ops, names }
    }

    /// Returns the constant value if the program has no variables.
    pub fn as_const(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Const(c)] => Some(*c),
            _ => None,
        }
    }

    pub fn eval(&self, vars: &[f64]) -> Result<f64, ExprError> {
        let mut stack: SmallVec<[f64; 16]> = SmallVec::new();
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(c),
                Op::Var(slot) => match vars.get(slot) {
                    Some(v) => stack.push(*v),
                    None => return Err(self.unbound(slot)),
                },
                Op::Binary(b) => {
                    let rhs = stack.pop().expect("well-formed program");
                    let lhs = stack.last_mut().expect("well-formed program");
                    *lhs = b.apply(*lhs, rhs)?;
                }
                Op::Unary(f) => {
                    let top = stack.last_mut().expect("well-formed program");
                    *top = f.apply(*top)?;
                }
                Op::Pow(n) => {
                    let top = stack.last_mut().expect("well-formed program");
                    *top = powi(*top, n)?;
                }
            }
        }
        Ok(stack[0])
    }

    fn unbound(&self, slot: usize) -> ExprError {
        let name = self.names.iter().find(|(s, _)| *s == slot).map_or_else(|| format!("#{slot}"), |(_, n)| n.clone());
        ExprError::UnboundVariable(name)
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>, names: &mut Vec<(usize, String)>) {
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Var(v) => {
            ops.push(Op::Var(v.slot()));
            names.push((v.slot(), v.name().to_string()));
        }
        Expr::Unary(f, a) => {
            emit(a, ops, names);
            ops.push(Op::Unary(*f));
        }
        Expr::Binary(op, a, b) => {
            emit(a, ops, names);
            emit(b, ops, names);
            ops.push(Op::Binary(*op));
        }
        Expr::Pow(a, n) => {
            emit(a, ops, names);
            ops.push(Op::Pow(*n));
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::parse;

    #[test]
    fn matches_tree_evaluation() {
        let vars = ["t", "x1", "x2"];
        let e = parse("exp(-t) * (x1^3 - 2/x2) + cos(x1*x2) - sqrt(x2^2 + 1)", &vars).unwrap();
        let p = e.compile();
        for vals in [[0.0, 1.0, 2.0], [1.5, -0.3, 0.7], [2.0, 3.0, -1.0]] {
            assert_eq!(p.eval(&vals).unwrap(), e.eval(&vals[..]).unwrap());
        }
    }

    #[test]
    fn domain_errors_and_missing_slots() {
        let e = parse("1/x2", &["x1", "x2"]).unwrap();
        let p = e.compile();
        assert!(p.eval(&[1.0, 0.0]).is_err());
        let err = p.eval(&[1.0]).unwrap_err();
        assert_eq!(err.to_string(), "unbound variable `x2`");
    }
}
