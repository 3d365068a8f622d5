use super::{BinOp, Expr, Func};

impl Expr {
    /// Exact partial derivative with respect to the variable named `var`.
    pub fn differentiate(&self, var: &str) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => Expr::Const(if v.name() == var { 1.0 } else { 0.0 }),
            Expr::Binary(op, a, b) => {
                let da = a.differentiate(var);
                let db = b.differentiate(var);
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    BinOp::Add => Expr::add(da, db),
                    BinOp::Sub => Expr::sub(da, db),
                    BinOp::Mul => Expr::add(Expr::mul(da, b), Expr::mul(a, db)),
                    BinOp::Div => {
                        // (a'b - ab') / b^2
                        let num = Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a, db));
                        Expr::div(num, Expr::pow(b, 2))
                    }
                }
            }
            Expr::Pow(a, n) => {
                let da = a.differentiate(var);
                if da.is_zero() {
                    return Expr::Const(0.0);
                }
                let outer = Expr::mul(Expr::Const(f64::from(*n)), Expr::pow((**a).clone(), n - 1));
                Expr::mul(outer, da)
            }
            Expr::Unary(f, a) => {
                let da = a.differentiate(var);
                if da.is_zero() {
                    return Expr::Const(0.0);
                }
                let a = (**a).clone();
                match f {
                    Func::Neg => Expr::neg(da),
                    Func::Exp => Expr::mul(self.clone(), da),
                    Func::Log => Expr::div(da, a),
                    Func::Sqrt => Expr::div(da, Expr::mul(Expr::Const(2.0), self.clone())),
                    Func::Sin => Expr::mul(Expr::apply(Func::Cos, a), da),
                    Func::Cos => Expr::neg(Expr::mul(Expr::apply(Func::Sin, a), da)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::parse;

    #[test]
    fn square_rule() {
        let d = parse("x1^2", &["x1"]).unwrap().differentiate("x1");
        assert_eq!(d.eval(&[3.0][..]).unwrap(), 6.0);
    }

    #[test]
    fn derivative_of_time_shift_is_constant_one() {
        let d = parse("t - x1", &["t", "x1"]).unwrap().differentiate("t");
        assert_eq!(d.as_const(), Some(1.0));
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let d = parse("3 * 4 + 1", &[]).unwrap().differentiate("x");
        assert!(d.is_zero());
        let d = parse("exp(x2)", &["x1", "x2"]).unwrap().differentiate("x1");
        assert!(d.is_zero());
    }

    #[test]
    fn free_vars_closed_under_differentiation() {
        let e = parse("x1*sin(x2) + sqrt(x1^2 + 1)/exp(x2)", &["x1", "x2", "x3"]).unwrap();
        for v in ["x1", "x2", "x3"] {
            assert!(e.differentiate(v).free_vars().is_subset(&e.free_vars()));
        }
    }

    // Central differences with step 1e-5 on the two-sphere constraint.
    #[test]
    fn sphere_gradient_matches_central_differences() {
        let vars = ["x1", "x2", "x3"];
        let e = parse("x1^2+x2^2+(x3+0.5)^2-1", &vars).unwrap();
        let p = [0.3, -0.2, 0.1];
        let h = 1e-5;
        for (k, v) in vars.iter().enumerate() {
            let mut hi = p;
            let mut lo = p;
            hi[k] += h;
            lo[k] -= h;
            let fd = (e.eval(&hi[..]).unwrap() - e.eval(&lo[..]).unwrap()) / (2.0 * h);
            let sym = e.differentiate(v).eval(&p[..]).unwrap();
            assert!((sym - fd).abs() <= 1e-6 * fd.abs().max(1e-300), "{v}: {sym} vs {fd}");
        }
    }
}
