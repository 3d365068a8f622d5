use super::{Expr, ExprError, Program};

/// Value, gradient and (optionally) Hessian of an expression with respect
/// to a fixed list of variables, differentiated once and compiled.
#[derive(Debug, Clone)]
pub struct ExprJet {
    expr: Expr,
    value: Program,
    grad: Vec<Program>,
    // packed upper triangle, row-major
    hess: Option<Vec<Program>>,
    dim: usize,
}

impl ExprJet {
    pub fn new(expr: &Expr, wrt: &[&str], second_order: bool) -> ExprJet {
        let first: Vec<Expr> = wrt.iter().map(|v| expr.differentiate(v)).collect();
        let hess = second_order.then(|| {
            let mut packed = Vec::with_capacity(wrt.len() * (wrt.len() + 1) / 2);
            for (i, gi) in first.iter().enumerate() {
                for v in &wrt[i..] {
                    packed.push(gi.differentiate(v).compile());
                }
            }
            packed
        });
        ExprJet {
            expr: expr.clone(),
            value: expr.compile(),
            grad: first.iter().map(Expr::compile).collect(),
            hess,
            dim: wrt.len(),
        }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_hessian(&self) -> bool {
        self.hess.is_some()
    }

    pub fn value(&self, vars: &[f64]) -> Result<f64, ExprError> {
        self.value.eval(vars)
    }

    pub fn gradient(&self, vars: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        for (o, p) in out.iter_mut().zip(&self.grad) {
            *o = p.eval(vars)?;
        }
        Ok(())
    }

    /// Fill the dense row-major `dim x dim` Hessian. Panics if the jet was
    /// built without second derivatives.
    pub fn hessian(&self, vars: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        let packed = self.hess.as_ref().expect("jet built without Hessian");
        let n = self.dim;
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                let v = packed[k].eval(vars)?;
                out[i * n + j] = v;
                out[j * n + i] = v;
                k += 1;
            }
        }
        Ok(())
    }

    /// True when every Hessian entry is the constant zero.
    pub fn is_affine(&self) -> bool {
        match &self.hess {
            Some(h) => h.iter().all(|p| p.as_const() == Some(0.0)),
            None => false,
        }
    }
}
