//! Moving sets `C(t) = { x : psi_i(t, x) <= 0 }` with capped constraint
//! functions, derivative jets, sampled constraint-qualification checks and
//! Euclidean projection.

mod a1;
mod cap;
mod project;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::expr::{Expr, ExprJet, Program};

pub(crate) use a1::ball_point;
pub use a1::{A1Check, A1Report, A1Violation, SamplingPlan};
pub use cap::CapParams;
pub use project::{Projection, ProjectionMethod};

pub(crate) type Buf = SmallVec<[f64; 16]>;

/// Constraint-qualification constants: band half-width `beta`, gradient
/// lower bound `eta` and diagonal-dominance factor `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A1Constants {
    pub beta: f64,
    pub eta: f64,
    pub rho: f64,
}

impl A1Constants {
    pub fn new(beta: f64, eta: f64, rho: f64) -> Result<A1Constants> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidProblem(format!("beta must be positive, got {beta}")));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidProblem(format!("eta must be positive, got {eta}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidProblem(format!("rho must lie in (0, 1), got {rho}")));
        }
        Ok(A1Constants { beta, eta, rho })
    }
}

/// Value and derivatives of one constraint at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintJet {
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub hess_x: DMatrix<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone)]
struct Constraint {
    jet: ExprJet,
    dt: Program,
}

/// Names of the positional variables `t, x1, .., xn`.
pub fn state_variables(n: usize) -> Vec<String> {
    std::iter::once("t".to_string()).chain((1..=n).map(|i| format!("x{i}"))).collect()
}

#[derive(Debug, Clone)]
pub struct MovingSet {
    n: usize,
    constraints: Vec<Constraint>,
    cap: CapParams,
    a1: A1Constants,
    bounding_radius: f64,
}

impl MovingSet {
    /// `constraints` must be expressions in `t, x1..xn` with the slots
    /// produced by parsing against [`state_variables`].
    pub fn new(n: usize, constraints: Vec<Expr>, a1: A1Constants, bounding_radius: f64) -> Result<MovingSet> {
        if constraints.is_empty() {
            return Err(Error::InvalidProblem("at least one constraint is required".into()));
        }
        if !(bounding_radius > 0.0 && bounding_radius.is_finite()) {
            return Err(Error::InvalidProblem(format!("bounding radius must be positive, got {bounding_radius}")));
        }
        let names = state_variables(n);
        let wrt: Vec<&str> = names[1..].iter().map(String::as_str).collect();
        let mut out = Vec::with_capacity(constraints.len());
        for (i, e) in constraints.iter().enumerate() {
            check_slots(e, &names).map_err(|v| {
                Error::InvalidProblem(format!("constraint {} uses variable `{v}` outside t, x1..x{n}", i + 1))
            })?;
            out.push(Constraint { jet: ExprJet::new(e, &wrt, true), dt: e.differentiate("t").compile() });
        }
        Ok(MovingSet { n, constraints: out, cap: CapParams::new(a1.beta)?, a1, bounding_radius })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn cap(&self) -> &CapParams {
        &self.cap
    }

    pub fn a1(&self) -> &A1Constants {
        &self.a1
    }

    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    pub fn constraint_expr(&self, i: usize) -> &Expr {
        self.constraints[i].jet.expr()
    }

    /// Replace `eta`, e.g. after calibrating it by sampling.
    pub fn with_eta(mut self, eta: f64) -> Result<MovingSet> {
        self.a1 = A1Constants::new(self.a1.beta, eta, self.a1.rho)?;
        Ok(self)
    }

    pub(crate) fn tx(t: f64, x: &[f64]) -> Buf {
        let mut b = Buf::with_capacity(x.len() + 1);
        b.push(t);
        b.extend_from_slice(x);
        b
    }

    pub fn raw_value(&self, i: usize, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.constraints[i].jet.value(&Self::tx(t, x))?)
    }

    pub fn capped_value(&self, i: usize, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.cap.value(self.raw_value(i, t, x)?))
    }

    /// Raw value with its gradient written to `grad`.
    pub fn raw_value_grad(&self, i: usize, t: f64, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let tx = Self::tx(t, x);
        let c = &self.constraints[i];
        c.jet.gradient(&tx, grad)?;
        Ok(c.jet.value(&tx)?)
    }

    /// Capped value with its gradient written to `grad`; the hot path of the
    /// penalized right-hand side.
    pub fn capped_value_grad(&self, i: usize, t: f64, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let tx = Self::tx(t, x);
        let c = &self.constraints[i];
        let z = c.jet.value(&tx)?;
        let (h, h1, _) = self.cap.eval(z);
        if h1 == 0.0 {
            grad.iter_mut().for_each(|g| *g = 0.0);
        } else {
            c.jet.gradient(&tx, grad)?;
            grad.iter_mut().for_each(|g| *g *= h1);
        }
        Ok(h)
    }

    pub fn raw_jet(&self, i: usize, t: f64, x: &[f64]) -> Result<ConstraintJet> {
        let tx = Self::tx(t, x);
        let c = &self.constraints[i];
        let n = self.n;
        let mut grad = DVector::zeros(n);
        c.jet.gradient(&tx, grad.as_mut_slice())?;
        let mut hess = DMatrix::zeros(n, n);
        c.jet.hessian(&tx, hess.as_mut_slice())?;
        Ok(ConstraintJet { value: c.jet.value(&tx)?, grad_x: grad, hess_x: hess, dt: c.dt.eval(&tx)? })
    }

    /// Jet of the capped function by the chain rule.
    pub fn capped_jet(&self, i: usize, t: f64, x: &[f64]) -> Result<ConstraintJet> {
        let raw = self.raw_jet(i, t, x)?;
        let (h, h1, h2) = self.cap.eval(raw.value);
        let hess = &raw.grad_x * raw.grad_x.transpose() * h2 + &raw.hess_x * h1;
        Ok(ConstraintJet { value: h, grad_x: raw.grad_x * h1, hess_x: hess, dt: raw.dt * h1 })
    }

    /// Indices whose capped value lies in `(-2 beta, beta]`.
    pub fn active_indices(&self, t: f64, x: &[f64]) -> Result<Vec<usize>> {
        let b = self.a1.beta;
        let mut out = Vec::new();
        for i in 0..self.len() {
            let v = self.capped_value(i, t, x)?;
            if v > -2.0 * b && v <= b {
                out.push(i);
            }
        }
        Ok(out)
    }

    /// `max_i psi_i(t, x)` over the raw constraints.
    pub fn max_violation(&self, t: f64, x: &[f64]) -> Result<f64> {
        let mut m = f64::NEG_INFINITY;
        for i in 0..self.len() {
            m = m.max(self.raw_value(i, t, x)?);
        }
        Ok(m)
    }

    pub fn contains(&self, t: f64, x: &[f64]) -> Result<bool> {
        Ok(self.max_violation(t, x)? <= 0.0)
    }
}

fn check_slots(e: &Expr, names: &[String]) -> std::result::Result<(), String> {
    match e {
        Expr::Const(_) => Ok(()),
        Expr::Var(v) => match names.iter().position(|n| n == v.name()) {
            Some(slot) if slot == v.slot() => Ok(()),
            _ => Err(v.name().to_string()),
        },
        Expr::Unary(_, a) | Expr::Pow(a, _) => check_slots(a, names),
        Expr::Binary(_, a, b) => {
            check_slots(a, names)?;
            check_slots(b, names)
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::expr::parse;
    use approx::assert_relative_eq;

    pub(crate) fn set_from(n: usize, sources: &[&str], beta: f64, radius: f64) -> MovingSet {
        let names = state_variables(n);
        let vars: Vec<&str> = names.iter().map(String::as_str).collect();
        let exprs = sources.iter().map(|s| parse(s, &vars).unwrap()).collect();
        MovingSet::new(n, exprs, A1Constants::new(beta, 0.5, 0.9).unwrap(), radius).unwrap()
    }

    pub(crate) fn two_spheres(h: f64, beta: f64) -> MovingSet {
        let a = format!("x1^2 + x2^2 + (x3 + {h})^2 - 1");
        let b = format!("x1^2 + x2^2 + (x3 - {h})^2 - 1");
        set_from(3, &[&a, &b], beta, 4.0)
    }

    #[test]
    fn sphere_jet_on_boundary() {
        let s = two_spheres(0.5, 0.05);
        let j = s.capped_jet(0, 0.0, &[0.0, 0.0, 0.5]).unwrap();
        assert_eq!(j.value, 0.0);
        assert_eq!(j.grad_x.as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn deep_interior_gradient_is_exactly_zero() {
        let s = two_spheres(0.5, 0.05);
        // raw value -0.75 < -2 beta - 0.1
        let j = s.capped_jet(0, 0.0, &[0.0, 0.0, 0.0]).unwrap();
        assert!(j.grad_x.iter().all(|g| *g == 0.0));
        assert!(j.hess_x.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn capped_hessian_matches_gradient_differences() {
        let beta = 0.05;
        let s = two_spheres(0.5, beta);
        // psi_1 = r^2 - 1 with r^2 = 1 - 1.5 beta
        let r = (1.0 - 1.5 * beta).sqrt();
        let x = [r * 0.6, r * 0.8 * 0.6, r * 0.8 * 0.8 - 0.5];
        assert_relative_eq!(s.raw_value(0, 0.0, &x).unwrap(), -1.5 * beta, epsilon = 1e-12);
        let j = s.capped_jet(0, 0.0, &x).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut hi = x;
            let mut lo = x;
            hi[k] += h;
            lo[k] -= h;
            let gh = s.capped_jet(0, 0.0, &hi).unwrap().grad_x;
            let gl = s.capped_jet(0, 0.0, &lo).unwrap().grad_x;
            for r in 0..3 {
                let fd = (gh[r] - gl[r]) / (2.0 * h);
                assert!((j.hess_x[(r, k)] - fd).abs() <= 1e-5, "({r},{k}) {} vs {fd}", j.hess_x[(r, k)]);
            }
        }
        assert!((&j.hess_x - j.hess_x.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn active_index_sets() {
        let s = two_spheres(0.5, 0.05);
        assert!(s.active_indices(0.0, &[0.0, 0.0, 0.0]).unwrap().is_empty());
        assert_eq!(s.active_indices(0.0, &[0.0, 0.0, 0.5]).unwrap(), vec![0]);
        assert_eq!(s.active_indices(0.0, &[0.75f64.sqrt(), 0.0, 0.0]).unwrap(), vec![0, 1]);
    }

    #[test]
    fn time_derivative_of_moving_wall() {
        let s = set_from(1, &["t - x1"], 0.1, 3.0);
        let j = s.capped_jet(0, 0.5, &[0.45]).unwrap();
        assert_eq!(j.dt, 1.0);
        assert_eq!(j.grad_x[0], -1.0);
    }

    #[test]
    fn foreign_variables_rejected() {
        let e = parse("u1 + x1", &["t", "x1", "u1"]).unwrap();
        let err = MovingSet::new(1, vec![e], A1Constants::new(0.1, 0.5, 0.9).unwrap(), 2.0).unwrap_err();
        assert!(err.to_string().contains("u1"));
    }
}
