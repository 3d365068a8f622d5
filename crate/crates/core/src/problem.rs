//! Optimal control problems over a sweeping process: dynamics, control
//! set, endpoint sets, terminal cost and piecewise-constant control signals.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::expr::{Expr, ExprJet};
use crate::linalg::nnls;
use crate::set::{state_variables, MovingSet};

/// Names of the positional variables `t, x1..xn, u1..um` used by dynamics.
pub fn dynamics_variables(n: usize, m: usize) -> Vec<String> {
    let mut v = state_variables(n);
    v.extend((1..=m).map(|i| format!("u{i}")));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Finite { values: Vec<Vec<f64>> },
}

impl ControlSet {
    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lo, .. } => lo.len(),
            ControlSet::Finite { values } => values.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            ControlSet::Box { lo, hi } => {
                if lo.len() != m || hi.len() != m {
                    return Err(Error::InvalidProblem(format!("control box must have {m} bounds per side")));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
                    return Err(Error::InvalidProblem("control box needs finite lo <= hi".into()));
                }
            }
            ControlSet::Finite { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidProblem("finite control set is empty".into()));
                }
                if values.iter().any(|v| v.len() != m || v.iter().any(|c| !c.is_finite())) {
                    return Err(Error::InvalidProblem(format!("every control value must have {m} finite entries")));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            ControlSet::Box { lo, hi } => {
                u.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v >= a - tol && *v <= b + tol)
            }
            ControlSet::Finite { values } => values.iter().any(|w| w.iter().zip(u).all(|(a, b)| (a - b).abs() <= tol)),
        }
    }

    /// Tensor grid with `per_axis` points per coordinate for boxes (always
    /// including the corners); the full list for finite sets.
    pub fn grid(&self, per_axis: usize) -> Vec<DVector<f64>> {
        match self {
            ControlSet::Finite { values } => values.iter().map(|v| DVector::from_column_slice(v)).collect(),
            ControlSet::Box { lo, hi } => {
                let k = per_axis.max(2);
                let m = lo.len();
                let mut out = vec![DVector::zeros(m)];
                for d in 0..m {
                    let mut next = Vec::with_capacity(out.len() * k);
                    for base in &out {
                        for j in 0..k {
                            let mut v = base.clone();
                            v[d] = if lo[d] == hi[d] {
                                lo[d]
                            } else {
                                lo[d] + (hi[d] - lo[d]) * j as f64 / (k - 1) as f64
                            };
                            next.push(v);
                        }
                    }
                    out = next;
                }
                out.dedup();
                out
            }
        }
    }
}

/// Outward normal cone of a closed set at a point, in the closed forms the
/// endpoint sets need.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalCone {
    /// The whole space (singleton sets).
    Whole,
    /// Conical hull of the generators; empty means `{0}`.
    Generated(Vec<DVector<f64>>),
}

impl NormalCone {
    pub fn zero() -> NormalCone {
        NormalCone::Generated(Vec::new())
    }

    /// Euclidean distance from `v` to the cone, with the fitted weights.
    pub fn distance(&self, v: &DVector<f64>) -> (f64, Vec<f64>) {
        match self {
            NormalCone::Whole => (0.0, Vec::new()),
            NormalCone::Generated(g) if g.is_empty() => (v.norm(), Vec::new()),
            NormalCone::Generated(g) => {
                let a = DMatrix::from_columns(g);
                let (w, r) = nnls(&a, v);
                (r, w.iter().copied().collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSet {
    Point { x: Vec<f64> },
    Points { xs: Vec<Vec<f64>> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl InitialSet {
    /// The start point used for simulation.
    pub fn nominal(&self) -> DVector<f64> {
        match self {
            InitialSet::Point { x } => DVector::from_column_slice(x),
            InitialSet::Points { xs } => DVector::from_column_slice(&xs[0]),
            InitialSet::Ball { center, .. } => DVector::from_column_slice(center),
        }
    }

    pub fn normal_cone(&self, x: &DVector<f64>) -> NormalCone {
        match self {
            InitialSet::Point { .. } | InitialSet::Points { .. } => NormalCone::Whole,
            InitialSet::Ball { center, radius } => ball_cone(center, *radius, x),
        }
    }

    fn points(&self) -> Vec<Vec<f64>> {
        match self {
            InitialSet::Point { x } => vec![x.clone()],
            InitialSet::Points { xs } => xs.clone(),
            InitialSet::Ball { center, radius } => {
                let mut pts = vec![center.clone()];
                for d in 0..center.len() {
                    for s in [-1.0, 1.0] {
                        let mut p = center.clone();
                        p[d] += s * radius;
                        pts.push(p);
                    }
                }
                pts
            }
        }
    }
}

fn ball_cone(center: &[f64], radius: f64, x: &DVector<f64>) -> NormalCone {
    let d = x - DVector::from_column_slice(center);
    if d.norm() >= radius * (1.0 - 1e-9) && d.norm() > 0.0 {
        NormalCone::Generated(vec![d.normalize()])
    } else {
        NormalCone::zero()
    }
}

/// Terminal constraint set.
#[derive(Debug, Clone)]
pub enum TerminalSet {
    Point(DVector<f64>),
    Ball {
        center: DVector<f64>,
        radius: f64,
    },
    /// `{ x : g_j(x) <= 0 }` with smooth `g_j` in `x1..xn`.
    Inequalities(Vec<ExprJet>),
}

impl TerminalSet {
    pub fn inequalities(exprs: &[Expr], n: usize) -> Result<TerminalSet> {
        let names = state_variables(n);
        let wrt: Vec<&str> = names[1..].iter().map(String::as_str).collect();
        let mut jets = Vec::new();
        for (j, e) in exprs.iter().enumerate() {
            if e.free_vars().iter().any(|v| !wrt.contains(&v.as_str())) {
                return Err(Error::InvalidProblem(format!("terminal inequality {} may only use x1..x{n}", j + 1)));
            }
            jets.push(ExprJet::new(e, &wrt, false));
        }
        Ok(TerminalSet::Inequalities(jets))
    }

    /// Largest constraint excess at `x` (zero when feasible).
    pub fn violation(&self, x: &[f64]) -> Result<f64> {
        Ok(match self {
            TerminalSet::Point(p) => (DVector::from_column_slice(x) - p).norm(),
            TerminalSet::Ball { center, radius } => ((DVector::from_column_slice(x) - center).norm() - radius).max(0.0),
            TerminalSet::Inequalities(jets) => {
                let tx = with_time(x);
                let mut worst = 0.0f64;
                for j in jets {
                    worst = worst.max(j.value(&tx)?);
                }
                worst
            }
        })
    }

    /// Values `g_j(x)` of the inequality form (empty for other forms).
    pub fn values(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            TerminalSet::Inequalities(jets) => {
                let tx = with_time(x);
                jets.iter().map(|j| Ok(j.value(&tx)?)).collect()
            }
            _ => Ok(Vec::new()),
        }
    }

    /// Normal cone at `x`, treating inequalities within `tol` of zero as
    /// active.
    pub fn normal_cone(&self, x: &[f64], tol: f64) -> Result<NormalCone> {
        Ok(match self {
            TerminalSet::Point(_) => NormalCone::Whole,
            TerminalSet::Ball { center, radius } => {
                ball_cone(center.as_slice(), *radius, &DVector::from_column_slice(x))
            }
            TerminalSet::Inequalities(jets) => {
                let tx = with_time(x);
                let mut gens = Vec::new();
                for j in jets {
                    if j.value(&tx)? >= -tol {
                        let mut g = DVector::zeros(x.len());
                        j.gradient(&tx, g.as_mut_slice())?;
                        gens.push(g);
                    }
                }
                NormalCone::Generated(gens)
            }
        })
    }
}

fn with_time(x: &[f64]) -> SmallVec<[f64; 16]> {
    let mut b = SmallVec::with_capacity(x.len() + 1);
    b.push(0.0);
    b.extend_from_slice(x);
    b
}

/// Piecewise-constant control: `values[k]` applies on
/// `(breakpoints[k-1], breakpoints[k]]`, so at a breakpoint the earlier
/// value is in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub breakpoints: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ControlSignal {
    pub fn constant(u: &[f64]) -> ControlSignal {
        ControlSignal { breakpoints: Vec::new(), values: vec![u.to_vec()] }
    }

    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<ControlSignal> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidProblem("a control signal needs one more value than breakpoints".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) || breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidProblem("control breakpoints must be finite and increasing".into()));
        }
        Ok(ControlSignal { breakpoints, values })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        let k = self.breakpoints.iter().take_while(|b| **b < t).count();
        &self.values[k]
    }

    /// Control in force on the open interval `(a, b)`.
    pub fn on_interval(&self, a: f64, b: f64) -> &[f64] {
        self.value_at(0.5 * (a + b))
    }
}

/// Uniform grid of step `dt` on `[0, horizon]` with the breakpoints inserted.
/// Uniform nodes closer than `1e-9 dt` to a breakpoint are dropped.
pub fn build_grid(horizon: f64, dt: f64, breakpoints: &[f64]) -> Result<Vec<f64>> {
    if !(dt > 0.0 && horizon > 0.0) {
        return Err(Error::Grid(format!("need positive dt and horizon, got {dt} and {horizon}")));
    }
    let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..steps).map(|k| k as f64 * dt).collect();
    grid.push(horizon);
    for &b in breakpoints {
        if b > 0.0 && b < horizon {
            grid.push(b);
        }
    }
    grid.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(grid.len());
    for t in grid {
        let is_break = breakpoints.contains(&t);
        match out.last_mut() {
            Some(last) if (t - *last).abs() <= 1e-9 * dt => {
                if is_break && *last != 0.0 {
                    *last = t;
                }
            }
            _ => out.push(t),
        }
    }
    if let Some(last) = out.last_mut() {
        *last = horizon;
    }
    Ok(out)
}

/// Everything needed to pose the optimal control problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    n: usize,
    m: usize,
    dynamics: Vec<Expr>,
    dyn_jets: Vec<ExprJet>,
    set: MovingSet,
    control_set: ControlSet,
    initial_set: InitialSet,
    terminal_set: Option<TerminalSet>,
    cost: ExprJet,
    horizon: f64,
    control: Option<ControlSignal>,
}

/// Unvalidated parts of a [`Problem`].
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub dynamics: Vec<Expr>,
    pub set: MovingSet,
    pub control_set: ControlSet,
    pub initial_set: InitialSet,
    pub terminal_set: Option<TerminalSet>,
    pub cost: Expr,
    pub horizon: f64,
    pub control: Option<ControlSignal>,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Problem> {
        let ProblemSpec { name, n, m, dynamics, set, control_set, initial_set, terminal_set, cost, horizon, control } =
            spec;
        if dynamics.len() != n {
            return Err(Error::InvalidProblem(format!(
                "dimension mismatch: {} dynamics components for n = {n}",
                dynamics.len()
            )));
        }
        if set.dim() != n {
            return Err(Error::InvalidProblem(format!(
                "dimension mismatch: set has n = {}, problem n = {n}",
                set.dim()
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidProblem(format!("horizon must be positive, got {horizon}")));
        }
        control_set.validate(m)?;
        let names = dynamics_variables(n, m);
        for (k, e) in dynamics.iter().enumerate() {
            if let Some(v) = e.free_vars().into_iter().find(|v| !names.contains(v)) {
                return Err(Error::InvalidProblem(format!("dynamics component {} uses unknown variable `{v}`", k + 1)));
            }
        }
        let state = state_variables(n);
        if let Some(v) = cost.free_vars().into_iter().find(|v| !state[1..].contains(v)) {
            return Err(Error::InvalidProblem(format!("cost may only use x1..x{n}, found `{v}`")));
        }
        let wrt: Vec<&str> = state[1..].iter().map(String::as_str).collect();
        let dyn_jets = dynamics.iter().map(|e| ExprJet::new(e, &wrt, false)).collect();
        let cost = ExprJet::new(&cost, &wrt, false);

        for p in initial_set.points() {
            if p.len() != n {
                return Err(Error::InvalidProblem(format!("initial point has dimension {}, expected {n}", p.len())));
            }
            if set.max_violation(0.0, &p)? > 1e-9 {
                return Err(Error::InvalidProblem(format!("initial point {p:?} is not in C(0)")));
            }
        }
        if let Some(c) = &control {
            if c.dim() != m || c.values.iter().any(|u| !control_set.contains(u, 1e-12)) {
                return Err(Error::InvalidProblem("nominal control leaves the control set".into()));
            }
        }
        let problem = Problem {
            name,
            n,
            m,
            dynamics,
            dyn_jets,
            set,
            control_set,
            initial_set,
            terminal_set,
            cost,
            horizon,
            control,
        };
        problem.check_terminal_inclusion()?;
        Ok(problem)
    }

    // Sampled check that C_T lies inside C(T).
    fn check_terminal_inclusion(&self) -> Result<()> {
        let Some(ts) = &self.terminal_set else {
            return Ok(());
        };
        let t = self.horizon;
        let bad = |x: &[f64]| -> Result<bool> { Ok(self.set.max_violation(t, x)? > 1e-9) };
        match ts {
            TerminalSet::Point(p) => {
                if p.len() != self.n || bad(p.as_slice())? {
                    return Err(Error::InvalidProblem("terminal point is not in C(T)".into()));
                }
            }
            TerminalSet::Ball { center, radius } => {
                if center.len() != self.n {
                    return Err(Error::InvalidProblem("terminal ball has the wrong dimension".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                for _ in 0..2000 {
                    let d = crate::set::ball_point(&mut rng, self.n, *radius);
                    let x = center + DVector::from_vec(d);
                    if bad(x.as_slice())? {
                        return Err(Error::InvalidProblem("terminal ball is not contained in C(T)".into()));
                    }
                }
            }
            TerminalSet::Inequalities(_) => {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let r = self.set.bounding_radius();
                for _ in 0..20_000 {
                    let x: Vec<f64> = crate::set::ball_point(&mut rng, self.n, r);
                    if ts.violation(&x)? <= 0.0 && bad(&x)? {
                        return Err(Error::InvalidProblem(format!("terminal set point {x:?} lies outside C(T)")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn set(&self) -> &MovingSet {
        &self.set
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }

    pub fn initial_set(&self) -> &InitialSet {
        &self.initial_set
    }

    pub fn terminal_set(&self) -> Option<&TerminalSet> {
        self.terminal_set.as_ref()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nominal_control(&self) -> Option<&ControlSignal> {
        self.control.as_ref()
    }

    pub fn dynamics_exprs(&self) -> &[Expr] {
        &self.dynamics
    }

    pub fn cost_expr(&self) -> &Expr {
        self.cost.expr()
    }

    /// Same problem on a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Problem> {
        let mut p = self.clone();
        p.horizon = horizon;
        p.check_terminal_inclusion()?;
        Ok(p)
    }

    /// Control signal used when the caller supplies none: the nominal one,
    /// else the first point of the control grid.
    pub fn default_control(&self) -> ControlSignal {
        self.control.clone().unwrap_or_else(|| {
            let u = &self.control_set.grid(2)[0];
            ControlSignal::constant(u.as_slice())
        })
    }

    fn txu(&self, t: f64, x: &[f64], u: &[f64]) -> SmallVec<[f64; 16]> {
        let mut b = SmallVec::with_capacity(1 + x.len() + u.len());
        b.push(t);
        b.extend_from_slice(x);
        b.extend_from_slice(u);
        b
    }

    /// `f(t, x, u)` written to `out`.
    pub fn dynamics(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        let v = self.txu(t, x, u);
        for (o, j) in out.iter_mut().zip(&self.dyn_jets) {
            *o = j.value(&v)?;
        }
        Ok(())
    }

    pub fn dynamics_vec(&self, t: f64, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n);
        self.dynamics(t, x, u, out.as_mut_slice())?;
        Ok(out)
    }

    /// Row `k` holds the gradient of `f_k` with respect to `x`.
    pub fn dynamics_jacobian(&self, t: f64, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        let v = self.txu(t, x, u);
        let n = self.n;
        let mut jac = DMatrix::zeros(n, n);
        let mut row = vec![0.0; n];
        for (k, j) in self.dyn_jets.iter().enumerate() {
            j.gradient(&v, &mut row)?;
            for c in 0..n {
                jac[(k, c)] = row[c];
            }
        }
        Ok(jac)
    }

    pub fn cost(&self, x: &[f64]) -> Result<f64> {
        Ok(self.cost.value(&with_time(x))?)
    }

    pub fn cost_gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.n);
        self.cost.gradient(&with_time(x), g.as_mut_slice())?;
        Ok(g)
    }

    /// Sampled bound on `|f|` over `[0, T] x B(0, r) x U`.
    pub fn dynamics_bound(&self, samples: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = self.control_set.grid(3);
        let mut out = vec![0.0; self.n];
        let mut m = 0.0f64;
        for _ in 0..samples {
            let t = rng.gen_range(0.0..=self.horizon);
            let x = crate::set::ball_point(&mut rng, self.n, self.set.bounding_radius());
            for u in &grid {
                self.dynamics(t, &x, u.as_slice(), &mut out)?;
                m = m.max(out.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::set::A1Constants;

    pub(crate) fn simple_problem(
        n: usize,
        m: usize,
        dynamics: &[&str],
        constraints: &[&str],
        x0: &[f64],
        horizon: f64,
        beta: f64,
        eta: f64,
    ) -> Problem {
        let dn = dynamics_variables(n, m);
        let dv: Vec<&str> = dn.iter().map(String::as_str).collect();
        let sn = state_variables(n);
        let sv: Vec<&str> = sn.iter().map(String::as_str).collect();
        let set = MovingSet::new(
            n,
            constraints.iter().map(|c| parse(c, &sv).unwrap()).collect(),
            A1Constants::new(beta, eta, 0.9).unwrap(),
            5.0,
        )
        .unwrap();
        Problem::new(ProblemSpec {
            name: "test".into(),
            n,
            m,
            dynamics: dynamics.iter().map(|d| parse(d, &dv).unwrap()).collect(),
            set,
            control_set: ControlSet::Box { lo: vec![-1.0; m], hi: vec![1.0; m] },
            initial_set: InitialSet::Point { x: x0.to_vec() },
            terminal_set: None,
            cost: parse("-x1", &sv).unwrap(),
            horizon,
            control: None,
        })
        .unwrap()
    }

    #[test]
    fn grid_inserts_breakpoints() {
        let g = build_grid(1.0, 0.25, &[0.3, 0.5]).unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.3, 0.5, 0.75, 1.0]);
        let g = build_grid(1.0, 0.3, &[]).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    #[test]
    fn control_signal_takes_earlier_value_at_breakpoint() {
        let c = ControlSignal::new(vec![0.5], vec![vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(c.value_at(0.5), &[1.0]);
        assert_eq!(c.value_at(0.5 + 1e-12), &[-1.0]);
        assert_eq!(c.on_interval(0.4, 0.5), &[1.0]);
    }

    #[test]
    fn box_grid_has_corners() {
        let u = ControlSet::Box { lo: vec![-1.0, 0.0], hi: vec![1.0, 2.0] };
        let g = u.grid(3);
        assert_eq!(g.len(), 9);
        assert!(g.iter().any(|v| v.as_slice() == [1.0, 2.0]));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let sv = ["t", "x1", "x2"];
        let set = MovingSet::new(2, vec![parse("x1 - 1", &sv).unwrap()], A1Constants::new(0.1, 0.9, 0.9).unwrap(), 3.0)
            .unwrap();
        let err = Problem::new(ProblemSpec {
            name: "bad".into(),
            n: 2,
            m: 0,
            dynamics: vec![parse("1", &[]).unwrap()],
            set,
            control_set: ControlSet::Finite { values: vec![vec![]] },
            initial_set: InitialSet::Point { x: vec![0.0, 0.0] },
            terminal_set: None,
            cost: parse("x1", &sv).unwrap(),
            horizon: 1.0,
            control: None,
        })
        .unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn jacobian_rows_are_component_gradients() {
        let p = simple_problem(2, 1, &["x2 * x1", "u1"], &["x1^2 + x2^2 - 4"], &[0.0, 0.0], 1.0, 0.1, 1.0);
        let j = p.dynamics_jacobian(0.0, &[2.0, 3.0], &[0.5]).unwrap();
        assert_eq!(j.as_slice(), &[3.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn cone_distances() {
        let c = NormalCone::Generated(vec![DVector::from_vec(vec![1.0, 0.0])]);
        assert_eq!(c.distance(&DVector::from_vec(vec![2.0, 0.0])).0, 0.0);
        assert_eq!(c.distance(&DVector::from_vec(vec![-2.0, 0.0])).0, 2.0);
        assert_eq!(NormalCone::Whole.distance(&DVector::from_vec(vec![5.0])).0, 0.0);
    }
}
