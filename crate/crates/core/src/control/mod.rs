//! Single-switch bang-bang controls: simulation, switching-time search and
//! the proximal objective used to compare penalty levels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ControlSet, ControlSignal, Problem};
use crate::sweep::{integrate_penalized, Penalty, StepControl, Trajectory};

pub mod two_sphere;

pub use two_sphere::{
    build_two_sphere, choose_horizon, run_two_sphere_example, structure_report, ExampleConfig, ExampleReport,
    HorizonChoice, HorizonProbe, StructureReport, TwoSphereParams,
};

/// Terminal constraints count as met up to this excess (plus any inflation).
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Contact threshold as a fraction of the multiplier cap `mu / eta^2`.
pub const CONTACT_FRACTION: f64 = 0.05;

/// `before` on `[0, t_switch]`, `after` on `(t_switch, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingControl {
    pub t_switch: f64,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl SwitchingControl {
    /// Upper corner of a box first, lower corner after.
    pub fn bang(problem: &Problem, t_switch: f64) -> Result<SwitchingControl> {
        let (before, after) = extremes(problem)?;
        Ok(SwitchingControl { t_switch, before, after })
    }

    pub fn signal(&self, horizon: f64) -> Result<ControlSignal> {
        if !(self.t_switch > 0.0 && self.t_switch < horizon) {
            return Err(Error::InvalidProblem(format!("switching time {} must lie in (0, {horizon})", self.t_switch)));
        }
        ControlSignal::new(vec![self.t_switch], vec![self.before.clone(), self.after.clone()])
    }
}

fn extremes(problem: &Problem) -> Result<(Vec<f64>, Vec<f64>)> {
    match problem.control_set() {
        ControlSet::Box { lo, hi } => Ok((hi.clone(), lo.clone())),
        ControlSet::Finite { values } if values.len() >= 2 => Ok((values[values.len() - 1].clone(), values[0].clone())),
        ControlSet::Finite { .. } => Err(Error::Unsupported("switching needs at least two control values".into())),
    }
}

/// Contact times read off the multipliers. `t1`: first node where any
/// multiplier exceeds the threshold (`first` is its zero-based index);
/// `t2`: first node where all do; `t3`: last node where any does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactTimes {
    pub threshold: f64,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t3: Option<f64>,
    pub first: Option<usize>,
}

impl ContactTimes {
    /// `0 < t1 < t2 < t3 < T`.
    pub fn ordered(&self, horizon: f64) -> bool {
        match (self.t1, self.t2, self.t3) {
            (Some(a), Some(b), Some(c)) => 0.0 < a && a < b && b < c && c < horizon,
            _ => false,
        }
    }
}

pub fn detect_contacts(traj: &Trajectory, threshold: f64) -> ContactTimes {
    let mut c = ContactTimes { threshold, t1: None, t2: None, t3: None, first: None };
    for (t, xi) in traj.times.iter().zip(&traj.xis) {
        if xi.is_empty() {
            break;
        }
        if let Some(i) = xi.iter().position(|v| *v > threshold) {
            if c.t1.is_none() {
                c.t1 = Some(*t);
                c.first = Some(i);
            }
            c.t3 = Some(*t);
        }
        if c.t2.is_none() && xi.len() > 1 && xi.iter().all(|v| *v > threshold) {
            c.t2 = Some(*t);
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingRun {
    pub control: SwitchingControl,
    pub trajectory: Trajectory,
    /// `phi(x(T))`.
    pub objective: f64,
    /// Excess of the terminal constraints at `x(T)`.
    pub violation: f64,
    pub contacts: ContactTimes,
}

pub fn simulate_switching(
    problem: &Problem,
    penalty: &Penalty,
    control: &SwitchingControl,
    step: &StepControl,
    threshold: f64,
) -> Result<SwitchingRun> {
    let signal = control.signal(problem.horizon())?;
    let trajectory = integrate_penalized(problem, &signal, penalty, step)?;
    let xt = trajectory.terminal();
    let objective = problem.cost(xt)?;
    let violation = match problem.terminal_set() {
        Some(ct) => ct.violation(xt)?,
        None => 0.0,
    };
    let contacts = detect_contacts(&trajectory, threshold);
    Ok(SwitchingRun { control: control.clone(), trajectory, objective, violation, contacts })
}

/// One evaluated switching time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchSample {
    pub t_switch: f64,
    pub objective: f64,
    pub violation: f64,
    pub feasible: bool,
}

impl SwitchSample {
    // infeasibility first, then cost
    fn key(&self, slack: f64) -> (f64, f64) {
        ((self.violation - slack).max(0.0), self.objective)
    }

    fn better(&self, other: &SwitchSample, slack: f64) -> bool {
        let (a, b) = (self.key(slack), other.key(slack));
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchOptions {
    /// Final bracket width of the golden-section search.
    pub width: f64,
    pub scan_points: usize,
    /// Inflation of the terminal set.
    pub eps: f64,
    /// Largest allowed gap between the golden-section and scan optima.
    pub agreement: f64,
}

impl Default for SwitchOptions {
    fn default() -> Self {
        SwitchOptions { width: 1e-3, scan_points: 200, eps: 0.0, agreement: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchOptimum {
    pub bracket: (f64, f64),
    pub t_star: f64,
    pub objective: f64,
    pub violation: f64,
    /// Golden-section evaluations in order.
    pub trace: Vec<SwitchSample>,
    pub scan: Vec<SwitchSample>,
    pub scan_best: f64,
    pub disagreement: f64,
    pub agrees: bool,
}

fn sample(problem: &Problem, penalty: &Penalty, step: &StepControl, t: f64, slack: f64) -> Result<SwitchSample> {
    let ctrl = SwitchingControl::bang(problem, t)?;
    let run = simulate_switching(problem, penalty, &ctrl, step, f64::INFINITY)?;
    Ok(SwitchSample {
        t_switch: t,
        objective: run.objective,
        violation: run.violation,
        feasible: run.violation <= slack,
    })
}

/// Minimize `phi(x(T))` over the switching time in `bracket`, treating
/// terminal infeasibility as worse than any cost. Golden section down to
/// `opts.width`, cross-checked by a uniform scan.
pub fn optimize_switching(
    problem: &Problem,
    penalty: &Penalty,
    step: &StepControl,
    bracket: (f64, f64),
    opts: &SwitchOptions,
) -> Result<SwitchOptimum> {
    let (a0, b0) = bracket;
    let horizon = problem.horizon();
    if !(0.0 < a0 && a0 < b0 && b0 < horizon) {
        return Err(Error::InvalidProblem(format!("bracket ({a0}, {b0}) must satisfy 0 < a < b < {horizon}")));
    }
    let slack = FEASIBILITY_TOL + opts.eps;
    let eval = |t: f64| sample(problem, penalty, step, t, slack);

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a0, b0);
    let mut trace = vec![eval(a)?, eval(b)?];
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    trace.push(fc);
    trace.push(fd);
    while b - a > opts.width {
        if fc.better(&fd, slack) || fc.key(slack) == fd.key(slack) {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c)?;
            trace.push(fc);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d)?;
            trace.push(fd);
        }
    }
    let best = trace.iter().copied().fold(trace[0], |acc, s| if s.better(&acc, slack) { s } else { acc });

    let k = opts.scan_points.max(2);
    let scan: Vec<SwitchSample> =
        (0..k).into_par_iter().map(|i| eval(a0 + (b0 - a0) * i as f64 / (k - 1) as f64)).collect::<Result<_>>()?;
    let scan_opt = scan.iter().copied().fold(scan[0], |acc, s| if s.better(&acc, slack) { s } else { acc });
    if !best.feasible && !scan_opt.feasible {
        return Err(Error::Infeasible(format!(
            "no switching time in ({a0}, {b0}) reaches the terminal set (smallest excess {:e})",
            best.violation.min(scan_opt.violation)
        )));
    }
    let disagreement = (best.t_switch - scan_opt.t_switch).abs();
    Ok(SwitchOptimum {
        bracket,
        t_star: best.t_switch,
        objective: best.objective,
        violation: best.violation,
        trace,
        scan,
        scan_best: scan_opt.t_switch,
        disagreement,
        agrees: disagreement <= opts.agreement,
    })
}

/// `phi(x(T)) + |x(0) - x0_ref|^2 + alpha * int |u - u_ref| dt`, the last
/// term summed exactly over the grid intervals.
pub fn penalized_objective(
    problem: &Problem,
    traj: &Trajectory,
    alpha: f64,
    ref_control: &ControlSignal,
    ref_x0: &[f64],
) -> Result<f64> {
    let phi = problem.cost(traj.terminal())?;
    let start: f64 = traj.states[0].iter().zip(ref_x0).map(|(a, b)| (a - b).powi(2)).sum();
    let mut l1 = 0.0;
    for j in 0..traj.len().saturating_sub(1) {
        let (t0, t1) = (traj.times[j], traj.times[j + 1]);
        let r = ref_control.on_interval(t0, t1);
        let gap: f64 = traj.controls[j].iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        l1 += gap * (t1 - t0);
    }
    Ok(phi + start + alpha * l1)
}

/// Best single-switch cost against two-switch controls on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub points: usize,
    /// Smallest feasible single-switch cost (grid and any supplied optimum).
    pub single_best: Option<f64>,
    pub single_best_t: Option<f64>,
    pub two_best: Option<f64>,
    /// `(t_a, t_b, starts_high)`.
    pub two_best_at: Option<(f64, f64, bool)>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compare single switches on `points` interior times against both
/// two-switch patterns on the same times. `extra` adds an already
/// optimized single switch to the single-switch side.
pub fn dominance_scan(
    problem: &Problem,
    penalty: &Penalty,
    step: &StepControl,
    points: usize,
    eps: f64,
    extra: Option<&SwitchSample>,
) -> Result<DominanceReport> {
    let horizon = problem.horizon();
    let (hi, lo) = extremes(problem)?;
    let slack = FEASIBILITY_TOL + eps;
    let grid: Vec<f64> = (1..=points).map(|i| horizon * i as f64 / (points + 1) as f64).collect();
    let cost_of = |signal: ControlSignal| -> Result<Option<f64>> {
        let traj = integrate_penalized(problem, &signal, penalty, step)?;
        let xt = traj.terminal();
        let viol = problem.terminal_set().map_or(Ok(0.0), |c| c.violation(xt))?;
        Ok(if viol <= slack { Some(problem.cost(xt)?) } else { None })
    };

    let singles: Vec<(f64, Option<f64>)> = grid
        .par_iter()
        .map(|&t| Ok((t, cost_of(ControlSignal::new(vec![t], vec![hi.clone(), lo.clone()])?)?)))
        .collect::<Result<_>>()?;
    let mut single: Option<(f64, f64)> = None;
    for (t, c) in singles
        .iter()
        .filter_map(|(t, c)| c.map(|c| (*t, c)))
        .chain(extra.filter(|s| s.feasible).map(|s| (s.t_switch, s.objective)))
    {
        if single.is_none_or(|(_, b)| c < b) {
            single = Some((t, c));
        }
    }

    let mut pairs = Vec::new();
    for (i, &ta) in grid.iter().enumerate() {
        for &tb in &grid[i + 1..] {
            pairs.push((ta, tb, true));
            pairs.push((ta, tb, false));
        }
    }
    let doubles: Vec<((f64, f64, bool), Option<f64>)> = pairs
        .par_iter()
        .map(|&(ta, tb, high)| {
            let (u0, u1) = if high { (&hi, &lo) } else { (&lo, &hi) };
            let signal = ControlSignal::new(vec![ta, tb], vec![u0.clone(), u1.clone(), u0.clone()])?;
            Ok(((ta, tb, high), cost_of(signal)?))
        })
        .collect::<Result<_>>()?;
    let mut double: Option<((f64, f64, bool), f64)> = None;
    for (at, c) in doubles.iter().filter_map(|(a, c)| c.map(|c| (*a, c))) {
        if double.is_none_or(|(_, b)| c < b) {
            double = Some((at, c));
        }
    }
    let tolerance = 1e-3;
    let pass = match (single, double) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some((_, s)), Some((_, d))) => s <= d + tolerance,
    };
    Ok(DominanceReport {
        points,
        single_best: single.map(|s| s.1),
        single_best_t: single.map(|s| s.0),
        two_best: double.map(|d| d.1),
        two_best_at: double.map(|d| d.0),
        tolerance,
        pass,
    })
}
