//! Maximum Principle certificates for a candidate process.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adjoint::{integrate_adjoint, propagate, AdjointArc};
use crate::error::{Error, Result};
use crate::linalg::nnls;
use crate::problem::{ControlSet, ControlSignal, NormalCone, Problem};
use crate::sweep::{StepControl, Trajectory};

/// Candidate values of `lambda` tried for constrained endpoints.
pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSet {
    pub nontriviality: f64,
    /// Relative to `1 + max |f|`.
    pub dynamics: f64,
    /// Integration-by-parts tolerance is `ibp_coefficient * (max dt + 1/gamma)`.
    pub ibp_coefficient: f64,
    /// Complementarity tolerance is `complementarity_coefficient / gamma`.
    pub complementarity_coefficient: f64,
    pub maximization: f64,
    pub transversality: f64,
    /// Node values of `<grad psi, p> d` must be at least `-measure_floor`.
    pub measure_floor: f64,
    /// Points per axis when a box of controls is discretized.
    pub control_resolution: usize,
    /// Terminal inequalities within this of zero count as active.
    pub active: f64,
}

impl ToleranceSet {
    pub fn defaults() -> ToleranceSet {
        ToleranceSet {
            nontriviality: 1e-9,
            dynamics: 1e-6,
            ibp_coefficient: 4.0,
            complementarity_coefficient: 4.0,
            maximization: 1e-6,
            transversality: 1e-6,
            measure_floor: 1e-12,
            control_resolution: 11,
            active: 1e-6,
        }
    }
}

impl Default for ToleranceSet {
    fn default() -> Self {
        ToleranceSet::defaults()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Free endpoint: `lambda = 1`.
    Corollary,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Condition {
    fn new(name: impl Into<String>, residual: f64, tolerance: f64) -> Condition {
        Condition { name: name.into(), residual, tolerance, pass: residual.is_finite() && residual <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MPReport {
    pub branch: Branch,
    pub gamma: f64,
    /// `lambda` as reported: 1 on the free-endpoint branch, else the
    /// normalized value.
    pub lambda: f64,
    /// `lambda` after scaling to `lambda + |p(T)| = 1`.
    pub normalized_lambda: f64,
    pub p_terminal: Vec<f64>,
    pub conditions: Vec<Condition>,
    pub verdict: bool,
}

impl MPReport {
    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn same_grid(traj: &Trajectory, arc: &AdjointArc) -> Result<()> {
    if traj.times != arc.times {
        return Err(Error::Grid("trajectory and adjoint grids differ".into()));
    }
    Ok(())
}

/// Controls over which the maximization is checked.
fn control_candidates(set: &ControlSet, resolution: usize) -> Vec<Vec<f64>> {
    match set {
        ControlSet::Finite { values } => values.clone(),
        ControlSet::Box { .. } => {
            set.grid(resolution.max(2)).into_iter().map(|u| u.iter().copied().collect()).collect()
        }
    }
}

/// Node indices where the control changes, i.e. the switching times.
fn switch_nodes(traj: &Trajectory) -> Vec<usize> {
    (1..traj.len().saturating_sub(1)).filter(|&j| traj.controls[j] != traj.controls[j - 1]).collect()
}

/// Proximal terms of the per-level maximization.
#[derive(Debug, Clone, Copy)]
pub struct ProximalTerms<'a> {
    pub alpha: f64,
    pub eps: f64,
    pub lambda: f64,
    /// Reference control `u-hat`.
    pub reference: &'a ControlSignal,
}

/// Largest gap `max_u <p, f(t, x, u)> - <p, f(t, x, u_used)>` over nodes,
/// with nodes next to a control switch skipped. With proximal terms the
/// maximized expression also subtracts
/// `alpha lambda |u - u-hat| + eps lambda |u - u_used|`.
pub fn maximization_residual(
    problem: &Problem,
    traj: &Trajectory,
    arc: &AdjointArc,
    resolution: usize,
    proximal: Option<&ProximalTerms>,
) -> Result<f64> {
    same_grid(traj, arc)?;
    let candidates = control_candidates(problem.control_set(), resolution);
    let switches = switch_nodes(traj);
    let n = problem.n();
    let mut f = vec![0.0; n];
    let mut gap = 0.0f64;
    for j in 0..traj.len() {
        if switches.iter().any(|&s| j + 1 >= s && j <= s + 1) {
            continue;
        }
        let (t, x, p) = (traj.times[j], &traj.states[j], &arc.p[j]);
        let used = &traj.controls[j];
        let mut value = |u: &[f64]| -> Result<f64> {
            problem.dynamics(t, x, u, &mut f)?;
            let mut v: f64 = f.iter().zip(p).map(|(a, b)| a * b).sum();
            if let Some(px) = proximal {
                let uh = px.reference.value_at(t);
                let d_hat: f64 = u.iter().zip(uh).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let d_used: f64 = u.iter().zip(used).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                v -= px.alpha * px.lambda * d_hat + px.eps * px.lambda * d_used;
            }
            Ok(v)
        };
        let base = value(used)?;
        for u in &candidates {
            gap = gap.max(value(u)? - base);
        }
    }
    Ok(gap)
}

/// Worst defect of `int <z, dp> = int <z, p'> dt` over `z = e_k l(t)` with
/// `l` in `{1, t/T, (t/T)^2}`; the right side is assembled from the stored
/// multipliers and densities.
fn ibp_residual(problem: &Problem, traj: &Trajectory, arc: &AdjointArc) -> Result<f64> {
    let n = problem.n();
    let set = problem.set();
    let horizon = traj.horizon();
    let rhs_at = |j: usize, u: &[f64]| -> Result<DVector<f64>> {
        let (t, x) = (traj.times[j], &traj.states[j]);
        let p = DVector::from_column_slice(&arc.p[j]);
        let a = problem.dynamics_jacobian(t, x, u)?;
        let mut r = -(a.transpose() * &p);
        for i in 0..set.len() {
            let jet = set.capped_jet(i, t, x)?;
            r += &jet.hess_x * &p * traj.xis[j][i] + &jet.grad_x * arc.densities[j][i];
        }
        Ok(r)
    };
    let mut lhs = DMatrix::zeros(n, 3);
    let mut rhs = DMatrix::zeros(n, 3);
    let weights = |t: f64| {
        let s = t / horizon;
        [1.0, s, s * s]
    };
    for j in 0..traj.len() - 1 {
        let (a, b) = (traj.times[j], traj.times[j + 1]);
        let u = &traj.controls[j];
        let ra = rhs_at(j, u)?;
        let rb = rhs_at(j + 1, u)?;
        let (wa, wb, wm) = (weights(a), weights(b), weights(0.5 * (a + b)));
        for k in 0..n {
            let dp = arc.p[j + 1][k] - arc.p[j][k];
            for d in 0..3 {
                lhs[(k, d)] += wm[d] * dp;
                rhs[(k, d)] += 0.5 * (b - a) * (wa[d] * ra[k] + wb[d] * rb[k]);
            }
        }
    }
    Ok((lhs - rhs).amax())
}

fn dynamics_residual(problem: &Problem, traj: &Trajectory) -> Result<(f64, f64)> {
    let set = problem.set();
    let n = problem.n();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let (mut worst, mut fmax) = (0.0f64, 0.0f64);
    for j in 0..traj.len() {
        let (t, x) = (traj.times[j], &traj.states[j]);
        problem.dynamics(t, x, &traj.controls[j], &mut f)?;
        fmax = fmax.max(norm(&f));
        let mut r: Vec<f64> = traj.rates[j].iter().zip(&f).map(|(a, b)| a - b).collect();
        for i in 0..set.len() {
            set.capped_value_grad(i, t, x, &mut g)?;
            for (rk, gk) in r.iter_mut().zip(&g) {
                *rk += traj.xis[j][i] * gk;
            }
        }
        worst = worst.max(norm(&r));
    }
    Ok((worst, fmax))
}

fn transversality_residual(
    problem: &Problem,
    traj: &Trajectory,
    lambda: f64,
    p0: &[f64],
    pt: &[f64],
    active: f64,
) -> Result<f64> {
    let x0 = DVector::from_column_slice(&traj.states[0]);
    let xt = traj.terminal();
    let (d0, _) = problem.initial_set().normal_cone(&x0).distance(&DVector::from_column_slice(p0));
    let grad_phi = problem.cost_gradient(xt)?;
    let v = -DVector::from_column_slice(pt) - grad_phi * lambda;
    let cone = match problem.terminal_set() {
        None => NormalCone::zero(),
        Some(ct) => ct.normal_cone(xt, active)?,
    };
    let (dt, _) = cone.distance(&v);
    Ok(d0 + dt)
}

/// Check conditions a) to g) on the arc scaled to `lambda + |p(T)| = 1`.
/// Without a terminal set the free-endpoint branch applies and `lambda` is
/// reported as 1.
pub fn certify(problem: &Problem, traj: &Trajectory, arc: &AdjointArc, tol: &ToleranceSet) -> Result<MPReport> {
    same_grid(traj, arc)?;
    let s = arc.lambda + norm(arc.terminal());
    if !(s > 0.0 && s.is_finite()) || arc.lambda < 0.0 {
        return Err(Error::InvalidProblem("multipliers are trivial or have negative lambda".into()));
    }
    let arc = arc.scaled(1.0 / s);
    let branch = if problem.terminal_set().is_none() { Branch::Corollary } else { Branch::General };
    let gamma = traj.gamma;
    let mut conditions = Vec::new();

    let mut nontrivial = (arc.lambda + norm(arc.terminal()) - 1.0).abs();
    if branch == Branch::Corollary && arc.lambda <= 0.0 {
        nontrivial = 1.0;
    }
    conditions.push(Condition::new("nontriviality", nontrivial, tol.nontriviality));

    let (dyn_res, fmax) = dynamics_residual(problem, traj)?;
    conditions.push(Condition::new("dynamics", dyn_res, tol.dynamics * (1.0 + fmax)));

    let max_dt = traj.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let inv_gamma = if gamma > 0.0 { 1.0 / gamma } else { 0.0 };
    conditions.push(Condition::new(
        "integration_by_parts",
        ibp_residual(problem, traj, &arc)?,
        tol.ibp_coefficient * (max_dt + inv_gamma),
    ));

    let m = problem.set().len();
    let trapz = |v: &dyn Fn(usize) -> f64| -> f64 {
        traj.times.windows(2).enumerate().map(|(j, w)| 0.5 * (w[1] - w[0]) * (v(j) + v(j + 1))).sum()
    };
    for i in 0..m {
        let res = trapz(&|j| traj.xis[j][i] * arc.pairings[j][i].abs());
        conditions.push(Condition::new(
            format!("complementarity_{}", i + 1),
            res,
            tol.complementarity_coefficient * inv_gamma,
        ));
    }

    let measure_min = arc
        .pairings
        .iter()
        .zip(&arc.densities)
        .flat_map(|(p, d)| p.iter().zip(d).map(|(a, b)| a * b))
        .fold(0.0f64, f64::min);
    conditions.push(Condition::new("measure_nonnegativity", -measure_min, tol.measure_floor));

    conditions.push(Condition::new(
        "maximization",
        maximization_residual(problem, traj, &arc, tol.control_resolution, None)?,
        tol.maximization,
    ));

    conditions.push(Condition::new(
        "transversality",
        transversality_residual(problem, traj, arc.lambda, &arc.p[0], arc.terminal(), tol.active)?,
        tol.transversality,
    ));

    let verdict = conditions.iter().all(|c| c.pass);
    Ok(MPReport {
        branch,
        gamma,
        lambda: if branch == Branch::Corollary { 1.0 } else { arc.lambda },
        normalized_lambda: arc.lambda,
        p_terminal: arc.terminal().to_vec(),
        conditions,
        verdict,
    })
}

/// One candidate of the terminal-multiplier search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    /// Grid value of `lambda` before normalization.
    pub lambda_grid: f64,
    pub lambda: f64,
    pub p_terminal: Vec<f64>,
    /// Weights on the terminal normal cone generators.
    pub nu: Vec<f64>,
    /// Residual of the switching conditions in the fit.
    pub fit_residual: f64,
    pub verdict: bool,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSearch {
    pub branch: Branch,
    pub candidates: Vec<CandidateFit>,
    pub chosen: usize,
}

fn generators(problem: &Problem, xt: &[f64], active: f64) -> Result<Vec<DVector<f64>>> {
    let n = problem.n();
    Ok(match problem.terminal_set() {
        None => Vec::new(),
        Some(ct) => match ct.normal_cone(xt, active)? {
            NormalCone::Whole => (0..n)
                .flat_map(|k| {
                    let mut e = DVector::zeros(n);
                    e[k] = 1.0;
                    [e.clone(), -e]
                })
                .collect(),
            NormalCone::Generated(g) => g,
        },
    })
}

/// Build a normalized adjoint arc for `traj`.
///
/// Free endpoint: `p(T) = -grad phi` with `lambda = 1`, then normalized.
/// Otherwise `p(T) = -(lambda grad phi + G nu)` for each `lambda` in
/// [`LAMBDA_GRID`], with `nu >= 0` fitted by non-negative least squares so
/// that the Hamiltonian is continuous across every control switch
/// (`<p, f(u-) - f(u+)> = 0`). The best certificate is returned.
pub fn candidate_arc(
    problem: &Problem,
    traj: &Trajectory,
    step: &StepControl,
    tol: &ToleranceSet,
) -> Result<(AdjointArc, MPReport, CandidateSearch)> {
    let n = problem.n();
    let xt = traj.terminal().to_vec();
    let grad_phi = problem.cost_gradient(&xt)?;
    if problem.terminal_set().is_none() {
        let s = 1.0 + grad_phi.norm();
        let pt: Vec<f64> = grad_phi.iter().map(|g| -g / s).collect();
        let arc = integrate_adjoint(problem, traj, 1.0 / s, &pt, step)?;
        let report = certify(problem, traj, &arc, tol)?;
        let fit = CandidateFit {
            lambda_grid: 1.0,
            lambda: 1.0 / s,
            p_terminal: pt,
            nu: Vec::new(),
            fit_residual: 0.0,
            verdict: report.verdict,
            failed: report.conditions.iter().filter(|c| !c.pass).count(),
        };
        return Ok((arc, report, CandidateSearch { branch: Branch::Corollary, candidates: vec![fit], chosen: 0 }));
    }

    let gens = generators(problem, &xt, tol.active)?;
    let r = gens.len();
    // p(t) = Phi(t) p(T); only the switching nodes are needed
    let switches = switch_nodes(traj);
    let mut rows: Vec<DVector<f64>> = Vec::new();
    if !switches.is_empty() {
        let basis: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                propagate(problem, traj, &e, true, step).map(|p| p.p)
            })
            .collect::<Result<_>>()?;
        for &j in &switches {
            let (t, x) = (traj.times[j], &traj.states[j]);
            let jump =
                problem.dynamics_vec(t, x, &traj.controls[j - 1])? - problem.dynamics_vec(t, x, &traj.controls[j])?;
            // row . p(T) = <jump, p(t_j)>
            rows.push(DVector::from_iterator(n, (0..n).map(|k| jump.dot(&DVector::from_column_slice(&basis[k][j])))));
        }
    }
    let g = if r > 0 { DMatrix::from_columns(&gens) } else { DMatrix::zeros(n, 0) };

    let mut fits: Vec<(CandidateFit, AdjointArc, MPReport)> = Vec::new();
    for &lam in &LAMBDA_GRID {
        let mut a = DMatrix::zeros(rows.len(), r);
        let mut b = DVector::zeros(rows.len());
        for (q, row) in rows.iter().enumerate() {
            let rg = row.transpose() * &g;
            for c in 0..r {
                a[(q, c)] = -rg[c];
            }
            b[q] = lam * row.dot(&grad_phi);
        }
        if lam == 0.0 {
            // fix the scale of nu instead of lambda
            a = a.insert_row(rows.len(), 0.0);
            for c in 0..r {
                a[(rows.len(), c)] = gens[c].norm();
            }
            b = b.push(1.0);
        }
        let (nu, fit_residual) = if r > 0 { nnls(&a, &b) } else { (DVector::zeros(0), b.norm()) };
        let raw = -(&grad_phi * lam + &g * &nu);
        let s = lam + raw.norm();
        if !(s > 1e-12) {
            continue;
        }
        let lambda = lam / s;
        let pt: Vec<f64> = raw.iter().map(|v| v / s).collect();
        if fits.iter().any(|(f, _, _)| (f.lambda - lambda).abs() < 1e-12 && norm(&diff(&f.p_terminal, &pt)) < 1e-12) {
            continue;
        }
        let arc = integrate_adjoint(problem, traj, lambda, &pt, step)?;
        let report = certify(problem, traj, &arc, tol)?;
        let fit = CandidateFit {
            lambda_grid: lam,
            lambda,
            p_terminal: pt,
            nu: nu.iter().map(|v| v / s).collect(),
            fit_residual: fit_residual / s,
            verdict: report.verdict,
            failed: report.conditions.iter().filter(|c| !c.pass).count(),
        };
        fits.push((fit, arc, report));
    }
    if fits.is_empty() {
        return Err(Error::Infeasible("no nontrivial terminal multiplier candidate".into()));
    }
    let score =
        |r: &MPReport| r.conditions.iter().map(|c| c.residual / c.tolerance.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    let chosen = (0..fits.len())
        .min_by(|&i, &j| {
            (fits[i].0.failed, score(&fits[i].2))
                .partial_cmp(&(fits[j].0.failed, score(&fits[j].2)))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("nonempty");
    let candidates: Vec<CandidateFit> = fits.iter().map(|f| f.0.clone()).collect();
    let (_, arc, report) = fits.swap_remove(chosen);
    Ok((arc, report, CandidateSearch { branch: Branch::General, candidates, chosen }))
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
