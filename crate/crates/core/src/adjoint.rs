//! Backward adjoint along a penalized trajectory, multiplier densities and
//! the boundedness integrals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Dopri5, Outcome, Rhs, StepStats, Tolerance};
use crate::problem::Problem;
use crate::sweep::{Method, PenalizedField, Penalty, StepControl, StiffMode, Trajectory};

/// Adjoint node values and the multiplier densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointArc {
    pub gamma: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub times: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    /// `pairings[j][i] = <grad psi_i, p>` at node `j`.
    pub pairings: Vec<Vec<f64>>,
    /// `|grad psi_i|^2` at node `j`.
    pub grad_norm_sq: Vec<Vec<f64>>,
    /// `gamma^2 e^{gamma (psi_i - sigma)} <grad psi_i, p>`.
    pub densities: Vec<Vec<f64>>,
    /// Adjoint right-hand side at each node (control of the outgoing
    /// interval).
    pub pdot: Vec<Vec<f64>>,
    /// Nodes `j` where the step `p_{j+1} - p_j` is unusually large.
    pub jumps: Vec<usize>,
    pub implicit_steps: usize,
    pub steps: usize,
}

impl AdjointArc {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn terminal(&self) -> &[f64] {
        self.p.last().expect("arc has nodes")
    }

    /// `(lambda, p)` and everything linear in `p` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> AdjointArc {
        let scale = |v: &Vec<Vec<f64>>| v.iter().map(|r| r.iter().map(|a| a * c).collect()).collect();
        AdjointArc {
            lambda: self.lambda * c,
            p: scale(&self.p),
            pairings: scale(&self.pairings),
            densities: scale(&self.densities),
            pdot: scale(&self.pdot),
            ..self.clone()
        }
    }
}

/// Cubic Hermite data for the state on one output interval.
struct Segment {
    t0: f64,
    t1: f64,
    x0: Vec<f64>,
    x1: Vec<f64>,
    d0: Vec<f64>,
    d1: Vec<f64>,
}

impl Segment {
    fn state(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        let s = ((t - self.t0) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for k in 0..out.len() {
            out[k] = h00 * self.x0[k] + h10 * h * self.d0[k] + h01 * self.x1[k] + h11 * h * self.d1[k];
        }
    }
}

struct AdjointField<'a> {
    problem: &'a Problem,
    gamma: f64,
    sigma: f64,
    u: Vec<f64>,
    seg: Segment,
    x: Vec<f64>,
    band_step: f64,
}

impl AdjointField<'_> {
    /// `M(t, x)` with `p' = M p`.
    fn matrix_at(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let a = self.problem.dynamics_jacobian(t, x, &self.u)?;
        let mut m = -a.transpose();
        let set = self.problem.set();
        for i in 0..set.len() {
            let jet = set.capped_jet(i, t, x)?;
            let xi = self.gamma * (self.gamma * (jet.value - self.sigma)).exp();
            if xi == 0.0 {
                continue;
            }
            m += (&jet.hess_x + &jet.grad_x * jet.grad_x.transpose() * self.gamma) * xi;
        }
        Ok(m)
    }

    fn matrix(&mut self, t: f64) -> Result<DMatrix<f64>> {
        self.seg.state(t, &mut self.x);
        let x = self.x.clone();
        self.matrix_at(t, &x)
    }
}

impl Rhs for AdjointField<'_> {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<bool> {
        let m = self.matrix(t)?;
        let p = DVector::from_column_slice(y);
        let r = m * p;
        dy.copy_from_slice(r.as_slice());
        Ok(dy.iter().all(|v| v.is_finite()))
    }

    fn ceiling(&mut self, t: f64, _y: &[f64]) -> Result<f64> {
        self.seg.state(t, &mut self.x);
        let set = self.problem.set();
        let beta = set.a1().beta;
        for i in 0..set.len() {
            if set.capped_value(i, t, &self.x)? >= -beta {
                return Ok(self.band_step);
            }
        }
        Ok(f64::INFINITY)
    }
}

/// Implicit Euler for the linear adjoint from `t0` to `t1` (either way).
fn implicit_linear(field: &mut AdjointField, t0: f64, t1: f64, p: &mut [f64]) -> Result<usize> {
    let n = p.len();
    let dir = (t1 - t0).signum();
    let mut t = t0;
    let mut steps = 0;
    while (t1 - t).abs() > 1e-14 * t1.abs().max(1.0) {
        let mut h = field.band_step.min((t1 - t).abs());
        if (t1 - t).abs() - h < 1e-3 * h {
            h = (t1 - t).abs();
        }
        let tn = t + dir * h;
        let m = field.matrix(tn)?;
        // p(tn) = p(t) + dir h M(tn) p(tn)
        let lhs = DMatrix::identity(n, n) - m * (dir * h);
        let rhs = DVector::from_column_slice(p);
        let sol = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Integration { t, reason: "singular implicit adjoint step".into() })?;
        p.copy_from_slice(sol.as_slice());
        t = tn;
        steps += 1;
    }
    Ok(steps)
}

fn check_trajectory(traj: &Trajectory) -> Result<()> {
    if traj.method != Method::Penalized || traj.gamma <= 0.0 {
        return Err(Error::InvalidProblem("the adjoint needs a penalized trajectory".into()));
    }
    Ok(())
}

pub(crate) struct Propagation {
    pub(crate) p: Vec<Vec<f64>>,
    implicit_steps: usize,
    steps: usize,
}

/// Propagate the adjoint over the trajectory grid, backward from `start`
/// at `T` or forward from `start` at `0`.
pub(crate) fn propagate(
    problem: &Problem,
    traj: &Trajectory,
    start: &[f64],
    backward: bool,
    step: &StepControl,
) -> Result<Propagation> {
    check_trajectory(traj)?;
    let n = problem.n();
    if start.len() != n {
        return Err(Error::InvalidProblem(format!("dimension mismatch: adjoint has {} entries, n = {n}", start.len())));
    }
    let penalty = Penalty::new(traj.gamma, traj.sigma);
    let eta = problem.set().a1().eta;
    let mut fwd = PenalizedField::new(problem, &penalty);
    // the ceiling from the forward run, without mu since it is not stored
    let band_step = 0.5 / traj.gamma * (eta * eta).min(1.0);
    let mut field = AdjointField {
        problem,
        gamma: traj.gamma,
        sigma: traj.sigma,
        u: vec![0.0; problem.m()],
        seg: Segment { t0: 0.0, t1: 1.0, x0: vec![], x1: vec![], d0: vec![], d1: vec![] },
        x: vec![0.0; n],
        band_step,
    };
    let tol = Tolerance { rtol: step.rtol, atol: step.atol, max_steps: step.max_steps };
    let mut dopri = Dopri5::new(n);
    let mut stats = StepStats::default();
    let mut h = 0.0;
    let nodes = traj.len();
    let mut out = vec![vec![0.0; n]; nodes];
    let mut y = start.to_vec();
    let mut implicit_steps = 0;
    let order: Vec<usize> = if backward { (0..nodes - 1).rev().collect() } else { (0..nodes - 1).collect() };
    out[if backward { nodes - 1 } else { 0 }] = y.clone();
    for j in order {
        let (a, b) = (traj.times[j], traj.times[j + 1]);
        let u = &traj.controls[j];
        fwd.u.copy_from_slice(u);
        field.u.copy_from_slice(u);
        let mut d0 = vec![0.0; n];
        let mut d1 = vec![0.0; n];
        fwd.eval(a, &traj.states[j], &mut d0)?;
        fwd.eval(b, &traj.states[j + 1], &mut d1)?;
        field.seg = Segment { t0: a, t1: b, x0: traj.states[j].clone(), x1: traj.states[j + 1].clone(), d0, d1 };
        let (mut t, target) = if backward { (b, a) } else { (a, b) };
        match step.mode {
            StiffMode::SemiImplicit => implicit_steps += implicit_linear(&mut field, t, target, &mut y)?,
            StiffMode::Explicit => {
                dopri.segment(&mut field, &mut t, target, &mut y, &mut h, &tol, &mut stats, false)?;
            }
            StiffMode::Auto => {
                if let Outcome::Stalled =
                    dopri.segment(&mut field, &mut t, target, &mut y, &mut h, &tol, &mut stats, true)?
                {
                    implicit_steps += implicit_linear(&mut field, t, target, &mut y)?;
                    h = 0.0;
                }
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { t: target, reason: "non-finite adjoint".into() });
        }
        out[if backward { j } else { j + 1 }] = y.clone();
    }
    Ok(Propagation { p: out, implicit_steps, steps: stats.accepted + stats.rejected })
}

/// Integrate the adjoint backward from `p(T) = p_terminal` along `traj`.
/// `(lambda, p_terminal)` must be normalized: `lambda + |p(T)| = 1`.
pub fn integrate_adjoint(
    problem: &Problem,
    traj: &Trajectory,
    lambda: f64,
    p_terminal: &[f64],
    step: &StepControl,
) -> Result<AdjointArc> {
    let norm = p_terminal.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(lambda >= 0.0) || (lambda + norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProblem(format!(
            "terminal data must satisfy lambda >= 0 and lambda + |p(T)| = 1, got {lambda} + {norm}"
        )));
    }
    integrate_adjoint_unnormalized(problem, traj, lambda, p_terminal, step)
}

pub(crate) fn integrate_adjoint_unnormalized(
    problem: &Problem,
    traj: &Trajectory,
    lambda: f64,
    p_terminal: &[f64],
    step: &StepControl,
) -> Result<AdjointArc> {
    let prop = propagate(problem, traj, p_terminal, true, step)?;
    let set = problem.set();
    let n = problem.n();
    let mut pairings = Vec::with_capacity(traj.len());
    let mut grad_norm_sq = Vec::with_capacity(traj.len());
    let mut densities = Vec::with_capacity(traj.len());
    let mut pdot = Vec::with_capacity(traj.len());
    let mut g = vec![0.0; n];
    let mut field = AdjointField {
        problem,
        gamma: traj.gamma,
        sigma: traj.sigma,
        u: vec![0.0; problem.m()],
        seg: Segment { t0: 0.0, t1: 1.0, x0: vec![], x1: vec![], d0: vec![], d1: vec![] },
        x: vec![0.0; n],
        band_step: 0.0,
    };
    for (j, (&t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        let p = &prop.p[j];
        let mut pair = Vec::with_capacity(set.len());
        let mut gn = Vec::with_capacity(set.len());
        let mut dens = Vec::with_capacity(set.len());
        for i in 0..set.len() {
            set.capped_value_grad(i, t, x, &mut g)?;
            let gp: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
            pair.push(gp);
            gn.push(g.iter().map(|v| v * v).sum());
            dens.push(traj.gamma * traj.xis[j][i] * gp);
        }
        pairings.push(pair);
        grad_norm_sq.push(gn);
        densities.push(dens);
        field.u.copy_from_slice(&traj.controls[j]);
        let m = field.matrix_at(t, x)?;
        pdot.push((m * DVector::from_column_slice(p)).iter().copied().collect());
    }
    let jumps = flag_jumps(&prop.p);
    Ok(AdjointArc {
        gamma: traj.gamma,
        sigma: traj.sigma,
        lambda,
        times: traj.times.clone(),
        p: prop.p,
        pairings,
        grad_norm_sq,
        densities,
        pdot,
        jumps,
        implicit_steps: prop.implicit_steps,
        steps: prop.steps,
    })
}

/// Forward re-integration of the adjoint from `p(0)`; returns `p(T)`.
pub fn propagate_adjoint_forward(
    problem: &Problem,
    traj: &Trajectory,
    p0: &[f64],
    step: &StepControl,
) -> Result<Vec<f64>> {
    let prop = propagate(problem, traj, p0, false, step)?;
    Ok(prop.p.last().expect("nodes").clone())
}

/// Steps `p_{j+1} - p_j` larger than ten times the median step.
pub fn flag_jumps(p: &[Vec<f64>]) -> Vec<usize> {
    let steps: Vec<f64> =
        p.windows(2).map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()).collect();
    if steps.is_empty() {
        return Vec::new();
    }
    let mut sorted = steps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if median == 0.0 {
        return steps.iter().enumerate().filter(|(_, s)| **s > 0.0).map(|(j, _)| j).collect();
    }
    steps.iter().enumerate().filter(|(_, s)| **s > 10.0 * median).map(|(j, _)| j).collect()
}

fn trapezoid(times: &[f64], values: impl Fn(usize) -> f64) -> f64 {
    times.windows(2).enumerate().map(|(j, w)| 0.5 * (w[1] - w[0]) * (values(j) + values(j + 1))).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierRecord {
    pub xis: Vec<Vec<f64>>,
    pub densities: Vec<Vec<f64>>,
    /// Per constraint: `int xi_i |<grad psi_i, p>| dt`.
    pub complementarity: Vec<f64>,
    /// Per constraint: `int <grad psi_i, p> d_i dt`.
    pub measure_integral: Vec<f64>,
    /// Smallest node value of `<grad psi_i, p> d_i` over all `i`.
    pub measure_min: f64,
}

fn same_grid(traj: &Trajectory, arc: &AdjointArc) -> Result<()> {
    if traj.times != arc.times {
        return Err(Error::Grid("trajectory and adjoint grids differ".into()));
    }
    Ok(())
}

pub fn extract_multipliers(traj: &Trajectory, arc: &AdjointArc) -> Result<MultiplierRecord> {
    same_grid(traj, arc)?;
    let m = traj.xis.first().map_or(0, Vec::len);
    let complementarity =
        (0..m).map(|i| trapezoid(&arc.times, |j| traj.xis[j][i] * arc.pairings[j][i].abs())).collect();
    let measure_integral =
        (0..m).map(|i| trapezoid(&arc.times, |j| arc.pairings[j][i] * arc.densities[j][i])).collect();
    let measure_min = arc
        .pairings
        .iter()
        .zip(&arc.densities)
        .flat_map(|(p, d)| p.iter().zip(d).map(|(a, b)| a * b))
        .fold(f64::INFINITY, f64::min);
    Ok(MultiplierRecord {
        xis: traj.xis.clone(),
        densities: arc.densities.clone(),
        complementarity,
        measure_integral,
        measure_min: if measure_min.is_finite() { measure_min } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub gamma: f64,
    pub sigma: f64,
    pub lambda: f64,
    /// `lambda + |p(T)|`.
    pub normalization: f64,
    pub p_sup: f64,
    pub xi_grad_p_l1: Vec<f64>,
    pub weighted_l1: f64,
    pub adjoint_var_l1: f64,
    pub density_l1: f64,
}

pub fn diagnostics(traj: &Trajectory, arc: &AdjointArc) -> Result<DiagnosticsReport> {
    same_grid(traj, arc)?;
    let m = traj.xis.first().map_or(0, Vec::len);
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let t = &arc.times;
    Ok(DiagnosticsReport {
        gamma: arc.gamma,
        sigma: arc.sigma,
        lambda: arc.lambda,
        normalization: arc.lambda + norm(arc.terminal()),
        p_sup: arc.p.iter().map(|p| norm(p)).fold(0.0, f64::max),
        xi_grad_p_l1: (0..m).map(|i| trapezoid(t, |j| traj.xis[j][i] * arc.pairings[j][i].abs())).collect(),
        weighted_l1: trapezoid(t, |j| {
            (0..m).map(|i| traj.gamma * traj.xis[j][i] * arc.grad_norm_sq[j][i] * arc.pairings[j][i].abs()).sum()
        }),
        adjoint_var_l1: trapezoid(t, |j| norm(&arc.pdot[j])),
        density_l1: trapezoid(t, |j| arc.densities[j].iter().map(|d| d.abs()).sum()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::tests::simple_problem;
    use crate::problem::ControlSignal;
    use crate::sweep::{integrate_penalized, tests::static_wall};
    use approx::assert_relative_eq;

    fn wall_arc(gamma: f64, horizon: f64) -> (Trajectory, AdjointArc) {
        let p = static_wall(horizon);
        let step = StepControl::default();
        let tr = integrate_penalized(
            &p,
            &ControlSignal::constant(&[]),
            &Penalty::new(gamma, 1.0 / gamma).with_mu(2.0),
            &step,
        )
        .unwrap();
        let arc = integrate_adjoint(&p, &tr, 0.0, &[1.0], &step).unwrap();
        (tr, arc)
    }

    #[test]
    fn control_only_dynamics_keep_p_constant() {
        let p = simple_problem(2, 2, &["u1", "u2"], &["x1^2 + x2^2 - 4"], &[0.0, 0.0], 1.0, 0.1, 0.9);
        let c = ControlSignal::constant(&[0.3, -0.2]);
        let step = StepControl::default();
        let tr = integrate_penalized(&p, &c, &Penalty::new(50.0, 0.02), &step).unwrap();
        let arc = integrate_adjoint(&p, &tr, 0.0, &[0.6, -0.8], &step).unwrap();
        for q in &arc.p {
            assert_relative_eq!(q[0], 0.6, epsilon = 1e-12);
            assert_relative_eq!(q[1], -0.8, epsilon = 1e-12);
        }
        let d = diagnostics(&tr, &arc).unwrap();
        assert_eq!(d.weighted_l1, 0.0);
        assert_eq!(d.density_l1, 0.0);
        assert_eq!(d.adjoint_var_l1, 0.0);
        let rec = extract_multipliers(&tr, &arc).unwrap();
        assert!(rec.complementarity.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn wall_closed_form_near_terminal_time() {
        let (tr, arc) = wall_arc(100.0, 10.0);
        // p' = gamma xi p with constant xi at equilibrium
        let last = tr.len() - 1;
        let xi = tr.xis[last][0];
        for j in (last - 100)..=last {
            let exact = (100.0 * xi * (tr.times[j] - 10.0)).exp();
            assert_relative_eq!(arc.p[j][0], exact, max_relative = 1e-6);
        }
    }

    #[test]
    fn rhs_matches_hamiltonian_finite_differences() {
        let p = simple_problem(
            2,
            1,
            &["x2 + u1", "-x1 * x2"],
            &["x1^2 + x2^2 - 1", "x1 - 0.5"],
            &[0.0, 0.0],
            1.0,
            0.1,
            0.9,
        );
        let pen = Penalty::new(30.0, 0.03);
        let mut fwd = PenalizedField::new(&p, &pen);
        let field = AdjointField {
            problem: &p,
            gamma: 30.0,
            sigma: 0.03,
            u: vec![0.4],
            seg: Segment { t0: 0.0, t1: 1.0, x0: vec![], x1: vec![], d0: vec![], d1: vec![] },
            x: vec![0.0; 2],
            band_step: 0.0,
        };
        fwd.u = vec![0.4];
        let pvec = [0.3, -0.7];
        let mut ham = |x: &[f64]| {
            let mut f = [0.0; 2];
            fwd.eval(0.2, x, &mut f).unwrap();
            f[0] * pvec[0] + f[1] * pvec[1]
        };
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)];
            let m = field.matrix_at(0.2, &x).unwrap();
            let rhs = m * DVector::from_column_slice(&pvec);
            for k in 0..2 {
                let e = 1e-6;
                let mut a = x;
                let mut b = x;
                a[k] += e;
                b[k] -= e;
                let fd = -(ham(&a) - ham(&b)) / (2.0 * e);
                assert!((fd - rhs[k]).abs() <= 1e-4 * (1.0 + rhs[k].abs()), "{fd} {}", rhs[k]);
            }
        }
    }

    #[test]
    fn forward_reintegration_recovers_terminal_value() {
        let p = simple_problem(2, 0, &["-x2", "x1"], &["x1^2 + x2^2 - 1"], &[0.5, 0.0], 1.0, 0.1, 0.9);
        let step = StepControl::default();
        let tr = integrate_penalized(&p, &ControlSignal::constant(&[]), &Penalty::new(20.0, 0.05), &step).unwrap();
        let arc = integrate_adjoint(&p, &tr, 0.0, &[0.6, 0.8], &step).unwrap();
        let pt = propagate_adjoint_forward(&p, &tr, &arc.p[0], &step).unwrap();
        assert_relative_eq!(pt[0], 0.6, max_relative = 1e-6);
        assert_relative_eq!(pt[1], 0.8, max_relative = 1e-6);
    }

    #[test]
    fn wall_diagnostics_stay_bounded_and_complementarity_shrinks() {
        let reports: Vec<DiagnosticsReport> = [50.0, 100.0, 200.0, 400.0]
            .iter()
            .map(|g| {
                let (tr, arc) = wall_arc(*g, 2.0);
                let rec = extract_multipliers(&tr, &arc).unwrap();
                assert!(rec.measure_min >= -1e-12);
                diagnostics(&tr, &arc).unwrap()
            })
            .collect();
        let base = &reports[0];
        for r in &reports {
            assert!(r.p_sup <= 2.0 * base.p_sup);
            assert!(r.weighted_l1 <= 2.0 * base.weighted_l1);
            assert!(r.adjoint_var_l1 <= 2.0 * base.adjoint_var_l1);
            assert!(r.density_l1 <= 2.0 * base.density_l1);
            assert_relative_eq!(r.normalization, 1.0, epsilon = 1e-12);
        }
        assert!(reports.windows(2).all(|w| w[1].xi_grad_p_l1[0] < w[0].xi_grad_p_l1[0]));
    }

    #[test]
    fn forced_implicit_adjoint_agrees() {
        let p = static_wall(2.0);
        let (tr, arc) = wall_arc(100.0, 2.0);
        let step = StepControl { mode: StiffMode::SemiImplicit, ..StepControl::default() };
        let im = integrate_adjoint(&p, &tr, 0.0, &[1.0], &step).unwrap();
        assert!(im.implicit_steps > 0);
        let err = arc.p.iter().zip(&im.p).map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max);
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn rejects_unnormalized_terminal_data() {
        let p = static_wall(1.0);
        let (tr, _) = wall_arc(50.0, 1.0);
        assert!(integrate_adjoint(&p, &tr, 0.5, &[1.0], &StepControl::default()).is_err());
    }

    #[test]
    fn jump_flags() {
        let p: Vec<Vec<f64>> =
            (0..20).map(|j| vec![if j < 10 { j as f64 * 0.01 } else { 1.0 + j as f64 * 0.01 }]).collect();
        assert_eq!(flag_jumps(&p), vec![9]);
    }
}
