use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{A1Constants, MovingSet};
use crate::error::Result;

/// Tolerance on negative gradient inner products before they count as
/// obtuse.
const INNER_PRODUCT_TOL: f64 = 1e-10;

/// How `validate_a1` samples `[0, T] x B(0, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Points drawn uniformly from the bounding ball.
    pub uniform: usize,
    /// Points pushed onto random levels of one or two constraints inside
    /// the band, where the checks actually bite.
    pub band: usize,
    pub horizon: f64,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(horizon: f64, seed: u64) -> SamplingPlan {
        SamplingPlan { uniform: 100_000, band: 50_000, horizon, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A1Violation {
    pub t: f64,
    pub x: Vec<f64>,
    /// Zero-based constraint indices involved.
    pub indices: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A1Check {
    pub name: String,
    /// Worst sampled value of the checked quantity.
    pub worst: f64,
    pub bound: f64,
    pub pass: bool,
    /// Number of samples where the check applied.
    pub applicable: usize,
    pub witness: Option<A1Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A1Report {
    pub constants: A1Constants,
    pub plan: SamplingPlan,
    pub samples: usize,
    pub checks: Vec<A1Check>,
    /// Smallest raw gradient norm seen with `psi` in `[-beta, beta]`.
    pub min_band_grad_norm: f64,
    pub pass: bool,
}

impl A1Report {
    pub fn check(&self, name: &str) -> Option<&A1Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker {
    name: &'static str,
    bound: f64,
    // true when larger values are worse
    upper: bool,
    worst: f64,
    applicable: usize,
    witness: Option<A1Violation>,
    strict: bool,
}

impl Tracker {
    fn new(name: &'static str, bound: f64, upper: bool, strict: bool) -> Tracker {
        let worst = if upper { f64::NEG_INFINITY } else { f64::INFINITY };
        Tracker { name, bound, upper, worst, applicable: 0, witness: None, strict }
    }

    fn violates(&self, v: f64) -> bool {
        match (self.upper, self.strict) {
            (true, _) => v > self.bound,
            (false, true) => v <= self.bound,
            (false, false) => v < self.bound,
        }
    }

    fn record(&mut self, v: f64, t: f64, x: &[f64], idx: &[usize]) {
        self.applicable += 1;
        let worse = if self.upper { v > self.worst } else { v < self.worst };
        if worse {
            self.worst = v;
            if self.violates(v) {
                self.witness = Some(A1Violation { t, x: x.to_vec(), indices: idx.to_vec(), value: v });
            }
        }
    }

    fn finish(self) -> A1Check {
        let pass = self.applicable == 0 || !self.violates(self.worst);
        let worst = if self.applicable == 0 { f64::NAN } else { self.worst };
        A1Check {
            name: self.name.into(),
            worst,
            bound: self.bound,
            pass,
            applicable: self.applicable,
            witness: self.witness,
        }
    }
}

impl MovingSet {
    /// Check the constraint qualification by sampling: gradient norms above
    /// `eta` where `|psi| <= beta`, pairwise non-negative gradient inner
    /// products and diagonal dominance on the band `(-2 beta, beta]`, and
    /// vanishing capped gradients below `-2 beta`.
    pub fn validate_a1(&self, plan: &SamplingPlan) -> Result<A1Report> {
        let A1Constants { beta, eta, rho } = self.a1;
        let mut grad_bound = Tracker::new("gradient_lower_bound", eta, false, true);
        let mut obtuse = Tracker::new("non_obtuse", -INNER_PRODUCT_TOL, false, false);
        let mut dominance = Tracker::new("diagonal_dominance", rho, true, false);
        let mut flat = Tracker::new("flat_below_cap", 0.0, true, false);
        let mut min_norm = f64::INFINITY;

        let m = self.len();
        let n = self.dim();
        let mut grads = vec![DVector::zeros(n); m];
        let mut vals = vec![0.0; m];
        let mut capped = vec![0.0; n];
        let mut samples = 0;
        for (t, x) in self.sample_points(plan)? {
            samples += 1;
            for i in 0..m {
                vals[i] = self.raw_value_grad(i, t, &x, grads[i].as_mut_slice())?;
            }
            let band: Vec<usize> = (0..m).filter(|&i| vals[i] > -2.0 * beta && vals[i] <= beta).collect();
            for i in 0..m {
                if vals[i].abs() <= beta {
                    let g = grads[i].norm();
                    min_norm = min_norm.min(g);
                    grad_bound.record(g, t, &x, &[i]);
                }
                if vals[i] <= -2.0 * beta {
                    self.capped_value_grad(i, t, &x, &mut capped)?;
                    let worst = capped.iter().fold(0.0f64, |a, g| a.max(g.abs()));
                    flat.record(worst, t, &x, &[i]);
                }
            }
            for (a, &i) in band.iter().enumerate() {
                let gi = grads[i].norm_squared();
                let mut off = 0.0;
                for (b, &j) in band.iter().enumerate() {
                    if a == b {
                        continue;
                    }
                    let ip = grads[i].dot(&grads[j]);
                    off += ip.abs();
                    if a < b {
                        obtuse.record(ip, t, &x, &[i, j]);
                    }
                }
                if band.len() > 1 {
                    let ratio = if gi > 0.0 {
                        off / gi
                    } else if off > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    };
                    dominance.record(ratio, t, &x, &band);
                }
            }
        }
        let checks = vec![grad_bound.finish(), obtuse.finish(), dominance.finish(), flat.finish()];
        let pass = checks.iter().all(|c| c.pass);
        Ok(A1Report { constants: self.a1, plan: *plan, samples, checks, min_band_grad_norm: min_norm, pass })
    }

    /// `0.9` times the smallest sampled gradient norm on `|psi| <= beta`.
    pub fn calibrate_eta(&self, plan: &SamplingPlan) -> Result<f64> {
        let beta = self.a1.beta;
        let mut min_norm = f64::INFINITY;
        let mut g = vec![0.0; self.dim()];
        for (t, x) in self.sample_points(plan)? {
            for i in 0..self.len() {
                let v = self.raw_value_grad(i, t, &x, &mut g)?;
                if v.abs() <= beta {
                    min_norm = min_norm.min(g.iter().map(|a| a * a).sum::<f64>().sqrt());
                }
            }
        }
        Ok(if min_norm.is_finite() { 0.9 * min_norm } else { 1.0 })
    }

    fn sample_points(&self, plan: &SamplingPlan) -> Result<Vec<(f64, Vec<f64>)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        let n = self.dim();
        let r = self.bounding_radius;
        let beta = self.a1.beta;
        let m = self.len();
        let mut out = Vec::with_capacity(plan.uniform + plan.band);
        for _ in 0..plan.uniform {
            out.push((rng.gen_range(0.0..=plan.horizon), ball_point(&mut rng, n, r)));
        }
        let mut g = vec![DVector::zeros(n); 2];
        for k in 0..plan.band {
            let t = rng.gen_range(0.0..=plan.horizon);
            let mut x = ball_point(&mut rng, n, r);
            // Alternate between single-constraint levels and pairwise corners.
            let pair = m > 1 && k % 2 == 1;
            let i = rng.gen_range(0..m);
            let j = if pair { (i + rng.gen_range(1..m)) % m } else { i };
            let targets = [rng.gen_range(-2.0 * beta..=beta), rng.gen_range(-2.0 * beta..=beta)];
            let mut converged = false;
            for _ in 0..30 {
                let ri = self.raw_value_grad(i, t, &x, g[0].as_mut_slice())? - targets[0];
                if !pair {
                    let gg = g[0].norm_squared();
                    if gg == 0.0 {
                        break;
                    }
                    let step = ri / gg;
                    x.iter_mut().zip(g[0].iter()).for_each(|(a, b)| *a -= step * b);
                    if ri.abs() < 1e-12 {
                        converged = true;
                        break;
                    }
                    continue;
                }
                let rj = self.raw_value_grad(j, t, &x, g[1].as_mut_slice())? - targets[1];
                if ri.abs().max(rj.abs()) < 1e-12 {
                    converged = true;
                    break;
                }
                // minimum-norm Gauss-Newton step on the two equations
                let (a, b, c) = (g[0].norm_squared(), g[0].dot(&g[1]), g[1].norm_squared());
                let det = a * c - b * b;
                if det.abs() <= 1e-14 * (a * c).max(1e-300) {
                    break;
                }
                let wi = (c * ri - b * rj) / det;
                let wj = (a * rj - b * ri) / det;
                for (d, xv) in x.iter_mut().enumerate() {
                    *xv -= wi * g[0][d] + wj * g[1][d];
                }
            }
            let inside = x.iter().map(|v| v * v).sum::<f64>().sqrt() <= r;
            if converged && inside && x.iter().all(|v| v.is_finite()) {
                out.push((t, x));
            }
        }
        Ok(out)
    }
}

/// Uniform point in the `n`-ball of radius `r`.
pub(crate) fn ball_point<R: Rng>(rng: &mut R, n: usize, r: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
    let radius = r * rng.gen::<f64>().powf(1.0 / n as f64);
    v.iter_mut().for_each(|a| *a *= radius / norm);
    v
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
