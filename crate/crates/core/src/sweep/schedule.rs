use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Penalty;
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::set::{ball_point, A1Constants};

/// `mu(gamma) = log(mu / (eta^2 gamma)) / gamma`.
pub fn mu_of_gamma(mu: f64, eta: f64, gamma: f64) -> f64 {
    (mu / (eta * eta * gamma)).ln() / gamma
}

/// Sampled value of the speed constant with the sample attaining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuEstimate {
    pub mu: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Zero-based constraint index attaining the maximum.
    pub index: usize,
    pub samples: usize,
}

/// Estimate `max (|grad psi_i| |f| + |d_t psi_i|) + 1` over
/// `t in [0, T]`, `u in U` and `x` within distance one of `C(t)`.
///
/// Each random point of the enlarged ball contributes its projection onto
/// `C(t)`, itself when within distance one, and the point at distance
/// exactly one along the projection ray.
pub fn estimate_mu(problem: &Problem, samples: usize, seed: u64) -> Result<MuEstimate> {
    let set = problem.set();
    let n = problem.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut controls = problem.control_set().grid(2);
    if let crate::problem::ControlSet::Box { lo, hi } = problem.control_set() {
        for _ in 0..4 {
            let u: Vec<f64> =
                lo.iter().zip(hi).map(|(a, b)| if a == b { *a } else { rng.gen_range(*a..=*b) }).collect();
            controls.push(nalgebra::DVector::from_vec(u));
        }
    }
    let mut best =
        MuEstimate { mu: 1.0, t: 0.0, x: vec![0.0; n], u: controls[0].iter().copied().collect(), index: 0, samples };
    let mut f = vec![0.0; n];
    let radius = set.bounding_radius() + 1.0;
    for _ in 0..samples {
        let t = rng.gen_range(0.0..=problem.horizon());
        let p = ball_point(&mut rng, n, radius);
        let q = set.project(t, &p)?;
        let qv: Vec<f64> = q.iter().copied().collect();
        let d: Vec<f64> = p.iter().zip(&qv).map(|(a, b)| a - b).collect();
        let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut pts = vec![qv.clone()];
        if dn > 0.0 {
            if dn <= 1.0 {
                pts.push(p.clone());
            }
            pts.push(qv.iter().zip(&d).map(|(a, b)| a + b / dn).collect());
        }
        for x in &pts {
            for u in &controls {
                problem.dynamics(t, x, u.as_slice(), &mut f)?;
                let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                for i in 0..set.len() {
                    let jet = set.raw_jet(i, t, x)?;
                    let val = jet.grad_x.norm() * fnorm + jet.dt.abs() + 1.0;
                    if val > best.mu {
                        best =
                            MuEstimate { mu: val, t, x: x.clone(), u: u.iter().copied().collect(), index: i, samples };
                    }
                }
            }
        }
    }
    Ok(best)
}

/// How `sigma_k` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    /// `sigma_k = c / gamma_k`.
    Reciprocal(f64),
    Explicit(Vec<f64>),
}

impl Default for SigmaRule {
    fn default() -> Self {
        SigmaRule::Reciprocal(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub mu: f64,
    pub eta: f64,
    pub beta: f64,
    pub gammas: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// `mu(gamma_k)`.
    pub mus: Vec<f64>,
    /// `mu / eta^2`, the bound on every multiplier.
    pub xi_cap: f64,
    /// Whether `C(t)` lies in the interior of the inflated set, i.e.
    /// `sigma_k + mu_k > 0`.
    pub inclusion: Vec<bool>,
}

impl PenaltySchedule {
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn penalty(&self, k: usize) -> Penalty {
        Penalty { gamma: self.gammas[k], sigma: self.sigmas[k], mu: Some(self.mu) }
    }
}

/// Build `(gamma_k, sigma_k, mu_k)`.
///
/// Hard requirements: `gamma_k` increasing with `gamma_k >= mu / eta^2`
/// (so `mu_k <= 0`), `sigma_k` positive and non-increasing, and
/// `sigma_k + mu_k > -beta` so the inflated boundary stays where the cap is
/// the identity. The inclusion of `C(t)` in the inflated set is reported
/// per level and enforced only when `strict` is set.
pub fn build_schedule(
    mu: f64,
    a1: &A1Constants,
    gammas: &[f64],
    sigma: &SigmaRule,
    strict: bool,
) -> Result<PenaltySchedule> {
    if gammas.is_empty() {
        return Err(Error::Schedule("no penalty levels given".into()));
    }
    if !(mu >= 1.0 && mu.is_finite()) {
        return Err(Error::Schedule(format!("speed constant must be at least 1, got {mu}")));
    }
    let eta = a1.eta;
    let threshold = mu / (eta * eta);
    let sigmas: Vec<f64> = match sigma {
        SigmaRule::Reciprocal(c) => gammas.iter().map(|g| c / g).collect(),
        SigmaRule::Explicit(s) => {
            if s.len() != gammas.len() {
                return Err(Error::Schedule(format!("{} sigmas for {} gammas", s.len(), gammas.len())));
            }
            s.clone()
        }
    };
    let mut mus = Vec::with_capacity(gammas.len());
    let mut inclusion = Vec::with_capacity(gammas.len());
    for (k, (&g, &s)) in gammas.iter().zip(&sigmas).enumerate() {
        if k > 0 && g <= gammas[k - 1] {
            return Err(Error::Schedule(format!(
                "gamma must increase: level {} has {g} after {}",
                k + 1,
                gammas[k - 1]
            )));
        }
        if k > 0 && s > sigmas[k - 1] {
            return Err(Error::Schedule(format!(
                "sigma must not increase: level {} has {s} after {}",
                k + 1,
                sigmas[k - 1]
            )));
        }
        if !(s > 0.0) {
            return Err(Error::Schedule(format!("sigma must be positive at level {}", k + 1)));
        }
        if g < threshold {
            return Err(Error::Schedule(format!("level {}: gamma = {g} is below mu / eta^2 = {threshold}", k + 1)));
        }
        let mk = mu_of_gamma(mu, eta, g);
        if s + mk <= -a1.beta {
            return Err(Error::Schedule(format!(
                "level {}: sigma + mu(gamma) = {} does not exceed -beta = {}",
                k + 1,
                s + mk,
                -a1.beta
            )));
        }
        let inside = s + mk > 0.0;
        if strict && !inside {
            return Err(Error::Schedule(format!(
                "level {}: C(t) is not inside the inflated set (sigma + mu(gamma) = {:e})",
                k + 1,
                s + mk
            )));
        }
        mus.push(mk);
        inclusion.push(inside);
    }
    Ok(PenaltySchedule { mu, eta, beta: a1.beta, gammas: gammas.to_vec(), sigmas, mus, xi_cap: threshold, inclusion })
}
