//! Adaptive Dormand-Prince 5(4) stepping between fixed output times.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

/// Tolerances and limits for one adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

pub(crate) enum Outcome {
    Reached,
    /// More than half of the attempts in this segment were rejected.
    Stalled,
}

/// Right-hand side. Returns `Ok(false)` when the derivative is not finite,
/// which the stepper treats as a failed trial.
pub(crate) trait Rhs {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<bool>;
    /// Largest step allowed from `(t, y)`.
    fn ceiling(&mut self, _t: f64, _y: &[f64]) -> Result<f64> {
        Ok(f64::INFINITY)
    }
}

pub(crate) struct Dopri5 {
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    fsal_valid: bool,
}

impl Dopri5 {
    pub(crate) fn new(n: usize) -> Dopri5 {
        Dopri5 { k: std::array::from_fn(|_| vec![0.0; n]), ytmp: vec![0.0; n], ynew: vec![0.0; n], fsal_valid: false }
    }

    /// Advance `y` from `t0` to `t1` (either direction). `h` carries the
    /// step-size guess between calls. When `watch_rejections` is set the
    /// segment is abandoned, with `y` left at its last accepted value and
    /// `t0` advanced accordingly, once rejections outnumber acceptances.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn segment<R: Rhs>(
        &mut self,
        rhs: &mut R,
        t0: &mut f64,
        t1: f64,
        y: &mut [f64],
        h: &mut f64,
        tol: &Tolerance,
        stats: &mut StepStats,
        watch_rejections: bool,
    ) -> Result<Outcome> {
        let n = y.len();
        let dir = if t1 >= *t0 { 1.0 } else { -1.0 };
        let span = (t1 - *t0).abs();
        if span == 0.0 {
            return Ok(Outcome::Reached);
        }
        self.fsal_valid = false;
        let (mut acc, mut rej) = (0usize, 0usize);
        if !(*h > 0.0) {
            *h = span.min(1e-3);
        }
        loop {
            let t = *t0;
            let remaining = (t1 - t).abs();
            if remaining <= 1e-14 * t1.abs().max(1.0) {
                *t0 = t1;
                return Ok(Outcome::Reached);
            }
            let ceiling = rhs.ceiling(t, y)?;
            let mut step = h.min(ceiling).min(remaining);
            // avoid a sliver at the end of the segment
            if remaining - step < 1e-3 * step {
                step = remaining;
            }
            if step < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integration { t, reason: format!("step size underflow ({step:e})") });
            }
            if stats.accepted + stats.rejected >= tol.max_steps {
                return Err(Error::Integration { t, reason: format!("step budget of {} exhausted", tol.max_steps) });
            }
            if !self.fsal_valid {
                stats.evaluations += 1;
                if !rhs.eval(t, y, &mut self.k[0])? {
                    return Err(Error::Integration { t, reason: "non-finite derivative at accepted state".into() });
                }
                self.fsal_valid = true;
            }
            let hs = dir * step;
            let mut finite = true;
            for s in 1..7 {
                for i in 0..n {
                    let mut acc_i = 0.0;
                    for (j, a) in A[s][..s].iter().enumerate() {
                        acc_i += a * self.k[j][i];
                    }
                    self.ytmp[i] = y[i] + hs * acc_i;
                }
                stats.evaluations += 1;
                let (head, tail) = self.k.split_at_mut(s);
                let _ = head;
                if !rhs.eval(t + C[s] * hs, &self.ytmp, &mut tail[0])? {
                    finite = false;
                    break;
                }
                if s == 6 {
                    self.ynew.copy_from_slice(&self.ytmp);
                }
            }
            let err = if finite {
                let mut sum = 0.0;
                for i in 0..n {
                    let mut e = 0.0;
                    for (j, w) in E.iter().enumerate() {
                        e += w * self.k[j][i];
                    }
                    e *= hs;
                    let sc = tol.atol + tol.rtol * y[i].abs().max(self.ynew[i].abs());
                    sum += (e / sc).powi(2);
                }
                (sum / n as f64).sqrt()
            } else {
                f64::INFINITY
            };
            if err <= 1.0 {
                acc += 1;
                stats.accepted += 1;
                y.copy_from_slice(&self.ynew);
                *t0 = if step == remaining { t1 } else { t + hs };
                self.k.swap(0, 6);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // a step cut short by the ceiling or the segment end says
                // nothing about the achievable step size
                *h = if step < *h && fac >= 1.0 { h.max(step * fac) } else { step * fac };
            } else {
                rej += 1;
                stats.rejected += 1;
                let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) } else { 0.25 };
                *h = step * fac;
            }
            if watch_rejections && acc + rej >= 20 && rej > acc {
                return Ok(Outcome::Stalled);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(f64);
    impl Rhs for Decay {
        fn eval(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<bool> {
            dy[0] = -self.0 * y[0];
            dy[1] = y[0];
            Ok(true)
        }
    }

    struct Osc;
    impl Rhs for Osc {
        fn eval(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<bool> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(true)
        }
    }

    const TOL: Tolerance = Tolerance { rtol: 1e-10, atol: 1e-12, max_steps: 1_000_000 };

    #[test]
    fn harmonic_oscillator_period() {
        let mut s = Dopri5::new(2);
        let mut y = [1.0, 0.0];
        let mut t = 0.0;
        let mut h = 0.0;
        let mut st = StepStats::default();
        let period = std::f64::consts::TAU;
        s.segment(&mut Osc, &mut t, period, &mut y, &mut h, &TOL, &mut st, false).unwrap();
        assert_eq!(t, period);
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8, "{y:?}");
    }

    #[test]
    fn backward_direction() {
        let mut s = Dopri5::new(2);
        let mut y = [(-2.0f64).exp(), 0.0];
        let mut t = 2.0;
        let mut h = 0.0;
        let mut st = StepStats::default();
        s.segment(&mut Decay(1.0), &mut t, 0.0, &mut y, &mut h, &TOL, &mut st, false).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
        // integral of e^{-t} over [2, 0]
        assert!((y[1] - ((-2.0f64).exp() - 1.0)).abs() < 1e-9);
    }

    struct Blowup;
    impl Rhs for Blowup {
        fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<bool> {
            dy[0] = y[0];
            dy[1] = 0.0;
            Ok(t < 0.5)
        }
    }

    #[test]
    fn persistent_rejections_report_stall() {
        let mut s = Dopri5::new(2);
        let mut y = [1.0, 0.0];
        let mut t = 0.0;
        let mut h = 0.0;
        let mut st = StepStats::default();
        let r = s.segment(&mut Blowup, &mut t, 1.0, &mut y, &mut h, &TOL, &mut st, true).unwrap();
        assert!(matches!(r, Outcome::Stalled));
        assert!(t < 0.5 && t > 0.4);
        assert!((y[0] - t.exp()).abs() < 1e-9);
    }
}
