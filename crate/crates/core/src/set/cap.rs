use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The C² cap `h`: identity above `-beta`, constant `-2 beta` below
/// `-2 beta`, and a quintic blend in between.
///
/// With `s = (z + 2 beta) / beta` the blend is `-2 beta + beta g(s)` where
/// `g(s) = 6s³ - 8s⁴ + 3s⁵`. This is the unique quintic matching value,
/// slope and curvature at both junctions; `g'(s) = s²(18 - 32s + 15s²)` has
/// a negative discriminant so `h` is strictly increasing on the blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapParams {
    beta: f64,
}

impl CapParams {
    pub fn new(beta: f64) -> Result<CapParams> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidProblem(format!("cap width beta must be positive, got {beta}")));
        }
        Ok(CapParams { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Coefficients of `g` in the monomial basis, lowest degree first.
    pub fn blend_coefficients(&self) -> [f64; 6] {
        [0.0, 0.0, 0.0, 6.0, -8.0, 3.0]
    }

    pub fn value(&self, z: f64) -> f64 {
        self.eval(z).0
    }

    pub fn slope(&self, z: f64) -> f64 {
        self.eval(z).1
    }

    pub fn curvature(&self, z: f64) -> f64 {
        self.eval(z).2
    }

    /// `(h(z), h'(z), h''(z))`.
    #[inline]
    pub fn eval(&self, z: f64) -> (f64, f64, f64) {
        let b = self.beta;
        if z >= -b {
            (z, 1.0, 0.0)
        } else if z <= -2.0 * b {
            (-2.0 * b, 0.0, 0.0)
        } else {
            let s = (z + 2.0 * b) / b;
            let s2 = s * s;
            let g = s2 * s * (6.0 + s * (-8.0 + 3.0 * s));
            let g1 = s2 * (18.0 + s * (-32.0 + 15.0 * s));
            let g2 = s * (36.0 + s * (-96.0 + 60.0 * s));
            (-2.0 * b + b * g, g1, g2 / b)
        }
    }

    /// Inverse of `h` on `(-2 beta, inf)`.
    pub fn inverse(&self, level: f64) -> Option<f64> {
        let b = self.beta;
        if level >= -b {
            return Some(level);
        }
        if level <= -2.0 * b {
            return None;
        }
        let (mut lo, mut hi) = (-2.0 * b, -b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.value(mid) < level {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * b {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn branches() {
        let cap = CapParams::new(0.2).unwrap();
        assert_eq!(cap.value(0.1), 0.1);
        assert_eq!(cap.value(-1.0), -0.4);
        let mid = cap.value(-0.3);
        assert!(mid > -0.4 && mid < -0.2);
    }

    #[test]
    fn strictly_increasing_on_blend() {
        let cap = CapParams::new(0.2).unwrap();
        let mut prev = cap.value(-0.4);
        let mut z = -0.4;
        while z < -0.2 {
            z += 1e-3;
            let v = cap.value(z);
            assert!(v > prev, "not increasing at {z}");
            prev = v;
        }
    }

    #[test]
    fn c2_junctions() {
        let cap = CapParams::new(0.05).unwrap();
        let e = 1e-9;
        for z0 in [-0.05, -0.1] {
            let (a, b) = (cap.eval(z0 - e), cap.eval(z0 + e));
            assert_relative_eq!(a.0, b.0, epsilon = 1e-8);
            assert_relative_eq!(a.1, b.1, epsilon = 1e-6);
            assert_relative_eq!(a.2, b.2, epsilon = 1e-4);
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let cap = CapParams::new(0.1).unwrap();
        let h = 1e-6;
        for k in 1..40 {
            let z = -0.2 + 0.1 * k as f64 / 40.0;
            let fd1 = (cap.value(z + h) - cap.value(z - h)) / (2.0 * h);
            let fd2 = (cap.slope(z + h) - cap.slope(z - h)) / (2.0 * h);
            assert_relative_eq!(cap.slope(z), fd1, epsilon = 1e-7);
            assert_relative_eq!(cap.curvature(z), fd2, epsilon = 1e-5);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let cap = CapParams::new(0.1).unwrap();
        for z in [-0.19, -0.15, -0.11, -0.05, 0.3] {
            assert_relative_eq!(cap.inverse(cap.value(z)).unwrap(), z, epsilon = 1e-12);
        }
        assert!(cap.inverse(-0.2).is_none());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn increasing_and_bounded(beta in 0.01f64..1.0, a in -3.0f64..1.0, b in -3.0f64..1.0) {
            let cap = CapParams::new(beta).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(cap.value(lo) <= cap.value(hi));
            prop_assert!(cap.value(lo) >= -2.0 * beta && cap.value(lo) <= lo.max(-2.0 * beta));
            prop_assert!(cap.slope(lo) >= 0.0);
        }

        #[test]
        fn inverse_round_trips(beta in 0.01f64..1.0, s in 0.001f64..2.0) {
            let cap = CapParams::new(beta).unwrap();
            let z = -2.0 * beta + s * beta;
            let level = cap.value(z);
            if level > -2.0 * beta + 1e-9 {
                let back = cap.inverse(level).unwrap();
                prop_assert!((cap.value(back) - level).abs() <= 1e-12);
            }
        }
    }
}
