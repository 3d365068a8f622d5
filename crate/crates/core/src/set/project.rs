use nalgebra::{DMatrix, DVector};

use super::MovingSet;
use crate::error::{Error, Result};

const MAX_SQP_ITERATIONS: usize = 100;
const MAX_DYKSTRA_SWEEPS: usize = 20_000;
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    /// The input was already feasible.
    Identity,
    Sqp,
    Dykstra,
}

/// Result of projecting onto a level set of the raw constraints.
#[derive(Debug, Clone)]
pub struct Projection {
    pub point: DVector<f64>,
    /// KKT multipliers: `y - x = sum_i lambda_i grad psi_i(t, x)`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub method: ProjectionMethod,
}

struct Linearization {
    c: Vec<f64>,
    g: DMatrix<f64>,
    h: Vec<DMatrix<f64>>,
}

impl MovingSet {
    /// Nearest point of `C(t)`.
    pub fn project(&self, t: f64, y: &[f64]) -> Result<DVector<f64>> {
        Ok(self.project_level(t, y, 0.0)?.point)
    }

    /// Nearest point of `{ x : psi_i(t, x) <= level for all i }`.
    pub fn project_level(&self, t: f64, y: &[f64], level: f64) -> Result<Projection> {
        let m = self.len();
        let all: Vec<usize> = (0..m).collect();
        if self.max_violation(t, y)? <= level {
            return Ok(Projection {
                point: DVector::from_column_slice(y),
                multipliers: vec![0.0; m],
                iterations: 0,
                method: ProjectionMethod::Identity,
            });
        }
        let y = DVector::from_column_slice(y);
        if let Some((point, multipliers, iterations)) = self.sqp(t, &y, level, &all, &y, None)? {
            return Ok(Projection { point, multipliers, iterations, method: ProjectionMethod::Sqp });
        }
        self.dykstra(t, &y, level)
    }

    fn linearize(&self, t: f64, x: &DVector<f64>, level: f64, idx: &[usize]) -> Result<Linearization> {
        let n = self.dim();
        let mut c = Vec::with_capacity(idx.len());
        let mut g = DMatrix::zeros(idx.len(), n);
        let mut h = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            let jet = self.raw_jet(i, t, x.as_slice())?;
            c.push(jet.value - level);
            g.set_row(r, &jet.grad_x.transpose());
            h.push(jet.hess_x);
        }
        Ok(Linearization { c, g, h })
    }

    /// Newton iteration on the KKT system of `min |x - y|^2 / 2` subject to
    /// the constraints in `idx`. Each step solves the local QP exactly by
    /// enumerating active subsets. Returns `None` if the iteration stalls.
    #[allow(clippy::type_complexity)]
    fn sqp(
        &self,
        t: f64,
        y: &DVector<f64>,
        level: f64,
        idx: &[usize],
        start: &DVector<f64>,
        lambda0: Option<&[f64]>,
    ) -> Result<Option<(DVector<f64>, Vec<f64>, usize)>> {
        let n = self.dim();
        let k = idx.len();
        if k > 12 {
            return Ok(None);
        }
        let mut x = start.clone();
        let mut lam = lambda0.map_or_else(|| vec![0.0; k], <[f64]>::to_vec);
        let scale = 1.0 + y.norm();
        for it in 0..MAX_SQP_ITERATIONS {
            let lin = self.linearize(t, &x, level, idx)?;
            let mut stat = &x - y;
            for r in 0..k {
                stat += lin.g.row(r).transpose() * lam[r];
            }
            let feas = lin.c.iter().fold(0.0f64, |a, c| a.max(*c));
            let comp = lin.c.iter().zip(&lam).map(|(c, l)| (c * l).abs()).sum::<f64>();
            if feas <= 1e-12 * scale && stat.norm() <= 1e-10 * scale && comp <= 1e-12 * scale {
                let mut full = vec![0.0; self.len()];
                for (r, &i) in idx.iter().enumerate() {
                    full[i] = lam[r];
                }
                return Ok(Some((x, full, it)));
            }
            let mut w = DMatrix::identity(n, n);
            for r in 0..k {
                if lam[r] != 0.0 {
                    w += &lin.h[r] * lam[r];
                }
            }
            if w.clone().cholesky().is_none() {
                w = DMatrix::identity(n, n);
            }
            let q = &x - y;
            let Some((d, nu)) = solve_qp(&w, &q, &lin.g, &lin.c) else {
                return Ok(None);
            };
            if !d.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
            x += d;
            lam = nu;
        }
        Ok(None)
    }

    fn dykstra(&self, t: f64, y: &DVector<f64>, level: f64) -> Result<Projection> {
        let m = self.len();
        let mut x = y.clone();
        let mut incr = vec![DVector::zeros(self.dim()); m];
        let mut sweeps = 0;
        for sweep in 0..MAX_DYKSTRA_SWEEPS {
            sweeps = sweep + 1;
            let mut moved = 0.0f64;
            for i in 0..m {
                let z = &x + &incr[i];
                let p = self.sqp(t, &z, level, &[i], &z, None)?;
                let xi = match p {
                    Some((p, _, _)) => p,
                    None if self.raw_value(i, t, z.as_slice())? <= level => z.clone(),
                    None => {
                        return Err(Error::Projection(format!(
                            "single-constraint projection onto constraint {} failed at t = {t}",
                            i + 1
                        )))
                    }
                };
                incr[i] = &z - &xi;
                moved = moved.max((&xi - &x).norm());
                x = xi;
            }
            if moved <= 1e-14 * (1.0 + x.norm()) {
                break;
            }
        }
        // Polish from the Dykstra point with multiplier estimates taken from
        // the increments.
        let all: Vec<usize> = (0..m).collect();
        let lin = self.linearize(t, &x, level, &all)?;
        let lam0: Vec<f64> = (0..m)
            .map(|r| {
                let g = lin.g.row(r);
                let gg = g.norm_squared();
                if gg > 0.0 {
                    (g * &incr[r])[0].max(0.0) / gg
                } else {
                    0.0
                }
            })
            .collect();
        if let Some((point, multipliers, it)) = self.sqp(t, y, level, &all, &x, Some(&lam0))? {
            return Ok(Projection { point, multipliers, iterations: sweeps + it, method: ProjectionMethod::Dykstra });
        }
        let viol = lin.c.iter().fold(0.0f64, |a, c| a.max(*c));
        if viol > FEASIBILITY_TOL {
            return Err(Error::Projection(format!(
                "no convergence at t = {t}: residual violation {viol:e} after {sweeps} sweeps"
            )));
        }
        Ok(Projection { point: x, multipliers: lam0, iterations: sweeps, method: ProjectionMethod::Dykstra })
    }
}

/// Solve `min d'Wd/2 + q'd` s.t. `c + G d <= 0` for small constraint
/// counts by trying active sets in order of size.
fn solve_qp(w: &DMatrix<f64>, q: &DVector<f64>, g: &DMatrix<f64>, c: &[f64]) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = w.nrows();
    let k = c.len();
    let mut masks: Vec<u32> = (0..(1u32 << k)).collect();
    masks.sort_by_key(|m| m.count_ones());
    let tol = 1e-15 * (1.0 + q.norm());
    for mask in masks {
        let act: Vec<usize> = (0..k).filter(|r| mask & (1 << r) != 0).collect();
        let s = act.len();
        if s > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + s, n + s);
        kkt.view_mut((0, 0), (n, n)).copy_from(w);
        let mut rhs = DVector::zeros(n + s);
        rhs.rows_mut(0, n).copy_from(&(-q));
        for (a, &r) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(n + a, j)] = g[(r, j)];
                kkt[(j, n + a)] = g[(r, j)];
            }
            rhs[n + a] = -c[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        if !sol.iter().all(|v| v.is_finite()) {
            continue;
        }
        let d = sol.rows(0, n).into_owned();
        let mut nu = vec![0.0; k];
        let mut ok = true;
        for (a, &r) in act.iter().enumerate() {
            let v = sol[n + a];
            if v < -tol {
                ok = false;
                break;
            }
            nu[r] = v.max(0.0);
        }
        if !ok {
            continue;
        }
        let feasible = (0..k).all(|r| act.contains(&r) || c[r] + (g.row(r) * &d)[0] <= tol * (1.0 + c[r].abs()));
        if feasible {
            return Some((d, nu));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::super::tests::{set_from, two_spheres};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_disk_radial() {
        let s = set_from(2, &["x1^2 + x2^2 - 1"], 0.1, 3.0);
        let p = s.project(0.0, &[2.0, 0.0]).unwrap();
        assert_relative_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn interior_is_fixed_exactly() {
        let s = two_spheres(0.5, 0.05);
        let y = [0.1, -0.2, 0.05];
        assert_eq!(s.project(0.0, &y).unwrap().as_slice(), &y);
    }

    #[test]
    fn two_sphere_pole() {
        let s = two_spheres(0.5, 0.05);
        let p = s.project(0.0, &[0.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(p[2], 0.5, epsilon = 1e-10);
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
    }

    // Exterior point near the intersection circle: both constraints active.
    #[test]
    fn corner_projection_satisfies_kkt() {
        let s = two_spheres(0.5, 0.05);
        let y = [1.2, 0.3, 0.01];
        let pr = s.project_level(0.0, &y, 0.0).unwrap();
        let x = pr.point.as_slice();
        assert!(s.max_violation(0.0, x).unwrap() <= 1e-12);
        let mut res = nalgebra::DVector::from_column_slice(x) - nalgebra::DVector::from_column_slice(&y);
        for i in 0..2 {
            let j = s.raw_jet(i, 0.0, x).unwrap();
            res += j.grad_x * pr.multipliers[i];
            assert!(pr.multipliers[i] >= 0.0);
        }
        assert!(res.norm() <= 1e-10);
        assert!(pr.multipliers.iter().all(|l| *l > 0.0));
    }

    #[test]
    fn idempotent_and_variational() {
        let s = two_spheres(0.5, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = s.project(0.0, &y).unwrap();
            let pp = s.project(0.0, p.as_slice()).unwrap();
            assert!((&p - &pp).norm() <= 1e-9);
            let d = (&p - nalgebra::DVector::from_column_slice(&y)).norm();
            for _ in 0..50 {
                let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.8..0.8)).collect();
                if s.contains(0.0, &z).unwrap() {
                    let dz =
                        (nalgebra::DVector::from_column_slice(&z) - nalgebra::DVector::from_column_slice(&y)).norm();
                    assert!(d <= dz + 1e-12);
                }
            }
        }
    }

    #[test]
    fn level_sets() {
        let s = set_from(1, &["t - x1"], 0.1, 3.0);
        let p = s.project_level(0.0, &[0.0], -0.05).unwrap();
        assert_relative_eq!(p.point[0], 0.05, epsilon = 1e-14);
        assert_relative_eq!(p.multipliers[0], 0.05, epsilon = 1e-14);
    }

    #[test]
    fn dykstra_fallback_matches_sqp() {
        let s = two_spheres(0.5, 0.05);
        let y = nalgebra::DVector::from_column_slice(&[1.2, 0.3, 0.01]);
        let a = s.project_level(0.0, y.as_slice(), 0.0).unwrap();
        let b = s.dykstra(0.0, &y, 0.0).unwrap();
        assert!((&a.point - &b.point).norm() <= 1e-9);
    }
}
