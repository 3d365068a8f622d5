//! Small dense helpers that nalgebra does not provide.

use nalgebra::{DMatrix, DVector};

/// Non-negative least squares `min |A w - b|` subject to `w >= 0`
/// (Lawson-Hanson active set). Returns the weights and the residual norm.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let mut w = DVector::zeros(n);
    if n == 0 {
        return (w, b.norm());
    }
    let mut passive = vec![false; n];
    let tol = 1e-13 * (1.0 + a.amax() * b.amax());
    for _outer in 0..(3 * n + 10) {
        let grad = a.transpose() * (b - a * &w);
        let candidate =
            (0..n).filter(|&j| !passive[j]).max_by(|&i, &j| grad[i].total_cmp(&grad[j])).filter(|&j| grad[j] > tol);
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let z_sub = match sub.clone().svd(true, true).solve(b, 1e-14) {
                Ok(z) => z,
                Err(_) => break,
            };
            let mut z = DVector::zeros(n);
            for (k, &col) in idx.iter().enumerate() {
                z[col] = z_sub[k];
            }
            if idx.iter().all(|&k| z[k] > 0.0) {
                w = z;
                break;
            }
            // step back to the boundary of the feasible region
            let mut alpha = 1.0f64;
            for &k in &idx {
                if z[k] <= 0.0 {
                    alpha = alpha.min(w[k] / (w[k] - z[k]));
                }
            }
            w += (z - &w) * alpha;
            for &k in &idx {
                if w[k] <= 1e-15 {
                    w[k] = 0.0;
                    passive[k] = false;
                }
            }
        }
    }
    let r = (b - a * &w).norm();
    (w, r)
}
