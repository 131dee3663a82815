//! Stick-breaking bijection between `R^{p-1}` and the open `p`-simplex.
//!
//! Break `k` (0-based) takes the fraction `s_k = logistic(z_k − ln(p − 1 − k))`
//! of the remaining stick `r_k`, so `z = 0` maps to the barycenter. The log
//! Jacobian is `Σ_k [ln s_k + ln(1 − s_k) + ln r_k]`.

use super::{sigmoid, softplus};

#[inline]
fn offset(p: usize, k: usize) -> f64 {
    ((p - 1 - k) as f64).ln()
}

/// Map `z` (length `p − 1`) to simplex weights `w` and their logs (length `p`).
/// Returns the log Jacobian determinant.
pub fn forward_into(z: &[f64], w: &mut [f64], log_w: &mut [f64]) -> f64 {
    let p = z.len() + 1;
    debug_assert_eq!(w.len(), p);
    debug_assert_eq!(log_w.len(), p);
    let mut log_r = 0.0;
    let mut log_jac = 0.0;
    for k in 0..p - 1 {
        let t = z[k] - offset(p, k);
        let log_s = -softplus(-t);
        let log_1ms = -softplus(t);
        log_w[k] = log_r + log_s;
        w[k] = log_w[k].exp();
        log_jac += log_s + log_1ms + log_r;
        log_r += log_1ms;
    }
    log_w[p - 1] = log_r;
    w[p - 1] = log_r.exp();
    log_jac
}

/// Allocating form of [`forward_into`]: `(w, log_jac)`.
pub fn stick_breaking(z: &[f64]) -> (Vec<f64>, f64) {
    let p = z.len() + 1;
    let mut w = vec![0.0; p];
    let mut lw = vec![0.0; p];
    let lj = forward_into(z, &mut w, &mut lw);
    (w, lj)
}

/// Inverse map from an interior simplex point to `z`.
pub fn stick_breaking_inverse(w: &[f64]) -> Vec<f64> {
    let p = w.len();
    let mut z = vec![0.0; p.saturating_sub(1)];
    let mut tail = w.last().copied().unwrap_or(0.0);
    for k in (0..p.saturating_sub(1)).rev() {
        z[k] = w[k].ln() - tail.ln() + offset(p, k);
        tail += w[k];
    }
    z
}

/// Reverse-mode pass. `lw_bar[k]` is the gradient of the target with respect
/// to `ln w_k`; `jac_weight` multiplies the log Jacobian term (1 for a
/// density on `z`). Gradients are *added* into `z_bar`.
pub fn backward_add(z: &[f64], lw_bar: &[f64], jac_weight: f64, z_bar: &mut [f64]) {
    let p = z.len() + 1;
    let mut rho = lw_bar[p - 1];
    for k in (0..p - 1).rev() {
        let s = sigmoid(z[k] - offset(p, k));
        z_bar[k] += lw_bar[k] * (1.0 - s) - rho * s + jac_weight * (1.0 - 2.0 * s);
        rho += lw_bar[k] + jac_weight;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_rng;
    use nalgebra::DMatrix;
    use rand::Rng;

    #[test]
    fn zero_maps_to_barycenter() {
        let (w, _) = stick_breaking(&[0.0, 0.0]);
        for v in w {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn roundtrip_and_simplex() {
        let mut rng = stream_rng(21, 0);
        for _ in 0..1000 {
            let p = rng.random_range(2..10);
            let z: Vec<f64> = (0..p - 1).map(|_| rng.random_range(-4.0..4.0)).collect();
            let (w, _) = stick_breaking(&z);
            assert!(w.iter().all(|v| *v > 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let back = stick_breaking_inverse(&w);
            for (a, b) in z.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b} p {p}");
            }
        }
    }

    /// `ln |det ∂(w_0..w_{p-2})/∂z|` by central differences.
    fn fd_log_det(z: &[f64]) -> f64 {
        let m = z.len();
        let mut jac = DMatrix::zeros(m, m);
        for j in 0..m {
            let h = 1e-6 * (1.0 + z[j].abs());
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[j] += h;
            zm[j] -= h;
            let (wp, _) = stick_breaking(&zp);
            let (wm, _) = stick_breaking(&zm);
            for i in 0..m {
                jac[(i, j)] = (wp[i] - wm[i]) / (2.0 * h);
            }
        }
        jac.determinant().abs().ln()
    }

    #[test]
    fn log_jacobian_matches_numerical_determinant() {
        let mut rng = stream_rng(22, 0);
        for _ in 0..100 {
            let p = rng.random_range(2..7);
            let z: Vec<f64> = (0..p - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (_, lj) = stick_breaking(&z);
            let fd = fd_log_det(&z);
            assert!((lj - fd).abs() < 1e-6, "analytic {lj} numerical {fd}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream_rng(23, 0);
        for _ in 0..50 {
            let p = rng.random_range(2..8);
            let z: Vec<f64> = (0..p - 1).map(|_| rng.random_range(-3.0..3.0)).collect();
            let c: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            // target: Σ c_k ln w_k + log_jac
            let target = |z: &[f64]| {
                let mut w = vec![0.0; p];
                let mut lw = vec![0.0; p];
                let lj = forward_into(z, &mut w, &mut lw);
                lw.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + lj
            };
            let mut g = vec![0.0; p - 1];
            backward_add(&z, &c, 1.0, &mut g);
            for j in 0..p - 1 {
                let h = 1e-6 * (1.0 + z[j].abs());
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += h;
                zm[j] -= h;
                let fd = (target(&zp) - target(&zm)) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[j]);
            }
        }
    }
}
