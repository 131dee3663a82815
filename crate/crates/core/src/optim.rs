//! BFGS minimization with a backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Minimize `f`, where `fg(x)` returns the value and the gradient.
pub fn bfgs<F>(mut fg: F, x0: &[f64], grad_tol: f64, max_iter: usize) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g) = fg(x.as_slice());
    let mut g = DVector::from_vec(g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("objective not finite at the starting point".into()));
    }
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    for it in 0..max_iter {
        let gn = g.amax();
        if gn < grad_tol {
            return Ok(Minimum {
                x: x.as_slice().to_vec(),
                value: fx,
                iterations: it,
                grad_norm: gn,
            });
        }
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + step * &dir;
            let (fn_, gn_) = fg(xn.as_slice());
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope && gn_.iter().all(|v| v.is_finite()) {
                accepted = Some((xn, fn_, DVector::from_vec(gn_)));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn_)) = accepted else {
            // no descent possible at machine precision
            return Ok(Minimum {
                x: x.as_slice().to_vec(),
                value: fx,
                iterations: it,
                grad_norm: gn,
            });
        };
        let s = &xn - &x;
        let y = &gn_ - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let a = &eye - rho * &s * y.transpose();
            let b = &eye - rho * &y * s.transpose();
            h_inv = &a * &h_inv * &b + rho * &s * s.transpose();
        }
        x = xn;
        fx = fn_;
        g = gn_;
    }
    Err(Error::Numerical(format!("BFGS did not converge in {max_iter} iterations")))
}
