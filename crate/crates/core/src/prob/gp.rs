//! Squared-exponential kernels with per-model variance and shared length
//! scales, jittered Cholesky factors, Gaussian conditionals, and the
//! reverse-mode derivative of the Cholesky factorization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Location;
use crate::error::{Error, Result};

/// Initial jitter as a fraction of the mean diagonal.
pub const JITTER_START: f64 = 1e-8;
/// Largest jitter fraction tried before giving up.
pub const JITTER_MAX: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Marginal variance per model.
    pub eta: Vec<f64>,
    /// One length scale per input coordinate, shared across models.
    pub length_scales: Vec<f64>,
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if self.eta.iter().chain(&self.length_scales).all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidDistribution(format!("kernel parameters must be positive: {self:?}")))
        }
    }
}

/// `exp(−Σ_d (x_d − x'_d)² / (2ρ_d²))`.
#[inline]
pub fn correlation(x: &[f64], x2: &[f64], length_scales: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), l) in x.iter().zip(x2).zip(length_scales) {
        let d = (a - b) / l;
        s += d * d;
    }
    (-0.5 * s).exp()
}

/// `η_k · exp(−(Z−Z')²/(2ρ_Z²) − (N−N')²/(2ρ_N²))` in the nuclear case.
pub fn se_kernel(x: &Location, x2: &Location, kp: &KernelParams, k: usize) -> f64 {
    kp.eta[k] * correlation(x.coords(), x2.coords(), &kp.length_scales)
}

pub fn correlation_matrix(pts: &[Location], length_scales: &[f64]) -> DMatrix<f64> {
    let n = pts.len();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        c[(j, j)] = 1.0;
        for i in j + 1..n {
            let v = correlation(pts[i].coords(), pts[j].coords(), length_scales);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// `m × n` correlations between new points (rows) and training points.
pub fn cross_correlation(new: &[Location], train: &[Location], length_scales: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(new.len(), train.len(), |i, j| {
        correlation(new[i].coords(), train[j].coords(), length_scales)
    })
}

/// Lower factor `L` with `L Lᵀ = K + jitter·I`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

impl CholFactor {
    /// Factor `k`, escalating the jitter ×10 from `JITTER_START·mean(diag)`
    /// up to `JITTER_MAX·mean(diag)`. `model` only labels the error.
    pub fn new(k: &DMatrix<f64>, model: usize) -> Result<Self> {
        let n = k.nrows();
        if n == 0 {
            return Ok(Self {
                l: DMatrix::zeros(0, 0),
                jitter: 0.0,
            });
        }
        let scale = k.diagonal().mean();
        let mut frac = JITTER_START;
        loop {
            let jitter = frac * scale;
            let mut m = k.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = m.cholesky() {
                return Ok(Self { l: ch.l(), jitter });
            }
            if frac >= JITTER_MAX * 0.999 {
                return Err(Error::Cholesky { model, jitter });
            }
            frac *= 10.0;
        }
    }

    /// Jitter relative to the mean diagonal.
    pub fn relative_jitter(&self, k: &DMatrix<f64>) -> f64 {
        self.jitter / k.diagonal().mean()
    }

    /// `L⁻¹ b`.
    pub fn solve_l(&self, b: &DVector<f64>) -> DVector<f64> {
        self.l.solve_lower_triangular(b).expect("non-singular cholesky factor")
    }

    /// `(L Lᵀ)⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.solve_l(b);
        self.l.tr_solve_lower_triangular(&y).expect("non-singular cholesky factor")
    }
}

/// Conditional mean and covariance at `new_pts` of the GP with constant mean
/// `mean`, kernel `η_k·corr`, given exact latent values at `train_pts`.
pub fn gp_conditional(
    train_pts: &[Location],
    train_vals: &[f64],
    new_pts: &[Location],
    mean: f64,
    kp: &KernelParams,
    k: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    kp.validate()?;
    if train_pts.len() != train_vals.len() {
        return Err(Error::Shape("train points and values differ in length".into()));
    }
    let eta = kp.eta[k];
    let gram = correlation_matrix(train_pts, &kp.length_scales) * eta;
    let chol = CholFactor::new(&gram, k)?;
    let cross = cross_correlation(new_pts, train_pts, &kp.length_scales) * eta;
    let resid = DVector::from_iterator(train_vals.len(), train_vals.iter().map(|v| v - mean));
    let alpha = chol.solve(&resid);
    let cond_mean = (&cross * alpha).add_scalar(mean);
    // V = L⁻¹ K_*ᵀ, cov = K_** − Vᵀ V
    let v = chol
        .l
        .solve_lower_triangular(&cross.transpose())
        .expect("non-singular cholesky factor");
    let prior = correlation_matrix(new_pts, &kp.length_scales) * eta;
    let cov = prior - v.transpose() * v;
    Ok((cond_mean, cov))
}

/// Reverse-mode derivative of `Σ ↦ chol(Σ)`. Given the adjoint `L̄` (only the
/// lower triangle is read), returns the symmetric `Σ̄` such that
/// `δf = Σ_ij Σ̄_ij δΣ_ij`.
pub fn cholesky_adjoint(l: &DMatrix<f64>, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let lower_bar = l_bar.lower_triangle();
    let mut p = l.transpose() * lower_bar;
    // Φ: keep the lower triangle, halve the diagonal
    for j in 0..n {
        p[(j, j)] *= 0.5;
        for i in 0..j {
            p[(i, j)] = 0.0;
        }
    }
    let s = (&p + p.transpose()) * 0.5;
    let x = l.tr_solve_lower_triangular(&s).expect("non-singular cholesky factor");
    let y = l
        .tr_solve_lower_triangular(&x.transpose())
        .expect("non-singular cholesky factor");
    (&y + y.transpose()) * 0.5
}
