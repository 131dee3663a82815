//! Log densities with analytic gradients, the stick-breaking simplex
//! bijection, and squared-exponential Gaussian-process algebra.

pub mod gp;
pub mod simplex;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaSampler, Normal as NormalSampler, StandardNormal};
use serde::{Deserialize, Serialize};
pub use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Lower and upper bound applied to Dirichlet concentrations after
/// exponentiating a log-concentration.
pub const ALPHA_MIN: f64 = 1e-8;
pub const ALPHA_MAX: f64 = 1e8;

/// Clamp a concentration into `[ALPHA_MIN, ALPHA_MAX]`; the flag reports
/// whether the clamp was active.
#[inline]
pub fn clamp_alpha(alpha: f64) -> (f64, bool) {
    if alpha < ALPHA_MIN {
        (ALPHA_MIN, true)
    } else if alpha > ALPHA_MAX {
        (ALPHA_MAX, true)
    } else if alpha.is_nan() {
        (ALPHA_MIN, true)
    } else {
        (alpha, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistSpec {
    Normal { mean: f64, sd: f64 },
    /// Shape/rate parametrization: mean `shape / rate`.
    Gamma { shape: f64, rate: f64 },
    HalfNormal { sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Dirichlet { alpha: Vec<f64> },
}

/// Gradient of a log density, with a flag set when the point lies outside
/// the support (in which case the gradient is defined as zero).
#[derive(Debug, Clone, PartialEq)]
pub struct GradLogPdf {
    pub grad: Vec<f64>,
    pub out_of_support: bool,
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DistSpec::Normal { mean, sd } => mean.is_finite() && *sd > 0.0 && sd.is_finite(),
            DistSpec::Gamma { shape, rate } => *shape > 0.0 && *rate > 0.0 && shape.is_finite() && rate.is_finite(),
            DistSpec::HalfNormal { sd } => *sd > 0.0 && sd.is_finite(),
            DistSpec::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            DistSpec::Dirichlet { alpha } => !alpha.is_empty() && alpha.iter().all(|a| *a > 0.0 && a.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDistribution(format!("{self:?}")))
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DistSpec::Dirichlet { alpha } => alpha.len(),
            _ => 1,
        }
    }

    /// Whether the support is contained in `(0, ∞)`.
    pub fn is_positive(&self) -> bool {
        match self {
            DistSpec::Gamma { .. } | DistSpec::HalfNormal { .. } => true,
            DistSpec::Uniform { lo, .. } => *lo >= 0.0,
            _ => false,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            DistSpec::Normal { mean, .. } => vec![*mean],
            DistSpec::Gamma { shape, rate } => vec![shape / rate],
            DistSpec::HalfNormal { sd } => vec![sd * (2.0 / PI).sqrt()],
            DistSpec::Uniform { lo, hi } => vec![0.5 * (lo + hi)],
            DistSpec::Dirichlet { alpha } => {
                let s: f64 = alpha.iter().sum();
                alpha.iter().map(|a| a / s).collect()
            }
        }
    }

    /// Scalar log density; `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            DistSpec::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - LN_SQRT_2PI
            }
            DistSpec::Gamma { shape, rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
            DistSpec::HalfNormal { sd } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = x / sd;
                std::f64::consts::LN_2 - sd.ln() - LN_SQRT_2PI - 0.5 * z * z
            }
            DistSpec::Uniform { lo, hi } => {
                if x < lo || x > hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
            DistSpec::Dirichlet { .. } => f64::NAN,
        }
    }

    /// Derivative of [`ln_pdf`](Self::ln_pdf); zero outside the support.
    pub fn grad_ln_pdf(&self, x: f64) -> f64 {
        match *self {
            DistSpec::Normal { mean, sd } => -(x - mean) / (sd * sd),
            DistSpec::Gamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    (shape - 1.0) / x - rate
                }
            }
            DistSpec::HalfNormal { sd } => {
                if x < 0.0 {
                    0.0
                } else {
                    -x / (sd * sd)
                }
            }
            DistSpec::Uniform { .. } | DistSpec::Dirichlet { .. } => 0.0,
        }
    }

    /// Log density at `x` (length 1 for scalar families).
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        match self {
            DistSpec::Dirichlet { alpha } => {
                if x.len() != alpha.len() || !on_simplex(x, 1e-10) {
                    return f64::NEG_INFINITY;
                }
                let log_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
                dirichlet_ln_pdf(alpha, &log_x)
            }
            _ if x.len() == 1 => self.ln_pdf(x[0]),
            _ => f64::NAN,
        }
    }

    pub fn grad_logpdf(&self, x: &[f64]) -> GradLogPdf {
        let out = !self.logpdf(x).is_finite();
        if out {
            return GradLogPdf {
                grad: vec![0.0; x.len()],
                out_of_support: true,
            };
        }
        let grad = match self {
            DistSpec::Dirichlet { alpha } => alpha.iter().zip(x).map(|(a, v)| (a - 1.0) / v).collect(),
            _ => vec![self.grad_ln_pdf(x[0])],
        };
        GradLogPdf {
            grad,
            out_of_support: false,
        }
    }

    /// Log density and derivative of `u ↦ ln p(exp u) + u`, the density of
    /// `u = ln x` for a positive variable.
    #[inline]
    pub fn ln_pdf_log_scale(&self, u: f64) -> (f64, f64) {
        let x = u.exp();
        (self.ln_pdf(x) + u, self.grad_ln_pdf(x) * x + 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            DistSpec::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                vec![mean + sd * z]
            }
            DistSpec::Gamma { shape, rate } => {
                vec![GammaSampler::new(*shape, 1.0 / rate).expect("validated gamma").sample(rng)]
            }
            DistSpec::HalfNormal { sd } => {
                let z: f64 = rng.sample(StandardNormal);
                vec![(sd * z).abs()]
            }
            DistSpec::Uniform { lo, hi } => vec![rng.random_range(*lo..*hi)],
            DistSpec::Dirichlet { alpha } => sample_dirichlet(alpha, rng),
        }
    }
}

/// `ln Γ(Σα) − Σ ln Γ(α_k) + Σ (α_k − 1) ln x_k`, evaluated from `ln x`
/// without any support check.
pub fn dirichlet_ln_pdf(alpha: &[f64], log_x: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    let mut lp = ln_gamma(total);
    for (a, lx) in alpha.iter().zip(log_x) {
        lp += (a - 1.0) * lx - ln_gamma(*a);
    }
    lp
}

/// `∂/∂α_k` of [`dirichlet_ln_pdf`]: `ψ(Σα) − ψ(α_k) + ln x_k`, written into `out`.
pub fn dirichlet_grad_alpha(alpha: &[f64], log_x: &[f64], out: &mut [f64]) {
    let total: f64 = alpha.iter().sum();
    let psi_total = digamma(total);
    for ((o, a), lx) in out.iter_mut().zip(alpha).zip(log_x) {
        *o = psi_total - digamma(*a) + lx;
    }
}

pub fn on_simplex(x: &[f64], tol: f64) -> bool {
    x.iter().all(|v| *v > 0.0) && (x.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// Dirichlet draw computed through log-gamma variates so that small
/// concentrations do not underflow to exact zeros.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|&a| sample_log_gamma(a, rng)).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    // renormalized entries can still round to zero for pathological alphas
    for v in &mut w {
        if *v <= 0.0 {
            *v = f64::MIN_POSITIVE;
        }
    }
    w
}

/// `ln G` for `G ~ Gamma(shape, 1)`. For shape < 1 uses
/// `G = G' U^{1/shape}` with `G' ~ Gamma(shape + 1, 1)`.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        GammaSampler::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let g = GammaSampler::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    NormalSampler::new(mean, sd).expect("positive sd").sample(rng)
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_rng;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * (1.0 + x.abs());
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn uniform_dirichlet_on_two_simplex() {
        let d = DistSpec::Dirichlet { alpha: vec![1.0; 3] };
        let lp = d.logpdf(&[0.2, 0.5, 0.3]);
        assert!((lp - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sparse_dirichlet_grows_toward_corners() {
        let d = DistSpec::Dirichlet { alpha: vec![0.3; 3] };
        let center = d.logpdf(&[1.0 / 3.0; 3]);
        let near_corner = d.logpdf(&[0.9, 0.05, 0.05]);
        let corner = d.logpdf(&[0.998, 0.001, 0.001]);
        assert!(center < near_corner && near_corner < corner);
        let mixing = DistSpec::Dirichlet { alpha: vec![1.3; 3] };
        assert!(mixing.logpdf(&[1.0 / 3.0; 3]) > mixing.logpdf(&[0.9, 0.05, 0.05]));
    }

    #[test]
    fn sigma_prior_moments() {
        let g = DistSpec::Gamma { shape: 5.0, rate: 10.0 };
        assert_eq!(g.mean(), vec![0.5]);
        let sd = (5.0f64 / 100.0).sqrt();
        assert!((sd - 0.2236).abs() < 1e-4);
    }

    #[test]
    fn out_of_support_is_flagged() {
        let g = DistSpec::Gamma { shape: 2.0, rate: 1.0 };
        assert_eq!(g.logpdf(&[-1.0]), f64::NEG_INFINITY);
        let gr = g.grad_logpdf(&[-1.0]);
        assert!(gr.out_of_support);
        assert_eq!(gr.grad, vec![0.0]);
        let u = DistSpec::Uniform { lo: 0.0, hi: 1.0 };
        assert!(u.grad_logpdf(&[2.0]).out_of_support);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(DistSpec::Gamma { shape: 0.0, rate: 1.0 }.validate().is_err());
        assert!(DistSpec::Uniform { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(DistSpec::Dirichlet { alpha: vec![1.0, -1.0] }.validate().is_err());
        assert!(DistSpec::HalfNormal { sd: 2.0 }.validate().is_ok());
    }

    #[test]
    fn scalar_gradients_match_finite_differences() {
        let mut rng = stream_rng(11, 0);
        let fams = [
            DistSpec::Normal { mean: 0.3, sd: 1.7 },
            DistSpec::Gamma { shape: 5.0, rate: 10.0 },
            DistSpec::Gamma { shape: 10.0, rate: 2.0 },
            DistSpec::HalfNormal { sd: 2.0 },
            DistSpec::Uniform { lo: -1.0, hi: 3.0 },
        ];
        for fam in &fams {
            for _ in 0..100 {
                let x = match fam {
                    DistSpec::Normal { .. } => rng.random_range(-4.0..4.0),
                    DistSpec::Uniform { .. } => rng.random_range(-0.9..2.9),
                    _ => rng.random_range(0.05..5.0),
                };
                let fd = central_diff(|v| fam.ln_pdf(v), x);
                let an = fam.grad_ln_pdf(x);
                assert!(rel_err(fd, an) < 1e-5 || (fd - an).abs() < 1e-9, "{fam:?} x={x} fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn dirichlet_gradients_match_finite_differences() {
        let mut rng = stream_rng(12, 0);
        for _ in 0..100 {
            let alpha: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..6.0)).collect();
            let x = sample_dirichlet(&[2.0; 4], &mut rng);
            let log_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
            let g = DistSpec::Dirichlet { alpha: alpha.clone() }.grad_logpdf(&x).grad;
            let mut ga = vec![0.0; 4];
            dirichlet_grad_alpha(&alpha, &log_x, &mut ga);
            for k in 0..4 {
                let fx = central_diff(
                    |v| {
                        let mut lx = log_x.clone();
                        lx[k] = v.ln();
                        dirichlet_ln_pdf(&alpha, &lx)
                    },
                    x[k],
                );
                assert!(rel_err(fx, g[k]) < 1e-5, "x grad {fx} vs {}", g[k]);
                let fa = central_diff(
                    |v| {
                        let mut a = alpha.clone();
                        a[k] = v;
                        dirichlet_ln_pdf(&a, &log_x)
                    },
                    alpha[k],
                );
                assert!(rel_err(fa, ga[k]) < 1e-5 || (fa - ga[k]).abs() < 1e-8, "alpha grad {fa} vs {}", ga[k]);
            }
        }
    }

    #[test]
    fn dirichlet_sample_mean() {
        let alpha = [2.0, 5.0, 3.0];
        let mut rng = stream_rng(13, 0);
        let n = 100_000;
        let mut sum = [0.0; 3];
        let mut sumsq = [0.0; 3];
        for _ in 0..n {
            let w = sample_dirichlet(&alpha, &mut rng);
            for k in 0..3 {
                sum[k] += w[k];
                sumsq[k] += w[k] * w[k];
            }
        }
        for k in 0..3 {
            let m = sum[k] / n as f64;
            let var = sumsq[k] / n as f64 - m * m;
            let se = (var / n as f64).sqrt();
            let expect = alpha[k] / 10.0;
            assert!((m - expect).abs() < 3.0 * se, "k={k} mean {m} expect {expect} se {se}");
        }
    }

    #[test]
    fn small_alpha_draws_stay_valid() {
        let mut rng = stream_rng(14, 0);
        for _ in 0..10_000 {
            let w = sample_dirichlet(&[0.01, 0.02, 1e-4], &mut rng);
            assert!(w.iter().all(|v| *v > 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_scale_transform_gradient() {
        let g = DistSpec::Gamma { shape: 5.0, rate: 10.0 };
        for u in [-3.0, -0.7, 0.0, 1.2] {
            let (_, d) = g.ln_pdf_log_scale(u);
            let fd = central_diff(|v| g.ln_pdf_log_scale(v).0, u);
            assert!(rel_err(fd, d) < 1e-6);
        }
    }
}
