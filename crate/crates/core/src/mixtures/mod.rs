//! The four mixing variants as differentiable log posteriors over an
//! unconstrained parameter vector θ.
//!
//! | variant     | weights                                   | θ layout                                         |
//! |-------------|-------------------------------------------|--------------------------------------------------|
//! | `GbmmL`     | global, iid uniform, logit transformed    | `logit ω [p]`, `log σ`                           |
//! | `GbmmD`     | global, `ω ~ Dir(α)`, `α ~ HalfNormal`    | `z [p−1]`, `log α [p]`, `log σ`                  |
//! | `LbmmGld`   | `ω(x) ~ Dir(exp(β_kᵀ φ(x)))`              | `z [(p−1)n]`, `β [pq]`, `log σ`                  |
//! | `LbmmGpd`   | `ω(x) ~ Dir(exp γ(x))`, `γ_k ~ GP`        | `z [(p−1)n]`, `u [pn]`, `γ∞ [p]`, `log η [p]`, `log ρ [q]`, `log σ` |
//!
//! The GP latents are whitened: `γ_k = γ∞_k + √η_k L u_k` with
//! `L Lᵀ = C(ρ) + εI` the jittered correlation matrix shared by all models.

mod packing;
mod priors;

use std::fmt;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use packing::{Block, Role, ThetaPacking, Transform};
pub use priors::PriorConfig;

use crate::dataset::{AlignedDataset, Location};
use crate::error::{Error, Result};
use crate::prob::gp::{cholesky_adjoint, correlation_matrix, CholFactor, KernelParams};
use crate::prob::{self, clamp_alpha, dirichlet_grad_alpha, dirichlet_ln_pdf, sigmoid, simplex, softplus, DistSpec};
use crate::samplers::LogDensity;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "gbmm-l")]
    GbmmL,
    #[serde(rename = "gbmm-d")]
    GbmmD,
    #[serde(rename = "lbmm-gld")]
    LbmmGld,
    #[serde(rename = "lbmm-gpd")]
    LbmmGpd,
}

impl Variant {
    pub fn is_local(self) -> bool {
        matches!(self, Variant::LbmmGld | Variant::LbmmGpd)
    }

    pub fn is_dirichlet(self) -> bool {
        !matches!(self, Variant::GbmmL)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::GbmmL => "GBMM+L",
            Variant::GbmmD => "GBMM+D",
            Variant::LbmmGld => "LBMM+GLD",
            Variant::LbmmGpd => "LBMM+GPD",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Feature map for the generalized-linear Dirichlet variant.
#[derive(Clone)]
pub enum CovariateMap {
    /// Coordinates standardized over the training locations, optionally with
    /// a leading intercept feature.
    Standardized { intercept: bool },
    Custom(Arc<dyn Fn(&Location) -> Vec<f64> + Send + Sync>),
}

impl Default for CovariateMap {
    fn default() -> Self {
        CovariateMap::Standardized { intercept: true }
    }
}

impl fmt::Debug for CovariateMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateMap::Standardized { intercept } => write!(f, "Standardized {{ intercept: {intercept} }}"),
            CovariateMap::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
struct Features {
    map: CovariateMap,
    mean: Vec<f64>,
    sd: Vec<f64>,
    q: usize,
    /// `n × q`, row-major.
    phi: Vec<f64>,
}

impl Features {
    fn build(map: CovariateMap, locs: &[Location]) -> Result<Self> {
        let dim = locs.first().map(Location::dim).unwrap_or(0);
        let n = locs.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut sd = vec![1.0; dim];
        if let CovariateMap::Standardized { .. } = map {
            for d in 0..dim {
                let m = locs.iter().map(|l| l.coords()[d]).sum::<f64>() / n;
                let v = locs.iter().map(|l| (l.coords()[d] - m).powi(2)).sum::<f64>() / n;
                mean[d] = m;
                sd[d] = if v > 0.0 { v.sqrt() } else { 1.0 };
            }
        }
        let mut f = Self {
            map,
            mean,
            sd,
            q: 0,
            phi: Vec::new(),
        };
        let rows = locs.iter().map(|l| f.at(l)).collect::<Result<Vec<_>>>()?;
        f.q = rows.first().map(Vec::len).unwrap_or(0);
        if f.q == 0 {
            return Err(Error::Validation("covariate map produced no features".into()));
        }
        if rows.iter().any(|r| r.len() != f.q) {
            return Err(Error::Shape("covariate map returned ragged feature vectors".into()));
        }
        f.phi = rows.concat();
        Ok(f)
    }

    fn at(&self, loc: &Location) -> Result<Vec<f64>> {
        let v = match &self.map {
            CovariateMap::Standardized { intercept } => {
                let mut v = Vec::with_capacity(loc.dim() + 1);
                if *intercept {
                    v.push(1.0);
                }
                v.extend(loc.coords().iter().enumerate().map(|(d, c)| (c - self.mean[d]) / self.sd[d]));
                v
            }
            CovariateMap::Custom(f) => f(loc),
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("non-finite features at {loc}")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone)]
struct GpSetup {
    /// Squared coordinate differences, one `n × n` matrix per input dimension.
    sq_diff: Vec<DMatrix<f64>>,
    kernel_init: Option<KernelParams>,
}

/// Constrained view of one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Unpacked {
    pub sigma: f64,
    /// `p` global weights, or `n × p` row-major local weights at the
    /// training locations.
    pub omega: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    /// `n × p` row-major log concentrations at the training locations.
    pub gamma: Option<Vec<f64>>,
    pub u: Option<Vec<f64>>,
    pub gamma_inf: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
}

/// A mixing variant bound to its training data and priors.
#[derive(Debug)]
pub struct ModelSpec {
    variant: Variant,
    packing: ThetaPacking,
    priors: PriorConfig,
    use_corrections: bool,
    data: AlignedDataset,
    /// Effective model outputs, `n × p` row-major.
    g: Vec<f64>,
    features: Option<Features>,
    gp: Option<GpSetup>,
    clamp_events: AtomicU64,
    max_jitter_bits: AtomicU64,
}

impl Clone for ModelSpec {
    fn clone(&self) -> Self {
        Self {
            variant: self.variant,
            packing: self.packing.clone(),
            priors: self.priors.clone(),
            use_corrections: self.use_corrections,
            data: self.data.clone(),
            g: self.g.clone(),
            features: self.features.clone(),
            gp: self.gp.clone(),
            clamp_events: AtomicU64::new(self.clamp_events.load(Ordering::Relaxed)),
            max_jitter_bits: AtomicU64::new(self.max_jitter_bits.load(Ordering::Relaxed)),
        }
    }
}

fn common_checks(data: &AlignedDataset, priors: &PriorConfig, min_p: usize) -> Result<()> {
    priors.validate()?;
    if data.p() < min_p {
        return Err(Error::Validation(format!("need at least {min_p} models, got {}", data.p())));
    }
    if data.n() == 0 {
        return Err(Error::Validation("empty training data".into()));
    }
    if data.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite observation".into()));
    }
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, p) = m.shape();
    let mut out = Vec::with_capacity(n * p);
    for i in 0..n {
        for k in 0..p {
            out.push(m[(i, k)]);
        }
    }
    out
}

impl ModelSpec {
    fn new(
        variant: Variant,
        packing: ThetaPacking,
        priors: &PriorConfig,
        data: &AlignedDataset,
        use_corrections: bool,
    ) -> Result<Self> {
        let g = row_major(&data.domain.effective(use_corrections)?);
        Ok(Self {
            variant,
            packing,
            priors: priors.clone(),
            use_corrections,
            data: data.clone(),
            g,
            features: None,
            gp: None,
            clamp_events: AtomicU64::new(0),
            max_jitter_bits: AtomicU64::new(0),
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn packing(&self) -> &ThetaPacking {
        &self.packing
    }

    pub fn dim(&self) -> usize {
        self.packing.dim()
    }

    pub fn data(&self) -> &AlignedDataset {
        &self.data
    }

    pub fn priors(&self) -> &PriorConfig {
        &self.priors
    }

    pub fn use_corrections(&self) -> bool {
        self.use_corrections
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    /// Number of times a Dirichlet concentration hit the clamp.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    /// Largest relative Cholesky jitter used so far (GPD only).
    pub fn max_relative_jitter(&self) -> f64 {
        f64::from_bits(self.max_jitter_bits.load(Ordering::Relaxed))
    }

    /// Effective model output `g_k(x_i)`.
    #[inline]
    pub fn g(&self, i: usize, k: usize) -> f64 {
        self.g[i * self.p() + k]
    }

    /// Features of the generalized-linear variant at an arbitrary location.
    pub fn features_at(&self, loc: &Location) -> Result<Vec<f64>> {
        match &self.features {
            Some(f) => f.at(loc),
            None => Err(Error::Unsupported(format!("{} has no covariates", self.variant))),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map(|f| f.q).unwrap_or(0)
    }

    /// Default starting point: zeros, `log σ = ln 0.5`, and the kernel
    /// initialization when one was supplied.
    pub fn initial_point(&self) -> Vec<f64> {
        let mut th = vec![0.0; self.dim()];
        for i in self.packing.range(Role::Sigma) {
            th[i] = 0.5f64.ln();
        }
        if let Some(kp) = self.gp.as_ref().and_then(|g| g.kernel_init.as_ref()) {
            for (i, e) in self.packing.range(Role::KernelEta).zip(&kp.eta) {
                th[i] = e.ln();
            }
            for (i, r) in self.packing.range(Role::KernelRho).zip(&kp.length_scales) {
                th[i] = r.ln();
            }
        }
        th
    }

    /// Jittered Cholesky factor of the training correlation matrix.
    pub fn gp_cholesky(&self, rho: &[f64]) -> Result<CholFactor> {
        let c = correlation_matrix(self.data.locations(), rho);
        let ch = CholFactor::new(&c, 0)?;
        self.max_jitter_bits.fetch_max(ch.jitter.to_bits(), Ordering::Relaxed);
        Ok(ch)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Shape(format!("theta has length {}, expected {}", theta.len(), self.dim())));
        }
        if theta.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical("NaN in theta".into()));
        }
        Ok(())
    }

    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        self.evaluate(theta, None)
    }

    pub fn grad_log_posterior(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_theta(theta)?;
        let mut grad = vec![0.0; self.dim()];
        let lp = self.evaluate(theta, Some(&mut grad))?;
        Ok((lp, grad))
    }

    fn evaluate(&self, theta: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        match self.variant {
            Variant::GbmmL => Ok(self.eval_linear(theta, grad)),
            Variant::GbmmD => Ok(self.eval_dirichlet(theta, grad)),
            Variant::LbmmGld => Ok(self.eval_gld(theta, grad)),
            Variant::LbmmGpd => self.eval_gpd(theta, grad),
        }
    }

    /// Prior on a positive scalar sampled as `u = ln x`.
    #[inline]
    fn log_scale_prior(dist: &DistSpec, u: f64) -> (f64, f64) {
        dist.ln_pdf_log_scale(u)
    }

    /// Gaussian likelihood with global weights. Returns the log likelihood,
    /// accumulating `∂/∂ω_k` into `omega_bar` and returning `∂/∂ln σ`.
    fn likelihood_global(&self, omega: &[f64], log_sigma: f64, omega_bar: Option<&mut [f64]>) -> (f64, f64) {
        let (n, p) = (self.n(), self.p());
        let inv_var = (-2.0 * log_sigma).exp();
        let mut ss = 0.0;
        let mut ob = omega_bar;
        for i in 0..n {
            let row = &self.g[i * p..(i + 1) * p];
            let mu: f64 = row.iter().zip(omega).map(|(g, w)| g * w).sum();
            let r = self.data.y[i] - mu;
            ss += r * r;
            if let Some(ob) = ob.as_deref_mut() {
                for k in 0..p {
                    ob[k] += r * row[k] * inv_var;
                }
            }
        }
        let nf = n as f64;
        let ll = -nf * log_sigma - nf * HALF_LN_2PI - 0.5 * ss * inv_var;
        (ll, -nf + ss * inv_var)
    }

    fn sigma_terms(&self, theta: &[f64], grad: &mut Option<&mut [f64]>, s_bar_lik: f64) -> f64 {
        let i = self.packing.range(Role::Sigma).start;
        let (lp, d) = Self::log_scale_prior(&self.priors.sigma, theta[i]);
        if let Some(g) = grad.as_deref_mut() {
            g[i] += d + s_bar_lik;
        }
        lp
    }

    fn eval_linear(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let p = self.p();
        let zr = self.packing.range(Role::WeightsZ);
        let (lo, hi) = match self.priors.omega_linear {
            DistSpec::Uniform { lo, hi } => (lo, hi),
            _ => unreachable!("validated"),
        };
        let width = hi - lo;
        let z = &theta[zr.clone()];
        let omega: Vec<f64> = z.iter().map(|&t| lo + width * sigmoid(t)).collect();
        let mut lp = 0.0;
        for &t in z {
            // uniform density times the Jacobian of the scaled logistic
            lp += -width.ln() + width.ln() - softplus(-t) - softplus(t);
        }
        let s = theta[self.packing.range(Role::Sigma).start];
        let mut omega_bar = vec![0.0; p];
        let want = grad.is_some();
        let (ll, s_bar) = self.likelihood_global(&omega, s, want.then_some(&mut omega_bar[..]));
        lp += ll;
        if let Some(g) = grad.as_deref_mut() {
            for (k, &t) in z.iter().enumerate() {
                let sg = sigmoid(t);
                g[zr.start + k] += omega_bar[k] * width * sg * (1.0 - sg) + (1.0 - 2.0 * sg);
            }
        }
        lp + self.sigma_terms(theta, &mut grad, s_bar)
    }

    fn eval_dirichlet(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let p = self.p();
        let zr = self.packing.range(Role::WeightsZ);
        let ar = self.packing.range(Role::Alpha);
        let z = &theta[zr.clone()];
        let mut omega = vec![0.0; p];
        let mut log_omega = vec![0.0; p];
        let log_jac = simplex::forward_into(z, &mut omega, &mut log_omega);
        let mut alpha = vec![0.0; p];
        let mut clamped = vec![false; p];
        for k in 0..p {
            let (a, c) = clamp_alpha(theta[ar.start + k].exp());
            alpha[k] = a;
            clamped[k] = c;
        }
        let n_clamped = clamped.iter().filter(|c| **c).count() as u64;
        if n_clamped > 0 {
            self.clamp_events.fetch_add(n_clamped, Ordering::Relaxed);
        }
        let mut lp = log_jac + dirichlet_ln_pdf(&alpha, &log_omega);
        for &a in &alpha {
            lp += self.priors.alpha.ln_pdf(a) + a.ln();
        }
        let s = theta[self.packing.range(Role::Sigma).start];
        let mut omega_bar = vec![0.0; p];
        let want = grad.is_some();
        let (ll, s_bar) = self.likelihood_global(&omega, s, want.then_some(&mut omega_bar[..]));
        lp += ll;
        if let Some(g) = grad.as_deref_mut() {
            let lw_bar: Vec<f64> = (0..p).map(|k| alpha[k] - 1.0 + omega_bar[k] * omega[k]).collect();
            simplex::backward_add(z, &lw_bar, 1.0, &mut g[zr.clone()]);
            let mut ga = vec![0.0; p];
            dirichlet_grad_alpha(&alpha, &log_omega, &mut ga);
            for k in 0..p {
                if !clamped[k] {
                    let a = alpha[k];
                    g[ar.start + k] += ga[k] * a + self.priors.alpha.grad_ln_pdf(a) * a + 1.0;
                }
            }
        }
        lp + self.sigma_terms(theta, &mut grad, s_bar)
    }

    /// Per-location Dirichlet terms, stick-breaking Jacobians, and the
    /// likelihood for local weights. `gamma` is `n × p` row-major log
    /// concentrations. Gradients go to the z block of `grad`, to
    /// `gamma_bar`, and the returned `∂/∂ln σ`.
    fn local_terms(
        &self,
        theta: &[f64],
        gamma: &[f64],
        grad: Option<&mut [f64]>,
        gamma_bar: &mut [f64],
    ) -> (f64, f64) {
        let (n, p) = (self.n(), self.p());
        let zr = self.packing.range(Role::WeightsZ);
        let s = theta[self.packing.range(Role::Sigma).start];
        let inv_var = (-2.0 * s).exp();
        let want = grad.is_some();
        let mut grad = grad;
        let mut omega = vec![0.0; p];
        let mut log_omega = vec![0.0; p];
        let mut alpha = vec![0.0; p];
        let mut clamped = vec![false; p];
        let mut ga = vec![0.0; p];
        let mut lw_bar = vec![0.0; p];
        let mut lp = 0.0;
        let mut ss = 0.0;
        let mut n_clamped = 0u64;
        for i in 0..n {
            let zi = &theta[zr.start + i * (p - 1)..zr.start + (i + 1) * (p - 1)];
            lp += simplex::forward_into(zi, &mut omega, &mut log_omega);
            for k in 0..p {
                let (a, c) = clamp_alpha(gamma[i * p + k].exp());
                alpha[k] = a;
                clamped[k] = c;
                n_clamped += c as u64;
            }
            lp += dirichlet_ln_pdf(&alpha, &log_omega);
            let row = &self.g[i * p..(i + 1) * p];
            let mu: f64 = row.iter().zip(&omega).map(|(g, w)| g * w).sum();
            let r = self.data.y[i] - mu;
            ss += r * r;
            if want {
                let g = grad.as_deref_mut().unwrap();
                for k in 0..p {
                    lw_bar[k] = alpha[k] - 1.0 + r * row[k] * inv_var * omega[k];
                }
                simplex::backward_add(zi, &lw_bar, 1.0, &mut g[zr.start + i * (p - 1)..zr.start + (i + 1) * (p - 1)]);
                dirichlet_grad_alpha(&alpha, &log_omega, &mut ga);
                for k in 0..p {
                    gamma_bar[i * p + k] = if clamped[k] { 0.0 } else { ga[k] * alpha[k] };
                }
            }
        }
        if n_clamped > 0 {
            self.clamp_events.fetch_add(n_clamped, Ordering::Relaxed);
        }
        let nf = n as f64;
        lp += -nf * s - nf * HALF_LN_2PI - 0.5 * ss * inv_var;
        (lp, -nf + ss * inv_var)
    }

    fn gld_gamma(&self, beta: &[f64]) -> Vec<f64> {
        let f = self.features.as_ref().expect("gld features");
        let (n, p, q) = (self.n(), self.p(), f.q);
        let mut gamma = vec![0.0; n * p];
        for i in 0..n {
            let phi = &f.phi[i * q..(i + 1) * q];
            for k in 0..p {
                gamma[i * p + k] = beta[k * q..(k + 1) * q].iter().zip(phi).map(|(b, x)| b * x).sum();
            }
        }
        gamma
    }

    fn eval_gld(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let f = self.features.as_ref().expect("gld features");
        let (n, p, q) = (self.n(), self.p(), f.q);
        let br = self.packing.range(Role::Beta);
        let beta = &theta[br.clone()];
        let gamma = self.gld_gamma(beta);
        let mut gamma_bar = vec![0.0; n * p];
        let (mut lp, s_bar) = self.local_terms(theta, &gamma, grad.as_deref_mut(), &mut gamma_bar);
        for &b in beta {
            lp += self.priors.beta.ln_pdf(b);
        }
        if let Some(g) = grad.as_deref_mut() {
            for k in 0..p {
                for j in 0..q {
                    let mut acc = self.priors.beta.grad_ln_pdf(beta[k * q + j]);
                    for i in 0..n {
                        acc += gamma_bar[i * p + k] * f.phi[i * q + j];
                    }
                    g[br.start + k * q + j] += acc;
                }
            }
        }
        lp + self.sigma_terms(theta, &mut grad, s_bar)
    }

    /// `v_k = L u_k` for every model, as an `n × p` matrix.
    fn gpd_whitened(&self, l: &DMatrix<f64>, u: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let um = DMatrix::from_column_slice(n, self.p(), u);
        l * um
    }

    fn eval_gpd(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        let (n, p) = (self.n(), self.p());
        let setup = self.gp.as_ref().expect("gp setup");
        let ur = self.packing.range(Role::GammaLatent);
        let gr = self.packing.range(Role::GammaInf);
        let er = self.packing.range(Role::KernelEta);
        let rr = self.packing.range(Role::KernelRho);
        let u = &theta[ur.clone()];
        let gamma_inf = &theta[gr.clone()];
        let log_eta = &theta[er.clone()];
        let rho: Vec<f64> = theta[rr.clone()].iter().map(|v| v.exp()).collect();
        let sqrt_eta: Vec<f64> = log_eta.iter().map(|v| (0.5 * v).exp()).collect();

        let corr = correlation_matrix(self.data.locations(), &rho);
        let chol = CholFactor::new(&corr, 0)?;
        self.max_jitter_bits.fetch_max(chol.jitter.to_bits(), Ordering::Relaxed);
        let v = self.gpd_whitened(&chol.l, u);

        let mut gamma = vec![0.0; n * p];
        for i in 0..n {
            for k in 0..p {
                gamma[i * p + k] = gamma_inf[k] + sqrt_eta[k] * v[(i, k)];
            }
        }
        let mut gamma_bar = vec![0.0; n * p];
        let (mut lp, s_bar) = self.local_terms(theta, &gamma, grad.as_deref_mut(), &mut gamma_bar);

        lp += -0.5 * u.iter().map(|x| x * x).sum::<f64>() - (u.len() as f64) * HALF_LN_2PI;
        for &c in gamma_inf {
            lp += self.priors.gamma_inf.ln_pdf(c);
        }
        for &le in log_eta {
            lp += Self::log_scale_prior(&self.priors.eta, le).0;
        }
        for &lr in &theta[rr.clone()] {
            lp += Self::log_scale_prior(&self.priors.rho, lr).0;
        }

        if let Some(g) = grad.as_deref_mut() {
            // G̃ = [√η_k ∂/∂γ_k], n × p
            let gt = DMatrix::from_fn(n, p, |i, k| sqrt_eta[k] * gamma_bar[i * p + k]);
            let u_bar = chol.l.transpose() * &gt;
            for k in 0..p {
                let mut sum_g = 0.0;
                let mut dot_gv = 0.0;
                for i in 0..n {
                    let gb = gamma_bar[i * p + k];
                    sum_g += gb;
                    dot_gv += gb * v[(i, k)];
                    g[ur.start + k * n + i] += u_bar[(i, k)] - u[k * n + i];
                }
                g[gr.start + k] += sum_g + self.priors.gamma_inf.grad_ln_pdf(gamma_inf[k]);
                g[er.start + k] += 0.5 * sqrt_eta[k] * dot_gv + Self::log_scale_prior(&self.priors.eta, log_eta[k]).1;
            }
            // ∂/∂L = G̃ Uᵀ, pulled back through the Cholesky factorization
            let um = DMatrix::from_column_slice(n, p, u);
            let l_bar = &gt * um.transpose();
            let c_bar = cholesky_adjoint(&chol.l, &l_bar);
            for (d, sq) in setup.sq_diff.iter().enumerate() {
                let r2 = rho[d] * rho[d];
                let mut acc = 0.0;
                for j in 0..n {
                    for i in 0..n {
                        acc += c_bar[(i, j)] * corr[(i, j)] * sq[(i, j)];
                    }
                }
                g[rr.start + d] += acc / r2 + Self::log_scale_prior(&self.priors.rho, theta[rr.start + d]).1;
            }
        }
        Ok(lp + self.sigma_terms(theta, &mut grad, s_bar))
    }

    /// Constrained parameters for one θ.
    pub fn unpack(&self, theta: &[f64]) -> Result<Unpacked> {
        self.check_theta(theta)?;
        let (n, p) = (self.n(), self.p());
        let sigma = theta[self.packing.range(Role::Sigma).start].exp();
        let zr = self.packing.range(Role::WeightsZ);
        let mut out = Unpacked {
            sigma,
            omega: Vec::new(),
            alpha: None,
            beta: None,
            gamma: None,
            u: None,
            gamma_inf: None,
            eta: None,
            rho: None,
        };
        match self.variant {
            Variant::GbmmL => {
                let (lo, hi) = match self.priors.omega_linear {
                    DistSpec::Uniform { lo, hi } => (lo, hi),
                    _ => unreachable!("validated"),
                };
                out.omega = theta[zr].iter().map(|&t| lo + (hi - lo) * sigmoid(t)).collect();
            }
            Variant::GbmmD => {
                out.omega = simplex::stick_breaking(&theta[zr]).0;
                out.alpha = Some(
                    theta[self.packing.range(Role::Alpha)]
                        .iter()
                        .map(|a| clamp_alpha(a.exp()).0)
                        .collect(),
                );
            }
            Variant::LbmmGld | Variant::LbmmGpd => {
                let mut omega = Vec::with_capacity(n * p);
                for i in 0..n {
                    let zi = &theta[zr.start + i * (p - 1)..zr.start + (i + 1) * (p - 1)];
                    omega.extend(simplex::stick_breaking(zi).0);
                }
                out.omega = omega;
                if self.variant == Variant::LbmmGld {
                    let beta = theta[self.packing.range(Role::Beta)].to_vec();
                    out.gamma = Some(self.gld_gamma(&beta));
                    out.beta = Some(beta);
                } else {
                    let u = theta[self.packing.range(Role::GammaLatent)].to_vec();
                    let gamma_inf = theta[self.packing.range(Role::GammaInf)].to_vec();
                    let eta: Vec<f64> = theta[self.packing.range(Role::KernelEta)].iter().map(|v| v.exp()).collect();
                    let rho: Vec<f64> = theta[self.packing.range(Role::KernelRho)].iter().map(|v| v.exp()).collect();
                    let chol = self.gp_cholesky(&rho)?;
                    let v = self.gpd_whitened(&chol.l, &u);
                    let mut gamma = vec![0.0; n * p];
                    for i in 0..n {
                        for k in 0..p {
                            gamma[i * p + k] = gamma_inf[k] + eta[k].sqrt() * v[(i, k)];
                        }
                    }
                    out.gamma = Some(gamma);
                    out.u = Some(u);
                    out.gamma_inf = Some(gamma_inf);
                    out.eta = Some(eta);
                    out.rho = Some(rho);
                }
            }
        }
        Ok(out)
    }

    /// Names of the hyper-level constrained quantities reported in traces.
    pub fn trace_names(&self) -> Vec<String> {
        let names = self.data.model_names();
        let mut out = vec!["sigma".to_string()];
        match self.variant {
            Variant::GbmmL => out.extend(names.iter().map(|m| format!("omega[{m}]"))),
            Variant::GbmmD => {
                out.extend(names.iter().map(|m| format!("omega[{m}]")));
                out.extend(names.iter().map(|m| format!("alpha[{m}]")));
            }
            Variant::LbmmGld => {
                let q = self.feature_dim();
                for m in names {
                    out.extend((0..q).map(|j| format!("beta[{m},{j}]")));
                }
            }
            Variant::LbmmGpd => {
                out.extend(names.iter().map(|m| format!("gamma_inf[{m}]")));
                out.extend(names.iter().map(|m| format!("eta[{m}]")));
                let coords = &self.data.domain.coord_names;
                out.extend(coords.iter().map(|c| format!("rho[{c}]")));
            }
        }
        out
    }

    /// Values matching [`trace_names`](Self::trace_names). Cheap: never
    /// factors a kernel matrix.
    pub fn trace_values(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![theta[self.packing.range(Role::Sigma).start].exp()];
        match self.variant {
            Variant::GbmmL | Variant::GbmmD => {
                if let Ok(u) = self.unpack(theta) {
                    out.extend(u.omega);
                    if let Some(a) = u.alpha {
                        out.extend(a);
                    }
                }
            }
            Variant::LbmmGld => out.extend_from_slice(&theta[self.packing.range(Role::Beta)]),
            Variant::LbmmGpd => {
                out.extend_from_slice(&theta[self.packing.range(Role::GammaInf)]);
                out.extend(theta[self.packing.range(Role::KernelEta)].iter().map(|v| v.exp()));
                out.extend(theta[self.packing.range(Role::KernelRho)].iter().map(|v| v.exp()));
            }
        }
        out
    }
}

impl LogDensity for ModelSpec {
    fn dim(&self) -> usize {
        ModelSpec::dim(self)
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        self.log_posterior(theta)
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_theta(theta)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.evaluate(theta, Some(grad))
    }

    fn initial_point(&self) -> Vec<f64> {
        ModelSpec::initial_point(self)
    }

    fn blocks(&self) -> Vec<Range<usize>> {
        self.packing.blocks().iter().map(Block::range).collect()
    }

    fn param_names(&self) -> Vec<String> {
        self.packing.coordinate_names()
    }

    fn packing(&self) -> Option<ThetaPacking> {
        Some(self.packing.clone())
    }
}

/// Global linear mixture with iid uniform weights (not constrained to the
/// simplex during sampling). `d = p + 1`.
pub fn build_gbmm_l(data: &AlignedDataset, priors: &PriorConfig, use_corrections: bool) -> Result<ModelSpec> {
    // p = 1 is allowed: it is the single-model residual likelihood
    common_checks(data, priors, 1)?;
    let mut pk = ThetaPacking::default();
    pk.push("omega", Role::WeightsZ, Transform::Logit, data.p());
    pk.push("sigma", Role::Sigma, Transform::Log, 1);
    ModelSpec::new(Variant::GbmmL, pk, priors, data, use_corrections)
}

/// Global hierarchical Dirichlet mixture. `d = 2p`.
pub fn build_gbmm_d(data: &AlignedDataset, priors: &PriorConfig, use_corrections: bool) -> Result<ModelSpec> {
    common_checks(data, priors, 2)?;
    let p = data.p();
    let mut pk = ThetaPacking::default();
    pk.push("omega", Role::WeightsZ, Transform::StickBreaking, p - 1);
    pk.push("alpha", Role::Alpha, Transform::Log, p);
    pk.push("sigma", Role::Sigma, Transform::Log, 1);
    ModelSpec::new(Variant::GbmmD, pk, priors, data, use_corrections)
}

/// Local Dirichlet weights with log concentrations linear in the covariates.
/// `d = (p−1)n + pq + 1`.
pub fn build_lbmm_gld(
    data: &AlignedDataset,
    priors: &PriorConfig,
    use_corrections: bool,
    covariate_map: CovariateMap,
) -> Result<ModelSpec> {
    common_checks(data, priors, 2)?;
    let features = Features::build(covariate_map, data.locations())?;
    let (n, p) = (data.n(), data.p());
    let mut pk = ThetaPacking::default();
    pk.push("omega_local", Role::WeightsZ, Transform::StickBreaking, (p - 1) * n);
    pk.push("beta", Role::Beta, Transform::Identity, p * features.q);
    pk.push("sigma", Role::Sigma, Transform::Log, 1);
    let mut spec = ModelSpec::new(Variant::LbmmGld, pk, priors, data, use_corrections)?;
    spec.features = Some(features);
    Ok(spec)
}

/// Local Dirichlet weights with independent latent GPs on the log
/// concentrations. `d = (p−1)n + pn + 2p + q + 1`.
pub fn build_lbmm_gpd(
    data: &AlignedDataset,
    priors: &PriorConfig,
    use_corrections: bool,
    kernel_init: Option<KernelParams>,
) -> Result<ModelSpec> {
    common_checks(data, priors, 2)?;
    let (n, p) = (data.n(), data.p());
    let unique: std::collections::HashSet<_> = data.locations().iter().collect();
    if unique.len() < 2 || unique.len() != n {
        return Err(Error::Validation("GP mixing needs at least 2 distinct locations".into()));
    }
    let q = data.locations()[0].dim();
    if let Some(kp) = &kernel_init {
        kp.validate()?;
        if kp.eta.len() != p || kp.length_scales.len() != q {
            return Err(Error::Shape(format!(
                "kernel init needs {p} variances and {q} length scales"
            )));
        }
    }
    let mut pk = ThetaPacking::default();
    pk.push("omega_local", Role::WeightsZ, Transform::StickBreaking, (p - 1) * n);
    pk.push("u", Role::GammaLatent, Transform::Identity, p * n);
    pk.push("gamma_inf", Role::GammaInf, Transform::Identity, p);
    pk.push("eta", Role::KernelEta, Transform::Log, p);
    pk.push("rho", Role::KernelRho, Transform::Log, q);
    pk.push("sigma", Role::Sigma, Transform::Log, 1);
    let locs = data.locations();
    let sq_diff = (0..q)
        .map(|d| DMatrix::from_fn(n, n, |i, j| (locs[i].coords()[d] - locs[j].coords()[d]).powi(2)))
        .collect();
    let mut spec = ModelSpec::new(Variant::LbmmGpd, pk, priors, data, use_corrections)?;
    spec.gp = Some(GpSetup { sq_diff, kernel_init });
    Ok(spec)
}

/// Options shared by the builders, for callers that select the variant at run time.
#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub use_corrections: bool,
    pub covariates: CovariateMap,
    pub kernel_init: Option<KernelParams>,
}

pub fn build(variant: Variant, data: &AlignedDataset, priors: &PriorConfig, opts: &BuildOptions) -> Result<ModelSpec> {
    match variant {
        Variant::GbmmL => build_gbmm_l(data, priors, opts.use_corrections),
        Variant::GbmmD => build_gbmm_d(data, priors, opts.use_corrections),
        Variant::LbmmGld => build_lbmm_gld(data, priors, opts.use_corrections, opts.covariates.clone()),
        Variant::LbmmGpd => build_lbmm_gpd(data, priors, opts.use_corrections, opts.kernel_init.clone()),
    }
}

/// `ω_k ← max(ω_k, 0) / Σ_ℓ max(ω_ℓ, 0)`.
pub fn project_simplex(omega: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = omega.iter().map(|w| w.max(0.0)).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Validation("cannot project onto the simplex: no positive component".into()));
    }
    Ok(omega.iter().map(|w| w.max(0.0) / total).collect())
}

/// Draw local weights `ω ~ Dir(exp γ)` with clamped concentrations.
pub fn sample_local_weights<R: rand::Rng + ?Sized>(gamma: &[f64], rng: &mut R) -> Vec<f64> {
    let alpha: Vec<f64> = gamma.iter().map(|g| clamp_alpha(g.exp()).0).collect();
    prob::sample_dirichlet(&alpha, rng)
}
