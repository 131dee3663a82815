//! Bayesian model averaging over single models with a constant discrepancy.
//!
//! Model `k` explains the residuals `d_i = y_i − g_k(x_i)` as
//! `d_i = δ + σ ε_i`. Its evidence is computed exactly (closed form under the
//! conjugate prior, adaptive quadrature otherwise), by prior Monte Carlo, or
//! by Laplace's method in `(δ, σ)`.

use nalgebra::{Matrix2, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::AlignedDataset;
use crate::error::{Error, Result};
use crate::optim::bfgs;
use crate::par::{map_indexed, try_map_indexed, Execution};
use crate::prob::{ln_gamma, log_sum_exp, normal, sample_log_gamma, DistSpec};
use crate::quadrature::integrate_log;
use crate::stream_rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MC_CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceMethod {
    Exact,
    Mc,
    Laplace,
}

impl EvidenceMethod {
    pub const ALL: [EvidenceMethod; 3] = [EvidenceMethod::Exact, EvidenceMethod::Mc, EvidenceMethod::Laplace];

    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceMethod::Exact => "exact",
            EvidenceMethod::Mc => "mc",
            EvidenceMethod::Laplace => "laplace",
        }
    }
}

/// Prior on the per-model residual parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualPrior {
    /// `λ = 1/σ² ~ Gamma(shape, rate)`, `δ | λ ~ N(μ, 1/λ)`.
    Conjugate { mu: f64, shape: f64, rate: f64 },
    /// Independent priors on `σ` and `δ ~ N(μ, s²)`.
    Independent { sigma: DistSpec, delta_mean: f64, delta_sd: f64 },
    /// `δ ≡ 0`; only `σ` is uncertain.
    NoDiscrepancy { sigma: DistSpec },
}

impl Default for ResidualPrior {
    fn default() -> Self {
        ResidualPrior::Conjugate {
            mu: 0.0,
            shape: 0.252,
            rate: 0.030,
        }
    }
}

impl ResidualPrior {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            ResidualPrior::Conjugate { mu, shape, rate } => mu.is_finite() && *shape > 0.0 && *rate > 0.0,
            ResidualPrior::Independent {
                sigma,
                delta_mean,
                delta_sd,
            } => {
                sigma.validate()?;
                sigma.is_positive() && delta_mean.is_finite() && *delta_sd > 0.0
            }
            ResidualPrior::NoDiscrepancy { sigma } => {
                sigma.validate()?;
                sigma.is_positive()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDistribution(format!("invalid residual prior {self:?}")))
        }
    }

    fn has_delta(&self) -> bool {
        !matches!(self, ResidualPrior::NoDiscrepancy { .. })
    }
}

/// Gamma prior on the precision `1/σ²` whose mean and variance match those
/// of `1/σ²` under `σ ~ Gamma(shape, rate)`. Needs `shape > 4`.
pub fn moment_matched_precision_prior(sigma_shape: f64, sigma_rate: f64) -> Result<(f64, f64)> {
    let a = sigma_shape;
    if !(a > 4.0 && sigma_rate > 0.0) {
        return Err(Error::Validation("precision moments need sigma shape > 4".into()));
    }
    let b = sigma_rate;
    let m1 = b * b / ((a - 1.0) * (a - 2.0));
    let m2 = b.powi(4) / ((a - 1.0) * (a - 2.0) * (a - 3.0) * (a - 4.0));
    let var = m2 - m1 * m1;
    Ok((m1 * m1 / var, m1 / var))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvidenceDiagnostics {
    pub n_mc: Option<usize>,
    pub hessian_cond: Option<f64>,
    /// Mode found by Laplace's method, `(δ, σ)` or `(σ)`.
    pub mode: Option<Vec<f64>>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceResult {
    pub model_name: String,
    pub method: EvidenceMethod,
    pub log_evidence: f64,
    pub mc_se: Option<f64>,
    pub diagnostics: EvidenceDiagnostics,
}

impl EvidenceResult {
    fn new(method: EvidenceMethod, log_evidence: f64) -> Self {
        Self {
            model_name: String::new(),
            method,
            log_evidence,
            mc_se: None,
            diagnostics: EvidenceDiagnostics::default(),
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.model_name = name.to_string();
        self
    }
}

fn check_residuals(d: &[f64]) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Validation("evidence needs at least one residual".into()));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite residual".into()));
    }
    Ok(())
}

/// `(n, d̄, Σ(d − d̄)²)`.
fn suff_stats(d: &[f64]) -> (f64, f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let ss = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (n, mean, ss)
}

/// Closed-form evidence under the conjugate prior.
pub fn evidence_closed_form(d: &[f64], mu: f64, a: f64, b: f64) -> Result<EvidenceResult> {
    check_residuals(d)?;
    if !(a > 0.0 && b > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidDistribution("conjugate prior needs a, b > 0".into()));
    }
    let (n, mean, ss) = suff_stats(d);
    let a_n = a + 0.5 * n;
    let b_n = b + 0.5 * ss + n * (mean - mu).powi(2) / (2.0 * (1.0 + n));
    let kappa_n = 1.0 + n;
    let le = ln_gamma(a_n) + a * b.ln() - ln_gamma(a) - a_n * b_n.ln() - 0.5 * kappa_n.ln() - 0.5 * n * LN_2PI;
    if !le.is_finite() {
        return Err(Error::Numerical("closed-form log evidence overflowed".into()));
    }
    Ok(EvidenceResult::new(EvidenceMethod::Exact, le))
}

/// `ln p(d | δ, σ)` from sufficient statistics.
#[inline]
fn log_lik(n: f64, mean: f64, ss: f64, delta: f64, sigma: f64) -> f64 {
    -0.5 * n * LN_2PI - n * sigma.ln() - (ss + n * (mean - delta).powi(2)) / (2.0 * sigma * sigma)
}

fn dist_hess(d: &DistSpec, x: f64) -> f64 {
    match *d {
        DistSpec::Gamma { shape, .. } => -(shape - 1.0) / (x * x),
        DistSpec::Normal { sd, .. } | DistSpec::HalfNormal { sd } => -1.0 / (sd * sd),
        _ => 0.0,
    }
}

/// `l = ln p(d | δ, σ) + ln π(δ, σ)` in `(δ, σ)` coordinates, with gradient
/// and Hessian. For [`ResidualPrior::NoDiscrepancy`] only the `σ` entries
/// are meaningful.
#[derive(Debug, Clone)]
pub struct LaplaceTarget<'a> {
    prior: &'a ResidualPrior,
    n: f64,
    mean: f64,
    ss: f64,
    sum_d: f64,
}

impl<'a> LaplaceTarget<'a> {
    pub fn new(d: &[f64], prior: &'a ResidualPrior) -> Self {
        let (n, mean, ss) = suff_stats(d);
        Self {
            prior,
            n,
            mean,
            ss,
            sum_d: n * mean,
        }
    }

    /// `Σ (d_i − δ)²`.
    fn sq(&self, delta: f64) -> f64 {
        self.ss + self.n * (self.mean - delta).powi(2)
    }

    pub fn value(&self, delta: f64, sigma: f64) -> f64 {
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self.prior {
            ResidualPrior::Conjugate { mu, shape, rate } => {
                let m = self.n + 2.0 * shape + 2.0;
                let q = self.sq(delta) + (delta - mu).powi(2) + 2.0 * rate;
                let c = shape * rate.ln() - ln_gamma(shape) + 2f64.ln() - 0.5 * (self.n + 1.0) * LN_2PI;
                c - m * sigma.ln() - q / (2.0 * sigma * sigma)
            }
            ResidualPrior::Independent {
                sigma: ref sp,
                delta_mean,
                delta_sd,
            } => {
                log_lik(self.n, self.mean, self.ss, delta, sigma)
                    + sp.ln_pdf(sigma)
                    + DistSpec::Normal {
                        mean: delta_mean,
                        sd: delta_sd,
                    }
                    .ln_pdf(delta)
            }
            ResidualPrior::NoDiscrepancy { sigma: ref sp } => log_lik(self.n, self.mean, self.ss, 0.0, sigma) + sp.ln_pdf(sigma),
        }
    }

    /// `(∂l/∂δ, ∂l/∂σ)`.
    pub fn gradient(&self, delta: f64, sigma: f64) -> [f64; 2] {
        let s2 = sigma * sigma;
        let s3 = s2 * sigma;
        let r_sum = self.sum_d - self.n * delta;
        match *self.prior {
            ResidualPrior::Conjugate { mu, shape, rate } => {
                let m = self.n + 2.0 * shape + 2.0;
                let q = self.sq(delta) + (delta - mu).powi(2) + 2.0 * rate;
                [(r_sum - (delta - mu)) / s2, -m / sigma + q / s3]
            }
            ResidualPrior::Independent {
                sigma: ref sp,
                delta_mean,
                delta_sd,
            } => [
                r_sum / s2 - (delta - delta_mean) / (delta_sd * delta_sd),
                -self.n / sigma + self.sq(delta) / s3 + sp.grad_ln_pdf(sigma),
            ],
            ResidualPrior::NoDiscrepancy { sigma: ref sp } => [0.0, -self.n / sigma + self.sq(0.0) / s3 + sp.grad_ln_pdf(sigma)],
        }
    }

    /// `[[∂²/∂δ², ∂²/∂δ∂σ], [∂²/∂σ∂δ, ∂²/∂σ²]]`.
    pub fn hessian(&self, delta: f64, sigma: f64) -> [[f64; 2]; 2] {
        let s2 = sigma * sigma;
        let s3 = s2 * sigma;
        let s4 = s2 * s2;
        let r_sum = self.sum_d - self.n * delta;
        match *self.prior {
            ResidualPrior::Conjugate { mu, shape, rate } => {
                let m = self.n + 2.0 * shape + 2.0;
                let q = self.sq(delta) + (delta - mu).powi(2) + 2.0 * rate;
                let cross = -2.0 * (r_sum - (delta - mu)) / s3;
                [[-(self.n + 1.0) / s2, cross], [cross, m / s2 - 3.0 * q / s4]]
            }
            ResidualPrior::Independent {
                sigma: ref sp,
                delta_sd,
                ..
            } => {
                let cross = -2.0 * r_sum / s3;
                [
                    [-self.n / s2 - 1.0 / (delta_sd * delta_sd), cross],
                    [cross, self.n / s2 - 3.0 * self.sq(delta) / s4 + dist_hess(sp, sigma)],
                ]
            }
            ResidualPrior::NoDiscrepancy { sigma: ref sp } => {
                [[0.0, 0.0], [0.0, self.n / s2 - 3.0 * self.sq(0.0) / s4 + dist_hess(sp, sigma)]]
            }
        }
    }
}

/// Laplace approximation around the posterior mode of `(δ, σ)`, located by
/// BFGS on `(δ, ln σ)` from three starting points.
pub fn evidence_laplace(d: &[f64], prior: &ResidualPrior) -> Result<EvidenceResult> {
    check_residuals(d)?;
    prior.validate()?;
    let t = LaplaceTarget::new(d, prior);
    let has_delta = prior.has_delta();
    let rms = (t.sq(0.0) / t.n).sqrt().max(1e-3);
    let sd = (t.ss / t.n).sqrt().max(1e-3);
    let starts = [[t.mean, sd.ln()], [0.0, rms.ln()], [0.5 * t.mean, (2.0 * rms).ln()]];
    let mut best: Option<(f64, [f64; 2])> = None;
    for st in starts {
        let obj = |x: &[f64]| {
            let (delta, ls) = if has_delta { (x[0], x[1]) } else { (0.0, x[0]) };
            let sigma = ls.exp();
            let v = t.value(delta, sigma);
            let g = t.gradient(delta, sigma);
            if has_delta {
                (-v, vec![-g[0], -g[1] * sigma])
            } else {
                (-v, vec![-g[1] * sigma])
            }
        };
        let x0: Vec<f64> = if has_delta { st.to_vec() } else { vec![st[1]] };
        let Ok(m) = bfgs(obj, &x0, 1e-10, 500) else { continue };
        let mode = if has_delta { [m.x[0], m.x[1].exp()] } else { [0.0, m.x[0].exp()] };
        if best.as_ref().map_or(true, |(v, _)| -m.value > *v) {
            best = Some((-m.value, mode));
        }
    }
    let (lmax, mode) = best.ok_or_else(|| Error::Numerical("no posterior mode found".into()))?;
    let h = t.hessian(mode[0], mode[1]);
    let mut res;
    if has_delta {
        let neg = -Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
        let eig = SymmetricEigen::new(neg).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 0.0) {
            return Err(Error::Numerical(format!(
                "Hessian at the mode is not negative definite (eigenvalues of −H: {lo:e}, {hi:e})"
            )));
        }
        res = EvidenceResult::new(EvidenceMethod::Laplace, LN_2PI - 0.5 * (lo * hi).ln() + lmax);
        res.diagnostics.hessian_cond = Some(hi / lo);
        res.diagnostics.mode = Some(mode.to_vec());
    } else {
        let c = -h[1][1];
        if !(c > 0.0) {
            return Err(Error::Numerical(format!("second derivative at the mode is {:e}", -c)));
        }
        res = EvidenceResult::new(EvidenceMethod::Laplace, 0.5 * LN_2PI - 0.5 * c.ln() + lmax);
        res.diagnostics.hessian_cond = Some(1.0);
        res.diagnostics.mode = Some(vec![mode[1]]);
    }
    Ok(res)
}

/// Prior Monte Carlo estimate in independent chunks of `2^15` draws; chunk
/// `j` uses RNG stream `j` of `seed`, so results do not depend on `exec`.
pub fn evidence_mc(d: &[f64], prior: &ResidualPrior, n_mc: usize, seed: u64, exec: Execution) -> Result<EvidenceResult> {
    check_residuals(d)?;
    prior.validate()?;
    if n_mc == 0 {
        return Err(Error::Validation("n_mc must be positive".into()));
    }
    let (n, mean, ss) = suff_stats(d);
    let chunks = n_mc.div_ceil(MC_CHUNK);
    // per chunk: (max log-lik, Σ exp(w − max), Σ exp(2(w − max)))
    let parts = map_indexed(exec, chunks, |j| {
        let mut rng = stream_rng(seed, j as u64);
        let len = MC_CHUNK.min(n_mc - j * MC_CHUNK);
        let w: Vec<f64> = (0..len).map(|_| prior_log_lik(prior, n, mean, ss, &mut rng)).collect();
        let mx = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !mx.is_finite() {
            return (mx, 0.0, 0.0);
        }
        let (s1, s2) = w.iter().fold((0.0, 0.0), |(a, b), v| {
            let e = (v - mx).exp();
            (a + e, b + e * e)
        });
        (mx, s1, s2)
    });
    let mx = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return Err(Error::Numerical(
            "all Monte Carlo likelihoods underflow; rescale the prior or evaluate in log space".into(),
        ));
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for (m, a, b) in &parts {
        if m.is_finite() {
            let f = (m - mx).exp();
            s1 += a * f;
            s2 += b * f * f;
        }
    }
    let nf = n_mc as f64;
    let mean_w = s1 / nf;
    let mut res = EvidenceResult::new(EvidenceMethod::Mc, mean_w.ln() + mx);
    res.diagnostics.n_mc = Some(n_mc);
    if n_mc > 1 {
        let var = (s2 / nf - mean_w * mean_w).max(0.0) * nf / (nf - 1.0);
        res.mc_se = Some((var / nf).sqrt() / mean_w);
    } else {
        res.diagnostics.flags.push("mc_se undefined for a single draw".into());
    }
    if n_mc < 1000 {
        res.diagnostics.flags.push(format!("n_mc = {n_mc} is below 1000"));
    }
    Ok(res)
}

fn prior_log_lik<R: Rng + ?Sized>(prior: &ResidualPrior, n: f64, mean: f64, ss: f64, rng: &mut R) -> f64 {
    match prior {
        ResidualPrior::Conjugate { mu, shape, rate } => {
            let log_lambda = sample_log_gamma(*shape, rng) - rate.ln();
            let sigma = (-0.5 * log_lambda).exp();
            let delta = normal(*mu, sigma, rng);
            log_lik(n, mean, ss, delta, sigma)
        }
        ResidualPrior::Independent {
            sigma,
            delta_mean,
            delta_sd,
        } => {
            let s = sigma.sample(rng)[0];
            let delta = normal(*delta_mean, *delta_sd, rng);
            log_lik(n, mean, ss, delta, s)
        }
        ResidualPrior::NoDiscrepancy { sigma } => {
            let s = sigma.sample(rng)[0];
            log_lik(n, mean, ss, 0.0, s)
        }
    }
}

/// Exact evidence: closed form for the conjugate prior, otherwise adaptive
/// quadrature over `ln σ` with `δ` integrated analytically.
pub fn evidence_exact(d: &[f64], prior: &ResidualPrior) -> Result<EvidenceResult> {
    check_residuals(d)?;
    prior.validate()?;
    let (n, mean, ss) = suff_stats(d);
    let (sp, delta) = match prior {
        ResidualPrior::Conjugate { mu, shape, rate } => return evidence_closed_form(d, *mu, *shape, *rate),
        ResidualPrior::Independent {
            sigma,
            delta_mean,
            delta_sd,
        } => (sigma, Some((*delta_mean, *delta_sd))),
        ResidualPrior::NoDiscrepancy { sigma } => (sigma, None),
    };
    // integrand over u = ln σ, Jacobian σ
    let g = |u: f64| {
        let s = u.exp();
        let base = match delta {
            Some((m, sd)) => {
                // ∫ N(δ|m, sd²) Π N(d_i|δ, σ²) dδ
                let v = sd * sd + s * s / n;
                -0.5 * n * LN_2PI - n * s.ln() - ss / (2.0 * s * s) + 0.5 * (LN_2PI + (s * s / n).ln())
                    - 0.5 * (LN_2PI + v.ln())
                    - (mean - m).powi(2) / (2.0 * v)
            }
            None => log_lik(n, mean, ss, 0.0, s),
        };
        base + sp.ln_pdf(s) + u
    };
    let (lo, hi) = match sp {
        DistSpec::Uniform { lo, hi } => ((lo.max(1e-12)).ln(), hi.ln()),
        _ => (-25.0, 10.0),
    };
    let le = integrate_log(g, lo, hi, 64, 1e-12)?;
    let mut res = EvidenceResult::new(EvidenceMethod::Exact, le);
    res.diagnostics.flags.push("adaptive quadrature".into());
    Ok(res)
}

pub fn evidence(d: &[f64], prior: &ResidualPrior, method: EvidenceMethod, n_mc: usize, seed: u64, exec: Execution) -> Result<EvidenceResult> {
    match method {
        EvidenceMethod::Exact => evidence_exact(d, prior),
        EvidenceMethod::Mc => evidence_mc(d, prior, n_mc, seed, exec),
        EvidenceMethod::Laplace => evidence_laplace(d, prior),
    }
}

/// Residuals `y − g_k` of every model on a dataset.
pub fn model_residuals(data: &AlignedDataset, use_corrections: bool) -> Result<Vec<Vec<f64>>> {
    let g = data.domain.effective(use_corrections)?;
    Ok((0..data.p())
        .map(|k| (0..data.n()).map(|i| data.y[i] - g[(i, k)]).collect())
        .collect())
}

/// Evidence of every model by one method. Model `k` uses MC seed stream
/// `seed + k`; models run concurrently under `exec`.
pub fn evidence_all(
    data: &AlignedDataset,
    use_corrections: bool,
    prior: &ResidualPrior,
    method: EvidenceMethod,
    n_mc: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<EvidenceResult>> {
    let res = model_residuals(data, use_corrections)?;
    try_map_indexed(exec, res.len(), |k| {
        let inner = if exec.is_parallel() { Execution::Sequential } else { exec };
        evidence(&res[k], prior, method, n_mc, seed.wrapping_add(k as u64), inner).map(|e| e.named(&data.model_names()[k]))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmaWeights {
    pub model_names: Vec<String>,
    pub weights: Vec<f64>,
    pub prior: Vec<f64>,
}

/// Posterior model probabilities `∝ exp(log_evidence_k) π_k`.
pub fn bma_weights(evidences: &[EvidenceResult], prior_probs: Option<&[f64]>) -> Result<BmaWeights> {
    if evidences.is_empty() {
        return Err(Error::Validation("no evidences to weight".into()));
    }
    let method = evidences[0].method;
    if evidences.iter().any(|e| e.method != method) {
        return Err(Error::Validation("evidences were computed by different methods".into()));
    }
    let p = evidences.len();
    let prior = match prior_probs {
        Some(pp) => {
            if pp.len() != p {
                return Err(Error::Shape(format!("{} prior probabilities for {p} models", pp.len())));
            }
            if pp.iter().any(|v| !(*v >= 0.0)) || (pp.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Validation("prior model probabilities must lie on the simplex".into()));
            }
            pp.to_vec()
        }
        None => vec![1.0 / p as f64; p],
    };
    let logs: Vec<f64> = evidences.iter().zip(&prior).map(|(e, q)| e.log_evidence + q.ln()).collect();
    let z = log_sum_exp(&logs);
    if !z.is_finite() {
        return Err(Error::Numerical("all weighted evidences vanish".into()));
    }
    Ok(BmaWeights {
        model_names: evidences.iter().map(|e| e.model_name.clone()).collect(),
        weights: logs.iter().map(|l| (l - z).exp()).collect(),
        prior,
    })
}

/// Mixture sampling: each output draw picks model `k` with probability
/// `w_k`, then one of that model's predictive draws uniformly.
/// `per_model[k][s]` is draw `s` of model `k` over all locations.
pub fn bma_predict<R: Rng + ?Sized>(
    weights: &BmaWeights,
    per_model: &[Vec<Vec<f64>>],
    n_out: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if per_model.len() != weights.weights.len() {
        return Err(Error::Shape(format!(
            "{} models of draws for {} weights",
            per_model.len(),
            weights.weights.len()
        )));
    }
    let locs = per_model.iter().flatten().next().map(Vec::len).unwrap_or(0);
    for (k, draws) in per_model.iter().enumerate() {
        if weights.weights[k] > 0.0 && draws.is_empty() {
            return Err(Error::Shape(format!("model {k} has weight but no draws")));
        }
        if draws.iter().any(|d| d.len() != locs) {
            return Err(Error::Shape(format!("model {k} draws are not aligned on {locs} locations")));
        }
    }
    let cum: Vec<f64> = weights
        .weights
        .iter()
        .scan(0.0, |s, w| {
            *s += w;
            Some(*s)
        })
        .collect();
    let total = *cum.last().unwrap_or(&0.0);
    let mut out = Vec::with_capacity(n_out);
    for _ in 0..n_out {
        let u = rng.random::<f64>() * total;
        let k = cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1);
        let draws = &per_model[k];
        out.push(draws[rng.random_range(0..draws.len())].clone());
    }
    Ok(out)
}

/// Posterior predictive draws of one model under the conjugate prior:
/// `λ | d ~ Gamma(a_n, b_n)`, `δ | λ, d ~ N(μ_n, 1/(κ_n λ))`,
/// `y* = g* + δ + ε/√λ`.
pub fn conjugate_predictive<R: Rng + ?Sized>(
    d: &[f64],
    mu: f64,
    a: f64,
    b: f64,
    g_new: &[f64],
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    check_residuals(d)?;
    let (n, mean, ss) = suff_stats(d);
    let a_n = a + 0.5 * n;
    let b_n = b + 0.5 * ss + n * (mean - mu).powi(2) / (2.0 * (1.0 + n));
    let kappa_n = 1.0 + n;
    let mu_n = (mu + n * mean) / kappa_n;
    Ok((0..n_draws)
        .map(|_| {
            let lambda = (sample_log_gamma(a_n, rng) - b_n.ln()).exp();
            let s = 1.0 / lambda.sqrt();
            let delta = normal(mu_n, s / kappa_n.sqrt(), rng);
            g_new.iter().map(|g| g + delta + normal(0.0, s, rng)).collect()
        })
        .collect())
}
