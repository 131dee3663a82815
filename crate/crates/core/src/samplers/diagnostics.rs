//! Rank-normalized split R-hat and bulk effective sample size.

use std::collections::BTreeMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::PosteriorSamples;
use crate::error::Result;

/// Split every chain into two halves, dropping the middle draw of odd chains.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        out.push(c[..h].to_vec());
        out.push(c[c.len() - h..].to_vec());
    }
    out
}

/// Replace values by normal scores of their pooled fractional ranks
/// (average rank for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut idx: Vec<(f64, usize, usize)> = Vec::new();
    for (c, ch) in chains.iter().enumerate() {
        for (i, v) in ch.iter().enumerate() {
            idx.push((*v, c, i));
        }
    }
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = idx.len() as f64;
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        let z = std.inverse_cdf((rank - 0.375) / (s + 0.25));
        for item in &idx[i..=j] {
            out[item.1][item.2] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn rhat_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Rank-normalized split R-hat. `None` for fewer than two chains or fewer
/// than four draws per chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4 || c.len() != chains[0].len()) {
        return None;
    }
    let z = rank_normalize(&split(chains));
    let r = rhat_raw(&z);
    Some(if r.is_finite() { r } else { f64::INFINITY })
}

/// Biased autocovariance `(1/n) Σ (x_i − x̄)(x_{i+t} − x̄)` for all lags via FFT.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let size = (2 * n).next_power_of_two();
    let mu = mean(x);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mu, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    let fwd: Arc<dyn rustfft::Fft<f64>> = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    fwd.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Multi-chain ESS with Geyer's initial monotone sequence estimator.
pub fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(&c[..n])).collect();
    let nf = n as f64;
    let chain_mean: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let chain_var: Vec<f64> = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).collect();
    let mean_var = mean(&chain_var);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let g = mean(&chain_mean);
        var_plus += chain_mean.iter().map(|x| (x - g).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let acov_t = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = 1.0 - (mean_var - acov_t(1)) / var_plus;
    rho[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = 1.0 - (mean_var - acov_t(t + 1)) / var_plus;
        odd = 1.0 - (mean_var - acov_t(t + 2)) / var_plus;
        if even + odd >= 0.0 {
            rho[t + 1] = even;
            rho[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho[max_t] > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = rho[max_t];
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}

/// Bulk ESS: [`ess_raw`] on rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    if chains.iter().any(|c| c.len() < 8) {
        return f64::NAN;
    }
    ess_raw(&rank_normalize(&split(chains)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub rhat: Option<f64>,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub chain: usize,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub params: BTreeMap<String, ParamDiagnostics>,
    pub divergences: Vec<Divergence>,
    pub step_sizes: Vec<f64>,
    pub tree_depth_hist: Vec<usize>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl DiagnosticsReport {
    pub fn from_samples(samples: &PosteriorSamples) -> Self {
        let mut params = BTreeMap::new();
        for (j, name) in samples.names.iter().enumerate() {
            let ch = samples.coordinate_chains(j);
            params.insert(
                name.clone(),
                ParamDiagnostics {
                    rhat: split_rhat(&ch),
                    ess: ess_bulk(&ch),
                },
            );
        }
        let mut notes = Vec::new();
        if samples.n_chains() < 2 {
            notes.push("single chain: R-hat omitted".to_string());
        }
        let divergences = samples
            .stats
            .iter()
            .enumerate()
            .flat_map(|(c, s)| s.divergences.iter().map(move |&i| Divergence { chain: c, iteration: i }))
            .collect();
        let depth_len = samples.stats.iter().map(|s| s.tree_depth_hist.len()).max().unwrap_or(0);
        let mut tree_depth_hist = vec![0; depth_len];
        for s in &samples.stats {
            for (i, c) in s.tree_depth_hist.iter().enumerate() {
                tree_depth_hist[i] += c;
            }
        }
        Self {
            params,
            divergences,
            step_sizes: samples.stats.iter().map(|s| s.step_size).collect(),
            tree_depth_hist,
            warnings: samples.warnings.clone(),
            notes,
        }
    }

    pub fn max_rhat(&self) -> Option<f64> {
        self.params.values().filter_map(|p| p.rhat).reduce(f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.params.values().map(|p| p.ess).fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
