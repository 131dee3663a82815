//! Gaussian random-walk Metropolis, one proposal per parameter block per
//! iteration. Block scales adapt toward 23.4% acceptance during burn-in.

use rand::Rng;

use super::{ChainStats, LogDensity, SamplerConfig};
use crate::error::{Error, Result};
use crate::prob::standard_normal;

const TARGET_ACCEPT: f64 = 0.234;
const MAX_CONSECUTIVE_REJECTS: usize = 10_000;

fn eval<D: LogDensity + ?Sized>(target: &D, theta: &[f64]) -> f64 {
    match target.log_density(theta) {
        Ok(lp) if lp.is_finite() => lp,
        _ => f64::NEG_INFINITY,
    }
}

pub(super) fn run_chain<D: LogDensity + ?Sized, R: Rng>(
    target: &D,
    cfg: &SamplerConfig,
    init: Vec<f64>,
    rng: &mut R,
) -> Result<(Vec<f64>, ChainStats)> {
    let d = target.dim();
    let warmup = cfg.warmup();
    let blocks = target.blocks();
    let mut log_scale: Vec<f64> = blocks
        .iter()
        .map(|b| (cfg.mh_scale * 2.38 / (b.len().max(1) as f64).sqrt()).ln())
        .collect();
    let mut theta = init;
    let mut lp = eval(target, &theta);
    let mut prop = theta.clone();
    let mut draws = Vec::with_capacity(cfg.kept_per_chain() * d);
    let mut rejects = 0usize;
    let mut accepted = 0usize;
    let mut proposals = 0usize;
    let mut evals = 0u64;

    for it in 0..cfg.total_draws {
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                continue;
            }
            let s = log_scale[b].exp();
            prop.clone_from(&theta);
            for j in block.clone() {
                prop[j] += s * standard_normal(rng);
            }
            let lp_new = eval(target, &prop);
            evals += 1;
            let log_a = lp_new - lp;
            let acc = if log_a.is_nan() { 0.0 } else { log_a.min(0.0).exp() };
            if rng.random::<f64>() < acc {
                std::mem::swap(&mut theta, &mut prop);
                lp = lp_new;
                rejects = 0;
                if it >= warmup {
                    accepted += 1;
                }
            } else {
                rejects += 1;
                if rejects >= MAX_CONSECUTIVE_REJECTS {
                    return Err(Error::SamplerStuck(format!(
                        "{MAX_CONSECUTIVE_REJECTS} consecutive Metropolis rejections at iteration {it}"
                    )));
                }
            }
            if it < warmup {
                // Robbins-Monro on the log scale
                log_scale[b] += (acc - TARGET_ACCEPT) / ((it + 1) as f64).powf(0.6);
            } else {
                proposals += 1;
            }
        }
        if it >= warmup {
            draws.extend_from_slice(&theta);
        }
    }
    let stats = ChainStats {
        mean_accept: if proposals > 0 { accepted as f64 / proposals as f64 } else { 0.0 },
        n_grad_evals: evals,
        block_scales: log_scale.iter().map(|v| v.exp()).collect(),
        ..ChainStats::default()
    };
    Ok((draws, stats))
}
