//! MCMC over unconstrained log densities: multinomial NUTS with windowed
//! adaptation, block random-walk Metropolis, and convergence diagnostics.

pub mod diagnostics;
mod mh;
mod nuts;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use diagnostics::{ess_bulk, split_rhat, DiagnosticsReport, ParamDiagnostics};
pub use nuts::{find_reasonable_step_size, DualAveraging};

use crate::error::{Error, Result};
use crate::mixtures::ThetaPacking;
use crate::par::{try_map_indexed, Execution};
use crate::stream_rng;

/// A differentiable log density on `R^d`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &[f64]) -> Result<f64>;

    /// Writes the gradient into `grad` (overwriting) and returns the log density.
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// Coordinate ranges updated jointly by the Metropolis sampler.
    fn blocks(&self) -> Vec<Range<usize>> {
        vec![0..self.dim()]
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("theta[{i}]")).collect()
    }

    fn packing(&self) -> Option<ThetaPacking> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Nuts,
    Mh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    /// Iterations per chain, burn-in included.
    pub total_draws: usize,
    pub burn_in: f64,
    pub chains: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Multiplier on the initial per-block random-walk scale `2.38/√len`.
    pub mh_scale: f64,
    /// Half-width of the uniform perturbation applied to the initial point.
    pub init_radius: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Nuts,
            total_draws: 50_000,
            burn_in: 0.5,
            chains: 4,
            target_accept: 0.8,
            max_tree_depth: 10,
            mh_scale: 1.0,
            init_radius: 0.5,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

impl SamplerConfig {
    /// 4 chains × 2000 iterations.
    pub fn desk() -> Self {
        Self {
            total_draws: 2000,
            ..Self::default()
        }
    }

    pub fn warmup(&self) -> usize {
        (self.total_draws as f64 * self.burn_in).round() as usize
    }

    pub fn kept_per_chain(&self) -> usize {
        self.total_draws - self.warmup()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_draws < 2 {
            return Err(Error::Validation("total_draws must be at least 2".into()));
        }
        if !(self.burn_in > 0.0 && self.burn_in < 1.0) {
            return Err(Error::Validation(format!("burn_in must lie in (0, 1), got {}", self.burn_in)));
        }
        if self.kept_per_chain() == 0 {
            return Err(Error::Validation("no draws left after burn-in".into()));
        }
        if self.chains == 0 {
            return Err(Error::Validation("need at least one chain".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Validation("target_accept must lie in (0, 1)".into()));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 30 {
            return Err(Error::Validation("max_tree_depth must lie in 1..=30".into()));
        }
        if !(self.mh_scale > 0.0 && self.mh_scale.is_finite()) || !(self.init_radius >= 0.0) {
            return Err(Error::Validation("mh_scale must be positive and init_radius non-negative".into()));
        }
        Ok(())
    }
}

/// Per-chain sampler statistics (post-warmup unless stated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ChainStats {
    pub step_size: f64,
    /// Post-warmup iterations (0-based) that diverged.
    pub divergences: Vec<usize>,
    pub warmup_divergences: usize,
    /// `tree_depth_hist[j]` counts transitions of depth `j`.
    pub tree_depth_hist: Vec<usize>,
    pub mean_accept: f64,
    pub n_grad_evals: u64,
    pub inv_metric: Vec<f64>,
    /// Final per-block proposal scales (Metropolis only).
    pub block_scales: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    dim: usize,
    chains: usize,
    per_chain: usize,
    /// Row-major, chain after chain.
    draws: Vec<f64>,
    pub names: Vec<String>,
    pub packing: Option<ThetaPacking>,
    pub stats: Vec<ChainStats>,
    pub warnings: Vec<String>,
}

impl PosteriorSamples {
    /// Build from per-chain row-major draw buffers of equal length.
    pub fn from_chains(dim: usize, chains: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        let per = chains.first().map(|c| c.len()).unwrap_or(0);
        if chains.iter().any(|c| c.len() != per) || dim == 0 || per % dim != 0 {
            return Err(Error::Shape("chains must hold equal numbers of complete draws".into()));
        }
        if names.len() != dim {
            return Err(Error::Shape(format!("{} names for dimension {dim}", names.len())));
        }
        let n_chains = chains.len();
        Ok(Self {
            dim,
            chains: n_chains,
            per_chain: per / dim,
            draws: chains.concat(),
            names,
            packing: None,
            stats: vec![ChainStats::default(); n_chains],
            warnings: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_chains(&self) -> usize {
        self.chains
    }

    pub fn draws_per_chain(&self) -> usize {
        self.per_chain
    }

    pub fn n_draws(&self) -> usize {
        self.chains * self.per_chain
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim)
    }

    pub fn chain_range(&self, c: usize) -> Range<usize> {
        c * self.per_chain..(c + 1) * self.per_chain
    }

    /// Coordinate `j` split by chain.
    pub fn coordinate_chains(&self, j: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| self.chain_range(c).map(|i| self.draws[i * self.dim + j]).collect())
            .collect()
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.iter().map(|d| d[j]).sum::<f64>() / self.n_draws() as f64
    }

    pub fn total_divergences(&self) -> usize {
        self.stats.iter().map(|s| s.divergences.len()).sum()
    }

    /// Apply `f` to every draw, keeping chain structure.
    pub fn map_draws<F>(&self, names: Vec<String>, f: F) -> Result<PosteriorSamples>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let dim = names.len();
        let chains = (0..self.chains)
            .map(|c| self.chain_range(c).flat_map(|i| f(self.draw(i))).collect())
            .collect();
        let mut out = PosteriorSamples::from_chains(dim, chains, names)?;
        out.stats = self.stats.clone();
        out.warnings = self.warnings.clone();
        Ok(out)
    }

    /// Wide trace CSV: `iteration,chain,<names...>`.
    pub fn write_trace_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["iteration".to_string(), "chain".to_string()];
        header.extend(self.names.iter().cloned());
        wr.write_record(&header).map_err(csv_err)?;
        for c in 0..self.chains {
            for (it, i) in self.chain_range(c).enumerate() {
                let mut rec = vec![it.to_string(), c.to_string()];
                rec.extend(self.draw(i).iter().map(|v| format!("{v:e}")));
                wr.write_record(&rec).map_err(csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Inverse of [`write_trace_csv`](Self::write_trace_csv).
    pub fn read_trace_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.len() < 3 || &header[0] != "iteration" || &header[1] != "chain" {
            return Err(Error::Validation("trace CSV must start with iteration,chain".into()));
        }
        let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let dim = names.len();
        let mut chains: Vec<Vec<f64>> = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let bad = |msg: String| Error::Parse {
                path: "trace".into(),
                row: row + 2,
                msg,
            };
            let c: usize = rec[1].parse().map_err(|e| bad(format!("chain: {e}")))?;
            if c > chains.len() {
                return Err(bad("chains out of order".into()));
            }
            if c == chains.len() {
                chains.push(Vec::new());
            }
            for v in rec.iter().skip(2) {
                chains[c].push(v.parse().map_err(|e| bad(format!("{v}: {e}")))?);
            }
        }
        if chains.is_empty() {
            return Err(Error::Validation("trace CSV holds no draws".into()));
        }
        PosteriorSamples::from_chains(dim, chains, names)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("csv: {e}"))
}

/// Perturbed starting point with finite log density and gradient.
fn initial_state<D: LogDensity + ?Sized, R: Rng>(target: &D, radius: f64, rng: &mut R) -> Result<Vec<f64>> {
    let base = target.initial_point();
    let mut grad = vec![0.0; target.dim()];
    for _ in 0..100 {
        let th: Vec<f64> = base
            .iter()
            .map(|b| if radius > 0.0 { b + rng.random_range(-radius..=radius) } else { *b })
            .collect();
        if let Ok(lp) = target.log_density_grad(&th, &mut grad) {
            if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
                return Ok(th);
            }
        }
    }
    Err(Error::Numerical("no finite initial point found in 100 attempts".into()))
}

/// Run `cfg.chains` chains, in parallel under [`Execution::Parallel`].
/// Chain `c` draws from RNG stream `c` of `cfg.seed`.
pub fn sample<D: LogDensity + ?Sized>(target: &D, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let results = try_map_indexed(cfg.execution, cfg.chains, |c| {
        let mut rng = stream_rng(cfg.seed, c as u64);
        let init = initial_state(target, cfg.init_radius, &mut rng)?;
        match cfg.algorithm {
            Algorithm::Nuts => nuts::run_chain(target, cfg, init, &mut rng),
            Algorithm::Mh => mh::run_chain(target, cfg, init, &mut rng),
        }
    })?;
    let (draws, stats): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut out = PosteriorSamples::from_chains(target.dim(), draws, target.param_names())?;
    out.packing = target.packing();
    out.stats = stats;
    let kept = out.n_draws();
    let div = out.total_divergences();
    if cfg.algorithm == Algorithm::Nuts && kept > 0 && div * 4 > kept {
        out.warnings.push(format!(
            "{div} of {kept} post-warmup transitions diverged (more than 25%); results are unreliable"
        ));
    }
    Ok(out)
}

pub fn nuts_sample<D: LogDensity + ?Sized>(target: &D, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    sample(target, &SamplerConfig { algorithm: Algorithm::Nuts, ..cfg.clone() })
}

pub fn mh_sample<D: LogDensity + ?Sized>(target: &D, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    sample(target, &SamplerConfig { algorithm: Algorithm::Mh, ..cfg.clone() })
}

#[cfg(test)]
mod tests;
