//! Run configuration: a TOML file, optionally overridden from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bmm_core::bma::{EvidenceMethod, ResidualPrior};
use bmm_core::mixtures::{PriorConfig, Variant};
use bmm_core::predict::{GlobalWeights, PointEstimate};
use bmm_core::samplers::{Algorithm, SamplerConfig};
use bmm_core::Execution;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RunVariant {
    BmaEx,
    BmaMc,
    BmaLaplace,
    GbmmL,
    GbmmD,
    LbmmGld,
    LbmmGpd,
}

impl RunVariant {
    pub fn mixture(self) -> Option<Variant> {
        match self {
            RunVariant::GbmmL => Some(Variant::GbmmL),
            RunVariant::GbmmD => Some(Variant::GbmmD),
            RunVariant::LbmmGld => Some(Variant::LbmmGld),
            RunVariant::LbmmGpd => Some(Variant::LbmmGpd),
            _ => None,
        }
    }

    pub fn evidence_method(self) -> Option<EvidenceMethod> {
        match self {
            RunVariant::BmaEx => Some(EvidenceMethod::Exact),
            RunVariant::BmaMc => Some(EvidenceMethod::Mc),
            RunVariant::BmaLaplace => Some(EvidenceMethod::Laplace),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RunVariant::BmaEx => "BMA(ex)",
            RunVariant::BmaMc => "BMA(MC)",
            RunVariant::BmaLaplace => "BMA(Lap)",
            other => other.mixture().expect("mixture").label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Observation CSV (coordinate columns plus `value`).
    pub observations: PathBuf,
    /// One CSV per model (coordinate columns, `f`, optional `delta`).
    pub models: Vec<PathBuf>,
    /// Held-out observations scored by `evaluate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_observations: Option<PathBuf>,
    /// Split JSON `{train, evidence, test, exclusions}` over `observations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    /// Evidence set = the eight default nuclei (needs Z, N coordinates).
    #[serde(default)]
    pub nuclear_evidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub ecp_levels: Vec<f64>,
    pub point: PointEstimate,
    pub global_weights: GlobalWeights,
    pub project: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_draws: Option<usize>,
    /// Draws per model for BMA predictions.
    pub bma_draws: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            ecp_levels: vec![0.5, 0.68, 0.9, 0.95],
            point: PointEstimate::Mean,
            global_weights: GlobalWeights::Sampled,
            project: false,
            max_draws: None,
            bma_draws: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmaConfig {
    pub prior: ResidualPrior,
    pub n_mc: usize,
    /// Prior model probabilities; uniform when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_prior: Option<Vec<f64>>,
}

impl Default for BmaConfig {
    fn default() -> Self {
        Self {
            prior: ResidualPrior::default(),
            n_mc: 1_000_000,
            model_prior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: RunVariant,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub use_corrections: bool,
    pub data: DataConfig,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default)]
    pub bma: BmaConfig,
}

/// Flags that override the configuration file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long, value_enum)]
    pub variant: Option<RunVariant>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Iterations per chain, burn-in included.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<f64>,
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    pub n_mc: Option<usize>,
    #[arg(long)]
    pub corrections: Option<bool>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlgorithmArg {
    Nuts,
    Mh,
}

impl RunConfig {
    /// Parse `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            let joined = base.join(&*p);
            *p = std::path::absolute(&joined).unwrap_or(joined);
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.observations);
        self.data.models.iter_mut().for_each(fix);
        if let Some(p) = self.data.test_observations.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.split.as_mut() {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.output_dir = std::path::absolute(p).unwrap_or_else(|_| p.clone());
        }
        if let Some(d) = o.draws {
            self.sampler.total_draws = d;
        }
        if let Some(c) = o.chains {
            self.sampler.chains = c;
        }
        if let Some(b) = o.burn_in {
            self.sampler.burn_in = b;
        }
        if let Some(a) = o.algorithm {
            self.sampler.algorithm = match a {
                AlgorithmArg::Nuts => Algorithm::Nuts,
                AlgorithmArg::Mh => Algorithm::Mh,
            };
        }
        if let Some(n) = o.n_mc {
            self.bma.n_mc = n;
        }
        if let Some(c) = o.corrections {
            self.use_corrections = c;
        }
        if o.sequential {
            self.sampler.execution = Execution::Sequential;
        }
        self.sampler.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.models.is_empty() {
            bail!("data.models lists no model tables");
        }
        if self.variant.mixture().is_some() {
            self.sampler.validate()?;
            self.priors.validate()?;
        } else {
            self.bma.prior.validate()?;
            if self.variant == RunVariant::BmaMc && self.bma.n_mc == 0 {
                bail!("bma.n_mc must be positive");
            }
        }
        if let Some(l) = self.predict.ecp_levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            bail!("ECP level {l} must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
