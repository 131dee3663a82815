use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::DistSpec;

/// Priors of the mixing variants. Positive parameters are sampled on the log
/// scale; every field applies iid to the components of its block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub sigma: DistSpec,
    /// Linear-mixture weights; must be `Uniform`.
    pub omega_linear: DistSpec,
    /// Global Dirichlet concentrations.
    pub alpha: DistSpec,
    /// Generalized-linear coefficients of the log concentrations.
    pub beta: DistSpec,
    pub gamma_inf: DistSpec,
    pub eta: DistSpec,
    /// Applied to every coordinate's length scale.
    pub rho: DistSpec,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            sigma: DistSpec::Gamma { shape: 5.0, rate: 10.0 },
            omega_linear: DistSpec::Uniform { lo: 0.0, hi: 1.0 },
            alpha: DistSpec::HalfNormal { sd: 2.0 },
            beta: DistSpec::Normal { mean: 0.0, sd: 1.0 },
            gamma_inf: DistSpec::Normal { mean: 0.0, sd: 1.0 },
            eta: DistSpec::Gamma { shape: 10.0, rate: 2.0 },
            rho: DistSpec::Gamma { shape: 5.0, rate: 2.0 },
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("sigma", &self.sigma),
            ("omega_linear", &self.omega_linear),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma_inf", &self.gamma_inf),
            ("eta", &self.eta),
            ("rho", &self.rho),
        ] {
            d.validate()
                .map_err(|e| Error::InvalidDistribution(format!("prior {name}: {e}")))?;
            if matches!(d, DistSpec::Dirichlet { .. }) {
                return Err(Error::InvalidDistribution(format!("prior {name} must be scalar")));
            }
        }
        for (name, d) in [("sigma", &self.sigma), ("alpha", &self.alpha), ("eta", &self.eta), ("rho", &self.rho)] {
            if !d.is_positive() {
                return Err(Error::InvalidDistribution(format!(
                    "prior {name} must have positive support, got {d:?}"
                )));
            }
        }
        if !matches!(self.omega_linear, DistSpec::Uniform { .. }) {
            return Err(Error::InvalidDistribution("omega_linear prior must be uniform".into()));
        }
        Ok(())
    }
}
