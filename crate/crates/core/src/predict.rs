//! Posterior predictive propagation, rms, empirical coverage, and weight
//! fields.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Domain, Location};
use crate::error::{Error, Result};
use crate::mixtures::{sample_local_weights, ModelSpec, Variant};
use crate::par::{try_map_indexed, Execution};
use crate::prob::gp::cross_correlation;
use crate::prob::{normal, sample_dirichlet};
use crate::samplers::PosteriorSamples;
use crate::stream_rng;

pub const SUMMARY_LEVELS: [f64; 5] = [0.05, 0.16, 0.5, 0.84, 0.95];

/// How global Dirichlet weights enter predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GlobalWeights {
    /// The sampled `ω` of each posterior draw.
    #[default]
    Sampled,
    /// A fresh `ω ~ Dir(α)` per posterior draw.
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictOptions {
    pub global_weights: GlobalWeights,
    /// Project linear-mixture weights onto the simplex before mixing.
    pub project: bool,
    /// Add observation noise `σ ε`.
    pub noise: bool,
    /// Use at most this many evenly spaced posterior draws.
    pub max_draws: Option<usize>,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            global_weights: GlobalWeights::Sampled,
            project: false,
            noise: true,
            max_draws: None,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

fn selected_draws(samples: &PosteriorSamples, max: Option<usize>) -> Vec<usize> {
    let n = samples.n_draws();
    match max {
        Some(m) if m < n && m > 0 => (0..m).map(|i| i * n / m).collect(),
        _ => (0..n).collect(),
    }
}

struct Context<'a> {
    spec: &'a ModelSpec,
    locs: &'a [Location],
    /// Training row of each location, when it is a training site.
    train_idx: Vec<Option<usize>>,
    features: Option<Vec<Vec<f64>>>,
}

impl<'a> Context<'a> {
    fn new(spec: &'a ModelSpec, locs: &'a [Location]) -> Result<Self> {
        let data = spec.data();
        if let Some(l) = locs.iter().find(|l| l.dim() != data.locations()[0].dim()) {
            return Err(Error::Shape(format!("location {l} has the wrong dimension")));
        }
        let train_idx = locs.iter().map(|l| data.index_of(l)).collect();
        let features = if spec.variant() == Variant::LbmmGld {
            Some(locs.iter().map(|l| spec.features_at(l)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        Ok(Self {
            spec,
            locs,
            train_idx,
            features,
        })
    }

    /// Weights at every location (`locs × p`, row-major) and `σ` for one
    /// posterior draw.
    fn weights(&self, theta: &[f64], opts: &PredictOptions, rng: &mut rand_chacha::ChaCha8Rng) -> Result<(Vec<f64>, f64)> {
        let spec = self.spec;
        let p = spec.p();
        let m = self.locs.len();
        let u = spec.unpack(theta)?;
        let mut w = Vec::with_capacity(m * p);
        match spec.variant() {
            Variant::GbmmL => {
                let om = if opts.project {
                    crate::mixtures::project_simplex(&u.omega)?
                } else {
                    u.omega.clone()
                };
                for _ in 0..m {
                    w.extend_from_slice(&om);
                }
            }
            Variant::GbmmD => {
                let om = match opts.global_weights {
                    GlobalWeights::Sampled => u.omega.clone(),
                    GlobalWeights::Resample => sample_dirichlet(u.alpha.as_ref().expect("alpha"), rng),
                };
                for _ in 0..m {
                    w.extend_from_slice(&om);
                }
            }
            Variant::LbmmGld => {
                let beta = u.beta.as_ref().expect("beta");
                let feats = self.features.as_ref().expect("features");
                let q = spec.feature_dim();
                for (j, phi) in feats.iter().enumerate() {
                    if let Some(i) = self.train_idx[j] {
                        w.extend_from_slice(&u.omega[i * p..(i + 1) * p]);
                    } else {
                        let gamma: Vec<f64> = (0..p)
                            .map(|k| beta[k * q..(k + 1) * q].iter().zip(phi).map(|(b, x)| b * x).sum())
                            .collect();
                        w.extend(sample_local_weights(&gamma, rng));
                    }
                }
            }
            Variant::LbmmGpd => {
                let rho = u.rho.as_ref().expect("rho");
                let eta = u.eta.as_ref().expect("eta");
                let ginf = u.gamma_inf.as_ref().expect("gamma_inf");
                let latent = u.u.as_ref().expect("u");
                let n = spec.n();
                let new: Vec<usize> = (0..m).filter(|j| self.train_idx[*j].is_none()).collect();
                let mut cond = vec![None; m];
                if !new.is_empty() {
                    let chol = spec.gp_cholesky(rho)?;
                    let pts: Vec<Location> = new.iter().map(|j| self.locs[*j].clone()).collect();
                    let cross = cross_correlation(&pts, spec.data().locations(), rho);
                    // columns: L⁻¹ c* for each new point
                    let v = chol
                        .l
                        .solve_lower_triangular(&cross.transpose())
                        .ok_or_else(|| Error::Numerical("singular GP factor".into()))?;
                    let um = DMatrix::from_column_slice(n, p, latent);
                    let proj = v.transpose() * um; // new × p
                    for (r, &j) in new.iter().enumerate() {
                        let var1 = (1.0 - v.column(r).norm_squared()).max(0.0);
                        cond[j] = Some((proj.row(r).iter().copied().collect::<Vec<f64>>(), var1));
                    }
                }
                for j in 0..m {
                    if let Some(i) = self.train_idx[j] {
                        w.extend_from_slice(&u.omega[i * p..(i + 1) * p]);
                    } else {
                        let (proj, var1) = cond[j].as_ref().expect("conditional");
                        let gamma: Vec<f64> = (0..p)
                            .map(|k| {
                                let s = eta[k].sqrt();
                                normal(ginf[k] + s * proj[k], s * var1.sqrt(), rng)
                            })
                            .collect();
                        w.extend(sample_local_weights(&gamma, rng));
                    }
                }
            }
        }
        Ok((w, u.sigma))
    }
}

/// Posterior predictive draws (`draws × locations`) at the locations of
/// `domain`, whose model outputs must cover every location.
pub fn posterior_predictive(
    spec: &ModelSpec,
    samples: &PosteriorSamples,
    domain: &Domain,
    opts: &PredictOptions,
) -> Result<Vec<Vec<f64>>> {
    if domain.model_names != spec.data().model_names() {
        return Err(Error::Validation(format!(
            "prediction domain models {:?} differ from the fitted models {:?}",
            domain.model_names,
            spec.data().model_names()
        )));
    }
    let g = domain.effective(spec.use_corrections())?;
    let ctx = Context::new(spec, &domain.locations)?;
    let idx = selected_draws(samples, opts.max_draws);
    let p = spec.p();
    try_map_indexed(opts.execution, idx.len(), |s| {
        let mut rng = stream_rng(opts.seed, s as u64);
        let (w, sigma) = ctx.weights(samples.draw(idx[s]), opts, &mut rng)?;
        Ok((0..domain.n())
            .map(|j| {
                let mu: f64 = (0..p).map(|k| w[j * p + k] * g[(j, k)]).sum();
                if opts.noise {
                    mu + sigma * normal(0.0, 1.0, &mut rng)
                } else {
                    mu
                }
            })
            .collect())
    })
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSummary {
    pub location: Location,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    /// Quantiles at [`PredictiveSummary::levels`].
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub levels: Vec<f64>,
    pub rows: Vec<LocationSummary>,
    #[serde(skip)]
    pub draws: Option<Vec<Vec<f64>>>,
}

/// Which point estimate the rms uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PointEstimate {
    #[default]
    Mean,
    Median,
}

impl PredictiveSummary {
    pub fn from_draws(locations: &[Location], draws: Vec<Vec<f64>>, levels: &[f64], keep_draws: bool) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Validation("no predictive draws".into()));
        }
        if draws.iter().any(|d| d.len() != locations.len()) {
            return Err(Error::Shape("draws do not match the locations".into()));
        }
        let mut sorted_levels = levels.to_vec();
        sorted_levels.sort_by(f64::total_cmp);
        let s = draws.len() as f64;
        let rows = locations
            .iter()
            .enumerate()
            .map(|(j, loc)| {
                let mut col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
                let mean = col.iter().sum::<f64>() / s;
                let sd = if draws.len() > 1 {
                    (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0)).sqrt()
                } else {
                    0.0
                };
                col.sort_by(f64::total_cmp);
                LocationSummary {
                    location: loc.clone(),
                    mean,
                    sd,
                    median: quantile_sorted(&col, 0.5),
                    quantiles: sorted_levels.iter().map(|q| quantile_sorted(&col, *q)).collect(),
                }
            })
            .collect();
        Ok(Self {
            levels: sorted_levels,
            rows,
            draws: keep_draws.then_some(draws),
        })
    }

    pub fn point(&self, which: PointEstimate) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match which {
                PointEstimate::Mean => r.mean,
                PointEstimate::Median => r.median,
            })
            .collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.point(PointEstimate::Mean)
    }
}

pub fn rms(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() {
        return Err(Error::Shape(format!("rms of {} predictions against {} observations", pred.len(), obs.len())));
    }
    if pred.is_empty() {
        return Err(Error::Validation("rms of an empty set".into()));
    }
    let ss: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcpCurve {
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
    pub n_test: usize,
}

pub const MIN_ECP_DRAWS: usize = 100;

/// Fraction of observations inside the equal-tailed predictive interval at
/// each level. `draws` is `draws × locations`.
pub fn ecp(draws: &[Vec<f64>], obs: &[f64], levels: &[f64]) -> Result<EcpCurve> {
    let s = draws.len();
    if s < MIN_ECP_DRAWS {
        return Err(Error::Validation(format!("ECP needs at least {MIN_ECP_DRAWS} draws per location, got {s}")));
    }
    if draws.iter().any(|d| d.len() != obs.len()) {
        return Err(Error::Shape("draws do not match the observations".into()));
    }
    if obs.is_empty() {
        return Err(Error::Validation("ECP of an empty test set".into()));
    }
    for &c in levels {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::Validation(format!("level {c} must lie in (0, 1)")));
        }
        if (1.0 - c) / 2.0 * (s as f64) < 1.0 {
            return Err(Error::Validation(format!(
                "level {c}: {s} draws cannot resolve the {:.4} tail quantile",
                (1.0 - c) / 2.0
            )));
        }
    }
    let mut hits = vec![0usize; levels.len()];
    for (j, &y) in obs.iter().enumerate() {
        let mut col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        col.sort_by(f64::total_cmp);
        for (l, &c) in levels.iter().enumerate() {
            let lo = quantile_sorted(&col, (1.0 - c) / 2.0);
            let hi = quantile_sorted(&col, (1.0 + c) / 2.0);
            if y >= lo && y <= hi {
                hits[l] += 1;
            }
        }
    }
    Ok(EcpCurve {
        levels: levels.to_vec(),
        coverage: hits.iter().map(|h| *h as f64 / obs.len() as f64).collect(),
        n_test: obs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightField {
    pub locations: Vec<Location>,
    pub model_names: Vec<String>,
    /// `locations × models`, row-major.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub n_draws: usize,
    pub note: Option<String>,
}

impl WeightField {
    pub fn mean_at(&self, j: usize) -> &[f64] {
        let p = self.model_names.len();
        &self.mean[j * p..(j + 1) * p]
    }
}

/// Posterior mean and sd of `ω_k(x)` over `grid`, propagated as in
/// [`posterior_predictive`].
pub fn weight_field(spec: &ModelSpec, samples: &PosteriorSamples, grid: &[Location], opts: &PredictOptions) -> Result<WeightField> {
    let ctx = Context::new(spec, grid)?;
    let idx = selected_draws(samples, opts.max_draws);
    let per = try_map_indexed(opts.execution, idx.len(), |s| {
        let mut rng = stream_rng(opts.seed, s as u64);
        ctx.weights(samples.draw(idx[s]), opts, &mut rng).map(|(w, _)| w)
    })?;
    let len = grid.len() * spec.p();
    let n = per.len() as f64;
    let mut mean = vec![0.0; len];
    for w in &per {
        for (m, v) in mean.iter_mut().zip(w) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; len];
    if per.len() > 1 {
        for w in &per {
            for ((s, v), m) in sd.iter_mut().zip(w).zip(&mean) {
                *s += (v - m).powi(2) / (n - 1.0);
            }
        }
        sd.iter_mut().for_each(|v| *v = v.sqrt());
    }
    let note = match spec.variant() {
        Variant::GbmmL => Some("linear mixture weights are global and not constrained to the simplex".to_string()),
        Variant::GbmmD => Some("global weights: constant over the grid".to_string()),
        _ => None,
    };
    Ok(WeightField {
        locations: grid.to_vec(),
        model_names: spec.data().model_names().to_vec(),
        mean,
        sd,
        n_draws: per.len(),
        note,
    })
}

/// Posterior mean and sd of `σ`.
pub fn sigma_summary(spec: &ModelSpec, samples: &PosteriorSamples) -> (f64, f64) {
    let j = spec.packing().range(crate::mixtures::Role::Sigma).start;
    let v: Vec<f64> = samples.iter().map(|d| d[j].exp()).collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    (m, sd)
}
