//! Pipeline orchestration behind each subcommand. Every file is written
//! inside the run's output directory.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bmm_core::bma::{
    bma_predict, bma_weights, conjugate_predictive, evidence_all, model_residuals, BmaWeights, EvidenceMethod,
    EvidenceResult, ResidualPrior,
};
use bmm_core::dataset::{
    align, align_domain, common_locations, load_model_table, load_observations, positive_domain, AlignedDataset,
    Combine, Corrections, Domain, Location, ModelTable, SplitSpec,
};
use bmm_core::mixtures::{build, BuildOptions, ModelSpec};
use bmm_core::predict::{
    ecp, posterior_predictive, rms, sigma_summary, weight_field, PredictOptions, PredictiveSummary, SUMMARY_LEVELS,
};
use bmm_core::samplers::{sample, DiagnosticsReport, PosteriorSamples};
use bmm_core::stream_rng;
use serde::Serialize;

use crate::config::RunConfig;

const CONFIG_FILE: &str = "config.toml";
const SAMPLES_FILE: &str = "samples.csv";

pub struct Data {
    pub models: Vec<ModelTable>,
    pub train: AlignedDataset,
    pub evidence: AlignedDataset,
    pub test: Option<AlignedDataset>,
}

fn corrections(cfg: &RunConfig) -> Corrections {
    if cfg.use_corrections {
        Corrections::Auto
    } else {
        Corrections::Disabled
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    let models = cfg
        .data
        .models
        .iter()
        .map(|p| load_model_table(p, None).with_context(|| format!("dataset: loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let obs = load_observations(&cfg.data.observations)
        .with_context(|| format!("dataset: loading {}", cfg.data.observations.display()))?;
    let full = align(&obs, &models, corrections(cfg)).context("dataset: aligning observations")?;
    let split = match &cfg.data.split {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("dataset: reading {}", p.display()))?;
            SplitSpec::from_json(&text).context("dataset: parsing split")?
        }
        None => SplitSpec::all_train(full.n()),
    };
    let mut split = split;
    if cfg.data.nuclear_evidence {
        let nuclear = SplitSpec::nuclear_default(&full, split.test.clone()).context("dataset: nuclear evidence set")?;
        split.evidence = nuclear.evidence;
    }
    let parts = split.apply(&full, !cfg.use_corrections).context("dataset: applying split")?;
    let test = match &cfg.data.test_observations {
        Some(p) => {
            let obs = load_observations(p).with_context(|| format!("dataset: loading {}", p.display()))?;
            Some(align(&obs, &models, corrections(cfg)).context("dataset: aligning test observations")?)
        }
        None if parts.test.n() > 0 => Some(parts.test),
        None => None,
    };
    let evidence = if parts.evidence.n() > 0 { parts.evidence } else { parts.train.clone() };
    Ok(Data {
        models,
        train: parts.train,
        evidence,
        test,
    })
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ));
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn coord_cells(loc: &Location) -> Vec<String> {
    loc.coords().iter().map(|c| c.to_string()).collect()
}

#[derive(Serialize)]
struct Meta<'a> {
    version: &'a str,
    command: &'a str,
    variant: String,
    seed: u64,
    n_train: usize,
    n_evidence: usize,
    n_test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clamp_events: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_relative_jitter: Option<f64>,
    warnings: Vec<String>,
}

impl<'a> Meta<'a> {
    fn new(command: &'a str, cfg: &RunConfig, data: &Data) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            command,
            variant: cfg.variant.label().to_string(),
            seed: cfg.seed,
            n_train: data.train.n(),
            n_evidence: data.evidence.n(),
            n_test: data.test.as_ref().map_or(0, |t| t.n()),
            dim: None,
            clamp_events: None,
            max_relative_jitter: None,
            warnings: Vec::new(),
        }
    }
}

fn prepare_output(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    Ok(dir)
}

fn build_spec(cfg: &RunConfig, data: &AlignedDataset) -> Result<ModelSpec> {
    let variant = cfg.variant.mixture().ok_or_else(|| anyhow!("{} is not a mixture variant", cfg.variant.label()))?;
    let opts = BuildOptions {
        use_corrections: cfg.use_corrections,
        ..Default::default()
    };
    build(variant, data, &cfg.priors, &opts).context("mixtures: building the model")
}

fn bma_for(cfg: &RunConfig, data: &Data, method: EvidenceMethod) -> Result<(Vec<EvidenceResult>, BmaWeights)> {
    let ev = evidence_all(
        &data.evidence,
        cfg.use_corrections,
        &cfg.bma.prior,
        method,
        cfg.bma.n_mc,
        cfg.seed,
        cfg.sampler.execution,
    )
    .with_context(|| format!("bma: {} evidence", method.as_str()))?;
    let w = bma_weights(&ev, cfg.bma.model_prior.as_deref()).context("bma: weights")?;
    Ok((ev, w))
}

fn write_evidence(dir: &Path, results: &[(Vec<EvidenceResult>, BmaWeights)]) -> Result<()> {
    let header = ["model", "method", "log_evidence", "mc_se", "hessian_cond", "weight", "flags"].map(String::from);
    let rows = results.iter().flat_map(|(ev, w)| {
        ev.iter().zip(&w.weights).map(|(e, wk)| {
            vec![
                e.model_name.clone(),
                e.method.as_str().to_string(),
                e.log_evidence.to_string(),
                e.mc_se.map(|v| v.to_string()).unwrap_or_default(),
                e.diagnostics.hessian_cond.map(|v| v.to_string()).unwrap_or_default(),
                wk.to_string(),
                e.diagnostics.flags.join("; "),
            ]
        })
    });
    write_csv(&dir.join("evidence.csv"), &header, rows)?;
    // one row per method, one column per model
    let mut header = vec!["method".to_string()];
    header.extend(results[0].1.model_names.iter().cloned());
    let rows = results.iter().map(|(ev, w)| {
        let mut r = vec![ev[0].method.as_str().to_string()];
        r.extend(w.weights.iter().map(|v| v.to_string()));
        r
    });
    write_csv(&dir.join("bma_weights.csv"), &header, rows)
}

pub fn fit(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let dir = prepare_output(cfg)?;
    let mut meta = Meta::new("fit", cfg, &data);
    if let Some(method) = cfg.variant.evidence_method() {
        let res = bma_for(cfg, &data, method)?;
        for (m, w) in res.1.model_names.iter().zip(&res.1.weights) {
            println!("{m}: weight {w:.4}");
        }
        write_evidence(&dir, &[res])?;
        return write_json(&dir.join("meta.json"), &meta);
    }
    let spec = build_spec(cfg, &data.train)?;
    let samples = sample(&spec, &cfg.sampler).context("samplers: sampling the posterior")?;
    samples.write_trace_csv(BufWriter::new(File::create(dir.join(SAMPLES_FILE))?))?;
    let trace = samples.map_draws(spec.trace_names(), |d| spec.trace_values(d))?;
    trace.write_trace_csv(BufWriter::new(File::create(dir.join("trace.csv"))?))?;
    let report = DiagnosticsReport::from_samples(&samples);
    std::fs::write(dir.join("diagnostics.json"), report.to_json()? + "\n")?;
    meta.dim = Some(spec.dim());
    meta.clamp_events = Some(spec.clamp_events());
    meta.max_relative_jitter = Some(spec.max_relative_jitter());
    meta.warnings = samples.warnings.clone();
    meta.warnings.extend(report.warnings.iter().cloned());
    write_json(&dir.join("meta.json"), &meta)?;
    let (s_mean, s_sd) = sigma_summary(&spec, &samples);
    println!(
        "{}: {} draws, max R-hat {}, min bulk ESS {:.0}, {} divergences, sigma {s_mean:.4} ± {s_sd:.4}",
        cfg.variant.label(),
        samples.n_draws(),
        report.max_rhat().map_or("n/a".to_string(), |r| format!("{r:.4}")),
        report.min_ess(),
        samples.total_divergences()
    );
    for w in &meta.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn evidence(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let dir = prepare_output(cfg)?;
    let results = EvidenceMethod::ALL
        .iter()
        .map(|&m| bma_for(cfg, &data, m))
        .collect::<Result<Vec<_>>>()?;
    for (ev, w) in &results {
        let cells: Vec<String> = w.model_names.iter().zip(&w.weights).map(|(m, v)| format!("{m} {v:.4}")).collect();
        println!("{}: {}", ev[0].method.as_str(), cells.join(", "));
    }
    write_evidence(&dir, &results)?;
    write_json(&dir.join("meta.json"), &Meta::new("evidence", cfg, &data))
}

/// A finished `fit` run reopened from its directory.
pub struct Run {
    pub dir: PathBuf,
    pub cfg: RunConfig,
    pub data: Data,
    fitted: Fitted,
}

enum Fitted {
    Mixture(Box<ModelSpec>, PosteriorSamples),
    Bma(BmaWeights),
}

impl Run {
    pub fn open(dir: &Path) -> Result<Self> {
        let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let data = load_data(&cfg)?;
        let fitted = if let Some(method) = cfg.variant.evidence_method() {
            Fitted::Bma(bma_for(&cfg, &data, method)?.1)
        } else {
            let spec = build_spec(&cfg, &data.train)?;
            let path = dir.join(SAMPLES_FILE);
            let file = File::open(&path).with_context(|| format!("run has no samples: {}", path.display()))?;
            let samples = PosteriorSamples::read_trace_csv(file)?;
            if samples.dim() != spec.dim() {
                bail!("{} holds {} columns, the model has {}", path.display(), samples.dim(), spec.dim());
            }
            Fitted::Mixture(Box::new(spec), samples)
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            cfg,
            data,
            fitted,
        })
    }

    fn domain(&self, locs: &[Location]) -> Result<Domain> {
        align_domain(locs, &self.data.models, corrections(&self.cfg)).context("dataset: prediction locations")
    }

    /// Predictive draws (`draws × locations`).
    fn draws(&self, domain: &Domain, noise: bool) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.cfg;
        match &self.fitted {
            Fitted::Mixture(spec, samples) => {
                let opts = PredictOptions {
                    global_weights: cfg.predict.global_weights,
                    project: cfg.predict.project,
                    noise,
                    max_draws: cfg.predict.max_draws,
                    seed: cfg.seed,
                    execution: cfg.sampler.execution,
                };
                posterior_predictive(spec, samples, domain, &opts).context("predict: posterior predictive")
            }
            Fitted::Bma(w) => {
                let ResidualPrior::Conjugate { mu, shape, rate } = cfg.bma.prior else {
                    bail!("BMA predictions need the conjugate residual prior");
                };
                let res = model_residuals(&self.data.train, cfg.use_corrections)?;
                let g = domain.effective(cfg.use_corrections)?;
                let per_model = (0..res.len())
                    .map(|k| {
                        let g_new: Vec<f64> = g.column(k).iter().copied().collect();
                        let mut rng = stream_rng(cfg.seed, k as u64);
                        conjugate_predictive(&res[k], mu, shape, rate, &g_new, cfg.predict.bma_draws, &mut rng)
                    })
                    .collect::<bmm_core::Result<Vec<_>>>()?;
                let mut rng = stream_rng(cfg.seed, res.len() as u64);
                Ok(bma_predict(w, &per_model, cfg.predict.bma_draws, &mut rng)?)
            }
        }
    }

    fn point(&self, data: &AlignedDataset) -> Result<Vec<f64>> {
        let draws = self.draws(&data.domain, false)?;
        Ok(PredictiveSummary::from_draws(data.locations(), draws, &[0.5], false)?.point(self.cfg.predict.point))
    }
}

pub fn read_locations(path: &Path) -> Result<(Vec<String>, Vec<Location>)> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = rd.headers()?.clone();
    let cols: Vec<usize> = (0..header.len())
        .filter(|&i| !matches!(&header[i], "value" | "f" | "delta" | "id"))
        .collect();
    if cols.is_empty() {
        bail!("{} has no coordinate columns", path.display());
    }
    let names = cols.iter().map(|&i| header[i].to_string()).collect();
    let mut locs = Vec::new();
    for (r, rec) in rd.records().enumerate() {
        let rec = rec?;
        let coords = cols
            .iter()
            .map(|&i| rec[i].trim().parse::<f64>().map_err(|e| anyhow!("{} row {}: {e}", path.display(), r + 2)))
            .collect::<Result<Vec<_>>>()?;
        locs.push(Location::new(coords)?);
    }
    Ok((names, locs))
}

fn coord_names(run: &Run) -> Vec<String> {
    run.data.train.domain.coord_names.clone()
}

pub fn predict(run: &Run, locations: Option<&Path>) -> Result<()> {
    let (names, locs) = match locations {
        Some(p) => read_locations(p)?,
        None => {
            let src = run.data.test.as_ref().unwrap_or(&run.data.train);
            (coord_names(run), src.locations().to_vec())
        }
    };
    let domain = run.domain(&locs)?;
    let draws = run.draws(&domain, true)?;
    let summary = PredictiveSummary::from_draws(&locs, draws, &SUMMARY_LEVELS, false)?;
    let mut header = names;
    header.extend(["mean", "sd"].map(String::from));
    header.extend(SUMMARY_LEVELS.iter().map(|q| format!("q{:02}", (q * 100.0).round() as u32)));
    let rows = summary.rows.iter().map(|r| {
        let mut row = coord_cells(&r.location);
        row.push(r.mean.to_string());
        row.push(r.sd.to_string());
        row.extend(r.quantiles.iter().map(|v| v.to_string()));
        row
    });
    let path = run.dir.join("predictive.csv");
    write_csv(&path, &header, rows)?;
    println!("wrote {} locations to {}", locs.len(), path.display());
    Ok(())
}

pub fn evaluate(run: &Run, test_path: Option<&Path>) -> Result<()> {
    let test = match test_path {
        Some(p) => {
            let obs = load_observations(p).with_context(|| format!("dataset: loading {}", p.display()))?;
            Some(align(&obs, &run.data.models, corrections(&run.cfg))?)
        }
        None => run.data.test.clone(),
    };
    let train = &run.data.train;
    let train_rms = rms(&run.point(train)?, &train.y)?;
    let test_rms = match &test {
        Some(t) => Some(rms(&run.point(t)?, &t.y)?),
        None => None,
    };
    let sigma = match &run.fitted {
        Fitted::Mixture(spec, samples) => Some(sigma_summary(spec, samples)),
        Fitted::Bma(_) => None,
    };
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let header = ["name", "train_rms", "test_rms", "sigma_mean", "sigma_sd"].map(String::from);
    let mut rows = vec![vec![
        run.cfg.variant.label().to_string(),
        train_rms.to_string(),
        cell(test_rms),
        cell(sigma.map(|s| s.0)),
        cell(sigma.map(|s| s.1)),
    ]];
    let g_train = train.domain.effective(run.cfg.use_corrections)?;
    let g_test = test.as_ref().map(|t| t.domain.effective(run.cfg.use_corrections)).transpose()?;
    for (k, name) in train.model_names().iter().enumerate() {
        let tr = rms(&g_train.column(k).iter().copied().collect::<Vec<_>>(), &train.y)?;
        let te = match (&test, &g_test) {
            (Some(t), Some(g)) => Some(rms(&g.column(k).iter().copied().collect::<Vec<_>>(), &t.y)?),
            _ => None,
        };
        rows.push(vec![name.clone(), tr.to_string(), cell(te), String::new(), String::new()]);
    }
    write_csv(&run.dir.join("metrics.csv"), &header, rows)?;
    let (label, scored) = match &test {
        Some(t) => ("test", t),
        None => ("train", train),
    };
    let draws = run.draws(&scored.domain, true)?;
    let curve = ecp(&draws, &scored.y, &run.cfg.predict.ecp_levels).context("predict: ECP")?;
    let rows = curve
        .levels
        .iter()
        .zip(&curve.coverage)
        .map(|(l, c)| vec![l.to_string(), c.to_string(), curve.n_test.to_string(), label.to_string()]);
    write_csv(&run.dir.join("ecp.csv"), &["level", "coverage", "n", "set"].map(String::from), rows)?;
    println!(
        "{}: train rms {train_rms:.4}, test rms {}, sigma {}",
        run.cfg.variant.label(),
        test_rms.map_or("n/a".into(), |v| format!("{v:.4}")),
        sigma.map_or("n/a".into(), |s| format!("{:.4} ± {:.4}", s.0, s.1))
    );
    Ok(())
}

pub fn weights(run: &Run, grid: Option<&Path>) -> Result<()> {
    let Fitted::Mixture(spec, samples) = &run.fitted else {
        bail!("weight fields need a mixture run; BMA weights are in bma_weights.csv");
    };
    let opts = PredictOptions {
        global_weights: run.cfg.predict.global_weights,
        project: run.cfg.predict.project,
        noise: false,
        max_draws: run.cfg.predict.max_draws,
        seed: run.cfg.seed,
        execution: run.cfg.sampler.execution,
    };
    let (names, locs) = match grid {
        Some(p) => read_locations(p)?,
        None => {
            // locations where the posterior-mean mixture prediction is positive
            let all = common_locations(&run.data.models);
            let domain = run.domain(&all)?;
            let draws = posterior_predictive(spec, samples, &domain, &opts)?;
            let means = PredictiveSummary::from_draws(&all, draws, &[0.5], false)?.means();
            let map: HashMap<Location, f64> = all.iter().cloned().zip(means).collect();
            (coord_names(run), positive_domain(&run.data.models, Combine::Mixture(&map))?)
        }
    };
    let field = weight_field(spec, samples, &locs, &opts).context("predict: weight field")?;
    let p = field.model_names.len();
    let mut header = names;
    header.extend(["model", "mean", "sd"].map(String::from));
    let rows = (0..locs.len()).flat_map(|j| {
        let field = &field;
        let loc = &locs[j];
        (0..p).map(move |k| {
            let mut r = coord_cells(loc);
            r.push(field.model_names[k].clone());
            r.push(field.mean[j * p + k].to_string());
            r.push(field.sd[j * p + k].to_string());
            r
        })
    });
    let path = run.dir.join("weights.csv");
    write_csv(&path, &header, rows)?;
    if let Some(note) = &field.note {
        eprintln!("note: {note}");
    }
    println!("wrote weights at {} locations to {}", locs.len(), path.display());
    Ok(())
}
