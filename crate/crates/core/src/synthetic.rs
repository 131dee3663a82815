//! Synthetic datasets with known mixing weights, used by tests, benches and
//! the bundled CLI fixtures.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;

use crate::dataset::{AlignedDataset, Domain, Location};
use crate::error::{Error, Result};
use crate::prob::{normal, standard_normal};
use crate::stream_rng;

fn dataset(coord_names: &[&str], locations: Vec<Location>, f: DMatrix<f64>, y: Vec<f64>) -> AlignedDataset {
    let p = f.ncols();
    AlignedDataset {
        domain: Domain {
            coord_names: coord_names.iter().map(|s| s.to_string()).collect(),
            locations,
            f,
            d: None,
            model_names: (1..=p).map(|k| format!("m{k}")).collect(),
        },
        y,
    }
}

/// `n` points on `[0, 10]`; `f_1 = 2 + sin x`, `f_2 = x/2 − 1`, `f_3 = 1 + cos x`
/// (as many as `omega` has entries) and `y = Σ ω_k f_k + σ ε`.
pub fn global_mixture(n: usize, omega: &[f64], sigma: f64, seed: u64) -> AlignedDataset {
    let p = omega.len();
    let mut rng = stream_rng(seed, 0);
    let locations: Vec<Location> = (0..n)
        .map(|i| Location::new(vec![10.0 * (i as f64 + 0.5) / n as f64]).expect("finite"))
        .collect();
    let f = DMatrix::from_fn(n, p, |i, k| base_model(k, locations[i].coords()[0]));
    let y = (0..n)
        .map(|i| (0..p).map(|k| omega[k] * f[(i, k)]).sum::<f64>() + sigma * standard_normal(&mut rng))
        .collect();
    dataset(&["x"], locations, f, y)
}

fn base_model(k: usize, x: f64) -> f64 {
    match k % 3 {
        0 => 2.0 + x.sin() + (k / 3) as f64,
        1 => 0.5 * x - 1.0,
        _ => 1.0 + x.cos(),
    }
}

/// Two models on an integer `side × side` grid with true weight of model 1
/// equal to `hi` where the first coordinate is below `boundary` and `1 − hi`
/// elsewhere.
pub fn region_swapped(side: usize, boundary: f64, hi: f64, sigma: f64, seed: u64) -> (AlignedDataset, Vec<f64>) {
    let mut rng = stream_rng(seed, 0);
    let mut locations = Vec::with_capacity(side * side);
    for a in 0..side {
        for b in 0..side {
            locations.push(Location::new(vec![a as f64, b as f64]).expect("finite"));
        }
    }
    let n = locations.len();
    let f = DMatrix::from_fn(n, 2, |i, k| {
        let c = locations[i].coords();
        if k == 0 {
            3.0 + 0.3 * (0.5 * c[1]).sin()
        } else {
            0.3 * (0.4 * c[0]).cos()
        }
    });
    let w1: Vec<f64> = locations.iter().map(|l| if l.coords()[0] < boundary { hi } else { 1.0 - hi }).collect();
    let y = (0..n)
        .map(|i| w1[i] * f[(i, 0)] + (1.0 - w1[i]) * f[(i, 1)] + sigma * standard_normal(&mut rng))
        .collect();
    (dataset(&["a", "b"], locations, f, y), w1)
}

/// Residual sets `d_{k,i} = b_k + s_k ε` for models with the given biases
/// and noise scales.
pub fn residual_sets(n: usize, biases: &[f64], scales: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0);
    biases
        .iter()
        .zip(scales)
        .map(|(b, s)| (0..n).map(|_| normal(*b, *s, &mut rng)).collect())
        .collect()
}

/// Observations and model tables that realize residual sets: `y = 0`,
/// `f_k = −d_k`.
pub fn evidence_dataset(residuals: &[Vec<f64>]) -> Result<AlignedDataset> {
    let n = residuals.first().map(Vec::len).unwrap_or(0);
    if n == 0 || residuals.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("residual sets must share a nonzero length".into()));
    }
    let locations = (0..n).map(|i| Location::new(vec![i as f64]).expect("finite")).collect();
    let f = DMatrix::from_fn(n, residuals.len(), |i, k| -residuals[k][i]);
    Ok(dataset(&["x"], locations, f, vec![0.0; n]))
}

/// Random conjugate evidence problem: `(d, μ, a, b)`.
pub fn conjugate_problem<R: Rng>(n: usize, rng: &mut R) -> (Vec<f64>, f64, f64, f64) {
    let mu = rng.random_range(-0.5..0.5);
    let a = rng.random_range(0.5..4.0);
    let b = rng.random_range(0.2..3.0);
    let delta = rng.random_range(-1.0..1.0);
    let s = rng.random_range(0.2..1.5);
    let d = (0..n).map(|_| normal(delta, s, rng)).collect();
    (d, mu, a, b)
}

/// Write `observations.csv` and one `<model>.csv` per model into `dir`.
pub fn write_csv_tables(data: &AlignedDataset, dir: &Path) -> Result<(PathBuf, Vec<PathBuf>)> {
    std::fs::create_dir_all(dir)?;
    let names = &data.domain.coord_names;
    let obs_path = dir.join("observations.csv");
    let mut w = csv::Writer::from_path(&obs_path).map_err(io_err)?;
    let mut header: Vec<String> = names.clone();
    header.push("value".into());
    w.write_record(&header).map_err(io_err)?;
    for (loc, y) in data.locations().iter().zip(&data.y) {
        let mut rec: Vec<String> = loc.coords().iter().map(|c| c.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush()?;
    let mut model_paths = Vec::new();
    for (k, m) in data.model_names().iter().enumerate() {
        let path = dir.join(format!("{m}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(io_err)?;
        let mut header: Vec<String> = names.clone();
        header.push("f".into());
        if data.d().is_some() {
            header.push("delta".into());
        }
        w.write_record(&header).map_err(io_err)?;
        for (i, loc) in data.locations().iter().enumerate() {
            let mut rec: Vec<String> = loc.coords().iter().map(|c| c.to_string()).collect();
            rec.push(data.f()[(i, k)].to_string());
            if let Some(d) = data.d() {
                rec.push(d[(i, k)].to_string());
            }
            w.write_record(&rec).map_err(io_err)?;
        }
        w.flush()?;
        model_paths.push(path);
    }
    Ok((obs_path, model_paths))
}

fn io_err(e: csv::Error) -> Error {
    Error::Validation(format!("csv: {e}"))
}
