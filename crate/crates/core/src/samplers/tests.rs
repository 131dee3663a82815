use super::*;
use crate::prob::DistSpec;

struct StdNormal(usize);

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density(&self, t: &[f64]) -> Result<f64> {
        Ok(-0.5 * t.iter().map(|x| x * x).sum::<f64>())
    }
    fn log_density_grad(&self, t: &[f64], g: &mut [f64]) -> Result<f64> {
        for (gi, x) in g.iter_mut().zip(t) {
            *gi = -x;
        }
        self.log_density(t)
    }
}

/// A positive density sampled through `u = ln x`.
struct LogScale(DistSpec);

impl LogDensity for LogScale {
    fn dim(&self) -> usize {
        1
    }
    fn log_density(&self, t: &[f64]) -> Result<f64> {
        Ok(self.0.ln_pdf_log_scale(t[0]).0)
    }
    fn log_density_grad(&self, t: &[f64], g: &mut [f64]) -> Result<f64> {
        let (lp, d) = self.0.ln_pdf_log_scale(t[0]);
        g[0] = d;
        Ok(lp)
    }
}

struct DoubleWell;

impl DoubleWell {
    fn ln_pdf(x: f64) -> f64 {
        -2.0 * (x * x - 1.0).powi(2)
    }
}

impl LogDensity for DoubleWell {
    fn dim(&self) -> usize {
        1
    }
    fn log_density(&self, t: &[f64]) -> Result<f64> {
        Ok(Self::ln_pdf(t[0]))
    }
    fn log_density_grad(&self, t: &[f64], g: &mut [f64]) -> Result<f64> {
        let x = t[0];
        g[0] = -8.0 * x * (x * x - 1.0);
        Ok(Self::ln_pdf(x))
    }
}

fn cfg(total: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        total_draws: total,
        seed,
        ..SamplerConfig::default()
    }
}

#[test]
fn nuts_standard_normal_d10() {
    let s = nuts_sample(&StdNormal(10), &cfg(2000, 11)).unwrap();
    let rep = DiagnosticsReport::from_samples(&s);
    assert_eq!(s.n_draws(), 4000);
    for j in 0..10 {
        let ess = rep.params[&s.names[j]].ess;
        assert!(ess > 0.5 * s.n_draws() as f64, "ess {ess}");
        assert!(s.mean(j).abs() < 3.0 / ess.sqrt(), "mean {} ess {ess}", s.mean(j));
    }
    assert!(rep.max_rhat().unwrap() < 1.01);
    assert_eq!(s.total_divergences(), 0);
}

#[test]
fn nuts_gamma_on_log_scale() {
    let s = nuts_sample(&LogScale(DistSpec::Gamma { shape: 5.0, rate: 10.0 }), &cfg(20_000, 12)).unwrap();
    let x: Vec<f64> = s.iter().map(|d| d[0].exp()).collect();
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    assert!((m - 0.5).abs() < 0.01, "mean {m}");
    assert!((sd - 0.2236).abs() < 0.01, "sd {sd}");
}

#[test]
fn mh_standard_normal_moments() {
    let s = mh_sample(&StdNormal(2), &cfg(20_000, 13)).unwrap();
    let rep = DiagnosticsReport::from_samples(&s);
    for j in 0..2 {
        let ess = rep.params[&s.names[j]].ess;
        let m = s.mean(j);
        let v = s.iter().map(|d| (d[j] - m).powi(2)).sum::<f64>() / s.n_draws() as f64;
        assert!(m.abs() < 4.0 / ess.sqrt(), "mean {m}");
        assert!((v - 1.0).abs() < 0.1, "var {v}");
    }
}

#[test]
fn mh_double_well_matches_quadrature() {
    let s = mh_sample(&DoubleWell, &cfg(50_000, 14)).unwrap();
    assert_eq!(s.n_draws(), 100_000);
    // reference CDF by Simpson's rule on a fine grid
    let (lo, hi, m) = (-4.0, 4.0, 8000usize);
    let h = (hi - lo) / m as f64;
    let dens: Vec<f64> = (0..=m).map(|i| DoubleWell::ln_pdf(lo + i as f64 * h).exp()).collect();
    let mut cdf = vec![0.0; m + 1];
    for i in (2..=m).step_by(2) {
        cdf[i] = cdf[i - 2] + h / 3.0 * (dens[i - 2] + 4.0 * dens[i - 1] + dens[i]);
        cdf[i - 1] = cdf[i - 2] + h / 2.0 * (dens[i - 2] + dens[i - 1]);
    }
    let z = cdf[m];
    let mut x: Vec<f64> = s.iter().map(|d| d[0]).collect();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, v) in x.iter().enumerate() {
        let k = (((v - lo) / h).round() as usize).min(m);
        let f = cdf[k] / z;
        ks = ks.max((f - i as f64 / n).abs()).max((f - (i + 1) as f64 / n).abs());
    }
    assert!(ks < 0.02, "KS {ks}");
}

#[test]
fn sampling_is_deterministic_and_policy_independent() {
    let mut c = cfg(300, 15);
    let a = nuts_sample(&StdNormal(3), &c).unwrap();
    let b = nuts_sample(&StdNormal(3), &c).unwrap();
    c.execution = Execution::Sequential;
    let s = nuts_sample(&StdNormal(3), &c).unwrap();
    let bits = |p: &PosteriorSamples| p.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(bits(&a), bits(&s));
}

#[test]
fn kept_draw_count_and_trace_roundtrip() {
    let c = SamplerConfig {
        chains: 3,
        total_draws: 101,
        burn_in: 0.5,
        ..cfg(0, 16)
    };
    let s = mh_sample(&StdNormal(2), &c).unwrap();
    assert_eq!(s.n_draws(), 3 * c.kept_per_chain());
    let mut buf = Vec::new();
    s.write_trace_csv(&mut buf).unwrap();
    let back = PosteriorSamples::read_trace_csv(&buf[..]).unwrap();
    assert_eq!(back.n_chains(), 3);
    assert_eq!(back.names, s.names);
    for (a, b) in s.iter().zip(back.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn config_validation() {
    assert!(cfg(1, 0).validate().is_err());
    assert!(SamplerConfig { burn_in: 1.0, ..cfg(100, 0) }.validate().is_err());
    assert!(SamplerConfig::desk().validate().is_ok());
    assert_eq!(SamplerConfig::desk().kept_per_chain(), 1000);
}

struct BadGradient;

impl LogDensity for BadGradient {
    fn dim(&self) -> usize {
        1
    }
    fn log_density(&self, t: &[f64]) -> Result<f64> {
        Ok(-t[0] * t[0])
    }
    fn log_density_grad(&self, t: &[f64], g: &mut [f64]) -> Result<f64> {
        g[0] = if t[0].abs() > 1.0 { f64::NAN } else { -2.0 * t[0] };
        Ok(-t[0] * t[0])
    }
}

#[test]
fn non_finite_gradient_aborts_with_snapshot() {
    let err = nuts_sample(&BadGradient, &cfg(500, 17)).unwrap_err();
    match err {
        Error::NonFiniteGradient { theta } => assert!(theta[0].abs() > 1.0),
        other => panic!("unexpected {other}"),
    }
}

