//! Reference computations for the integration tests. Nothing here calls into
//! the numerical routines of `bmm_core`.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Central differences with one Richardson step: `(4 D(h/2) − D(h)) / 3`.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = 1e-3 * (1.0 + x[j].abs());
            let mut central = |h: f64| {
                xs[j] = x[j] + h;
                let fp = f(&xs);
                xs[j] = x[j] - h;
                let fm = f(&xs);
                xs[j] = x[j];
                (fp - fm) / (2.0 * h)
            };
            let d1 = central(h);
            let d2 = central(0.5 * h);
            (4.0 * d2 - d1) / 3.0
        })
        .collect()
}

/// `max_j |a_j − b_j| / max(|a_j|, |b_j|, 1)`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`, started from
/// `pieces` equal panels so narrow peaks are not missed.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, pieces: usize) -> f64 {
    let w = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = a + i as f64 * w;
            let hi = lo + w;
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = w / 6.0 * (fa + 4.0 * fm + fb);
            simpson_rec(&f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 40)
        })
        .sum()
}

pub fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut s = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// `ln ∫∫ Π N(d_i; δ, 1/λ) N(δ; μ, 1/λ) Gamma(λ; a, b) dδ dλ` by nested
/// adaptive Simpson in `(δ, t = ln λ)`.
pub fn conjugate_evidence_2d(d: &[f64], mu: f64, a: f64, b: f64) -> f64 {
    let n = d.len() as f64;
    let log_joint = |delta: f64, t: f64| -> f64 {
        let lam = t.exp();
        let sq: f64 = d.iter().map(|x| (x - delta).powi(2)).sum::<f64>() + (delta - mu).powi(2);
        let ll = 0.5 * (n + 1.0) * (t - (2.0 * PI).ln()) - 0.5 * lam * sq;
        // Gamma density in λ times the Jacobian dλ/dt = λ
        ll + a * b.ln() - ln_gamma(a) + a * t - b * lam
    };
    let centre = (d.iter().sum::<f64>() + mu) / (n + 1.0);
    let inner = |t: f64, shift: f64| -> f64 {
        let s = 1.0 / (t.exp() * (n + 1.0)).sqrt();
        simpson(|x| (log_joint(x, t) - shift).exp(), centre - 14.0 * s, centre + 14.0 * s, 1e-12 * s, 8)
    };
    // locate the outer peak on a coarse grid, then integrate 60 nats around it
    let grid: Vec<f64> = (0..=1600).map(|i| -40.0 + 0.05 * i as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| log_joint(centre, t)).collect();
    let peak = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inside: Vec<f64> = grid.iter().zip(&vals).filter(|(_, v)| **v > peak - 60.0).map(|(t, _)| *t).collect();
    let (lo, hi) = (inside[0] - 1.0, inside[inside.len() - 1] + 1.0);
    let rough = simpson(|t| inner(t, peak), lo, hi, 1e-6, 64);
    let total = simpson(|t| inner(t, peak), lo, hi, 1e-11 * rough, 64);
    total.ln() + peak
}

/// `ln` of the Binomial(n, p) pmf at `k`.
fn ln_binom_pmf(n: u64, k: u64, p: f64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
        + k as f64 * p.ln()
        + (n - k) as f64 * (1.0 - p).ln()
}

/// Central 95% band of Binomial(n, p) counts: the smallest `lo` with
/// `P(X ≤ lo) ≥ 0.025` and the smallest `hi` with `P(X ≤ hi) ≥ 0.975`.
pub fn binomial_band(n: u64, p: f64) -> (u64, u64) {
    let mut cdf = 0.0;
    let mut lo = None;
    for k in 0..=n {
        cdf += ln_binom_pmf(n, k, p).exp();
        if lo.is_none() && cdf >= 0.025 {
            lo = Some(k);
        }
        if cdf >= 0.975 {
            return (lo.unwrap(), k);
        }
    }
    (lo.unwrap_or(n), n)
}

