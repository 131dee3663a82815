//! Globally adaptive 7/15-point Gauss–Kronrod quadrature in one dimension.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Gauss weights for the nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Segment {
        a,
        b,
        value: kron * h,
        error: ((kron - gauss) * h).abs(),
    }
}

/// Integration result with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// `∫_a^b f` to `max(abs_tol, rel_tol·|I|)`, starting from `initial` equal
/// subintervals and bisecting the worst one until converged.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    initial: usize,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::Validation(format!("bad integration interval [{a}, {b}]")));
    }
    let m = initial.max(1);
    let w = (b - a) / m as f64;
    let mut heap = BinaryHeap::new();
    for i in 0..m {
        let lo = a + i as f64 * w;
        let hi = if i + 1 == m { b } else { lo + w };
        heap.push(gk15(&mut f, lo, hi));
    }
    let mut evaluations = 15 * m;
    for _ in 0..5000 {
        let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite integrand".into()));
        }
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Quadrature { value, error, evaluations });
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(gk15(&mut f, worst.a, mid));
        heap.push(gk15(&mut f, mid, worst.b));
        evaluations += 30;
    }
    Err(Error::Numerical("adaptive quadrature did not converge".into()))
}

/// `ln ∫_a^b exp(g)`, rescaled by the maximum of `g` on a probe grid so
/// that very small integrands do not underflow.
pub fn integrate_log<G: Fn(f64) -> f64>(g: G, a: f64, b: f64, initial: usize, rel_tol: f64) -> Result<f64> {
    let probes = 20 * initial.max(1);
    let shift = (0..=probes)
        .map(|i| g(a + (b - a) * i as f64 / probes as f64))
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::Numerical("integrand underflows everywhere on the probe grid".into()));
    }
    let q = integrate(
        |x| {
            let v = g(x) - shift;
            if v.is_nan() {
                0.0
            } else {
                v.exp()
            }
        },
        a,
        b,
        initial,
        0.0,
        rel_tol,
    )?;
    if !(q.value > 0.0) {
        return Err(Error::Numerical("integral is not positive".into()));
    }
    Ok(q.value.ln() + shift)
}
