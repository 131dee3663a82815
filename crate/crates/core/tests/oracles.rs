mod common;

use common::*;
use std::f64::consts::PI;

#[test]
fn simpson_gaussian() {
    let v = simpson(|x| (-x * x).exp(), -10.0, 10.0, 1e-13, 16);
    assert!((v - PI.sqrt()).abs() < 1e-12, "{v}");
}

#[test]
fn ln_gamma_known_values() {
    assert!((ln_gamma(0.5) - 0.5 * PI.ln()).abs() < 1e-13);
    assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    assert!((ln_gamma(0.1) - 2.252_712_651_734_206).abs() < 1e-12);
}

#[test]
fn evidence_single_zero_residual() {
    // ∫ N(0; 0, 2/λ) e^{−λ} dλ = Γ(3/2)/√(4π) = 1/4
    let le = conjugate_evidence_2d(&[0.0], 0.0, 1.0, 1.0);
    assert!((le - 0.25f64.ln()).abs() < 1e-9, "{le}");
}

#[test]
fn binomial_band_fair_coin() {
    assert_eq!(binomial_band(200, 0.5), (86, 114));
    assert_eq!(binomial_band(10, 0.5), (2, 8));
}

#[test]
fn fd_gradient_polynomial() {
    let g = fd_gradient(|x| x[0].powi(3) + x[0] * x[1] + (2.0 * x[1]).sin(), &[1.3, -0.4]);
    let exact = [3.0 * 1.3f64.powi(2) - 0.4, 1.3 + 2.0 * (-0.8f64).cos()];
    assert!(max_rel_err(&g, &exact) < 1e-10, "{g:?}");
}
