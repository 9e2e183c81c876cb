//! Logarithm of the modified Bessel function of the first kind, `log I_ν(x)`.
//!
//! The general path is the ascending series
//! `I_ν(x) = Σ_k (x/2)^{2k+ν} / (k! Γ(k+ν+1))`, summed relative to its first
//! term with periodic rescaling so that `x` in the hundreds does not overflow.
//! Half-integer orders switch to the finite hyperbolic closed form once `x`
//! is large enough that its alternating sum does not cancel.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const TERM_RATIO_CUTOFF: f64 = 1e-16;
const MAX_TERMS: usize = 10_000;
const RESCALE_AT: f64 = 1e250;

/// `log I_ν(x)` for `ν ≥ 0`, `x ≥ 0`. Returns `-inf` for `I_ν(0) = 0`, `ν > 0`.
pub fn log_bessel_i(order: f64, x: f64) -> Result<f64> {
    if !(order >= 0.0) || !(x >= 0.0) || !x.is_finite() || !order.is_finite() {
        return Err(Error::invalid(
            "log_bessel_i",
            format!("need finite order >= 0 and x >= 0, got order={order}, x={x}"),
        ));
    }
    if x == 0.0 {
        return Ok(if order == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if let Some(m) = half_integer_index(order) {
        if m == 0 || x >= half_integer_threshold(m) {
            return Ok(log_bessel_i_half_integer(m, x));
        }
    }
    log_bessel_i_series(order, x)
}

/// Returns `m` when `order == m + 1/2`.
fn half_integer_index(order: f64) -> Option<u32> {
    let shifted = order - 0.5;
    if shifted >= 0.0 && shifted.fract() == 0.0 && shifted < 1e6 {
        Some(shifted as u32)
    } else {
        None
    }
}

fn half_integer_threshold(m: u32) -> f64 {
    let m1 = f64::from(m) + 1.0;
    2.0 * m1 * m1
}

/// Ascending series evaluated in log space.
pub fn log_bessel_i_series(order: f64, x: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(if order == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    let log_first = order * (0.5 * x).ln() - ln_gamma(order + 1.0);
    let q = 0.25 * x * x;

    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut log_scale = 0.0_f64;
    for k in 0..MAX_TERMS {
        let kf = k as f64;
        let ratio = q / ((kf + 1.0) * (kf + 1.0 + order));
        term *= ratio;
        sum += term;
        if sum > RESCALE_AT {
            sum /= RESCALE_AT;
            term /= RESCALE_AT;
            log_scale += RESCALE_AT.ln();
        }
        // Past the peak of the terms, stop once the next contribution is negligible.
        if ratio < 1.0 && term < TERM_RATIO_CUTOFF * sum {
            return Ok(log_first + log_scale + sum.ln());
        }
    }
    Err(Error::NotConverged(format!(
        "Bessel series for order {order}, x {x} exceeded {MAX_TERMS} terms"
    )))
}

/// Closed form for `I_{m+1/2}(x)`:
/// `(2πx)^{-1/2} [e^x Σ_k (-1)^k c_k (2x)^{-k} + (-1)^{m+1} e^{-x} Σ_k c_k (2x)^{-k}]`
/// with `c_k = (m+k)! / (k! (m-k)!)`.
pub fn log_bessel_i_half_integer(m: u32, x: f64) -> f64 {
    if m == 0 {
        // log(sqrt(2/(πx)) sinh x), with log sinh x = x + log(1 - e^{-2x}) - log 2
        let log_sinh = x + (-(-2.0 * x).exp_m1()).ln() - std::f64::consts::LN_2;
        return 0.5 * (2.0 / (PI * x)).ln() + log_sinh;
    }
    let inv2x = 1.0 / (2.0 * x);
    let mut alternating = 0.0;
    let mut plain = 0.0;
    let mut coeff = 1.0_f64; // c_k
    let mut power = 1.0_f64; // (2x)^{-k}
    for k in 0..=m {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        alternating += sign * coeff * power;
        plain += coeff * power;
        // c_{k+1} = c_k (m+k+1)(m-k) / (k+1)
        let kf = f64::from(k);
        let mf = f64::from(m);
        coeff *= (mf + kf + 1.0) * (mf - kf) / (kf + 1.0);
        power *= inv2x;
    }
    let tail_sign = if m.is_multiple_of(2) { -1.0 } else { 1.0 };
    let bracket = alternating + tail_sign * (-2.0 * x).exp() * plain;
    x - 0.5 * (2.0 * PI * x).ln() + bracket.ln()
}

/// Mean resultant length of a vMF law on `S^{n-1}`: `I_{n/2}(κ) / I_{n/2-1}(κ)`.
pub fn mean_resultant_length(dim: usize, kappa: f64) -> Result<f64> {
    if kappa == 0.0 {
        return Ok(0.0);
    }
    let nu = dim as f64 / 2.0 - 1.0;
    Ok((log_bessel_i(nu + 1.0, kappa)? - log_bessel_i(nu, kappa)?).exp())
}
