//! Hyperspherical (n-dimensional polar) coordinates.
//!
//! Convention: `z_1 = r cos φ_1`, `z_k = r (Π_{i<k} sin φ_i) cos φ_k` for
//! `k ≤ n-1`, and `z_n = r Π_{i≤n-1} sin φ_i`. The first `n-2` angles live in
//! `[0, π]`, the last one in `[0, 2π)`.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::vecops::norm;

/// Radius plus the `n-1` angular coordinates of a point in `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarPoint {
    radius: f64,
    angles: Vec<f64>,
}

impl PolarPoint {
    /// Builds a point after checking the chart ranges.
    pub fn new(radius: f64, angles: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::DimensionTooSmall(angles.len() + 1));
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::invalid(
                "radius",
                format!("must be finite and >= 0, got {radius}"),
            ));
        }
        let last = angles.len() - 1;
        for (i, &a) in angles.iter().enumerate() {
            let ok = if i < last {
                (0.0..=PI).contains(&a)
            } else {
                (0.0..TAU).contains(&a)
            };
            if !ok {
                return Err(Error::invalid(
                    format!("angles[{i}]"),
                    format!("{a} outside its chart range"),
                ));
            }
        }
        Ok(Self { radius, angles })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Ambient dimension `n`.
    pub fn dim(&self) -> usize {
        self.angles.len() + 1
    }
}

pub fn cartesian_to_polar(z: &[f64]) -> Result<PolarPoint> {
    let n = z.len();
    if n < 2 {
        return Err(Error::DimensionTooSmall(n));
    }
    let r = norm(z);
    if r == 0.0 {
        return Err(Error::ZeroVector);
    }

    // tail[k] = ‖(z_k, ..., z_{n-1})‖ (0-based)
    let mut tail = vec![0.0_f64; n + 1];
    for k in (0..n).rev() {
        tail[k] = tail[k + 1].hypot(z[k]);
    }

    let mut angles = Vec::with_capacity(n - 1);
    for i in 0..n - 2 {
        angles.push(tail[i + 1].atan2(z[i]));
    }
    let mut last = z[n - 1].atan2(z[n - 2]);
    if last < 0.0 {
        last += TAU;
    }
    // atan2 can return a tiny negative value that rounds up to exactly 2π.
    if last >= TAU {
        last = 0.0;
    }
    angles.push(last);

    Ok(PolarPoint { radius: r, angles })
}

pub fn polar_to_cartesian(p: &PolarPoint) -> Vec<f64> {
    let n = p.dim();
    let mut z = Vec::with_capacity(n);
    let mut s = p.radius;
    for &a in &p.angles {
        z.push(s * a.cos());
        s *= a.sin();
    }
    z.push(s);
    z
}

pub fn l2_normalize(z: &[f64]) -> Result<Vec<f64>> {
    let r = norm(z);
    if r == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(z.iter().map(|x| x / r).collect())
}

/// `log |det J|` of the map `(r, φ) ↦ z`:
/// `(n-1) log r + Σ_{i=1}^{n-2} (n-1-i) log sin φ_i`.
pub fn polar_log_abs_det_jacobian(p: &PolarPoint, n: usize) -> Result<f64> {
    if n != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: n,
        });
    }
    if !(p.radius > 0.0) {
        return Err(Error::SingularChart);
    }
    let mut acc = (n as f64 - 1.0) * p.radius.ln();
    for (i, &a) in p.angles.iter().take(n - 2).enumerate() {
        let s = a.sin();
        if s < f64::EPSILON {
            return Err(Error::SingularChart);
        }
        acc += (n - 2 - i) as f64 * s.ln();
    }
    Ok(acc)
}
