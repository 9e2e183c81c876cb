//! Entropy-regularized linear maximization over the probability simplex:
//!
//! ```text
//! max_{P ∈ Δ}  κ Σ_c P_c (a_c - b) + Σ_c P_c (-log P_c)
//! ```
//!
//! Its maximizer is the softmax `P*_c ∝ e^{κ(a_c - b)}` and its maximum is
//! `log Σ_c e^{κ(a_c - b)}`, which equals the AIDGN sample loss when `a_y = b`
//! is the perturbed true-class cosine. [`solve_numeric`] reaches the same
//! point by projected gradient ascent so the closed form can be checked
//! against an iterate that never uses it.

use crate::error::{Error, Result};
use crate::vecops::{dot, softmax};

/// Entries are clipped to this floor before taking logarithms.
pub const ENTROPY_FLOOR: f64 = 1e-15;
pub const MAX_ITERATIONS: usize = 100_000;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntInstance {
    scores: Vec<f64>,
    anchor: f64,
    kappa: f64,
}

impl MaxEntInstance {
    pub fn new(scores: Vec<f64>, anchor: f64, kappa: f64) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::invalid("scores", "need at least two classes"));
        }
        if scores.iter().chain([&anchor]).any(|v| !v.is_finite()) {
            return Err(Error::invalid("scores", "all values must be finite"));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid("kappa", format!("must be > 0, got {kappa}")));
        }
        Ok(Self {
            scores,
            anchor,
            kappa,
        })
    }

    /// Instance matching one AIDGN sample: `a_y = b = c̃_y`, `a_c = c̃_c`.
    pub fn from_perturbed_scores(
        perturbed: Vec<f64>,
        true_class: usize,
        kappa: f64,
    ) -> Result<Self> {
        let anchor = *perturbed
            .get(true_class)
            .ok_or(Error::ClassIndexOutOfRange {
                index: true_class,
                classes: perturbed.len(),
            })?;
        Self::new(perturbed, anchor, kappa)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn num_classes(&self) -> usize {
        self.scores.len()
    }

    fn linear_coefficients(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|a| self.kappa * (a - self.anchor))
            .collect()
    }
}

pub fn closed_form_distribution(inst: &MaxEntInstance) -> Vec<f64> {
    softmax(&inst.linear_coefficients())
}

pub fn objective_value(p: &[f64], inst: &MaxEntInstance) -> Result<f64> {
    if p.len() != inst.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: inst.num_classes(),
            got: p.len(),
        });
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL || p.iter().any(|&x| x < -SIMPLEX_TOL) {
        return Err(Error::NotSimplex(total));
    }
    Ok(objective_unchecked(p, &inst.linear_coefficients()))
}

fn objective_unchecked(p: &[f64], coeffs: &[f64]) -> f64 {
    let linear = dot(p, coeffs);
    let entropy: f64 = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.max(ENTROPY_FLOOR).ln())
        .sum();
    linear + entropy
}

fn gradient(p: &[f64], coeffs: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(coeffs)
        .map(|(&x, &c)| c - x.max(ENTROPY_FLOOR).ln() - 1.0)
        .collect()
}

/// Euclidean projection onto `{x : x ≥ 0, Σ x = 1}` (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumulative += ui;
        let t = (cumulative - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projected-gradient residual `‖proj(P + ∇f) - P‖_∞`; zero exactly at a
/// KKT point of the simplex-constrained problem.
pub fn kkt_residual(p: &[f64], inst: &MaxEntInstance) -> f64 {
    let coeffs = inst.linear_coefficients();
    residual_with(p, &gradient(p, &coeffs))
}

fn residual_with(p: &[f64], g: &[f64]) -> f64 {
    let g = centered(g, p);
    let stepped: Vec<f64> = p.iter().zip(&g).map(|(x, gi)| x + gi).collect();
    project_to_simplex(&stepped)
        .iter()
        .zip(p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `g` minus its `w`-weighted mean. Projections onto the simplex ignore a
/// constant shift, and removing it avoids cancellation against large offsets.
fn centered(g: &[f64], w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mean = dot(g, w) / total;
    g.iter().map(|gi| gi - mean).collect()
}

/// Entropy term with its tangent-line extension below [`ENTROPY_FLOOR`], so
/// that value and [`gradient`] agree everywhere the solver looks.
fn smooth_objective(p: &[f64], coeffs: &[f64]) -> f64 {
    let ln_floor = ENTROPY_FLOOR.ln();
    let entropy: f64 = p
        .iter()
        .map(|&x| {
            if x >= ENTROPY_FLOOR {
                -x * x.ln()
            } else {
                -x * ln_floor - x + ENTROPY_FLOOR
            }
        })
        .sum();
    dot(p, coeffs) + entropy
}

/// Projection onto the simplex in the metric `Σ (x_i - v_i)² / d_i`:
/// `x_i = max(0, v_i + θ d_i)` with `θ` fixed by `Σ x = 1`, found by
/// shrinking the active set until it is stable.
pub fn project_to_simplex_scaled(v: &[f64], d: &[f64]) -> Vec<f64> {
    let mut active = vec![true; v.len()];
    loop {
        let (sv, sd) = v
            .iter()
            .zip(d)
            .zip(&active)
            .filter(|(_, &a)| a)
            .fold((0.0, 0.0), |(sv, sd), ((vi, di), _)| (sv + vi, sd + di));
        let theta = (1.0 - sv) / sd;
        let mut changed = false;
        for i in 0..v.len() {
            if active[i] && v[i] + theta * d[i] <= 0.0 {
                active[i] = false;
                changed = true;
            }
        }
        if !changed {
            return v
                .iter()
                .zip(d)
                .zip(&active)
                .map(|((vi, di), &a)| if a { vi + theta * di } else { 0.0 })
                .collect();
        }
    }
}

/// Projected gradient ascent with diagonal scaling `D = diag(max(P, floor))`
/// (projection taken in the matching metric), Barzilai–Borwein steps and a
/// nonmonotone backtracking line search. Stops when the Euclidean KKT
/// residual [`kkt_residual`] drops to `tol`.
///
/// The scaling matters on sharp instances: the entropy Hessian is
/// `diag(1/P)`, so unscaled steps are throttled by the smallest entry.
pub fn solve_numeric(inst: &MaxEntInstance, tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", format!("must be > 0, got {tol}")));
    }
    const MEMORY: usize = 10;
    const SUFFICIENT_INCREASE: f64 = 1e-4;
    const STEP_MIN: f64 = 1e-8;
    const STEP_MAX: f64 = 1e8;
    const ROUNDING_SLACK: f64 = 1e-14;

    let coeffs = inst.linear_coefficients();
    let c = inst.num_classes();
    let mut p = vec![1.0 / c as f64; c];
    let mut f = smooth_objective(&p, &coeffs);
    let mut g = gradient(&p, &coeffs);
    let mut history = [f; MEMORY];
    let mut step = 1.0;

    for iter in 0..MAX_ITERATIONS {
        if residual_with(&p, &g) <= tol {
            return Ok(p);
        }
        let scale: Vec<f64> = p.iter().map(|&x| x.max(ENTROPY_FLOOR)).collect();
        let shifted = centered(&g, &scale);
        let trial: Vec<f64> = p
            .iter()
            .zip(&shifted)
            .zip(&scale)
            .map(|((x, gi), di)| x + step * di * gi)
            .collect();
        let direction: Vec<f64> = project_to_simplex_scaled(&trial, &scale)
            .iter()
            .zip(&p)
            .map(|(a, b)| a - b)
            .collect();
        let slope = dot(&g, &direction);
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut lambda = 1.0;
        let (next, f_next) = loop {
            let candidate: Vec<f64> = p
                .iter()
                .zip(&direction)
                .map(|(x, d)| (x + lambda * d).max(0.0))
                .collect();
            let f_candidate = smooth_objective(&candidate, &coeffs);
            // Slack at rounding level: near sharp optima the true change in f
            // falls below the resolution of f itself.
            let slack = ROUNDING_SLACK * (1.0 + reference.abs());
            if f_candidate + slack >= reference + SUFFICIENT_INCREASE * lambda * slope
                || lambda < 1e-20
            {
                break (candidate, f_candidate);
            }
            lambda *= 0.5;
        };

        let g_next = gradient(&next, &coeffs);
        let s: Vec<f64> = next.iter().zip(&p).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| b - a).collect();
        // Barzilai–Borwein step in the scaled coordinates u = D^{-1/2} x.
        let sds: f64 = s.iter().zip(&scale).map(|(si, di)| si * si / di).sum();
        let sy = dot(&s, &y);
        step = if sy > 0.0 {
            (sds / sy).clamp(STEP_MIN, STEP_MAX)
        } else {
            STEP_MAX
        };

        p = next;
        f = f_next;
        g = g_next;
        history[iter % MEMORY] = f;
    }
    Err(Error::NotConverged(format!(
        "projected gradient stopped after {MAX_ITERATIONS} iterations with KKT residual {}",
        residual_with(&p, &g)
    )))
}
