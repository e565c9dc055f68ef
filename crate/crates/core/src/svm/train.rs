//! ε-SVR training by two-coordinate descent on the dual.
//!
//! Primal: min ½‖w‖² + C Σ max(0, |y_i − w·x_i − b| − ε), with an unregularised
//! bias. Dual (as a minimisation): f(β) = ½‖Σ β_i x_i‖² − Σ y_i β_i + ε Σ |β_i|
//! subject to |β_i| ≤ C and Σ β_i = 0. Each step moves mass `t` between a pair
//! of coordinates, which keeps the equality constraint, and minimises the
//! piecewise-quadratic restriction of f exactly. The primal bias is recovered
//! as the exact minimiser of the loss given w, and the duality gap decides
//! convergence.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SvrModel, TrainingMeta};
use crate::error::{Error, Result};
use crate::hog::SampleSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrParams {
    pub epsilon: f64,
    pub c: f64,
    pub seed: u64,
    /// Relative duality-gap tolerance.
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            c: 0.01,
            seed: 0,
            tol: 1e-3,
            max_passes: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvrFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub passes: usize,
    pub objective: f64,
    pub duality_gap: f64,
    /// Dual objective f(β) after each pass, starting from β = 0.
    pub dual_history: Vec<f64>,
}

#[inline]
fn dot_f32_f64(x: &[f32], w: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = x.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += x[c * 4 + l] as f64 * w[c * 4 + l];
        }
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for i in chunks * 4..x.len() {
        s += x[i] as f64 * w[i];
    }
    s
}

#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] as f64 * b[c * 4 + l] as f64;
        }
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for i in chunks * 4..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

/// Sum of ε-insensitive losses of the residuals `r_i − b`.
fn tube_loss(residuals: &[f64], b: f64, epsilon: f64) -> f64 {
    residuals.iter().map(|&r| ((r - b).abs() - epsilon).max(0.0)).sum()
}

/// Minimiser of Σ max(0, |r_i − b| − ε); the midpoint of the optimal interval.
fn optimal_bias(residuals: &[f64], epsilon: f64) -> f64 {
    // Slope of the loss in b is #{r_i + ε < b} − #{r_i − ε > b}. Walk the
    // sorted breakpoints from the left until the slope turns non-negative.
    let mut pts: Vec<(f64, i32)> = Vec::with_capacity(2 * residuals.len());
    for &r in residuals {
        pts.push((r - epsilon, 1));
        pts.push((r + epsilon, 1));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = residuals.len() as i64;
    let mut slope = -n;
    let mut i = 0;
    while i < pts.len() {
        let x = pts[i].0;
        let mut j = i;
        while j < pts.len() && pts[j].0 == x {
            slope += pts[j].1 as i64;
            j += 1;
        }
        if slope == 0 {
            let next = if j < pts.len() { pts[j].0 } else { x };
            return 0.5 * (x + next);
        }
        if slope > 0 {
            return x;
        }
        i = j;
    }
    pts.last().map_or(0.0, |p| p.0)
}

pub fn primal_objective(x: &[&[f32]], y: &[f64], w: &[f64], b: f64, epsilon: f64, c: f64) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| ((yi - dot_f32_f64(xi, w) - b).abs() - epsilon).max(0.0))
        .sum();
    reg + c * loss
}

pub fn dual_objective(w: &[f64], y: &[f64], beta: &[f64], epsilon: f64) -> f64 {
    0.5 * w.iter().map(|v| v * v).sum::<f64>() - y.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
        + epsilon * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Exact minimiser of ½a t² + g t + ε(|p + t| + |q − t|) over t ∈ [lo, hi].
fn pair_step(a: f64, g: f64, p: f64, q: f64, epsilon: f64, lo: f64, hi: f64) -> f64 {
    let phi = |t: f64| 0.5 * a * t * t + g * t + epsilon * ((p + t).abs() + (q - t).abs());
    let mut cands = [0.0f64; 8];
    let mut n = 0;
    let mut push = |t: f64| {
        if t.is_finite() {
            cands[n] = t.clamp(lo, hi);
            n += 1;
        }
    };
    push(0.0);
    push(-p);
    push(q);
    push(lo);
    push(hi);
    if a > 1e-12 {
        for s in [-2.0, 0.0, 2.0] {
            push(-(g + epsilon * s) / a);
        }
    }
    let mut best = 0.0f64.clamp(lo, hi);
    let mut best_v = phi(best);
    for &t in &cands[..n] {
        let v = phi(t);
        if v < best_v - 1e-15 * best_v.abs().max(1.0) {
            best = t;
            best_v = v;
        }
    }
    best
}

/// Fit a linear ε-SVR on raw feature rows.
pub fn fit_linear_svr(x: &[&[f32]], y: &[f64], params: &SvrParams) -> Result<LinearSvrFit> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if !(params.c > 0.0) || !(params.epsilon >= 0.0) || !(params.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "SVR needs C > 0, epsilon >= 0 and tol > 0, got {params:?}"
        )));
    }
    let dim = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) || !y[i].is_finite() {
            return Err(Error::NonFinite(i));
        }
    }

    let c = params.c;
    let eps = params.epsilon;
    let sq: Vec<f64> = x.iter().map(|r| dot_f32(r, r)).collect();
    let mut beta = vec![0.0f64; n];
    let mut w = vec![0.0f64; dim];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut first: Vec<usize> = (0..n).collect();
    let mut second: Vec<usize> = (0..n).collect();
    let mut dual_history = vec![dual_objective(&w, y, &beta, eps)];
    let mut residuals = vec![0.0f64; n];

    let mut passes = 0;
    let (mut bias, mut objective, mut gap);
    loop {
        first.shuffle(&mut rng);
        second.shuffle(&mut rng);
        for k in 0..n {
            let (i, j) = (first[k], second[k]);
            if i == j {
                continue;
            }
            let (xi, xj) = (x[i], x[j]);
            let gi = dot_f32_f64(xi, &w) - y[i];
            let gj = dot_f32_f64(xj, &w) - y[j];
            let a = (sq[i] + sq[j] - 2.0 * dot_f32(xi, xj)).max(0.0);
            let lo = (-c - beta[i]).max(beta[j] - c);
            let hi = (c - beta[i]).min(beta[j] + c);
            if lo >= hi {
                continue;
            }
            let t = pair_step(a, gi - gj, beta[i], beta[j], eps, lo, hi);
            if t == 0.0 {
                continue;
            }
            beta[i] += t;
            beta[j] -= t;
            for ((wk, &a), &b) in w.iter_mut().zip(xi).zip(xj) {
                *wk += t * (a as f64 - b as f64);
            }
        }
        passes += 1;

        for (r, (xi, &yi)) in residuals.iter_mut().zip(x.iter().zip(y)) {
            *r = yi - dot_f32_f64(xi, &w);
        }
        bias = optimal_bias(&residuals, eps);
        let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        objective = reg + c * tube_loss(&residuals, bias, eps);
        let dual = dual_objective(&w, y, &beta, eps);
        dual_history.push(dual);
        gap = objective + dual;
        if gap <= params.tol * objective.abs().max(1e-12) || passes >= params.max_passes {
            break;
        }
    }
    if passes >= params.max_passes && gap > params.tol * objective.abs().max(1e-12) {
        log::warn!(
            "SVR stopped after {passes} passes with relative gap {:.3e}",
            gap / objective.abs().max(1e-12)
        );
    }
    Ok(LinearSvrFit {
        weights: w,
        bias,
        passes,
        objective,
        duality_gap: gap,
        dual_history,
    })
}

/// Train on a sample set with targets +1 (positive) and −1 (negative).
pub fn train_svr(samples: &SampleSet, params: &SvrParams) -> Result<SvrModel> {
    if samples.positives.is_empty() {
        return Err(Error::EmptyClass("positive"));
    }
    if samples.negatives.is_empty() {
        return Err(Error::EmptyClass("negative"));
    }
    let rows: Vec<&[f32]> = samples
        .positives
        .iter()
        .chain(&samples.negatives)
        .map(|d| d.values.as_slice())
        .collect();
    let y: Vec<f64> = std::iter::repeat_n(1.0, samples.positives.len())
        .chain(std::iter::repeat_n(-1.0, samples.negatives.len()))
        .collect();
    let fit = fit_linear_svr(&rows, &y, params)?;
    log::info!(
        "trained {:?} SVR on {}+{} samples: {} passes, objective {:.6}",
        samples.source,
        samples.positives.len(),
        samples.negatives.len(),
        fit.passes,
        fit.objective
    );
    Ok(SvrModel {
        layout: samples.layout,
        source: samples.source,
        weights: fit.weights,
        bias: fit.bias,
        epsilon: params.epsilon,
        c: params.c,
        meta: TrainingMeta {
            positives: samples.positives.len(),
            negatives: samples.negatives.len(),
            seed: params.seed,
            passes: fit.passes,
            objective: fit.objective,
            duality_gap: fit.duality_gap,
        },
    })
}
