//! Least-squares fit of a decay curve to `M · exp(-(T/τ)^α)` with `M` held
//! fixed, and the e-folding time `τ Γ(1 + 1/α)` derived from it.
//!
//! The optimizer is a two-parameter Levenberg–Marquardt iteration with an
//! analytic Jacobian and Marquardt (diagonal) damping, fitting in linear
//! space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::gamma;

pub const ALPHA_MIN: f64 = 0.1;
pub const ALPHA_MAX: f64 = 2.0;
pub const MAX_ITERATIONS: usize = 500;
pub const RELATIVE_SSE_TOLERANCE: f64 = 1e-12;
const MIN_POINTS: usize = 5;
const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_LIMIT: f64 = 1e16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Fixed amplitude, the measured value at `T = 0`.
    pub m: f64,
    pub tau: f64,
    pub alpha: f64,
    /// Residual sum of squares at the returned parameters.
    pub sse: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn eval(&self, t: f64) -> f64 {
        stretched_exponential(t, self.m, self.tau, self.alpha)
    }
}

/// e-folding stopping time `T_Pe`, in the same units as the fit's time axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingTimeEstimate {
    pub t_pe: f64,
}

pub fn stretched_exponential(t: f64, m: f64, tau: f64, alpha: f64) -> f64 {
    if t == 0.0 {
        return m;
    }
    m * (-(t / tau).powf(alpha)).exp()
}

/// `T_Pe = τ Γ(1 + 1/α)`.
pub fn efolding_time(fit: &FitResult) -> Result<StoppingTimeEstimate> {
    Ok(StoppingTimeEstimate { t_pe: fit.tau * gamma(1.0 + 1.0 / fit.alpha)? })
}

fn sse(series: &[(f64, f64)], m: f64, tau: f64, alpha: f64) -> f64 {
    series
        .iter()
        .map(|&(t, y)| {
            let r = y - stretched_exponential(t, m, tau, alpha);
            r * r
        })
        .sum()
}

/// First time the series falls to `M/e`, linearly interpolated.
fn efold_crossing(series: &[(f64, f64)], m: f64) -> Option<f64> {
    let target = m / std::f64::consts::E;
    series.windows(2).find_map(|w| {
        let ((t0, y0), (t1, y1)) = (w[0], w[1]);
        (y0 > target && y1 <= target).then(|| t0 + (y0 - target) / (y0 - y1) * (t1 - t0))
    })
}

fn initial_tau(series: &[(f64, f64)], m: f64) -> Result<f64> {
    if let Some(t) = efold_crossing(series, m).filter(|t| *t > 0.0) {
        return Ok(t);
    }
    // never reaches M/e: treat the last point as a pure exponential
    let &(t, y) = series
        .iter()
        .rev()
        .find(|&&(t, y)| t > 0.0 && y < m)
        .ok_or_else(|| Error::NoDecay("series never drops below M".into()))?;
    Ok(t / (m / y).ln())
}

/// Fits `(T, value)` samples to the stretched exponential with amplitude `m`.
///
/// Only `τ` and `α` are free. Returns `converged = false` with the best
/// parameters found if the iteration cap is hit or `α` pins to its lower
/// bound.
pub fn fit_stretched_exponential(series: &[(f64, f64)], m: f64) -> Result<FitResult> {
    if series.len() < MIN_POINTS {
        return Err(Error::invalid(format!(
            "need at least {MIN_POINTS} samples, got {}",
            series.len()
        )));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::invalid(format!("amplitude M = {m} must be positive")));
    }
    if let Some(&(t, y)) = series.iter().find(|&&(t, y)| !t.is_finite() || t < 0.0 || !(y > 0.0) || !y.is_finite()) {
        return Err(Error::invalid(format!(
            "sample ({t}, {y}) must have T >= 0 and a positive finite value"
        )));
    }
    if series.iter().all(|&(_, y)| y == series[0].1) {
        return Err(Error::NoDecay("series is constant".into()));
    }

    let mut tau = initial_tau(series, m)?;
    let mut alpha = 1.0;
    let mut current = sse(series, m, tau, alpha);
    let mut lambda = LAMBDA_INIT;
    let mut converged = current == 0.0;
    let mut iterations = 0;

    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        // normal equations for residuals r = y - f
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(t, y) in series {
            if t == 0.0 {
                continue;
            }
            let ln = (t / tau).ln();
            let u = (alpha * ln).exp();
            let f = m * (-u).exp();
            let r = y - f;
            // d r / d tau and d r / d alpha
            let j1 = -f * u * alpha / tau;
            let j2 = f * u * ln;
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            g1 += j1 * r;
            g2 += j2 * r;
        }

        let mut improved = false;
        while lambda <= LAMBDA_LIMIT {
            let d11 = a11 + lambda * a11.max(f64::MIN_POSITIVE);
            let d22 = a22 + lambda * a22.max(f64::MIN_POSITIVE);
            let det = d11 * d22 - a12 * a12;
            if det > 0.0 && det.is_finite() {
                let step_tau = -(d22 * g1 - a12 * g2) / det;
                let step_alpha = -(d11 * g2 - a12 * g1) / det;
                let new_tau = tau + step_tau;
                let new_alpha = (alpha + step_alpha).clamp(ALPHA_MIN, ALPHA_MAX);
                if new_tau > 0.0 && new_tau.is_finite() {
                    let trial = sse(series, m, new_tau, new_alpha);
                    if trial < current {
                        let relative = (current - trial) / current;
                        tau = new_tau;
                        alpha = new_alpha;
                        current = trial;
                        lambda = (lambda / 3.0).max(1e-12);
                        converged = relative < RELATIVE_SSE_TOLERANCE || current == 0.0;
                        improved = true;
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left at machine precision
            converged = true;
        }
    }

    if alpha <= ALPHA_MIN {
        converged = false;
    }
    Ok(FitResult { m, tau, alpha, sse: current, converged, iterations })
}

/// Convenience for a curve sampled at `T = 0, 1, 2, ...`, with `M` taken
/// from its first value.
pub fn fit_uniform_curve(values: &[f64]) -> Result<FitResult> {
    let m = *values
        .first()
        .ok_or_else(|| Error::invalid("empty curve"))?;
    let series: Vec<(f64, f64)> = values.iter().enumerate().map(|(t, &v)| (t as f64, v)).collect();
    fit_stretched_exponential(&series, m)
}
