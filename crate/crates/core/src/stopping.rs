//! Stopping-time prediction: the first iteration at which the diffusive
//! length `ℓ* = π sqrt(T̂ / (2 Pe))` reaches the mean length of single-color
//! pieces of the diffusionless map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::mean_subsegment_length;

/// `ℓ* = π sqrt(T̂ / (2 Pe))` on the unit-normalized segment.
pub fn batchelor_length(t_hat: f64, pe: f64) -> f64 {
    std::f64::consts::PI * (t_hat / (2.0 * pe)).sqrt()
}

/// How per-permutation cut counts are reduced to one `ℓ_m(T)` curve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthAveraging {
    /// Mean over permutations of `1 / (C + 1)`.
    #[default]
    PerPermutation,
    /// `1 / (C̄ + 1)` with `C̄` the mean cut count.
    OfMeanCount,
}

/// Reduces cut-count curves (one per permutation, equal lengths) to the
/// mean subsegment length curve. Summation runs in the given order.
pub fn mean_length_curve(cut_curves: &[&[usize]], averaging: LengthAveraging) -> Result<Vec<f64>> {
    let first = cut_curves
        .first()
        .ok_or_else(|| Error::invalid("no cut-count curves to average"))?;
    if cut_curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::invalid("cut-count curves differ in length"));
    }
    let k = cut_curves.len() as f64;
    Ok((0..first.len())
        .map(|t| match averaging {
            LengthAveraging::PerPermutation => {
                cut_curves.iter().map(|c| mean_subsegment_length(c[t])).sum::<f64>() / k
            }
            LengthAveraging::OfMeanCount => {
                let mean = cut_curves.iter().map(|c| c[t] as f64).sum::<f64>() / k;
                1.0 / (mean + 1.0)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// First integer iteration with `ℓ* >= ℓ_m`.
    pub iteration: usize,
    /// `iteration / T_max`.
    pub normalized_time: f64,
    /// Root of the linear interpolant of `ℓ* - ℓ_m` between the bracketing
    /// iterations.
    pub interpolated: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingTimeSolution {
    pub pe: f64,
    pub t_max: usize,
    pub crossing: Option<Crossing>,
}

impl StoppingTimeSolution {
    pub fn found(&self) -> bool {
        self.crossing.is_some()
    }

    pub fn iteration(&self) -> Option<usize> {
        self.crossing.map(|c| c.iteration)
    }
}

/// Solves `ℓ*(T / T_max) = ℓ_m(T)` by first crossing on `T = 1..=T_max`.
///
/// `mean_lengths[T]` is `ℓ_m` at iteration `T`. No crossing (periodic or
/// poorly mixing maps, very large `Pe`) is reported as `crossing = None`.
pub fn solve_stopping_time(mean_lengths: &[f64], pe: f64, t_max: usize) -> Result<StoppingTimeSolution> {
    if !(pe > 0.0) {
        return Err(Error::invalid(format!("Péclet number {pe} must be positive")));
    }
    if t_max == 0 || mean_lengths.len() < t_max + 1 {
        return Err(Error::invalid(format!(
            "curve of {} points does not cover T = 0..={t_max}",
            mean_lengths.len()
        )));
    }
    let gap = |t: usize| batchelor_length(t as f64 / t_max as f64, pe) - mean_lengths[t];
    let crossing = (1..=t_max).find(|&t| gap(t) >= 0.0).map(|t| {
        let (g0, g1) = (gap(t - 1), gap(t));
        let interpolated = if g1 > g0 { (t - 1) as f64 + (-g0) / (g1 - g0) } else { t as f64 };
        Crossing {
            iteration: t,
            normalized_time: t as f64 / t_max as f64,
            interpolated,
        }
    });
    Ok(StoppingTimeSolution { pe, t_max, crossing })
}

/// The same solve starting from a mean cut-count curve, `ℓ_m = 1 / (C̄ + 1)`.
pub fn solve_from_mean_cuts(mean_cuts: &[f64], pe: f64, t_max: usize) -> Result<StoppingTimeSolution> {
    let lengths: Vec<f64> = mean_cuts.iter().map(|c| 1.0 / (c + 1.0)).collect();
    solve_stopping_time(&lengths, pe, t_max)
}
