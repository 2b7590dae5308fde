//! Ensembles over shuffling permutations, curve collapse, Péclet sweeps and
//! the lattice-size table.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{diffusivity_from_peclet, match_iterations};
use crate::error::{Error, Result};
use crate::fit::{efolding_time, fit_stretched_exponential, FitResult};
use crate::lattice::{iterate, subsegment_lengths, total_length, Protocol, RationalRatio, Recording, SpaceTimeRecord};
use crate::metrics::MetricSeries;
use crate::permutation::{enumerate_allowed, Permutation};
use crate::stopping::{mean_length_curve, solve_stopping_time, LengthAveraging, StoppingTimeSolution};

/// Uniform grid on `T / T_Pe` used to resample curves for the collapse.
pub const COLLAPSE_GRID_POINTS: usize = 200;
pub const COLLAPSE_GRID_END: f64 = 5.0;

/// Reference lattice used to match iteration budgets across ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub length: u64,
    pub t_max: u64,
}

impl Reference {
    pub fn new(length: u64, t_max: u64) -> Result<Self> {
        if length == 0 || t_max == 0 {
            return Err(Error::invalid("reference length and T_max must be positive"));
        }
        Ok(Reference { length, t_max })
    }

    /// `T_max` for a lattice of length `l` with the same Péclet number.
    pub fn matched_t_max(&self, l: u64) -> u64 {
        match_iterations(self.length, self.t_max, l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n: usize,
    pub ratio: RationalRatio,
    pub diffusivity: f64,
    pub t_max: usize,
    pub p: f64,
    /// Defaults to every allowed permutation of `1..=n`.
    pub permutations: Option<Vec<Permutation>>,
}

impl EnsembleSpec {
    pub fn new(n: usize, ratio: RationalRatio, diffusivity: f64, t_max: usize) -> Self {
        EnsembleSpec { n, ratio, diffusivity, t_max, p: 2.0, permutations: None }
    }

    pub fn with_permutations(mut self, permutations: Vec<Permutation>) -> Self {
        self.permutations = Some(permutations);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub permutation: Permutation,
    pub series: MetricSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub spec: EnsembleSpec,
    pub length: u64,
    /// Lexicographic permutation order.
    pub members: Vec<EnsembleMember>,
    pub mean_norm: Vec<f64>,
    pub mean_cut_count: Vec<f64>,
    /// Mean over members of `1 / (C + 1)`.
    pub mean_subsegment_length: Vec<f64>,
    /// Fit of `mean_norm` on the raw iteration axis; `None` when the
    /// averaged norm does not decay (no diffusion).
    pub fit: Option<FitResult>,
    pub t_pe: Option<f64>,
}

fn mean_curve<'a>(curves: impl Iterator<Item = &'a [f64]>, len: usize) -> Vec<f64> {
    let mut sum = vec![0.0; len];
    let mut k = 0usize;
    for c in curves {
        for (s, v) in sum.iter_mut().zip(c) {
            *s += v;
        }
        k += 1;
    }
    sum.iter().map(|s| s / k as f64).collect()
}

/// Runs every permutation of the ensemble, averages the metric curves
/// and fits the averaged norm.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleResult> {
    let permutations = match &spec.permutations {
        Some(p) => p.clone(),
        None => enumerate_allowed(spec.n)?,
    };
    if permutations.is_empty() {
        return Err(Error::invalid(format!(
            "empty permutation set for N = {}",
            spec.n
        )));
    }
    let protocols = permutations
        .into_iter()
        .map(|perm| Protocol::new(spec.n, spec.ratio, perm, spec.diffusivity, spec.t_max))
        .collect::<Result<Vec<_>>>()?;

    // order-preserving gather, so the reductions below are reproducible
    let members = protocols
        .into_par_iter()
        .map(|pr| {
            let series = match iterate(&pr, Recording::Metrics { p: spec.p })? {
                SpaceTimeRecord::Metrics(m) => m,
                SpaceTimeRecord::Fields(_) => unreachable!("metrics were requested"),
            };
            Ok(EnsembleMember { permutation: pr.permutation, series })
        })
        .collect::<Result<Vec<_>>>()?;

    let len = spec.t_max + 1;
    let mean_norm = mean_curve(members.iter().map(|m| m.series.mixing_norm.as_slice()), len);
    let cut_f64: Vec<Vec<f64>> = members
        .iter()
        .map(|m| m.series.cut_count.iter().map(|&c| c as f64).collect())
        .collect();
    let mean_cut_count = mean_curve(cut_f64.iter().map(Vec::as_slice), len);
    let mean_subsegment_length =
        mean_curve(members.iter().map(|m| m.series.mean_subsegment_length.as_slice()), len);

    let (fit, t_pe) = fit_curve(&mean_norm, 1.0)?;
    Ok(EnsembleResult {
        spec: spec.clone(),
        length: total_length(spec.n, spec.ratio)?,
        members,
        mean_norm,
        mean_cut_count,
        mean_subsegment_length,
        fit,
        t_pe,
    })
}

/// Fits a curve sampled at `T = 0, 1, ...` on the axis `T · scale`.
fn fit_curve(values: &[f64], scale: f64) -> Result<(Option<FitResult>, Option<f64>)> {
    if values.len() < 5 {
        return Ok((None, None));
    }
    let series: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .map(|(t, &v)| (t as f64 * scale, v))
        .collect();
    match fit_stretched_exponential(&series, values[0]) {
        Ok(fit) => {
            let t_pe = efolding_time(&fit)?.t_pe;
            Ok((Some(fit), Some(t_pe)))
        }
        Err(Error::NoDecay(_)) => Ok((None, None)),
        Err(e) => Err(e),
    }
}

impl EnsembleResult {
    pub fn initial_norm(&self) -> f64 {
        self.mean_norm[0]
    }

    /// Fit of the averaged norm with time measured in iterations of a
    /// reference run of `t_max_ref` iterations, i.e. on `T · t_max_ref / T_max`.
    pub fn fit_on_reference_axis(&self, t_max_ref: u64) -> Result<FitResult> {
        let scale = t_max_ref as f64 / self.spec.t_max as f64;
        fit_curve(&self.mean_norm, scale)?
            .0
            .ok_or_else(|| Error::NoDecay("averaged norm is constant".into()))
    }

    pub fn label(&self) -> String {
        format!("N={} r={} D={}", self.spec.n, self.spec.ratio, self.spec.diffusivity)
    }
}

/// Averaged curve of one ensemble on the rescaled axes `(T / T_Pe, ||c|| / M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledCurve {
    pub label: String,
    pub t_pe: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub curves: Vec<RescaledCurve>,
    pub grid: Vec<f64>,
    /// Mean over ensembles of the resampled averaged curves.
    pub mean: Vec<f64>,
    /// Standard deviation over every permutation's resampled curve.
    pub std_dev: Vec<f64>,
    /// `max(mean - std_dev, 0)`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub universal: FitResult,
    /// Indices (into the input) left out for lack of a converged fit.
    pub excluded: Vec<usize>,
}

/// Linear interpolation of `(xs, ys)` at `x`; holds the end values outside.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.partition_point(|&v| v <= x) {
        0 => ys[0],
        i if i == xs.len() => ys[xs.len() - 1],
        i => {
            let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    }
}

pub fn collapse_grid() -> Vec<f64> {
    (0..COLLAPSE_GRID_POINTS)
        .map(|i| COLLAPSE_GRID_END * i as f64 / (COLLAPSE_GRID_POINTS - 1) as f64)
        .collect()
}

/// Rescales every averaged norm curve by its own `M` and `T_Pe`, averages
/// them on a common grid and fits the mean with `M = 1`.
pub fn collapse(ensembles: &[EnsembleResult]) -> Result<CollapseResult> {
    let grid = collapse_grid();
    let mut curves = Vec::new();
    let mut resampled = Vec::new();
    let mut member_curves: Vec<Vec<f64>> = Vec::new();
    let mut excluded = Vec::new();

    for (i, e) in ensembles.iter().enumerate() {
        let usable = e.fit.filter(|f| f.converged).zip(e.t_pe.filter(|t| *t > 0.0));
        let Some((_, t_pe)) = usable else {
            warn!("excluding {} from the collapse: no converged fit", e.label());
            excluded.push(i);
            continue;
        };
        let m = e.initial_norm();
        let x: Vec<f64> = (0..e.mean_norm.len()).map(|t| t as f64 / t_pe).collect();
        let y: Vec<f64> = e.mean_norm.iter().map(|v| v / m).collect();
        if x.last().copied().unwrap_or(0.0) < COLLAPSE_GRID_END {
            warn!(
                "{} ends at T/T_Pe = {:.3}; holding its last value",
                e.label(),
                x.last().copied().unwrap_or(0.0)
            );
        }
        resampled.push(grid.iter().map(|&g| interpolate(&x, &y, g)).collect::<Vec<_>>());
        for member in &e.members {
            let my: Vec<f64> = member.series.mixing_norm.iter().map(|v| v / m).collect();
            member_curves.push(grid.iter().map(|&g| interpolate(&x, &my, g)).collect());
        }
        curves.push(RescaledCurve { label: e.label(), t_pe, x, y });
    }
    if resampled.is_empty() {
        return Err(Error::invalid("no ensemble with a converged fit to collapse"));
    }

    let mean = mean_curve(resampled.iter().map(Vec::as_slice), grid.len());
    let pooled = mean_curve(member_curves.iter().map(Vec::as_slice), grid.len());
    let std_dev: Vec<f64> = (0..grid.len())
        .map(|g| {
            let var = member_curves.iter().map(|c| (c[g] - pooled[g]).powi(2)).sum::<f64>()
                / member_curves.len() as f64;
            var.sqrt()
        })
        .collect();
    let lower = mean.iter().zip(&std_dev).map(|(m, s)| (m - s).max(0.0)).collect();
    let upper = mean.iter().zip(&std_dev).map(|(m, s)| m + s).collect();

    let series: Vec<(f64, f64)> = grid.iter().copied().zip(mean.iter().copied()).collect();
    let universal = fit_stretched_exponential(&series, 1.0)?;

    Ok(CollapseResult { curves, grid, mean, std_dev, lower, upper, universal, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteepeningRow {
    pub pe: f64,
    pub diffusivity: f64,
    pub stopping: StoppingTimeSolution,
    /// `max |Δ(||c|| / M)| / Δ(T / T̃_Pe)`; `None` without a stopping time.
    pub max_slope: Option<f64>,
    /// Averaged norm divided by its initial value, `T = 0..=T_max`.
    pub normalized_norm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteepeningReport {
    pub n: usize,
    pub ratio: RationalRatio,
    pub t_max: usize,
    pub averaging: LengthAveraging,
    /// `ℓ_m(T)` of the diffusionless ensemble.
    pub mean_lengths: Vec<f64>,
    pub rows: Vec<SteepeningRow>,
}

/// Stopping times from the diffusionless ensemble for each `Pe`, then the
/// diffusive ensemble at the matching `D` rescaled by that stopping time.
pub fn steepening_report(
    n: usize,
    ratio: RationalRatio,
    t_max: usize,
    pe_list: &[f64],
    averaging: LengthAveraging,
) -> Result<SteepeningReport> {
    if pe_list.is_empty() || pe_list.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::invalid("Péclet numbers must be positive"));
    }
    if pe_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("Péclet numbers must be strictly ascending"));
    }
    let base = run_ensemble(&EnsembleSpec::new(n, ratio, 0.0, t_max))?;
    let cut_curves: Vec<&[usize]> = base.members.iter().map(|m| m.series.cut_count.as_slice()).collect();
    let mean_lengths = mean_length_curve(&cut_curves, averaging)?;

    let rows = pe_list
        .iter()
        .map(|&pe| {
            let stopping = solve_stopping_time(&mean_lengths, pe, t_max)?;
            let diffusivity = diffusivity_from_peclet(base.length, pe, t_max as u64)?;
            let run = run_ensemble(&EnsembleSpec::new(n, ratio, diffusivity, t_max))?;
            let m = run.initial_norm();
            let normalized_norm: Vec<f64> = run.mean_norm.iter().map(|v| v / m).collect();
            let max_slope = stopping.iteration().map(|t_stop| {
                normalized_norm
                    .windows(2)
                    .map(|w| (w[1] - w[0]).abs() * t_stop as f64)
                    .fold(0.0, f64::max)
            });
            if !stopping.found() {
                warn!("no stopping time for Pe = {pe} within T_max = {t_max}");
            }
            Ok(SteepeningRow { pe, diffusivity, stopping, max_slope, normalized_norm })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SteepeningReport { n, ratio, t_max, averaging, mean_lengths, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableOneRow {
    pub ratio: RationalRatio,
    pub r_n: u64,
    pub xi: u64,
    pub length: u64,
    pub t_max: u64,
}

/// Lattice size and matched iteration budget for each ratio; the reference
/// ratio's own row carries `reference_t_max`.
pub fn table_one(
    n: usize,
    reference_ratio: RationalRatio,
    reference_t_max: u64,
    ratios: &[RationalRatio],
) -> Result<Vec<TableOneRow>> {
    let reference = Reference::new(total_length(n, reference_ratio)?, reference_t_max)?;
    ratios
        .iter()
        .map(|&ratio| {
            let length = total_length(n, ratio)?;
            Ok(TableOneRow {
                ratio,
                r_n: ratio.numerator(),
                xi: subsegment_lengths(n, ratio)?[0],
                length,
                t_max: reference.matched_t_max(length),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitTableRow {
    pub ratio: RationalRatio,
    pub diffusivity: f64,
    pub length: u64,
    pub t_max: u64,
    /// Fit with time in reference iterations.
    pub fit: FitResult,
}

/// Averaged-norm fits over a `(ratio, D)` grid. Each ratio runs for the
/// iteration budget matched to `reference`, and `τ` is reported in
/// reference iterations.
pub fn fit_table(
    n: usize,
    ratios: &[RationalRatio],
    diffusivities: &[f64],
    reference: Reference,
) -> Result<Vec<FitTableRow>> {
    let mut rows = Vec::new();
    for &ratio in ratios {
        let length = total_length(n, ratio)?;
        let t_max = reference.matched_t_max(length);
        for &d in diffusivities {
            let ens = run_ensemble(&EnsembleSpec::new(n, ratio, d, t_max as usize))?;
            let fit = ens.fit_on_reference_axis(reference.t_max)?;
            rows.push(FitTableRow { ratio, diffusivity: d, length, t_max, fit });
        }
    }
    Ok(rows)
}
