//! CSV, graymap and JSON writers. Every error carries the offending path.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{CollapseResult, EnsembleResult, FitTableRow, SteepeningReport, TableOneRow};
use crate::lattice::{ColorField, Evolution, Protocol, RationalRatio};
use crate::metrics::MetricSeries;
use crate::permutation::Permutation;

pub const SERIES_HEADER: [&str; 5] = ["T", "cut_count", "percent_unmixed", "mixing_norm", "mean_subseg_len"];
pub const FIT_TABLE_HEADER: [&str; 4] = ["r", "D", "tau", "alpha"];

/// Run metadata stored next to every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub n: usize,
    pub ratio: RationalRatio,
    pub permutation: Option<Permutation>,
    pub d: f64,
    /// `null` in JSON when infinite (no diffusion).
    pub pe: Option<f64>,
    pub tmax: usize,
    pub p: f64,
    pub seed_of_truth: &'static str,
}

impl RunMetadata {
    pub fn new(
        n: usize,
        ratio: RationalRatio,
        permutation: Option<Permutation>,
        d: f64,
        pe: f64,
        tmax: usize,
        p: f64,
    ) -> Self {
        RunMetadata {
            n,
            ratio,
            permutation,
            d,
            pe: pe.is_finite().then_some(pe),
            tmax,
            p,
            seed_of_truth: "deterministic",
        }
    }

    pub fn from_protocol(protocol: &Protocol, pe: f64, p: f64) -> Self {
        Self::new(
            protocol.n,
            protocol.ratio,
            Some(protocol.permutation.clone()),
            protocol.diffusivity,
            pe,
            protocol.t_max,
            p,
        )
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn write_series_csv(path: &Path, series: &MetricSeries) -> Result<()> {
    write_rows(
        path,
        &SERIES_HEADER,
        (0..series.len()).map(|t| {
            vec![
                t.to_string(),
                series.cut_count[t].to_string(),
                series.percent_unmixed[t].to_string(),
                series.mixing_norm[t].to_string(),
                series.mean_subsegment_length[t].to_string(),
            ]
        }),
    )
}

/// Averaged curves of an ensemble.
pub fn write_ensemble_csv(path: &Path, ensemble: &EnsembleResult) -> Result<()> {
    write_rows(
        path,
        &["T", "mean_cut_count", "mean_mixing_norm", "mean_subseg_len"],
        (0..ensemble.mean_norm.len()).map(|t| {
            vec![
                t.to_string(),
                ensemble.mean_cut_count[t].to_string(),
                ensemble.mean_norm[t].to_string(),
                ensemble.mean_subsegment_length[t].to_string(),
            ]
        }),
    )
}

pub fn write_fit_table_csv(path: &Path, rows: &[FitTableRow]) -> Result<()> {
    write_rows(
        path,
        &FIT_TABLE_HEADER,
        rows.iter().map(|r| {
            vec![
                r.ratio.value().to_string(),
                r.diffusivity.to_string(),
                r.fit.tau.to_string(),
                r.fit.alpha.to_string(),
            ]
        }),
    )
}

pub fn write_table_one_csv(path: &Path, rows: &[TableOneRow]) -> Result<()> {
    write_rows(
        path,
        &["r", "r_n", "xi", "L", "T_max"],
        rows.iter().map(|r| {
            vec![
                r.ratio.to_string(),
                r.r_n.to_string(),
                r.xi.to_string(),
                r.length.to_string(),
                r.t_max.to_string(),
            ]
        }),
    )
}

/// Grid statistics of a collapse: mean curve, spread and the universal fit
/// evaluated on the grid.
pub fn write_collapse_csv(path: &Path, c: &CollapseResult) -> Result<()> {
    write_rows(
        path,
        &["t_over_tpe", "mean", "std", "lower", "upper", "fit"],
        (0..c.grid.len()).map(|i| {
            vec![
                c.grid[i].to_string(),
                c.mean[i].to_string(),
                c.std_dev[i].to_string(),
                c.lower[i].to_string(),
                c.upper[i].to_string(),
                c.universal.eval(c.grid[i]).to_string(),
            ]
        }),
    )
}

/// Rescaled curves in long format, one row per sample.
pub fn write_collapse_curves_csv(path: &Path, c: &CollapseResult) -> Result<()> {
    write_rows(
        path,
        &["curve", "t_pe", "t_over_tpe", "norm_over_m"],
        c.curves.iter().flat_map(|curve| {
            curve.x.iter().zip(&curve.y).map(move |(x, y)| {
                vec![curve.label.clone(), curve.t_pe.to_string(), x.to_string(), y.to_string()]
            })
        }),
    )
}

pub fn write_steepening_csv(path: &Path, report: &SteepeningReport) -> Result<()> {
    write_rows(
        path,
        &["Pe", "D", "found", "T_stop", "T_stop_interp", "max_slope"],
        report.rows.iter().map(|r| {
            let c = r.stopping.crossing;
            vec![
                r.pe.to_string(),
                r.diffusivity.to_string(),
                r.stopping.found().to_string(),
                c.map(|c| c.iteration.to_string()).unwrap_or_default(),
                opt(c.map(|c| c.interpolated)),
                opt(r.max_slope),
            ]
        }),
    )
}

/// Normalized norm curves on `T / T̃_Pe` for every row with a stopping time.
pub fn write_steepening_curves_csv(path: &Path, report: &SteepeningReport) -> Result<()> {
    write_rows(
        path,
        &["Pe", "T", "t_over_tstop", "norm_over_m", "ell_m"],
        report.rows.iter().flat_map(|r| {
            let t_stop = r.stopping.iteration();
            r.normalized_norm.iter().enumerate().map(move |(t, y)| {
                vec![
                    r.pe.to_string(),
                    t.to_string(),
                    opt(t_stop.map(|s| t as f64 / s as f64)),
                    y.to_string(),
                    report.mean_lengths[t].to_string(),
                ]
            })
        }),
    )
}

fn check_rectangular(fields: &[ColorField]) -> Result<usize> {
    let width = fields
        .first()
        .ok_or_else(|| Error::invalid("no fields to export"))?
        .len();
    if fields.iter().any(|f| f.len() != width) {
        return Err(Error::invalid("fields differ in length"));
    }
    Ok(width)
}

fn gray(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary graymap (P5): one row per iteration, one column per site.
pub fn write_spacetime_pgm(path: &Path, fields: &[ColorField]) -> Result<()> {
    let width = check_rectangular(fields)?;
    let mut w = create(path)?;
    write!(w, "P5\n{} {}\n255\n", width, fields.len()).map_err(io_err(path))?;
    for f in fields {
        let row: Vec<u8> = f.values().iter().map(|&c| gray(c)).collect();
        w.write_all(&row).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// The same raster as a headerless CSV matrix of raw colors.
pub fn write_spacetime_csv(path: &Path, fields: &[ColorField]) -> Result<()> {
    check_rectangular(fields)?;
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(create(path)?);
    for f in fields {
        w.write_record(f.values().iter().map(|c| c.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Raster {
    Pgm,
    Csv,
}

/// Streams the space-time raster of `protocol` (`T_max + 1` rows of `L`
/// sites) without holding the whole record in memory.
pub fn write_protocol_spacetime(path: &Path, protocol: &Protocol, raster: Raster) -> Result<()> {
    let mut evo = Evolution::new(protocol)?;
    let width = protocol.length();
    let height = protocol.t_max + 1;
    let mut w = create(path)?;
    let mut line = String::new();
    let mut emit = |w: &mut BufWriter<File>, row: &[f64]| -> std::io::Result<()> {
        match raster {
            Raster::Pgm => {
                let bytes: Vec<u8> = row.iter().map(|&c| gray(c)).collect();
                w.write_all(&bytes)
            }
            Raster::Csv => {
                line.clear();
                for (i, c) in row.iter().enumerate() {
                    if i > 0 {
                        line.push(',');
                    }
                    line.push_str(&c.to_string());
                }
                line.push('\n');
                w.write_all(line.as_bytes())
            }
        }
    };
    if raster == Raster::Pgm {
        write!(w, "P5\n{width} {height}\n255\n").map_err(io_err(path))?;
    }
    emit(&mut w, evo.current()).map_err(io_err(path))?;
    while let Some(row) = evo.advance() {
        emit(&mut w, row).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
