use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Deserializer, Serialize};

use cutshuffle::diffusion::{diffusivity_from_peclet, peclet_number};
use cutshuffle::experiment::{
    collapse, fit_table, run_ensemble, steepening_report, table_one, EnsembleSpec, Reference,
};
use cutshuffle::export::{self, Raster, RunMetadata};
use cutshuffle::fit::{efolding_time, fit_stretched_exponential};
use cutshuffle::lattice::{iterate, total_length, Protocol, RationalRatio, Recording, SpaceTimeRecord};
use cutshuffle::permutation::{all_permutations, enumerate_allowed, violations, Permutation};
use cutshuffle::stopping::LengthAveraging;

#[derive(Parser)]
#[command(name = "cutshuffle", version, about = "Cutting-and-shuffling mixing with lattice diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one protocol and write its metric series (and optionally a space-time raster).
    Simulate(Settings),
    /// Print the allowed shuffling permutations of N pieces.
    ListPermutations {
        #[command(flatten)]
        settings: Settings,
        /// Also print rejected permutations with the rules they break.
        #[arg(long)]
        all: bool,
    },
    /// Ensembles over allowed permutations for every (N, r, D) combination.
    Sweep(Settings),
    /// Fit a series from a CSV file (`--input`), or build the (r, D) fit table.
    Fit(Settings),
    /// Rescale averaged norm curves by their e-folding times and fit the mean.
    Collapse(Settings),
    /// Stopping times from the diffusionless cut counts and the steepening report.
    StoppingTime(Settings),
    /// Lattice sizes and matched iteration budgets.
    Table1(Settings),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Pgm,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Averaging {
    PerPermutation,
    OfMeanCount,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    /// Number of pieces (comma-separated list where a verb accepts several).
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    n: Option<Vec<usize>>,
    /// Length ratio as a fraction, e.g. 5/4 (comma-separated list allowed).
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    ratio: Option<Vec<RationalRatio>>,
    /// Shuffling permutation, e.g. "3,1,4,2".
    #[arg(long)]
    perm: Option<Permutation>,
    /// Diffusivity (comma-separated list allowed).
    #[arg(long, value_delimiter = ',', conflicts_with = "pe")]
    #[serde(deserialize_with = "one_or_many")]
    d: Option<Vec<f64>>,
    /// Péclet number L²/(D T_max) (comma-separated list allowed).
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pe: Option<Vec<f64>>,
    /// Number of iterations.
    #[arg(long, conflicts_with = "tmax_from")]
    tmax: Option<usize>,
    /// Match the iteration budget to a reference lattice, "L_ref,T_ref".
    #[arg(long, value_parser = parse_reference)]
    tmax_from: Option<Reference>,
    /// Norm exponent.
    #[arg(long)]
    p: Option<f64>,
    /// Reference ratio for table1.
    #[arg(long)]
    ref_ratio: Option<RationalRatio>,
    /// How cut counts become a mean subsegment length curve.
    #[arg(long, value_enum)]
    #[serde(skip)]
    averaging: Option<Averaging>,
    #[arg(skip)]
    #[serde(rename = "averaging")]
    averaging_resolved: Option<LengthAveraging>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write the space-time raster as well (always on for --format pgm).
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    spacetime: bool,
    /// CSV input for `fit`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSON configuration file; flags take precedence over its values.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

fn one_or_many<'de, D, T>(de: D) -> std::result::Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Ok(Option::<OneOrMany<T>>::deserialize(de)?.map(|v| match v {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(xs) => xs,
    }))
}

fn parse_reference(s: &str) -> std::result::Result<Reference, String> {
    let (l, t) = s.split_once(',').ok_or("expected L_ref,T_ref")?;
    let l: u64 = l.trim().parse().map_err(|e| format!("L_ref: {e}"))?;
    let t: u64 = t.trim().parse().map_err(|e| format!("T_ref: {e}"))?;
    Reference::new(l, t).map_err(|e| e.to_string())
}

fn ratios(list: &[&str]) -> Vec<RationalRatio> {
    list.iter().map(|s| s.parse().expect("valid literal")).collect()
}

impl Settings {
    /// Flags override the config file.
    fn resolve(mut self) -> Result<Self> {
        if let Some(path) = self.config.take() {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let file: Settings =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            self.n = self.n.or(file.n);
            self.ratio = self.ratio.or(file.ratio);
            self.perm = self.perm.or(file.perm);
            if self.d.is_none() && self.pe.is_none() {
                self.d = file.d;
                self.pe = file.pe;
            }
            if self.tmax.is_none() && self.tmax_from.is_none() {
                self.tmax = file.tmax;
                self.tmax_from = file.tmax_from;
            }
            self.p = self.p.or(file.p);
            self.ref_ratio = self.ref_ratio.or(file.ref_ratio);
            self.averaging_resolved = file.averaging_resolved;
            self.out = self.out.or(file.out);
            self.format = self.format.or(file.format);
            self.spacetime |= file.spacetime;
            self.input = self.input.or(file.input);
        }
        if let Some(a) = self.averaging {
            self.averaging_resolved = Some(match a {
                Averaging::PerPermutation => LengthAveraging::PerPermutation,
                Averaging::OfMeanCount => LengthAveraging::OfMeanCount,
            });
        }
        self.p.get_or_insert(2.0);
        self.out.get_or_insert_with(|| PathBuf::from("."));
        self.format.get_or_insert(Format::Csv);
        Ok(self)
    }

    fn single_n(&self, default: Option<usize>) -> Result<usize> {
        match self.n.as_deref() {
            Some([n]) => Ok(*n),
            Some(_) => bail!("this verb takes a single --n"),
            None => default.context("--n is required"),
        }
    }

    fn single_ratio(&self) -> Result<RationalRatio> {
        match self.ratio.as_deref() {
            Some([r]) => Ok(*r),
            Some(_) => bail!("this verb takes a single --ratio"),
            None => bail!("--ratio is required"),
        }
    }

    fn p(&self) -> f64 {
        self.p.unwrap_or(2.0)
    }

    fn out(&self) -> Result<PathBuf> {
        let out = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(out)
    }

    fn t_max_for(&self, length: u64) -> Result<usize> {
        match (self.tmax, self.tmax_from) {
            (Some(t), _) => Ok(t),
            (None, Some(r)) => Ok(r.matched_t_max(length) as usize),
            (None, None) => bail!("one of --tmax or --tmax-from is required"),
        }
    }

    /// `(D, Pe)` pairs for a lattice of length `l` run for `t_max` iterations.
    fn diffusion_grid(&self, l: u64, t_max: usize) -> Result<Vec<(f64, f64)>> {
        match (&self.d, &self.pe) {
            (Some(ds), _) => Ok(ds.iter().map(|&d| (d, peclet_number(l, d, t_max as u64))).collect()),
            (None, Some(pes)) => pes
                .iter()
                .map(|&pe| Ok((diffusivity_from_peclet(l, pe, t_max as u64)?, pe)))
                .collect(),
            (None, None) => bail!("one of --d or --pe is required"),
        }
    }
}

/// JSON document written next to every verb's outputs.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    verb: &'a str,
    config: &'a Settings,
    result: T,
}

fn write_report<T: Serialize>(out: &Path, verb: &str, config: &Settings, result: T) -> Result<PathBuf> {
    let path = out.join(format!("{verb}.json"));
    export::write_json(&path, &Report { verb, config, result })?;
    Ok(path)
}

fn simulate(s: &Settings) -> Result<()> {
    let n = s.single_n(None)?;
    let ratio = s.single_ratio()?;
    let perm = s.perm.clone().context("--perm is required")?;
    let l = total_length(n, ratio)?;
    let t_max = s.t_max_for(l)?;
    let &[(d, pe)] = s.diffusion_grid(l, t_max)?.as_slice() else {
        bail!("simulate takes a single --d or --pe");
    };
    let protocol = Protocol::new(n, ratio, perm, d, t_max)?;
    let out = s.out()?;
    let format = s.format.unwrap_or(Format::Csv);

    let series = match iterate(&protocol, Recording::Metrics { p: s.p() })? {
        SpaceTimeRecord::Metrics(m) => m,
        SpaceTimeRecord::Fields(_) => unreachable!(),
    };
    let meta = RunMetadata::from_protocol(&protocol, pe, s.p());
    export::write_json(&out.join("run.json"), &meta)?;
    match format {
        Format::Json => {
            write_report(&out, "simulate", s, (&meta, &series))?;
        }
        _ => export::write_series_csv(&out.join("series.csv"), &series)?,
    }
    if format == Format::Pgm {
        export::write_protocol_spacetime(&out.join("spacetime.pgm"), &protocol, Raster::Pgm)?;
    } else if s.spacetime {
        export::write_protocol_spacetime(&out.join("spacetime.csv"), &protocol, Raster::Csv)?;
    }
    println!(
        "N={n} r={ratio} perm={} L={l} D={d} Pe={pe} T_max={t_max}: M={:.6} final norm={:.6} final cuts={}",
        protocol.permutation,
        series.initial_norm(),
        series.mixing_norm[t_max],
        series.cut_count[t_max]
    );
    Ok(())
}

fn list_permutations(s: &Settings, all: bool) -> Result<()> {
    let n = s.single_n(None)?;
    if s.format == Some(Format::Json) {
        let allowed = enumerate_allowed(n)?;
        println!("{}", serde_json::to_string(&allowed)?);
        return Ok(());
    }
    if all {
        for p in all_permutations(n)? {
            let v = violations(&p);
            if v.is_empty() {
                println!("{p} allowed");
            } else {
                let names: Vec<String> = v.iter().map(|r| r.to_string()).collect();
                println!("{p} rejected: {}", names.join(", "));
            }
        }
    } else {
        for p in enumerate_allowed(n)? {
            println!("{p}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    n: usize,
    ratio: RationalRatio,
    d: f64,
    pe: Option<f64>,
    length: u64,
    t_max: usize,
    members: usize,
    m: f64,
    tau: Option<f64>,
    alpha: Option<f64>,
    t_pe: Option<f64>,
    converged: bool,
    file: String,
}

fn sweep(s: &Settings) -> Result<()> {
    let ns = s.n.clone().context("--n is required")?;
    let rs = s.ratio.clone().context("--ratio is required")?;
    let out = s.out()?;
    let mut rows = Vec::new();
    for &n in &ns {
        for &ratio in &rs {
            let l = total_length(n, ratio)?;
            let t_max = s.t_max_for(l)?;
            for (d, pe) in s.diffusion_grid(l, t_max)? {
                let mut spec = EnsembleSpec::new(n, ratio, d, t_max);
                spec.p = s.p();
                if let Some(p) = &s.perm {
                    spec = spec.with_permutations(vec![p.clone()]);
                }
                info!("ensemble N={n} r={ratio} D={d} T_max={t_max}");
                let e = run_ensemble(&spec)?;
                let file = format!("ensemble_n{n}_r{}-{}_d{d}.csv", ratio.numerator(), ratio.denominator());
                export::write_ensemble_csv(&out.join(&file), &e)?;
                rows.push(SweepRow {
                    n,
                    ratio,
                    d,
                    pe: pe.is_finite().then_some(pe),
                    length: l,
                    t_max,
                    members: e.members.len(),
                    m: e.initial_norm(),
                    tau: e.fit.map(|f| f.tau),
                    alpha: e.fit.map(|f| f.alpha),
                    t_pe: e.t_pe,
                    converged: e.fit.is_some_and(|f| f.converged),
                    file,
                });
            }
        }
    }
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record(["n", "r", "D", "Pe", "L", "T_max", "members", "M", "tau", "alpha", "T_Pe", "converged"])?;
    let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        w.write_record([
            r.n.to_string(),
            r.ratio.to_string(),
            r.d.to_string(),
            o(r.pe),
            r.length.to_string(),
            r.t_max.to_string(),
            r.members.to_string(),
            r.m.to_string(),
            o(r.tau),
            o(r.alpha),
            o(r.t_pe),
            r.converged.to_string(),
        ])?;
        println!(
            "N={} r={} D={} T_max={}: tau={} alpha={} T_Pe={}",
            r.n, r.ratio, r.d, r.t_max, o(r.tau), o(r.alpha), o(r.t_pe)
        );
    }
    w.flush()?;
    write_report(&out, "sweep", s, &rows)?;
    Ok(())
}

fn fit_input(s: &Settings, path: &Path) -> Result<()> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = ["mixing_norm", "mean_mixing_norm", "mean", "value"]
        .iter()
        .find_map(|name| headers.iter().position(|h| h == *name))
        .context("no mixing_norm / mean_mixing_norm / mean / value column")?;
    let tcol = headers.iter().position(|h| h == "T" || h == "t_over_tpe").unwrap_or(0);
    let mut series = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let t: f64 = rec[tcol].parse().with_context(|| format!("bad time {:?}", &rec[tcol]))?;
        let v: f64 = rec[col].parse().with_context(|| format!("bad value {:?}", &rec[col]))?;
        series.push((t, v));
    }
    ensure!(!series.is_empty(), "{} has no rows", path.display());
    let fit = fit_stretched_exponential(&series, series[0].1)?;
    let t_pe = efolding_time(&fit)?.t_pe;
    println!(
        "M={} tau={} alpha={} T_Pe={} converged={}",
        fit.m, fit.tau, fit.alpha, t_pe, fit.converged
    );
    let out = s.out()?;
    write_report(&out, "fit", s, serde_json::json!({ "fit": fit, "t_pe": t_pe }))?;
    Ok(())
}

fn fit(s: &Settings) -> Result<()> {
    if let Some(path) = &s.input {
        return fit_input(s, path);
    }
    let n = s.single_n(Some(4))?;
    let rs = s.ratio.clone().unwrap_or_else(|| ratios(&["5/4", "6/5", "7/5", "8/5", "9/5"]));
    let ds = s.d.clone().unwrap_or_else(|| vec![0.5, 0.01]);
    ensure!(s.pe.is_none(), "fit table takes --d, not --pe");
    let reference = s.tmax_from.unwrap_or(Reference { length: 369, t_max: 1000 });
    let rows = fit_table(n, &rs, &ds, reference)?;
    let out = s.out()?;
    export::write_fit_table_csv(&out.join("fit_table.csv"), &rows)?;
    for r in &rows {
        println!(
            "r={} D={} T_max={}: tau={:.4} alpha={:.4}",
            r.ratio, r.diffusivity, r.t_max, r.fit.tau, r.fit.alpha
        );
    }
    write_report(&out, "fit", s, serde_json::json!({ "reference": reference, "rows": rows }))?;
    Ok(())
}

fn collapse_verb(s: &Settings) -> Result<()> {
    let ns = s.n.clone().unwrap_or_else(|| vec![4]);
    let rs = s.ratio.clone().unwrap_or_else(|| ratios(&["6/5", "5/4", "7/5", "8/5", "9/5"]));
    let ds = s.d.clone().unwrap_or_else(|| vec![0.5]);
    ensure!(s.pe.is_none(), "collapse takes --d, not --pe");
    let reference = Reference { length: 369, t_max: 1000 };
    let mut ensembles = Vec::new();
    for &n in &ns {
        for &ratio in &rs {
            let l = total_length(n, ratio)?;
            let t_max = match (s.tmax, s.tmax_from) {
                (None, None) => reference.matched_t_max(l) as usize,
                _ => s.t_max_for(l)?,
            };
            for &d in &ds {
                let mut spec = EnsembleSpec::new(n, ratio, d, t_max);
                spec.p = s.p();
                info!("ensemble N={n} r={ratio} D={d} T_max={t_max}");
                ensembles.push(run_ensemble(&spec)?);
            }
        }
    }
    let c = collapse(&ensembles)?;
    let out = s.out()?;
    export::write_collapse_csv(&out.join("collapse.csv"), &c)?;
    export::write_collapse_curves_csv(&out.join("collapse_curves.csv"), &c)?;
    println!(
        "universal fit: tau={:.4} alpha={:.4} ({} curves, {} excluded)",
        c.universal.tau,
        c.universal.alpha,
        c.curves.len(),
        c.excluded.len()
    );
    let curves: Vec<_> = c.curves.iter().map(|k| (&k.label, k.t_pe)).collect();
    write_report(
        &out,
        "collapse",
        s,
        serde_json::json!({ "universal": c.universal, "curves": curves, "excluded": c.excluded }),
    )?;
    Ok(())
}

fn stopping_time(s: &Settings) -> Result<()> {
    let n = s.single_n(Some(4))?;
    let ratio = s.single_ratio()?;
    let t_max = s.t_max_for(total_length(n, ratio)?)?;
    let pes = s.pe.clone().context("--pe is required")?;
    let averaging = s.averaging_resolved.unwrap_or_default();
    let report = steepening_report(n, ratio, t_max, &pes, averaging)?;
    let out = s.out()?;
    export::write_steepening_csv(&out.join("steepening.csv"), &report)?;
    export::write_steepening_curves_csv(&out.join("steepening_curves.csv"), &report)?;
    for r in &report.rows {
        match (r.stopping.crossing, r.max_slope) {
            (Some(c), Some(slope)) => println!(
                "Pe={} D={:.6}: T_stop={} ({:.2}) max_slope={:.4}",
                r.pe, r.diffusivity, c.iteration, c.interpolated, slope
            ),
            _ => println!("Pe={} D={:.6}: no stopping time within T_max={t_max}", r.pe, r.diffusivity),
        }
    }
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| serde_json::json!({ "pe": r.pe, "d": r.diffusivity, "stopping": r.stopping, "max_slope": r.max_slope }))
        .collect();
    write_report(&out, "stopping-time", s, serde_json::json!({ "averaging": averaging, "rows": rows }))?;
    Ok(())
}

fn table1(s: &Settings) -> Result<()> {
    let n = s.single_n(Some(4))?;
    let rs = s
        .ratio
        .clone()
        .unwrap_or_else(|| ratios(&["5/4", "6/5", "7/5", "8/5", "9/5", "11/10", "13/10"]));
    let ref_ratio = s.ref_ratio.unwrap_or_else(|| ratios(&["5/4"])[0]);
    let ref_tmax = s.tmax.unwrap_or(50) as u64;
    let rows = table_one(n, ref_ratio, ref_tmax, &rs)?;
    let out = s.out()?;
    export::write_table_one_csv(&out.join("table1.csv"), &rows)?;
    println!("r\tr_n\txi\tL\tT_max");
    for r in &rows {
        println!("{}\t{}\t{}\t{}\t{}", r.ratio, r.r_n, r.xi, r.length, r.t_max);
    }
    write_report(&out, "table1", s, &rows)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(s) => simulate(&s.resolve()?),
        Command::ListPermutations { settings, all } => list_permutations(&settings.resolve()?, all),
        Command::Sweep(s) => sweep(&s.resolve()?),
        Command::Fit(s) => fit(&s.resolve()?),
        Command::Collapse(s) => collapse_verb(&s.resolve()?),
        Command::StoppingTime(s) => stopping_time(&s.resolve()?),
        Command::Table1(s) => table1(&s.resolve()?),
    }
}
