//! Integer-lattice construction of the segment and the cut-and-shuffle map.
//!
//! With `r = r_n / r_d` in lowest terms the first piece has length
//! `ξ = r_d^(N-1)` and piece `j` has length `r_n^(j-1) · r_d^(N-j)`, so every
//! cut lands on a lattice site and shuffling never loses or creates length.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::{self, Diffusivity};
use crate::error::{Error, Result};
use crate::metrics::{MetricSeries, SeriesBuilder};
use crate::permutation::{Permutation, MAX_PIECES, MIN_PIECES};

/// Adjacent piece length ratio `r = numerator / denominator > 1`, kept in
/// lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RatioRepr", into = "RatioRepr")]
pub struct RationalRatio {
    num: u64,
    den: u64,
}

#[derive(Serialize, Deserialize)]
struct RatioRepr {
    num: u64,
    den: u64,
}

impl TryFrom<RatioRepr> for RationalRatio {
    type Error = Error;
    fn try_from(r: RatioRepr) -> Result<Self> {
        RationalRatio::new(r.num, r.den)
    }
}

impl From<RationalRatio> for RatioRepr {
    fn from(r: RationalRatio) -> Self {
        RatioRepr { num: r.num, den: r.den }
    }
}

impl RationalRatio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::invalid(format!("ratio {num}/{den} must be positive")));
        }
        let g = gcd(num, den);
        let (num, den) = (num / g, den / g);
        if num <= den {
            return Err(Error::invalid(format!(
                "ratio {num}/{den} must exceed 1 (swap numerator and denominator)"
            )));
        }
        Ok(RationalRatio { num, den })
    }

    pub fn numerator(&self) -> u64 {
        self.num
    }

    pub fn denominator(&self) -> u64 {
        self.den
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for RationalRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for RationalRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .trim()
            .split_once('/')
            .ok_or_else(|| Error::invalid(format!("ratio {s:?} must be written as a/b")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::invalid(format!("bad ratio component {t:?}")))
        };
        RationalRatio::new(parse(a)?, parse(b)?)
    }
}

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn check_pieces(n: usize) -> Result<()> {
    if (MIN_PIECES..=MAX_PIECES).contains(&n) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "N = {n} outside {MIN_PIECES}..={MAX_PIECES}"
        )))
    }
}

/// Lengths `r_n^(j-1) · r_d^(N-j)` of the `N` initial pieces.
pub fn subsegment_lengths(n: usize, ratio: RationalRatio) -> Result<Vec<u64>> {
    check_pieces(n)?;
    let overflow = || {
        Error::Capacity(format!(
            "piece lengths for N = {n}, r = {ratio} exceed 64 bits"
        ))
    };
    (0..n)
        .map(|j| {
            let a = ratio.num.checked_pow(j as u32).ok_or_else(overflow)?;
            let b = ratio.den.checked_pow((n - 1 - j) as u32).ok_or_else(overflow)?;
            a.checked_mul(b).ok_or_else(overflow)
        })
        .collect()
}

/// Total lattice length `L`.
pub fn total_length(n: usize, ratio: RationalRatio) -> Result<u64> {
    subsegment_lengths(n, ratio)?
        .into_iter()
        .try_fold(0u64, |acc, l| acc.checked_add(l))
        .ok_or_else(|| Error::Capacity(format!("L for N = {n}, r = {ratio} exceeds 64 bits")))
}

/// Interior cut sites: prefix sums of the piece lengths, excluding `L`.
pub fn cut_positions(n: usize, ratio: RationalRatio) -> Result<Vec<usize>> {
    let lengths = lengths_usize(n, ratio)?;
    Ok(lengths[..n - 1]
        .iter()
        .scan(0usize, |acc, &l| {
            *acc += l;
            Some(*acc)
        })
        .collect())
}

fn lengths_usize(n: usize, ratio: RationalRatio) -> Result<Vec<usize>> {
    total_length(n, ratio).and_then(|l| {
        usize::try_from(l).map_err(|_| Error::Capacity(format!("L = {l} exceeds usize")))
    })?;
    Ok(subsegment_lengths(n, ratio)?
        .into_iter()
        .map(|l| l as usize)
        .collect())
}

/// Color values on the lattice sites `1..=L`, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorField(Vec<f64>);

impl ColorField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("color value {v} outside [0, 1]")));
        }
        Ok(ColorField(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ColorField(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Piecewise-constant start: piece `j` carries color `(j-1)/(N-1)`.
pub fn initial_field(n: usize, ratio: RationalRatio) -> Result<ColorField> {
    let lengths = lengths_usize(n, ratio)?;
    let total: usize = lengths.iter().sum();
    let mut values = Vec::new();
    values.try_reserve_exact(total).map_err(|_| {
        Error::Capacity(format!("cannot allocate a lattice of {total} sites"))
    })?;
    for (j, &len) in lengths.iter().enumerate() {
        let color = j as f64 / (n - 1) as f64;
        values.extend(std::iter::repeat_n(color, len));
    }
    Ok(ColorField(values))
}

fn check_cuts(len: usize, cuts: &[usize]) -> Result<()> {
    let mut prev = 0;
    for &c in cuts {
        if c <= prev || c >= len {
            return Err(Error::invalid(format!(
                "cut positions {cuts:?} must be strictly increasing inside (0, {len})"
            )));
        }
        prev = c;
    }
    Ok(())
}

/// Cuts `field` at `cuts` into pieces `P_1..P_N` and lays them out as
/// `P_Π(1), P_Π(2), …, P_Π(N)`.
pub fn shuffle_step(field: &ColorField, cuts: &[usize], permutation: &Permutation) -> Result<ColorField> {
    let mut out = Vec::with_capacity(field.len());
    shuffle_into(&field.0, cuts, permutation, &mut out)?;
    Ok(ColorField(out))
}

fn shuffle_into(src: &[f64], cuts: &[usize], permutation: &Permutation, out: &mut Vec<f64>) -> Result<()> {
    if cuts.len() + 1 != permutation.len() {
        return Err(Error::invalid(format!(
            "{} cuts do not match a permutation of {} pieces",
            cuts.len(),
            permutation.len()
        )));
    }
    check_cuts(src.len(), cuts)?;
    let bound = |k: usize| match k {
        0 => 0,
        k if k > cuts.len() => src.len(),
        k => cuts[k - 1],
    };
    out.clear();
    for &piece in permutation.as_slice() {
        out.extend_from_slice(&src[bound(piece - 1)..bound(piece)]);
    }
    Ok(())
}

/// One complete cutting-and-shuffling system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub n: usize,
    pub ratio: RationalRatio,
    pub permutation: Permutation,
    pub diffusivity: f64,
    pub t_max: usize,
}

impl Protocol {
    pub fn new(
        n: usize,
        ratio: RationalRatio,
        permutation: Permutation,
        diffusivity: f64,
        t_max: usize,
    ) -> Result<Self> {
        check_pieces(n)?;
        if permutation.len() != n {
            return Err(Error::invalid(format!(
                "permutation {permutation} does not have N = {n} entries"
            )));
        }
        Diffusivity::new(diffusivity)?;
        total_length(n, ratio)?;
        Ok(Protocol { n, ratio, permutation, diffusivity, t_max })
    }

    pub fn length(&self) -> usize {
        total_length(self.n, self.ratio).expect("validated at construction") as usize
    }
}

/// What `iterate` keeps per iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Recording {
    /// Every color field (memory `O(L · T_max)`).
    Fields,
    /// Only the scalar metrics, with the given norm exponent `p`.
    Metrics { p: f64 },
}

/// Output of `iterate`, indexed by iteration `T = 0..=T_max`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpaceTimeRecord {
    Fields(Vec<ColorField>),
    Metrics(MetricSeries),
}

impl SpaceTimeRecord {
    pub fn len(&self) -> usize {
        match self {
            SpaceTimeRecord::Fields(f) => f.len(),
            SpaceTimeRecord::Metrics(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Lazily advances a protocol one full iteration (shuffle, then diffuse)
/// at a time. The first item is the initial field.
pub struct Evolution<'a> {
    protocol: &'a Protocol,
    cuts: Vec<usize>,
    current: Option<Vec<f64>>,
    scratch: Vec<f64>,
    step: usize,
}

impl<'a> Evolution<'a> {
    pub fn new(protocol: &'a Protocol) -> Result<Self> {
        let field = initial_field(protocol.n, protocol.ratio)?;
        let cuts = cut_positions(protocol.n, protocol.ratio)?;
        if protocol.diffusivity > 0.0 && field.len() < diffusion::MIN_SITES {
            return Err(Error::invalid(format!(
                "diffusion needs at least {} sites, lattice has {}",
                diffusion::MIN_SITES,
                field.len()
            )));
        }
        Ok(Evolution {
            protocol,
            cuts,
            scratch: Vec::with_capacity(field.len()),
            current: Some(field.0),
            step: 0,
        })
    }

    /// Advances to the next iteration and returns it, or `None` past `T_max`.
    pub fn advance(&mut self) -> Option<&[f64]> {
        if self.step >= self.protocol.t_max {
            return None;
        }
        let cur = self.current.as_mut()?;
        shuffle_into(cur, &self.cuts, &self.protocol.permutation, &mut self.scratch)
            .expect("cuts derived from the protocol");
        let d = self.protocol.diffusivity;
        if d > 0.0 {
            diffusion::diffuse_into(&self.scratch, d, cur);
        } else {
            std::mem::swap(cur, &mut self.scratch);
        }
        self.step += 1;
        self.current.as_deref()
    }

    pub fn current(&self) -> &[f64] {
        self.current.as_deref().unwrap_or(&[])
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// Runs `protocol` for `T_max` iterations. Deterministic.
pub fn iterate(protocol: &Protocol, recording: Recording) -> Result<SpaceTimeRecord> {
    let mut evo = Evolution::new(protocol)?;
    match recording {
        Recording::Fields => {
            let mut frames = Vec::with_capacity(protocol.t_max + 1);
            frames.push(ColorField(evo.current().to_vec()));
            while let Some(f) = evo.advance() {
                frames.push(ColorField(f.to_vec()));
            }
            Ok(SpaceTimeRecord::Fields(frames))
        }
        Recording::Metrics { p } => {
            let mut builder = SeriesBuilder::new(evo.current(), p, protocol.diffusivity == 0.0)?;
            while let Some(f) = evo.advance() {
                builder.push(f);
            }
            Ok(SpaceTimeRecord::Metrics(builder.finish()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{cut_count, percent_unmixed};

    fn ratio(s: &str) -> RationalRatio {
        s.parse().unwrap()
    }

    fn blocks(values: &[f64]) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &v in values {
            match out.last_mut() {
                Some((c, n)) if *c == v => *n += 1,
                _ => out.push((v, 1)),
            }
        }
        out
    }

    #[test]
    fn ratio_parsing_and_reduction() {
        let r = ratio("10/8");
        assert_eq!((r.numerator(), r.denominator()), (5, 4));
        assert!("4/5".parse::<RationalRatio>().is_err());
        assert!("1/1".parse::<RationalRatio>().is_err());
        assert!("1.25".parse::<RationalRatio>().is_err());
        assert!("5/0".parse::<RationalRatio>().is_err());
    }

    #[test]
    fn lengths_match_table() {
        assert_eq!(subsegment_lengths(4, ratio("5/4")).unwrap(), [64, 80, 100, 125]);
        assert_eq!(subsegment_lengths(2, ratio("2/1")).unwrap(), [1, 2]);
        assert_eq!(subsegment_lengths(4, ratio("3/2")).unwrap(), [8, 12, 18, 27]);
        assert_eq!(total_length(4, ratio("5/4")).unwrap(), 369);
        assert_eq!(total_length(4, ratio("13/10")).unwrap(), 6187);
        assert_eq!(total_length(4, ratio("3/2")).unwrap(), 65);
    }

    #[test]
    fn overflow_is_an_error() {
        let err = subsegment_lengths(9, ratio("1000001/1000000")).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)), "{err}");
        assert!(matches!(total_length(9, ratio("1000001/1000000")), Err(Error::Capacity(_))));
        assert!(subsegment_lengths(10, ratio("3/2")).is_err());
        assert!(subsegment_lengths(1, ratio("3/2")).is_err());
    }

    #[test]
    fn cuts() {
        assert_eq!(cut_positions(4, ratio("3/2")).unwrap(), [8, 20, 38]);
        assert_eq!(cut_positions(2, ratio("2/1")).unwrap(), [1]);
        assert_eq!(cut_positions(4, ratio("5/4")).unwrap(), [64, 144, 244]);
    }

    #[test]
    fn initial_blocks() {
        let f = initial_field(4, ratio("5/4")).unwrap();
        assert_eq!(
            blocks(f.values()),
            [(0.0, 64), (1.0 / 3.0, 80), (2.0 / 3.0, 100), (1.0, 125)]
        );
        let f = initial_field(2, ratio("2/1")).unwrap();
        assert_eq!(f.values(), [0.0, 1.0, 1.0]);
        let f = initial_field(5, ratio("3/2")).unwrap();
        assert_eq!(
            blocks(f.values()),
            [(0.0, 16), (0.25, 24), (0.5, 36), (0.75, 54), (1.0, 81)]
        );
    }

    #[test]
    fn two_iterations_of_four_pieces() {
        let r = ratio("3/2");
        let perm: Permutation = "3142".parse().unwrap();
        let cuts = cut_positions(4, r).unwrap();
        let f0 = initial_field(4, r).unwrap();
        let f1 = shuffle_step(&f0, &cuts, &perm).unwrap();
        let (a, b) = (1.0 / 3.0, 2.0 / 3.0);
        assert_eq!(blocks(f1.values()), [(b, 18), (0.0, 8), (1.0, 27), (a, 12)]);
        assert_eq!(cut_count(&f1), 3);
        let f2 = shuffle_step(&f1, &cuts, &perm).unwrap();
        assert_eq!(
            blocks(f2.values()),
            [(0.0, 6), (1.0, 12), (b, 8), (1.0, 15), (a, 12), (b, 10), (0.0, 2)]
        );
        assert_eq!(cut_count(&f2), 6);
        assert!((percent_unmixed(&f2) - 100.0 * 15.0 / 65.0).abs() < 1e-12);
    }

    #[test]
    fn identity_shuffle_is_noop() {
        let r = ratio("5/4");
        let f = initial_field(4, r).unwrap();
        let out = shuffle_step(&f, &cut_positions(4, r).unwrap(), &Permutation::identity(4).unwrap()).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn bad_cuts_rejected() {
        let f = initial_field(4, ratio("3/2")).unwrap();
        let p: Permutation = "3142".parse().unwrap();
        assert!(shuffle_step(&f, &[8, 8, 38], &p).is_err());
        assert!(shuffle_step(&f, &[0, 20, 38], &p).is_err());
        assert!(shuffle_step(&f, &[8, 20, 65], &p).is_err());
        assert!(shuffle_step(&f, &[8, 20], &p).is_err());
    }

    #[test]
    fn protocol_validation() {
        let p: Permutation = "3142".parse().unwrap();
        assert!(Protocol::new(4, ratio("3/2"), p.clone(), 0.6, 10).is_err());
        assert!(Protocol::new(4, ratio("3/2"), p.clone(), -0.1, 10).is_err());
        assert!(Protocol::new(5, ratio("3/2"), p.clone(), 0.1, 10).is_err());
        assert!(Protocol::new(4, ratio("3/2"), p, 0.5, 10).is_ok());
    }

    #[test]
    fn zero_iterations_is_initial_field() {
        let pr = Protocol::new(4, ratio("3/2"), "3142".parse().unwrap(), 0.0, 0).unwrap();
        match iterate(&pr, Recording::Fields).unwrap() {
            SpaceTimeRecord::Fields(f) => {
                assert_eq!(f, vec![initial_field(4, ratio("3/2")).unwrap()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn evolution_matches_explicit_steps() {
        let pr = Protocol::new(4, ratio("3/2"), "3142".parse().unwrap(), 0.3, 5).unwrap();
        let cuts = cut_positions(4, pr.ratio).unwrap();
        let mut f = initial_field(4, pr.ratio).unwrap();
        let SpaceTimeRecord::Fields(frames) = iterate(&pr, Recording::Fields).unwrap() else {
            unreachable!()
        };
        assert_eq!(frames.len(), 6);
        for frame in &frames[1..] {
            f = shuffle_step(&f, &cuts, &pr.permutation).unwrap();
            f = crate::diffusion::diffusion_step(&f, 0.3).unwrap();
            assert_eq!(&f, frame);
        }
    }
}
