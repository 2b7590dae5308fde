//! Scalar mixing diagnostics: cut count, percent unmixed, `L^p` mixing norm,
//! average color and mean subsegment length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ColorField, SpaceTimeRecord};

/// Adjacent pairs `(i, i+1)`, `i = 1..L-1`, whose colors differ at all.
/// The wraparound pair `(L, 1)` is not counted.
pub fn cut_count(field: &ColorField) -> usize {
    count_cuts(field.values())
}

fn count_cuts(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[0] != w[1]).count()
}

fn longest_run(v: &[f64]) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut prev = None;
    for &x in v {
        run = if prev == Some(x) { run + 1 } else { 1 };
        best = best.max(run);
        prev = Some(x);
    }
    best
}

/// Longest run of one color as a percentage of `L` (no wraparound).
pub fn percent_unmixed(field: &ColorField) -> f64 {
    let v = field.values();
    if v.is_empty() {
        return 0.0;
    }
    100.0 * longest_run(v) as f64 / v.len() as f64
}

const LIMBS: usize = 35;

/// Exact sum of non-negative finite doubles in a fixed-point big integer
/// (bit 0 weighs 2^-1074). The rounded result depends only on the multiset
/// of terms, never on their order.
#[derive(Clone)]
pub(crate) struct ExactSum {
    limbs: [u64; LIMBS],
}

impl ExactSum {
    pub(crate) fn new() -> Self {
        ExactSum { limbs: [0; LIMBS] }
    }

    pub(crate) fn add(&mut self, x: f64) {
        debug_assert!(x >= 0.0 && x.is_finite(), "{x}");
        let bits = x.to_bits();
        let exp = (bits >> 52) as usize & 0x7ff;
        let frac = bits & ((1 << 52) - 1);
        let (mant, pos) = if exp == 0 { (frac, 0) } else { (frac | 1 << 52, exp - 1) };
        if mant == 0 {
            return;
        }
        let (limb, off) = (pos / 64, pos % 64);
        let wide = (mant as u128) << off;
        let mut carry;
        (self.limbs[limb], carry) = self.limbs[limb].overflowing_add(wide as u64);
        let mut i = limb + 1;
        let mut pending = (wide >> 64) as u64 + carry as u64;
        while pending != 0 {
            (self.limbs[i], carry) = self.limbs[i].overflowing_add(pending);
            pending = carry as u64;
            i += 1;
        }
    }

    pub(crate) fn value(&self) -> f64 {
        let Some(top) = self.limbs.iter().rposition(|&l| l != 0) else {
            return 0.0;
        };
        if top == 0 {
            return scale_by_power_of_two(self.limbs[0] as f64, -1074);
        }
        let mut head = (self.limbs[top] as u128) << 64 | self.limbs[top - 1] as u128;
        if self.limbs[..top - 1].iter().any(|&l| l != 0) {
            head |= 1; // sticky
        }
        scale_by_power_of_two(head as f64, 64 * (top as i32 - 1) - 1074)
    }
}

fn scale_by_power_of_two(mut x: f64, mut k: i32) -> f64 {
    while k > 1000 {
        x *= 2f64.powi(1000);
        k -= 1000;
    }
    while k < -1000 {
        x *= 2f64.powi(-1000);
        k += 1000;
    }
    x * 2f64.powi(k)
}

/// Sum that depends only on the multiset of (non-negative) terms.
fn multiset_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = ExactSum::new();
    terms.into_iter().for_each(|t| acc.add(t));
    acc.value()
}

/// Mean color over the lattice.
pub fn average_color(field: &ColorField) -> f64 {
    multiset_sum(field.values().iter().copied()) / field.len() as f64
}

fn deviation_power(x: f64, cbar: f64, p: f64) -> f64 {
    let d = (x - cbar).abs();
    if p == 2.0 {
        d * d
    } else {
        d.powf(p)
    }
}

fn root(mean: f64, p: f64) -> f64 {
    if p == 2.0 {
        mean.sqrt()
    } else {
        mean.powf(1.0 / p)
    }
}

fn norm_of(v: &[f64], cbar: f64, p: f64) -> f64 {
    root(multiset_sum(v.iter().map(|&x| deviation_power(x, cbar, p))) / v.len() as f64, p)
}

/// `(Σ |c_i - c̄|^p / L)^(1/p)`. Invariant, bit for bit, under any
/// rearrangement of the sites.
pub fn mixing_norm(field: &ColorField, cbar: f64, p: f64) -> f64 {
    norm_of(field.values(), cbar, p)
}

/// Runs of equal color as `(color, length)`, left to right.
pub fn color_runs(field: &ColorField) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for &x in field.values() {
        match out.last_mut() {
            Some((c, n)) if *c == x => *n += 1,
            _ => out.push((x, 1)),
        }
    }
    out
}

/// The same norm evaluated piece by piece: `(Σ_j |c_j - c̄|^p l_j / Σ_j l_j)^(1/p)`.
pub fn mixing_norm_blocks(runs: &[(f64, usize)], cbar: f64, p: f64) -> f64 {
    let total: usize = runs.iter().map(|r| r.1).sum();
    let weighted: f64 = runs
        .iter()
        .map(|&(c, l)| deviation_power(c, cbar, p) * l as f64)
        .sum();
    root(weighted / total as f64, p)
}

/// `ℓ_m = 1 / (C + 1)` on the unit-normalized segment.
pub fn mean_subsegment_length(cut_count: usize) -> f64 {
    1.0 / (cut_count as f64 + 1.0)
}

/// Per-iteration metrics, indexed by `T = 0..=T_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub p: f64,
    /// `c̄`, frozen at `T = 0`.
    pub average_color: f64,
    pub cut_count: Vec<usize>,
    pub percent_unmixed: Vec<f64>,
    pub mixing_norm: Vec<f64>,
    pub mean_subsegment_length: Vec<f64>,
    /// Whether runs are true single-color pieces (no diffusion). Percent
    /// unmixed and mean subsegment length are only meaningful when set.
    pub exact_runs: bool,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.cut_count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cut_count.is_empty()
    }

    /// `M = ||c||_p(0)`.
    pub fn initial_norm(&self) -> f64 {
        self.mixing_norm[0]
    }
}

/// Incrementally builds a [`MetricSeries`] with `c̄` taken from the first field.
pub(crate) struct SeriesBuilder {
    series: MetricSeries,
}

impl SeriesBuilder {
    pub(crate) fn new(initial: &[f64], p: f64, exact_runs: bool) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::invalid(format!("norm exponent p = {p} must be >= 1")));
        }
        if initial.is_empty() {
            return Err(Error::invalid("empty color field"));
        }
        let cbar = multiset_sum(initial.iter().copied()) / initial.len() as f64;
        let mut b = SeriesBuilder {
            series: MetricSeries {
                p,
                average_color: cbar,
                cut_count: Vec::new(),
                percent_unmixed: Vec::new(),
                mixing_norm: Vec::new(),
                mean_subsegment_length: Vec::new(),
                exact_runs,
            },
        };
        b.push(initial);
        Ok(b)
    }

    pub(crate) fn push(&mut self, v: &[f64]) {
        let s = &mut self.series;
        let cuts = count_cuts(v);
        s.cut_count.push(cuts);
        s.percent_unmixed.push(100.0 * longest_run(v) as f64 / v.len() as f64);
        s.mixing_norm.push(norm_of(v, s.average_color, s.p));
        s.mean_subsegment_length.push(mean_subsegment_length(cuts));
    }

    pub(crate) fn finish(self) -> MetricSeries {
        self.series
    }
}

/// Evaluates every metric at every recorded iteration.
pub fn compute_series(record: &SpaceTimeRecord, p: f64) -> Result<MetricSeries> {
    match record {
        SpaceTimeRecord::Metrics(m) if m.p == p => Ok(m.clone()),
        SpaceTimeRecord::Metrics(m) => Err(Error::invalid(format!(
            "record holds metrics for p = {}, requested p = {p}",
            m.p
        ))),
        SpaceTimeRecord::Fields(frames) => {
            let first = frames
                .first()
                .ok_or_else(|| Error::invalid("empty space-time record"))?;
            // runs are exact when no new color value ever appears
            let mut palette = first.values().to_vec();
            palette.sort_unstable_by(f64::total_cmp);
            palette.dedup();
            let exact = frames.iter().all(|f| {
                f.values()
                    .iter()
                    .all(|x| palette.binary_search_by(|c| c.total_cmp(x)).is_ok())
            });
            let mut b = SeriesBuilder::new(first.values(), p, exact)?;
            for f in &frames[1..] {
                b.push(f.values());
            }
            Ok(b.finish())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{initial_field, iterate, Protocol, RationalRatio, Recording};
    use proptest::prelude::*;

    fn ratio(s: &str) -> RationalRatio {
        s.parse().unwrap()
    }

    #[test]
    fn cut_count_and_runs_on_uniform() {
        let f = ColorField::new(vec![0.4; 10]).unwrap();
        assert_eq!(cut_count(&f), 0);
        assert_eq!(percent_unmixed(&f), 100.0);
        assert!((average_color(&f) - 0.4).abs() < 1e-15);
        assert_eq!(mixing_norm(&f, 0.4, 2.0), 0.0);
        assert!(mixing_norm(&f, average_color(&f), 2.0) < 1e-15);
    }

    #[test]
    fn decreasing_interfaces_count() {
        let f = ColorField::new(vec![1.0, 1.0, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!(cut_count(&f), 2);
    }

    #[test]
    fn wraparound_pair_not_counted() {
        let f = ColorField::new(vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(cut_count(&f), 1);
        let f = ColorField::new(vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(percent_unmixed(&f), 50.0);
    }

    #[test]
    fn exact_sum_is_exact() {
        let mut acc = ExactSum::new();
        for x in [1.0, 1e-300, 1e300, 0.1, 5e-324, 3.0] {
            acc.add(x);
        }
        assert_eq!(acc.value(), 1e300);
        let mut acc = ExactSum::new();
        for _ in 0..10 {
            acc.add(0.1);
        }
        // the ten doubles 0.1 sum exactly to 1 + 5.55e-17, which rounds to 1
        assert_eq!(acc.value(), 1.0);
        let mut acc = ExactSum::new();
        acc.add(1.0);
        acc.add(2f64.powi(-60));
        acc.add(2f64.powi(-60));
        assert_eq!(acc.value(), 1.0 + 2f64.powi(-59));
        let mut acc = ExactSum::new();
        acc.add(5e-324);
        acc.add(5e-324);
        assert_eq!(acc.value(), 1e-323);
        assert_eq!(ExactSum::new().value(), 0.0);
        let mut acc = ExactSum::new();
        for _ in 0..1000 {
            acc.add(f64::MAX / 2048.0);
        }
        assert_eq!(acc.value(), f64::MAX / 2048.0 * 1000.0);
    }

    #[test]
    fn exact_sum_matches_integer_arithmetic() {
        // integers below 2^53 are exact doubles, so the oracle is u128 addition
        let xs: Vec<u64> = (0..5000u64).map(|i| (i * 2654435761) % (1 << 40)).collect();
        let mut acc = ExactSum::new();
        xs.iter().for_each(|&x| acc.add(x as f64));
        let exact: u128 = xs.iter().map(|&x| x as u128).sum();
        assert_eq!(acc.value(), exact as f64);
    }

    #[test]
    fn initial_field_metrics() {
        let f = initial_field(4, ratio("5/4")).unwrap();
        assert!((percent_unmixed(&f) - 100.0 * 125.0 / 369.0).abs() < 1e-12);
        // (0·64 + 80/3 + 200/3 + 125) / 369 = 655/1107
        let cbar = average_color(&f);
        assert!((cbar - 655.0 / 1107.0).abs() < 1e-15);
        let m = mixing_norm(&f, cbar, 2.0);
        assert!((m - 0.3650).abs() < 5e-4, "{m}");
        assert_eq!(cut_count(&f), 3);
    }

    #[test]
    fn two_piece_field() {
        for r in ["2/1", "3/2", "7/3"] {
            let rr = ratio(r);
            let f = initial_field(2, rr).unwrap();
            assert!((average_color(&f) - rr.value() / (1.0 + rr.value())).abs() < 1e-14);
        }
        let f = initial_field(2, ratio("2/1")).unwrap();
        let m = mixing_norm(&f, average_color(&f), 2.0);
        assert!((m - 2f64.sqrt() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mean_length() {
        assert_eq!(mean_subsegment_length(0), 1.0);
        assert_eq!(mean_subsegment_length(3), 0.25);
        assert_eq!(mean_subsegment_length(368), 1.0 / 369.0);
    }

    #[test]
    fn series_of_length_one() {
        let pr = Protocol::new(5, ratio("3/2"), "52413".parse().unwrap(), 0.0, 0).unwrap();
        let rec = iterate(&pr, Recording::Fields).unwrap();
        let s = compute_series(&rec, 2.0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.cut_count[0], 4);
        assert!(s.exact_runs);
    }

    #[test]
    fn field_and_metric_records_agree() {
        for d in [0.0, 0.5] {
            let pr = Protocol::new(4, ratio("3/2"), "3142".parse().unwrap(), d, 30).unwrap();
            let a = compute_series(&iterate(&pr, Recording::Fields).unwrap(), 2.0).unwrap();
            let b = compute_series(&iterate(&pr, Recording::Metrics { p: 2.0 }).unwrap(), 2.0).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.exact_runs, d == 0.0);
        }
    }

    #[test]
    fn metric_record_rejects_other_p() {
        let pr = Protocol::new(4, ratio("3/2"), "3142".parse().unwrap(), 0.0, 3).unwrap();
        let rec = iterate(&pr, Recording::Metrics { p: 2.0 }).unwrap();
        assert!(compute_series(&rec, 1.0).is_err());
    }

    #[test]
    fn diffusion_saturates_cut_count() {
        let pr = Protocol::new(5, ratio("3/2"), "52413".parse().unwrap(), 0.5, 50).unwrap();
        let s = compute_series(&iterate(&pr, Recording::Metrics { p: 2.0 }).unwrap(), 2.0).unwrap();
        let l = pr.length();
        assert_eq!(*s.cut_count.iter().max().unwrap(), l - 1);
        assert!(s.cut_count[..20].contains(&(l - 1)));
    }

    fn arb_values() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=1.0, 1..300)
    }

    fn arb_blocks() -> impl Strategy<Value = Vec<(f64, usize)>> {
        prop::collection::vec((0.0f64..=1.0, 1usize..40), 1..20)
    }

    proptest! {
        #[test]
        fn norm_is_permutation_invariant(v in arb_values(), seed in any::<u64>(), p in 1.0f64..4.0) {
            let f = ColorField::new(v.clone()).unwrap();
            let cbar = average_color(&f);
            let mut w = v;
            // deterministic Fisher-Yates from a splitmix stream
            let mut s = seed;
            for i in (1..w.len()).rev() {
                s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
                let mut z = s;
                z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
                z ^= z >> 31;
                w.swap(i, (z % (i as u64 + 1)) as usize);
            }
            let g = ColorField::new(w).unwrap();
            prop_assert_eq!(mixing_norm(&f, cbar, p).to_bits(), mixing_norm(&g, cbar, p).to_bits());
            prop_assert_eq!(average_color(&f).to_bits(), average_color(&g).to_bits());
        }

        #[test]
        fn variance_identity(v in arb_values()) {
            let f = ColorField::new(v.clone()).unwrap();
            let cbar = average_color(&f);
            let n = v.len() as f64;
            let var = v.iter().map(|x| (x - cbar).powi(2)).sum::<f64>() / n;
            let m = mixing_norm(&f, cbar, 2.0);
            prop_assert!((m * m - var).abs() <= 1e-12 * var.max(1e-300) + 1e-300);
        }

        #[test]
        fn lattice_and_block_forms_agree(blocks in arb_blocks(), p in prop::sample::select(vec![1.0, 2.0, 3.0])) {
            let values: Vec<f64> = blocks.iter().flat_map(|&(c, l)| std::iter::repeat_n(c, l)).collect();
            let f = ColorField::new(values).unwrap();
            let cbar = average_color(&f);
            let a = mixing_norm(&f, cbar, p);
            let b = mixing_norm_blocks(&color_runs(&f), cbar, p);
            prop_assert!((a - b).abs() <= 1e-14, "{} vs {}", a, b);
        }
    }
}
