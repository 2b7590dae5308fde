//! Shuffling permutations and the design rules that screen out
//! pathological ones (reducible, rotational, fixed endpoints, fixed
//! consecutive blocks).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_PIECES: usize = 2;
pub const MAX_PIECES: usize = 9;

/// A bijection of `{1..N}` in one-line notation: slot `k` of the shuffled
/// segment receives original piece `mapping[k - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        if !(MIN_PIECES..=MAX_PIECES).contains(&n) {
            return Err(Error::invalid(format!(
                "permutation length {n} outside {MIN_PIECES}..={MAX_PIECES}"
            )));
        }
        let mut seen = vec![false; n];
        for &v in &mapping {
            if v == 0 || v > n || std::mem::replace(&mut seen[v - 1], true) {
                return Err(Error::invalid(format!(
                    "{mapping:?} is not a bijection of 1..={n}"
                )));
            }
        }
        Ok(Permutation(mapping))
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new((1..=n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One-based image of one-based position `k`.
    pub fn image(&self, k: usize) -> usize {
        self.0[k - 1]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Permutation::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// Accepts `3,1,4,2`, `3 1 4 2`, `[3 1 4 2]` or the compact `3142`.
impl FromStr for Permutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches('[').trim_end_matches(']').trim();
        let mapping: Vec<usize> = if trimmed.contains([',', ' ']) {
            trimmed
                .split([',', ' '])
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::invalid(format!("bad permutation entry {t:?}")))
                })
                .collect::<Result<_>>()?
        } else {
            trimmed
                .chars()
                .map(|c| {
                    c.to_digit(10)
                        .map(|d| d as usize)
                        .ok_or_else(|| Error::invalid(format!("bad permutation digit {c:?}")))
                })
                .collect::<Result<_>>()?
        };
        Permutation::new(mapping)
    }
}

/// The design rule a permutation violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Rule {
    /// (i) some prefix `Π(1..k)` is `{1..k}`.
    Reducible,
    /// (ii) a cyclic shift, including the identity.
    Rotation,
    /// (iii) `Π(1) = 1` or `Π(N) = N`.
    FixedEndpoint,
    /// (iv) a run of 2..=N-2 adjacent positions left in place (N > 3).
    FixedConsecutiveBlock,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Reducible => "reducible",
            Rule::Rotation => "rotation",
            Rule::FixedEndpoint => "fixed endpoint",
            Rule::FixedConsecutiveBlock => "fixed consecutive block",
        };
        f.write_str(s)
    }
}

pub fn is_irreducible(p: &Permutation) -> bool {
    let n = p.len();
    // {Π(1..k)} = {1..k}  <=>  max(Π(1..k)) = k
    let mut max = 0;
    for k in 1..n {
        max = max.max(p.image(k));
        if max == k {
            return false;
        }
    }
    true
}

pub fn is_rotation(p: &Permutation) -> bool {
    let n = p.len();
    let shift = (p.image(1) + n - 1) % n;
    (1..=n).all(|k| p.image(k) == (k - 1 + shift) % n + 1)
}

pub fn has_fixed_endpoint(p: &Permutation) -> bool {
    let n = p.len();
    p.image(1) == 1 || p.image(n) == n
}

pub fn has_fixed_consecutive_block(p: &Permutation) -> bool {
    let n = p.len();
    if n <= 3 {
        return false;
    }
    // longest run of adjacent fixed points, capped to the rule's window
    let mut run = 0;
    for k in 1..=n {
        if p.image(k) == k {
            run += 1;
            if run >= 2 && run <= n - 2 {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Every rule `p` violates, in rule order. Empty means allowed.
pub fn violations(p: &Permutation) -> Vec<Rule> {
    let mut out = Vec::new();
    if !is_irreducible(p) {
        out.push(Rule::Reducible);
    }
    if is_rotation(p) {
        out.push(Rule::Rotation);
    }
    if has_fixed_endpoint(p) {
        out.push(Rule::FixedEndpoint);
    }
    if has_fixed_consecutive_block(p) {
        out.push(Rule::FixedConsecutiveBlock);
    }
    out
}

pub fn is_allowed(p: &Permutation) -> bool {
    is_irreducible(p) && !is_rotation(p) && !has_fixed_endpoint(p) && !has_fixed_consecutive_block(p)
}

/// All permutations of `1..=n` in lexicographic order.
pub fn all_permutations(n: usize) -> Result<Vec<Permutation>> {
    if !(MIN_PIECES..=MAX_PIECES).contains(&n) {
        return Err(Error::invalid(format!(
            "N = {n} outside {MIN_PIECES}..={MAX_PIECES}"
        )));
    }
    let mut current: Vec<usize> = (1..=n).collect();
    let mut out = vec![Permutation(current.clone())];
    while next_lexicographic(&mut current) {
        out.push(Permutation(current.clone()));
    }
    Ok(out)
}

/// Allowed shuffling permutations of `1..=n`, lexicographically ordered.
pub fn enumerate_allowed(n: usize) -> Result<Vec<Permutation>> {
    Ok(all_permutations(n)?.into_iter().filter(is_allowed).collect())
}

fn next_lexicographic(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perm(s: &str) -> Permutation {
        s.parse().unwrap()
    }

    #[test]
    fn parses_all_notations() {
        let want = Permutation::new(vec![3, 1, 4, 2]).unwrap();
        for s in ["3,1,4,2", "3 1 4 2", "[3 1 4 2]", "3142", " 3, 1, 4, 2 "] {
            assert_eq!(perm(s), want, "{s}");
        }
        assert_eq!(want.to_string(), "[3 1 4 2]");
        assert!("3,1,4,4".parse::<Permutation>().is_err());
        assert!("3,1,5,2".parse::<Permutation>().is_err());
        assert!("1".parse::<Permutation>().is_err());
        assert!("1234567891".parse::<Permutation>().is_err());
    }

    #[test]
    fn irreducibility() {
        assert!(!is_irreducible(&perm("2143")));
        assert!(is_irreducible(&perm("3142")));
        for n in 2..=6 {
            assert!(!is_irreducible(&Permutation::identity(n).unwrap()));
        }
    }

    #[test]
    fn rotations() {
        assert!(is_rotation(&perm("2341")));
        assert!(is_rotation(&perm("1234")));
        assert!(is_rotation(&perm("4123")));
        assert!(!is_rotation(&perm("2413")));
        assert!(is_rotation(&perm("21")));
    }

    #[test]
    fn fixed_endpoints() {
        assert!(has_fixed_endpoint(&perm("1342")));
        assert!(has_fixed_endpoint(&perm("2314")));
        assert!(!has_fixed_endpoint(&perm("4321")));
    }

    #[test]
    fn fixed_blocks() {
        assert!(has_fixed_consecutive_block(&perm("4231")));
        assert!(!has_fixed_consecutive_block(&perm("3421")));
        for p in all_permutations(3).unwrap() {
            assert!(!has_fixed_consecutive_block(&p));
        }
        // a single fixed point is not a block
        assert!(!has_fixed_consecutive_block(&perm("4213")));
        // N = 5: blocks of length 2 and 3 count, length 4 is out of the window
        assert!(has_fixed_consecutive_block(&perm("52341")));
        assert!(has_fixed_consecutive_block(&perm("52314")));
        assert!(!has_fixed_consecutive_block(&perm("32154")));
    }

    #[test]
    fn allowed_list_for_four_pieces() {
        let got: Vec<String> = enumerate_allowed(4)
            .unwrap()
            .iter()
            .map(|p| p.as_slice().iter().map(|d| d.to_string()).collect())
            .collect();
        assert_eq!(
            got,
            ["2413", "2431", "3142", "3241", "3421", "4132", "4213", "4312", "4321"]
        );
        assert!(is_allowed(&perm("52413")));
    }

    #[test]
    fn small_n() {
        assert!(enumerate_allowed(2).unwrap().is_empty());
        assert_eq!(enumerate_allowed(3).unwrap(), vec![perm("321")]);
    }

    #[test]
    fn named_rejections() {
        assert!(violations(&perm("2143")).contains(&Rule::Reducible));
        assert!(violations(&perm("2341")).contains(&Rule::Rotation));
        assert_eq!(violations(&perm("4231")), vec![Rule::FixedConsecutiveBlock]);
    }

    #[test]
    fn lexicographic_enumeration_is_complete() {
        for n in 2..=7 {
            let all = all_permutations(n).unwrap();
            let expected: usize = (1..=n).product();
            assert_eq!(all.len(), expected);
            assert!(all.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
