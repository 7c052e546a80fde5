//! Overlap observables with printable names.
//!
//! Replica functions `f` of an overlap array:
//!
//! * `one` is the constant 1.
//! * `mono:k12=1,k13=2` is `q12 * q13^2`. Indices are 1-based, `i < j`, and
//!   the total degree is at most 4.
//! * `ind:q12=a1` is `1{q12 = a1}`, with the value one of `0`, `a2`, `a1`, `1`.
//!
//! Functions `g` of a single overlap use the same words without indices:
//! `one`, `mono:k=2`, `ind:q=a2`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Overlap;

pub const MAX_DEGREE: u32 = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ArrayObservable {
    One,
    Monomial(BTreeMap<(usize, usize), u32>),
    Indicator { i: usize, j: usize, value: Overlap },
}

impl ArrayObservable {
    pub fn monomial(exponents: &[((usize, usize), u32)]) -> Result<Self> {
        let mut k = BTreeMap::new();
        for &((i, j), e) in exponents {
            let key = pair_key(i, j)?;
            if e > 0 {
                *k.entry(key).or_insert(0) += e;
            }
        }
        if k.values().sum::<u32>() > MAX_DEGREE {
            return Err(Error::config("observable", format!("degree exceeds {MAX_DEGREE}")));
        }
        Ok(ArrayObservable::Monomial(k))
    }

    pub fn indicator(i: usize, j: usize, value: Overlap) -> Result<Self> {
        let (i, j) = pair_key(i, j)?;
        Ok(ArrayObservable::Indicator { i, j, value })
    }

    /// Largest replica index the observable reads (0 for constants).
    pub fn arity(&self) -> usize {
        match self {
            ArrayObservable::One => 0,
            ArrayObservable::Monomial(k) => k.keys().map(|&(_, j)| j).max().unwrap_or(0),
            ArrayObservable::Indicator { j, .. } => *j,
        }
    }

    /// Evaluates on replicas whose pairwise overlaps are given by
    /// `q(i, j)` (1-based, `i < j`).
    pub fn eval(&self, a1: f64, q: impl Fn(usize, usize) -> Overlap) -> f64 {
        match self {
            ArrayObservable::One => 1.0,
            ArrayObservable::Monomial(k) => k.iter().map(|(&(i, j), &e)| q(i, j).value(a1).powi(e as i32)).product(),
            ArrayObservable::Indicator { i, j, value } => f64::from(u8::from(q(*i, *j) == *value)),
        }
    }

    /// The same observable with replica labels permuted by `perm` (1-based;
    /// `perm[l - 1]` is the new label of replica `l`).
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let map = |l: usize| {
            perm.get(l - 1)
                .copied()
                .ok_or_else(|| Error::invalid("short permutation"))
        };
        match self {
            ArrayObservable::One => Ok(ArrayObservable::One),
            ArrayObservable::Monomial(k) => {
                let mut out = Vec::new();
                for (&(i, j), &e) in k {
                    out.push(((map(i)?, map(j)?), e));
                }
                Self::monomial(&out)
            }
            ArrayObservable::Indicator { i, j, value } => Self::indicator(map(*i)?, map(*j)?, *value),
        }
    }
}

fn pair_key(i: usize, j: usize) -> Result<(usize, usize)> {
    if i == 0 || j == 0 || i == j {
        return Err(Error::config("observable", format!("bad replica pair ({i}, {j})")));
    }
    Ok((i.min(j), i.max(j)))
}

impl fmt::Display for ArrayObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArrayObservable::One => write!(f, "one"),
            ArrayObservable::Monomial(k) if k.is_empty() => write!(f, "one"),
            ArrayObservable::Monomial(k) => {
                let terms: Vec<String> = k.iter().map(|((i, j), e)| format!("k{i}{j}={e}")).collect();
                write!(f, "mono:{}", terms.join(","))
            }
            ArrayObservable::Indicator { i, j, value } => write!(f, "ind:q{i}{j}={}", value.label()),
        }
    }
}

/// Parses the two digits of `12` or `k12`; replica indices are single digits.
fn parse_pair(s: &str) -> Option<(usize, usize)> {
    let b = s.as_bytes();
    if b.len() != 2 || !b[0].is_ascii_digit() || !b[1].is_ascii_digit() {
        return None;
    }
    Some((usize::from(b[0] - b'0'), usize::from(b[1] - b'0')))
}

impl FromStr for ArrayObservable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("observable", format!("cannot parse `{s}`"));
        let s = s.trim();
        if s == "one" {
            return Ok(ArrayObservable::One);
        }
        if let Some(rest) = s.strip_prefix("mono:") {
            let mut terms = Vec::new();
            for t in rest.split(',') {
                let (lhs, rhs) = t.trim().split_once('=').ok_or_else(bad)?;
                let pair = lhs.strip_prefix('k').and_then(parse_pair).ok_or_else(bad)?;
                terms.push((pair, rhs.parse::<u32>().map_err(|_| bad())?));
            }
            return Self::monomial(&terms);
        }
        if let Some(rest) = s.strip_prefix("ind:") {
            let (lhs, rhs) = rest.split_once('=').ok_or_else(bad)?;
            let (i, j) = lhs.strip_prefix('q').and_then(parse_pair).ok_or_else(bad)?;
            let value = Overlap::from_label(rhs).ok_or_else(bad)?;
            return Self::indicator(i, j, value);
        }
        Err(bad())
    }
}

impl TryFrom<String> for ArrayObservable {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ArrayObservable> for String {
    fn from(o: ArrayObservable) -> String {
        o.to_string()
    }
}

/// A function of a single overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScalarObservable {
    One,
    Power(u32),
    Indicator(Overlap),
}

impl ScalarObservable {
    pub fn eval(&self, a1: f64, q: Overlap) -> f64 {
        match self {
            ScalarObservable::One => 1.0,
            ScalarObservable::Power(k) => q.value(a1).powi(*k as i32),
            ScalarObservable::Indicator(v) => f64::from(u8::from(q == *v)),
        }
    }
}

impl fmt::Display for ScalarObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarObservable::One => write!(f, "one"),
            ScalarObservable::Power(k) => write!(f, "mono:k={k}"),
            ScalarObservable::Indicator(v) => write!(f, "ind:q={}", v.label()),
        }
    }
}

impl FromStr for ScalarObservable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("observable", format!("cannot parse `{s}`"));
        let s = s.trim();
        if s == "one" {
            Ok(ScalarObservable::One)
        } else if let Some(k) = s.strip_prefix("mono:k=") {
            let k: u32 = k.parse().map_err(|_| bad())?;
            if k > MAX_DEGREE {
                return Err(bad());
            }
            Ok(ScalarObservable::Power(k))
        } else if let Some(v) = s.strip_prefix("ind:q=") {
            Overlap::from_label(v).map(ScalarObservable::Indicator).ok_or_else(bad)
        } else {
            Err(bad())
        }
    }
}

impl TryFrom<String> for ScalarObservable {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScalarObservable> for String {
    fn from(o: ScalarObservable) -> String {
        o.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in ["one", "mono:k12=1", "mono:k12=1,k13=2", "ind:q12=a1", "ind:q23=0"] {
            let o: ArrayObservable = name.parse().unwrap();
            assert_eq!(o.to_string(), name);
        }
        for name in ["one", "mono:k=1", "ind:q=a2", "ind:q=1"] {
            let o: ScalarObservable = name.parse().unwrap();
            assert_eq!(o.to_string(), name);
        }
        assert!("mono:k12=5".parse::<ArrayObservable>().is_err());
        assert!("ind:q11=a1".parse::<ArrayObservable>().is_err());
        assert!("ind:q12=a3".parse::<ArrayObservable>().is_err());
        assert!("mono:k=5".parse::<ScalarObservable>().is_err());
    }

    #[test]
    fn evaluation() {
        let f: ArrayObservable = "mono:k12=1,k13=2".parse().unwrap();
        assert_eq!(f.arity(), 3);
        let q = |i: usize, j: usize| match (i, j) {
            (1, 2) => Overlap::FirstBlock,
            (1, 3) => Overlap::SecondBlock,
            _ => Overlap::Disjoint,
        };
        assert!((f.eval(0.6, q) - 0.6 * 0.4 * 0.4).abs() < 1e-15);
        let ind: ArrayObservable = "ind:q13=a2".parse().unwrap();
        assert_eq!(ind.eval(0.6, q), 1.0);
        assert_eq!(ScalarObservable::Power(2).eval(0.6, Overlap::FirstBlock), 0.36);
        let swapped = f.relabeled(&[1, 3, 2]).unwrap();
        assert_eq!(swapped.to_string(), "mono:k12=2,k13=1");
    }
}
