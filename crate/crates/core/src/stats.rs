//! Streaming Monte Carlo estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean of i.i.d. samples with its standard error.
///
/// Accumulates with Welford's update and merges with Chan's pairwise
/// formula; an estimate with `n_samples == 0` is the merge identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
    /// Sum of squared deviations from the mean.
    #[serde(skip)]
    m2: f64,
}

impl Estimate {
    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            mean: 0.0,
            std_error: 0.0,
            n_samples: 0,
            m2: 0.0,
        }
    }

    pub fn from_samples<I: IntoIterator<Item = f64>>(name: impl Into<String>, xs: I) -> Self {
        let mut e = Self::empty(name);
        for x in xs {
            e.push(x);
        }
        e
    }

    /// An exact value (zero error) reported as a single sample.
    pub fn exact(name: impl Into<String>, value: f64) -> Self {
        let mut e = Self::empty(name);
        e.push(value);
        e
    }

    pub fn push(&mut self, x: f64) {
        self.n_samples += 1;
        let d = x - self.mean;
        self.mean += d / self.n_samples as f64;
        self.m2 += d * (x - self.mean);
        self.refresh();
    }

    fn refresh(&mut self) {
        self.std_error = if self.n_samples > 1 {
            let n = self.n_samples as f64;
            (self.m2.max(0.0) / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
    }

    pub fn variance(&self) -> f64 {
        if self.n_samples > 1 {
            self.m2.max(0.0) / (self.n_samples as f64 - 1.0)
        } else {
            0.0
        }
    }

    pub fn merge(&self, other: &Estimate) -> Result<Estimate> {
        mc_merge(self, other)
    }

    /// `|self - other|` in units of the combined standard error.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let se = self.std_error.hypot(other.std_error);
        let d = (self.mean - other.mean).abs();
        if se == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / se
        }
    }

    /// `|self - value|` in units of the standard error.
    pub fn z_from(&self, value: f64) -> f64 {
        let d = (self.mean - value).abs();
        if self.std_error == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / self.std_error
        }
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Pools two estimates of the same quantity.
pub fn mc_merge(a: &Estimate, b: &Estimate) -> Result<Estimate> {
    if a.n_samples == 0 {
        return Ok(b.clone());
    }
    if b.n_samples == 0 {
        return Ok(a.clone());
    }
    if a.name != b.name {
        return Err(Error::MismatchedEstimators(a.name.clone(), b.name.clone()));
    }
    let na = a.n_samples as f64;
    let nb = b.n_samples as f64;
    let n = na + nb;
    let d = b.mean - a.mean;
    let mut out = Estimate {
        name: a.name.clone(),
        mean: a.mean + d * nb / n,
        std_error: 0.0,
        n_samples: a.n_samples + b.n_samples,
        m2: a.m2 + b.m2 + d * d * na * nb / n,
    };
    out.refresh();
    Ok(out)
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let f = cdf(x);
        let lo = f - i as f64 / n;
        let hi = (i + 1) as f64 / n - f;
        acc.max(lo).max(hi)
    })
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
