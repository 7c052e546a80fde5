//! Configuration space, overlap geometry and the three Gaussian disorder
//! fields of the two-block model.
//!
//! A configuration is a pair `(i1, i2)` of block indices, each in
//! `[0, 2^{N/2})`. The unperturbed energy is `X1[i1] + X2[i2]` with
//! `Var X1 = N a1`, `Var X2 = N a2`; the perturbed energy adds an independent
//! field on the full index `i1 * 2^{N/2} + i2` with variance
//! `N a2 delta omega(N)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::rng::CounterStream;

pub const DEFAULT_N_CAP: u32 = 28;

pub(crate) const FIELD_BLOCK1: u64 = 1;
pub(crate) const FIELD_BLOCK2: u64 = 2;
pub(crate) const FIELD_PERTURBATION: u64 = 3;

fn p_field_id(p: u32, part: u64) -> u64 {
    100 + 3 * u64::from(p) + part
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u32,
    pub a1: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub cap: u32,
}

impl ModelParams {
    pub fn new(n: u32, a1: f64, delta: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self {
            n,
            a1,
            delta,
            alpha,
            beta,
            cap: DEFAULT_N_CAP,
        };
        p.validate()?;
        Ok(p)
    }

    /// The reference parameter set: a1 = 0.6, alpha = 4, delta = 1.
    pub fn standard(n: u32, beta: f64) -> Result<Self> {
        Self::new(n, 0.6, 1.0, 4.0, beta)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        self.beta = beta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_cap(mut self, cap: u32) -> Result<Self> {
        self.cap = cap;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n.is_multiple_of(2) || self.n < 4 {
            return Err(Error::config("N", format!("must be even and >= 4, got {}", self.n)));
        }
        if self.cap > 62 {
            return Err(Error::config("cap", "must be at most 62"));
        }
        if self.n > self.cap {
            return Err(Error::CapExceeded {
                n: self.n,
                cap: self.cap,
            });
        }
        if !(self.a1 > 0.5 && self.a1 < 1.0) {
            return Err(Error::config("a1", format!("must lie in (1/2, 1), got {}", self.a1)));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::config("delta", "must be finite and >= 0"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("alpha", "must be finite and > 0"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::config("beta", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn a2(&self) -> f64 {
        1.0 - self.a1
    }

    /// Critical inverse temperature of the first block, `sqrt(log 2 / a1)`.
    pub fn beta1(&self) -> f64 {
        (LN_2 / self.a1).sqrt()
    }

    pub fn beta2(&self) -> f64 {
        (LN_2 / self.a2()).sqrt()
    }

    pub fn half(&self) -> u32 {
        self.n / 2
    }

    /// Number of states per block, `2^{N/2}`.
    pub fn block_size(&self) -> usize {
        1usize << self.half()
    }

    pub fn num_configs(&self) -> usize {
        1usize << self.n
    }

    /// `delta * omega(N)`.
    pub fn delta_n(&self) -> f64 {
        self.delta * omega(f64::from(self.n), self.alpha)
    }

    /// Standard deviation of the perturbation field.
    pub fn perturbation_sd(&self) -> f64 {
        (f64::from(self.n) * self.a2() * self.delta_n()).sqrt()
    }
}

/// Perturbation schedule `omega(N) = alpha log N / N`.
pub fn omega(n: f64, alpha: f64) -> f64 {
    alpha * n.ln() / n
}

/// Smallest `alpha` for which `N omega(N)` grows fast enough: `2 / log 2`.
pub const ALPHA_THRESHOLD: f64 = 2.0 / LN_2;

/// True when `alpha` does not exceed `2 / log 2`.
pub fn omega_below_threshold(alpha: f64) -> bool {
    alpha <= ALPHA_THRESHOLD
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub a_n1: f64,
    pub a_n2_delta: f64,
    pub a_n: f64,
    pub delta_a_n2: f64,
}

/// REM centering for a block of `2^{N/2}` Gaussians of variance `N a`.
fn block_centering(n: f64, a: f64) -> f64 {
    let s = (a * LN_2).sqrt();
    n * s - a / (2.0 * s) * (2.0 * PI * a * n).ln()
}

pub fn centering(p: &ModelParams) -> Centering {
    let n = f64::from(p.n);
    let a_n1 = block_centering(n, p.a1);
    let a_n2_delta = block_centering(n, p.a2() * (1.0 + p.delta_n()));
    let a_n2_zero = block_centering(n, p.a2());
    Centering {
        a_n1,
        a_n2_delta,
        a_n: a_n1 + a_n2_delta,
        delta_a_n2: a_n2_delta - a_n2_zero,
    }
}

/// Centering for the perturbed or the unperturbed energies.
pub fn centering_for(p: &ModelParams, perturbed: bool) -> Centering {
    if perturbed {
        centering(p)
    } else {
        centering(&ModelParams { delta: 0.0, ..*p })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    pub i1: u64,
    pub i2: u64,
}

impl Configuration {
    pub fn new(i1: u64, i2: u64) -> Self {
        Self { i1, i2 }
    }

    pub fn from_index(index: u64, half: u32) -> Self {
        Self {
            i1: index >> half,
            i2: index & ((1u64 << half) - 1),
        }
    }

    pub fn index(&self, half: u32) -> u64 {
        (self.i1 << half) | self.i2
    }

    fn check(&self, p: &ModelParams) -> Result<()> {
        let m = p.block_size() as u64;
        if self.i1 >= m || self.i2 >= m {
            return Err(Error::invalid(format!(
                "configuration ({}, {}) is not in a system of size N = {}",
                self.i1, self.i2, p.n
            )));
        }
        Ok(())
    }
}

/// The four admissible overlaps, ordered by value (`a2 < a1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Overlap {
    /// Neither block agrees: `q = 0`.
    Disjoint,
    /// Only the second block agrees: `q = a2`.
    SecondBlock,
    /// Only the first block agrees: `q = a1`.
    FirstBlock,
    /// `q = 1`.
    Identical,
}

impl Overlap {
    pub const ALL: [Overlap; 4] = [
        Overlap::Disjoint,
        Overlap::SecondBlock,
        Overlap::FirstBlock,
        Overlap::Identical,
    ];

    pub fn between(s: Configuration, t: Configuration) -> Overlap {
        match (s.i1 == t.i1, s.i2 == t.i2) {
            (true, true) => Overlap::Identical,
            (true, false) => Overlap::FirstBlock,
            (false, true) => Overlap::SecondBlock,
            (false, false) => Overlap::Disjoint,
        }
    }

    pub fn value(self, a1: f64) -> f64 {
        match self {
            Overlap::Disjoint => 0.0,
            Overlap::SecondBlock => 1.0 - a1,
            Overlap::FirstBlock => a1,
            Overlap::Identical => 1.0,
        }
    }

    pub fn bin(self) -> usize {
        self as usize
    }

    /// Short name used in observable grammars: `0`, `a2`, `a1`, `1`.
    pub fn label(self) -> &'static str {
        match self {
            Overlap::Disjoint => "0",
            Overlap::SecondBlock => "a2",
            Overlap::FirstBlock => "a1",
            Overlap::Identical => "1",
        }
    }

    pub fn from_label(s: &str) -> Option<Overlap> {
        Overlap::ALL.into_iter().find(|o| o.label() == s)
    }
}

pub fn overlap(s: Configuration, t: Configuration, p: &ModelParams) -> Result<Overlap> {
    s.check(p)?;
    t.check(p)?;
    Ok(Overlap::between(s, t))
}

/// `d = sqrt(1 - q)`.
pub fn distance(q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("overlap {q} outside [0, 1]")));
    }
    Ok((1.0 - q).sqrt())
}

/// Seeded, read-only access to `X1`, `X2` and the perturbation field.
///
/// The two block fields are materialized (`2^{N/2}` values each); the
/// perturbation field is evaluated on demand from its counter stream.
#[derive(Clone, Debug)]
pub struct DisorderRealization {
    params: ModelParams,
    seed: u64,
    x1: Vec<f64>,
    x2: Vec<f64>,
    perturbation: CounterStream,
    perturbation_sd: f64,
}

impl DisorderRealization {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        let m = params.block_size();
        let n = f64::from(params.n);
        let s1 = CounterStream::new(seed, FIELD_BLOCK1);
        let s2 = CounterStream::new(seed, FIELD_BLOCK2);
        let sd1 = (n * params.a1).sqrt();
        let sd2 = (n * params.a2()).sqrt();
        let x1 = (0..m as u64).map(|i| sd1 * s1.gaussian(i)).collect();
        let x2 = (0..m as u64).map(|i| sd2 * s2.gaussian(i)).collect();
        Self {
            params,
            seed,
            x1,
            x2,
            perturbation: CounterStream::new(seed, FIELD_PERTURBATION),
            perturbation_sd: params.perturbation_sd(),
        }
    }

    /// All energies identically zero (uniform Gibbs measure at every beta).
    pub fn flat(params: ModelParams) -> Self {
        let m = params.block_size();
        Self {
            params,
            seed: 0,
            x1: vec![0.0; m],
            x2: vec![0.0; m],
            perturbation: CounterStream::new(0, FIELD_PERTURBATION),
            perturbation_sd: 0.0,
        }
    }

    /// Realization with explicitly given block fields and no perturbation.
    pub fn from_blocks(params: ModelParams, x1: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        if x1.len() != params.block_size() || x2.len() != params.block_size() {
            return Err(Error::invalid("block fields must have 2^{N/2} entries"));
        }
        Ok(Self {
            params,
            seed: 0,
            x1,
            x2,
            perturbation: CounterStream::new(0, FIELD_PERTURBATION),
            perturbation_sd: 0.0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn block1(&self) -> &[f64] {
        &self.x1
    }

    pub fn block2(&self) -> &[f64] {
        &self.x2
    }

    pub fn perturbation_sd(&self) -> f64 {
        self.perturbation_sd
    }

    pub(crate) fn perturbation_stream(&self) -> &CounterStream {
        &self.perturbation
    }

    /// Perturbation field at flat index `index`.
    #[inline]
    pub fn perturbation_at(&self, index: u64) -> f64 {
        if self.perturbation_sd == 0.0 {
            0.0
        } else {
            self.perturbation_sd * self.perturbation.gaussian(index)
        }
    }

    #[inline]
    pub fn energy_at(&self, index: u64, perturbed: bool) -> f64 {
        let half = self.params.half();
        let base = self.x1[(index >> half) as usize] + self.x2[(index & ((1 << half) - 1)) as usize];
        if perturbed {
            base + self.perturbation_at(index)
        } else {
            base
        }
    }

    pub fn energy(&self, s: Configuration, perturbed: bool) -> f64 {
        self.energy_at(s.index(self.params.half()), perturbed)
    }

    /// Energy of the p-th power field with covariance `N q^p`.
    pub fn p_field_energy(&self, p: u32, s: Configuration) -> Result<f64> {
        if p < 1 {
            return Err(Error::invalid("p must be >= 1"));
        }
        let (u, v, w) = p_field_scales(&self.params, p);
        let half = self.params.half();
        let y1 = CounterStream::new(self.seed, p_field_id(p, 0)).gaussian(s.i1);
        let y2 = CounterStream::new(self.seed, p_field_id(p, 1)).gaussian(s.i2);
        let y12 = if w == 0.0 {
            0.0
        } else {
            CounterStream::new(self.seed, p_field_id(p, 2)).gaussian(s.index(half))
        };
        Ok(u * y1 + v * y2 + w * y12)
    }

    /// The whole p-field, indexed by flat configuration index.
    pub fn p_field(&self, p: u32) -> Result<Vec<f64>> {
        if p < 1 {
            return Err(Error::invalid("p must be >= 1"));
        }
        let (u, v, w) = p_field_scales(&self.params, p);
        let half = self.params.half();
        let m = self.params.block_size() as u64;
        let s1 = CounterStream::new(self.seed, p_field_id(p, 0));
        let s2 = CounterStream::new(self.seed, p_field_id(p, 1));
        let s12 = CounterStream::new(self.seed, p_field_id(p, 2));
        let y2: Vec<f64> = (0..m).map(|j| v * s2.gaussian(j)).collect();
        let mut out = Vec::with_capacity(self.params.num_configs());
        for i in 0..m {
            let a = u * s1.gaussian(i);
            for (j, b) in y2.iter().enumerate() {
                let mut e = a + b;
                if w != 0.0 {
                    e += w * s12.gaussian((i << half) | j as u64);
                }
                out.push(e);
            }
        }
        Ok(out)
    }
}

/// `(u, v, w)` with `u^2 = N a1^p`, `v^2 = N a2^p`, `w^2 = N (1 - a1^p - a2^p)`.
pub fn p_field_scales(p: &ModelParams, power: u32) -> (f64, f64, f64) {
    let n = f64::from(p.n);
    let e = power as i32;
    let c1 = p.a1.powi(e);
    let c2 = p.a2().powi(e);
    let rest = (1.0 - c1 - c2).max(0.0);
    let w = if power == 1 { 0.0 } else { (n * rest).sqrt() };
    ((n * c1).sqrt(), (n * c2).sqrt(), w)
}
