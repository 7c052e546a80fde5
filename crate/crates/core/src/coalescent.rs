//! Bolthausen-Sznitman coalescent and the marked point process `P_{x2} ⊓ C`.
//!
//! The coalescent is the Λ-coalescent with uniform Λ: with `b` blocks, any
//! fixed `k` of them merge at rate `λ_{b,k} = (k-2)!(b-k)!/(b-1)!`. The total
//! rate is `b - 1` and the size of the next merger has law
//! `P(K = k) = b / ((b - 1) k (k - 1))`, so the simulation draws an
//! exponential waiting time, then `K`, then a uniform `K`-subset.
//!
//! Pair marks use the single threshold `t* = ln(x2 / x1)`: `a1` if the pair
//! has merged by `t*`, 0 otherwise, 1 only on the diagonal.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::cascade::{law_bin, LAW_NAMES};
use crate::error::{Error, Result};
use crate::extremes::MarkedPointProcess;
use crate::model::{ModelParams, Overlap};
use crate::parallel::map_seeds;
use crate::rng::substream;
use crate::stats::Estimate;

pub const MAX_LEAVES: usize = 10_000;

/// Returned by [`CoalescentTrajectory::pair_time`] for pairs still apart at
/// the horizon.
pub const ABOVE_HORIZON: f64 = f64::INFINITY;

/// One merger: its time and the blocks merged, each named by its smallest leaf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub time: f64,
    pub blocks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalescentTrajectory {
    pub n: usize,
    pub events: Vec<MergeEvent>,
    pub horizon: f64,
}

/// `λ_{b,k}`, the rate at which a given set of `k` out of `b` blocks merges.
pub fn merge_rate(b: usize, k: usize) -> f64 {
    assert!(2 <= k && k <= b);
    // (k-2)!(b-k)!/(b-1)! = 1 / ((b-1) C(b-2, k-2))
    let mut c = 1.0;
    for i in 0..k - 2 {
        c *= (b - 2 - i) as f64 / (i + 1) as f64;
    }
    1.0 / ((b - 1) as f64 * c)
}

/// Samples the coalescent on `n` leaves up to `horizon` (which may be
/// infinite) or full coalescence.
pub fn sample_bs_coalescent<R: Rng + ?Sized>(n: usize, horizon: f64, rng: &mut R) -> Result<CoalescentTrajectory> {
    if !(2..=MAX_LEAVES).contains(&n) {
        return Err(Error::config("n", format!("must lie in [2, {MAX_LEAVES}]")));
    }
    if !(horizon > 0.0) {
        return Err(Error::config("horizon", "must be positive"));
    }
    let mut blocks: Vec<usize> = (0..n).collect();
    let mut events = Vec::new();
    let mut t = 0.0;
    while blocks.len() > 1 {
        let b = blocks.len();
        let wait: f64 = Exp1.sample(rng);
        t += wait / (b - 1) as f64;
        if t > horizon {
            break;
        }
        let u: f64 = rng.random();
        let k = ((1.0 / (1.0 - u * (1.0 - 1.0 / b as f64))).ceil() as usize).clamp(2, b);
        // partial Fisher-Yates: the last k entries become the merged set
        for i in 0..k {
            let j = rng.random_range(0..b - i);
            blocks.swap(j, b - 1 - i);
        }
        let mut merged = blocks.split_off(b - k);
        merged.sort_unstable();
        blocks.push(merged[0]);
        events.push(MergeEvent {
            time: t,
            blocks: merged,
        });
    }
    Ok(CoalescentTrajectory { n, events, horizon })
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl CoalescentTrajectory {
    pub fn is_complete(&self) -> bool {
        self.events.iter().map(|e| e.blocks.len() - 1).sum::<usize>() == self.n - 1
    }

    /// Replays the events with time `<= t`; returns the union-find forest.
    fn forest(&self, t: f64) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        for e in self.events.iter().take_while(|e| e.time <= t) {
            let root = find(&mut parent, e.blocks[0]);
            for &b in &e.blocks[1..] {
                let r = find(&mut parent, b);
                parent[r] = root;
            }
        }
        parent
    }

    /// Partition at time `t`, blocks sorted by smallest leaf.
    pub fn partition_at(&self, t: f64) -> Vec<Vec<usize>> {
        let mut parent = self.forest(t);
        let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 0..self.n {
            let r = find(&mut parent, i);
            by_root.entry(r).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_values().collect();
        out.sort_by_key(|b| b[0]);
        out
    }

    /// First time `i` and `j` share a block; 0 for `i == j`.
    pub fn pair_time(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.n || j >= self.n {
            return Err(Error::invalid(format!("leaf out of range for n = {}", self.n)));
        }
        Ok(self.pair_times()[i * self.n + j])
    }

    /// All pair times, row-major `n × n`.
    pub fn pair_times(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![ABOVE_HORIZON; n * n];
        let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for i in 0..n {
            out[i * n + i] = 0.0;
        }
        for e in &self.events {
            for (x, &a) in e.blocks.iter().enumerate() {
                for &b in &e.blocks[x + 1..] {
                    for &i in &members[a] {
                        for &j in &members[b] {
                            out[i * n + j] = e.time;
                            out[j * n + i] = e.time;
                        }
                    }
                }
            }
            let head = e.blocks[0];
            for &b in &e.blocks[1..] {
                let moved = std::mem::take(&mut members[b]);
                members[head].extend(moved);
            }
        }
        out
    }

    /// The trajectory with leaf `l` renamed `perm[l]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n];
        if perm.len() != self.n
            || perm
                .iter()
                .any(|&p| p >= self.n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::invalid("not a permutation of the leaves"));
        }
        // block names are smallest leaves, so rebuild them from the partitions
        let mut parent: Vec<usize> = (0..self.n).collect();
        let mut events = Vec::with_capacity(self.events.len());
        let mut min_leaf: Vec<usize> = perm.to_vec();
        for e in &self.events {
            let roots: Vec<usize> = e.blocks.iter().map(|&b| find(&mut parent, b)).collect();
            let mut blocks: Vec<usize> = roots.iter().map(|&r| min_leaf[r]).collect();
            blocks.sort_unstable();
            let new_min = blocks[0];
            for &r in &roots[1..] {
                parent[r] = roots[0];
            }
            min_leaf[roots[0]] = new_min;
            events.push(MergeEvent { time: e.time, blocks });
        }
        Ok(Self {
            n: self.n,
            events,
            horizon: self.horizon,
        })
    }
}

/// `t* = ln(x2 / x1)` with `x_l = β_l / β`.
pub fn mark_threshold(p: &ModelParams, beta: f64) -> Result<f64> {
    if !(beta > p.beta2()) {
        return Err(Error::config("beta", "thresholds need beta > beta2"));
    }
    Ok((p.beta2() / p.beta1()).ln())
}

fn mark_of(t: f64, t_star: f64) -> Overlap {
    if t == 0.0 {
        Overlap::Identical
    } else if t <= t_star {
        Overlap::FirstBlock
    } else {
        Overlap::Disjoint
    }
}

/// Marks `q_ij` (row-major `n × n`).
pub fn assign_marks(tr: &CoalescentTrajectory, t_star: f64) -> Result<Vec<Overlap>> {
    if !(t_star >= 0.0) {
        return Err(Error::config("t_star", "threshold must be >= 0"));
    }
    if tr.horizon < t_star && !tr.is_complete() {
        return Err(Error::invalid(format!(
            "horizon {} is below the threshold {t_star}",
            tr.horizon
        )));
    }
    Ok(tr.pair_times().into_iter().map(|t| mark_of(t, t_star)).collect())
}

/// Top `n_top` atoms of the Poisson process with density `x t^{-x-1}`
/// (`Γ_k^{-1/x}` for arrival times `Γ_k`) and the expected mass below the
/// last one, `x/(1-x) u^{1-x}`.
pub fn sample_pd_top<R: Rng + ?Sized>(x: f64, n_top: usize, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::config("x2", "must lie in (0, 1)"));
    }
    if n_top == 0 {
        return Err(Error::config("n_top", "must be positive"));
    }
    let mut gamma = 0.0;
    let atoms: Vec<f64> = (0..n_top)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            gamma += e;
            gamma.powf(-1.0 / x)
        })
        .collect();
    let u = atoms[n_top - 1];
    Ok((atoms, x / (1.0 - x) * u.powf(1.0 - x)))
}

/// Normalized weights of [`sample_pd_top`]; they sum to `1 - dust`.
pub fn normalized_pd_top<R: Rng + ?Sized>(x: f64, n_top: usize, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    let (atoms, rest) = sample_pd_top(x, n_top, rng)?;
    let total = atoms.iter().sum::<f64>() + rest;
    Ok((atoms.iter().map(|a| a / total).collect(), rest / total))
}

/// `P_{x2} ⊓ C`: the top `n_top` normalized atoms, with atom `k` carried by
/// leaf `k` of `tr` (which needs at least `n_top` leaves).
pub fn compose_ppp_coalescent<R: Rng + ?Sized>(
    x2: f64,
    n_top: usize,
    tr: &CoalescentTrajectory,
    t_star: f64,
    rng: &mut R,
) -> Result<MarkedPointProcess> {
    if tr.n < n_top {
        return Err(Error::invalid(format!("trajectory has {} leaves, need {n_top}", tr.n)));
    }
    let (w, _) = normalized_pd_top(x2, n_top, rng)?;
    let marks = assign_marks(tr, t_star)?;
    let n = tr.n;
    let pts = w.into_iter().enumerate().map(|(k, v)| (v, k as u64)).collect();
    Ok(MarkedPointProcess::new(pts, |a, b| marks[a as usize * n + b as usize]))
}

/// Two-replica law of `P_{x2} ⊓ C`, one pair per composition, and
/// `E Σ w²`. The replicas pick atoms by weight; the dust counts as
/// infinitely many atoms, so a dust pick is never identical to the other
/// replica. By consistency of the coalescent its restriction to the two
/// picked leaves is the coalescent on 2 leaves, which is what is sampled.
pub fn composition_overlap_law(
    p: &ModelParams,
    beta: f64,
    n_top: usize,
    n_draws: u64,
    master: u64,
) -> Result<([Estimate; 3], Estimate)> {
    let t_star = mark_threshold(p, beta)?;
    let x2 = p.beta2() / beta;
    let rows = map_seeds(master, n_draws, |i, _| -> Result<([f64; 3], f64)> {
        let mut rng: ChaCha8Rng = substream(master, "composition_law", i, "draw");
        let (w, _) = normalized_pd_top(x2, n_top, &mut rng)?;
        let pick = |rng: &mut ChaCha8Rng| {
            let mut u: f64 = rng.random();
            for (k, x) in w.iter().enumerate() {
                if u < *x {
                    return Some(k);
                }
                u -= x;
            }
            None
        };
        let (a, b) = (pick(&mut rng), pick(&mut rng));
        let q = if a.is_some() && a == b {
            Overlap::Identical
        } else {
            let tr = sample_bs_coalescent(2, f64::INFINITY, &mut rng)?;
            mark_of(tr.pair_time(0, 1)?, t_star)
        };
        let mut h = [0.0; 3];
        h[law_bin(q)] = 1.0;
        Ok((h, w.iter().map(|x| x * x).sum()))
    });
    let rows: Vec<([f64; 3], f64)> = rows.into_iter().collect::<Result<_>>()?;
    let law = std::array::from_fn(|b| Estimate::from_samples(LAW_NAMES[b], rows.iter().map(|r| r.0[b])));
    let squares = Estimate::from_samples("sum_sq_weights", rows.iter().map(|r| r.1));
    Ok((law, squares))
}
