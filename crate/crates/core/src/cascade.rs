//! Two-level Derrida-Ruelle cascade.
//!
//! [`PppCascade`] is the literal object: first-level points `ξ1` from a
//! Poisson process of density `β1 e^{-β1 t}` above `L1`, and for each of
//! them independent second-level points `ξ2` of density `β2 e^{-β2 t}` above
//! `L2`. Its atoms are `ξ1 + ξ2`.
//!
//! For `β1 < β2` that truncation cannot be made accurate: parents far below
//! `L1` keep producing top atoms through extreme child sums (the expected
//! number of parents below `L1` owning an atom above 0 is
//! `β1 / (β2 - β1) e^{(β2 - β1) L1}`). The normalized cascade is therefore
//! sampled as [`CascadeRealization`], through the equivalent description of
//! the image of the atoms under `s ↦ e^{βs}` after normalization: parent
//! weights are Poisson-Dirichlet `PD(x1, 0)`, and the weights inside a parent,
//! renormalized, are independent `PD(x2, -x1)`. Both are drawn by
//! stick-breaking, and the unbroken remainders are kept as dust of exactly
//! known mass. Dust is infinitely divisible: two replicas that land in the
//! same dust are never the same atom.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Overlap};
use crate::parallel::map_seeds;
use crate::rng::substream;
use crate::stats::Estimate;

/// Refuses to sample Poisson processes with more expected points than this.
pub const MAX_EXPECTED_POINTS: f64 = 1e8;
const MAX_STICKS: usize = 1 << 22;

/// Points of a Poisson process with density `rate e^{-rate t}` on `[l, ∞)`,
/// sorted in decreasing order.
pub fn sample_ppp_exp<R: Rng + ?Sized>(rate: f64, l: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate.is_finite()) || !l.is_finite() {
        return Err(Error::invalid("need rate > 0 and a finite threshold"));
    }
    let mean = (-rate * l).exp();
    if mean > MAX_EXPECTED_POINTS {
        return Err(Error::invalid(format!(
            "threshold {l} gives {mean:.3e} expected points"
        )));
    }
    let count = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(rng) as usize
    } else {
        0
    };
    let exp = Exp::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
    let mut pts: Vec<f64> = (0..count).map(|_| l + exp.sample(rng)).collect();
    pts.sort_by(|a, b| b.total_cmp(a));
    Ok(pts)
}

/// `(parent, child)` label of a cascade atom, assigned in sampling order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomId {
    pub parent: usize,
    pub child: usize,
}

/// Overlap of two atoms: 1 for the same atom, `a1` for siblings, 0 otherwise.
pub fn cascade_mark(i: AtomId, j: AtomId) -> Overlap {
    if i == j {
        Overlap::Identical
    } else if i.parent == j.parent {
        Overlap::FirstBlock
    } else {
        Overlap::Disjoint
    }
}

fn check_beta(p: &ModelParams, beta: f64) -> Result<()> {
    if !(beta > p.beta2()) || !beta.is_finite() {
        return Err(Error::config(
            "beta",
            format!("normalized cascade needs beta > beta2 = {:.6}, got {beta}", p.beta2()),
        ));
    }
    Ok(())
}

/// The cascade truncated at `(L1, L2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PppCascade {
    pub l1: f64,
    pub l2: f64,
    pub xi1: Vec<f64>,
    pub xi2: Vec<Vec<f64>>,
}

impl PppCascade {
    /// Parent `k` draws its children from its own substream, so raising
    /// `l2` or lowering `l1` keeps existing points.
    pub fn sample(p: &ModelParams, l1: f64, l2: f64, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, "cascade", 0, "first-level");
        let xi1 = sample_ppp_exp(p.beta1(), l1, &mut rng)?;
        let xi2 = (0..xi1.len())
            .map(|k| {
                sample_ppp_exp(
                    p.beta2(),
                    l2,
                    &mut substream(seed, "cascade", k as u64 + 1, "second-level"),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { l1, l2, xi1, xi2 })
    }

    /// Atoms `ξ1 + ξ2` with their labels.
    pub fn atoms(&self) -> Vec<(AtomId, f64)> {
        let mut out = Vec::new();
        for (k, (a, children)) in self.xi1.iter().zip(&self.xi2).enumerate() {
            for (j, b) in children.iter().enumerate() {
                out.push((AtomId { parent: k, child: j }, a + b));
            }
        }
        out
    }

    /// Normalized weights `e^{βξ} / Σ e^{βξ}` (max-shifted).
    pub fn normalized(&self, p: &ModelParams, beta: f64) -> Result<Vec<(AtomId, f64)>> {
        check_beta(p, beta)?;
        let atoms = self.atoms();
        let top = atoms.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = atoms.iter().map(|a| (beta * (a.1 - top)).exp()).collect();
        let total: f64 = w.iter().sum();
        Ok(atoms.iter().zip(w).map(|(a, w)| (a.0, w / total)).collect())
    }

    /// Expected mass per parent of the children below `L2`, in units of
    /// `e^{β ξ1}`: `β2 / (β - β2) e^{(β - β2) L2}`.
    pub fn child_tail_mass(&self, p: &ModelParams, beta: f64) -> f64 {
        let b2 = p.beta2();
        b2 / (beta - b2) * ((beta - b2) * self.l2).exp()
    }
}

/// One parent of the normalized cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parent {
    /// Total weight of the parent.
    pub weight: f64,
    /// Child weights relative to the parent (they and `dust` sum to 1).
    pub children: Vec<f64>,
    pub dust: f64,
}

/// Normalized cascade: explicit parents and children plus dust.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeRealization {
    pub beta: f64,
    pub x1: f64,
    pub x2: f64,
    pub parents: Vec<Parent>,
    /// Weight of the parents that were not broken off.
    pub parent_dust: f64,
    /// Bound on the expected two-replica mass carried by dust, i.e. on the
    /// probability that two replicas would have resolved to the same dust atom.
    pub neglected_mass_bound: f64,
}

/// Stick-breaking for `PD(alpha, theta)` until the expected sum of squared
/// remaining pieces, times `scale`, is at most `tol`. Returns the pieces
/// and the remainder.
fn stick_breaking<R: Rng + ?Sized>(alpha: f64, theta: f64, scale: f64, tol: f64, rng: &mut R) -> (Vec<f64>, f64, f64) {
    let mut rest = 1.0;
    let mut pieces = Vec::new();
    loop {
        let k = pieces.len();
        let tail = scale * rest * rest * (1.0 - alpha) / (1.0 + theta + k as f64 * alpha);
        if tail <= tol || k >= MAX_STICKS || rest == 0.0 {
            return (pieces, rest, tail);
        }
        let b = Beta::new(1.0 - alpha, theta + (k + 1) as f64 * alpha).expect("valid stick parameters");
        let v: f64 = b.sample(rng);
        pieces.push(rest * v);
        rest *= 1.0 - v;
    }
}

/// Samples the normalized cascade at inverse temperature `beta` with dust
/// bound `eps`. Deterministic in `seed`; parent `k` uses its own substream.
pub fn sample_cascade(p: &ModelParams, beta: f64, eps: f64, seed: u64) -> Result<CascadeRealization> {
    check_beta(p, beta)?;
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::config("eps", "must lie in (0, 1e-2]"));
    }
    let x1 = p.beta1() / beta;
    let x2 = p.beta2() / beta;
    let mut rng = substream(seed, "cascade", 0, "parents");
    let (w, parent_dust, parent_tail) = stick_breaking(x1, 0.0, 1.0, eps / 2.0, &mut rng);
    let mut bound = parent_tail;
    let parents = w
        .iter()
        .enumerate()
        .map(|(k, &weight)| {
            let mut r = substream(seed, "cascade", k as u64 + 1, "children");
            // Σ_k W_k^2 (tail_k) <= eps/2 because Σ_k W_k <= 1.
            let (children, dust, tail) = stick_breaking(x2, -x1, weight, eps / 2.0, &mut r);
            bound += weight * tail;
            Parent { weight, children, dust }
        })
        .collect();
    Ok(CascadeRealization {
        beta,
        x1,
        x2,
        parents,
        parent_dust,
        neglected_mass_bound: bound,
    })
}

/// Where a replica lands in a [`CascadeRealization`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pick {
    Atom(AtomId),
    ChildDust(usize),
    ParentDust,
}

/// Overlap of two distinct replicas.
pub fn pick_overlap(a: Pick, b: Pick) -> Overlap {
    match (a, b) {
        (Pick::Atom(i), Pick::Atom(j)) => cascade_mark(i, j),
        (Pick::ParentDust, _) | (_, Pick::ParentDust) => Overlap::Disjoint,
        (Pick::Atom(i), Pick::ChildDust(k)) | (Pick::ChildDust(k), Pick::Atom(i)) => {
            if i.parent == k {
                Overlap::FirstBlock
            } else {
                Overlap::Disjoint
            }
        }
        (Pick::ChildDust(k), Pick::ChildDust(l)) => {
            if k == l {
                Overlap::FirstBlock
            } else {
                Overlap::Disjoint
            }
        }
    }
}

fn pick_index(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u)
}

/// Cumulative tables for repeated replica draws.
#[derive(Clone, Debug)]
pub struct CascadeSampler {
    parent_cum: Vec<f64>,
    child_cum: Vec<Vec<f64>>,
}

impl CascadeSampler {
    pub fn new(c: &CascadeRealization) -> Self {
        let cum = |xs: &mut dyn Iterator<Item = f64>| {
            let mut acc = 0.0;
            xs.map(|x| {
                acc += x;
                acc
            })
            .collect::<Vec<f64>>()
        };
        Self {
            parent_cum: cum(&mut c.parents.iter().map(|p| p.weight)),
            child_cum: c.parents.iter().map(|p| cum(&mut p.children.iter().copied())).collect(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Pick {
        let k = pick_index(&self.parent_cum, rng.random::<f64>());
        if k == self.parent_cum.len() {
            return Pick::ParentDust;
        }
        let j = pick_index(&self.child_cum[k], rng.random::<f64>());
        if j == self.child_cum[k].len() {
            Pick::ChildDust(k)
        } else {
            Pick::Atom(AtomId { parent: k, child: j })
        }
    }
}

impl CascadeRealization {
    /// Explicit atoms with their normalized weights `η̄`.
    pub fn weights(&self) -> Vec<(AtomId, f64)> {
        let mut out = Vec::new();
        for (k, p) in self.parents.iter().enumerate() {
            for (j, w) in p.children.iter().enumerate() {
                out.push((AtomId { parent: k, child: j }, p.weight * w));
            }
        }
        out
    }

    /// Total weight, explicit atoms plus dust.
    pub fn total_weight(&self) -> f64 {
        self.parent_dust + self.parents.iter().map(|p| p.weight).sum::<f64>()
    }

    /// `Σ η̄²` over the atoms (dust pieces are infinitesimal).
    pub fn sum_of_squares(&self) -> f64 {
        self.parents
            .iter()
            .map(|p| p.weight * p.weight * p.children.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Two-replica law `(P0, Pa1, P1)`.
    pub fn overlap_law(&self) -> [f64; 3] {
        let p1 = self.sum_of_squares();
        let same_parent: f64 = self.parents.iter().map(|p| p.weight * p.weight).sum();
        [1.0 - same_parent, same_parent - p1, p1]
    }

    /// Log-weights shifted so that `e^{β(ξ1 + ξ2)}` are the normalized
    /// weights; `ξ1` per parent, `ξ2` per child.
    pub fn xi(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let xi1 = self.parents.iter().map(|p| p.weight.ln() / self.beta).collect();
        let xi2 = self
            .parents
            .iter()
            .map(|p| p.children.iter().map(|w| w.ln() / self.beta).collect())
            .collect();
        (xi1, xi2)
    }
}

pub const LAW_NAMES: [&str; 3] = ["P(q=0)", "P(q=a1)", "P(q=1)"];

/// One-hot bin of a two-replica mark in `(0, a1, 1)` order.
pub fn law_bin(q: Overlap) -> usize {
    match q {
        Overlap::Disjoint | Overlap::SecondBlock => 0,
        Overlap::FirstBlock => 1,
        Overlap::Identical => 2,
    }
}

/// Law of the overlap of two replicas drawn from `n_draws` independent
/// cascades, one pair per cascade, plus the estimate of `E Σ η̄²`.
pub fn cascade_overlap_law(
    p: &ModelParams,
    beta: f64,
    eps: f64,
    n_draws: u64,
    master: u64,
) -> Result<([Estimate; 3], Estimate)> {
    check_beta(p, beta)?;
    let rows = map_seeds(master, n_draws, |i, _| -> Result<([f64; 3], f64)> {
        let c = sample_cascade(
            p,
            beta,
            eps,
            crate::rng::substream_seed(master, "cascade_law", i, "cascade"),
        )?;
        let s = CascadeSampler::new(&c);
        let mut rng: ChaCha8Rng = substream(master, "cascade_law", i, "replicas");
        let (a, b) = (s.draw(&mut rng), s.draw(&mut rng));
        let q = if a == b && matches!(a, Pick::Atom(_)) {
            Overlap::Identical
        } else {
            pick_overlap(a, b)
        };
        let mut h = [0.0; 3];
        h[law_bin(q)] = 1.0;
        Ok((h, c.sum_of_squares()))
    });
    let rows: Vec<([f64; 3], f64)> = rows.into_iter().collect::<Result<_>>()?;
    let law = std::array::from_fn(|b| Estimate::from_samples(LAW_NAMES[b], rows.iter().map(|r| r.0[b])));
    let squares = Estimate::from_samples("sum_sq_weights", rows.iter().map(|r| r.1));
    Ok((law, squares))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_statistic;
    use rand::SeedableRng;

    fn params() -> ModelParams {
        ModelParams::standard(16, 2.0).unwrap()
    }

    #[test]
    fn ppp_counts_and_max_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut count = Estimate::empty("count");
        for _ in 0..n {
            count.push(sample_ppp_exp(1.0, 0.0, &mut rng).unwrap().len() as f64);
        }
        assert!(count.z_from(1.0) < 3.0, "{count:?}");
        let maxima: Vec<f64> = (0..n)
            .map(|_| sample_ppp_exp(1.3, -5.0, &mut rng).unwrap()[0])
            .collect();
        let ks = ks_statistic(&maxima, |x| (-(-1.3 * x).exp()).exp());
        assert!(ks < 0.02, "{ks}");
        let far = sample_ppp_exp(1.0, 20.0, &mut rng).unwrap();
        assert!(far.is_empty());
        assert!(sample_ppp_exp(0.0, 0.0, &mut rng).is_err());
        let pts = sample_ppp_exp(1.0, -3.0, &mut rng).unwrap();
        assert!(pts.windows(2).all(|w| w[0] >= w[1]) && pts.iter().all(|&x| x >= -3.0));
    }

    #[test]
    fn ppp_cascade_counts_and_marks() {
        let p = params();
        let (l1, l2) = (-2.0, -1.0);
        let mut parents = Estimate::empty("parents");
        let mut children = Estimate::empty("children");
        for seed in 0..10_000 {
            let c = PppCascade::sample(&p, l1, l2, seed).unwrap();
            parents.push(c.xi1.len() as f64);
            for x in &c.xi2 {
                children.push(x.len() as f64);
            }
            assert!(c.xi1.iter().all(|&x| x >= l1));
            assert!(c.xi2.iter().flatten().all(|&x| x >= l2));
        }
        assert!(parents.z_from((-p.beta1() * l1).exp()) < 3.0);
        assert!(children.z_from((-p.beta2() * l2).exp()) < 3.0);

        let c = PppCascade::sample(&p, -1.0, -1.0, 3).unwrap();
        let atoms = c.atoms();
        for &(i, _) in &atoms {
            for &(j, _) in &atoms {
                for &(k, _) in &atoms {
                    let q = |a, b| cascade_mark(a, b).value(p.a1);
                    assert!(q(i, j) >= q(i, k).min(q(k, j)));
                }
            }
        }
        let a = AtomId { parent: 0, child: 0 };
        assert_eq!(cascade_mark(a, a), Overlap::Identical);
        assert_eq!(cascade_mark(a, AtomId { parent: 0, child: 1 }), Overlap::FirstBlock);
        assert_eq!(cascade_mark(a, AtomId { parent: 1, child: 0 }), Overlap::Disjoint);
    }

    #[test]
    fn ppp_cascade_normalization() {
        let p = params();
        let c = PppCascade::sample(&p, -2.0, -2.0, 5).unwrap();
        let w = c.normalized(&p, 2.0).unwrap();
        assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted = PppCascade {
            xi1: c.xi1.iter().map(|x| x + 3.7).collect(),
            ..c.clone()
        };
        for (a, b) in w.iter().zip(shifted.normalized(&p, 2.0).unwrap()) {
            assert!((a.1 - b.1).abs() <= 1e-12 * a.1.max(1e-300));
        }
        assert!(c.normalized(&p, 1.0).is_err());
        let single = PppCascade {
            l1: 0.0,
            l2: 0.0,
            xi1: vec![0.5],
            xi2: vec![vec![0.1]],
        };
        assert_eq!(single.normalized(&p, 2.0).unwrap()[0].1, 1.0);
        assert!(c.child_tail_mass(&p, 2.0) > 0.0);
    }

    #[test]
    fn realization_contract() {
        let p = params();
        let c = sample_cascade(&p, 2.0, 1e-6, 11).unwrap();
        assert!(!c.parents.is_empty());
        assert!(c.neglected_mass_bound <= 1e-6);
        assert!((c.total_weight() - 1.0).abs() < 1e-12);
        for par in &c.parents {
            let s: f64 = par.children.iter().sum::<f64>() + par.dust;
            assert!((s - 1.0).abs() < 1e-12);
        }
        let w: f64 = c.weights().iter().map(|x| x.1).sum();
        assert!(w <= 1.0 + 1e-12);
        assert!(sample_cascade(&p, 1.2, 1e-6, 1).is_err());
        assert!(sample_cascade(&p, 2.0, 0.5, 1).is_err());
        let (xi1, xi2) = c.xi();
        let (a, b) = (xi1[0] + xi2[0][0], c.weights()[0].1);
        assert!(((2.0 * a).exp() - b).abs() < 1e-12);
    }

    #[test]
    fn refinement_keeps_the_top_atoms() {
        let p = params();
        let coarse = sample_cascade(&p, 2.0, 1e-4, 21).unwrap();
        let fine = sample_cascade(&p, 2.0, 1e-6, 21).unwrap();
        let mut cw: Vec<f64> = coarse.weights().iter().map(|x| x.1).collect();
        let mut fw: Vec<f64> = fine.weights().iter().map(|x| x.1).collect();
        cw.sort_by(|a, b| b.total_cmp(a));
        fw.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in cw.iter().zip(&fw).take(10) {
            assert!((a - b).abs() <= 1e-4 * a);
        }
    }

    #[test]
    fn sum_of_squares_moment() {
        let p = params();
        let x2 = p.beta2() / 2.0;
        let s = Estimate::from_samples(
            "sq",
            (0..20_000).map(|i| sample_cascade(&p, 2.0, 1e-5, i).unwrap().sum_of_squares()),
        );
        assert!(s.z_from(1.0 - x2) < 3.0, "{} vs {}", s.mean, 1.0 - x2);
    }

    #[test]
    fn exact_law_limits() {
        let p = params();
        let near = Estimate::from_samples(
            "p1",
            (0..2000).map(|i| sample_cascade(&p, 1.33, 1e-4, i).unwrap().overlap_law()[2]),
        );
        assert!(near.mean < 0.05);
        let cold = Estimate::from_samples(
            "p1",
            (0..2000).map(|i| sample_cascade(&p, 100.0, 1e-6, i).unwrap().overlap_law()[2]),
        );
        assert!(cold.z_from(1.0 - p.beta2() / 100.0) < 3.0, "{cold:?}");
    }

    #[test]
    fn sampler_matches_exact_law() {
        let p = params();
        let c = sample_cascade(&p, 2.0, 1e-6, 4).unwrap();
        let s = CascadeSampler::new(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200_000;
        let mut h = [0.0; 3];
        for _ in 0..n {
            let (a, b) = (s.draw(&mut rng), s.draw(&mut rng));
            let q = if a == b && matches!(a, Pick::Atom(_)) {
                Overlap::Identical
            } else {
                pick_overlap(a, b)
            };
            h[law_bin(q)] += 1.0 / n as f64;
        }
        let exact = c.overlap_law();
        for k in 0..3 {
            let se = (exact[k] * (1.0 - exact[k]) / n as f64).sqrt();
            assert!(
                (h[k] - exact[k]).abs() < 4.0 * se + 2e-6,
                "bin {k}: {} vs {}",
                h[k],
                exact[k]
            );
        }
    }
}
